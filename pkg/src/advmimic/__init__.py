"""Off-policy adversarial imitation learning in numpy.

A discriminator turns expert demonstrations into a learned reward, a
Pop-Art normalised critic is trained on n-step TD targets from replay, and
a deterministic actor follows the critic's action gradient.
"""

from .actor_critic import Actor, Critic, PopArt
from .adversary import Discriminator
from .envs import DemoDataset, generate_demos, make_env
from .errors import (ConfigError, ContractError, DemoQualityError, EmptyBufferError, MimicError,
                     NonFiniteError, SyncError)
from .exploration import OUProcess, ParamNoise
from .nn import Adam, Mlp, MlpSpec
from .replay import ReplayBuffer, Transition
from .trainer import RunMetrics, Trainer, TrainerConfig, bc_baseline, evaluate, \
    onpolicy_ablation, train

__version__ = "0.1.0"
