"""The training loop: K lockstep workers, per-module gradient averaging, evaluation.

One iteration collects ``c_max`` rounds per worker, then runs ``t_max``
blocks of ``d_max`` two-phase reward updates followed by ``g_max``
critic/actor updates with target tracking. Workers run sequentially in one
process; the only cross-worker step is :func:`sync_barrier`.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actor_critic import Actor, Critic, critic_targets, dpg_actor_grad, reward_actor_grad, \
    update_targets
from .adversary import REWARD_VARIANTS, Discriminator, sample_expert
from .envs import DemoDataset, LearnerEnv, ToyEnv, make_env
from .errors import ConfigError, ContractError, NonFiniteError, SyncError
from .exploration import OUProcess, ParamNoise, behavior_action
from .nn import Adam, Mlp, average_vectors, save_checkpoint
from .replay import ReplayBuffer, RoundCollector, Transition

MODULES = ("disc", "critic", "actor")


@dataclass
class TrainerConfig:
    env: str = "double_integrator_1d"
    # loop bounds
    i_max: int = 3000
    c_max: int = 1
    round_length: int = 50
    t_max: int = 1
    d_max: int = 1
    g_max: int = 50
    K: int = 4
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3])
    # coefficients
    gamma: float = 0.99
    n_step: int = 5
    gp_coef: float = 10.0
    weight_decay: float = 1e-4
    tau: float = 0.005
    popart_rate: float = 1e-3
    # optimisation
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    disc_lr: float = 3e-4
    batch_size: int = 128
    disc_batch_size: int = 128
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    actor_hidden: list = field(default_factory=lambda: [64, 64])
    critic_hidden: list = field(default_factory=lambda: [64, 64])
    disc_hidden: list = field(default_factory=lambda: [64, 64])
    layer_norm: bool = True
    # exploration
    ou_kappa: float = 0.15
    ou_sigma: float = 0.2  # multiple of the action bound
    pn_stddev: float = 0.05
    pn_delta: float = 0.1
    pn_alpha: float = 1.01
    # variants
    reward_source: str = "recomputed"
    reward_variant: str = "neg_log_one_minus_d"
    actor_grad: str = "dpg"
    mix_weight: float = 0.0
    # evaluation and stopping
    eval_every: int = 20
    eval_episodes: int = 10
    eval_seed_offset: int = 10_000
    max_interactions: typing.Optional[int] = None
    stop_return: typing.Optional[float] = None
    verify_sync: bool = True
    # comparison baselines
    bc_lr: float = 1e-3
    bc_epochs: int = 2000
    onpolicy_episodes: int = 2
    onpolicy_lr: float = 1e-3
    onpolicy_init_std: float = 0.3  # multiple of the action bound
    onpolicy_disc_steps: int = 5

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        for name in ("actor_hidden", "critic_hidden", "disc_hidden"):
            setattr(self, name, [int(h) for h in getattr(self, name)])
        self.validate()

    def validate(self):
        for name in ("i_max", "c_max", "round_length", "t_max", "K", "n_step", "batch_size",
                     "disc_batch_size", "buffer_capacity", "eval_every", "eval_episodes",
                     "onpolicy_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("d_max", "g_max", "warmup_steps", "bc_epochs", "onpolicy_disc_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if len(self.seeds) != self.K:
            raise ConfigError(f"need one seed per worker: K={self.K}, got {len(self.seeds)} seeds")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.round_length * self.c_max > self.buffer_capacity:
            raise ConfigError("one iteration of collection must fit in the replay buffer")
        if self.reward_source not in ("stored", "recomputed"):
            raise ConfigError(f"reward_source must be 'stored' or 'recomputed', "
                              f"got {self.reward_source!r}")
        if self.reward_variant not in REWARD_VARIANTS:
            raise ConfigError(f"reward_variant must be one of {REWARD_VARIANTS}")
        if self.actor_grad not in ("dpg", "reward", "mix"):
            raise ConfigError(f"actor_grad must be dpg, reward or mix, got {self.actor_grad!r}")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ConfigError("mix_weight must lie in [0, 1]")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict):
        known = {f.name for f in dataclasses.fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**{k: _coerce(k, v) for k, v in values.items()})

    @classmethod
    def from_json(cls, path, overrides=None):
        with open(path) as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise ConfigError("config file must hold one JSON object")
        values.update(overrides or {})
        return cls.from_dict(values)

    def replace(self, **changes):
        return TrainerConfig.from_dict(dict(self.to_dict(), **changes))


_FIELD_TYPES = typing.get_type_hints(TrainerConfig)


def _coerce(key, value):
    """Check a raw value against the field's annotated type."""
    tp = _FIELD_TYPES[key]
    optional = typing.get_origin(tp) in (typing.Union, types.UnionType) \
        and type(None) in typing.get_args(tp)
    if optional:
        if value is None:
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    ok = {
        bool: lambda v: isinstance(v, bool),
        int: lambda v: isinstance(v, int) and not isinstance(v, bool),
        float: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        str: lambda v: isinstance(v, str),
        list: lambda v: isinstance(v, list),
    }[tp](value)
    if not ok:
        raise ConfigError(f"config key {key!r} expects {tp.__name__}, got {value!r}")
    return float(value) if tp is float else value


# -- metrics ---------------------------------------------------------------

class RunMetrics:
    """Append-only stream of ``{kind, iter, interactions, seed, payload}`` records."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_text("")

    def add(self, kind, iteration, interactions, seed, payload):
        rec = {"kind": kind, "iter": int(iteration), "interactions": int(interactions),
               "seed": seed, "payload": payload}
        prev = [r for r in self.records if r["kind"] == kind]
        if prev and prev[-1]["interactions"] >= rec["interactions"]:
            raise ContractError("interaction counts must increase between records of one kind")
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        return rec

    @property
    def evals(self):
        return [r for r in self.records if r["kind"] == "eval"]

    @property
    def diags(self):
        return [r for r in self.records if r["kind"] == "diag"]

    def curve(self):
        """``(interactions, mean return)`` arrays over evaluation records."""
        ev = self.evals
        return (np.array([r["interactions"] for r in ev]),
                np.array([r["payload"]["mean"] for r in ev]))

    def first_reach(self, threshold):
        """Interactions at the first evaluation whose mean return is >= threshold."""
        for r in self.evals:
            if r["payload"]["mean"] >= threshold:
                return r["interactions"]
        return None

    def dumps(self):
        return "".join(json.dumps(r) + "\n" for r in self.records)

    @classmethod
    def load(cls, path):
        m = cls()
        with open(path) as fh:
            m.records = [json.loads(ln) for ln in fh if ln.strip()]
        return m


# -- evaluation ------------------------------------------------------------

def evaluate(policy, env, episodes, seed):
    """True-reward returns of a deterministic batched policy.

    ``policy`` maps an ``(m, state_dim)`` array to ``(m, action_dim)``
    actions. Start states come from ``default_rng(seed)`` in episode order,
    so the scripted expert reproduces a demo set generated with that seed.
    All episodes advance together to batch the policy calls.
    """
    if episodes < 1:
        raise ContractError("episodes must be >= 1")
    name = env.name if isinstance(env, ToyEnv) else env
    rng = np.random.default_rng(seed)
    envs = [make_env(name) for _ in range(episodes)]
    states = [e.reset(rng) for e in envs]
    returns = np.zeros(episodes)
    alive = list(range(episodes))
    while alive:
        actions = np.atleast_2d(policy(np.array([states[i] for i in alive])))
        still = []
        for i, a in zip(alive, actions):
            states[i], r, terminal, truncated = envs[i].step(states[i], a)
            returns[i] += r
            if not (terminal or truncated):
                still.append(i)
        alive = still
    return {"mean": float(returns.mean()), "std": float(returns.std()),
            "min": float(returns.min()), "max": float(returns.max()),
            "returns": returns.tolist()}


def zero_action_return(env_name, episodes, seed):
    """Evaluation return of the do-nothing policy (the normalisation floor)."""
    ad = make_env(env_name).spec.action_dim
    return evaluate(lambda s: np.zeros((len(s), ad)), env_name, episodes, seed)["mean"]


def normalized_score(value, expert_mean, zero_mean):
    """0 for the zero-action policy, 1 for the expert."""
    return (value - zero_mean) / (expert_mean - zero_mean)


def _eval_record(actor, env, cfg):
    """Evaluation payload: pooled stats plus one mean per worker seed."""
    per_seed, pooled = [], []
    for s in cfg.seeds:
        res = evaluate(actor, env, cfg.eval_episodes, s + cfg.eval_seed_offset)
        per_seed.append({"seed": s, "return": res["mean"]})
        pooled.extend(res["returns"])
    r = np.array(pooled)
    return {"mean": float(r.mean()), "std": float(r.std()), "min": float(r.min()),
            "max": float(r.max()), "per_seed": per_seed}


# -- synchronisation -------------------------------------------------------

def sync_barrier(grads, step_indices):
    """K-way mean of one module's gradients, all workers at the same step."""
    if len(set(step_indices)) != 1:
        raise SyncError(f"workers disagree on the step index: {list(step_indices)}")
    return average_vectors(grads)


def _philox(seed_seq):
    return np.random.Generator(np.random.Philox(seed_seq))


def _check_demos(demos: DemoDataset, env: ToyEnv):
    if demos.env_name != env.name:
        raise ConfigError(f"demos were recorded on {demos.env_name!r}, not {env.name!r}")
    s, a = demos.pairs()
    if s.shape[1] != env.spec.state_dim or a.shape[1] != env.spec.action_dim:
        raise ConfigError("demo dimensions do not match the environment")
    return s, a


def _build_nets(cfg: TrainerConfig, spec, rng):
    actor = Actor(spec.state_dim, spec.action_dim, spec.action_bound,
                  hidden_sizes=cfg.actor_hidden, layer_norm=cfg.layer_norm, rng=rng)
    critic = Critic(spec.state_dim, spec.action_dim, hidden_sizes=cfg.critic_hidden,
                    layer_norm=cfg.layer_norm, weight_decay=cfg.weight_decay,
                    popart_rate=cfg.popart_rate, rng=rng)
    disc = Discriminator(spec.state_dim, spec.action_dim, hidden_sizes=cfg.disc_hidden,
                         gp_coef=cfg.gp_coef, reward_variant=cfg.reward_variant, rng=rng)
    return actor, critic, disc


def _clone_net(net: Mlp):
    return Mlp(net.spec, params=net.params.copy())


class Worker:
    """One instantiation: its own env, buffer, noise, optimizers and rng streams."""

    def __init__(self, index, seed, cfg: TrainerConfig, env_name, expert_pairs, init):
        self.index = index
        self.seed = seed
        self.cfg = cfg
        collect_seq, update_seq = np.random.SeedSequence(seed).spawn(2)
        self.collect_rng = _philox(collect_seq)
        self.update_rng = _philox(update_seq)
        self.env = LearnerEnv(make_env(env_name))
        spec = self.env.spec
        actor0, critic0, disc0 = init
        self.actor = Actor(spec.state_dim, spec.action_dim, spec.action_bound,
                           net=_clone_net(actor0.net))
        self.critic = Critic(spec.state_dim, spec.action_dim, weight_decay=cfg.weight_decay,
                             popart_rate=cfg.popart_rate, net=_clone_net(critic0.net))
        self.disc = Discriminator(spec.state_dim, spec.action_dim, gp_coef=cfg.gp_coef,
                                  reward_variant=cfg.reward_variant, net=_clone_net(disc0.net))
        self.opt = {"actor": Adam(self.actor.params.size, lr=cfg.actor_lr),
                    "critic": Adam(self.critic.params.size, lr=cfg.critic_lr),
                    "disc": Adam(self.disc.params.size, lr=cfg.disc_lr)}
        self.buffer = ReplayBuffer(cfg.buffer_capacity, spec.state_dim, spec.action_dim)
        self.collector = RoundCollector()
        self.ou = OUProcess(spec.action_dim, kappa=cfg.ou_kappa,
                            sigma=cfg.ou_sigma * spec.action_bound)
        self.noise = ParamNoise(cfg.pn_stddev, cfg.pn_delta, cfg.pn_alpha)
        self.expert_pairs = expert_pairs
        self.state = None
        self.counts = {"rounds": 0, "disc": 0, "critic": 0, "actor": 0, "target": 0}

    def collect_round(self, warm):
        """One round of ``round_length`` env steps; returns the step count."""
        cfg, env = self.cfg, self.env
        rng = self.collect_rng
        bound = env.spec.action_bound
        if not warm:
            self.noise.refresh(self.actor, rng)
        states, actions = [], []
        for _ in range(cfg.round_length):
            if self.state is None:
                self.state = env.reset(rng)
                self.ou.reset()
            if warm:
                a = rng.uniform(-bound, bound, size=env.spec.action_dim)
            else:
                a = behavior_action(self.actor, self.noise, self.ou, self.state, rng)
            nxt, terminal, truncated = env.step(self.state, a)
            self.buffer.push(Transition(self.state, a, 0.0, nxt, terminal))
            self.collector.add(self.state, a)
            states.append(self.state)
            actions.append(a)
            if terminal or truncated:
                if not terminal:
                    self.buffer.mark_episode_end()
                self.state = None
            else:
                self.state = nxt
        states, actions = np.array(states), np.array(actions)
        L = cfg.round_length
        size = len(self.buffer)
        self.buffer.set_rewards(np.arange(size - L, size),
                                self.disc.synthetic_reward(states, actions))
        if not warm:
            self.noise.adapt(self.actor, states)
        self.counts["rounds"] += 1
        return L

    # gradient producers: each returns (gradient, diagnostics)

    def disc_grad(self, phase):
        cfg, rng = self.cfg, self.update_rng
        if phase == "recent":
            gs, ga = self.collector.sample(cfg.disc_batch_size, rng)
        else:
            gs, ga = self.buffer.sample_pairs(cfg.disc_batch_size, rng)
        es, ea = sample_expert(self.expert_pairs, cfg.disc_batch_size, rng)
        _, grad, info = self.disc.loss_and_grad(gs, ga, es, ea, rng=rng)
        return grad, info

    def critic_batch(self):
        cfg = self.cfg
        batch = self.buffer.sample_nstep(cfg.batch_size, cfg.n_step, self.update_rng)
        rewards = None
        if cfg.reward_source == "recomputed":
            B, n, _ = batch.states.shape
            rewards = self.disc.synthetic_reward(
                batch.states.reshape(B * n, -1), batch.actions.reshape(B * n, -1)).reshape(B, n)
        y1, yn = critic_targets(self.critic, self.actor, batch, cfg.gamma, rewards)
        return batch, y1, yn

    def critic_grad(self, batch, y1, yn):
        info, grad = self.critic.loss_and_grad(batch.states[:, 0], batch.actions[:, 0], y1, yn)
        return grad, info

    def actor_grad(self, states):
        """Descent direction for the actor (the negated ascent estimate)."""
        cfg = self.cfg
        w = {"dpg": 0.0, "reward": 1.0, "mix": cfg.mix_weight}[cfg.actor_grad]
        g = 0.0
        if w < 1.0:
            g = (1.0 - w) * dpg_actor_grad(self.actor, self.critic, states)
        if w > 0.0:
            g = g + w * reward_actor_grad(self.actor, self.disc, states)
        return -g

    def apply(self, module, grad):
        net = {"actor": self.actor.net, "critic": self.critic.net, "disc": self.disc.net}[module]
        net.set_params(self.opt[module].step(net.params, grad))
        self.counts[module] += 1


def _mean_dicts(dicts):
    keys = [k for k, v in dicts[0].items() if isinstance(v, (int, float))]
    return {k: float(np.mean([d[k] for d in dicts])) for k in keys}


class Trainer:
    """Holds the worker pool and runs the nested schedule one iteration at a time."""

    def __init__(self, cfg: TrainerConfig, demos: DemoDataset, out_dir=None):
        self.cfg = cfg
        self.env = make_env(cfg.env)
        expert_pairs = _check_demos(demos, self.env)
        self.demos = demos
        init_seq = np.random.SeedSequence(cfg.seeds[0]).spawn(3)[2]
        init = _build_nets(cfg, self.env.spec, _philox(init_seq))
        self.workers = [Worker(w, s, cfg, cfg.env, expert_pairs, init)
                        for w, s in enumerate(cfg.seeds)]
        self.interactions = 0
        self.iteration = 0
        self.out_dir = Path(out_dir) if out_dir is not None else None
        metrics_path = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
            metrics_path = self.out_dir / "metrics.jsonl"
        self.metrics = RunMetrics(metrics_path)

    @property
    def lead(self) -> Worker:
        return self.workers[0]

    def _barrier(self, module, grads):
        return sync_barrier(grads, [w.counts[module] for w in self.workers])

    def _step_module(self, module, grads):
        avg = self._barrier(module, grads)
        for w in self.workers:
            w.apply(module, avg)

    def _verify_sync(self):
        lead = self.lead
        for w in self.workers[1:]:
            for a, b in ((w.actor.net, lead.actor.net), (w.critic.net, lead.critic.net),
                         (w.disc.net, lead.disc.net), (w.actor.target, lead.actor.target),
                         (w.critic.target, lead.critic.target)):
                if not np.array_equal(a.params, b.params):
                    raise SyncError(f"worker {w.index} parameters diverged from worker 0")

    def run_iteration(self):
        cfg = self.cfg
        warm = self.interactions < cfg.warmup_steps
        for w in self.workers:
            w.collector.begin()
        for _ in range(cfg.c_max):
            for w in self.workers:
                self.interactions += w.collect_round(warm)
        for w in self.workers:
            w.collector.end()
        diag = {"warmup": warm, "param_noise_stddev": self.lead.noise.stddev,
                "param_noise_distance": self.lead.noise.last_distance}
        if not warm:
            diag.update(self._updates())
        self.iteration += 1
        return diag

    def _updates(self):
        cfg = self.cfg
        disc_info, critic_info, grad_norms = [], [], []
        for _ in range(cfg.t_max):
            for _ in range(cfg.d_max):
                for phase in ("recent", "replay"):
                    out = [w.disc_grad(phase) for w in self.workers]
                    self._step_module("disc", [g for g, _ in out])
                    disc_info.append(dict(out[0][1], phase=phase))
            for _ in range(cfg.g_max):
                batches = [w.critic_batch() for w in self.workers]
                # identical running statistics on every worker
                moments = [np.array([np.mean(np.concatenate([y1, yn])),
                                     np.mean(np.concatenate([y1, yn]) ** 2)])
                           for _, y1, yn in batches]
                m = sync_barrier(moments, [w.counts["critic"] for w in self.workers])
                for w in self.workers:
                    w.critic.popart_update(moments=(float(m[0]), float(m[1])))
                out = [w.critic_grad(*b) for w, b in zip(self.workers, batches)]
                for _, info in out:
                    if not np.isfinite(info["loss"]):
                        raise NonFiniteError("non-finite critic loss", info)
                self._step_module("critic", [g for g, _ in out])
                critic_info.append(out[0][1])
                states = [b[0].states[:, 0] for b in batches]
                self._step_module("actor", [w.actor_grad(s) for w, s in zip(self.workers, states)])
                lead = self.lead
                grad_norms.append(float(np.mean(np.abs(
                    lead.critic.action_grad(states[0], lead.actor(states[0]))))))
                for w in self.workers:
                    update_targets(w.actor, w.critic, cfg.tau)
                    w.counts["target"] += 1
                if cfg.verify_sync:
                    self._verify_sync()
        diag = {}
        for phase in ("recent", "replay"):
            rows = [d for d in disc_info if d["phase"] == phase]
            if rows:
                diag[f"disc_{phase}"] = _mean_dicts(rows)
        if critic_info:
            diag["critic"] = _mean_dicts(critic_info)
            diag["critic"]["mean_abs_dq_da"] = float(np.mean(grad_norms))
            diag["popart"] = {"mu": float(self.lead.critic.popart.mu),
                              "sigma": float(self.lead.critic.popart.sigma)}
        return diag

    def evaluate(self):
        """Unperturbed policy of worker 0, one evaluation seed per worker seed."""
        return _eval_record(self.lead.actor, self.env, self.cfg)

    def checkpoint(self, path):
        lead = self.lead
        save_checkpoint(path, {
            "actor": lead.actor.net, "actor_target": lead.actor.target,
            "critic": lead.critic.net, "critic_target": lead.critic.target,
            "disc": lead.disc.net,
        }, {"env": self.cfg.env, "iteration": self.iteration, "interactions": self.interactions,
            "popart_mean": lead.critic.popart.mean, "popart_mean_sq": lead.critic.popart.mean_sq})

    def _abort(self, err):
        snapshot = {"iteration": self.iteration, "interactions": self.interactions,
                    "error": str(err), "diagnostics": getattr(err, "diagnostics", {})}
        if self.out_dir is not None:
            (self.out_dir / "abort.json").write_text(json.dumps(snapshot, default=str) + "\n")
            self.checkpoint(self.out_dir / "abort_checkpoint.npz")
        return snapshot

    def train(self):
        cfg = self.cfg
        while self.iteration < cfg.i_max:
            try:
                diag = self.run_iteration()
            except NonFiniteError as err:
                err.diagnostics = dict(getattr(err, "diagnostics", None) or {},
                                       snapshot=self._abort(err))
                raise
            self.metrics.add("diag", self.iteration, self.interactions, cfg.seeds, diag)
            done = self.iteration >= cfg.i_max or (
                cfg.max_interactions is not None and self.interactions >= cfg.max_interactions)
            if self.iteration % cfg.eval_every == 0 or done:
                result = self.evaluate()
                self.metrics.add("eval", self.iteration, self.interactions, cfg.seeds, result)
                if self.out_dir is not None:
                    ckpt = self.out_dir / "checkpoints"
                    ckpt.mkdir(exist_ok=True)
                    self.checkpoint(ckpt / f"iter_{self.iteration:06d}.npz")
                if cfg.stop_return is not None and result["mean"] >= cfg.stop_return:
                    break
            if done:
                break
        return self.metrics


def train(cfg: TrainerConfig, demos: DemoDataset, out_dir=None) -> RunMetrics:
    return Trainer(cfg, demos, out_dir).train()


# -- comparison baselines --------------------------------------------------

def bc_baseline(demos: DemoDataset, epochs, cfg: TrainerConfig | None = None, seed=0):
    """Behavioural cloning: full-batch Adam on the mean squared action error."""
    cfg = cfg or TrainerConfig()
    env = make_env(demos.env_name)
    s, a = _check_demos(demos, env)
    if len(s) == 0:
        raise ContractError("demos must contain at least one pair")
    spec = env.spec
    actor = Actor(spec.state_dim, spec.action_dim, spec.action_bound,
                  hidden_sizes=cfg.actor_hidden, layer_norm=cfg.layer_norm,
                  rng=_philox(np.random.SeedSequence(seed)))
    opt = Adam(actor.params.size, lr=cfg.bc_lr)
    losses = []
    for _ in range(epochs):
        pred, cache = actor.forward(s)
        err = pred - a
        losses.append(float(np.mean(np.sum(err * err, axis=1))))
        grad = actor.backward(cache, 2.0 * err / len(s))
        actor.net.set_params(opt.step(actor.params, grad))
    actor.target = actor.net.copy()
    actor.losses = losses
    return actor


class GaussianPolicy:
    """Tanh-squashed mean from an actor network plus a state-independent log std."""

    def __init__(self, actor: Actor, init_std):
        self.actor = actor
        self.log_std = np.full(actor.action_dim, np.log(init_std))

    @property
    def params(self):
        return np.concatenate([self.actor.params, self.log_std])

    def set_params(self, vec):
        n = self.actor.params.size
        self.actor.net.set_params(vec[:n])
        self.log_std = vec[n:].copy()

    def sample(self, state, rng):
        mean = self.actor(state)
        return mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)

    def score_grad(self, states, raw_actions, weights):
        """Gradient of ``mean_i weights_i * log pi(raw_a_i | s_i)``."""
        mean, cache = self.actor.forward(states)
        var = np.exp(2 * self.log_std)
        diff = raw_actions - mean
        w = weights[:, None] / len(states)
        g_mean = self.actor.backward(cache, w * diff / var)
        g_log_std = np.sum(w * (diff * diff / var - 1.0), axis=0)
        return np.concatenate([g_mean, g_log_std])


def _reward_to_go(r, gamma):
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def onpolicy_ablation(cfg: TrainerConfig, demos: DemoDataset, out_dir=None) -> RunMetrics:
    """Adversarial imitation without replay: REINFORCE on synthetic returns.

    Each iteration every worker collects ``onpolicy_episodes`` fresh episodes,
    the discriminator takes ``onpolicy_disc_steps`` steps on them against the
    demos, and the policy takes one step on the same batch before it is
    discarded. Evaluation and the metrics schema match :func:`train`.
    """
    env = make_env(cfg.env)
    expert_pairs = _check_demos(demos, env)
    spec = env.spec
    init_seq = np.random.SeedSequence(cfg.seeds[0]).spawn(3)[2]
    actor0, _, disc0 = _build_nets(cfg, spec, _philox(init_seq))
    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
        metrics_path = out_dir / "metrics.jsonl"
    metrics = RunMetrics(metrics_path)

    workers = []
    for s in cfg.seeds:
        collect_seq, update_seq = np.random.SeedSequence(s).spawn(2)
        actor = Actor(spec.state_dim, spec.action_dim, spec.action_bound,
                      net=_clone_net(actor0.net))
        policy = GaussianPolicy(actor, cfg.onpolicy_init_std * spec.action_bound)
        disc = Discriminator(spec.state_dim, spec.action_dim, gp_coef=cfg.gp_coef,
                             reward_variant=cfg.reward_variant, net=_clone_net(disc0.net))
        workers.append(types.SimpleNamespace(
            seed=s, env=LearnerEnv(make_env(cfg.env)), policy=policy, disc=disc,
            collect_rng=_philox(collect_seq), update_rng=_philox(update_seq),
            popt=Adam(policy.params.size, lr=cfg.onpolicy_lr),
            dopt=Adam(disc.params.size, lr=cfg.disc_lr), steps={"disc": 0, "policy": 0}))

    interactions = 0
    for it in range(1, cfg.i_max + 1):
        batches = []
        for w in workers:
            episodes = []
            for _ in range(cfg.onpolicy_episodes):
                state = w.env.reset(w.collect_rng)
                S, raw, A = [], [], []
                while True:
                    a_raw = w.policy.sample(state, w.collect_rng)
                    a = w.env.clip_action(a_raw)
                    S.append(state)
                    raw.append(a_raw)
                    A.append(a)
                    state, terminal, truncated = w.env.step(state, a)
                    interactions += 1
                    if terminal or truncated:
                        break
                episodes.append((np.array(S), np.array(raw), np.array(A)))
            batches.append(episodes)
        diag = {}
        for _ in range(cfg.onpolicy_disc_steps):
            grads, infos = [], []
            for w, episodes in zip(workers, batches):
                S = np.concatenate([e[0] for e in episodes])
                A = np.concatenate([e[2] for e in episodes])
                i = w.update_rng.integers(0, len(S), size=cfg.disc_batch_size)
                es, ea = sample_expert(expert_pairs, cfg.disc_batch_size, w.update_rng)
                _, g, info = w.disc.loss_and_grad(S[i], A[i], es, ea, rng=w.update_rng)
                grads.append(g)
                infos.append(info)
            avg = sync_barrier(grads, [w.steps["disc"] for w in workers])
            for w in workers:
                w.disc.net.set_params(w.dopt.step(w.disc.params, avg))
                w.steps["disc"] += 1
            diag["disc"] = {k: v for k, v in infos[0].items()}
        grads = []
        for w, episodes in zip(workers, batches):
            rtg = [_reward_to_go(w.disc.synthetic_reward(e[0], e[2]), cfg.gamma)
                   for e in episodes]
            # time-indexed baseline across the worker's episodes
            T = max(len(r) for r in rtg)
            padded = np.full((len(rtg), T), np.nan)
            for j, r in enumerate(rtg):
                padded[j, :len(r)] = r
            base = np.nanmean(padded, axis=0)
            adv = np.concatenate([r - base[:len(r)] for r in rtg])
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            S = np.concatenate([e[0] for e in episodes])
            raw = np.concatenate([e[1] for e in episodes])
            grads.append(-w.policy.score_grad(S, raw, adv))
        avg = sync_barrier(grads, [w.steps["policy"] for w in workers])
        for w in workers:
            w.policy.set_params(w.popt.step(w.policy.params, avg))
            w.steps["policy"] += 1
        diag["policy_std"] = np.exp(workers[0].policy.log_std).tolist()
        metrics.add("diag", it, interactions, cfg.seeds, diag)
        done = cfg.max_interactions is not None and interactions >= cfg.max_interactions
        if it % cfg.eval_every == 0 or it == cfg.i_max or done:
            result = _eval_record(workers[0].policy.actor, env, cfg)
            metrics.add("eval", it, interactions, cfg.seeds, result)
            if cfg.stop_return is not None and result["mean"] >= cfg.stop_return:
                break
        if done:
            break
    return metrics
