"""
Toy tasks, scripted experts and demonstration datasets
======================================================

Each environment ships a near-optimal scripted expert (LQR or PD). Demos are
rolled out from it and stored as JSONL.
"""

# %%
import numpy as np

from advmimic import evaluate, generate_demos, make_env

for name in ("double_integrator_1d", "point_reach_2d", "cartpole_balance"):
    demos = generate_demos(name, 5, seed=0)
    print(name, {k: round(v, 3) for k, v in demos.return_stats.items()})

# %%
# The expert replays its own demo returns when evaluated on the same seed.
env = make_env("double_integrator_1d")
demos = generate_demos("double_integrator_1d", 5, seed=0)


class Expert:
    def __call__(self, states):
        return np.array([env.expert_action(s) for s in states])


print(evaluate(Expert(), env, 5, seed=0)["returns"])
print([round(r, 6) for r in demos.returns])
