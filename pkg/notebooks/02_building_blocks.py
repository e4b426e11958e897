"""
Building blocks: discriminator reward, n-step targets, Pop-Art, exploration
===========================================================================
"""

# %%
import numpy as np

from advmimic import Critic, Discriminator, OUProcess, ReplayBuffer, Transition

rng = np.random.default_rng(0)

# %%
# The synthetic reward -log(1 - D) grows as the discriminator grows confident.
disc = Discriminator(2, 1, hidden_sizes=(16,), rng=rng)
s, a = rng.normal(size=(4, 2)), rng.normal(size=(4, 1))
print("D:", disc.prob(s, a))
print("reward:", disc.synthetic_reward(s, a))

# %%
# n-step windows stop at episode ends.
buf = ReplayBuffer(100, 2, 1)
for t in range(6):
    buf.push(Transition(np.full(2, t), np.zeros(1), 0.0, np.full(2, t + 1), terminal=False))
    if t == 2:
        buf.mark_episode_end()
w = buf.windows(np.arange(len(buf)), 5)
print("window lengths:", w.k)

# %%
# Pop-Art rescales the output layer so predictions do not move when the stats do.
critic = Critic(2, 1, hidden_sizes=(16,), rng=rng)
probe_s, probe_a = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
before = critic.q(probe_s, probe_a)
critic.popart_update(rng.normal(size=32) * 50 + 200)
print("max change:", np.abs(critic.q(probe_s, probe_a) - before).max())

# %%
# OU noise is temporally correlated, with a closed-form stationary variance.
ou = OUProcess(1, kappa=0.15, sigma=0.2)
xs = np.array([ou.step(rng)[0] for _ in range(20000)])
print("variance", xs.var(), "closed form", ou.stationary_variance())
