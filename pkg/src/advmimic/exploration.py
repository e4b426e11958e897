"""Behaviour policy: parameter-perturbed actor plus Ornstein-Uhlenbeck action noise."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .nn import Mlp, perturb


class OUProcess:
    """Discrete Ornstein-Uhlenbeck recursion.

    ``x <- x + kappa * (mu - x) * dt + sigma * sqrt(dt) * z``. The stationary
    variance of this recursion is ``sigma^2 dt / (2 kappa dt - kappa^2 dt^2)``
    and its lag-1 autocorrelation is ``1 - kappa dt``.
    """

    def __init__(self, dim, kappa=0.15, sigma=0.2, dt=1.0, mu=0.0):
        if kappa <= 0 or sigma < 0 or dt <= 0:
            raise ConfigError("OU process needs kappa > 0, sigma >= 0, dt > 0")
        self.dim = dim
        self.kappa = kappa
        self.sigma = sigma
        self.dt = dt
        self.mu = np.full(dim, float(mu))
        self.x = np.zeros(dim)

    def reset(self):
        self.x = np.zeros(self.dim)

    def step(self, rng):
        z = rng.standard_normal(self.dim)
        self.x = self.x + self.kappa * (self.mu - self.x) * self.dt \
            + self.sigma * np.sqrt(self.dt) * z
        return self.x.copy()

    def stationary_variance(self):
        kd = self.kappa * self.dt
        return self.sigma ** 2 * self.dt / (2 * kd - kd * kd)


class ParamNoise:
    """Adaptively scaled Gaussian perturbation of the actor's weights."""

    min_stddev = 1e-6
    max_stddev = 1.0

    def __init__(self, stddev=0.05, target_delta=0.1, alpha=1.01):
        if target_delta <= 0 or alpha <= 1:
            raise ConfigError("param noise needs target_delta > 0 and alpha > 1")
        self.stddev = float(np.clip(stddev, self.min_stddev, self.max_stddev))
        self.target_delta = target_delta
        self.alpha = alpha
        self.perturbed: Mlp | None = None
        self.last_distance = None

    def refresh(self, actor, rng):
        """Draw a fresh perturbed copy of the actor's network."""
        net = actor.net
        self.perturbed = Mlp(net.spec, params=perturb(net.params, self.stddev, rng, net.noise_mask))
        return self.perturbed

    def distance(self, actor, probe_states):
        """RMS per-dimension action gap between the clean and perturbed actors."""
        probe_states = np.atleast_2d(probe_states)
        if len(probe_states) == 0:
            raise ConfigError("need at least one probe state")
        clean = actor(probe_states)
        noisy = actor.action_bound * self.perturbed(probe_states)
        return float(np.sqrt(np.mean(np.sum((clean - noisy) ** 2, axis=1) / actor.action_dim)))

    def adapt(self, actor, probe_states):
        d = self.distance(actor, probe_states)
        self.last_distance = d
        if d > self.target_delta:
            self.stddev /= self.alpha
        else:
            self.stddev *= self.alpha
        self.stddev = float(np.clip(self.stddev, self.min_stddev, self.max_stddev))
        return self.stddev


def behavior_action(actor, param_noise: ParamNoise, ou: OUProcess, state, rng):
    """``clip(mu_perturbed(state) + OU noise)`` for a single state."""
    net = param_noise.perturbed if param_noise.perturbed is not None else actor.net
    a = actor.action_bound * net(state) + ou.step(rng)
    return np.clip(a, -actor.action_bound, actor.action_bound)
