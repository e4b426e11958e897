"""Discriminator over (state, action) pairs and the synthetic reward it defines.

D(s, a) is the probability that a pair came from the expert. It is trained by
minimising the binary cross-entropy

    mean_gen[-log(1 - D)] + mean_exp[-log D] + gp_coef * penalty

where the penalty is a two-sided gradient-norm penalty on D (the sigmoid
output) at random interpolates between generated and expert pairs. The
reward handed to the learner is ``-log(1 - D)``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .nn import Adam, Mlp, MlpSpec

EPS_D = 1e-8
REWARD_VARIANTS = ("neg_log_one_minus_d", "log_d")


def _clamped(d):
    inside = (d > EPS_D) & (d < 1.0 - EPS_D)
    return np.clip(d, EPS_D, 1.0 - EPS_D), inside


class Discriminator:
    def __init__(self, state_dim, action_dim, hidden_sizes=(64, 64), gp_coef=10.0,
                 hidden_activation="relu", layer_norm=False, reward_variant="neg_log_one_minus_d",
                 rng=None, net=None):
        if reward_variant not in REWARD_VARIANTS:
            raise ConfigError(f"unknown reward variant {reward_variant!r}")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.gp_coef = float(gp_coef)
        self.reward_variant = reward_variant
        if net is None:
            spec = MlpSpec(state_dim + action_dim, tuple(hidden_sizes), 1,
                           hidden_activation=hidden_activation, output_activation="sigmoid",
                           layer_norm=layer_norm)
            net = Mlp(spec, rng=rng)
        if net.spec.output_activation != "sigmoid" or net.spec.output_dim != 1:
            raise ConfigError("discriminator network must end in a single sigmoid unit")
        self.net = net

    @property
    def params(self):
        return self.net.params

    def _inputs(self, states, actions):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if states.shape[1] != self.state_dim or actions.shape[1] != self.action_dim \
                or len(states) != len(actions):
            raise ContractError(
                f"pairs of shape {states.shape}/{actions.shape} do not match "
                f"({self.state_dim}, {self.action_dim})")
        return np.concatenate([states, actions], axis=1)

    def prob(self, states, actions):
        return self.net(self._inputs(states, actions))[:, 0]

    def _reward_from_prob(self, d):
        dc, inside = _clamped(d)
        if self.reward_variant == "log_d":
            return np.log(dc), np.where(inside, 1.0 / dc, 0.0)
        return -np.log1p(-dc), np.where(inside, 1.0 / (1.0 - dc), 0.0)

    def synthetic_reward(self, states, actions):
        """``-log(1 - clamp(D, 1e-8, 1 - 1e-8))`` for each pair (1-D array)."""
        d = self.prob(states, actions)
        return self._reward_from_prob(d)[0]

    def reward_action_grad(self, states, actions):
        """Rewards and their gradient w.r.t. the action, ``(B,)`` and ``(B, action_dim)``."""
        x = self._inputs(states, actions)
        out, cache = self.net.forward(x)
        r, dr_dd = self._reward_from_prob(out[:, 0])
        _, gx = self.net.backward(cache, dr_dd[:, None])
        return r, gx[:, self.state_dim:]

    def gp_penalty(self, gen_x, exp_x, rng=None, u=None):
        """Penalty value and its exact parameter gradient.

        ``gen_x``/``exp_x`` are concatenated (state, action) rows. One
        interpolation weight ``u ~ U(0, 1)`` is drawn per pair unless given.
        """
        gen_x = np.asarray(gen_x, dtype=np.float64)
        exp_x = np.asarray(exp_x, dtype=np.float64)
        if gen_x.shape != exp_x.shape:
            raise ContractError("generated and expert batches must have equal size")
        B = len(gen_x)
        if u is None:
            u = rng.uniform(0.0, 1.0, size=B)
        u = np.asarray(u, dtype=np.float64).reshape(B, 1)
        x_hat = u * gen_x + (1.0 - u) * exp_x
        _, cache = self.net.forward(x_hat)
        norms = None

        def adjoint(g):
            nonlocal norms
            norms = np.sqrt(np.sum(g * g, axis=1))
            safe = np.where(norms > 0, norms, 1.0)
            # (|g| - 1)^2 has no gradient at g = 0; take zero there
            return np.where(norms[:, None] > 0,
                            (2.0 / B) * ((norms - 1.0) / safe)[:, None] * g, 0.0)

        _, grad = self.net.input_grad_vjp(cache, adjoint)
        value = float(np.mean((norms - 1.0) ** 2))
        return value, grad, {"grad_norm_mean": float(norms.mean()), "x_hat": x_hat}

    def loss_and_grad(self, gen_states, gen_actions, exp_states, exp_actions, rng=None, u=None):
        """Full discriminator loss (cross-entropy + gp_coef * penalty) and its gradient."""
        gen_x = self._inputs(gen_states, gen_actions)
        exp_x = self._inputs(exp_states, exp_actions)
        if len(gen_x) == 0 or len(exp_x) == 0:
            raise ContractError("empty batch")
        if len(gen_x) != len(exp_x):
            raise ContractError("generated and expert batches must have equal size")
        B = len(gen_x)
        out, cache = self.net.forward(np.concatenate([gen_x, exp_x]))
        d = out[:, 0]
        dc, inside = _clamped(d)
        d_gen, d_exp = dc[:B], dc[B:]
        ce_gen = float(np.mean(-np.log1p(-d_gen)))
        ce_exp = float(np.mean(-np.log(d_exp)))
        out_grad = np.empty_like(d)
        out_grad[:B] = np.where(inside[:B], 1.0 / (1.0 - d_gen), 0.0) / B
        out_grad[B:] = np.where(inside[B:], -1.0 / d_exp, 0.0) / B
        grad, _ = self.net.backward(cache, out_grad[:, None])
        loss = ce_gen + ce_exp
        gp_value = 0.0
        if self.gp_coef != 0.0:
            gp_value, gp_grad, _ = self.gp_penalty(gen_x, exp_x, rng=rng, u=u)
            loss += self.gp_coef * gp_value
            grad = grad + self.gp_coef * gp_grad
        info = {
            "loss": loss,
            "cross_entropy": ce_gen + ce_exp,
            "gp": gp_value,
            "d_gen": float(d[:B].mean()),
            "d_exp": float(d[B:].mean()),
            "accuracy": float(0.5 * (np.mean(d[:B] < 0.5) + np.mean(d[B:] >= 0.5))),
        }
        return loss, grad, info


def sample_expert(expert_pairs, batch_size, rng):
    states, actions = expert_pairs
    i = rng.integers(0, len(states), size=batch_size)
    return states[i], actions[i]


def two_phase_reward_update(disc: Discriminator, optimizer: Adam, collector, buffer,
                            expert_pairs, d_max, batch_size, rng):
    """``d_max`` rounds of: one step on (latest round vs expert), one on (replay vs expert).

    Single-worker form; the trainer runs the same schedule with a gradient
    barrier between workers.
    """
    diagnostics = []
    for _ in range(d_max):
        for phase, source in (("recent", collector.sample), ("replay", buffer.sample_pairs)):
            gs, ga = source(batch_size, rng)
            es, ea = sample_expert(expert_pairs, batch_size, rng)
            _, grad, info = disc.loss_and_grad(gs, ga, es, ea, rng=rng)
            disc.net.set_params(optimizer.step(disc.params, grad))
            diagnostics.append(dict(info, phase=phase))
    return diagnostics
