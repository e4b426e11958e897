"""Deterministic actor, Pop-Art normalised critic, TD targets and policy gradients."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NonFiniteError
from .nn import Mlp, MlpSpec, polyak_track


class PopArt:
    """Running first/second moments of the value targets.

    ``rate`` is the exponential-averaging weight of each new batch; with
    ``rate=1`` the statistics are replaced by the batch moments.
    """

    def __init__(self, rate=1e-3, sigma_min=1e-4):
        self.rate = rate
        self.sigma_min = sigma_min
        self.mean = 0.0
        self.mean_sq = 1.0

    @property
    def mu(self):
        return self.mean

    @property
    def sigma(self):
        return max(np.sqrt(max(self.mean_sq - self.mean ** 2, 0.0)), self.sigma_min)

    def normalize(self, y):
        return (np.asarray(y) - self.mean) / self.sigma

    def denormalize(self, out):
        return self.sigma * np.asarray(out) + self.mean

    def update_moments(self, batch_mean, batch_mean_sq):
        """Blend in batch moments; returns ``(old_mu, old_sigma, new_mu, new_sigma)``."""
        old = (self.mean, self.sigma)
        self.mean = (1.0 - self.rate) * self.mean + self.rate * batch_mean
        self.mean_sq = (1.0 - self.rate) * self.mean_sq + self.rate * batch_mean_sq
        return old + (self.mean, self.sigma)


class Actor:
    """``mu(s) = action_bound * net(s)`` with a tanh output layer by default."""

    def __init__(self, state_dim, action_dim, action_bound, hidden_sizes=(64, 64),
                 layer_norm=True, hidden_activation="relu", output_activation="tanh",
                 final_init_scale=3e-3, rng=None, net=None):
        if net is None:
            spec = MlpSpec(state_dim, tuple(hidden_sizes), action_dim,
                           hidden_activation=hidden_activation,
                           output_activation=output_activation, layer_norm=layer_norm)
            net = Mlp(spec, rng=rng, final_init_scale=final_init_scale)
        self.net = net
        self.target = net.copy()
        self.action_bound = float(action_bound)
        self.state_dim = state_dim
        self.action_dim = action_dim

    @property
    def params(self):
        return self.net.params

    def __call__(self, states, target=False):
        net = self.target if target else self.net
        return self.action_bound * net(states)

    def forward(self, states):
        out, cache = self.net.forward(states)
        return self.action_bound * out, cache

    def backward(self, cache, action_grad):
        """Parameter gradient of ``sum(action_grad * mu(s))``."""
        return self.net.backward(cache, self.action_bound * np.asarray(action_grad))[0]


class Critic:
    """Q(s, a) = popart.sigma * net([s, a]) + popart.mu, with a target copy.

    ``weight_decay`` multiplies half the squared norm of the weight matrices.
    """

    def __init__(self, state_dim, action_dim, hidden_sizes=(64, 64), layer_norm=True,
                 hidden_activation="relu", weight_decay=1e-4, popart_rate=1e-3,
                 sigma_min=1e-4, rng=None, net=None):
        if net is None:
            spec = MlpSpec(state_dim + action_dim, tuple(hidden_sizes), 1,
                           hidden_activation=hidden_activation, layer_norm=layer_norm)
            net = Mlp(spec, rng=rng)
        self.net = net
        self.target = net.copy()
        self.popart = PopArt(popart_rate, sigma_min)
        self.weight_decay = float(weight_decay)
        self.state_dim = state_dim
        self.action_dim = action_dim

    @property
    def params(self):
        return self.net.params

    def _x(self, states, actions):
        return np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)

    def normalized(self, states, actions, target=False):
        net = self.target if target else self.net
        return net(self._x(states, actions))[:, 0]

    def q(self, states, actions, target=False):
        return self.popart.denormalize(self.normalized(states, actions, target))

    def action_grad(self, states, actions):
        """Denormalised ``dQ/da`` from the online network."""
        out, cache = self.net.forward(self._x(states, actions))
        _, gx = self.net.backward(cache, np.full_like(out, self.popart.sigma))
        return gx[:, self.state_dim:]

    def rescale_output_layer(self, old_mu, old_sigma, new_mu, new_sigma):
        """Adjust the last linear layer so denormalised outputs are unchanged."""
        for net in (self.net, self.target):
            p = net.params.copy()
            w, b = net.slot(-1, "W"), net.slot(-1, "b")
            p[w.start:w.stop] *= old_sigma / new_sigma
            p[b.start:b.stop] = (old_sigma * p[b.start:b.stop] + old_mu - new_mu) / new_sigma
            net.set_params(p)

    def popart_update(self, targets=None, moments=None):
        """Update target statistics from a batch (or pre-reduced ``(mean, mean_sq)``)."""
        if moments is None:
            y = np.asarray(targets, dtype=np.float64).ravel()
            if y.size == 0:
                raise ContractError("popart_update needs at least one target")
            moments = (float(y.mean()), float(np.mean(y * y)))
        stats = self.popart.update_moments(*moments)
        self.rescale_output_layer(*stats)
        return stats

    def weight_decay_term(self):
        w = self.net.params[self.net.decay_mask]
        return 0.5 * float(w @ w)

    def loss_and_grad(self, states, actions, y1, yn):
        """Composite loss ``l1 + ln + weight_decay * wd`` in normalised target space."""
        pred, cache = self.net.forward(self._x(states, actions))
        pred = pred[:, 0]
        t1 = self.popart.normalize(y1)
        tn = self.popart.normalize(yn)
        B = len(pred)
        r1 = pred - t1
        rn = pred - tn
        l1 = float(np.mean(r1 * r1))
        ln = float(np.mean(rn * rn))
        wd = self.weight_decay_term()
        grad, _ = self.net.backward(cache, (2.0 / B) * (r1 + rn)[:, None])
        grad += self.weight_decay * np.where(self.net.decay_mask, self.net.params, 0.0)
        loss = l1 + ln + self.weight_decay * wd
        return {"loss": loss, "l1": l1, "ln": ln, "wd": wd}, grad


def critic_targets(critic: Critic, actor: Actor, batch, gamma, rewards=None):
    """One-step and n-step TD targets from the target networks.

    ``rewards`` (``(B, n)``) overrides the rewards stored in ``batch``; they
    enter as constants, no gradient flows back to whatever produced them.
    """
    if not 0.0 < gamma <= 1.0:
        raise ContractError(f"gamma must lie in (0, 1], got {gamma}")
    r = batch.rewards if rewards is None else np.where(batch.valid, rewards, 0.0)
    if not np.all(np.isfinite(r)):
        raise NonFiniteError("non-finite rewards in TD targets")
    B, n = r.shape
    boot_in = np.concatenate([batch.next_states[:, 0], batch.bootstrap_states])
    q_boot = critic.q(boot_in, actor(boot_in, target=True), target=True)
    q1, qn = q_boot[:B], q_boot[B:]
    y1 = r[:, 0] + gamma * np.where(batch.terminals[:, 0], 0.0, q1)
    discounts = gamma ** np.arange(n)
    yn = (r * discounts).sum(axis=1) + np.where(
        batch.bootstrap_masked, 0.0, gamma ** batch.k * qn)
    return y1, yn


def dpg_actor_grad(actor: Actor, critic: Critic, states):
    """Ascent direction ``mean_s grad_theta mu(s) . dQ/da`` at ``a = mu(s)``."""
    a, cache = actor.forward(states)
    dq_da = critic.action_grad(states, a)
    return actor.backward(cache, dq_da / len(a))


def reward_actor_grad(actor: Actor, disc, states):
    """Same chain rule through the synthetic reward instead of the critic."""
    a, cache = actor.forward(states)
    _, dr_da = disc.reward_action_grad(states, a)
    return actor.backward(cache, dr_da / len(a))


def update_targets(actor: Actor, critic: Critic, tau):
    actor.target.set_params(polyak_track(actor.target.params, actor.net.params, tau))
    critic.target.set_params(polyak_track(critic.target.params, critic.net.params, tau))
