"""Dense networks with hand-written gradients, Adam, and flat-parameter helpers.

Every network keeps all of its parameters in one contiguous float64 vector;
the per-layer weight matrices are views into it. That makes perturbation,
Polyak tracking, averaging and checkpointing plain vector arithmetic.

Inputs are batches of shape ``(N, input_dim)``. A 1-D input is treated as a
batch of one and the output is squeezed back to 1-D.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError, ConfigError, NonFiniteError

LN_EPS = 1e-6

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_sizes: tuple
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    # one flag per hidden layer; a single bool applies to all of them
    layer_norm: tuple = field(default=False)

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden_sizes)
        object.__setattr__(self, "hidden_sizes", hidden)
        ln = self.layer_norm
        if isinstance(ln, (bool, np.bool_)):
            ln = (bool(ln),) * len(hidden)
        ln = tuple(bool(x) for x in ln)
        object.__setattr__(self, "layer_norm", ln)
        if not hidden:
            raise ConfigError("hidden_sizes must be non-empty")
        if min((self.input_dim, self.output_dim) + hidden) < 1:
            raise ConfigError(f"all layer sizes must be >= 1, got {self}")
        if len(ln) != len(hidden):
            raise ConfigError("layer_norm needs one flag per hidden layer")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output_activation!r}")

    @property
    def sizes(self):
        return (self.input_dim,) + self.hidden_sizes + (self.output_dim,)

    def num_params(self):
        sizes = self.sizes
        n = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
        return n + sum(2 * w for w, ln in zip(self.hidden_sizes, self.layer_norm) if ln)

    def to_json(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["layer_norm"] = list(self.layer_norm)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["hidden_sizes"] = tuple(d["hidden_sizes"])
        d["layer_norm"] = tuple(d["layer_norm"])
        return cls(**d)


class Slot(NamedTuple):
    layer: int
    role: str  # "W", "b", "gain" or "bias"
    shape: tuple
    start: int
    stop: int


def build_layout(spec: MlpSpec) -> list[Slot]:
    """Ordered (layer, role) -> index range mapping for the flat vector."""
    slots = []
    pos = 0
    sizes = spec.sizes
    n_layers = len(sizes) - 1
    for l in range(n_layers):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        shapes = [("W", (fan_in, fan_out)), ("b", (fan_out,))]
        if l < n_layers - 1 and spec.layer_norm[l]:
            shapes += [("gain", (fan_out,)), ("bias", (fan_out,))]
        for role, shape in shapes:
            size = int(np.prod(shape))
            slots.append(Slot(l, role, shape, pos, pos + size))
            pos += size
    return slots


def _act(name, a):
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    return a


def _dact(name, a, h):
    """First derivative of the activation, given pre-activation a and output h."""
    if name == "relu":
        return (a > 0).astype(float)
    if name == "tanh":
        return 1.0 - h * h
    if name == "sigmoid":
        return h * (1.0 - h)
    return np.ones_like(a)


def _ddact(name, a, h):
    if name == "tanh":
        return -2.0 * h * (1.0 - h * h)
    if name == "sigmoid":
        return h * (1.0 - h) * (1.0 - 2.0 * h)
    # relu is piecewise linear, identity is linear
    return np.zeros_like(a)


class Cache:
    """Activation record produced by :meth:`Mlp.forward`."""

    __slots__ = ("net_id", "version", "squeeze", "layers")

    def __init__(self, net_id, version, squeeze):
        self.net_id = net_id
        self.version = version
        self.squeeze = squeeze
        self.layers = []

    @property
    def input(self):
        return self.layers[0]["h_in"]

    @property
    def output(self):
        return self.layers[-1]["h_out"]

    @property
    def logits(self):
        """Pre-activation of the output layer."""
        return self.layers[-1]["a"]


class Mlp:
    """Feed-forward network: Linear -> [LayerNorm] -> activation per hidden layer."""

    def __init__(self, spec: MlpSpec, params=None, rng=None, final_init_scale=None):
        self.spec = spec
        self.layout = build_layout(spec)
        self._slots = {(s.layer, s.role): s for s in self.layout}
        n = spec.num_params()
        if params is None:
            rng = np.random.default_rng() if rng is None else rng
            params = self._init_params(rng, final_init_scale)
        params = np.array(params, dtype=np.float64)
        if params.shape != (n,):
            raise ContractError(f"expected {n} parameters, got shape {params.shape}")
        self.params = params
        self.version = 0
        self._bind_views()
        self.noise_mask = np.ones(n, dtype=bool)
        self.decay_mask = np.zeros(n, dtype=bool)
        for s in self.layout:
            if s.role in ("gain", "bias"):
                self.noise_mask[s.start:s.stop] = False
            if s.role == "W":
                self.decay_mask[s.start:s.stop] = True

    def _init_params(self, rng, final_init_scale):
        out = np.empty(self.spec.num_params())
        n_layers = len(self.spec.sizes) - 1
        for s in self.layout:
            fan_in = self.spec.sizes[s.layer]
            if s.role == "gain":
                out[s.start:s.stop] = 1.0
            elif s.role == "bias":
                out[s.start:s.stop] = 0.0
            else:
                bound = 1.0 / np.sqrt(fan_in)
                if s.layer == n_layers - 1 and final_init_scale is not None:
                    bound = final_init_scale
                out[s.start:s.stop] = rng.uniform(-bound, bound, s.stop - s.start)
        return out

    def _bind_views(self):
        n_layers = len(self.spec.sizes) - 1
        self._layers = [dict() for _ in range(n_layers)]
        for s in self.layout:
            self._layers[s.layer][s.role] = self.params[s.start:s.stop].reshape(s.shape)

    def set_params(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.params.shape:
            raise ContractError(f"parameter shape {values.shape} != {self.params.shape}")
        self.params[...] = values
        self.version += 1

    def copy(self):
        twin = Mlp(self.spec, params=self.params.copy())
        return twin

    def unflatten(self, vec=None):
        """Dict of (layer, role) -> array, copied out of ``vec`` (default: own params)."""
        vec = self.params if vec is None else np.asarray(vec)
        return {(s.layer, s.role): vec[s.start:s.stop].reshape(s.shape).copy() for s in self.layout}

    def flatten(self, tensors):
        out = np.empty(self.spec.num_params())
        for s in self.layout:
            out[s.start:s.stop] = np.asarray(tensors[(s.layer, s.role)]).reshape(-1)
        return out

    def slot(self, layer, role) -> Slot:
        if layer < 0:
            layer += len(self.spec.sizes) - 1
        return self._slots[(layer, role)]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ContractError(
                f"input has shape {x.shape}, expected (N, {self.spec.input_dim})")
        cache = Cache(id(self), self.version, squeeze)
        n_layers = len(self._layers)
        h = x
        for l, p in enumerate(self._layers):
            last = l == n_layers - 1
            rec = {"h_in": h}
            z = h @ p["W"] + p["b"]
            if "gain" in p:
                # explicit sums are much cheaper than mean/var on small rows
                width = z.shape[1]
                zc = z - z.sum(axis=1, keepdims=True) * (1.0 / width)
                var = np.einsum("ij,ij->i", zc, zc)[:, None] * (1.0 / width)
                inv = 1.0 / np.sqrt(var + LN_EPS)
                xhat = zc * inv
                rec["xhat"] = xhat
                rec["inv"] = inv
                a = xhat * p["gain"] + p["bias"]
            else:
                a = z
            name = self.spec.output_activation if last else self.spec.hidden_activation
            h = _act(name, a)
            rec["a"] = a
            rec["h_out"] = h
            cache.layers.append(rec)
        out = h[0] if squeeze else h
        return out, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def _check_cache(self, cache):
        if not isinstance(cache, Cache) or cache.net_id != id(self):
            raise ContractError("cache was produced by a different network")
        if cache.version != self.version:
            raise ContractError("cache is stale: parameters changed since forward()")

    def backward(self, cache: Cache, output_grad):
        """Gradients of ``sum(output_grad * output)`` w.r.t. parameters and input.

        Parameter gradients are summed over the batch, so callers that want a
        batch mean put the ``1/N`` into ``output_grad``.
        """
        self._check_cache(cache)
        g = np.asarray(output_grad, dtype=np.float64)
        if cache.squeeze and g.ndim == 1:
            g = g[None, :]
        if g.shape != cache.output.shape:
            raise ContractError(f"output_grad shape {g.shape} != output {cache.output.shape}")
        pgrad = np.zeros_like(self.params)
        n_layers = len(self._layers)
        for l in range(n_layers - 1, -1, -1):
            p = self._layers[l]
            rec = cache.layers[l]
            name = self.spec.output_activation if l == n_layers - 1 else self.spec.hidden_activation
            da = g * _dact(name, rec["a"], rec["h_out"])
            if "gain" in p:
                xhat = rec["xhat"]
                s = self.slot(l, "gain")
                pgrad[s.start:s.stop] = (da * xhat).sum(axis=0)
                s = self.slot(l, "bias")
                pgrad[s.start:s.stop] = da.sum(axis=0)
                dx = da * p["gain"]
                width = dx.shape[1]
                dz = rec["inv"] * (dx - dx.sum(axis=1, keepdims=True) * (1.0 / width)
                                   - xhat * (np.einsum("ij,ij->i", dx, xhat)[:, None]
                                             * (1.0 / width)))
            else:
                dz = da
            s = self.slot(l, "W")
            pgrad[s.start:s.stop] = (rec["h_in"].T @ dz).reshape(-1)
            s = self.slot(l, "b")
            pgrad[s.start:s.stop] = dz.sum(axis=0)
            g = dz @ p["W"].T
        input_grad = g[0] if cache.squeeze else g
        return pgrad, input_grad

    def input_grad_vjp(self, cache: Cache, adjoint):
        """Parameter gradient of ``sum_i adjoint_i . d out_i / d x_i``.

        Reverse-over-reverse differentiation of the input gradient of a
        scalar-output network; used to train through a gradient-norm penalty.
        Returns ``(input_grad, param_grad)`` where ``input_grad`` is the plain
        input gradient of the output at each row. ``adjoint`` may be a callable
        mapping that input gradient to the adjoint. Layer norm is not supported.
        """
        self._check_cache(cache)
        if self.spec.output_dim != 1:
            raise ContractError("input_grad_vjp needs a scalar-output network")
        if any(self.spec.layer_norm):
            raise ContractError("input_grad_vjp does not support layer-normalized networks")
        n_layers = len(self._layers)
        names = [self.spec.hidden_activation] * (n_layers - 1) + [self.spec.output_activation]
        recs = cache.layers
        fprime = [_dact(names[l], recs[l]["a"], recs[l]["h_out"]) for l in range(n_layers)]

        # plain backward with unit output gradient, remembering every stage
        dh = [None] * (n_layers + 1)
        delta = [None] * n_layers
        dh[n_layers] = np.ones_like(recs[-1]["h_out"])
        for l in range(n_layers - 1, -1, -1):
            delta[l] = dh[l + 1] * fprime[l]
            dh[l] = delta[l] @ self._layers[l]["W"].T
        input_grad = dh[0]

        if callable(adjoint):
            adjoint = adjoint(input_grad)
        adjoint = np.asarray(adjoint, dtype=np.float64)
        if cache.squeeze and adjoint.ndim == 1:
            adjoint = adjoint[None, :]
        pgrad = np.zeros_like(self.params)
        z_inj = [None] * n_layers
        dh_bar = adjoint
        for l in range(n_layers):
            W = self._layers[l]["W"]
            s = self.slot(l, "W")
            pgrad[s.start:s.stop] += (dh_bar.T @ delta[l]).reshape(-1)
            delta_bar = dh_bar @ W
            z_inj[l] = delta_bar * dh[l + 1] * _ddact(names[l], recs[l]["a"], recs[l]["h_out"])
            dh_bar = delta_bar * fprime[l]

        # push the injected pre-activation adjoints back through the forward graph
        hb = np.zeros_like(recs[-1]["h_out"])
        for l in range(n_layers - 1, -1, -1):
            zbar = z_inj[l] + hb * fprime[l]
            s = self.slot(l, "W")
            pgrad[s.start:s.stop] += (recs[l]["h_in"].T @ zbar).reshape(-1)
            s = self.slot(l, "b")
            pgrad[s.start:s.stop] += zbar.sum(axis=0)
            hb = zbar @ self._layers[l]["W"].T
        if cache.squeeze:
            input_grad = input_grad[0]
        return input_grad, pgrad


class Adam:
    """Bias-corrected Adam over a flat parameter vector."""

    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step_count = 0

    def step(self, params, grad):
        """Return updated parameters for a descent step along ``grad``."""
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.m.shape or np.shape(params) != self.m.shape:
            raise ContractError(
                f"Adam expects vectors of length {self.m.size}, "
                f"got params {np.shape(params)} grad {grad.shape}")
        if not np.all(np.isfinite(grad)):
            bad = np.flatnonzero(~np.isfinite(grad))
            raise NonFiniteError(
                "non-finite gradient entries",
                {"count": int(bad.size), "first_index": int(bad[0]), "step": self.step_count})
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.step_count)
        vhat = self.v / (1.0 - self.beta2 ** self.step_count)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.epsilon)

    def state_dict(self):
        return {"m": self.m.copy(), "v": self.v.copy(), "step_count": self.step_count}


def polyak_track(target, online, tau):
    """``(1 - tau) * target + tau * online``."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    target = np.asarray(target, dtype=np.float64)
    online = np.asarray(online, dtype=np.float64)
    if target.shape != online.shape:
        raise ContractError(f"shape mismatch {target.shape} vs {online.shape}")
    if tau == 1.0:
        return online.copy()
    if tau == 0.0:
        return target.copy()
    return (1.0 - tau) * target + tau * online


def perturb(params, stddev, rng, mask=None):
    """Add i.i.d. N(0, stddev^2) noise to the coordinates selected by ``mask``.

    A normal draw is made for every coordinate regardless of the mask so the
    rng stream does not depend on which parameters are frozen.
    """
    if stddev < 0:
        raise ConfigError(f"stddev must be >= 0, got {stddev}")
    params = np.asarray(params, dtype=np.float64)
    z = rng.standard_normal(params.shape)
    if mask is not None:
        z = np.where(mask, z, 0.0)
    return params + stddev * z


def average_vectors(inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean with a fixed pairwise reduction order.

    The tree order makes the result independent of thread timing, and exact
    when all inputs are equal and their count is a power of two.
    """
    if len(inputs) == 0:
        raise ContractError("cannot average an empty list")
    vals = [np.asarray(v, dtype=np.float64) for v in inputs]
    shape = vals[0].shape
    for v in vals[1:]:
        if v.shape != shape:
            raise ContractError(f"layout mismatch: {v.shape} vs {shape}")
    k = len(vals)
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0] / k if k > 1 else vals[0].copy()


def save_checkpoint(path, nets: dict, extra: dict | None = None):
    """Write named networks (spec + flat parameters) into one ``.npz`` file."""
    arrays = {}
    for name, net in nets.items():
        arrays[f"{name}__spec"] = np.array(net.spec.to_json())
        arrays[f"{name}__params"] = net.params
    for key, value in (extra or {}).items():
        arrays[f"extra__{key}"] = np.asarray(value)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(nets, extra)``."""
    nets, extra = {}, {}
    with np.load(path, allow_pickle=False) as data:
        for key in data.files:
            if key.startswith("extra__"):
                extra[key[len("extra__"):]] = data[key]
            elif key.endswith("__spec"):
                name = key[:-len("__spec")]
                spec = MlpSpec.from_json(str(data[key]))
                nets[name] = Mlp(spec, params=data[f"{name}__params"])
    return nets, extra
