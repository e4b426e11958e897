"""Toy continuous-control tasks, scripted experts and demonstration datasets.

Three deterministic environments stand in for the usual physics benchmarks:

* ``double_integrator_1d`` -- a unit mass on a line, pushed toward the origin.
* ``point_reach_2d`` -- a planar point mass reaching a per-episode goal that is
  appended to the observation.
* ``cartpole_balance`` -- the classic cart-pole, kept upright.

All dynamics use semi-implicit Euler: velocities are updated first and the new
velocities move the positions. The environment's true reward is returned by
:meth:`ToyEnv.step` for evaluation and demo scoring only; learners interact
through :class:`LearnerEnv`, whose ``step`` does not expose it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DemoQualityError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_bound: float
    horizon: int
    dt: float


class ToyEnv:
    spec: EnvSpec
    goal: np.ndarray
    # lowest per-trajectory true return the scripted expert may score
    demo_floor: float

    def __init__(self):
        self.t = 0

    @property
    def name(self):
        return self.spec.name

    def reset(self, rng) -> np.ndarray:
        self.t = 0
        return self.sample_initial_state(rng)

    def sample_initial_state(self, rng):
        raise NotImplementedError

    def clip_action(self, action):
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        b = self.spec.action_bound
        return np.clip(action, -b, b)

    def dynamics(self, state, action):
        """Next state for an already clipped action. Pure function."""
        raise NotImplementedError

    def reward(self, state, action):
        raise NotImplementedError

    def is_terminal(self, state):
        return False

    def step(self, state, action):
        """Advance one step: ``(next_state, true_reward, terminal, truncated)``."""
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        if state.shape != (self.spec.state_dim,):
            raise ContractError(f"state shape {state.shape} != ({self.spec.state_dim},)")
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action))):
            raise ContractError("non-finite state or action")
        u = self.clip_action(action)
        r = self.reward(state, u)
        nxt = self.dynamics(state, u)
        self.t += 1
        terminal = bool(self.is_terminal(nxt))
        truncated = (not terminal) and self.t >= self.spec.horizon
        return nxt, float(r), terminal, truncated

    def expert_action(self, state):
        raise NotImplementedError


def dlqr_gain(A, B, Q, R, tol=1e-12, max_iter=100_000):
    """Infinite-horizon discrete LQR gain by fixed-point Riccati iteration.

    Returns ``(K, P)`` with the control law ``u = -K x``.
    """
    P = np.array(Q, dtype=np.float64)
    for _ in range(max_iter):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P))):
            P = P_next
            break
        P = P_next
    else:
        raise ArithmeticError("Riccati iteration did not converge")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K, P


def linearize(env, x0, u0, eps=1e-6):
    """Jacobians of the discrete step map around ``(x0, u0)`` by central differences."""
    n, m = env.spec.state_dim, env.spec.action_dim
    A = np.empty((n, n))
    B = np.empty((n, m))
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = eps
        A[:, i] = (env.dynamics(x0 + dx, u0) - env.dynamics(x0 - dx, u0)) / (2 * eps)
    for j in range(m):
        du = np.zeros(m)
        du[j] = eps
        B[:, j] = (env.dynamics(x0, u0 + du) - env.dynamics(x0, u0 - du)) / (2 * eps)
    return A, B


class DoubleIntegrator1D(ToyEnv):
    spec = EnvSpec("double_integrator_1d", 2, 1, 1.0, 200, 0.05)
    goal = np.array([0.0, 0.0])
    demo_floor = -30.0

    def __init__(self):
        super().__init__()
        A, B = linearize(self, self.goal, np.zeros(1))
        self.lqr_weights = (np.diag([1.0, 0.0]), np.array([[0.01]]))
        self.K, self.P = dlqr_gain(A, B, *self.lqr_weights)
        self.A, self.B = A, B

    def sample_initial_state(self, rng):
        return np.array([rng.uniform(-1.0, 1.0), rng.uniform(-0.1, 0.1)])

    def dynamics(self, state, action):
        dt = self.spec.dt
        vel = state[1] + action[0] * dt
        return np.array([state[0] + vel * dt, vel])

    def reward(self, state, action):
        return -(state[0] - self.goal[0]) ** 2 - 0.01 * action[0] ** 2

    def expert_action(self, state):
        return self.clip_action(-self.K @ (np.asarray(state) - self.goal))


class PointReach2D(ToyEnv):
    """Observation is ``(px, py, vx, vy, gx, gy)``; the goal is resampled per episode."""

    spec = EnvSpec("point_reach_2d", 6, 2, 1.0, 150, 0.05)
    goal = None
    demo_floor = -150.0
    kp, kd = 9.0, 6.0  # critically damped at 3 rad/s

    def sample_initial_state(self, rng):
        pos = rng.uniform(-1.0, 1.0, 2)
        vel = rng.uniform(-0.1, 0.1, 2)
        goal = rng.uniform(-1.0, 1.0, 2)
        return np.concatenate([pos, vel, goal])

    def dynamics(self, state, action):
        dt = self.spec.dt
        vel = state[2:4] + action * dt
        return np.concatenate([state[0:2] + vel * dt, vel, state[4:6]])

    def reward(self, state, action):
        return -float(np.sum((state[0:2] - state[4:6]) ** 2)) - 0.01 * float(action @ action)

    def expert_action(self, state):
        state = np.asarray(state)
        return self.clip_action(-self.kp * (state[0:2] - state[4:6]) - self.kd * state[2:4])


class CartpoleBalance(ToyEnv):
    """State ``(x, x_dot, theta, theta_dot)``; action is the horizontal force in newtons.

    ``pole_length`` is the pivot-to-centre-of-mass distance of the classic
    cart-pole equations.
    """

    spec = EnvSpec("cartpole_balance", 4, 1, 10.0, 200, 0.02)
    goal = np.zeros(4)
    demo_floor = 200.0
    gravity = 9.8
    cart_mass = 1.0
    pole_mass = 0.1
    pole_length = 0.5
    angle_limit = 0.2
    track_limit = 2.4

    def __init__(self):
        super().__init__()
        A, B = linearize(self, self.goal, np.zeros(1))
        self.lqr_weights = (np.diag([1.0, 1.0, 10.0, 1.0]), np.array([[0.01]]))
        self.K, self.P = dlqr_gain(A, B, *self.lqr_weights)
        self.A, self.B = A, B

    def sample_initial_state(self, rng):
        return rng.uniform(-0.05, 0.05, 4)

    def dynamics(self, state, action):
        x, x_dot, th, th_dot = state
        total = self.cart_mass + self.pole_mass
        pml = self.pole_mass * self.pole_length
        sin, cos = np.sin(th), np.cos(th)
        temp = (action[0] + pml * th_dot ** 2 * sin) / total
        th_acc = (self.gravity * sin - cos * temp) / (
            self.pole_length * (4.0 / 3.0 - self.pole_mass * cos ** 2 / total))
        x_acc = temp - pml * th_acc * cos / total
        dt = self.spec.dt
        x_dot = x_dot + dt * x_acc
        th_dot = th_dot + dt * th_acc
        return np.array([x + dt * x_dot, x_dot, th + dt * th_dot, th_dot])

    def reward(self, state, action):
        return 1.0

    def is_terminal(self, state):
        return abs(state[2]) > self.angle_limit or abs(state[0]) > self.track_limit

    def expert_action(self, state):
        return self.clip_action(-self.K @ (np.asarray(state) - self.goal))


ENVS = {
    "double_integrator_1d": DoubleIntegrator1D,
    "point_reach_2d": PointReach2D,
    "cartpole_balance": CartpoleBalance,
}


def make_env(name) -> ToyEnv:
    try:
        return ENVS[name]()
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


class LearnerEnv:
    """Reward-free view of an environment for the learning code."""

    def __init__(self, env: ToyEnv):
        self._env = env
        self.spec = env.spec

    def reset(self, rng):
        return self._env.reset(rng)

    def step(self, state, action):
        nxt, _, terminal, truncated = self._env.step(state, action)
        return nxt, terminal, truncated

    def clip_action(self, action):
        return self._env.clip_action(action)


@dataclass
class DemoDataset:
    env_name: str
    states: list  # one (T_i, state_dim) array per trajectory
    actions: list  # one (T_i, action_dim) array per trajectory
    returns: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) == len(self.returns)):
            raise ContractError("states, actions and returns must have one entry per trajectory")

    def __len__(self):
        return len(self.states)

    @property
    def return_stats(self):
        r = np.asarray(self.returns, dtype=np.float64)
        return {"min": float(r.min()), "mean": float(r.mean()),
                "max": float(r.max()), "std": float(r.std())}

    def pairs(self):
        """All (state, action) pairs stacked: ``(S, A)`` arrays."""
        return np.concatenate(self.states), np.concatenate(self.actions)

    def subset(self, n):
        return DemoDataset(self.env_name, self.states[:n], self.actions[:n], self.returns[:n],
                           dict(self.meta, n_trajectories=n))

    def dumps(self) -> str:
        spec = ENVS[self.env_name].spec
        header = {
            "env_name": self.env_name,
            "state_dim": spec.state_dim,
            "action_dim": spec.action_dim,
            "n_trajectories": len(self),
            "lengths": [len(s) for s in self.states],
            "returns": [float(r) for r in self.returns],
            "return_stats": self.return_stats,
            "meta": self.meta,
        }
        lines = [json.dumps(header, sort_keys=True)]
        for s, a in zip(self.states, self.actions):
            lines.append(json.dumps({"states": np.asarray(s).ravel().tolist(),
                                     "actions": np.asarray(a).ravel().tolist()}))
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = json.loads(lines[0])
        sd, ad = header["state_dim"], header["action_dim"]
        states, actions = [], []
        for ln in lines[1:]:
            rec = json.loads(ln)
            states.append(np.array(rec["states"], dtype=np.float64).reshape(-1, sd))
            actions.append(np.array(rec["actions"], dtype=np.float64).reshape(-1, ad))
        if len(states) != header["n_trajectories"]:
            raise ContractError("trajectory count does not match the header")
        return cls(header["env_name"], states, actions, header["returns"], header["meta"])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


def rollout(env: ToyEnv, policy, rng):
    """Run one episode; returns ``(states, actions, true_return)``."""
    state = env.reset(rng)
    states, actions, ret = [], [], 0.0
    while True:
        action = env.clip_action(policy(state))
        states.append(state)
        actions.append(action)
        state, r, terminal, truncated = env.step(state, action)
        ret += r
        if terminal or truncated:
            break
    return np.array(states), np.array(actions), ret


def generate_demos(env_name, n_trajectories, seed, date=None) -> DemoDataset:
    """Roll out the scripted expert for ``n_trajectories`` full episodes.

    ``date`` is only recorded when given, so identical arguments produce
    byte-identical files.
    """
    if n_trajectories < 1:
        raise ContractError("n_trajectories must be >= 1")
    env = make_env(env_name)
    rng = np.random.default_rng(seed)
    states, actions, returns = [], [], []
    for _ in range(n_trajectories):
        s, a, ret = rollout(env, env.expert_action, rng)
        if ret < env.demo_floor:
            raise DemoQualityError(
                f"{env_name} expert scored {ret:.3f} below its floor {env.demo_floor}")
        states.append(s)
        actions.append(a)
        returns.append(ret)
    meta = {"expert": type(env).__name__ + " scripted controller", "seed": seed}
    if date is not None:
        meta["date"] = date
    return DemoDataset(env_name, states, actions, returns, meta)
