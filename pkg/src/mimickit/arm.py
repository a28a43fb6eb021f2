"""Deterministic planar N-link torque-actuated arm with a moving-target task.

The arm is a serial chain of uniform rods in a horizontal plane (gravity off),
integrated with semi-implicit Euler. Dynamics are solved in absolute link
angles ``alpha = cumsum(q)``, where the mass matrix takes the classic
multi-pendulum form

    A[j,k] = beta[j,k] * cos(alpha_j - alpha_k) + delta_jk * Irot_j
    bias_j = sum_k beta[j,k] * sin(alpha_j - alpha_k) * alphadot_k**2

with constant ``beta`` assembled once from link masses and lengths. Joint
torques and damping act in relative coordinates and are mapped across via the
(bi)diagonal coordinate change. Reward is the negative squared end-effector
distance to the target minus a small control cost; targets re-sample every
``target_switch_period`` from a pre-drawn per-episode schedule so stepping
stays a pure function of (state, action, config).

Integration is semi-implicit Euler with a passivity guard: each substep caps
kinetic energy at the work-balance bound E + dt (qdot . tau - b |qdot|^2) by
rescaling velocities, since the explicit Coriolis term can otherwise inject
O(dt^2) energy at high joint speeds. The guard never adds energy and leaves
slow trajectories untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class ArmFault(RuntimeError):
    """Raised when integration produces a non-finite state."""


def _tuple_of(values, n, name):
    vals = tuple(float(v) for v in values)
    if len(vals) != n:
        raise ValueError(f"{name} must have length {n}")
    if any(v <= 0.0 for v in vals):
        raise ValueError(f"{name} entries must be > 0")
    return vals


@dataclass(frozen=True)
class ArmConfig:
    n_links: int = 2
    link_lengths: tuple[float, ...] = (0.5, 0.5)
    link_masses: tuple[float, ...] = (1.0, 1.0)
    joint_damping: float = 0.1
    action_gains: tuple[float, ...] = (10.0, 10.0)
    dt_sim: float = 0.005
    dt_ctrl: float = 0.03
    episode_length: float = 4.0
    target_switch_period: float = 1.0
    control_cost_coeff: float = 0.01

    def __post_init__(self):
        if self.n_links < 1:
            raise ValueError("n_links must be >= 1")
        object.__setattr__(self, "link_lengths", _tuple_of(self.link_lengths, self.n_links, "link_lengths"))
        object.__setattr__(self, "link_masses", _tuple_of(self.link_masses, self.n_links, "link_masses"))
        object.__setattr__(self, "action_gains", _tuple_of(self.action_gains, self.n_links, "action_gains"))
        if self.joint_damping <= 0.0:
            raise ValueError("joint_damping must be > 0")
        if self.dt_sim <= 0.0 or self.dt_ctrl <= 0.0:
            raise ValueError("timesteps must be > 0")
        n_sub = self.dt_ctrl / self.dt_sim
        if abs(n_sub - round(n_sub)) > 1e-9 or round(n_sub) < 1:
            raise ValueError("dt_ctrl must be an integer multiple of dt_sim")
        if self.episode_length < self.dt_ctrl:
            raise ValueError("episode_length must cover at least one control step")
        if self.target_switch_period <= 0.0:
            raise ValueError("target_switch_period must be > 0")
        if self.control_cost_coeff < 0.0:
            raise ValueError("control_cost_coeff must be >= 0")

    @property
    def reach(self) -> float:
        return sum(self.link_lengths)

    @property
    def n_substeps(self) -> int:
        return int(round(self.dt_ctrl / self.dt_sim))

    @property
    def n_ctrl_steps(self) -> int:
        # Whole control steps only; a 4 s episode at 30 ms runs 133 steps.
        return int(math.floor(self.episode_length / self.dt_ctrl + 1e-9))

    @property
    def n_targets(self) -> int:
        horizon = self.n_ctrl_steps * self.dt_ctrl
        return int(math.floor((horizon - 1e-9) / self.target_switch_period)) + 1

    @cached_property
    def _beta(self) -> np.ndarray:
        """Constant part of the absolute-angle mass matrix."""
        n = self.n_links
        lengths = np.asarray(self.link_lengths)
        masses = np.asarray(self.link_masses)
        beta = np.zeros((n, n))
        for k in range(n):
            c = np.zeros(n)
            c[:k] = lengths[:k]
            c[k] = 0.5 * lengths[k]
            beta += masses[k] * np.outer(c, c)
        return beta

    @cached_property
    def _rot_inertia(self) -> np.ndarray:
        # Uniform rod about its center of mass: m l^2 / 12.
        lengths = np.asarray(self.link_lengths)
        masses = np.asarray(self.link_masses)
        return masses * lengths ** 2 / 12.0


@dataclass(frozen=True)
class ArmState:
    q: np.ndarray
    qdot: np.ndarray
    target: np.ndarray
    t: float
    # Remaining schedule is part of the state so stepping is deterministic.
    targets: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class StepResult:
    next_state: ArmState
    reward: float
    done: bool
    observation: np.ndarray


def arm_fk(q, link_lengths):
    """Planar chain forward kinematics from the origin.

    Returns ``(joints, ee)`` where ``joints`` is the (n+1, 2) array of joint
    positions starting at the base and ``ee`` is the tip.
    """
    q = np.asarray(q, dtype=np.float64)
    lengths = np.asarray(link_lengths, dtype=np.float64)
    if q.shape != lengths.shape:
        raise ValueError("q and link_lengths must have equal length")
    alpha = np.cumsum(q)
    steps = np.stack([lengths * np.cos(alpha), lengths * np.sin(alpha)], axis=1)
    joints = np.zeros((q.size + 1, 2))
    joints[1:] = np.cumsum(steps, axis=0)
    return joints, joints[-1]


def _alpha_matrices(config: ArmConfig, alpha: np.ndarray):
    diff = alpha[:, None] - alpha[None, :]
    a = config._beta * np.cos(diff)
    a[np.diag_indices_from(a)] += config._rot_inertia
    s = config._beta * np.sin(diff)
    return a, s


def arm_mass_matrix(q, config: ArmConfig) -> np.ndarray:
    """Joint-space mass matrix M(q); symmetric positive definite."""
    alpha = np.cumsum(np.asarray(q, dtype=np.float64))
    a, _ = _alpha_matrices(config, alpha)
    lower = np.tril(np.ones((config.n_links, config.n_links)))
    return lower.T @ a @ lower


def arm_bias(q, qdot, config: ArmConfig) -> np.ndarray:
    """Joint-space velocity-product (Coriolis/centrifugal) forces C(q, qdot) qdot."""
    q = np.asarray(q, dtype=np.float64)
    qdot = np.asarray(qdot, dtype=np.float64)
    alpha = np.cumsum(q)
    alpha_dot = np.cumsum(qdot)
    _, s = _alpha_matrices(config, alpha)
    bias_alpha = s @ (alpha_dot * alpha_dot)
    lower = np.tril(np.ones((config.n_links, config.n_links)))
    return lower.T @ bias_alpha


def kinetic_energy(q, qdot, config: ArmConfig) -> float:
    alpha = np.cumsum(np.asarray(q, dtype=np.float64))
    alpha_dot = np.cumsum(np.asarray(qdot, dtype=np.float64))
    a, _ = _alpha_matrices(config, alpha)
    return 0.5 * float(alpha_dot @ a @ alpha_dot)


def arm_dynamics(q, qdot, tau, config: ArmConfig) -> np.ndarray:
    """Joint accelerations solving M(q) qddot = tau - C qdot - damping qdot."""
    q = np.asarray(q, dtype=np.float64)
    qdot = np.asarray(qdot, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (config.n_links,):
        raise ValueError(f"tau must have length {config.n_links}")
    alpha = np.cumsum(q)
    alpha_dot = np.cumsum(qdot)
    a, s = _alpha_matrices(config, alpha)
    bias = s @ (alpha_dot * alpha_dot)
    g = tau - config.joint_damping * qdot
    u = g.copy()
    u[:-1] -= g[1:]
    alpha_dd = np.linalg.solve(a, u - bias)
    qddot = alpha_dd.copy()
    qddot[1:] -= alpha_dd[:-1]
    return qddot


def _integrate(q: list, qdot: list, tau: list, config: ArmConfig):
    """Scalar-math integration loop for one control step.

    Same equations as :func:`arm_dynamics` plus the passivity guard; written
    with plain floats because numpy dispatch overhead dominates at n <= 3.
    The residual and passivity tests cross-check this path against the
    matrix-form helpers.
    """
    n = config.n_links
    beta = config._beta.tolist()
    inertia = config._rot_inertia.tolist()
    damping = config.joint_damping
    dt = config.dt_sim
    cos, sin = math.cos, math.sin

    def build(alpha, alpha_dot):
        # Mass matrix, centrifugal bias, and kinetic energy in one sweep.
        amat = [[0.0] * n for _ in range(n)]
        bias = [0.0] * n
        energy = 0.0
        for j in range(n):
            amat[j][j] = beta[j][j] + inertia[j]
            energy += 0.5 * amat[j][j] * alpha_dot[j] * alpha_dot[j]
            for k in range(j + 1, n):
                d = alpha[j] - alpha[k]
                c = beta[j][k] * cos(d)
                s = beta[j][k] * sin(d)
                amat[j][k] = c
                amat[k][j] = c
                energy += c * alpha_dot[j] * alpha_dot[k]
                bias[j] += s * alpha_dot[k] * alpha_dot[k]
                bias[k] -= s * alpha_dot[j] * alpha_dot[j]
        return amat, bias, energy

    def cumsum(v):
        out = [0.0] * n
        acc = 0.0
        for i in range(n):
            acc += v[i]
            out[i] = acc
        return out

    alpha = cumsum(q)
    alpha_dot = cumsum(qdot)
    amat, bias, energy = build(alpha, alpha_dot)
    for _ in range(config.n_substeps):
        rhs = [0.0] * n
        for j in range(n):
            g = tau[j] - damping * qdot[j]
            rhs[j] += g - bias[j]
            if j > 0:
                rhs[j - 1] -= g
        alpha_dd = _solve_spd(amat, rhs, n)
        for j in range(n - 1, 0, -1):
            qdot[j] += dt * (alpha_dd[j] - alpha_dd[j - 1])
            q[j] += dt * qdot[j]
        qdot[0] += dt * alpha_dd[0]
        q[0] += dt * qdot[0]

        alpha = cumsum(q)
        alpha_dot = cumsum(qdot)
        amat, bias, raw = build(alpha, alpha_dot)
        power = 0.0
        for j in range(n):
            power += qdot[j] * tau[j] - damping * qdot[j] * qdot[j]
        cap = energy + dt * power
        if raw > cap:
            scale = math.sqrt(max(cap, 0.0) / raw) if raw > 0.0 else 0.0
            s2 = scale * scale
            for j in range(n):
                qdot[j] *= scale
                alpha_dot[j] *= scale
                bias[j] *= s2
            raw *= s2
        energy = raw
    return q, qdot


def _solve_spd(amat, rhs, n: int):
    """Gaussian elimination without pivoting; fine for SPD mass matrices."""
    if n == 1:
        return [rhs[0] / amat[0][0]]
    if n == 2:
        a, b, c = amat[0][0], amat[0][1], amat[1][1]
        det = a * c - b * b
        return [(c * rhs[0] - b * rhs[1]) / det, (a * rhs[1] - b * rhs[0]) / det]
    m = [row[:] + [r] for row, r in zip(amat, rhs)]
    for col in range(n):
        piv = m[col][col]
        for row in range(col + 1, n):
            f = m[row][col] / piv
            if f != 0.0:
                for k in range(col, n + 1):
                    m[row][k] -= f * m[col][k]
    x = [0.0] * n
    for row in range(n - 1, -1, -1):
        acc = m[row][n]
        for k in range(row + 1, n):
            acc -= m[row][k] * x[k]
        x[row] = acc / m[row][row]
    return x


def arm_reset(config: ArmConfig, rng: np.random.Generator) -> ArmState:
    """Random start: q uniform in [-pi, pi], zero velocity, targets pre-drawn.

    Targets are area-uniform over the annulus [0.2 R, 0.95 R] of the reach
    radius R; the whole per-episode schedule is drawn here so that stepping
    needs no randomness.
    """
    q = rng.uniform(-math.pi, math.pi, size=config.n_links)
    targets = np.empty((config.n_targets, 2))
    r_lo, r_hi = 0.2 * config.reach, 0.95 * config.reach
    for i in range(config.n_targets):
        r = math.sqrt(rng.uniform(r_lo * r_lo, r_hi * r_hi))
        theta = rng.uniform(-math.pi, math.pi)
        targets[i, 0] = r * math.cos(theta)
        targets[i, 1] = r * math.sin(theta)
    return ArmState(q=q, qdot=np.zeros(config.n_links), target=targets[0], t=0.0, targets=targets)


def arm_observe(state: ArmState, config: ArmConfig) -> np.ndarray:
    """Observation layout [sin q | cos q | qdot | target - ee]; width 3n + 2."""
    _, ee = arm_fk(state.q, config.link_lengths)
    return np.concatenate([np.sin(state.q), np.cos(state.q), state.qdot, state.target - ee])


def arm_step(state: ArmState, action, config: ArmConfig) -> StepResult:
    """Advance one control step (dt_ctrl) with a zero-order-hold action.

    The action is clipped to [-1, 1] and scaled by the per-joint gains, the
    dynamics are integrated with semi-implicit Euler at dt_sim, and the reward
    is ``-||ee - target||^2 - control_cost_coeff * ||a||^2`` evaluated at the
    new state.
    """
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if a.shape != (config.n_links,):
        raise ValueError(f"action must have length {config.n_links}")
    tau = (a * np.asarray(config.action_gains)).tolist()

    try:
        q, qdot = _integrate(state.q.tolist(), state.qdot.tolist(), tau, config)
        finite = all(map(math.isfinite, q)) and all(map(math.isfinite, qdot))
    except (ValueError, OverflowError, ZeroDivisionError):
        finite = False
        q = qdot = None
    if not finite:
        raise ArmFault(f"non-finite state during integration at t={state.t:.3f} "
                       f"(from q={state.q}, qdot={state.qdot})")
    q = np.asarray(q)
    qdot = np.asarray(qdot)

    # Control-step index is reconstructed from t so time never drifts.
    k_next = int(round(state.t / config.dt_ctrl)) + 1
    t_next = k_next * config.dt_ctrl
    idx = min(int((t_next + 1e-9) / config.target_switch_period), len(state.targets) - 1)
    target = state.targets[idx]

    _, ee = arm_fk(q, config.link_lengths)
    dist2 = float(np.sum((ee - target) ** 2))
    reward = -dist2 - config.control_cost_coeff * float(a @ a)
    done = k_next >= config.n_ctrl_steps

    next_state = ArmState(q=q, qdot=qdot, target=target, t=t_next, targets=state.targets)
    observation = np.concatenate([np.sin(q), np.cos(q), qdot, target - ee])
    return StepResult(next_state=next_state, reward=reward, done=done,
                      observation=observation)


class ArmEnv:
    """Stateful convenience wrapper; one instance per rollout worker."""

    def __init__(self, config: ArmConfig):
        self.config = config
        self.state: ArmState | None = None

    @property
    def obs_dim(self) -> int:
        return 3 * self.config.n_links + 2

    @property
    def action_dim(self) -> int:
        return self.config.n_links

    def reset(self, rng: np.random.Generator) -> ArmState:
        self.state = arm_reset(self.config, rng)
        return self.state

    def observe(self) -> np.ndarray:
        return arm_observe(self.state, self.config)

    def step(self, action) -> StepResult:
        result = arm_step(self.state, action, self.config)
        self.state = result.next_state
        return result
