"""Closed-loop rollout, equilibrium detection, Lyapunov monitoring and gap metrics."""

from dataclasses import dataclass, field

import numpy as np

from mpglab.errors import MpgLabError
from mpglab.game_model import agent_indices, finite_horizon_cost
from mpglab.mpg import compose_action, first_stage_indices

CONV_TOL = 1e-10
DIV_THRESHOLD = 1e3
MAX_STEPS = 10_000
CONV_WINDOW = 10


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    u_circ: np.ndarray
    predicted_first: np.ndarray  # (n_agents, m): stage-0 joint action in each agent's prediction
    gap: np.ndarray = None
    V: float = None


@dataclass
class EquilibriumEstimate:
    x_bar: np.ndarray
    residual: float
    steps_to_converge: int


@dataclass
class TrajectoryLog:
    records: list = field(default_factory=list)
    status: str = "running"
    final_state: np.ndarray = None
    equilibrium: EquilibriumEstimate = None

    def __len__(self):
        return len(self.records)

    @property
    def states(self):
        """All visited states including the final one, shape ``(T + 1, n_x)``."""
        xs = [r.x for r in self.records]
        if self.final_state is not None:
            xs.append(self.final_state)
        return np.array(xs)

    @property
    def actions(self):
        return np.array([r.u_circ for r in self.records])

    @property
    def gaps(self):
        return np.array([r.gap for r in self.records])


def realized_signal(bank, predictions):
    """Joint K-stage signal in which every agent follows its own prediction.

    Stage 0 equals the realized action; later stages take each agent's own
    components from its own plan.
    """
    K = bank.horizon
    dims = bank.input_dims
    u = np.empty_like(predictions[0].u_star)
    for j, p in enumerate(predictions):
        idx = agent_indices(dims, K, j)
        u[idx] = p.u_star[idx]
    return u


def game_to_real_gap(bank, x, predictions, mode="horizon"):
    """Per-agent own-cost gap between realized and predicted behaviour.

    ``mode="horizon"`` compares K-stage costs of :func:`realized_signal`
    against each agent's own prediction; ``mode="first_stage"`` compares the
    stage-0 cost only.
    """
    x = np.asarray(x, dtype=float)
    gaps = np.empty(bank.n_agents)
    if mode == "horizon":
        u_real = realized_signal(bank, predictions)
        for j, vi in enumerate(bank.vis):
            own = vi.costs[j]
            gaps[j] = (finite_horizon_cost(own, vi.prediction, x, u_real, bank.input_dims)
                       - finite_horizon_cost(own, vi.prediction, x, predictions[j].u_star,
                                             bank.input_dims))
    elif mode == "first_stage":
        m = bank.dynamics.m
        u_circ = compose_action(bank, predictions)
        for j, vi in enumerate(bank.vis):
            own = vi.costs[j]
            gaps[j] = own.value(x, u_circ) - own.value(x, predictions[j].u_star[:m])
    else:
        raise ValueError(f"unknown gap mode {mode!r}")
    return gaps


def step(bank, x, t=0, gap_mode="horizon", P=None, x_bar=None):
    """One closed-loop step; returns ``(x_next, record)``."""
    x = np.asarray(x, dtype=float)
    preds = bank.predict(x)
    bank.commit(preds)
    u = compose_action(bank, preds)
    dyn = bank.dynamics
    x_next = dyn.A @ x + dyn.B @ u
    m = dyn.m
    first = np.array([p.u_star[:m] for p in preds])
    gap = game_to_real_gap(bank, x, preds, gap_mode) if gap_mode else None
    V = None
    if P is not None:
        e = x - x_bar
        V = float(e @ P @ e)
    return x_next, StepRecord(t, x.copy(), u, first, gap, V)


def equilibrium_residual(bank, x_bar):
    """``||x - A x - B kappa(x)||`` from a fresh evaluation at ``x``."""
    preds = bank.predict(x_bar)
    u = compose_action(bank, preds)
    dyn = bank.dynamics
    return float(np.linalg.norm(x_bar - dyn.A @ x_bar - dyn.B @ u))


def run(bank, x0, max_steps=MAX_STEPS, conv_tol=CONV_TOL, div_threshold=DIV_THRESHOLD,
        gap_mode="horizon", P=None, x_bar=None, reset=True):
    """Roll out the closed loop from ``x0``.

    Stops after ``CONV_WINDOW`` consecutive steps with ``||x+ - x|| <= conv_tol``
    (status ``converged``), when ``||x|| >= div_threshold`` (``diverged``) or
    after ``max_steps`` (``max_steps``).
    """
    if reset:
        bank.reset()
    x = np.asarray(x0, dtype=float).copy()
    log = TrajectoryLog()
    quiet = 0
    for t in range(max_steps):
        if np.linalg.norm(x) >= div_threshold or not np.all(np.isfinite(x)):
            log.status = "diverged"
            break
        x_next, rec = step(bank, x, t, gap_mode, P, x_bar)
        log.records.append(rec)
        quiet = quiet + 1 if np.linalg.norm(x_next - x) <= conv_tol else 0
        x = x_next
        if quiet >= CONV_WINDOW:
            log.status = "converged"
            break
    else:
        log.status = "diverged" if np.linalg.norm(x) >= div_threshold else "max_steps"
    log.final_state = x
    if log.status == "converged":
        log.equilibrium = EquilibriumEstimate(x.copy(), equilibrium_residual(bank, x), len(log))
    return log


@dataclass
class LyapunovReport:
    delta_V: np.ndarray
    V: np.ndarray
    violations: list
    floor: float

    @property
    def ok(self):
        return not self.violations


def lyapunov_monitor(traj, P, x_bar, floor=None, rel_tol=1e-12):
    """Storage-function decrease along a trajectory.

    ``delta_V[t] = V(x_{t+1}) - V(x_t)`` with ``V(x) = (x - x_bar)' P (x - x_bar)``.
    Step ``t`` is a violation when ``delta_V[t] > -rel_tol * V(x_t)`` while
    ``||x_t - x_bar|| > floor``. The default floor ``1e-8 (1 + ||x_bar||)``
    keeps rounding in ``x_t - x_bar`` from masquerading as growth.
    """
    P = np.asarray(P, dtype=float)
    if np.max(np.abs(P - P.T)) > 1e-12 * max(1.0, np.max(np.abs(P))):
        raise MpgLabError("P must be symmetric")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise MpgLabError("P must be positive definite")
    x_bar = np.asarray(x_bar, dtype=float)
    X = traj.states if isinstance(traj, TrajectoryLog) else np.asarray(traj, dtype=float)
    if floor is None:
        floor = 1e-8 * (1.0 + float(np.linalg.norm(x_bar)))
    E = X - x_bar
    V = np.einsum("ti,ij,tj->t", E, P, E)
    dV = V[1:] - V[:-1]
    dist = np.linalg.norm(E[:-1], axis=1)
    bad = np.flatnonzero((dV > -rel_tol * V[:-1]) & (dist > floor))
    return LyapunovReport(dV, V, [int(t) for t in bad], floor)


def own_first_actions(bank, predictions):
    """Each agent's own stage-0 action, per agent (list of arrays)."""
    return [p.u_star[first_stage_indices(bank.input_dims, j)] for j, p in enumerate(predictions)]
