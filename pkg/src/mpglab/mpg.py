"""Model-predictive-game controllers and the realized feedback law."""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from mpglab.errors import DimensionError, SolverError
from mpglab.game_model import assemble_affine_vi, offsets
from mpglab.vi_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, solve


def max_workers():
    """Thread cap from ``MPG_LAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MPG_LAB_THREADS", "1")))
    except ValueError:
        return 1


def first_stage_indices(input_dims, j):
    """Indices of agent ``j``'s stage-0 action inside a stacked signal."""
    off = offsets(input_dims)
    return np.arange(off[j], off[j + 1])


def selection_matrix(input_dims, K, j):
    """Matrix form of the first-action selector for agent ``j``."""
    m = sum(input_dims)
    idx = first_stage_indices(input_dims, j)
    S = np.zeros((idx.size, K * m))
    S[np.arange(idx.size), idx] = 1.0
    return S


def stacked_selection(input_dims, K):
    """Block-diagonal selector mapping stacked predictions to the joint action."""
    n = len(input_dims)
    m = sum(input_dims)
    Xi = np.zeros((m, n * K * m))
    off = offsets(input_dims)
    for j in range(n):
        Xi[off[j]:off[j + 1], j * K * m:(j + 1) * K * m] = selection_matrix(input_dims, K, j)
    return Xi


def shift_warm_start(u, K, m):
    """Drop the first stage and repeat the last one."""
    U = np.asarray(u).reshape(K, m)
    return np.vstack([U[1:], U[-1:]]).ravel()


class ControllerBank:
    """One MPG controller per agent, sharing dynamics, horizon and feasible set.

    Per-agent solves within a step are independent; the warm-start cache is
    only written by :meth:`commit`, after every agent has solved.
    """

    def __init__(self, dynamics, conjectures, polytope, tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, warm_start=True, threads=None):
        conjectures = tuple(conjectures)
        if len(conjectures) != dynamics.n_agents:
            raise DimensionError(
                f"{len(conjectures)} conjecture sets for {dynamics.n_agents} agents")
        for j, c in enumerate(conjectures):
            if c.owner != j:
                raise ValueError(f"conjecture {j} is owned by agent {c.owner}; order by owner")
        horizons = {c.horizon for c in conjectures}
        if len(horizons) != 1:
            raise ValueError("all conjecture sets must share the horizon")
        self.dynamics = dynamics
        self.conjectures = conjectures
        self.polytope = polytope
        self.vis = tuple(assemble_affine_vi(c, dynamics, polytope) for c in conjectures)
        self.tol = tol
        self.max_iter = max_iter
        self.warm_start = warm_start
        self.threads = threads
        self._last = [None] * dynamics.n_agents

    @property
    def n_agents(self):
        return self.dynamics.n_agents

    @property
    def horizon(self):
        return self.conjectures[0].horizon

    @property
    def input_dims(self):
        return self.dynamics.input_dims

    @property
    def rho(self):
        return [vi.rho for vi in self.vis]

    def reset(self):
        self._last = [None] * self.n_agents

    def solve_agent(self, j, x):
        u0 = None
        if self.warm_start and self._last[j] is not None:
            u0 = shift_warm_start(self._last[j].u_star, self.horizon, self.dynamics.m)
        try:
            return solve(self.vis[j], x, tol=self.tol, max_iter=self.max_iter, u0=u0)
        except SolverError as exc:
            exc.agent = j
            raise

    def predict(self, x):
        """Every agent's vGNE prediction at state ``x``, in agent order."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dynamics.n_x,):
            raise DimensionError(f"state has shape {x.shape}, expected ({self.dynamics.n_x},)")
        workers = min(self.threads or max_workers(), self.n_agents)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(lambda j: self.solve_agent(j, x), range(self.n_agents)))
        return [self.solve_agent(j, x) for j in range(self.n_agents)]

    def commit(self, predictions):
        if self.warm_start:
            self._last = list(predictions)


def controller_action(bank, j, x):
    """Agent ``j``'s applied action and its full prediction."""
    sol = bank.solve_agent(j, np.asarray(x, dtype=float))
    return sol.u_star[first_stage_indices(bank.input_dims, j)], sol


def compose_action(bank, predictions):
    """Stack each agent's own first action from its own prediction."""
    return np.concatenate([p.u_star[first_stage_indices(bank.input_dims, j)]
                           for j, p in enumerate(predictions)])


def realized_action(bank, x, return_predictions=False):
    """Realized joint action ``kappa(x)``."""
    preds = bank.predict(x)
    bank.commit(preds)
    u = compose_action(bank, preds)
    return (u, preds) if return_predictions else u
