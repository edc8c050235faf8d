"""Linear-quadratic game data and the finite-horizon prediction game.

Joint control signals are stacked stage-major: entry ``k * m + offset_i + c``
holds component ``c`` of agent ``i`` at stage ``k``, where ``offset_i`` is the
sum of the input dimensions of the agents before ``i``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from mpglab.errors import DimensionError, MonotonicityError
from mpglab.vi_solver import monotonicity_constant

ASYMMETRY_WARN = 1e-9


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _symmetrize(X, name):
    asym = np.max(np.abs(X - X.T)) if X.size else 0.0
    if asym > ASYMMETRY_WARN:
        warnings.warn(f"{name} is not symmetric (max asymmetry {asym:.3g}); "
                      "using (X + X^T)/2", stacklevel=3)
    return 0.5 * (X + X.T)


def offsets(input_dims):
    return np.concatenate([[0], np.cumsum(input_dims)]).astype(int)


def agent_indices(input_dims, K, i):
    """Stage-major indices of agent ``i``'s control signal in a ``K*m`` vector."""
    m = int(sum(input_dims))
    off = offsets(input_dims)
    local = np.arange(off[i], off[i + 1])
    return (np.arange(K)[:, None] * m + local[None, :]).ravel()


@dataclass(frozen=True)
class Dynamics:
    """``x+ = A x + sum_i B_i u_i``."""

    A: np.ndarray
    B_list: tuple

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got shape {A.shape}")
        n_x = A.shape[0]
        if len(self.B_list) < 1:
            raise DimensionError("at least one agent is required")
        Bs = []
        for i, B in enumerate(self.B_list):
            B = np.array(B, dtype=float)
            if B.ndim == 1:
                B = B[:, None]
            if B.ndim != 2 or B.shape[0] != n_x or B.shape[1] < 1:
                raise DimensionError(
                    f"B_{i} must have {n_x} rows and at least one column, got {B.shape}")
            Bs.append(_readonly(B))
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "B_list", tuple(Bs))

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_agents(self):
        return len(self.B_list)

    @property
    def input_dims(self):
        return tuple(B.shape[1] for B in self.B_list)

    @property
    def m(self):
        return sum(self.input_dims)

    @property
    def B(self):
        return np.hstack(self.B_list)

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class StageCost:
    """``g(x, u) = x'Qx + x'q + u'Ru`` with ``R`` partitioned by agent."""

    Q: np.ndarray
    q: np.ndarray
    R: np.ndarray
    input_dims: tuple

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        q = np.array(self.q, dtype=float).ravel()
        R = np.array(self.R, dtype=float)
        dims = tuple(int(k) for k in self.input_dims)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionError(f"Q must be square, got shape {Q.shape}")
        if q.shape[0] != Q.shape[0]:
            raise DimensionError(f"q must have length {Q.shape[0]}, got {q.shape[0]}")
        m = sum(dims)
        if R.shape != (m, m):
            raise DimensionError(f"R must be {m}x{m}, got {R.shape}")
        object.__setattr__(self, "Q", _readonly(_symmetrize(Q, "Q")))
        object.__setattr__(self, "q", _readonly(q))
        object.__setattr__(self, "R", _readonly(_symmetrize(R, "R")))
        object.__setattr__(self, "input_dims", dims)

    @classmethod
    def zero(cls, n_x, input_dims):
        m = sum(input_dims)
        return cls(np.zeros((n_x, n_x)), np.zeros(n_x), np.zeros((m, m)), input_dims)

    def block(self, i, l):
        off = offsets(self.input_dims)
        return self.R[off[i]:off[i + 1], off[l]:off[l + 1]]

    def own_block(self, i):
        return self.block(i, i)

    def value(self, x, u):
        return float(x @ self.Q @ x + x @ self.q + u @ self.R @ u)

    def scaled(self, c):
        return StageCost(c * self.Q, c * self.q, c * self.R, self.input_dims)


@dataclass(frozen=True)
class ParamCostBasis:
    """Conic combination ``sum_k theta_k * basis[k]`` of stage costs."""

    basis: tuple
    theta: np.ndarray

    def __post_init__(self):
        basis = tuple(self.basis)
        theta = np.array(self.theta, dtype=float).ravel()
        if len(basis) == 0 or len(basis) != theta.shape[0]:
            raise DimensionError(
                f"theta has {theta.shape[0]} entries for {len(basis)} basis costs")
        dims = basis[0].input_dims
        n_x = basis[0].Q.shape[0]
        for c in basis:
            if c.input_dims != dims or c.Q.shape[0] != n_x:
                raise DimensionError("basis costs must share state and input dimensions")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "theta", _readonly(theta))

    @property
    def input_dims(self):
        return self.basis[0].input_dims

    def with_theta(self, theta):
        return ParamCostBasis(self.basis, theta)


def mix_costs(basis):
    """Entrywise conic combination of a :class:`ParamCostBasis`."""
    theta = basis.theta
    if np.any(theta < 0):
        raise ValueError(f"theta must be nonnegative, got {theta}")
    if not np.any(theta > 0):
        raise ValueError("at least one theta entry must be positive")
    Q = sum(t * c.Q for t, c in zip(theta, basis.basis))
    q = sum(t * c.q for t, c in zip(theta, basis.basis))
    R = sum(t * c.R for t, c in zip(theta, basis.basis))
    return StageCost(Q, q, R, basis.input_dims)


@dataclass(frozen=True)
class ConjectureSet:
    """Agent ``owner``'s model of every player's stage cost over horizon ``K``."""

    owner: int
    costs: tuple
    horizon: int

    def __post_init__(self):
        costs = tuple(self.costs)
        if not costs:
            raise DimensionError("a conjecture set needs one cost per agent")
        dims = costs[0].input_dims
        if len(dims) != len(costs):
            raise DimensionError(
                f"conjecture covers {len(costs)} agents but costs partition {len(dims)}")
        for c in costs:
            if not isinstance(c, (StageCost, ParamCostBasis)):
                raise TypeError(f"unsupported cost entry {type(c).__name__}")
            if c.input_dims != dims:
                raise DimensionError("all conjectured costs must share the input partition")
        thetas = [c.theta for c in costs if isinstance(c, ParamCostBasis)]
        for t in thetas[1:]:
            if t.shape != thetas[0].shape or np.any(t != thetas[0]):
                raise ValueError("parameterized costs in one conjecture must share theta")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be at least 1")
        if not 0 <= self.owner < len(costs):
            raise ValueError(f"owner {self.owner} out of range")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_agents(self):
        return len(self.costs)

    @property
    def input_dims(self):
        return self.costs[0].input_dims

    @property
    def theta(self):
        for c in self.costs:
            if isinstance(c, ParamCostBasis):
                return c.theta
        return None

    @property
    def n_params(self):
        t = self.theta
        return 0 if t is None else t.shape[0]

    def with_theta(self, theta):
        costs = tuple(c.with_theta(theta) if isinstance(c, ParamCostBasis) else c
                      for c in self.costs)
        return ConjectureSet(self.owner, costs, self.horizon)

    def resolved(self):
        return tuple(mix_costs(c) if isinstance(c, ParamCostBasis) else c
                     for c in self.costs)

    def basis_game(self, k):
        """Costs of basis game ``k``; unparameterized players get zero cost."""
        out = []
        for c in self.costs:
            if isinstance(c, ParamCostBasis):
                out.append(c.basis[k])
            else:
                out.append(StageCost.zero(c.Q.shape[0], c.input_dims))
        return tuple(out)


@dataclass(frozen=True)
class PredictionMatrices:
    A_tilde: np.ndarray
    B_tilde: np.ndarray
    B_tilde_list: tuple
    horizon: int


def build_prediction_matrices(dyn, K):
    """Free-response and impulse-response matrices over ``K`` steps.

    ``x_{0:K} = A_tilde x_0 + B_tilde u`` with ``u`` stacked stage-major.
    """
    if K < 1:
        raise ValueError("horizon must be at least 1")
    n_x, m = dyn.n_x, dyn.m
    A = dyn.A
    powers = [np.eye(n_x)]
    for _ in range(K):
        powers.append(A @ powers[-1])
    A_tilde = np.vstack(powers)
    B = dyn.B
    B_tilde = np.zeros(((K + 1) * n_x, K * m))
    for r in range(1, K + 1):
        for c in range(r):
            B_tilde[r * n_x:(r + 1) * n_x, c * m:(c + 1) * m] = powers[r - 1 - c] @ B
    dims = dyn.input_dims
    B_list = tuple(_readonly(B_tilde[:, agent_indices(dims, K, i)]) for i in range(len(dims)))
    return PredictionMatrices(_readonly(A_tilde), _readonly(B_tilde), B_list, K)


def _stage_weights(K):
    # stage costs on x_0..x_{K-1}; x_K carries no cost
    w = np.ones(K + 1)
    w[K] = 0.0
    return w


def gradient_blocks(costs, pred, input_dims):
    """Pseudo-gradient pieces ``(M, f, F_x)`` for a tuple of per-player costs."""
    K = pred.horizon
    n_x = pred.A_tilde.shape[1]
    n_u = pred.B_tilde.shape[1]
    w = _stage_weights(K)
    M = np.zeros((n_u, n_u))
    f = np.zeros(n_u)
    F_x = np.zeros((n_u, n_x))
    for i, cost in enumerate(costs):
        idx = agent_indices(input_dims, K, i)
        Bi = pred.B_tilde_list[i]
        BiQ = Bi.T @ np.kron(np.diag(w), cost.Q)
        R_tilde = np.kron(np.eye(K), cost.R)
        M[idx] = 2.0 * (BiQ @ pred.B_tilde + R_tilde[idx])
        f[idx] = Bi.T @ np.kron(w, cost.q)
        F_x[idx] = 2.0 * BiQ @ pred.A_tilde
    return M, f, F_x


@dataclass(frozen=True)
class AffineVI:
    """``F(u; x) = M u + f + F_x x`` over ``feasible_set``.

    ``theta_blocks[k] = (M_k, f_k, F_x_k)`` gives the derivative of the
    pseudo-gradient with respect to the conjecture weight ``theta_k``.
    """

    M: np.ndarray
    f: np.ndarray
    F_x: np.ndarray
    feasible_set: object
    rho: float
    horizon: int
    input_dims: tuple
    costs: tuple
    prediction: PredictionMatrices
    theta_blocks: tuple = field(default=())

    @property
    def rho_exceeds_one(self):
        return self.rho > 1.0

    @property
    def lipschitz(self):
        return float(np.linalg.norm(self.M, 2))

    @property
    def n_params(self):
        return len(self.theta_blocks)

    def offset(self, x):
        return self.f + self.F_x @ x

    def pseudo_gradient(self, u, x):
        return self.M @ u + self.f + self.F_x @ x

    def theta_gradient(self, u, x):
        """``dF/dtheta`` at ``(u, x)``, shape ``(K*m, n_params)``."""
        if not self.theta_blocks:
            return np.zeros((self.M.shape[0], 0))
        return np.column_stack([Mk @ u + fk + Fk @ x for Mk, fk, Fk in self.theta_blocks])


def assemble_affine_vi(conj, dyn, feas):
    """Assemble agent ``conj.owner``'s finite-horizon game as an affine VI."""
    if conj.n_agents != dyn.n_agents or conj.input_dims != dyn.input_dims:
        raise DimensionError("conjecture set and dynamics disagree on agents/inputs")
    if conj.resolved()[0].Q.shape[0] != dyn.n_x:
        raise DimensionError("cost state dimension does not match dynamics")
    K = conj.horizon
    if feas.dim != K * dyn.m:
        raise DimensionError(f"feasible set has dimension {feas.dim}, expected {K * dyn.m}")
    pred = build_prediction_matrices(dyn, K)
    costs = conj.resolved()
    M, f, F_x = gradient_blocks(costs, pred, dyn.input_dims)
    rho = monotonicity_constant(M)
    if rho <= 0:
        raise MonotonicityError(
            f"pseudo-gradient of conjecture {conj.owner} is not strongly monotone: "
            f"smallest eigenvalue of the symmetric part is {rho:.6g}",
            eigenvalue=rho, agent=conj.owner)
    blocks = []
    for k in range(conj.n_params):
        Mk, fk, Fk = gradient_blocks(conj.basis_game(k), pred, dyn.input_dims)
        blocks.append((_readonly(Mk), _readonly(fk), _readonly(Fk)))
    return AffineVI(_readonly(M), _readonly(f), _readonly(F_x), feas, rho, K,
                    dyn.input_dims, costs, pred, tuple(blocks))


def finite_horizon_cost(cost, pred, x0, u, input_dims):
    """``sum_{k<K} g(x_k, u_k)`` along the rollout of ``u`` from ``x0``."""
    K = pred.horizon
    n_x = pred.A_tilde.shape[1]
    m = sum(input_dims)
    X = (pred.A_tilde @ x0 + pred.B_tilde @ u).reshape(K + 1, n_x)
    U = np.asarray(u).reshape(K, m)
    return sum(cost.value(X[k], U[k]) for k in range(K))


def rescale_conjecture(conj, factor):
    """Multiply every cost in ``conj`` by ``factor > 0``.

    The equilibrium is unchanged but the monotonicity constant and the
    state-injection matrix scale by ``factor``, which changes the stability
    certificate problem.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    costs = []
    for c in conj.costs:
        if isinstance(c, ParamCostBasis):
            costs.append(ParamCostBasis(tuple(b.scaled(factor) for b in c.basis), c.theta))
        else:
            costs.append(c.scaled(factor))
    return ConjectureSet(conj.owner, tuple(costs), conj.horizon)


@dataclass
class Clause:
    name: str
    passed: bool
    detail: str
    blocking: bool = True


@dataclass
class AssumptionReport:
    clauses: list
    rho: dict

    @property
    def passed(self):
        return all(c.passed for c in self.clauses if c.blocking)

    def failures(self):
        return [c for c in self.clauses if c.blocking and not c.passed]

    def summary(self):
        lines = []
        for c in self.clauses:
            mark = "ok  " if c.passed else ("FAIL" if c.blocking else "note")
            lines.append(f"[{mark}] {c.name}: {c.detail}")
        return "\n".join(lines)


def validate_assumptions(dyn, conjectures, feas, true_costs=None):
    """Check the standing assumptions; never raises, returns a report."""
    clauses = []
    sr = dyn.spectral_radius
    clauses.append(Clause("(i) open-loop stability", sr < 1.0,
                          f"spectral radius of A = {sr:.6g}"))
    comp = feas.compactness_check()
    if comp.bounded:
        detail = "nonempty and bounded"
    elif not comp.nonempty:
        detail = "feasible set is empty"
    else:
        detail = f"unbounded along {np.array2string(comp.direction, precision=3)}"
    clauses.append(Clause("(ii) feasible set compact and nonempty", comp.bounded, detail))
    rho = {}
    for conj in conjectures:
        j = conj.owner
        costs = conj.resolved()
        for i, c in enumerate(costs):
            ev = float(np.min(np.linalg.eigvalsh(c.own_block(i))))
            clauses.append(Clause(f"(iii) strong convexity of player {i} in conjecture {j}",
                                  ev > 0, f"min eig of own R block = {ev:.6g}"))
        if conj.horizon < 2:
            clauses.append(Clause(f"horizon of conjecture {j}", False,
                                  f"K = {conj.horizon}; prediction horizons are normally K > 1",
                                  blocking=False))
        try:
            pred = build_prediction_matrices(dyn, conj.horizon)
            M, _, _ = gradient_blocks(costs, pred, dyn.input_dims)
            r = monotonicity_constant(M)
        except Exception as exc:  # dimension problems surface here
            clauses.append(Clause(f"(iv) strong monotonicity of conjecture {j}", False, str(exc)))
            continue
        rho[j] = r
        clauses.append(Clause(f"(iv) strong monotonicity of conjecture {j}", r > 1.0,
                              f"rho_{j} = {r:.6g} (needs > 1)"))
        if true_costs is not None:
            own = costs[j]
            truth = true_costs[j]
            same = (np.array_equal(own.Q, truth.Q) and np.array_equal(own.q, truth.q)
                    and np.array_equal(own.R, truth.R))
            clauses.append(Clause(f"own-cost conjecture of agent {j}", same,
                                  "matches ground truth" if same
                                  else "differs from the ground-truth cost",
                                  blocking=False))
    return AssumptionReport(clauses, rho)
