"""Versioned JSON scenario files.

Numbers may be JSON numbers or decimal strings (``"0.1"``, ``"1e-3"``);
after loading they are held as floats, and :func:`dump` writes them back with
``repr`` so a load/dump/load cycle is bit-exact.
"""

import copy
import json
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from mpglab.errors import CompactnessError, DimensionError, ScenarioError
from mpglab.game_model import (ConjectureSet, Dynamics, ParamCostBasis, StageCost,
                               validate_assumptions)
from mpglab.mpg import ControllerBank
from mpglab.polytope import Polytope

SCHEMA_VERSION = 1

_num = {"type": ["number", "string"]}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_cost = {
    "type": "object",
    "required": ["Q", "q", "R"],
    "properties": {"Q": _mat, "q": _vec, "R": _mat, "note": {"type": "string"}},
    "additionalProperties": False,
}
_cost_ref = {"oneOf": [{"type": "string"}, _cost]}
_entry = {
    "oneOf": [
        {"type": "string"},
        _cost,
        {"type": "object", "required": ["basis", "theta"], "additionalProperties": False,
         "properties": {"basis": {"type": "array", "items": _cost_ref, "minItems": 1},
                        "theta": _vec}},
    ]
}
_rows = {"type": "object", "required": ["C", "d"], "additionalProperties": False,
         "properties": {"C": _mat, "d": _vec}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "dynamics", "horizon", "constraints", "conjectures"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "provenance": {"type": "object", "additionalProperties": {"type": "string"}},
        "dynamics": {
            "type": "object", "required": ["A", "B"], "additionalProperties": False,
            "properties": {"A": _mat, "B": {"type": "array", "items": _mat, "minItems": 1}},
        },
        "horizon": {"type": "integer", "minimum": 1},
        "constraints": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "lower": {"type": "array", "items": _vec},
                "upper": {"type": "array", "items": _vec},
                "stage_coupling": _rows,
                "horizon_coupling": _rows,
                "equality": {"type": "object", "required": ["H", "h"],
                             "additionalProperties": False,
                             "properties": {"H": _mat, "h": _vec}},
            },
        },
        "costs": {"type": "object", "additionalProperties": _cost},
        "true_costs": {"type": "array", "items": _cost_ref},
        "conjectures": {
            "type": "array", "minItems": 1,
            "items": {"type": "array", "items": _entry, "minItems": 1},
        },
        "solver": {"type": "object", "additionalProperties": False,
                   "properties": {"tol": _num, "max_iter": {"type": "integer", "minimum": 1}}},
        "simulation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "x0": {"type": "array", "items": _vec},
                "max_steps": {"type": "integer", "minimum": 1},
                "conv_tol": _num, "div_threshold": _num,
                "gap_mode": {"enum": ["horizon", "first_stage"]},
            },
        },
        "certifier": {
            "type": "object", "additionalProperties": False,
            "properties": {"delta_P": _num, "delta_lambda": _num, "eps_target": _num,
                           "max_iter": {"type": "integer", "minimum": 1},
                           "convention": {"enum": ["full", "reduced"]}},
        },
        "sweep": {
            "type": "object", "required": ["agent", "offset", "direction"],
            "additionalProperties": False,
            "properties": {"agent": {"type": "integer", "minimum": 0},
                           "offset": _vec, "direction": _vec,
                           "grid": {"type": "string"}},
        },
        "seed": {"type": "integer"},
    },
}

DEFAULTS = {
    "solver": {"tol": 1e-9, "max_iter": 200_000},
    "simulation": {"max_steps": 10_000, "conv_tol": 1e-10, "div_threshold": 1e3,
                   "gap_mode": "horizon"},
    "certifier": {"delta_P": 1e-6, "delta_lambda": 1e-8, "eps_target": 1e-6,
                  "max_iter": 50_000, "convention": "full"},
    "seed": 0,
}


def _path(err):
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def _floats(obj):
    """Convert every number or numeric string under ``obj`` to float."""
    if isinstance(obj, list):
        return [_floats(v) for v in obj]
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, (int, float)):
        return float(obj)
    if isinstance(obj, str):
        return float(obj)
    return obj


_NUMERIC_KEYS = {"A", "Q", "q", "R", "C", "d", "H", "h", "lower", "upper", "theta", "x0",
                 "offset", "direction", "tol", "conv_tol", "div_threshold", "delta_P",
                 "delta_lambda", "eps_target"}


def _normalize(obj, key=None, where=""):
    if isinstance(obj, dict):
        return {k: _normalize(v, k, f"{where}/{k}") for k, v in obj.items()}
    if key == "B":
        return [_normalize(b, "A", f"{where}/{i}") for i, b in enumerate(obj)]
    if key in _NUMERIC_KEYS:
        try:
            return _floats(obj)
        except ValueError as exc:
            raise ScenarioError(f"non-numeric entry at {where}: {exc}", path=where) from None
    if isinstance(obj, list):
        return [_normalize(v, key, f"{where}/{i}") for i, v in enumerate(obj)]
    return obj


def _matrix(x, where):
    a = np.array(x, dtype=float)
    if a.ndim != 2:
        raise ScenarioError(f"{where} must be a rectangular matrix", path=where)
    return a


@dataclass
class Scenario:
    """A validated scenario and the model objects built from it."""

    data: dict
    dynamics: Dynamics = field(compare=False, default=None)
    polytope: Polytope = field(compare=False, default=None)
    conjectures: tuple = field(compare=False, default=())
    true_costs: tuple = field(compare=False, default=None)
    report: object = field(compare=False, default=None)
    source: str = field(compare=False, default=None)

    @property
    def name(self):
        return self.data.get("name", "scenario")

    @property
    def horizon(self):
        return int(self.data["horizon"])

    def section(self, key):
        out = dict(DEFAULTS.get(key, {}))
        out.update(self.data.get(key, {}))
        return out

    @property
    def initial_states(self):
        x0 = self.data.get("simulation", {}).get("x0")
        if not x0:
            return [np.ones(self.dynamics.n_x)]
        return [np.array(x, dtype=float) for x in x0]

    def bank(self, conjectures=None, tol=None, threads=None):
        s = self.section("solver")
        return ControllerBank(self.dynamics, conjectures or self.conjectures, self.polytope,
                              tol=tol or s["tol"], max_iter=s["max_iter"], threads=threads)

    # parameter path for sweeps: theta^(agent)(s) = offset + s * direction
    def sweep_theta(self, s):
        sw = self.data["sweep"]
        return np.array(sw["offset"]) + s * np.array(sw["direction"])

    def conjectures_at(self, s):
        sw = self.data.get("sweep")
        if sw is None:
            raise ScenarioError("scenario has no sweep section", path="sweep")
        j = sw["agent"]
        conj = list(self.conjectures)
        conj[j] = conj[j].with_theta(self.sweep_theta(s))
        return tuple(conj)

    def bank_at(self, s, tol=None):
        return self.bank(self.conjectures_at(s), tol=tol, threads=1)

    def sweep_tangent(self):
        """``d theta_bar / d s`` over the stacked parameters of all agents."""
        sw = self.data["sweep"]
        parts = []
        for c in self.conjectures:
            k = c.n_params
            parts.append(np.array(sw["direction"]) if c.owner == sw["agent"] else np.zeros(k))
        return np.concatenate(parts) if parts else np.zeros(0)


def _build_cost(entry, library, dims, n_x, where):
    if isinstance(entry, str):
        if entry not in library:
            raise ScenarioError(f"unknown cost {entry!r} at {where}", path=where)
        where = f"costs/{entry}"
        entry = library[entry]
    try:
        Q = _matrix(entry["Q"], f"{where}/Q")
        R = _matrix(entry["R"], f"{where}/R")
        if Q.shape[0] != Q.shape[1]:
            raise ScenarioError(f"{where}/Q must be square, got {Q.shape}", path=f"{where}/Q")
        if Q.shape[0] != n_x:
            raise ScenarioError(f"{where}/Q must be {n_x}x{n_x}", path=f"{where}/Q")
        if R.shape[0] != R.shape[1]:
            raise ScenarioError(f"{where}/R must be square, got {R.shape}", path=f"{where}/R")
        return StageCost(Q, entry["q"], R, dims)
    except DimensionError as exc:
        raise ScenarioError(f"{where}: {exc}", path=where) from None


def _build_entry(entry, library, dims, n_x, where):
    if isinstance(entry, dict) and "basis" in entry:
        basis = tuple(_build_cost(b, library, dims, n_x, f"{where}/basis/{i}")
                      for i, b in enumerate(entry["basis"]))
        try:
            return ParamCostBasis(basis, entry["theta"])
        except DimensionError as exc:
            raise ScenarioError(f"{where}: {exc}", path=where) from None
    return _build_cost(entry, library, dims, n_x, where)


def build_polytope(cons, dims, K):
    """Joint feasible set over K stages from the constraint section."""
    m = sum(dims)
    if "lower" not in cons or "upper" not in cons:
        raise CompactnessError("box bounds (constraints/lower and constraints/upper) are "
                               "required for a compact feasible set")
    lo, hi = [], []
    for key, out in (("lower", lo), ("upper", hi)):
        per = cons[key]
        if len(per) != len(dims) or any(len(v) != k for v, k in zip(per, dims)):
            raise ScenarioError(f"constraints/{key} must give {list(dims)} entries per agent",
                                path=f"constraints/{key}")
        out.extend(np.concatenate([np.array(v, dtype=float) for v in per]))
    lo = np.tile(np.array(lo), K)
    hi = np.tile(np.array(hi), K)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise CompactnessError("box bounds must be finite")
    if np.any(lo > hi):
        raise ScenarioError("box lower bound exceeds upper bound", path="constraints")
    rows, rhs = [], []
    if "stage_coupling" in cons:
        C = _matrix(cons["stage_coupling"]["C"], "constraints/stage_coupling/C")
        d = np.array(cons["stage_coupling"]["d"], dtype=float)
        if C.shape[1] != m or C.shape[0] != d.shape[0]:
            raise ScenarioError(f"stage_coupling must have {m} columns and one d per row",
                                path="constraints/stage_coupling")
        rows.append(np.kron(np.eye(K), C))
        rhs.append(np.tile(d, K))
    if "horizon_coupling" in cons:
        C = _matrix(cons["horizon_coupling"]["C"], "constraints/horizon_coupling/C")
        d = np.array(cons["horizon_coupling"]["d"], dtype=float)
        if C.shape[1] != K * m or C.shape[0] != d.shape[0]:
            raise ScenarioError(f"horizon_coupling must have {K * m} columns",
                                path="constraints/horizon_coupling")
        rows.append(C)
        rhs.append(d)
    H = h = None
    if "equality" in cons:
        H = _matrix(cons["equality"]["H"], "constraints/equality/H")
        h = np.array(cons["equality"]["h"], dtype=float)
        if H.shape[1] != K * m or H.shape[0] != h.shape[0]:
            raise ScenarioError(f"equality rows must have {K * m} columns",
                                path="constraints/equality")
    C = np.vstack(rows) if rows else None
    d = np.concatenate(rhs) if rhs else None
    try:
        return Polytope.from_box(lo, hi, C, d, H, h)
    except ValueError as exc:
        raise CompactnessError(f"feasible set: {exc}") from None


def from_dict(data, source=None):
    """Validate and build a :class:`Scenario` from a parsed document."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(f"schema violation at {_path(e)}: {e.message}", path=_path(e))
    data = _normalize(copy.deepcopy(data))
    A = _matrix(data["dynamics"]["A"], "dynamics/A")
    if A.shape[0] != A.shape[1]:
        raise ScenarioError(f"dynamics/A must be square, got {A.shape}", path="dynamics/A")
    try:
        B_list = [_matrix(B, f"dynamics/B/{i}") for i, B in enumerate(data["dynamics"]["B"])]
        dyn = Dynamics(A, B_list)
    except DimensionError as exc:
        raise ScenarioError(f"dynamics: {exc}", path="dynamics") from None
    dims, n_x, K = dyn.input_dims, dyn.n_x, int(data["horizon"])
    library = data.get("costs", {})
    if len(data["conjectures"]) != dyn.n_agents:
        raise ScenarioError(f"{len(data['conjectures'])} conjectures for {dyn.n_agents} agents",
                            path="conjectures")
    conj = []
    for j, row in enumerate(data["conjectures"]):
        if len(row) != dyn.n_agents:
            raise ScenarioError(f"conjecture {j} lists {len(row)} costs for {dyn.n_agents} agents",
                                path=f"conjectures/{j}")
        costs = tuple(_build_entry(e, library, dims, n_x, f"conjectures/{j}/{i}")
                      for i, e in enumerate(row))
        try:
            conj.append(ConjectureSet(j, costs, K))
        except (ValueError, DimensionError) as exc:
            raise ScenarioError(f"conjectures/{j}: {exc}", path=f"conjectures/{j}") from None
    truth = None
    if "true_costs" in data:
        if len(data["true_costs"]) != dyn.n_agents:
            raise ScenarioError("true_costs must list one cost per agent", path="true_costs")
        truth = tuple(_build_cost(e, library, dims, n_x, f"true_costs/{i}")
                      for i, e in enumerate(data["true_costs"]))
    sim = data.get("simulation", {})
    for i, x in enumerate(sim.get("x0", [])):
        if len(x) != n_x:
            raise ScenarioError(f"simulation/x0/{i} must have length {n_x}",
                                path=f"simulation/x0/{i}")
    sw = data.get("sweep")
    if sw is not None:
        if sw["agent"] >= dyn.n_agents or conj[sw["agent"]].n_params == 0:
            raise ScenarioError("sweep agent must own a parameterized conjecture",
                                path="sweep/agent")
        k = conj[sw["agent"]].n_params
        if len(sw["offset"]) != k or len(sw["direction"]) != k:
            raise ScenarioError(f"sweep offset and direction need {k} entries", path="sweep")
    feas = build_polytope(data["constraints"], dims, K)
    report = validate_assumptions(dyn, conj, feas, truth)
    return Scenario(data, dyn, feas, tuple(conj), truth, report, source)


def load(path):
    """Load and validate a scenario file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})", path="<root>") from None
    return from_dict(data, source=str(path))


def dumps(scenario):
    return json.dumps(scenario.data, indent=1) + "\n"


def dump(scenario, path):
    atomic_write(path, dumps(scenario))


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def shipped(name):
    """Path of a scenario file shipped with the package (``"example1"`` etc.)."""
    return str(resources.files("mpglab") / "scenarios" / f"{name}.json")
