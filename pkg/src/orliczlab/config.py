"""Scenario files: JSON schemas, dotted overrides and object builders.

A scenario is ``{"name", "task", "seed", "out", "params"}`` where
``params`` is validated against the schema of ``task``.  Builders turn the
validated blocks into library objects; any precondition they reject is a
validation error, reported with the dotted location of the offending block.
"""
from __future__ import annotations

import hashlib
import json
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import InputError
from .expr import compile_expr, evaluate_constant
from .graph import (CoercivityParams, PotentialGraph, RadialGraph, Selection, TabulatedGraph,
                    identity_graph, power_potential, sign_jump_graph)
from .mollify import Kernel, MollifyParams
from .nfunc import SpatialDomain, anisotropic_paper, custom, exponential, power, variable_exponent

TASKS = ("nfunc_checks", "conjugate_table", "density_experiment", "graph_checks", "solve",
         "refinement_study")

Number = Union[float, str]


class ConfigError(InputError):
    """Scenario rejected before execution; ``location`` is a dotted path."""

    def __init__(self, message, location=""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# shared blocks


class DomainSpec(_Block):
    """Box ``prod (0, L_i)``; numbers may be constant expressions such as ``"pi"``."""

    lengths: list[Number] = Field(default_factory=lambda: ["pi"], min_length=1, max_length=2)
    star_center: Optional[list[Number]] = None
    star_radius: Optional[Number] = None


class NFSpec(_Block):
    kind: Literal["power", "variable_exponent", "anisotropic_paper", "exponential", "custom"] = "power"
    p: Number = 2.0
    scale: float = 1.0
    p1: Number = 2.0
    p2: Number = 2.0
    beta: float = 1.0
    expr: str = "r^2"


class JumpSpec(_Block):
    s: float
    lo: float
    hi: float


class GraphSpec(_Block):
    kind: Literal["identity", "power_potential", "potential", "radial_with_jumps", "sign_jump",
                  "tabulated"] = "identity"
    q: float = 2.0
    phi: str = "(xi1^2)/2"
    a: str = "s"
    jumps: list[JumpSpec] = Field(default_factory=list)
    base_slope: float = 1.0
    jump: float = 1.0
    pieces: list[list[tuple[float, float]]] = Field(
        default_factory=lambda: [[(-2.0, -2.0), (0.0, 0.0), (2.0, 2.0)]])
    gamma: Optional[Number] = None
    rule: Literal["minimal_norm", "midpoint"] = "minimal_norm"


class CoercivitySpec(_Block):
    c_star: float = 1.0
    k: Number = 0.0


# ---------------------------------------------------------------------------
# task blocks


class NFuncChecksParams(_Block):
    domain: DomainSpec = Field(default_factory=DomainSpec)
    nf: NFSpec = Field(default_factory=NFSpec)
    axioms: bool = True
    delta2: bool = True
    delta2_radii: list[float] = Field(default_factory=lambda: [2.0 ** k for k in range(11)])
    condition_m: bool = False
    H: float = 4.0
    fenchel_young_samples: int = Field(1000, ge=0)
    fenchel_young_tol: float = 1e-6
    expect: dict[str, bool] = Field(default_factory=dict)


class ConjugateTableParams(_Block):
    domain: DomainSpec = Field(default_factory=DomainSpec)
    nf: NFSpec = Field(default_factory=NFSpec)
    x_points: int = Field(3, ge=1)
    b_max: float = Field(4.0, gt=0)
    b_points: int = Field(17, ge=3)
    tol: float = 1e-10


class DensityParams(_Block):
    domain: DomainSpec = Field(default_factory=DomainSpec)
    nx: list[int] = Field(default_factory=lambda: [256])
    nf: NFSpec = Field(default_factory=NFSpec)
    u: str = "sin(x1)"
    taper: bool = True
    lam: float = Field(1.0, gt=0)
    schedule: Optional[list[tuple[float, float]]] = None
    delta_fractions: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])
    ell: float = 1e6
    tol: float = 1e-2


class MollificationSpec(_Block):
    route: Literal["direct", "inverse"] = "direct"
    resolution: int = Field(33, ge=3)


class DiagnosticsSpec(_Block):
    energy: bool = True
    energy_tol: float = 1e-8
    weak_residual: bool = True
    weak_tol: float = 1e-3
    minty: bool = True
    minty_factor: float = 5.0


class GraphChecksParams(_Block):
    domain: DomainSpec = Field(default_factory=DomainSpec)
    nf: NFSpec = Field(default_factory=lambda: NFSpec(scale=0.5))
    graph: GraphSpec = Field(default_factory=GraphSpec)
    coercivity: CoercivitySpec = Field(default_factory=CoercivitySpec)
    radius: float = Field(3.0, gt=0)
    eps: float = Field(0.1, gt=0)
    mollification: MollificationSpec = Field(default_factory=MollificationSpec)
    pairs: int = Field(2000, ge=0)
    monotone_tol: float = 1e-10
    expect: dict[str, bool] = Field(default_factory=dict)


class _ProblemParams(_Block):
    domain: DomainSpec = Field(default_factory=DomainSpec)
    nx: list[int] = Field(default_factory=lambda: [256])
    T: float = Field(1.0, gt=0)
    nf: NFSpec = Field(default_factory=lambda: NFSpec(scale=0.5))
    graph: GraphSpec = Field(default_factory=GraphSpec)
    coercivity: Optional[CoercivitySpec] = Field(default_factory=CoercivitySpec)
    u0: Number = "sin(x1)"
    f: Number = 0.0
    mollification: MollificationSpec = Field(default_factory=MollificationSpec)
    tol: float = 1e-12


class SolveParams(_ProblemParams):
    dt: float = Field(1e-3, gt=0)
    n: int = Field(8, ge=1)
    eps: float = Field(0.1, gt=0)
    max_iter: int = Field(200, ge=1)
    diagnostics: DiagnosticsSpec = Field(default_factory=DiagnosticsSpec)
    snapshot: bool = True


class RefinementParams(_ProblemParams):
    n_list: list[int] = Field(default_factory=lambda: [8], min_length=1)
    eps_list: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05], min_length=1)
    dt_list: list[float] = Field(default_factory=lambda: [1e-3], min_length=1)
    ratio_bound: float = 0.7
    uniform_factor: float = 2.0
    inclusion_factor: Optional[float] = 5.0
    energy_tol: float = 1e-8
    energy_ratio_spread: float = 0.1


TASK_SCHEMAS = {
    "nfunc_checks": NFuncChecksParams,
    "conjugate_table": ConjugateTableParams,
    "density_experiment": DensityParams,
    "graph_checks": GraphChecksParams,
    "solve": SolveParams,
    "refinement_study": RefinementParams,
}


class Scenario(_Block):
    name: str = "scenario"
    task: Literal[TASKS]
    seed: int = 0
    out: Optional[str] = None
    params: dict = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _safe_name(cls, v):
        if not v or any(c in v for c in "/\\"):
            raise ValueError("name must be non-empty and contain no path separators")
        return v


# ---------------------------------------------------------------------------
# parsing


def _loc(parts):
    return ".".join(str(p) for p in parts)


def parse_override(item: str):
    """``"a.b.c=value"`` -> ``(["a", "b", "c"], value)``; values are JSON when they parse."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value", "--set")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".")]
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}", "--set")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply dotted-path overrides to a parsed config (copy); list indices are integers."""
    cfg = json.loads(json.dumps(raw))
    for item in overrides or ():
        parts, value = parse_override(item)
        node = cfg
        for i, key in enumerate(parts[:-1]):
            if isinstance(node, list):
                node = node[_index(node, key, parts[:i + 1])]
                continue
            if not isinstance(node, dict):
                raise ConfigError("cannot descend into a scalar", _loc(parts[:i + 1]))
            node = node.setdefault(key, {})
        last = parts[-1]
        if isinstance(node, list):
            node[_index(node, last, parts)] = value
        elif isinstance(node, dict):
            node[last] = value
        else:
            raise ConfigError("cannot set a key on a scalar", _loc(parts))
    return cfg


def _index(seq, key, parts):
    try:
        i = int(key)
        seq[i]
    except (ValueError, IndexError):
        raise ConfigError(f"invalid list index {key!r}", _loc(parts)) from None
    return i


def _format_validation(exc: ValidationError, prefix=()):
    err = exc.errors()[0]
    return ConfigError(err["msg"], _loc(tuple(prefix) + tuple(err["loc"])))


def load_raw(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", str(path))
    return raw


def validate(raw: dict):
    """Validate a raw config; returns ``(scenario, params_model)``."""
    try:
        sc = Scenario.model_validate(raw)
    except ValidationError as exc:
        raise _format_validation(exc) from None
    try:
        params = TASK_SCHEMAS[sc.task].model_validate(sc.params)
    except ValidationError as exc:
        raise _format_validation(exc, ("params",)) from None
    return sc, params


def effective_config(sc: Scenario, params: BaseModel) -> dict:
    """Fully expanded config (defaults filled in); re-running it is equivalent."""
    out = sc.model_dump(mode="json")
    out["params"] = params.model_dump(mode="json")
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# builders


def _num(v, where):
    try:
        return float(evaluate_constant(v)) if isinstance(v, str) else float(v)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), where) from None


def build_domain(spec: DomainSpec, where="params.domain") -> SpatialDomain:
    lengths = tuple(_num(v, f"{where}.lengths") for v in spec.lengths)
    center = None if spec.star_center is None else tuple(_num(v, f"{where}.star_center") for v in spec.star_center)
    radius = None if spec.star_radius is None else _num(spec.star_radius, f"{where}.star_radius")
    try:
        return SpatialDomain(lengths, center, radius)
    except InputError as exc:
        raise ConfigError(str(exc), where) from None


def _exponent(v, where):
    if isinstance(v, str):
        try:
            expr = compile_expr(v, ("x1", "x2"))
        except ValueError as exc:
            raise ConfigError(str(exc), where) from None
        return float(expr()) if expr.is_constant() else v
    return float(v)


def build_nf(spec: NFSpec, domain: SpatialDomain, where="params.nf"):
    try:
        if spec.kind == "power":
            return power(domain, _num(spec.p, f"{where}.p"), spec.scale)
        if spec.kind == "variable_exponent":
            return variable_exponent(domain, _exponent(spec.p, f"{where}.p"))
        if spec.kind == "anisotropic_paper":
            return anisotropic_paper(domain, _exponent(spec.p1, f"{where}.p1"), _exponent(spec.p2, f"{where}.p2"))
        if spec.kind == "exponential":
            return exponential(domain, spec.beta)
        return custom(domain, spec.expr)
    except ConfigError:
        raise
    except (InputError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None


def _potential_fn(src, dim, where):
    names = ("xi1", "xi2")[:dim]
    try:
        expr = compile_expr(src, names)
    except ValueError as exc:
        raise ConfigError(str(exc), where) from None

    def phi(xi):
        xi = np.asarray(xi, dtype=float)
        out = expr(**{n: xi[..., i] for i, n in enumerate(names)})
        return np.broadcast_to(out, xi.shape[:-1]).astype(float)

    return phi


def build_graph(spec: GraphSpec, dim: int, where="params.graph"):
    gamma = spec.gamma
    try:
        if spec.kind == "identity":
            return identity_graph(dim, gamma)
        if spec.kind == "power_potential":
            return power_potential(dim, spec.q, gamma)
        if spec.kind == "potential":
            return PotentialGraph(dim, _potential_fn(spec.phi, dim, f"{where}.phi"), gamma=gamma, formula=spec.phi)
        if spec.kind == "radial_with_jumps":
            jumps = [(j.s, j.lo, j.hi) for j in spec.jumps]
            return RadialGraph(dim, spec.a, jumps, gamma)
        if spec.kind == "sign_jump":
            return sign_jump_graph(dim, spec.base_slope, spec.jump, gamma)
        if dim != 1:
            raise InputError("tabulated graphs are one-dimensional")
        return TabulatedGraph(spec.pieces, gamma)
    except ConfigError:
        raise
    except (InputError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None


def build_selection(spec: GraphSpec, dim: int, where="params.graph") -> Selection:
    return Selection(build_graph(spec, dim, where), spec.rule)


def build_coercivity(spec: Optional[CoercivitySpec], nf, where="params.coercivity"):
    if spec is None:
        return None
    try:
        return CoercivityParams(spec.c_star, spec.k, nf)
    except (InputError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None


def density_schedule(params: DensityParams, domain: SpatialDomain):
    """Explicit ``(ell, delta)`` pairs; every delta is checked against the star radius."""
    R = domain.star_radius
    if params.schedule is not None:
        sched = [(float(a), float(b)) for a, b in params.schedule]
        where = "params.schedule"
    else:
        sched = [(params.ell, f * R) for f in params.delta_fractions]
        where = "params.delta_fractions"
    if not sched:
        raise ConfigError("schedule is empty", where)
    for i, (ell, dl) in enumerate(sched):
        if not ell > 0:
            raise ConfigError("truncation level ell must be positive", f"{where}.{i}")
        try:
            MollifyParams(dl, R)
        except InputError as exc:
            raise ConfigError(f"precondition delta < R violated: {exc}", f"{where}.{i}") from None
    return sched


# ---------------------------------------------------------------------------
# catalog


def list_builtins() -> dict:
    """Kinds, formulas and documented defaults for everything a scenario can name."""
    nf_defaults = NFSpec().model_dump()
    g_defaults = GraphSpec().model_dump()
    return {
        "n_functions": {
            "power": {"formula": "scale*|a|^p", "params": {"p": nf_defaults["p"], "scale": 1.0},
                      "doc": "p > 1, scale > 0"},
            "variable_exponent": {"formula": "|a|^p(x)", "params": {"p": "2 + x1/2"},
                                  "doc": "p is a constant or an expression in x1, x2 with min p > 1"},
            "anisotropic_paper": {"formula": "|a1|^p1(x)*ln(|a|+1) + exp(|a2|^p2(x)) - 1",
                                  "params": {"p1": 2.0, "p2": 2.0}, "dim": 2,
                                  "doc": "two-dimensional; p1, p2 constants or expressions in x1, x2"},
            "exponential": {"formula": "exp(beta|a|) - beta|a| - 1", "params": {"beta": 1.0},
                            "doc": "beta > 0; fails the doubling condition"},
            "custom": {"formula": "expr(a1, a2, r, x1, x2)", "params": {"expr": nf_defaults["expr"]},
                       "doc": "r = |a|; the axiom checks decide whether it is an N-function"},
        },
        "graphs": {
            "identity": {"formula": "A = xi", "params": {}},
            "power_potential": {"formula": "A = |xi|^(q-2) xi", "params": {"q": 3.0}},
            "potential": {"formula": "A = grad phi(xi)", "params": {"phi": g_defaults["phi"]},
                          "doc": "phi is a convex expression in xi1, xi2; gradient by central differences"},
            "radial_with_jumps": {
                "formula": "A = a(|xi|) xi/|xi|, A in ball(0, a(0)) at 0, segments at jumps",
                "params": {"a": "s + step(s - 1)", "jumps": [{"s": 1.0, "lo": 1.0, "hi": 2.0}]},
                "jump_table": {"s": "jump location, s > 0", "lo": "radial value from below",
                               "hi": "radial value from above, lo <= hi"},
                "doc": "a is a nonnegative nondecreasing expression in s; each jump needs a(s-) <= lo <= hi <= a(s+)",
            },
            "sign_jump": {"formula": "A = base_slope*xi + jump*xi/|xi|",
                          "params": {"base_slope": 1.0, "jump": 1.0}},
            "tabulated": {"formula": "polylines through (xi, A) points", "params": {"pieces": g_defaults["pieces"]},
                          "dim": 1, "doc": "points nondecreasing in both coordinates; equal xi gives a vertical segment"},
            "common": {"gamma": "positive constant or expression in t, x1, x2 scaling A",
                       "rule": ["minimal_norm", "midpoint"]},
        },
        "kernel": {"profile": "C exp(-1/(1-|y|^2)) on |y| < 1", "normalization": "unit mass (discrete)",
                   "dims": [1, 2]},
        "basis": {"kind": "sine", "functions": "prod_i sqrt(2/L_i) sin(k_i pi x_i / L_i)",
                  "order": "increasing Dirichlet eigenvalue"},
        "tasks": {name: model.model_json_schema() for name, model in TASK_SCHEMAS.items()},
    }


def build_catalog_defaults():
    """Construct every catalog kind with its documented defaults (smoke check)."""
    cat = list_builtins()
    built = {}
    for kind, entry in cat["n_functions"].items():
        dim = entry.get("dim", 1)
        dom = SpatialDomain((1.0,) * dim)
        built[f"nf:{kind}"] = build_nf(NFSpec(kind=kind, **entry["params"]), dom)
    for kind, entry in cat["graphs"].items():
        if kind == "common":
            continue
        built[f"graph:{kind}"] = build_graph(GraphSpec(kind=kind, **entry["params"]), entry.get("dim", 1))
    for d in cat["kernel"]["dims"]:
        built[f"kernel:{d}"] = Kernel(d)
    return built
