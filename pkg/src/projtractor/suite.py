"""
Verification checks run by the command line and by the acceptance tests.

Each check returns :class:`CheckRecord` objects.  Records are plain data; a
report is their JSON lines in order, which is byte-identical for a fixed seed
(no timing information is recorded).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .catalog import BASE_GEOMETRIES, CATALOG
from .config import GeometryConfig, load_config, with_upsilon
from .errors import DomainExitError, ProjTractorError
from .identities import IDENTITIES, verify_identities
from .killing import (
    KillingCandidate,
    candidate_jet,
    flat_case_check,
    integrability_obstruction,
    killing_operator,
    random_symmetric_jet,
    rank1_classical_derivative,
    rank1_prolongation_derivative,
    rank1_state,
    rank2_d_form_rhs,
    rank2_prolongation_derivative,
    recover_k,
    recovery_constant,
    splitting_L,
)
from .jets import n_monomials
from .tensors import COT, COTR, ChartTensor, JetField, young_project_rr
from .tractor import tractor_frame
from .transport import (
    first_integral_drift,
    flat_polynomial_oracle,
    integrate_geodesic,
    rk4_convergence_ratios,
    solution_space_dimension,
)

# expected solution dimensions: flat counts from the polynomial oracle, the
# projectively flat 2-dimensional models share the flat counts
EXPECTED_DIMENSIONS = {
    ("flat2", 1): 3,
    ("flat2", 2): 6,
    ("flat2", 3): 10,
    ("flat3", 1): 6,
    ("flat3", 2): 20,
    ("sphere2", 1): 3,
    ("sphere2", 2): 6,
    ("hyperbolic2", 1): 3,
    ("hyperbolic2", 2): 6,
    ("perturbed2", 1): 0,
}
DIMENSION_CASES = (
    ("flat2", 1),
    ("flat2", 2),
    ("flat2", 3),
    ("flat3", 1),
    ("flat3", 2),
    ("sphere2", 1),
    ("perturbed2", 1),
)


@dataclass
class Options:
    """Run options shared by all checks (the command-line flags)."""

    points: int = 20
    loops: int = 8
    steps: int = 200
    seed: int = 0
    jet_order: int = 6
    tol_scale: float = 1.0


@dataclass
class CheckRecord:
    """One verification outcome.

    ``relation`` is how ``value`` was compared with ``bound``: ``"<"``,
    ``">"``, ``"=="`` or ``"in"`` (closed interval).
    """

    check: str
    anchor: str
    geometry: str
    rank: int | None
    value: float | int | None
    relation: str
    bound: object
    passed: bool
    seed: int | None = None
    error: str | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(_jsonable(d), sort_keys=True, allow_nan=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _compare(value, relation: str, bound) -> bool:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return False
    if relation == "<":
        return value < bound
    if relation == ">":
        return value > bound
    if relation == "==":
        return value == bound
    if relation == "in":
        return bound[0] <= value <= bound[1]
    raise ValueError(f"unknown relation {relation!r}")


def _record(check, anchor, geo, rank, value, relation, bound, seed=None, **details) -> CheckRecord:
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    return CheckRecord(check, anchor, geo, rank, value, relation, bound, _compare(value, relation, bound), seed, None, details)


def _failed(check, anchor, geo, rank, relation, bound, seed, exc: Exception) -> CheckRecord:
    return CheckRecord(check, anchor, geo, rank, None, relation, bound, False, seed, f"{type(exc).__name__}: {exc}")


def resolve(geo) -> GeometryConfig:
    """A :class:`GeometryConfig`, a catalog name or the path of a TOML file."""
    if isinstance(geo, GeometryConfig):
        return geo
    return load_config(geo)


def changed_variant(cfg: GeometryConfig) -> GeometryConfig:
    """The catalog's projectively changed twin, or a change by ``x dy`` for other geometries."""
    twin = CATALOG.get(f"{cfg.name}-changed")
    if twin is not None and CATALOG.get(cfg.name) == cfg:
        return twin
    return with_upsilon(cfg, ["0", cfg.names[0]] + ["0"] * (cfg.n - 2))


def _points(cfg: GeometryConfig, count: int, rng, shrink: float = 0.75) -> np.ndarray:
    lo, hi = np.asarray(cfg.box[0]), np.asarray(cfg.box[1])
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    return rng.uniform(mid - shrink * half, mid + shrink * half, size=(count, cfg.n))


def _max(a) -> float:
    return float(np.max(np.abs(a), initial=0.0))


def _rel(a, b) -> float:
    return _max(np.asarray(a) - np.asarray(b)) / max(1.0, _max(a), _max(b))


# ---------------------------------------------------------------------------
# identities and projective invariance
# ---------------------------------------------------------------------------


def check_identities(opts: Options, geometries: Sequence[str]) -> list[CheckRecord]:
    """Structural tractor identities at random points of each geometry."""
    out = []
    tol = 1e-10 * opts.tol_scale
    for geo in geometries:
        cfg = resolve(geo)
        name = cfg.name
        rng = np.random.default_rng(opts.seed)
        pts = _points(cfg, opts.points, rng)
        try:
            res = verify_identities(cfg.structure(), pts, order=opts.jet_order, seed=opts.seed, tolerance=tol)
        except ProjTractorError as exc:
            out += [_failed(f"identity.{k}", IDENTITIES[k][0], name, None, "<", tol, opts.seed, exc) for k in IDENTITIES]
            continue
        for r in res:
            out.append(_record(f"identity.{r.name}", r.anchor, name, None, r.residual, "<", tol, opts.seed))
    return out


def check_projective_invariance(opts: Options, geometries: Sequence[str], ranks=(1, 2), fields: int = 20) -> list[CheckRecord]:
    """The Killing operator on random weighted fields agrees for a geometry and its changed variant."""
    out = []
    tol = 1e-12 * opts.tol_scale
    for geo in geometries:
        base = resolve(geo)
        name = base.name
        changed = changed_variant(base)
        for r in ranks:
            rng = np.random.default_rng(opts.seed)
            pts = _points(base, opts.points, rng)
            k = random_symmetric_jet(base.n, r, (fields, opts.points), 3, rng)
            try:
                vals = [
                    killing_operator(cfg.structure().gamma_jet(pts, 3), k).data[..., 0]
                    for cfg in (base, changed)
                ]
                diff = _max(vals[0] - vals[1])
                out.append(
                    _record("projective_invariance.killing_operator", "killing-operator/projective-invariance",
                            name, r, diff, "<", tol, opts.seed, size=_max(vals[0]), fields=fields)
                )
            except ProjTractorError as exc:
                out.append(_failed("projective_invariance.killing_operator", "killing-operator/projective-invariance",
                                   name, r, "<", tol, opts.seed, exc))
    return out


# ---------------------------------------------------------------------------
# flat case and recovery
# ---------------------------------------------------------------------------

_CONTROLS = {1: ["x", "0"], 2: [["x", "0"], ["0", "0"]], 3: [[["x", "0"], ["0", "0"]], [["0", "0"], ["0", "0"]]]}


def check_flat_case(opts: Options, ranks=(1, 2, 3)) -> list[CheckRecord]:
    """Oracle Killing tensors of flat R^2: ``D^r K`` in the Young class and ``P(D^r K)`` parallel."""
    cfg = resolve("flat2")
    structure = cfg.structure()
    rng = np.random.default_rng(opts.seed)
    pts = _points(cfg, opts.points, rng)
    frame = tractor_frame(structure, pts, opts.jet_order)
    tol = 1e-10 * opts.tol_scale
    out = []
    for r in ranks:
        basis = flat_polynomial_oracle(2, r)
        young = par = 0.0
        for s in range(basis.dimension):
            k = candidate_jet(structure, basis.candidate(s), pts, opts.jet_order)
            fc = flat_case_check(frame, k)
            young, par = max(young, fc.young_residual), max(par, fc.parallel_residual)
        out.append(_record("flat.young_residual", "flat-model/young-class", "flat2", r, young, "<", tol, opts.seed,
                           basis_dimension=basis.dimension))
        out.append(_record("flat.parallel_residual", "flat-model/parallel", "flat2", r, par, "<", tol, opts.seed))
        ctrl = candidate_jet(structure, KillingCandidate(r, _CONTROLS[r], label="control"), pts, opts.jet_order)
        fc = flat_case_check(frame, ctrl)
        out.append(_record("flat.control_young_residual", "flat-model/young-class-control", "flat2", r,
                           fc.young_residual, ">", 1e-3, opts.seed))
    return out


def check_recovery(opts: Options) -> list[CheckRecord]:
    """Round trips through the splitting operator and the measured recovery constants."""
    out = []
    rng = np.random.default_rng(opts.seed)
    flat = resolve("flat2")
    pts = _points(flat, opts.points, rng)
    frame = tractor_frame(flat.structure(), pts, opts.jet_order)
    basis = flat_polynomial_oracle(2, 1)
    coef = rng.normal(size=basis.dimension)
    comps = np.einsum("s,s...->...", coef, basis.coefficients)
    combo = type(basis)(basis.n, basis.r, basis.components, basis.monomials, comps[None])
    k = candidate_jet(flat.structure(), combo.candidate(0), pts, opts.jet_order)
    back = recover_k(splitting_L(frame, k).value().data, 1)
    out.append(_record("recovery.rank1_round_trip", "splitting/recover-rank1", "flat2", 1,
                       _rel(back, k.data[..., 0]), "<", 1e-12 * opts.tol_scale, opts.seed))

    liou = resolve("liouville")
    pts = _points(liou, opts.points, rng)
    frame = tractor_frame(liou.structure(), pts, opts.jet_order)
    k = random_symmetric_jet(2, 2, (opts.points,), opts.jet_order, rng)
    xxl = recover_k(splitting_L(frame, k).value().data, 2, constant=1.0)
    out.append(_record("recovery.rank2_factor", "splitting/recover-rank2", "liouville", 2,
                       _rel(xxl, 1.5 * k.data[..., 0]), "<", 1e-11 * opts.tol_scale, opts.seed))

    for n, name in ((2, "flat2"), (3, "flat3")):
        cfg = resolve(name)
        for r in (1, 2, 3):
            sub = np.random.default_rng(opts.seed)
            f = tractor_frame(cfg.structure(), _points(cfg, 4, sub), r + 1)
            c = recovery_constant(f, r, sub)
            out.append(_record("recovery.constant_nonzero", "splitting/recovery-constant", name, r,
                               abs(c), ">", 1e-6, opts.seed, constant=c))
    return out


# ---------------------------------------------------------------------------
# curved prolongation
# ---------------------------------------------------------------------------


def check_prolongation(opts: Options, geo="liouville", rank: int = 2, controls: int = 30) -> list[CheckRecord]:
    """Parallelism of ``L(k)`` for the configured Killing tensors, and algebraic controls."""
    cfg = resolve(geo)
    name = cfg.name
    structure = cfg.structure()
    rng = np.random.default_rng(opts.seed)
    pts = _points(cfg, opts.points, rng)
    frame = tractor_frame(structure, pts, opts.jet_order)
    tol = 1e-8 * opts.tol_scale
    out = []
    cands = cfg.candidates(rank)
    if rank not in (1, 2):
        return [_failed("prolongation.residual", "prolongation/parallel", name, rank, "<", tol, opts.seed,
                        ValueError("explicit prolongation connections exist for ranks 1 and 2"))]
    for cand in cands:
        label = cand.label or "candidate"
        try:
            k = candidate_jet(structure, cand, pts, opts.jet_order)
            L = splitting_L(frame, k)
            if rank == 1:
                res = rank1_prolongation_derivative(frame, L).data
            else:
                res = rank2_prolongation_derivative(frame, L).data
            out.append(_record("prolongation.residual", "prolongation/parallel", name, rank, _max(res), "<", tol,
                               opts.seed, candidate=label))
            obs = integrability_obstruction(frame, L.value().data, rank)
            out.append(_record("prolongation.obstruction", "prolongation/integrability", name, rank, _max(obs), "<",
                               1e-7 * opts.tol_scale, opts.seed, candidate=label))
        except ProjTractorError as exc:
            out.append(_failed("prolongation.residual", "prolongation/parallel", name, rank, "<", tol, opts.seed, exc))
    # a random weighted field is not Killing: its splitting is far from parallel
    k = random_symmetric_jet(cfg.n, rank, (opts.points,), opts.jet_order, rng)
    L = splitting_L(frame, k)
    nab_size = _max(L.gradient().data[..., 0]) if rank else 1.0
    res = rank1_prolongation_derivative(frame, L).data if rank == 1 else rank2_prolongation_derivative(frame, L).data
    out.append(_record("prolongation.non_solution", "prolongation/non-solution", name, rank,
                       _max(res) / max(1.0, nab_size), ">", 1e-3, opts.seed))
    if rank == 2:
        sub = np.random.default_rng(opts.seed + 1)
        cpts = _points(cfg, controls, sub)
        cframe = tractor_frame(structure, cpts, 4)
        n1 = cfg.n + 1
        lr = young_project_rr(ChartTensor(cfg.n, (COTR,) * 4, 0.0, sub.normal(size=(controls,) + (n1,) * 4)), 2).data
        d_rhs = rank2_d_form_rhs(cframe, lr)
        out.append(_record("prolongation.x_contraction", "prolongation/d-form-x-contraction", name, 2,
                           _max(d_rhs[:, 0]) / max(1.0, _max(d_rhs)), "<", 1e-10 * opts.tol_scale, opts.seed + 1,
                           states=controls))
    return out


def check_rank1_agreement(opts: Options, geo="sphere2") -> list[CheckRecord]:
    """Tractor form of the rank-1 prolongation against its classical two-component form."""
    cfg = resolve(geo)
    name = cfg.name
    rng = np.random.default_rng(opts.seed)
    pts = _points(cfg, opts.points, rng)
    frame = tractor_frame(cfg.structure(), pts, opts.jet_order)
    n, order = cfg.n, 3
    m = n_monomials(n, order)
    k = JetField(n, (COT,), 2.0, rng.normal(size=(opts.points, n, m)), order=order)
    mu = JetField(n, (COT, COT), 2.0, rng.normal(size=(opts.points, n, n, m)), order=order).antisymmetrize([0, 1])
    got = rank1_prolongation_derivative(frame, rank1_state(k, mu, frame.scale_tag)).data
    first, second = rank1_classical_derivative(frame, k, mu)
    dev = max(_rel(got[..., 0, 1:], first), _rel(got[..., 1:, 0], -first), _rel(got[..., 1:, 1:], second),
              _max(got[..., 0, 0]))
    return [_record("rank1.classical_agreement", "rank1/classical-form", name, 1, dev, "<", 1e-10 * opts.tol_scale,
                    opts.seed)]


# ---------------------------------------------------------------------------
# dimensions and geodesics
# ---------------------------------------------------------------------------


def _base_name(name: str) -> str:
    return name[: -len("-changed")] if name.endswith("-changed") else name


def check_dimension(opts: Options, geo, rank: int) -> list[CheckRecord]:
    """Solution-space dimension from holonomy (cross-checked by the obstruction rank)."""
    cfg = resolve(geo)
    name = cfg.name
    known = CATALOG.get(name) == cfg
    expected = EXPECTED_DIMENSIONS.get((_base_name(name), rank)) if known else None
    try:
        res = solution_space_dimension(cfg.structure(), rank, base_point=np.mean(cfg.box, axis=0),
                                       num_loops=opts.loops, steps=opts.steps, seed=opts.seed)
    except ProjTractorError as exc:
        rel, bound = ("==", expected) if expected is not None else (">", -1)
        return [_failed("dimension.holonomy", "holonomy/solution-dimension", name, rank, rel, bound, opts.seed, exc)]
    details = dict(
        holonomy_dimension=res.holonomy_dimension,
        obstruction_dimension=res.obstruction_dimension,
        fiber_dimension=res.fiber_dimension,
        indeterminate=res.indeterminate,
        threshold=res.holonomy_rank.threshold,
        integration_error=res.integration_error,
        warnings=list(res.warnings),
    )
    if expected is not None:
        rec = _record("dimension.holonomy", "holonomy/solution-dimension", name, rank, res.dimension, "==", expected,
                      opts.seed, **details)
    else:
        # no independent count: require at least the known independent candidates
        known = len(cfg.candidates(rank))
        rec = _record("dimension.holonomy", "holonomy/solution-dimension", name, rank, res.dimension, ">", known - 1,
                      opts.seed, **details)
    return [rec]


def random_geodesic_data(cfg: GeometryConfig, count: int, T: float, rng, reach: float = 0.5):
    """Initial points near the box centre and velocities covering ``reach`` of the half-width over time ``T``."""
    lo, hi = np.asarray(cfg.box[0]), np.asarray(cfg.box[1])
    mid, half = (lo + hi) / 2, np.min(hi - lo) / 2
    x0 = rng.uniform(mid - 0.25 * half, mid + 0.25 * half, size=(count, cfg.n))
    d = rng.normal(size=(count, cfg.n))
    u0 = d / np.linalg.norm(d, axis=1, keepdims=True) * (reach * half / T)
    return x0, u0


def check_geodesics(opts: Options, geo="liouville", count: int = 10, T: float = 2.0, steps: int = 400) -> list[CheckRecord]:
    """Conservation of ``k(u, .., u)`` along geodesics and the RK4 convergence order."""
    cfg = resolve(geo)
    name = cfg.name
    structure = cfg.structure()
    rng = np.random.default_rng(opts.seed)
    x0, u0 = random_geodesic_data(cfg, count, T, rng)
    out = []
    try:
        sample = integrate_geodesic(structure, x0, u0, T, steps)
    except DomainExitError as exc:
        return [_failed("geodesic.first_integral_drift", "geodesic/first-integral", name, None, "<", 1e-8, opts.seed, exc)]
    for cand in cfg.killing:
        rep = first_integral_drift(structure, cand, sample)
        out.append(_record("geodesic.first_integral_drift", "geodesic/first-integral", name, cand.rank, rep.max_drift,
                           "<", 1e-8 * opts.tol_scale, opts.seed, candidate=cand.label, geodesics=count, steps=steps))
    try:
        # coarse base step so that the differences stay well above rounding
        ratios = rk4_convergence_ratios(structure, x0[:1], u0[:1], T, 10, refinements=3)
    except DomainExitError as exc:
        out.append(_failed("geodesic.rk4_ratio", "geodesic/rk4-order", name, None, "in", [12.0, 20.0], opts.seed, exc))
        return out
    out.append(_record("geodesic.rk4_ratio", "geodesic/rk4-order", name, None, float(np.min(ratios)), "in", [12.0, 20.0],
                       opts.seed, ratios=[float(r) for r in ratios]))
    out[-1].passed = bool(np.all((ratios >= 12.0) & (ratios <= 20.0)))
    return out


def check_dimension_suite(opts: Options, cases=DIMENSION_CASES) -> list[CheckRecord]:
    out = []
    for name, r in cases:
        out += check_dimension(opts, name, r)
    return out


def full_suite(opts: Options) -> list[CheckRecord]:
    """Every check at the given options, in a fixed order."""
    out = check_identities(opts, list(CATALOG))
    out += check_projective_invariance(opts, BASE_GEOMETRIES)
    out += check_flat_case(opts)
    out += check_recovery(opts)
    out += check_dimension_suite(opts)
    out += check_prolongation(opts, "liouville", 2)
    out += check_rank1_agreement(opts, "sphere2")
    out += check_geodesics(opts, "liouville")
    return out
