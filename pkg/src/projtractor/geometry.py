"""
Affine and projective structures on a single chart.

Connection coefficients are stored as ``G[a, b, c] = Gamma_{ab}^c`` so that
``nabla_a v^c = d_a v^c + Gamma_{ad}^c v^d``.  A density of weight ``w`` is a
single component in the chart, with
``nabla_a s = d_a s + (w / (n + 1)) Gamma_{ac}^c s``; this makes the metric
volume density parallel for a Levi-Civita connection.

All per-point quantities are computed as :class:`~projtractor.tensors.JetField`
objects over a batch of base points, so further derivatives are exact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import jets
from .errors import KindError, OrderError, ShapeError, SingularityError
from .expr import Expr, default_names, parse
from .jets import DEFAULT_ORDER, Jet
from .tensors import COT, COTR, TAN, TR, ChartTensor, JetField, jeinsum, tensor_product

ComponentSource = "str | Expr | float | Callable"


def _points(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    return p[None] if p.ndim == 0 else p


def _component_jet(source, coords: list[Jet], names, order: int) -> Jet | float:
    if isinstance(source, str):
        source = parse(source, names)
    if isinstance(source, Expr) or callable(source):
        return source(*coords)
    return float(source)


def evaluate_components(specs, points, order: int, names: Sequence[str], shape: tuple[int, ...]) -> np.ndarray:
    """Jet coefficient array ``(*batch, *shape, M)`` for nested component specs.

    ``specs`` is either a nested sequence of component specs of the given
    shape or a single callable taking the coordinate jets and returning such a
    nested sequence.
    """
    p = _points(points)
    n = p.shape[-1]
    coords = jets.coordinate_jets(p, order)
    m = jets.n_monomials(n, order)
    batch = p.shape[:-1]
    if callable(specs) and not isinstance(specs, Expr):
        specs = specs(*coords)
    arr = np.asarray(specs, dtype=object)
    if arr.shape != shape:
        raise ShapeError(f"expected component array of shape {shape}, got {arr.shape}")
    out = np.zeros(batch + shape + (m,))
    with np.errstate(all="ignore"):
        for idx in np.ndindex(*shape):
            source = arr[idx]
            val = _component_jet(source, coords, names, order) if not isinstance(source, Jet) else source
            if isinstance(val, Jet):
                jets.check_finite(val)
                out[(Ellipsis,) + idx + (slice(None),)] = np.broadcast_to(val.coeffs[..., :m], batch + (m,))
            else:
                out[(Ellipsis,) + idx + (0,)] = val
    return out


def jet_matrix_inverse(g: JetField) -> JetField:
    """Inverse of a field of square matrices (two slots of dual-compatible kind).

    Uses the Neumann series about the value, exact to the jet order.
    """
    if g.rank != 2:
        raise ShapeError("matrix inverse needs a two-slot field")
    g0 = g.data[..., 0]
    try:
        inv0 = np.linalg.inv(g0)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("singular matrix field") from exc
    if not np.all(np.isfinite(inv0)) or np.any(np.abs(np.linalg.det(g0)) < 1e-300):
        raise SingularityError("singular matrix field")
    up = tuple(k.dual for k in g.slots)
    inv0_t = ChartTensor(g.n, up, -g.weight, inv0, g.scale_tag)
    h = g.data.copy()
    h[..., 0] = 0.0
    hj = JetField(g.n, g.slots, g.weight, h, g.scale_tag, order=g.order)
    # step = -inv0 . H  maps up[1]-indexed vectors to up[0]-indexed ones
    step = jeinsum("ab,bc->ac", inv0_t, hj) * -1.0
    total = inv0_t.to_jet(g.order)
    term = total
    for _ in range(g.order):
        term = jeinsum("ab,bc->ac", step, term)
        total = total + term.with_weight(total.weight)
    return total


def levi_civita_from_jet(g: JetField) -> JetField:
    """``Gamma_{ab}^c = 1/2 g^{cd}(d_a g_bd + d_b g_ad - d_d g_ab)``, one order lower."""
    if g.order < 1:
        raise OrderError("metric jets of order >= 1 are needed")
    dg = g.gradient()  # dg[e, a, b] = d_e g_ab
    t = dg + dg.swap(0, 1) - dg.permute([1, 2, 0])
    ginv = jet_matrix_inverse(g.truncate(g.order - 1))
    gamma = jeinsum("abd,cd->abc", t, ginv) * 0.5
    return gamma.with_weight(0.0)


def levi_civita(metric, x, order: int = 0, names: Sequence[str] | None = None) -> JetField:
    """Levi-Civita coefficients of ``metric`` at ``x`` as jets of ``order``.

    ``metric`` is an ``n x n`` nested sequence of component specs or a
    :class:`JetField` already evaluated at the points (of order >= 1).
    """
    if isinstance(metric, JetField):
        return levi_civita_from_jet(metric)
    p = _points(x)
    n = p.shape[-1]
    names = list(names) if names is not None else default_names(n)
    data = evaluate_components(metric, p, order + 1, names, (n, n))
    g = JetField(n, (COT, COT), 0.0, data, order=order + 1)
    if np.max(np.abs(g.data[..., 0] - np.swapaxes(g.data[..., 0], -1, -2)), initial=0.0) > 1e-12:
        raise ShapeError("metric is not symmetric")
    return levi_civita_from_jet(g)


@dataclass(frozen=True)
class AffineStructure:
    """A torsion-free connection on a chart of dimension ``n``.

    Exactly one of ``metric`` (then the connection is Levi-Civita) or
    ``gamma`` must be given.  ``upsilons`` records projective changes applied
    on top, in order.
    """

    n: int
    gamma: object = None
    metric: object = None
    name: str = "custom"
    names: tuple[str, ...] = ()
    upsilons: tuple = ()
    box: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    order: int = DEFAULT_ORDER
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if (self.gamma is None) == (self.metric is None):
            raise ShapeError("give exactly one of gamma or metric")
        if not self.names:
            object.__setattr__(self, "names", tuple(default_names(self.n)))
        if len(self.names) != self.n:
            raise ShapeError("number of coordinate names differs from n")

    # identity -----------------------------------------------------------
    @property
    def is_levi_civita(self) -> bool:
        return self.metric is not None and not self.upsilons

    @property
    def scale_tag(self) -> str:
        if not self.upsilons:
            return self.name
        digest = hashlib.sha1(repr([_source_key(u) for u in self.upsilons]).encode()).hexdigest()[:8]
        return f"{self.name}+change:{digest}"

    # jets ---------------------------------------------------------------
    def _cached(self, key, compute):
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = compute()
        return self._cache[key]

    def metric_jet(self, x, order: int) -> JetField:
        if self.metric is None:
            raise ShapeError(f"structure {self.name!r} has no metric")
        p = _points(x)
        key = ("metric", p.shape, p.tobytes(), order)

        def compute():
            data = evaluate_components(self.metric, p, order, self.names, (self.n, self.n))
            g = JetField(self.n, (COT, COT), 0.0, data, order=order)
            if np.max(np.abs(g.data - np.swapaxes(g.data, -2, -3)), initial=0.0) > 1e-12:
                raise ShapeError("metric is not symmetric")
            return g

        return self._cached(key, compute)

    def upsilon_jet(self, x, order: int) -> JetField:
        p = _points(x)
        total = np.zeros(p.shape[:-1] + (self.n, jets.n_monomials(self.n, order)))
        for ups in self.upsilons:
            total += evaluate_components(ups, p, order, self.names, (self.n,))
        return JetField(self.n, (COT,), 0.0, total, order=order)

    def gamma_jet(self, x, order: int | None = None) -> JetField:
        """Jets of ``Gamma_{ab}^c`` at the points ``x`` (shape ``(..., n)``)."""
        order = self.order if order is None else order
        p = _points(x)
        if p.shape[-1] != self.n:
            raise ShapeError(f"points have {p.shape[-1]} coordinates, chart has {self.n}")
        key = ("gamma", p.shape, p.tobytes(), order)
        return self._cached(key, lambda: self._gamma_uncached(p, order))

    def gamma_values(self, x) -> np.ndarray:
        """``Gamma_{ab}^c`` values at ``x`` (shape ``(..., n, n, n)``), bypassing the jet cache."""
        p = _points(x)
        if p.shape[-1] != self.n:
            raise ShapeError(f"points have {p.shape[-1]} coordinates, chart has {self.n}")
        return self._gamma_uncached(p, 0, cache=False).data[..., 0]

    def _gamma_uncached(self, p: np.ndarray, order: int, cache: bool = True) -> JetField:
        if self.metric is not None:
            if cache:
                gm = self.metric_jet(p, order + 1)
            else:
                data = evaluate_components(self.metric, p, order + 1, self.names, (self.n, self.n))
                gm = JetField(self.n, (COT, COT), 0.0, data, order=order + 1)
            g = levi_civita_from_jet(gm)
        else:
            data = evaluate_components(self.gamma, p, order, self.names, (self.n,) * 3)
            g = JetField(self.n, (COT, COT, TAN), 0.0, data, order=order)
            asym = np.max(np.abs(g.data - np.swapaxes(g.data, -3, -4)), initial=0.0)
            if asym > 1e-12:
                raise ShapeError(f"connection has torsion (asymmetry {asym:.3g})")
        if self.upsilons:
            g = g + change_tensor(self.upsilon_jet(p, order))
        return g.with_scale(self.scale_tag)


def _source_key(source):
    if isinstance(source, (list, tuple)):
        return tuple(_source_key(s) for s in source)
    if isinstance(source, Expr):
        return str(source)
    if callable(source):
        return getattr(source, "__qualname__", repr(source))
    return str(source)


def change_tensor(upsilon: JetField) -> JetField:
    """``Upsilon_a delta_c^b + Upsilon_c delta_a^b`` as ``[a, c, b]``."""
    n = upsilon.n
    eye = ChartTensor(n, (COT, TAN), 0.0, np.eye(n))
    t = tensor_product(upsilon, eye)  # [a, c, b] = Upsilon_a delta_c^b
    return t + t.swap(0, 1)


def projective_change(a: AffineStructure, upsilon: Sequence) -> AffineStructure:
    """Projectively equivalent structure ``Gamma + Upsilon_a delta + Upsilon_c delta``.

    ``upsilon`` lists the ``n`` components of the one-form as component specs.
    """
    if len(upsilon) != a.n:
        raise ShapeError(f"one-form needs {a.n} components")
    return AffineStructure(
        n=a.n,
        gamma=a.gamma,
        metric=a.metric,
        name=a.name,
        names=a.names,
        upsilons=a.upsilons + (tuple(upsilon),),
        box=a.box,
        order=a.order,
    )


# ---------------------------------------------------------------------------
# covariant derivatives
# ---------------------------------------------------------------------------


def effective_weight(t: JetField) -> float:
    """Density weight carried by each component of ``t``.

    A cotractor slot adds ``1`` and a tractor slot subtracts ``1`` (their
    components are weight-1 and weight-(-1) objects).
    """
    return t.weight + sum(1 for k in t.slots if k is COTR) - sum(1 for k in t.slots if k is TR)


def slot_action(mat: JetField, t: JetField, slot: int) -> JetField:
    """``out[a, ..., y, ...] = sum_x mat[a, x, y] t[..., x, ...]`` with ``y`` at ``slot``.

    The new direction slot ``a`` is prepended.
    """
    letters = "bcdefghijklmnopq"[: t.rank]
    t_sub = letters[:slot] + "x" + letters[slot + 1 :]
    out = "a" + letters[:slot] + "y" + letters[slot + 1 :]
    res = jeinsum(f"axy,{t_sub}->{out}", mat, t)
    return res.with_weight(t.weight)


def covariant_derivative(
    t: JetField, gamma: JetField, tractor_matrix: JetField | None = None
) -> JetField:
    """``nabla_a t`` with the new cotangent slot first.

    ``tractor_matrix`` holds ``A[a, B, C] = A_{aB}^C`` for the cotractor
    connection ``nabla_a s_B = d_a s_B - A_{aB}^C s_C``; it is required when
    ``t`` has tractor-type slots.
    """
    out = t.gradient()
    mats = {}
    if any(k in (TAN, COT) for k in t.slots):
        mats[TAN] = gamma
        mats[COT] = gamma.permute([0, 2, 1]) * -1.0
    if any(k.is_tractor_type for k in t.slots):
        if tractor_matrix is None:
            raise KindError("tractor slots need the tractor connection")
        mats[TR] = tractor_matrix
        mats[COTR] = tractor_matrix.permute([0, 2, 1]) * -1.0
    for i, kind in enumerate(t.slots):
        out = out + slot_action(mats[kind], t, i).with_scale(out.scale_tag)
    w = effective_weight(t)
    if w != 0.0:
        trace = gamma.contract(1, 2)
        out = out + (tensor_product(trace, t) * (w / (t.n + 1))).with_weight(t.weight)
    return out


def covd(a: AffineStructure, t: JetField, x) -> JetField:
    """Covariant derivative of a weighted tangent/cotangent field at ``x``."""
    if any(k.is_tractor_type for k in t.slots):
        raise KindError("covd acts on tangent and cotangent slots only; use tractor_covd")
    gamma = a.gamma_jet(x, max(t.order - 1, 0))
    return covariant_derivative(t, gamma.with_scale(t.scale_tag))


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvatureJets:
    """Curvature quantities as jet fields (orders decrease with derivatives taken)."""

    riemann: JetField  # [a, b, c, d] = R_ab^c_d
    ricci: JetField  # [b, d] = R_cb^c_d
    schouten: JetField
    beta: JetField
    weyl: JetField
    cotton: JetField  # [a, b, c] = C_abc

    def values(self) -> "CurvatureStack":
        return CurvatureStack(*(getattr(self, f).value() for f in self.__dataclass_fields__))


@dataclass(frozen=True)
class CurvatureStack:
    riemann: ChartTensor
    ricci: ChartTensor
    schouten: ChartTensor
    beta: ChartTensor
    weyl: ChartTensor
    cotton: ChartTensor


def riemann_from_gamma(gamma: JetField) -> JetField:
    """``R_ab^c_d = d_a G_bd^c - d_b G_ad^c + G_ae^c G_bd^e - G_be^c G_ad^e``."""
    dg = gamma.gradient()  # [a, b, d, c]
    lin = dg.permute([0, 1, 3, 2])  # [a, b, c, d]
    quad = jeinsum("aec,bde->abcd", gamma, gamma)
    r = lin + quad
    r = r - r.swap(0, 1)
    return r.with_weight(0.0)


def curvature_jets(gamma: JetField) -> CurvatureJets:
    n = gamma.n
    if n < 2:
        raise ShapeError("projective curvature needs n >= 2")
    if gamma.order < 2:
        raise OrderError("curvature with Cotton tensor needs connection jets of order >= 2")
    r = riemann_from_gamma(gamma)
    # slots of r: COT, COT, TAN, COT
    ric = r.contract(0, 2)
    sym = ric.symmetrize([0, 1])
    skew = ric.antisymmetrize([0, 1])
    p = sym * (1.0 / (n - 1)) + skew * (1.0 / (n + 1))
    beta = p.antisymmetrize([0, 1]) * -2.0
    eye = ChartTensor(n, (COT, TAN), 0.0, np.eye(n))
    # delta_a^c P_bd as [a, b, c, d]
    dp = tensor_product(eye, p).permute([0, 2, 1, 3])
    beta_term = tensor_product(beta, ChartTensor(n, (TAN, COT), 0.0, np.eye(n)))
    w = r - (dp - dp.swap(0, 1)) - beta_term
    dpp = covariant_derivative(p, gamma)
    cotton = dpp - dpp.swap(0, 1)
    tag = gamma.scale_tag
    return CurvatureJets(*(f.with_scale(tag) for f in (r, ric, p, beta, w, cotton)))


def curvature_stack(a: AffineStructure, x, order: int = 2) -> CurvatureStack:
    """Riemann, Ricci, Schouten, skew part, Weyl and Cotton tensors at ``x``."""
    if order < 2:
        raise OrderError("curvature_stack needs connection jets of order >= 2")
    return curvature_jets(a.gamma_jet(x, order)).values()


def decomposition_residual(c: CurvatureJets) -> float:
    """Max deviation of ``W + 2 delta_[a P_b] + beta delta`` from ``R`` (values)."""
    n = c.riemann.n
    eye = np.eye(n)
    p = c.schouten.data[..., 0]
    b = c.beta.data[..., 0]
    w = c.weyl.data[..., 0]
    rebuilt = (
        w
        + np.einsum("ac,...bd->...abcd", eye, p)
        - np.einsum("bc,...ad->...abcd", eye, p)
        + np.einsum("...ab,cd->...abcd", b, eye)
    )
    return float(np.max(np.abs(rebuilt - c.riemann.data[..., 0]), initial=0.0))


def volume_density(a: AffineStructure, x, order: int, power: float) -> JetField:
    """Jets of ``det(g) ** power`` (a scalar field)."""
    g = a.metric_jet(x, order)
    det = _jet_det(g)
    val = jets.power(det, power)
    return JetField(a.n, (), 0.0, val.coeffs, order=order)


def _jet_det(g: JetField) -> Jet:
    n = g.n
    entries = [[Jet(g.data[..., i, j, :], n, g.order) for j in range(n)] for i in range(n)]
    return _det(entries)


def _det(m):
    k = len(m)
    if k == 1:
        return m[0][0]
    if k == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    total = None
    for j in range(k):
        minor = [row[:j] + row[j + 1 :] for row in m[1:]]
        term = m[0][j] * _det(minor)
        total = term if total is None else (total + term if j % 2 == 0 else total - term)
    return total
