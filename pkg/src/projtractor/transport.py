"""
Geodesics, first integrals and holonomy of the prolongation connections.

Transport of prolongation states
--------------------------------
A state ``S`` with ``2r`` cotractor slots is parallel for ``nabla - Q#`` when
``d_c S = N_c(x) S`` with ``N_c S = Q_c # S - A_c S`` (``A_c`` the algebraic
part of the tractor connection).  ``N_c`` is affine in the pointwise values of
``Gamma``, ``P``, ``kappa`` and ``nabla kappa``, so it is tabulated once per
``(n, r, kind)`` as a constant part plus a linear response to those values,
restricted to an orthonormal basis of the ``(r, r)`` Young class.  Along a
curve the reduced ``d x d`` generator is rebuilt from the sampled values and
the fundamental matrix is integrated with fixed-step RK4.

The amount by which the tabulated generators leave the Young class is
recorded as ``leakage``; it is zero to rounding for every supported kind.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import DomainExitError, PreconditionError, ShapeError, UnsupportedRankError
from .expr import default_names
from .geometry import AffineStructure, evaluate_components
from .jets import monomial_table
from .killing import (
    KillingCandidate,
    integrability_obstruction,
    rank1_q_sharp,
    rank2_q_sharp_tractor,
    tractor_action_values,
)
from .tensors import young_dimension, young_matrix
from .tractor import kappa_gradient, tractor_frame

log = logging.getLogger(__name__)

KINDS = ("plain_tractor", "rank1_prolongation", "rank2_prolongation")
DEFAULT_BOX = ((-0.8, -0.8), (0.8, 0.8))
RANK_RTOL = 1e-8


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeodesicSample:
    """RK4 samples of a batch of geodesics.

    Attributes
    ----------
    times : ndarray, shape (S + 1,)
    x, u : ndarray, shape (S + 1, B, n)
        Positions and velocities.
    """

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray


def _box_of(structure: AffineStructure, box):
    if box is not None:
        return np.asarray(box[0], float), np.asarray(box[1], float)
    if structure.box is not None:
        return np.asarray(structure.box[0], float), np.asarray(structure.box[1], float)
    return None


def integrate_geodesic(structure: AffineStructure, x0, u0, T: float, steps: int, box=None) -> GeodesicSample:
    """Integrate ``x'' = -Gamma(x', x')`` with classical RK4.

    ``x0`` and ``u0`` have shape ``(n,)`` or ``(B, n)``; all geodesics of a
    batch are stepped together.

    Raises
    ------
    DomainExitError
        A trajectory leaves the bounding box (``box`` or ``structure.box``).
    """
    if steps < 1:
        raise ShapeError("need at least one step")
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    u = np.atleast_2d(np.asarray(u0, dtype=float)).copy()
    x, u = np.broadcast_arrays(x, u)
    x, u = x.copy(), u.copy()
    bounds = _box_of(structure, box)
    h = T / steps

    def rhs(xx, uu):
        g = structure.gamma_values(xx)
        return uu, -np.einsum("...abc,...a,...b->...c", g, uu, uu)

    xs, us = [x.copy()], [u.copy()]
    for i in range(steps):
        k1x, k1u = rhs(x, u)
        k2x, k2u = rhs(x + 0.5 * h * k1x, u + 0.5 * h * k1u)
        k3x, k3u = rhs(x + 0.5 * h * k2x, u + 0.5 * h * k2u)
        k4x, k4u = rhs(x + h * k3x, u + h * k3u)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        u = u + (h / 6.0) * (k1u + 2 * k2u + 2 * k3u + k4u)
        if bounds is not None and (np.any(x < bounds[0]) or np.any(x > bounds[1])):
            raise DomainExitError("geodesic left the chart box", (i + 1) * h)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise DomainExitError("geodesic blew up", (i + 1) * h)
        xs.append(x)
        us.append(u)
    return GeodesicSample(np.linspace(0.0, T, steps + 1), np.stack(xs), np.stack(us))


def metric_speed(structure: AffineStructure, sample: GeodesicSample) -> np.ndarray:
    """``g(u, u)`` along a sample, shape ``(S + 1, B)``."""
    if structure.metric is None:
        raise PreconditionError("speed needs a metric")
    g = evaluate_components(structure.metric, sample.x, 0, structure.names, (structure.n,) * 2)[..., 0]
    return np.einsum("...ab,...a,...b->...", g, sample.u, sample.u)


def first_integral(structure: AffineStructure, cand: KillingCandidate, sample: GeodesicSample) -> np.ndarray:
    """``k(u, .., u)`` along a sample, using the candidate's unweighted components."""
    r = cand.rank
    k = evaluate_components(cand.components, sample.x, 0, structure.names, (structure.n,) * r)[..., 0]
    for _ in range(r):
        # contract the first remaining slot: (S, B, n, ..) with (S, B, n)
        k = np.einsum("sba...,sba->sb...", k, sample.u)
    return k


@dataclass(frozen=True)
class DriftReport:
    per_curve: np.ndarray
    values: np.ndarray

    @property
    def max_drift(self) -> float:
        return float(np.max(self.per_curve))


def first_integral_drift(structure: AffineStructure, cand: KillingCandidate, sample: GeodesicSample) -> DriftReport:
    """``max_t |I(t) - I(0)| / max(|I(0)|, 1e-12)`` per geodesic."""
    vals = first_integral(structure, cand, sample)
    ref = np.maximum(np.abs(vals[0]), 1e-12)
    drift = np.max(np.abs(vals - vals[0]), axis=0) / ref
    return DriftReport(drift, vals)


def rk4_convergence_ratios(structure: AffineStructure, x0, u0, T: float, steps: int, refinements: int = 3) -> np.ndarray:
    """Successive endpoint-difference ratios under step halving (about 16 for RK4)."""
    ends = []
    for level in range(refinements + 1):
        s = integrate_geodesic(structure, x0, u0, T, steps * 2**level)
        ends.append(np.concatenate([s.x[-1].ravel(), s.u[-1].ravel()]))
    diffs = [np.linalg.norm(ends[i] - ends[i + 1]) for i in range(refinements)]
    return np.array([diffs[i] / diffs[i + 1] for i in range(refinements - 1)])


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

Piece = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


@dataclass(frozen=True)
class Curve:
    """A piecewise-smooth curve; each piece maps ``t in [0, 1]`` to positions
    and velocities (``(K,) -> (K, n), (K, n)``) and gets ``steps`` RK4 steps.
    """

    pieces: tuple
    steps: int = 200
    label: str = ""

    def __post_init__(self):
        if self.steps < 16 or self.steps % 2:
            raise ShapeError("curves need an even number of at least 16 steps per piece")

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        """Positions and velocities at step ends and midpoints: ``(P, 2S+1, n)`` each."""
        t = np.linspace(0.0, 1.0, 2 * self.steps + 1)
        xs, vs = zip(*(p(t) for p in self.pieces))
        return np.stack(xs), np.stack(vs)

    @property
    def start(self) -> np.ndarray:
        return self.pieces[0](np.zeros(1))[0][0]

    @property
    def end(self) -> np.ndarray:
        return self.pieces[-1](np.ones(1))[0][0]

    def is_closed(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.start - self.end)) <= tol)

    def then(self, other: "Curve") -> "Curve":
        """This curve followed by ``other`` (steps taken from ``self``)."""
        return Curve(self.pieces + other.pieces, self.steps, f"{self.label}+{other.label}")


def _line(a: np.ndarray, b: np.ndarray) -> Piece:
    a, b = np.asarray(a, float), np.asarray(b, float)

    def piece(t):
        t = np.asarray(t, float)[:, None]
        return a + t * (b - a), np.broadcast_to(b - a, (t.shape[0], a.size)).copy()

    return piece


def segment(x0, x1, steps: int = 200) -> Curve:
    return Curve((_line(x0, x1),), steps, "segment")


def rectangle_loop(base, side_a: float, side_b: float, axes=(0, 1), steps: int = 200) -> Curve:
    """Axis-aligned rectangle starting and ending at ``base``; negative sides reverse direction."""
    base = np.asarray(base, float)
    e1 = np.zeros_like(base)
    e2 = np.zeros_like(base)
    e1[axes[0]] = side_a
    e2[axes[1]] = side_b
    corners = [base, base + e1, base + e1 + e2, base + e2, base]
    return Curve(tuple(_line(corners[i], corners[i + 1]) for i in range(4)), steps, "rectangle")


def lissajous_loop(base, amplitudes, frequencies, phases, steps: int = 200) -> Curve:
    """``x_i(t) = base_i + A_i (sin(2 pi m_i t + phi_i) - sin(phi_i))`` for integer ``m_i``."""
    base = np.asarray(base, float)
    amp = np.asarray(amplitudes, float)
    freq = np.asarray(frequencies, float)
    ph = np.asarray(phases, float)
    if np.any(freq != np.round(freq)):
        raise ShapeError("Lissajous frequencies must be integers for the loop to close")

    # one piece per oscillation of the fastest coordinate keeps the step
    # size proportional to the time scale of the loop
    count = int(max(1, np.max(np.abs(freq))))

    def make(k: int) -> Piece:
        def piece(t):
            u = (k + np.asarray(t, float)[:, None]) / count
            arg = 2 * np.pi * u * freq + ph
            return base + amp * (np.sin(arg) - np.sin(ph)), amp * 2 * np.pi * freq * np.cos(arg) / count

        return piece

    return Curve(tuple(make(k) for k in range(count)), steps, "lissajous")


def reparametrize(curve: Curve, strength: float = 0.3) -> Curve:
    """Same trace, parameter ``s = t + strength sin(2 pi t) / (2 pi)`` on every piece."""
    if not abs(strength) < 1:
        raise ShapeError("reparametrization strength must lie in (-1, 1)")

    def wrap(p: Piece) -> Piece:
        def piece(t):
            t = np.asarray(t, float)
            s = t + strength * np.sin(2 * np.pi * t) / (2 * np.pi)
            ds = 1 + strength * np.cos(2 * np.pi * t)
            x, v = p(s)
            return x, v * ds[:, None]

        return piece

    return Curve(tuple(wrap(p) for p in curve.pieces), curve.steps, curve.label + "~")


def random_loops(base, box, count: int, rng, steps: int = 200) -> list[Curve]:
    """Alternating rectangles and Lissajous loops based at ``base`` inside ``box``."""
    base = np.asarray(base, float)
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    n = base.size
    room = np.minimum(base - lo, hi - base)
    if np.any(room <= 0):
        raise DomainExitError("base point is not inside the chart box", 0.0)
    loops = []
    for i in range(count):
        if i % 2 == 0:
            ax = rng.choice(n, size=2, replace=False) if n > 2 else np.array([0, 1])
            sides = rng.uniform(0.3, 0.9, size=2) * room[ax] * rng.choice([-1.0, 1.0], size=2)
            loops.append(rectangle_loop(base, sides[0], sides[1], tuple(int(a) for a in ax), steps))
        else:
            freq = rng.integers(1, 3, size=n)
            amp = rng.uniform(0.2, 0.45, size=n) * room
            ph = rng.uniform(0, 2 * np.pi, size=n)
            loops.append(lissajous_loop(base, amp, freq, ph, steps))
    return loops


# ---------------------------------------------------------------------------
# tabulated prolongation generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _FeatureBlock:
    """Independent entries of one input array, using its index symmetry.

    ``pair`` names two axes that are symmetric (``sign = 1``) or skew
    (``sign = -1``); entries of the last axis below ``first_last`` vanish
    identically and are dropped.
    """

    name: str
    shape: tuple
    pair: tuple | None = None
    sign: int = 1
    first_last: int = 0

    def entries(self) -> list[tuple[int, ...]]:
        out = []
        for idx in np.ndindex(*self.shape):
            if idx[-1] < self.first_last:
                continue
            if self.pair is not None:
                i, j = idx[self.pair[0]], idx[self.pair[1]]
                if i > j or (i == j and self.sign < 0):
                    continue
            out.append(idx)
        return out

    def units(self) -> np.ndarray:
        ent = self.entries()
        arr = np.zeros((len(ent),) + self.shape)
        for k, idx in enumerate(ent):
            arr[(k,) + idx] = 1.0
            if self.pair is not None:
                sw = list(idx)
                sw[self.pair[0]], sw[self.pair[1]] = sw[self.pair[1]], sw[self.pair[0]]
                if tuple(sw) != idx:
                    arr[(k,) + tuple(sw)] = float(self.sign)
        return arr

    def extract(self, values: np.ndarray) -> np.ndarray:
        ent = self.entries()
        cols = tuple(np.array([e[a] for e in ent]) for a in range(len(self.shape)))
        return values[(slice(None),) + cols]


def _feature_blocks(n: int, kind: str) -> list[_FeatureBlock]:
    m = n + 1
    blocks = [_FeatureBlock("gamma", (n, n, n), (0, 1), 1), _FeatureBlock("schouten", (n, n))]
    if kind in ("rank1_prolongation", "rank2_prolongation"):
        blocks.append(_FeatureBlock("kappa", (n, n, m, m), (0, 1), -1, first_last=1))
    if kind == "rank2_prolongation":
        blocks.append(_FeatureBlock("dkappa", (n, n, n, m, m), (1, 2), -1))
    return blocks


def _generator(n: int, kind: str, r: int, feats: dict, states: np.ndarray) -> np.ndarray:
    """``N_c S = Q_c # S - A_c S`` on raw arrays; returns ``[.., c, *slots]``."""
    out = -tractor_action_values(feats["gamma"], feats["schouten"], states, 2 * r)
    if kind == "rank1_prolongation":
        out = out + rank1_q_sharp(feats["kappa"], states)
    elif kind == "rank2_prolongation":
        out = out + rank2_q_sharp_tractor(feats["kappa"], feats["dkappa"], states)
    return out


@dataclass(frozen=True)
class ConnectionModel:
    """Reduced generator ``N(x) = constant + features(x) @ response``.

    Attributes
    ----------
    basis : ndarray, shape (D, d)
        Orthonormal basis of the ``(r, r)`` class in the flattened fibre.
    constant : ndarray, shape (n, d, d)
    response : ndarray, shape (F, n, d, d)
    leakage : float
        Largest component of any tabulated generator outside the class.
    """

    n: int
    rank: int
    kind: str
    basis: np.ndarray
    constant: np.ndarray
    response: np.ndarray
    leakage: float
    blocks: tuple = field(default=())

    @property
    def fiber_dimension(self) -> int:
        return self.basis.shape[1]

    def state_shape(self) -> tuple[int, ...]:
        return (self.n + 1,) * (2 * self.rank)


def class_basis(n: int, r: int) -> np.ndarray:
    """Orthonormal basis ``(D, d)`` of the ``(r, r)`` class over ``R^(n+1)``."""
    u, s, _ = np.linalg.svd(young_matrix(n + 1, r))
    d = young_dimension(n + 1, r)
    if s[d - 1] < 1e-8 or (d < s.size and s[d] > 1e-8):
        raise ShapeError("Young projector image has unexpected rank")
    return u[:, :d]


@lru_cache(maxsize=None)
def connection_model(n: int, kind: str, r: int) -> ConnectionModel:
    """Tabulate the reduced generator of ``kind`` on the rank-``r`` class."""
    if kind not in KINDS:
        raise ValueError(f"unknown connection kind {kind!r}")
    if kind == "rank1_prolongation" and r != 1 or kind == "rank2_prolongation" and r != 2:
        raise UnsupportedRankError(f"{kind} acts on rank {1 if kind.startswith('rank1') else 2} states")
    basis = class_basis(n, r)
    big, d = basis.shape
    sshape = (n + 1,) * (2 * r)
    states = basis.T.reshape((d,) + sshape)
    blocks = _feature_blocks(n, kind)
    units = [blk.units() for blk in blocks]
    sizes = [u.shape[0] for u in units]
    total = sum(sizes)

    def evaluate(rows: np.ndarray) -> np.ndarray:
        # rows (K, F) of reduced feature vectors -> full generators (K, c, D, d)
        feats, off = {}, 0
        for blk, u, size in zip(blocks, units, sizes):
            arr = np.tensordot(rows[:, off : off + size], u, axes=1)
            feats[blk.name] = arr.reshape((-1, 1) + blk.shape)
            off += size
        full = _generator(n, kind, r, feats, states[None])  # (K, d, c, *slots)
        return full.reshape(full.shape[0], d, n, big).transpose(0, 2, 3, 1)

    def project(full: np.ndarray):
        red = np.einsum("Di,kcDj->kcij", basis, full)
        leak = full - np.einsum("Di,kcij->kcDj", basis, red)
        return red, float(np.max(np.abs(leak), initial=0.0))

    const_full = evaluate(np.zeros((1, total)))
    constant, leakage = project(const_full)
    responses = []
    chunk = max(1, 4096 // max(1, big // 16))
    for start in range(0, total, chunk):
        rows = np.eye(total)[start : start + chunk]
        red, leak = project(evaluate(rows) - const_full)
        leakage = max(leakage, leak)
        responses.append(red)
    response = np.concatenate(responses, axis=0)
    return ConnectionModel(n, r, kind, basis, constant[0], response, leakage, tuple(blocks))


def _frame_order(kind: str) -> int:
    return 3 if kind == "rank2_prolongation" else 2


def feature_values(structure: AffineStructure, kind: str, points: np.ndarray) -> np.ndarray:
    """Concatenated pointwise values ``(P, F)`` feeding :class:`ConnectionModel`."""
    pts = np.asarray(points, float).reshape(-1, structure.n)
    frame = tractor_frame(structure, pts, _frame_order(kind))
    values = {"gamma": frame.gamma.data[..., 0], "schouten": frame.schouten.data[..., 0]}
    if kind in ("rank1_prolongation", "rank2_prolongation"):
        values["kappa"] = frame.kappa.data[..., 0]
    if kind == "rank2_prolongation":
        values["dkappa"] = kappa_gradient(frame).data[..., 0]
    return np.concatenate([blk.extract(values[blk.name]) for blk in _feature_blocks(structure.n, kind)], axis=1)


def reduced_generators(model: ConnectionModel, features: np.ndarray) -> np.ndarray:
    """``N_c`` in the reduced basis at each feature row: ``(P, n, d, d)``."""
    f = features.shape[-1]
    red = features @ model.response.reshape(f, -1)
    return model.constant + red.reshape(features.shape[:-1] + model.constant.shape)


# ---------------------------------------------------------------------------
# transport and holonomy
# ---------------------------------------------------------------------------


def kind_for_rank(r: int) -> str:
    if r == 1:
        return "rank1_prolongation"
    if r == 2:
        return "rank2_prolongation"
    return "plain_tractor"


def _rk4_fundamental(mats: np.ndarray, stride: int) -> np.ndarray:
    """RK4 fundamental matrices of ``phi' = M(t) phi`` on ``[0, 1]``.

    ``mats`` holds ``M`` at ``2S + 1`` equally spaced times; ``stride`` 2
    uses every other sample, i.e. half as many steps.
    """
    m = mats[:, ::stride]
    s = (m.shape[1] - 1) // 2
    d = m.shape[-1]
    phi = np.broadcast_to(np.eye(d), (m.shape[0], d, d)).copy()
    h = 1.0 / s
    for j in range(s):
        m0, m1, m2 = m[:, 2 * j], m[:, 2 * j + 1], m[:, 2 * j + 2]
        k1 = m0 @ phi
        k2 = m1 @ (phi + 0.5 * h * k1)
        k3 = m1 @ (phi + 0.5 * h * k2)
        k4 = m2 @ (phi + h * k3)
        phi = phi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return phi


def _piece_matrices(model: ConnectionModel, structure: AffineStructure, curves: Sequence[Curve]) -> list[list[tuple[np.ndarray, float]]]:
    """Transport matrix ``(d, d)`` and error estimate of every piece of every curve."""
    steps = {c.steps for c in curves}
    if len(steps) != 1:
        raise ShapeError("curves transported together must share a step count")
    s = steps.pop()
    xs, vs = zip(*(c.sample() for c in curves))
    counts = [x.shape[0] for x in xs]
    x = np.concatenate(xs)  # (P, 2S+1, n)
    v = np.concatenate(vs)
    bounds = _box_of(structure, None)
    if bounds is not None and (np.any(x < bounds[0] - 1e-12) or np.any(x > bounds[1] + 1e-12)):
        raise DomainExitError("curve leaves the chart box", float("nan"))
    feats = feature_values(structure, model.kind, x.reshape(-1, structure.n))
    gens = reduced_generators(model, feats).reshape(x.shape[:2] + model.constant.shape)
    mats = np.einsum("pkc,pkcij->pkij", v, gens)  # (P, 2S+1, d, d)
    fine = _rk4_fundamental(mats, 1)
    coarse = _rk4_fundamental(mats, 2)
    # one Richardson step: the RK4 error of the fine run is about (fine - coarse) / 15
    phi = fine + (fine - coarse) / 15.0
    err = np.max(np.abs(fine - coarse), axis=(1, 2)) / 15.0
    out, start = [], 0
    for c in counts:
        out.append(list(zip(phi[start : start + c], err[start : start + c].tolist())))
        start += c
    return out


@dataclass(frozen=True)
class TransportMatrices:
    """Reduced transport matrices along a batch of curves.

    ``errors[i]`` bounds the RK4 error of the unextrapolated run along curve
    ``i`` (sum over pieces); the extrapolated ``matrices`` are typically far
    more accurate.
    """

    matrices: list
    errors: list
    model: ConnectionModel


def curve_transport_matrices(structure: AffineStructure, kind: str, r: int, curves: Sequence[Curve]) -> TransportMatrices:
    """Reduced transport matrix along each curve (later pieces act last)."""
    model = connection_model(structure.n, kind, r)
    mats, errs = [], []
    for pieces in _piece_matrices(model, structure, curves):
        total = np.eye(model.fiber_dimension)
        for m, _ in pieces:
            total = m @ total
        mats.append(total)
        errs.append(float(sum(e for _, e in pieces)))
    return TransportMatrices(mats, errs, model)


@dataclass(frozen=True)
class TransportResult:
    state: np.ndarray
    class_residual: float
    leakage: float


def parallel_transport(structure: AffineStructure, kind: str, curve: Curve, state, r: int | None = None) -> TransportResult:
    """Transport ``state`` (tractor components, ``2r`` axes, optional leading batch) along ``curve``.

    Raises
    ------
    ShapeError
        ``state`` has the wrong shape or does not lie in the ``(r, r)`` class.
    """
    if r is None:
        r = {"rank1_prolongation": 1, "rank2_prolongation": 2}.get(kind)
        if r is None:
            raise ShapeError("plain tractor transport needs an explicit rank")
    s0 = np.asarray(state, float)
    sshape = (structure.n + 1,) * (2 * r)
    if s0.shape[s0.ndim - 2 * r :] != sshape:
        raise ShapeError(f"state must end in axes {sshape}, got {s0.shape}")
    batch = s0.shape[: s0.ndim - 2 * r]
    tm = curve_transport_matrices(structure, kind, r, [curve])
    mat, model = tm.matrices[0], tm.model
    flat = s0.reshape(batch + (-1,))
    red = flat @ model.basis
    resid = float(np.max(np.abs(flat - red @ model.basis.T), initial=0.0))
    if resid > 1e-9 * max(1.0, float(np.max(np.abs(flat), initial=0.0))):
        raise ShapeError(f"state is not in the ({r},{r}) class (residual {resid:.3g})")
    out = (red @ mat.T) @ model.basis.T
    return TransportResult(out.reshape(s0.shape), resid, model.leakage)


def holonomies(structure: AffineStructure, r: int, loops: Sequence[Curve], kind: str | None = None) -> TransportMatrices:
    for c in loops:
        if not c.is_closed():
            raise ShapeError("holonomy needs closed loops")
    return curve_transport_matrices(structure, kind or kind_for_rank(r), r, loops)


# ---------------------------------------------------------------------------
# numerical rank and solution dimension
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankEstimate:
    rank: int
    singular_values: np.ndarray
    threshold: float
    ambiguous: bool


def numerical_rank(mat: np.ndarray, rtol: float = RANK_RTOL, floor: float = 0.0) -> RankEstimate:
    """Rank with threshold ``max(rtol * max(1, sigma_max), floor)``; flags values within 10x of it."""
    s = np.linalg.svd(np.atleast_2d(mat), compute_uv=False) if mat.size else np.zeros(0)
    top = float(s[0]) if s.size else 0.0
    thr = max(rtol * max(1.0, top), floor)
    amb = bool(np.any((s > thr / 10.0) & (s < thr * 10.0)))
    return RankEstimate(int(np.sum(s > thr)), s, thr, amb)


@dataclass
class DimensionResult:
    """Outcome of :func:`solution_space_dimension`.

    ``dimension`` is the smaller of the two upper bounds; ``indeterminate`` is
    set when a singular value sits within a decade of the rank threshold.
    """

    dimension: int
    fiber_dimension: int
    holonomy_dimension: int
    obstruction_dimension: int | None
    holonomy_rank: RankEstimate
    obstruction_rank: RankEstimate | None
    kind: str
    leakage: float
    integration_error: float
    seed: int | None
    warnings: list[str] = field(default_factory=list)

    @property
    def indeterminate(self) -> bool:
        return self.holonomy_rank.ambiguous or bool(self.obstruction_rank and self.obstruction_rank.ambiguous)


def _check_flat(structure: AffineStructure, points: np.ndarray, tol: float = 1e-8) -> None:
    frame = tractor_frame(structure, points, 2)
    size = float(np.max(np.abs(frame.kappa.data[..., 0]), initial=0.0))
    if size > tol:
        raise UnsupportedRankError(
            f"rank >= 3 transport is only available on projectively flat structures (|kappa| = {size:.3g})"
        )


def obstruction_matrix(structure: AffineStructure, r: int, points: np.ndarray) -> np.ndarray:
    """Integrability obstructions of a class basis, one matrix per point: ``(points, rows, d)``.

    Parallel sections take different values at different points, so each
    point gives its own bound ``d - rank``; the rows must not be stacked
    across points.
    """
    basis = class_basis(structure.n, r)
    big, d = basis.shape
    pts = np.asarray(points, float).reshape(-1, structure.n)
    rep = np.repeat(pts, d, axis=0)
    states = np.tile(basis.T, (pts.shape[0], 1)).reshape((-1,) + (structure.n + 1,) * (2 * r))
    frame = tractor_frame(structure, rep, 4 if r == 2 else 3)
    obs = integrability_obstruction(frame, states, r).reshape(pts.shape[0], d, -1)
    return obs.transpose(0, 2, 1)


def _sample_points(structure: AffineStructure, rng, count: int, box=None) -> np.ndarray:
    lo, hi = _box_of(structure, box) if _box_of(structure, box) is not None else map(np.asarray, DEFAULT_BOX)
    lo, hi = np.asarray(lo, float)[: structure.n], np.asarray(hi, float)[: structure.n]
    if lo.size < structure.n:
        lo, hi = np.full(structure.n, lo[0]), np.full(structure.n, hi[0])
    return rng.uniform(0.8 * lo, 0.8 * hi, size=(count, structure.n))


def solution_space_dimension(
    structure: AffineStructure,
    r: int,
    base_point=None,
    num_loops: int = 8,
    steps: int = 200,
    seed: int = 0,
    obstruction_points: int = 10,
    rtol: float = RANK_RTOL,
) -> DimensionResult:
    """Dimension of the space of rank ``r`` Killing tensors from loop holonomy.

    The holonomy bound is ``d - rank(stack(Hol_i - I))``.  For ``r`` in
    ``{1, 2}`` it is cross-checked against the smallest ``d - rank`` of the
    integrability obstruction over the base point and random points; this is
    an upper bound, so the smaller value is reported and a holonomy bound
    above it is logged.  Ranks ``r >= 3`` use the plain
    tractor connection and require the structure to be projectively flat.
    """
    if num_loops < 8:
        raise ShapeError("need at least 8 loops")
    rng = np.random.default_rng(seed)
    n = structure.n
    base = np.zeros(n) if base_point is None else np.asarray(base_point, float)
    bounds = _box_of(structure, None)
    box = bounds if bounds is not None else (np.full(n, DEFAULT_BOX[0][0]), np.full(n, DEFAULT_BOX[1][0]))
    kind = kind_for_rank(r)
    if kind == "plain_tractor":
        _check_flat(structure, np.vstack([base, _sample_points(structure, rng, 10, box)]))
    loops = random_loops(base, box, num_loops, rng, steps)
    tm = holonomies(structure, r, loops, kind)
    model = tm.model
    d = model.fiber_dimension
    stack = np.concatenate([h - np.eye(d) for h in tm.matrices])
    # the rank threshold never drops below the integrator's own error estimate
    integration_error = max(tm.errors)
    hrank = numerical_rank(stack, rtol, floor=integration_error)
    hol_dim = d - hrank.rank
    warnings = []
    obs_dim, orank = None, None
    if r in (1, 2) and obstruction_points > 0:
        pts = np.vstack([base, _sample_points(structure, rng, obstruction_points - 1, box)])
        ranks = [numerical_rank(m, rtol) for m in obstruction_matrix(structure, r, pts)]
        orank = max(ranks, key=lambda e: e.rank)
        obs_dim = d - orank.rank
        # the obstruction only gives an upper bound; exceeding it means the holonomy rank is too low
        if obs_dim < hol_dim:
            msg = f"holonomy bound {hol_dim} exceeds obstruction bound {obs_dim}; reporting the smaller"
            log.warning(msg)
            warnings.append(msg)
    dim = hol_dim if obs_dim is None else min(hol_dim, obs_dim)
    res = DimensionResult(dim, d, hol_dim, obs_dim, hrank, orank, kind, model.leakage, integration_error, seed, warnings)
    if res.indeterminate:
        warnings.append("a singular value lies within a decade of the rank threshold")
    return res


# ---------------------------------------------------------------------------
# flat-space polynomial oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolynomialKillingBasis:
    """Killing tensors of flat ``R^n`` with polynomial components of degree ``<= r``.

    ``coefficients[s, j, m]`` is the coefficient of monomial ``monomials[m]``
    in component ``components[j]`` (a sorted index tuple) of basis element ``s``.
    """

    n: int
    r: int
    components: tuple
    monomials: np.ndarray
    coefficients: np.ndarray

    @property
    def dimension(self) -> int:
        return self.coefficients.shape[0]

    def component_strings(self, s: int, names: Sequence[str] | None = None, tol: float = 1e-14) -> list[str]:
        names = list(names or default_names(self.n))
        out = []
        for j in range(len(self.components)):
            terms = []
            for m, c in zip(self.monomials, self.coefficients[s, j]):
                if abs(c) <= tol:
                    continue
                factors = [repr(float(c))] + [f"{names[i]}^{e}" for i, e in enumerate(m) if e]
                terms.append("*".join(factors))
            out.append("(" + " + ".join(terms) + ")" if terms else "0")
        return out

    def candidate(self, s: int, names: Sequence[str] | None = None) -> KillingCandidate:
        """Basis element ``s`` as a candidate with expression-string components."""
        strings = dict(zip(self.components, self.component_strings(s, names)))
        comps = np.empty((self.n,) * self.r, dtype=object)
        for idx in itertools.product(range(self.n), repeat=self.r):
            comps[idx] = strings[tuple(sorted(idx))]
        return KillingCandidate(self.r, comps.tolist(), label=f"flat-poly-{s}")

    def evaluate(self, points) -> np.ndarray:
        """Full symmetric components at ``points``: ``(dim, P, n, .., n)``."""
        p = np.atleast_2d(np.asarray(points, float))
        mono = np.prod(p[:, None, :] ** self.monomials[None], axis=-1)  # (P, M)
        vals = np.einsum("sjm,pm->spj", self.coefficients, mono)
        out = np.zeros((self.dimension, p.shape[0]) + (self.n,) * self.r)
        lookup = {c: j for j, c in enumerate(self.components)}
        for idx in itertools.product(range(self.n), repeat=self.r):
            out[(slice(None), slice(None)) + idx] = vals[..., lookup[tuple(sorted(idx))]]
        return out


def flat_polynomial_oracle(n: int, r: int, rcond: float = 1e-10) -> PolynomialKillingBasis:
    """Null space of the symmetrised derivative on polynomial symmetric tensors."""
    comps = list(itertools.combinations_with_replacement(range(n), r))
    eqs = list(itertools.combinations_with_replacement(range(n), r + 1))
    mono = monomial_table(n, r).exps
    lower = monomial_table(n, max(r - 1, 0)).exps
    low_index = {tuple(m): i for i, m in enumerate(lower)}
    cidx = {c: j for j, c in enumerate(comps)}
    nm = len(mono)
    mat = np.zeros((len(eqs) * len(lower), len(comps) * nm))
    for e, tup in enumerate(eqs):
        for pos in range(r + 1):
            i = tup[pos]
            rest = tup[:pos] + tup[pos + 1 :]
            j = cidx[rest]
            for m, ex in enumerate(mono):
                if ex[i] == 0:
                    continue
                red = list(ex)
                red[i] -= 1
                row = e * len(lower) + low_index[tuple(red)]
                mat[row, j * nm + m] += ex[i]
    null = linalg.null_space(mat, rcond=rcond)  # (unknowns, dim)
    coeffs = null.T.reshape(-1, len(comps), nm)
    return PolynomialKillingBasis(n, r, tuple(comps), np.asarray(mono), coeffs)


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles between the column spans of ``a`` and ``b``."""
    return linalg.subspace_angles(a, b)
