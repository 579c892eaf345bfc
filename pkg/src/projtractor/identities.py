"""
Numerical checks of the structural identities of the tractor calculus.

Every check evaluates both sides of an identity on jets at a batch of
points, using random Taylor data for the auxiliary fields, and reports the
largest residual relative to ``max(1, size of the terms)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import AffineStructure
from .jets import n_monomials
from .tensors import COTR, TR, JetField, jeinsum, tensor_product
from .tractor import (
    TractorFrame,
    canonical_tractors,
    curvature_by_commutator,
    thomas_d,
    tractor_covd,
    tractor_frame,
)

DEFAULT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class IdentityResult:
    """Outcome of one identity check.

    ``anchor`` is a stable descriptive label of the identity.
    """

    name: str
    anchor: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual < self.tolerance)


def _relative(lhs, rhs) -> float:
    a = lhs.data[..., 0] if isinstance(lhs, JetField) else np.asarray(lhs)
    b = rhs.data[..., 0] if isinstance(rhs, JetField) else np.asarray(rhs)
    a, b = np.broadcast_arrays(a, b)
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def random_tractor_field(frame: TractorFrame, slots, weight: float, rng, order: int | None = None) -> JetField:
    """Random polynomial field (random Taylor data) with the given slot kinds."""
    order = frame.order if order is None else order
    n = frame.n
    shape = (frame.points.shape[0],) + tuple(k.extent(n) for k in slots) + (n_monomials(n, order),)
    return JetField(n, tuple(slots), float(weight), rng.normal(size=shape), frame.scale_tag, order=order)


def _canon(frame: TractorFrame) -> dict[str, JetField]:
    return {k: v.to_jet(frame.order) for k, v in canonical_tractors(frame).items()}


# ---------------------------------------------------------------------------
# individual identities
# ---------------------------------------------------------------------------


def thomas_d_of_x(frame: TractorFrame, rng) -> float:
    """``D_A X^B = delta_A^B``."""
    dx = thomas_d(frame, _canon(frame)["X"])
    return _relative(dx, np.eye(frame.n + 1))


def x_contracted_thomas_d(frame: TractorFrame, rng) -> float:
    """``X^A D_A V = w V`` for a random weighted tractor."""
    w = 3.0
    v = random_tractor_field(frame, (TR,), w, rng)
    lhs = jeinsum("A,AC->C", _canon(frame)["X"], thomas_d(frame, v))
    return _relative(lhs, v.truncate(lhs.order) * w)


def thomas_d_x_commutator(frame: TractorFrame, rng) -> float:
    """``D_A (X^B V) - X^B D_A V = delta_A^B V``."""
    w = float(rng.uniform(-2.0, 2.0))
    x = _canon(frame)["X"]
    v = random_tractor_field(frame, (TR,), w, rng)
    left = thomas_d(frame, tensor_product(x, v))  # [A, B, C]
    right = tensor_product(x, thomas_d(frame, v)).permute([1, 0, 2])
    lhs = left - right.truncate(left.order)
    rhs = np.einsum("AB,...C->...ABC", np.eye(frame.n + 1), v.data[..., 0])
    return _relative(lhs, rhs)


def thomas_d_commute_on_densities(frame: TractorFrame, rng) -> float:
    """``D_A D_B tau = D_B D_A tau`` for a density of random weight."""
    tau = random_tractor_field(frame, (), float(rng.uniform(-3.0, 3.0)), rng)
    dd = thomas_d(frame, thomas_d(frame, tau))
    return _relative(dd, dd.swap(0, 1))


def thomas_d_commutator_is_w(frame: TractorFrame, rng) -> float:
    """``(D_A D_B - D_B D_A) V^C = W_AB^C_D V^D``."""
    v = random_tractor_field(frame, (TR,), float(rng.uniform(-2.0, 2.0)), rng)
    dd = thomas_d(frame, thomas_d(frame, v))
    lhs = dd - dd.swap(0, 1)
    rhs = jeinsum("ABCD,D->ABC", frame.w_curvature, v)
    return _relative(lhs, rhs)


def w_first_bianchi(frame: TractorFrame, rng) -> float:
    """``W_[AB^C_D] = 0``."""
    w = frame.w_curvature
    return _relative(w.antisymmetrize([0, 1, 3]), 0.0)


def w_second_bianchi(frame: TractorFrame, rng) -> float:
    """``D_[A W_BC]^E_F = 0``."""
    dw = thomas_d(frame, frame.w_curvature)
    return _relative(dw.antisymmetrize([0, 1, 2]), 0.0)


def x_annihilates_w(frame: TractorFrame, rng) -> float:
    """``X^A W_AB^C_D = X^B W_AB^C_D = W_AB^C_D X^D = 0``."""
    x, w = _canon(frame)["X"], frame.w_curvature
    parts = [
        jeinsum("A,ABCD->BCD", x, w),
        jeinsum("B,ABCD->ACD", x, w),
        jeinsum("D,ABCD->ABC", x, w),
    ]
    return max(_relative(p, 0.0) for p in parts)


def w_projections(frame: TractorFrame, rng) -> float:
    """``Z_C^c W_AB^C_D`` is the ``Z Z Z`` Weyl tensor and ``Y_C W_AB^C_D`` minus ``Z Z Z`` Cotton."""
    n = frame.n
    c = _canon(frame)
    w = frame.w_curvature
    weyl = frame.curvature.weyl.data[..., 0]
    cotton = frame.curvature.cotton.data[..., 0]
    batch = weyl.shape[:-4]
    want_z = np.zeros(batch + (n + 1, n + 1, n, n + 1))
    want_z[..., 1:, 1:, :, 1:] = weyl.transpose(*range(len(batch)), -4, -3, -2, -1)
    want_y = np.zeros(batch + (n + 1, n + 1, n + 1))
    want_y[..., 1:, 1:, 1:] = -cotton
    got_z = jeinsum("Cc,ABCD->ABcD", c["Z"], w)
    got_y = jeinsum("C,ABCD->ABD", c["Y"], w)
    return max(_relative(got_z, want_z), _relative(got_y, want_y))


def splitting_derivatives(frame: TractorFrame, rng) -> float:
    """Derivatives of ``X``, ``W``, ``Y`` and ``Z`` in terms of ``P``, ``X``, ``Y``, ``Z``, ``W``."""
    n = frame.n
    c = _canon(frame)
    p = frame.schouten.data[..., 0]
    x = c["X"].data[..., 0]
    y = c["Y"].data[..., 0]
    z = c["Z"].data[..., 0]
    wt = c["W"].data[..., 0]
    res = [
        _relative(tractor_covd(frame, c["X"]), wt.T),
        _relative(tractor_covd(frame, c["W"]), -np.einsum("...ab,B->...aBb", p, x)),
        _relative(tractor_covd(frame, c["Y"]), np.einsum("...ab,Bb->...aB", p, z)),
        _relative(tractor_covd(frame, c["Z"]), -np.einsum("ab,B->aBb", np.eye(n), y)),
    ]
    return max(res)


def curvature_against_commutator(frame: TractorFrame, rng) -> float:
    """Closed-form tractor curvature against ``[nabla_a, nabla_b]`` on a tractor basis."""
    return _relative(curvature_by_commutator(frame), frame.kappa)


def thomas_d_leibniz(frame: TractorFrame, rng) -> float:
    """``D (U V) = (D U) V + U (D V)`` for a tractor and a cotractor of random weights."""
    u = random_tractor_field(frame, (TR,), float(rng.uniform(-2.0, 2.0)), rng)
    v = random_tractor_field(frame, (COTR,), float(rng.uniform(-2.0, 2.0)), rng)
    left = thomas_d(frame, tensor_product(u, v))
    right = tensor_product(thomas_d(frame, u), v) + tensor_product(u, thomas_d(frame, v)).permute([1, 0, 2])
    return _relative(left, right)


IDENTITIES: dict[str, tuple[str, Callable]] = {
    "thomas_d_of_x": ("thomas-d/canonical-tractor", thomas_d_of_x),
    "x_contracted_thomas_d": ("thomas-d/euler-weight", x_contracted_thomas_d),
    "thomas_d_x_commutator": ("thomas-d/x-commutator", thomas_d_x_commutator),
    "thomas_d_commute_on_densities": ("thomas-d/torsion-free", thomas_d_commute_on_densities),
    "thomas_d_commutator_is_w": ("w-curvature/definition", thomas_d_commutator_is_w),
    "w_first_bianchi": ("w-curvature/first-bianchi", w_first_bianchi),
    "w_second_bianchi": ("w-curvature/second-bianchi", w_second_bianchi),
    "x_annihilates_w": ("w-curvature/x-insertion", x_annihilates_w),
    "w_projections": ("w-curvature/weyl-cotton-parts", w_projections),
    "splitting_derivatives": ("tractor-connection/splitting-derivatives", splitting_derivatives),
    "curvature_against_commutator": ("tractor-curvature/commutator", curvature_against_commutator),
    "thomas_d_leibniz": ("thomas-d/leibniz", thomas_d_leibniz),
}


def verify_identities(
    structure: AffineStructure,
    points: np.ndarray,
    order: int | None = None,
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
    names=None,
) -> list[IdentityResult]:
    """Run every identity (or those in ``names``) at ``points``."""
    frame = tractor_frame(structure, points, order)
    rng = np.random.default_rng(seed)
    out = []
    for name in names or IDENTITIES:
        anchor, fn = IDENTITIES[name]
        out.append(IdentityResult(name, anchor, fn(frame, rng), tolerance))
    return out


def timed_identities(structure: AffineStructure, points: np.ndarray, **kw) -> tuple[list[IdentityResult], float]:
    start = time.perf_counter()
    res = verify_identities(structure, points, **kw)
    return res, time.perf_counter() - start
