"""
Projective tractor calculus in a chosen scale.

Component conventions, for a chart of dimension ``n``:

* a cotractor ``s_A`` has components ``(sigma, mu_1..mu_n)``; index 0 is the
  ``Y`` slot and indices ``1..n`` are the ``Z`` slots;
* a tractor ``V^A`` has components ``(rho, nu^1..nu^n)``; index 0 pairs with
  ``X`` and indices ``1..n`` are the ``W`` slots.

So ``X = e_0`` (tractor, weight 1), ``Y = e_0`` (cotractor, weight -1),
``Z_A^a`` and ``W^A_a`` are the unit embeddings of the last ``n`` slots.

The cotractor connection is ``nabla_a s_B = d_a s_B - A_{aB}^C s_C`` plus the
density term for the component weight, with ``A_{a0}^{c} = delta_a^c``,
``A_{ab}^{0} = -P_ab`` and ``A_{ab}^{c} = Gamma_ab^c`` (tractor indices
shifted by one).  Tractors carry the dual connection.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConsistencyError, KindError, OrderError, ScaleError
from .geometry import AffineStructure, CurvatureJets, covariant_derivative, curvature_jets
from .tensors import COT, COTR, TAN, TR, ChartTensor, JetField, jeinsum


def tractor_matrix(gamma: JetField, schouten: JetField) -> JetField:
    """``A[a, B, C] = A_{aB}^C`` for the cotractor connection."""
    n = gamma.n
    order = min(gamma.order, schouten.order)
    g = gamma.truncate(order).data
    p = schouten.truncate(order).data
    batch = np.broadcast_shapes(g.shape[:-4], p.shape[:-3])
    data = np.zeros(batch + (n, n + 1, n + 1, g.shape[-1]))
    data[..., :, 0, 1:, 0] = np.eye(n)
    data[..., :, 1:, 0, :] = -p
    data[..., :, 1:, 1:, :] = g
    return JetField(n, (COT, COTR, TR), 0.0, data, gamma.scale_tag, order=order)


@dataclass(frozen=True)
class TractorFrame:
    """Scale-dependent splitting data at a batch of points.

    Attributes
    ----------
    structure : AffineStructure
        The representative connection; its ``scale_tag`` labels all output.
    points : ndarray, shape (B, n)
    order : int
        Jet order of the connection coefficients.
    """

    structure: AffineStructure
    points: np.ndarray
    order: int

    @property
    def n(self) -> int:
        return self.structure.n

    @property
    def scale_tag(self) -> str:
        return self.structure.scale_tag

    @cached_property
    def gamma(self) -> JetField:
        return self.structure.gamma_jet(self.points, self.order)

    @cached_property
    def curvature(self) -> CurvatureJets:
        return curvature_jets(self.gamma)

    @property
    def schouten(self) -> JetField:
        return self.curvature.schouten

    @cached_property
    def connection_matrix(self) -> JetField:
        return tractor_matrix(self.gamma, self.schouten)

    @cached_property
    def kappa(self) -> JetField:
        return tractor_curvature_from_stack(self.curvature)

    @cached_property
    def w_curvature(self) -> JetField:
        return w_curvature_from_kappa(self.kappa)


def tractor_frame(structure: AffineStructure, x, order: int | None = None) -> TractorFrame:
    p = np.asarray(x, dtype=float)
    if p.ndim == 1:
        p = p[None]
    return TractorFrame(structure, p, structure.order if order is None else order)


def canonical_tractors(frame: TractorFrame | int, scale_tag: str | None = None) -> dict[str, ChartTensor]:
    """The splitting tractors ``X``, ``Y``, ``Z`` (``[A, a]``) and ``W`` (``[A, a]``)."""
    if isinstance(frame, TractorFrame):
        n, tag = frame.n, frame.scale_tag
    else:
        n, tag = int(frame), scale_tag
    e0 = np.zeros(n + 1)
    e0[0] = 1.0
    emb = np.zeros((n + 1, n))
    emb[1:, :] = np.eye(n)
    return {
        "X": ChartTensor(n, (TR,), 1.0, e0, tag),
        "Y": ChartTensor(n, (COTR,), -1.0, e0, tag),
        "Z": ChartTensor(n, (COTR, TAN), -1.0, emb, tag),
        "W": ChartTensor(n, (TR, COT), 1.0, emb, tag),
    }


def _check_scale(frame: TractorFrame, t) -> None:
    if t.scale_tag is not None and t.scale_tag != frame.scale_tag:
        raise ScaleError(f"field is expressed in scale {t.scale_tag!r}, frame is {frame.scale_tag!r}")


def tractor_covd(frame: TractorFrame, t: JetField) -> JetField:
    """Coupled covariant derivative ``nabla_a t`` (new cotangent slot first)."""
    _check_scale(frame, t)
    t = t.with_scale(frame.scale_tag)
    return covariant_derivative(t, frame.gamma, frame.connection_matrix)


def thomas_d(frame: TractorFrame, v: JetField) -> JetField:
    """``D_A v = w Y_A v + Z_A^a nabla_a v``: new cotractor slot first, weight ``w - 1``."""
    nab = tractor_covd(frame, v)
    b = nab.batch_ndim
    head = (v.truncate(nab.order) * v.weight).data
    vb = v.batch_ndim
    head = head.reshape(head.shape[:vb] + (1,) * (b - vb) + head.shape[vb:])
    head = np.broadcast_to(head, nab.data.shape[:b] + head.shape[b:])
    head = np.expand_dims(head, b)
    data = np.concatenate([head, nab.data], axis=b)
    return JetField(v.n, (COTR,) + v.slots, v.weight - 1.0, data, frame.scale_tag, order=nab.order)


def thomas_d_power(frame: TractorFrame, v: JetField, times: int) -> JetField:
    out = v
    for _ in range(times):
        out = thomas_d(frame, out)
    return out


def tractor_curvature_from_stack(c: CurvatureJets) -> JetField:
    """``kappa[a, b, C, D]``: ``W_ab^c_d`` on ``W``/``Z`` slots and ``-C_abd`` on ``X``/``Z``."""
    n = c.weyl.n
    order = min(c.weyl.order, c.cotton.order)
    w = c.weyl.truncate(order).data
    cot = c.cotton.truncate(order).data
    data = np.zeros(w.shape[:-5] + (n, n, n + 1, n + 1, w.shape[-1]))
    data[..., 1:, 1:, :] = w
    data[..., 0, 1:, :] = -cot
    return JetField(n, (COT, COT, TR, COTR), 0.0, data, c.weyl.scale_tag, order=order)


def tractor_curvature(frame: TractorFrame, check: bool = True, tol: float = 1e-10) -> JetField:
    """Tractor curvature from the curvature stack.

    With ``check`` the result is compared against the commutator of the
    tractor connection on a basis of tractors; a disagreement raises
    :class:`ConsistencyError`.
    """
    kappa = frame.kappa
    if check:
        comm = curvature_by_commutator(frame)
        diff = np.max(np.abs(comm.data[..., 0] - kappa.data[..., 0]), initial=0.0)
        scale = max(1.0, float(np.max(np.abs(kappa.data[..., 0]), initial=0.0)))
        if diff > tol * scale:
            raise ConsistencyError(f"tractor curvature disagrees with the commutator by {diff:.3g}")
    return kappa


def curvature_by_commutator(frame: TractorFrame) -> JetField:
    """``[nabla_a, nabla_b] e_D`` for the constant tractor basis ``e_D`` (weight 0)."""
    n = frame.n
    if frame.order < 2:
        raise OrderError("commutator needs connection jets of order >= 2")
    basis = np.eye(n + 1)[None]  # batch (1, D), slot C
    v = ChartTensor(n, (TR,), 0.0, basis, frame.scale_tag).to_jet(frame.order)
    second = tractor_covd(frame, tractor_covd(frame, v))  # [p, D] batch, [a, b, C]
    comm = second - second.swap(0, 1)
    # move the basis batch axis to the last slot position: [p, a, b, C, D]
    data = np.moveaxis(comm.data, 1, -2)
    return JetField(n, (COT, COT, TR, COTR), 0.0, data, frame.scale_tag, order=comm.order)


def w_curvature_from_kappa(kappa: JetField) -> JetField:
    """``W_AB^C_D = Z_A^a Z_B^b kappa_ab^C_D`` (weight -2)."""
    n = kappa.n
    shape = kappa.data.shape
    b = kappa.batch_ndim
    data = np.zeros(shape[:b] + (n + 1, n + 1) + shape[b + 2 :])
    data[(Ellipsis,) + (slice(1, None), slice(1, None)) + (slice(None),) * 3] = kappa.data
    return JetField(n, (COTR, COTR, TR, COTR), -2.0, data, kappa.scale_tag, order=kappa.order)


def w_curvature(frame: TractorFrame) -> JetField:
    return frame.w_curvature


def curvature_sharp(curv, t):
    """Leibniz action of an endomorphism-valued 2-form on a tractor tensor.

    ``curv`` has slots ``(s, s', TR, COTR)`` with ``curv[.., H, G]`` acting as
    ``H <- G``.  Cotractor slots of ``t`` receive ``-curv^E_{C}`` and tractor
    slots ``+curv^{C}_E``.  The output slots are the two form slots of
    ``curv`` followed by the slots of ``t``.
    """
    if curv.rank != 4 or curv.slots[2:] != (TR, COTR):
        raise KindError("curvature must have slots (*, *, tractor, cotractor)")
    if any(not k.is_tractor_type for k in t.slots):
        raise KindError("the sharp action needs a tensor with tractor-type slots only")
    letters = "cdefghijklmn"[: t.rank]
    out_sub = "AB" + letters
    total = None
    for i, kind in enumerate(t.slots):
        t_sub = letters[:i] + "z" + letters[i + 1 :]
        if kind is COTR:
            term = jeinsum(f"ABz{letters[i]},{t_sub}->{out_sub}", curv, t) * -1.0
        else:
            term = jeinsum(f"AB{letters[i]}z,{t_sub}->{out_sub}", curv, t)
        total = term if total is None else total + term
    return total


def w_sharp(wc, t):
    """``W_AB # t`` for a W-curvature-type tensor ``wc``."""
    return curvature_sharp(wc, t)


def kappa_gradient(frame: TractorFrame) -> JetField:
    """``nabla_a kappa_bc^H_G`` as ``[a, b, c, H, G]``."""
    return tractor_covd(frame, frame.kappa)
