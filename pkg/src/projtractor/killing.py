"""
Killing tensors and their tractor prolongation.

A rank ``r`` Killing candidate is a symmetric covariant tensor ``k`` of
projective weight ``2r``.  The pipeline is

* ``inject_k``: ``K_{B..C} = Z_B^b .. Z_C^c k_{b..c}``;
* ``splitting_L``: ``L = P_(r,r)(D^r K)`` with the unnormalised Young
  projector, so ``X..X L`` recovers ``K`` up to a rank-dependent constant;
* the prolongation connection ``nabla - Q#``, explicit for ranks 1 and 2,
  whose parallel sections correspond to Killing tensors.

The algebraic operators (``Q#``, the curvature action) are written on plain
numpy arrays of tractor components.  Leading axes are batch axes and follow
numpy broadcasting, so one call can evaluate many points and many states.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PreconditionError, ShapeError, UnsupportedRankError
from .geometry import AffineStructure, covariant_derivative, evaluate_components
from .jets import n_monomials
from .tensors import COT, COTR, ChartTensor, JetField, young_project_rr
from .tractor import (
    TractorFrame,
    kappa_gradient,
    thomas_d,
    thomas_d_power,
    tractor_covd,
)

RECOVERY_CONSTANTS = {1: 1.0, 2: 1.5}


# ---------------------------------------------------------------------------
# candidates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KillingCandidate:
    """A symmetric rank ``r`` tensor field given by component specs.

    ``components`` is an ``r``-fold nested ``n x .. x n`` sequence of
    expression strings, numbers or callables (or one callable returning the
    nested sequence).  With ``lift=True`` the components are the classical
    (unweighted) ones and are multiplied by ``det(g) ** (-r / (n + 1))`` of the
    structure's metric to give a section of weight ``2r``.
    """

    rank: int
    components: object
    lift: bool = False
    label: str = ""


def candidate_jet(structure: AffineStructure, cand: KillingCandidate, x, order: int) -> JetField:
    """Jets of the weighted components of ``cand`` at the points ``x``."""
    n, r = structure.n, cand.rank
    data = evaluate_components(cand.components, x, order, structure.names, (n,) * r)
    k = JetField(n, (COT,) * r, 2.0 * r, data, order=order)
    asym = max(
        (float(np.max(np.abs(k.data - k.swap(0, i).data), initial=0.0)) for i in range(1, r)),
        default=0.0,
    )
    if asym > 1e-12:
        raise ShapeError(f"Killing candidate is not symmetric (deviation {asym:.3g})")
    if cand.lift:
        from .geometry import volume_density

        if structure.metric is None:
            raise PreconditionError("density lift needs a metric")
        nu = volume_density(structure, x, order, -r / (n + 1))
        k = _scale_by_scalar(k, nu)
    return k


def _scale_by_scalar(t: JetField, s: JetField) -> JetField:
    from .tensors import jeinsum

    letters = "abcdefgh"[: t.rank]
    out = jeinsum(f",{letters}->{letters}", s, t)
    return out.with_weight(t.weight)


def random_symmetric_jet(n: int, r: int, batch: Sequence[int], order: int, rng, weight: float | None = None) -> JetField:
    """Random symmetric ``r``-tensor jets (Taylor data of a random polynomial field)."""
    data = rng.normal(size=tuple(batch) + (n,) * r + (n_monomials(n, order),))
    t = JetField(n, (COT,) * r, 2.0 * r if weight is None else weight, data, order=order)
    return t.symmetrize(list(range(r))) if r > 1 else t


# ---------------------------------------------------------------------------
# Killing operator, inclusion and splitting
# ---------------------------------------------------------------------------


def killing_operator(gamma: JetField, k: JetField) -> JetField:
    """Symmetrised covariant derivative ``nabla_(a0 k_a1..ar)`` including the density term."""
    nab = covariant_derivative(k, gamma.with_scale(k.scale_tag))
    return nab.symmetrize(list(range(nab.rank)))


def inject_k(k: JetField, scale_tag: str | None = None) -> JetField:
    """``K_{B..C} = Z_B^b .. Z_C^c k_{b..c}`` (weight ``r``, zero on every ``Y`` slot)."""
    n, r = k.n, k.rank
    b = k.batch_ndim
    shape = k.data.shape[:b] + (n + 1,) * r + k.data.shape[b + r :]
    data = np.zeros(shape)
    data[(Ellipsis,) + (slice(1, None),) * r + (slice(None),)] = k.data
    return JetField(n, (COTR,) * r, k.weight - r, data, scale_tag or k.scale_tag, order=k.order)


def splitting_L(frame: TractorFrame, k: JetField) -> JetField:
    """``L(k) = P_(r,r)(D^r K)`` (weight 0, ``2r`` cotractor slots)."""
    r = k.rank
    big_k = inject_k(k, frame.scale_tag)
    return young_project_rr(thomas_d_power(frame, big_k, r), r)


def tractor_killing(frame: TractorFrame, k: JetField) -> JetField:
    """Full symmetrisation of ``D_A K_{B..C}``."""
    dk = thomas_d(frame, inject_k(k, frame.scale_tag))
    return dk.symmetrize(list(range(dk.rank)))


def recover_k(l_state, r: int, constant: float | None = None) -> np.ndarray:
    """``k`` from a prolongation state: contract ``r`` copies of ``X`` into the
    first index group, keep the ``Z`` slots and divide by the recovery constant.

    Works on raw arrays with the ``2r`` tractor axes last.
    """
    if constant is None:
        if r not in RECOVERY_CONSTANTS:
            raise UnsupportedRankError(f"no recovery constant for rank {r}; pass one measured by recovery_constant")
        constant = RECOVERY_CONSTANTS[r]
    arr = l_state.data if isinstance(l_state, (ChartTensor, JetField)) else np.asarray(l_state)
    tail = 1 if isinstance(l_state, JetField) else 0
    idx = (Ellipsis,) + (0,) * r + (slice(1, None),) * r + (slice(None),) * tail
    return arr[idx] / constant


def recovery_constant(frame: TractorFrame, r: int, rng) -> float:
    """Measure ``c`` in ``X..X P(D^r K) = c K`` on a random symmetric ``k``."""
    k = random_symmetric_jet(frame.n, r, frame.points.shape[:-1], r, rng)
    l_val = splitting_L(frame, k).value().data
    got = recover_k(l_val, r, constant=1.0)
    want = k.data[..., 0]
    return float(np.vdot(got, want) / np.vdot(want, want))


# ---------------------------------------------------------------------------
# algebra on raw arrays
# ---------------------------------------------------------------------------


def sharp(endo: np.ndarray, t: np.ndarray, form_ndim: int, kinds: str | None = None) -> np.ndarray:
    """Leibniz action of an endomorphism-valued form on a tractor tensor.

    ``endo`` has shape ``(..., *form, N, N)`` with ``endo[.., H, G]`` mapping
    ``G`` to ``H``; ``t`` has shape ``(..., N, .., N)``.  ``kinds`` lists the
    slot kinds of ``t`` as ``'l'`` (cotractor, default) or ``'u'`` (tractor).
    The result has shape ``(..., *form, *t_slots)``.
    """
    rank = len(kinds) if kinds is not None else None
    if rank is None:
        raise ValueError("slot kinds of t must be given")
    form = "pqrs"[:form_ndim]
    slots = "abcdefgh"[:rank]
    total = 0.0
    for i, kind in enumerate(kinds):
        t_sub = slots[:i] + "x" + slots[i + 1 :]
        if kind == "l":
            total = total - np.einsum(f"...{form}x{slots[i]},...{t_sub}->...{form}{slots}", endo, t)
        else:
            total = total + np.einsum(f"...{form}{slots[i]}x,...{t_sub}->...{form}{slots}", endo, t)
    return total


def sharp_at(endo: np.ndarray, t: np.ndarray, form_ndim: int, kinds: str, fixed: Sequence[int | None]) -> np.ndarray:
    """:func:`sharp` with some output slots pinned to one component.

    ``fixed[i]`` is ``None`` for a free slot or the component index to keep;
    pinned slots are dropped from the output.  Equal to slicing the full
    :func:`sharp` result, without forming it.
    """
    rank = len(kinds)
    form = "pqrs"[:form_ndim]
    slots = "abcdefgh"[:rank]
    free = "".join(s for s, f in zip(slots, fixed) if f is None)
    total = 0.0
    for i, kind in enumerate(kinds):
        idx = [slice(None)] * rank
        sub = ""
        for j in range(rank):
            if j == i:
                sub += "x"
            elif fixed[j] is None:
                sub += slots[j]
            else:
                idx[j] = fixed[j]
        tt = t[(Ellipsis,) + tuple(idx)]
        own = slots[i] if fixed[i] is None else ""
        if kind == "l":
            e = endo if fixed[i] is None else endo[..., fixed[i]]
            total = total - np.einsum(f"...{form}x{own},...{sub}->...{form}{free}", e, tt)
        else:
            e = endo if fixed[i] is None else endo[..., fixed[i], :]
            total = total + np.einsum(f"...{form}{own}x,...{sub}->...{form}{free}", e, tt)
    return total


def _sym(a: np.ndarray, ax1: int, ax2: int) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, ax1, ax2))


def _embed(n: int) -> np.ndarray:
    z = np.zeros((n + 1, n))
    z[1:] = np.eye(n)
    return z


def rank1_q_sharp(kappa: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``Q_a # V`` for the rank-1 prolongation connection.

    ``kappa`` has shape ``(..., n, n, N, N)`` and ``v`` ``(..., N, N)``; the
    result ``[.., a, B, C]`` equals ``-Z_B^b Z_C^c kappa_bc^E_a V_E0``, so
    that ``nabla V - Q # V`` is the displayed rank-1 connection.
    """
    n = kappa.shape[-3]
    z = _embed(n)
    # kappa_bc^E_a: G slot = a + 1
    ka = kappa[..., :, :, :, 1:]  # [b, c, E, a]
    core = np.einsum("...bcea,...e->...abc", ka, v[..., :, 0])
    return -np.einsum("Bb,Cc,...abc->...aBC", z, z, core)


def _m_pair(kappa: np.ndarray, dkappa: np.ndarray, n: int) -> np.ndarray:
    """``3 Y_(P Z_Q)^b kappa_bc - Z_(P^a Z_Q)^b nabla_a kappa_bc`` as ``[c, P, Q, H, G]``."""
    z = _embed(n)
    y = np.zeros(n + 1)
    y[0] = 1.0
    first = 3.0 * np.einsum("P,Qb,...bcHG->...cPQHG", y, z, kappa)
    second = np.einsum("Pa,Qb,...abcHG->...cPQHG", z, z, dkappa)
    m = first - second
    return _sym(m, -4, -3)


def _m_triple(kappa: np.ndarray, dkappa: np.ndarray, n: int) -> np.ndarray:
    """``3 Y_(P Z_Q)^b Z_R^d kappa_bd - Z_(P^a Z_Q)^b Z_R^d nabla_a kappa_bd`` as ``[P, Q, R, H, G]``."""
    z = _embed(n)
    y = np.zeros(n + 1)
    y[0] = 1.0
    first = 3.0 * np.einsum("P,Qb,Rd,...bdHG->...PQRHG", y, z, z, kappa)
    second = np.einsum("Pa,Qb,Rd,...abdHG->...PQRHG", z, z, z, dkappa)
    return _sym(first - second, -5, -4)


def rank2_q_sharp_tractor(kappa: np.ndarray, dkappa: np.ndarray, l_state: np.ndarray) -> np.ndarray:
    """Right-hand side of the tractor-connection form of the rank-2 prolongation.

    Parameters
    ----------
    kappa : ndarray, shape (..., n, n, N, N)
        Tractor curvature ``kappa_bc^H_G``.
    dkappa : ndarray, shape (..., n, n, n, N, N)
        ``nabla_a kappa_bc^H_G`` as ``[a, b, c, H, G]``.
    l_state : ndarray, shape (..., N, N, N, N)
        ``L_DEAB`` in the (2,2) class.

    Returns
    -------
    ndarray, shape (..., n, N, N, N, N)
        ``Q_c # L`` as ``[c, D, E, A, B]``; the sharp action is applied to all
        slots of ``L`` before the ``X`` and ``W`` contractions.
    """
    n = kappa.shape[-3]
    z = _embed(n)
    L4 = "llll"
    out = 0.0

    # X^F ( Z_(A^a kappa_|ca| # L_B)FED + Z_(D^a kappa_|ca| # L_E)FAB )
    e1 = np.einsum("Aa,...caHG->...cAHG", z, kappa)
    u = sharp_at(e1, l_state, 2, L4, (None, 0, None, None))  # [c, P, s1, s3, s4]
    part = np.einsum("...cABED->...cDEAB", u)
    out = out + _sym(part, -2, -1)
    out = out + _sym(u, -4, -3)  # [c, D, E, A, B] with P = D, L_{E F A B}

    # X^F W^C_c Z_(A^a Z_|(D^d kappa_|ad| # (L_E)F|B)C - L_E)C|B)F)
    e2 = np.einsum("Aa,Dd,...adHG->...ADHG", z, z, kappa)
    first = sharp_at(e2, l_state, 2, L4, (None, 0, None, None))[..., 1:]  # L_{E F B C}: [A, D, E, B, c]
    second = sharp_at(e2, l_state, 2, L4, (None, None, None, 0))[..., 1:, :]  # L_{E C B F}: [A, D, E, c, B]
    part = np.einsum("...ADEBc->...cDEAB", first) - np.einsum("...ADEcB->...cDEAB", second)
    out = out + _sym(_sym(part, -2, -1), -4, -3)

    # X^F X^G M_c(P,Q) # L_{R S F G}
    m = _m_pair(kappa, dkappa, n)  # [c, P, Q, H, G]
    w = sharp_at(m, l_state, 3, L4, (None, None, 0, 0))  # [c, P, Q, R, S]
    out = out - (1.0 / 12.0) * np.einsum("...cADBE->...cDEAB", w)  # (A,D), L_BE
    out = out - (1.0 / 12.0) * np.einsum("...cAEBD->...cDEAB", w)  # (A,E), L_BD
    out = out - (1.0 / 12.0) * np.einsum("...cBDAE->...cDEAB", w)  # (B,D), L_AE
    out = out - (1.0 / 12.0) * np.einsum("...cBEAD->...cDEAB", w)  # (B,E), L_AD
    out = out + (1.0 / 6.0) * np.einsum("...cABDE->...cDEAB", w)  # (A,B), L_DE
    out = out + (1.0 / 6.0) * np.einsum("...cDEAB->...cDEAB", w)  # (D,E), L_AB

    # +1/3 X^F X^G W^C_c M(P,Q,R) # L_{S C F G}
    mt = _m_triple(kappa, dkappa, n)  # [P, Q, R, H, G]
    t = sharp_at(mt, l_state, 3, L4, (None, None, 0, 0))[..., 1:]  # [P, Q, R, S, c]
    part = np.einsum("...ABDEc->...cDEAB", t)
    out = out + (1.0 / 3.0) * _sym(part, -4, -3)
    part = np.einsum("...DEABc->...cDEAB", t)
    out = out + (1.0 / 3.0) * _sym(part, -2, -1)
    return out


def rank2_d_form(w_curv: np.ndarray, dw: np.ndarray, l_state: np.ndarray) -> np.ndarray:
    """Right-hand side of the Thomas-D form ``D_C L_DEAB`` of the rank-2 prolongation.

    ``w_curv`` is ``W_PQ^H_G`` with shape ``(..., N, N, N, N)`` and ``dw`` is
    ``D_P W_QR^H_G`` with shape ``(..., N, N, N, N, N)``.  Returns
    ``[C, D, E, A, B]``.
    """
    L4 = "llll"
    out = 0.0
    u = sharp_at(w_curv, l_state, 2, L4, (None, 0, None, None))  # [P, Q, s1, s3, s4]
    # X^F (W_C(D # L_E)FAB + W_C(A # L_B)FED)
    out = out + _sym(u, -4, -3)  # [C, D, E, A, B]
    part = np.einsum("...CABED->...CDEAB", u)
    out = out + _sym(part, -2, -1)
    # X^F (W_(D|(A # L_B)F|E)C + W_(A|(D # L_E)F|B)C)
    part = np.einsum("...DABEC->...CDEAB", u)
    part = part + np.einsum("...ADEBC->...CDEAB", u)
    out = out + _sym(_sym(part, -2, -1), -4, -3)

    v = sharp_at(dw, l_state, 3, L4, (None, None, 0, 0))  # [P, Q, R, s1, s2]
    # -1/6 X^F X^G (D_(D W_E)C # L_ABFG + D_(A W_B)C # L_DEFG)
    part = np.einsum("...DECAB->...CDEAB", v)
    out = out - (1.0 / 6.0) * _sym(part, -4, -3)
    part = np.einsum("...ABCDE->...CDEAB", v)
    out = out - (1.0 / 6.0) * _sym(part, -2, -1)
    # -1/3 X^F X^G (D_(D W_E)(A # L_B)CFG + D_(A W_B)(D # L_E)CFG)
    part = np.einsum("...DEABC->...CDEAB", v) + np.einsum("...ABDEC->...CDEAB", v)
    out = out - (1.0 / 3.0) * _sym(_sym(part, -2, -1), -4, -3)
    # -1/6 X^F X^G (D_(A W_|C(D| # L_E)|B)FG + D_(D W_|C(A| # L_B)|E)FG)
    part = np.einsum("...ACDEB->...CDEAB", v) + np.einsum("...DCABE->...CDEAB", v)
    out = out - (1.0 / 6.0) * _sym(_sym(part, -2, -1), -4, -3)
    return out


def d_form_to_tractor(d_rhs: np.ndarray) -> np.ndarray:
    """Contract the ``C`` slot of a D-form right-hand side with ``W^C_c``."""
    return d_rhs[..., 1:, :, :, :, :]


# ---------------------------------------------------------------------------
# frame-level operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvatureData:
    """Values of ``kappa``, ``nabla kappa`` and ``D W`` at the frame points."""

    kappa: np.ndarray
    dkappa: np.ndarray
    w: np.ndarray
    dw: np.ndarray


def curvature_data(frame: TractorFrame) -> CurvatureData:
    kappa = frame.kappa
    dk = kappa_gradient(frame)
    dw = thomas_d(frame, frame.w_curvature)
    return CurvatureData(kappa.data[..., 0], dk.data[..., 0], frame.w_curvature.data[..., 0], dw.data[..., 0])


def _bcast(arr: np.ndarray, extra: int, tail: int) -> np.ndarray:
    """Insert ``extra`` singleton batch axes before the last ``tail`` axes."""
    lead = arr.ndim - tail
    return arr.reshape(arr.shape[:lead] + (1,) * extra + arr.shape[lead:])


def rank2_Q_sharp(frame: TractorFrame, l_state, form: str = "tractor", data: CurvatureData | None = None) -> np.ndarray:
    """``Q_c # L`` at the frame points, as ``[.., c, D, E, A, B]``.

    ``l_state`` has shape ``(B, *extra, N, N, N, N)`` with ``B`` the number of
    frame points (or broadcastable to it).
    """
    data = curvature_data(frame) if data is None else data
    arr = l_state.data if isinstance(l_state, ChartTensor) else np.asarray(l_state)
    extra = arr.ndim - 4 - 1
    if form == "tractor":
        return rank2_q_sharp_tractor(_bcast(data.kappa, extra, 4), _bcast(data.dkappa, extra, 5), arr)
    if form == "d":
        return d_form_to_tractor(rank2_d_form(_bcast(data.w, extra, 4), _bcast(data.dw, extra, 5), arr))
    raise ValueError(f"unknown form {form!r}")


def rank2_d_form_rhs(frame: TractorFrame, l_state, data: CurvatureData | None = None) -> np.ndarray:
    data = curvature_data(frame) if data is None else data
    arr = np.asarray(l_state.data if isinstance(l_state, ChartTensor) else l_state)
    extra = arr.ndim - 5
    return rank2_d_form(_bcast(data.w, extra, 4), _bcast(data.dw, extra, 5), arr)


def rank1_prolongation_derivative(frame: TractorFrame, v: JetField) -> JetField:
    """``nabla_a V_BC + W_BC^E_A W^A_a X^F V_EF`` for a field of skew cotractor 2-forms."""
    if v.rank != 2 or any(k is not COTR for k in v.slots):
        raise ShapeError("rank-1 prolongation acts on two cotractor slots")
    if np.max(np.abs(v.data + v.swap(0, 1).data), initial=0.0) > 1e-12:
        raise ShapeError("rank-1 prolongation state must be skew")
    nab = tractor_covd(frame, v)
    kappa = frame.kappa.data[..., 0]
    extra = v.batch_ndim - 1
    q = rank1_q_sharp(_bcast(kappa, extra, 4), v.data[..., 0])
    out = nab.data[..., 0] - q
    return ChartTensor(frame.n, nab.slots, 0.0, out, frame.scale_tag)


def rank1_state(k: JetField, mu: JetField, scale_tag: str | None = None) -> JetField:
    """Skew cotractor 2-form with ``V_0c = k_c``, ``V_b0 = -k_b`` and ``V_bc = mu_bc``.

    This is the splitting of ``L(k)`` when ``mu`` is the skew derivative of ``k``.
    """
    n = k.n
    order = min(k.order, mu.order)
    kd, md = k.truncate(order).data, mu.truncate(order).data
    b = k.batch_ndim
    data = np.zeros(kd.shape[:b] + (n + 1, n + 1, kd.shape[-1]))
    data[..., 0, 1:, :] = kd
    data[..., 1:, 0, :] = -kd
    data[..., 1:, 1:, :] = md
    return JetField(n, (COTR, COTR), 0.0, data, scale_tag or k.scale_tag, order=order)


def rank1_classical_derivative(frame: TractorFrame, k: JetField, mu: JetField) -> tuple[np.ndarray, np.ndarray]:
    """The classical rank-1 prolongation ``(nabla_a k_c - mu_ac, nabla_a mu_bc - R_bc^d_a k_d)`` (values)."""
    gamma = frame.gamma
    nk = covariant_derivative(k.with_scale(frame.scale_tag), gamma).data[..., 0]
    nmu = covariant_derivative(mu.with_scale(frame.scale_tag), gamma).data[..., 0]
    riem = frame.curvature.riemann.data[..., 0]  # [b, c, d, a]
    first = nk - mu.data[..., 0]
    second = nmu - np.einsum("...bcda,...d->...abc", riem, k.data[..., 0])
    return first, second


def rank2_prolongation_derivative(frame: TractorFrame, l_field: JetField, form: str = "tractor") -> ChartTensor:
    """``nabla_c L - Q_c # L`` (values)."""
    if l_field.rank != 4:
        raise UnsupportedRankError("rank-2 prolongation acts on four cotractor slots")
    nab = tractor_covd(frame, l_field)
    q = rank2_Q_sharp(frame, l_field.data[..., 0], form=form)
    return ChartTensor(frame.n, nab.slots, 0.0, nab.data[..., 0] - q, frame.scale_tag)


# ---------------------------------------------------------------------------
# integrability
# ---------------------------------------------------------------------------


def tractor_matrix_values(gamma: np.ndarray, schouten: np.ndarray) -> np.ndarray:
    """``A[.., c, B, C]`` from values of ``Gamma`` and ``P`` (see :func:`tractor.tractor_matrix`)."""
    n = gamma.shape[-1]
    batch = np.broadcast_shapes(gamma.shape[:-3], schouten.shape[:-2])
    a = np.zeros(batch + (n, n + 1, n + 1))
    a[..., :, 0, 1:] = np.eye(n)
    a[..., :, 1:, 0] = -schouten
    a[..., :, 1:, 1:] = gamma
    return a


def tractor_action_values(gamma: np.ndarray, schouten: np.ndarray, t: np.ndarray, rank: int, weight: float = 0.0) -> np.ndarray:
    """Algebraic part of the tractor connection on a cotractor tensor of the given weight.

    ``gamma`` (``[.., a, b, c]``) and ``schouten`` broadcast against the batch
    axes of ``t``.  Returns ``[.., c, *slots]`` with
    ``nabla_c t = d_c t + tractor_action_values(..)``.
    """
    n = gamma.shape[-1]
    a = tractor_matrix_values(gamma, schouten)
    gtrace = np.einsum("...cdd->...c", gamma)
    slots = "abcdefgh"[:rank]
    out = 0.0
    for i in range(rank):
        t_sub = slots[:i] + "x" + slots[i + 1 :]
        out = out - np.einsum(f"...z{slots[i]}x,...{t_sub}->...z{slots}", a, t)
    w_eff = weight + rank
    return out + (w_eff / (n + 1)) * np.einsum(f"...z,...{slots}->...z{slots}", gtrace, t)


def connection_action(frame: TractorFrame, t: np.ndarray, rank: int, weight: float = 0.0) -> np.ndarray:
    """:func:`tractor_action_values` at the frame points.

    ``t`` has shape ``(B, *extra, N, .., N)`` with ``rank`` tractor axes.
    """
    gam = frame.gamma.data[..., 0]
    pp = frame.schouten.data[..., 0]
    extra = t.ndim - rank - (gam.ndim - 3)
    return tractor_action_values(_bcast(gam, extra, 3), _bcast(pp, extra, 2), t, rank, weight)


def _first_order_jet(frame: TractorFrame, l0: np.ndarray, derivative: np.ndarray) -> JetField:
    """Order-1 jet field with value ``l0`` whose covariant derivative is ``derivative``."""
    n = frame.n
    rank = l0.ndim - (frame.points.ndim - 1)
    conn = connection_action(frame, l0, rank)
    partial = derivative - conn  # [.., c, slots]
    data = np.concatenate([l0[..., None], np.moveaxis(partial, -rank - 1, -1)], axis=-1)
    return JetField(n, (COTR,) * rank, 0.0, data, frame.scale_tag, order=1)


def _q_jet(frame: TractorFrame, r: int, lt: JetField) -> JetField:
    """Order-1 jet of ``Q_a # L~`` by the product rule."""
    n = frame.n
    kj = frame.kappa.truncate(1)
    dkj = kappa_gradient(frame).truncate(1) if r == 2 else None
    coeffs = []
    for m in range(n + 1):
        if r == 1:
            term = rank1_q_sharp(kj.data[..., m], lt.data[..., 0])
            if m:
                term = term + rank1_q_sharp(kj.data[..., 0], lt.data[..., m])
        else:
            term = rank2_q_sharp_tractor(kj.data[..., m], dkj.data[..., m], lt.data[..., 0])
            if m:
                term = term + rank2_q_sharp_tractor(kj.data[..., 0], dkj.data[..., 0], lt.data[..., m])
        coeffs.append(term)
    data = np.stack(coeffs, axis=-1)
    return JetField(n, (COT,) + (COTR,) * (2 * r), 0.0, data, frame.scale_tag, order=1)


def q_sharp_values(frame: TractorFrame, r: int, l0: np.ndarray) -> np.ndarray:
    if r == 1:
        return rank1_q_sharp(frame.kappa.data[..., 0], l0)
    if r == 2:
        return rank2_Q_sharp(frame, l0)
    raise UnsupportedRankError(f"no explicit prolongation connection for rank {r}")


def integrability_obstruction(frame: TractorFrame, l_state: np.ndarray, r: int) -> np.ndarray:
    """``kappa_ba # L - (nabla_b(Q_a # L) - nabla_a(Q_b # L))`` with ``nabla L`` replaced by ``Q # L``.

    ``l_state`` has shape ``(B, N, .., N)`` (one state per frame point).
    Returns ``[.., b, a, *slots]``; it vanishes on ``L(k)`` for Killing ``k``.
    """
    if r not in (1, 2):
        raise UnsupportedRankError(f"no explicit integrability operator for rank {r}")
    l0 = np.asarray(l_state)
    q0 = q_sharp_values(frame, r, l0)
    lt = _first_order_jet(frame, l0, q0)
    qj = _q_jet(frame, r, lt)
    nq = tractor_covd(frame, qj).data[..., 0]  # [b, a, slots]
    kap = frame.kappa.data[..., 0]
    curv = sharp(kap, l0, 2, "l" * (2 * r))  # [b, a, slots]
    return curv - (nq - np.swapaxes(nq, -2 * r - 1, -2 * r - 2))


# ---------------------------------------------------------------------------
# flat case, all ranks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlatCheck:
    young_residual: float
    parallel_residual: float
    killing_residual: float
    passed: bool


def flat_case_check(frame: TractorFrame, k: JetField, tol: float = 1e-10, flat_tol: float = 1e-8) -> FlatCheck:
    """On a projectively flat structure, test that ``D^r K`` lies in the
    ``(r, r)`` class exactly when ``k`` is Killing, and that ``P(D^r K)`` is
    parallel for the tractor connection when it is.
    """
    from .tensors import young_class_residual

    kappa = frame.kappa.data[..., 0]
    if np.max(np.abs(kappa), initial=0.0) > flat_tol:
        raise PreconditionError("structure is not projectively flat at the sample points")
    r = k.rank
    big_k = inject_k(k, frame.scale_tag)
    drk = thomas_d_power(frame, big_k, r)
    young = young_class_residual(drk.value(), r)
    l_field = young_project_rr(drk, r)
    par = float(np.max(np.abs(tractor_covd(frame, l_field).data[..., 0]), initial=0.0))
    kil = float(np.max(np.abs(killing_operator(frame.gamma, k).data[..., 0]), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(l_field.data[..., 0]), initial=0.0)))
    par /= scale
    passed = (kil <= tol and young <= tol and par <= tol) or (kil > tol and young > tol)
    return FlatCheck(young, par, kil, passed)


def young_dimension_rr(n: int, r: int) -> int:
    from .tensors import young_dimension

    return young_dimension(n + 1, r)


def t22_rank(n: int) -> int:
    """Rank of the (2,2) tractor bundle: ``(n+1)^2 ((n+1)^2 - 1) / 12``."""
    m = n + 1
    return m * m * (m * m - 1) // 12
