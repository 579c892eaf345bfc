"""
Slot-typed component arrays.

Two containers share one slot model:

* :class:`ChartTensor` holds plain components, shape ``(*batch, *extents)``.
* :class:`JetField` holds Taylor coefficients of every component, shape
  ``(*batch, *extents, M)`` with ``M`` the jet size for ``(n, order)``.

Each slot has a :class:`SlotKind`.  Tangent and cotangent slots have extent
``n``; tractor and cotractor slots have extent ``n + 1``.  Batch axes are
leading and broadcast left-aligned: a batch of shape ``(B,)`` combines with a
batch of shape ``(B, L)`` by inserting a trailing singleton axis.

Linear operations on slots (permutation, symmetrisation, contraction) act on
all jet coefficients at once, so they are shared by both containers.
"""

from __future__ import annotations

import itertools
import math
import string
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import KindError, OrderError, ScaleError, ShapeError
from .jets import monomial_table, n_monomials


class SlotKind(Enum):
    TANGENT = "tangent"
    COTANGENT = "cotangent"
    TRACTOR = "tractor"
    COTRACTOR = "cotractor"

    @property
    def dual(self) -> "SlotKind":
        return _DUAL[self]

    @property
    def is_tractor_type(self) -> bool:
        return self in (SlotKind.TRACTOR, SlotKind.COTRACTOR)

    @property
    def is_upper(self) -> bool:
        return self in (SlotKind.TANGENT, SlotKind.TRACTOR)

    def extent(self, n: int) -> int:
        return n + 1 if self.is_tractor_type else n


_DUAL = {
    SlotKind.TANGENT: SlotKind.COTANGENT,
    SlotKind.COTANGENT: SlotKind.TANGENT,
    SlotKind.TRACTOR: SlotKind.COTRACTOR,
    SlotKind.COTRACTOR: SlotKind.TRACTOR,
}

TAN, COT, TR, COTR = SlotKind.TANGENT, SlotKind.COTANGENT, SlotKind.TRACTOR, SlotKind.COTRACTOR


def _merge_scale(a: str | None, b: str | None) -> str | None:
    if a is not None and b is not None and a != b:
        raise ScaleError(f"tractor data from splittings {a!r} and {b!r} cannot be combined")
    return a if a is not None else b


class _Slotted:
    """Shared slot bookkeeping; ``_tail`` is the number of trailing non-slot axes."""

    _tail = 0
    __slots__ = ("n", "slots", "weight", "scale_tag", "data")

    def __init__(self, n: int, slots: Iterable[SlotKind], weight: float, data, scale_tag: str | None = None):
        self.n = int(n)
        self.slots = tuple(slots)
        self.weight = float(weight)
        self.scale_tag = scale_tag
        self.data = np.asarray(data, dtype=float)
        extents = tuple(k.extent(self.n) for k in self.slots)
        lo = self.data.ndim - self._tail - len(extents)
        if lo < 0 or self.data.shape[lo : lo + len(extents)] != extents:
            raise ShapeError(
                f"component array of shape {self.data.shape} does not fit slots "
                f"{[k.value for k in self.slots]} with n={self.n}"
            )

    # bookkeeping --------------------------------------------------------
    @property
    def rank(self) -> int:
        return len(self.slots)

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(k.extent(self.n) for k in self.slots)

    @property
    def batch_ndim(self) -> int:
        return self.data.ndim - self._tail - self.rank

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.data.shape[: self.batch_ndim]

    def _axis(self, slot: int) -> int:
        if not -self.rank <= slot < self.rank:
            raise ShapeError(f"slot {slot} out of range for rank {self.rank}")
        return self.batch_ndim + (slot % self.rank)

    def _new(self, data, slots=None, weight=None, scale_tag="keep"):
        return type(self)._build(
            self,
            data,
            self.slots if slots is None else slots,
            self.weight if weight is None else weight,
            self.scale_tag if scale_tag == "keep" else scale_tag,
        )

    @classmethod
    def _build(cls, proto, data, slots, weight, scale_tag):
        return cls(proto.n, slots, weight, data, scale_tag)

    def _check_compatible(self, other: "_Slotted") -> str | None:
        if self.n != other.n or self.slots != other.slots:
            raise ShapeError("operands have different slot structure")
        if not math.isclose(self.weight, other.weight, abs_tol=1e-12):
            raise ShapeError(f"weights differ: {self.weight} vs {other.weight}")
        return _merge_scale(self.scale_tag, other.scale_tag)

    # slot algebra -------------------------------------------------------
    def permute(self, order: Sequence[int]) -> "_Slotted":
        """New tensor whose slot ``i`` is old slot ``order[i]``."""
        order = [o % self.rank for o in order]
        if sorted(order) != list(range(self.rank)):
            raise ShapeError(f"{order} is not a permutation of {self.rank} slots")
        b = self.batch_ndim
        axes = list(range(b)) + [b + o for o in order] + list(range(b + self.rank, self.data.ndim))
        return self._new(np.transpose(self.data, axes), [self.slots[o] for o in order])

    def swap(self, i: int, j: int) -> "_Slotted":
        order = list(range(self.rank))
        order[i], order[j] = order[j], order[i]
        return self.permute(order)

    def _check_same_kind(self, slot_set: Sequence[int]) -> list[int]:
        slot_set = [s % self.rank for s in slot_set]
        if len(set(slot_set)) != len(slot_set):
            raise ShapeError(f"repeated slot in {slot_set}")
        kinds = {self.slots[s] for s in slot_set}
        if len(kinds) > 1:
            raise ShapeError(f"slot set mixes kinds {[k.value for k in kinds]}")
        return slot_set

    def _average(self, slot_set: Sequence[int], signed: bool):
        slot_set = self._check_same_kind(slot_set)
        if len(slot_set) < 2:
            return self._new(self.data.copy())
        acc = np.zeros_like(self.data)
        base = list(range(self.data.ndim))
        perms = list(itertools.permutations(range(len(slot_set))))
        for perm in perms:
            axes = base.copy()
            for src, dst in zip(slot_set, perm):
                axes[self._axis(src)] = self._axis(slot_set[dst])
            sign = _perm_sign(perm) if signed else 1
            acc += sign * np.transpose(self.data, axes)
        return self._new(acc / len(perms))

    def symmetrize(self, slot_set: Sequence[int]):
        return self._average(slot_set, signed=False)

    def antisymmetrize(self, slot_set: Sequence[int]):
        return self._average(slot_set, signed=True)

    def contract(self, slot_a: int, slot_b: int):
        a, b = slot_a % self.rank, slot_b % self.rank
        if a == b:
            raise ShapeError("cannot contract a slot with itself")
        if self.slots[a].dual is not self.slots[b]:
            raise KindError(
                f"cannot contract {self.slots[a].value} with {self.slots[b].value}"
            )
        data = np.trace(self.data, axis1=self._axis(a), axis2=self._axis(b))
        slots = [k for i, k in enumerate(self.slots) if i not in (a, b)]
        return self._new(data, slots)

    def pick(self, slot: int, index: int):
        """Fix one slot to a single component, dropping the slot."""
        ax = self._axis(slot)
        sl = [slice(None)] * self.data.ndim
        sl[ax] = index
        data = self.data[tuple(sl)]
        slots = [k for i, k in enumerate(self.slots) if i != slot % self.rank]
        return self._new(data, slots)

    def expand_batch(self, extra: int) -> "_Slotted":
        """Append ``extra`` singleton batch axes."""
        b = self.batch_ndim
        shape = self.data.shape[:b] + (1,) * extra + self.data.shape[b:]
        return self._new(self.data.reshape(shape))

    def with_weight(self, weight: float):
        return self._new(self.data, weight=weight)

    def with_scale(self, scale_tag: str | None):
        return self._new(self.data, scale_tag=scale_tag)

    def slot_array(self) -> np.ndarray:
        return self.data

    # arithmetic ---------------------------------------------------------
    def _binop(self, other, sign: float):
        if isinstance(other, _Slotted):
            tag = self._check_compatible(other)
            a, b = _align_data(self, other)
            if type(self) is type(other):
                return self._new(a + sign * b, scale_tag=tag)
            return NotImplemented
        raise TypeError(f"cannot add {type(other).__name__} to a tensor")

    def __add__(self, other):
        return self._binop(other, 1.0)

    def __sub__(self, other):
        return self._binop(other, -1.0)

    def __neg__(self):
        return self._new(-self.data)

    def __mul__(self, c):
        c = np.asarray(c, dtype=float)
        if c.ndim:
            c = c.reshape(c.shape + (1,) * (self.data.ndim - c.ndim))
        return self._new(self.data * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / np.asarray(c, dtype=float))


def _perm_sign(perm: Sequence[int]) -> int:
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def _align_data(a: _Slotted, b: _Slotted) -> tuple[np.ndarray, np.ndarray]:
    """Component arrays with batch ranks equalised (left-aligned)."""
    da, db = a.data, b.data
    na, nb = a.batch_ndim, b.batch_ndim
    if na < nb:
        da = da.reshape(da.shape[:na] + (1,) * (nb - na) + da.shape[na:])
    elif nb < na:
        db = db.reshape(db.shape[:nb] + (1,) * (na - nb) + db.shape[nb:])
    if isinstance(a, JetField) and isinstance(b, JetField) and a.order != b.order:
        m = n_monomials(a.n, min(a.order, b.order))
        da, db = da[..., :m], db[..., :m]
    return da, db


class ChartTensor(_Slotted):
    """Component array at one point (or a batch of points) with slot metadata.

    Parameters
    ----------
    n : int
        Chart dimension.
    slots : sequence of SlotKind
    weight : float
        Projective weight.
    components : array_like
        Shape ``(*batch, *extents)``.
    scale_tag : str, optional
        Representative connection whose splitting the tractor slots use.
    """

    _tail = 0
    __slots__ = ()

    @property
    def components(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        kinds = ",".join(k.value for k in self.slots)
        return f"ChartTensor(n={self.n}, slots=[{kinds}], weight={self.weight}, batch={self.batch_shape})"

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def to_jet(self, order: int) -> "JetField":
        """Constant jet field with these values."""
        m = n_monomials(self.n, order)
        data = np.zeros(self.data.shape + (m,))
        data[..., 0] = self.data
        return JetField(self.n, self.slots, self.weight, data, self.scale_tag, order=order)


class JetField(_Slotted):
    """Jets of every component of a slot-typed field.

    ``data[..., k]`` is the Taylor coefficient of monomial ``k`` in the
    ordering of :func:`projtractor.jets.monomial_table`.
    """

    _tail = 1
    __slots__ = ("order",)

    def __init__(self, n, slots, weight, data, scale_tag=None, *, order: int | None = None):
        data = np.asarray(data, dtype=float)
        if order is None:
            order = _order_from_size(int(n), data.shape[-1])
        if data.shape[-1] != n_monomials(int(n), order):
            raise ShapeError(f"jet axis of length {data.shape[-1]} does not match order {order}")
        self.order = order
        super().__init__(n, slots, weight, data, scale_tag)

    @classmethod
    def _build(cls, proto, data, slots, weight, scale_tag):
        return cls(proto.n, slots, weight, data, scale_tag, order=_order_from_size(proto.n, np.shape(data)[-1]))

    def __repr__(self) -> str:
        kinds = ",".join(k.value for k in self.slots)
        return (
            f"JetField(n={self.n}, slots=[{kinds}], weight={self.weight}, "
            f"order={self.order}, batch={self.batch_shape})"
        )

    @classmethod
    def from_scalar_jets(cls, n, slots, weight, jets_array, scale_tag=None) -> "JetField":
        """Assemble from a nested list/array of :class:`~projtractor.jets.Jet`."""
        arr = np.asarray(jets_array, dtype=object)
        flat = [j.coeffs for j in arr.ravel()]
        order = min(j.order for j in arr.ravel())
        m = n_monomials(n, order)
        stacked = np.stack([np.broadcast_to(c[..., :m], np.broadcast_shapes(*[f.shape[:-1] for f in flat]) + (m,)) for c in flat])
        stacked = stacked.reshape(arr.shape + stacked.shape[1:])
        # move batch axes in front of slot axes
        nb = stacked.ndim - arr.ndim - 1
        axes = list(range(arr.ndim, arr.ndim + nb)) + list(range(arr.ndim)) + [stacked.ndim - 1]
        return cls(n, slots, weight, np.transpose(stacked, axes), scale_tag, order=order)

    def value(self) -> ChartTensor:
        return ChartTensor(self.n, self.slots, self.weight, self.data[..., 0], self.scale_tag)

    def truncate(self, order: int) -> "JetField":
        if order > self.order:
            raise OrderError(f"cannot raise order {self.order} to {order}")
        return JetField(
            self.n, self.slots, self.weight, self.data[..., : n_monomials(self.n, order)], self.scale_tag, order=order
        )

    def partial(self, i: int) -> "JetField":
        """Componentwise ``d/dx_i``, one order lower."""
        if self.order == 0:
            raise OrderError("field has no derivatives left")
        t = monomial_table(self.n, self.order)
        return JetField(
            self.n, self.slots, self.weight, self.data[..., t.deriv_src[i]] * t.deriv_fac[i], self.scale_tag, order=self.order - 1
        )

    def gradient(self) -> "JetField":
        """Componentwise partial derivatives as a new cotangent slot in position 0."""
        if self.order == 0:
            raise OrderError("field has no derivatives left")
        t = monomial_table(self.n, self.order)
        stacked = self.data[..., t.deriv_src] * t.deriv_fac  # (..., n, M')
        b = self.batch_ndim
        stacked = np.moveaxis(stacked, -2, b)
        return JetField(self.n, (COT,) + self.slots, self.weight, stacked, self.scale_tag, order=self.order - 1)

    def _binop(self, other, sign):
        if isinstance(other, ChartTensor):
            other = other.to_jet(self.order)
        return super()._binop(other, sign)

    def __radd__(self, other):
        return self.__add__(other)

    def norm_value(self) -> float:
        return float(np.linalg.norm(self.data[..., 0]))


def _order_from_size(n: int, m: int) -> int:
    k = 0
    while n_monomials(n, k) < m:
        k += 1
    if n_monomials(n, k) != m:
        raise ShapeError(f"{m} is not a jet size for n={n}")
    return k


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------


def _parse_subscripts(subscripts: str, a: _Slotted, b: _Slotted):
    try:
        lhs, out = subscripts.replace(" ", "").split("->")
        la, lb = lhs.split(",")
    except ValueError:
        raise ShapeError(f"bad subscripts {subscripts!r}") from None
    if len(la) != a.rank or len(lb) != b.rank:
        raise ShapeError(f"subscripts {subscripts!r} do not match ranks {a.rank}, {b.rank}")
    for letters in (la, lb, out):
        if len(set(letters)) != len(letters):
            raise ShapeError(f"repeated index within one operand in {subscripts!r}")
    kinds: dict[str, SlotKind] = {}
    for letters, t in ((la, a), (lb, b)):
        for ch, k in zip(letters, t.slots):
            if ch in kinds:
                prev = kinds[ch]
                if ch in out:
                    if prev is not k:
                        raise KindError(f"index {ch!r} kept with kinds {prev.value} and {k.value}")
                elif prev.dual is not k:
                    raise KindError(f"index {ch!r} contracts {prev.value} with {k.value}")
            else:
                kinds[ch] = k
    for ch in out:
        if ch not in kinds:
            raise ShapeError(f"output index {ch!r} not present in inputs")
    for ch in kinds:
        if ch not in out and not (ch in la and ch in lb):
            raise ShapeError(f"index {ch!r} is summed over one operand only")
    return la, lb, out, [kinds[ch] for ch in out]


def _translate(*groups: str) -> tuple[list[str], str]:
    letters = sorted(set("".join(groups)))
    pool = [c for c in string.ascii_letters if c not in ("Z",)]
    table = {ch: pool[i] for i, ch in enumerate(letters)}
    return ["".join(table[c] for c in g) for g in groups], "Z"


def jeinsum(subscripts: str, a: _Slotted, b: _Slotted) -> _Slotted:
    """Slot contraction / product of two fields, e.g. ``"abc,cd->abd"``.

    Letters refer to slots only; batch axes broadcast automatically.  A letter
    shared by both inputs and absent from the output is summed and must join
    dual kinds.  When both inputs are :class:`JetField`, components multiply
    as truncated Taylor series.
    """
    if a.n != b.n:
        raise ShapeError(f"chart dimensions differ: {a.n} vs {b.n}")
    la, lb, out, out_kinds = _parse_subscripts(subscripts, a, b)
    (la, lb, out), jet = _translate(la, lb, out)
    tag = _merge_scale(a.scale_tag, b.scale_tag)
    weight = a.weight + b.weight
    da, db = _align_data(a, b)
    a_jet, b_jet = isinstance(a, JetField), isinstance(b, JetField)
    if a_jet and b_jet:
        order = min(a.order, b.order)
        t = monomial_table(a.n, order)
        if order == 0:
            data = np.einsum(f"...{la}{jet},...{lb}{jet}->...{out}{jet}", da, db)
        else:
            prod = np.einsum(
                f"...{la}{jet},...{lb}{jet}->...{out}{jet}",
                da[..., t.left],
                db[..., t.right],
                optimize=True,
            )
            data = np.add.reduceat(prod, t.starts, axis=-1)
        return JetField(a.n, out_kinds, weight, data, tag, order=order)
    if a_jet:
        data = np.einsum(f"...{la}{jet},...{lb}->...{out}{jet}", da, db, optimize=True)
        return JetField(a.n, out_kinds, weight, data, tag, order=a.order)
    if b_jet:
        data = np.einsum(f"...{la},...{lb}{jet}->...{out}{jet}", da, db, optimize=True)
        return JetField(a.n, out_kinds, weight, data, tag, order=b.order)
    data = np.einsum(f"...{la},...{lb}->...{out}", da, db, optimize=True)
    return ChartTensor(a.n, out_kinds, weight, data, tag)


def tensor_product(a: _Slotted, b: _Slotted) -> _Slotted:
    """Outer product; slots concatenate and weights add."""
    letters = string.ascii_letters
    la, lb = letters[: a.rank], letters[a.rank : a.rank + b.rank]
    return jeinsum(f"{la},{lb}->{la}{lb}", a, b)


def symmetrize(t: _Slotted, slot_set: Sequence[int]) -> _Slotted:
    """Average over all permutations of ``slot_set``; other slots untouched."""
    return t.symmetrize(slot_set)


def antisymmetrize(t: _Slotted, slot_set: Sequence[int]) -> _Slotted:
    """Signed average over all permutations of ``slot_set``."""
    return t.antisymmetrize(slot_set)


def contract(t: _Slotted, slot_a: int, slot_b: int) -> _Slotted:
    return t.contract(slot_a, slot_b)


def young_project_rr(t: _Slotted, r: int) -> _Slotted:
    """Unnormalised projection onto the ``(r, r)`` Young symmetry class.

    Skews each pair of slots ``(i, r + i)``, then symmetrises the first ``r``
    slots and the last ``r`` slots.  The result is idempotent only up to a
    fixed positive scalar (``1`` for ``r = 1`` and ``3/4`` for ``r = 2``).
    """
    if r < 1 or t.rank != 2 * r:
        raise ShapeError(f"expected {2 * r} slots for r={r}, got {t.rank}")
    if len(set(t.slots)) != 1 or not t.slots[0].is_tractor_type:
        raise ShapeError("young_project_rr needs slots of a single tractor-type kind")
    out = t
    for i in range(r):
        out = out.antisymmetrize([i, r + i])
    out = out.symmetrize(list(range(r)))
    return out.symmetrize(list(range(r, 2 * r)))


def young_matrix(n_ext: int, r: int) -> np.ndarray:
    """Matrix of :func:`young_project_rr` on the flattened ``n_ext ** (2r)`` fibre."""
    size = n_ext ** (2 * r)
    eye = np.eye(size).reshape((size,) + (n_ext,) * (2 * r))
    t = ChartTensor(n_ext - 1, [COTR] * (2 * r), 0.0, eye)
    return young_project_rr(t, r).data.reshape(size, size).T


def young_class_residual(t: _Slotted, r: int) -> float:
    """Largest violation of the ``(r, r)`` class conditions.

    Checks symmetry in the first ``r`` slots, symmetry in the last ``r`` slots
    and vanishing of the symmetrisation over the last ``r`` slots plus any one
    of the first ``r``.
    """
    data = t.data
    worst = 0.0
    first, last = list(range(r)), list(range(r, 2 * r))
    scale = max(1.0, float(np.max(np.abs(data))) if data.size else 1.0)
    worst = max(worst, float(np.max(np.abs(t.symmetrize(first).data - data), initial=0.0)))
    worst = max(worst, float(np.max(np.abs(t.symmetrize(last).data - data), initial=0.0)))
    for i in first:
        worst = max(worst, float(np.max(np.abs(t.symmetrize([i] + last).data), initial=0.0)))
    return worst / scale


def young_dimension(m: int, r: int) -> int:
    """Dimension of the ``(r, r)`` Young class over ``R^m`` (hook content formula)."""
    shape = [r, r]
    num = 1
    den = 1
    for row, length in enumerate(shape):
        for col in range(length):
            num *= m + col - row
            arm = length - col - 1
            leg = sum(1 for rr in range(row + 1, len(shape)) if shape[rr] > col)
            den *= arm + leg + 1
    return num // den
