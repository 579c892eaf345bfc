"""
Truncated multivariate Taylor arithmetic.

A :class:`Jet` stores the Taylor coefficients ``d^a f(x0) / a!`` of a scalar
field about a base point, for all multi-indices ``a`` of total degree up to a
truncation order.  Products, quotients and the elementary functions are
computed exactly on the truncated series, so every derivative up to the
truncation order is exact up to floating point rounding.

Coefficient arrays may carry leading axes: a jet with ``coeffs.shape ==
(B, M)`` is a batch of ``B`` jets sharing ``dim`` and ``order`` (for instance
the same field expanded about ``B`` base points).  All operations broadcast
over the leading axes.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NonFiniteError, OrderError, ShapeError, SingularityError

DEFAULT_ORDER = 6


def n_monomials(dim: int, order: int) -> int:
    """Number of multi-indices in ``dim`` variables of degree <= ``order``."""
    return math.comb(dim + order, order)


class MonomialTable:
    """Index tables for jets of a given ``(dim, order)``.

    Monomials are sorted by total degree first, so the table for a lower order
    is a prefix of the table for a higher one and truncation is slicing.
    """

    def __init__(self, dim: int, order: int):
        self.dim = dim
        self.order = order
        exps: list[tuple[int, ...]] = []
        for deg in range(order + 1):
            block = [c for c in itertools.product(range(deg + 1), repeat=dim) if sum(c) == deg]
            exps.extend(sorted(block, reverse=True))
        self.exps = np.array(exps, dtype=np.int64).reshape(len(exps), dim)
        self.size = len(exps)
        self.index = {e: i for i, e in enumerate(exps)}
        self.degrees = self.exps.sum(axis=1)
        self.factorials = np.array(
            [math.prod(math.factorial(int(v)) for v in e) for e in exps], dtype=float
        )

        left, right, target = [], [], []
        for i, ei in enumerate(exps):
            for j, ej in enumerate(exps):
                if self.degrees[i] + self.degrees[j] <= order:
                    left.append(i)
                    right.append(j)
                    target.append(self.index[tuple(a + b for a, b in zip(ei, ej))])
        perm = np.argsort(np.array(target), kind="stable")
        self.left = np.array(left, dtype=np.int64)[perm]
        self.right = np.array(right, dtype=np.int64)[perm]
        tgt = np.array(target, dtype=np.int64)[perm]
        self.starts = np.searchsorted(tgt, np.arange(self.size))

        # d/dx_i maps the monomial a+e_i (coefficient c) to a with factor (a_i + 1)
        m_lower = n_monomials(dim, order - 1) if order > 0 else 0
        self.deriv_src = np.zeros((dim, m_lower), dtype=np.int64)
        self.deriv_fac = np.zeros((dim, m_lower))
        for k in range(m_lower):
            e = list(exps[k])
            for i in range(dim):
                up = e.copy()
                up[i] += 1
                self.deriv_src[i, k] = self.index[tuple(up)]
                self.deriv_fac[i, k] = e[i] + 1

    def multi_index(self, k: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.exps[k])


@lru_cache(maxsize=None)
def monomial_table(dim: int, order: int) -> MonomialTable:
    if dim < 1 or order < 0:
        raise ShapeError(f"invalid jet shape dim={dim}, order={order}")
    return MonomialTable(dim, order)


def mul_coeffs(a: np.ndarray, b: np.ndarray, table: MonomialTable) -> np.ndarray:
    """Truncated product of two coefficient arrays of the same table size."""
    if table.order == 0:
        return a * b
    prod = a[..., table.left] * b[..., table.right]
    return np.add.reduceat(prod, table.starts, axis=-1)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class Jet:
    """Truncated Taylor expansion of a scalar field about a base point.

    Parameters
    ----------
    coeffs : array_like, shape (..., M)
        Taylor-normalised coefficients in the ordering of :func:`monomial_table`.
    dim : int
        Number of chart variables.
    order : int
        Truncation order.
    """

    __slots__ = ("coeffs", "dim", "order")
    __array_priority__ = 1000

    def __init__(self, coeffs, dim: int, order: int):
        coeffs = _as_array(coeffs)
        m = n_monomials(dim, order)
        if coeffs.shape[-1:] != (m,):
            raise ShapeError(f"expected trailing axis of length {m}, got shape {coeffs.shape}")
        self.coeffs = coeffs
        self.dim = dim
        self.order = order

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, dim: int, order: int) -> "Jet":
        value = _as_array(value)
        c = np.zeros(value.shape + (n_monomials(dim, order),))
        c[..., 0] = value
        return cls(c, dim, order)

    @classmethod
    def variable(cls, i: int, point, order: int) -> "Jet":
        """Jet of the coordinate function ``x_i`` about ``point`` (shape (..., dim))."""
        point = _as_array(point)
        dim = point.shape[-1]
        c = np.zeros(point.shape[:-1] + (n_monomials(dim, order),))
        c[..., 0] = point[..., i]
        if order > 0:
            c[..., 1 + i] = 1.0
        return cls(c, dim, order)

    # inspection ---------------------------------------------------------
    @property
    def table(self) -> MonomialTable:
        return monomial_table(self.dim, self.order)

    @property
    def value(self) -> np.ndarray | float:
        v = self.coeffs[..., 0]
        return float(v) if v.ndim == 0 else v

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-1]

    def coeff(self, multi_index: Sequence[int]):
        return self.coeffs[..., self._locate(multi_index)]

    def coeffs_dict(self) -> dict[tuple[int, ...], float]:
        """Map multi-index -> Taylor coefficient (scalar jets only)."""
        if self.coeffs.ndim != 1:
            raise ShapeError("coeffs_dict is only defined for unbatched jets")
        t = self.table
        return {t.multi_index(k): float(self.coeffs[k]) for k in range(t.size)}

    def partial(self, multi_index: Sequence[int]):
        """The derivative value ``d^a f(x0)``."""
        k = self._locate(multi_index)
        return self.coeffs[..., k] * self.table.factorials[k]

    def _locate(self, multi_index: Sequence[int]) -> int:
        mi = tuple(int(v) for v in multi_index)
        if len(mi) != self.dim or any(v < 0 for v in mi):
            raise ShapeError(f"multi-index {mi} does not match dim {self.dim}")
        if sum(mi) > self.order:
            raise OrderError(f"multi-index {mi} exceeds jet order {self.order}")
        return self.table.index[mi]

    def is_constant(self) -> bool:
        return not np.any(self.coeffs[..., 1:])

    def __repr__(self) -> str:
        return f"Jet(dim={self.dim}, order={self.order}, shape={self.shape}, value={self.value!r})"

    # structural ops -----------------------------------------------------
    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise OrderError(f"cannot raise jet order from {self.order} to {order}")
        return Jet(self.coeffs[..., : n_monomials(self.dim, order)], self.dim, order)

    def deriv(self, i: int) -> "Jet":
        """Jet of ``d f / d x_i``, one order lower."""
        if self.order == 0:
            raise OrderError("cannot differentiate an order-0 jet")
        t = self.table
        return Jet(self.coeffs[..., t.deriv_src[i]] * t.deriv_fac[i], self.dim, self.order - 1)

    # arithmetic ---------------------------------------------------------
    def _coerce(self, other) -> "Jet | None":
        if isinstance(other, Jet):
            if other.dim != self.dim:
                raise ShapeError(f"jet dims differ: {self.dim} vs {other.dim}")
            return other
        return None

    def _pair(self, other: "Jet") -> tuple[np.ndarray, np.ndarray, int]:
        order = min(self.order, other.order)
        m = n_monomials(self.dim, order)
        return self.coeffs[..., :m], other.coeffs[..., :m], order

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            c = self.coeffs.copy()
            c[..., 0] = c[..., 0] + _as_array(other)
            return Jet(c, self.dim, self.order)
        a, b, order = self._pair(o)
        return Jet(a + b, self.dim, order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.dim, self.order)

    def __pos__(self):
        return self

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            c = self.coeffs.copy()
            c[..., 0] = c[..., 0] - _as_array(other)
            return Jet(c, self.dim, self.order)
        a, b, order = self._pair(o)
        return Jet(a - b, self.dim, order)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return Jet(self.coeffs * _as_array(other)[..., None], self.dim, self.order)
        a, b, order = self._pair(o)
        return Jet(mul_coeffs(a, b, monomial_table(self.dim, order)), self.dim, order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            d = _as_array(other)
            if np.any(d == 0):
                raise SingularityError("division of a jet by zero")
            return Jet(self.coeffs / d[..., None], self.dim, self.order)
        out = self * reciprocal(o)
        out.coeffs[..., 0] = self.coeffs[..., 0] / o.coeffs[..., 0]
        return out

    def __rtruediv__(self, other):
        out = reciprocal(self) * other
        out.coeffs[..., 0] = _as_array(other) / self.coeffs[..., 0]
        return out

    def __pow__(self, p):
        return power(self, p)

    def __rpow__(self, base):
        return power(Jet.constant(base, self.dim, self.order), self)


# ---------------------------------------------------------------------------
# elementary functions
# ---------------------------------------------------------------------------


def _compose(a: Jet, derivs: list[np.ndarray]) -> Jet:
    """``f(a)`` from the derivative values ``f^(k)(a0)``, k = 0..order (Horner)."""
    t = a.table
    h = a.coeffs.copy()
    h[..., 0] = 0.0
    k_max = a.order
    out = np.zeros(np.broadcast_shapes(h.shape, np.shape(derivs[0]) + (t.size,)))
    out[..., 0] = derivs[k_max] / math.factorial(k_max)
    for k in range(k_max - 1, -1, -1):
        out = mul_coeffs(out, h, t)
        out[..., 0] = derivs[k] / math.factorial(k)
    return Jet(out, a.dim, a.order)


def reciprocal(a: Jet) -> Jet:
    a0 = a.coeffs[..., 0]
    if np.any(a0 == 0):
        raise SingularityError("reciprocal of a jet with vanishing value")
    inv = 1.0 / a0
    derivs = [(-1) ** k * math.factorial(k) * inv ** (k + 1) for k in range(a.order + 1)]
    out = _compose(a, derivs)
    out.coeffs[..., 0] = inv
    return out


def _is_number(x) -> bool:
    return not isinstance(x, Jet)


def exp(x):
    if _is_number(x):
        return np.exp(_as_array(x))
    v = np.exp(x.coeffs[..., 0])
    return _compose(x, [v] * (x.order + 1))


def sin(x):
    if _is_number(x):
        return np.sin(_as_array(x))
    s, c = np.sin(x.coeffs[..., 0]), np.cos(x.coeffs[..., 0])
    cycle = [s, c, -s, -c]
    return _compose(x, [cycle[k % 4] for k in range(x.order + 1)])


def cos(x):
    if _is_number(x):
        return np.cos(_as_array(x))
    s, c = np.sin(x.coeffs[..., 0]), np.cos(x.coeffs[..., 0])
    cycle = [c, -s, -c, s]
    return _compose(x, [cycle[k % 4] for k in range(x.order + 1)])


def log(x):
    v = _as_array(x) if _is_number(x) else x.coeffs[..., 0]
    if np.any(v <= 0):
        raise DomainError("log of a non-positive value")
    if _is_number(x):
        return np.log(v)
    derivs = [np.log(v)] + [
        (-1) ** (k - 1) * math.factorial(k - 1) / v**k for k in range(1, x.order + 1)
    ]
    return _compose(x, derivs)


def sqrt(x):
    v = _as_array(x) if _is_number(x) else x.coeffs[..., 0]
    if np.any(v < 0):
        raise DomainError("sqrt of a negative value")
    if _is_number(x):
        return np.sqrt(v)
    if x.order > 0 and np.any(v == 0):
        raise SingularityError("sqrt is not differentiable at 0")
    out = _real_power(x, 0.5)
    out.coeffs[..., 0] = np.sqrt(v)
    return out


def _falling(p: float, k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= p - i
    return out


def _real_power(a: Jet, p: float) -> Jet:
    v = a.coeffs[..., 0]
    derivs = [_falling(p, k) * np.power(v, p - k) for k in range(a.order + 1)]
    return _compose(a, derivs)


def _int_power(a: Jet, p: int) -> Jet:
    result = Jet.constant(np.ones(a.shape), a.dim, a.order)
    base = a
    while p:
        if p & 1:
            result = result * base
        p >>= 1
        if p:
            base = base * base
    return result


def power(x, p):
    """``x ** p`` for jets or reals; ``p`` may be a number or a jet."""
    if isinstance(p, Jet):
        if isinstance(x, Jet) and p.is_constant() and np.ndim(p.coeffs[..., 0]) == 0:
            return power(x, float(p.coeffs[..., 0]))
        if _is_number(x):
            x = Jet.constant(x, p.dim, p.order)
        if np.any(x.coeffs[..., 0] <= 0):
            raise DomainError("variable exponent requires a positive base")
        out = exp(p * log(x))
        out.coeffs[..., 0] = np.power(x.coeffs[..., 0], p.coeffs[..., 0])
        return out

    p = float(p)
    integral = p == int(p)
    v = _as_array(x) if _is_number(x) else x.coeffs[..., 0]
    if not integral and np.any(v < 0):
        raise DomainError("fractional power of a negative value")
    if p < 0 and np.any(v == 0):
        raise SingularityError("negative power of zero")
    if _is_number(x):
        return np.power(v, p)
    if integral:
        q = int(p)
        out = _int_power(x, abs(q))
        if q < 0:
            out = reciprocal(out)
    else:
        if x.order > 0 and np.any(v == 0):
            raise SingularityError("fractional power is not differentiable at 0")
        out = _real_power(x, p)
    out.coeffs[..., 0] = np.power(v, p)
    return out


ELEMENTARY: dict[str, Callable] = {
    "sin": sin,
    "cos": cos,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "pow": power,
}


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def coordinate_jets(point, order: int) -> list[Jet]:
    point = _as_array(point)
    return [Jet.variable(i, point, order) for i in range(point.shape[-1])]


def check_finite(j: Jet) -> Jet:
    bad = ~np.isfinite(j.coeffs)
    if np.any(bad):
        k = int(np.argwhere(bad)[0][-1])
        mi = j.table.multi_index(k)
        raise NonFiniteError(f"non-finite Taylor coefficient at multi-index {mi}", mi)
    return j


def jet_of(field, base_point, order: int = DEFAULT_ORDER, names: Sequence[str] | None = None) -> Jet:
    """Taylor expansion of ``field`` about ``base_point`` up to ``order``.

    ``field`` may be an expression string (parsed against ``names``, default
    ``x, y, z``), a parsed :class:`~projtractor.expr.Expr`, or a callable
    taking one jet per coordinate.
    """
    if order < 0:
        raise OrderError("jet order must be non-negative")
    point = _as_array(base_point)
    if point.ndim == 0:
        point = point[None]
    dim = point.shape[-1]
    if isinstance(field, str):
        from .expr import default_names, parse

        field = parse(field, list(names) if names is not None else default_names(dim))
    coords = coordinate_jets(point, order)
    try:
        with np.errstate(all="ignore"):
            out = field(*coords)
    except (ZeroDivisionError, SingularityError) as exc:
        raise NonFiniteError(f"field evaluation failed: {exc}", (0,) * dim) from exc
    if not isinstance(out, Jet):
        out = Jet.constant(np.broadcast_to(_as_array(out), point.shape[:-1]), dim, order)
    return check_finite(out)


def jet_combine(a: Jet, b: Jet, op: str) -> Jet:
    """Pointwise ``a op b`` for ``op`` in {add, sub, mul, div}."""
    if not isinstance(a, Jet) or not isinstance(b, Jet):
        raise ShapeError("jet_combine expects two jets")
    if a.dim != b.dim or a.order != b.order:
        raise ShapeError(f"jet mismatch: (dim, order) {(a.dim, a.order)} vs {(b.dim, b.order)}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    raise ValueError(f"unknown operation {op!r}")


def jet_partial(j: Jet, multi_index: Sequence[int]):
    """Derivative value ``d^a f(x0) = a! * coeff_a``."""
    return j.partial(multi_index)
