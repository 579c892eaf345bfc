import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projtractor import jets
from projtractor.errors import NonFiniteError, OrderError, ShapeError, SingularityError
from projtractor.jets import Jet, jet_combine, jet_of, jet_partial, n_monomials


def test_polynomial_partials():
    j = jet_of("x^2 + 3*y", [1.0, 2.0], 2)
    assert j.value == 7.0
    assert jet_partial(j, (1, 0)) == 2.0
    assert jet_partial(j, (0, 1)) == 3.0
    assert jet_partial(j, (2, 0)) == 2.0
    assert jet_partial(j, (1, 1)) == 0.0


def test_constant_field():
    j = jet_of("5", [0.3, -0.2], 3)
    d = j.coeffs_dict()
    assert d[(0, 0)] == 5.0
    assert all(v == 0.0 for k, v in d.items() if k != (0, 0))


def test_sine_derivatives():
    j = jet_of("sin(x)", [0.0], 3)
    got = [jet_partial(j, (k,)) for k in range(4)]
    np.testing.assert_allclose(got, [0, 1, 0, -1], atol=1e-15)


def test_combine_examples():
    x = Jet.variable(0, [0.0], 2)
    p = jet_combine(1 + x, 1 - x, "mul")
    np.testing.assert_allclose(p.coeffs, [1, 0, -1])
    a = jet_of("2 + x*y", [0.5, 0.7], 4)
    q = jet_combine(a, a, "div")
    np.testing.assert_allclose(q.coeffs, np.eye(1, q.coeffs.size)[0], atol=1e-15)
    x3 = Jet.variable(0, [0.0], 3)
    g = jet_combine(Jet.constant(1.0, 1, 3), 1 - x3, "div")
    np.testing.assert_allclose(g.coeffs, [1, 1, 1, 1])


def test_partial_examples():
    assert jet_partial(jet_of("x^2", [1.0], 2), (2,)) == 2.0
    assert jet_partial(jet_of("x*y", [0.0, 0.0], 2), (1, 1)) == 1.0
    assert jet_partial(jet_of("exp(x)", [0.0], 5), (4,)) == pytest.approx(1.0, abs=1e-14)


def test_errors():
    a = jet_of("x", [1.0], 2)
    b = jet_of("x", [1.0], 3)
    with pytest.raises(ShapeError):
        jet_combine(a, b, "add")
    with pytest.raises(SingularityError):
        jet_combine(a, jet_of("x - 1", [1.0], 2), "div")
    with pytest.raises(OrderError):
        jet_partial(a, (3,))
    with pytest.raises(NonFiniteError) as info:
        jet_of(lambda x: 1 / (x - x), [1.0], 2)
    assert info.value.multi_index is not None


def test_monomial_counts():
    assert n_monomials(2, 6) == 28
    assert n_monomials(3, 4) == 35
    assert n_monomials(1, 0) == 1


def _random_poly_jet(rng, dim, order):
    return Jet(rng.normal(size=n_monomials(dim, order)), dim, order)


def _multi_indices(dim, order):
    return [mi for mi in jets.monomial_table(dim, order).exps]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(1, 3), order=st.integers(0, 4))
def test_leibniz(seed, dim, order):
    rng = np.random.default_rng(seed)
    a, b = _random_poly_jet(rng, dim, order), _random_poly_jet(rng, dim, order)
    prod = jet_combine(a, b, "mul")
    for alpha in _multi_indices(dim, order):
        alpha = tuple(int(v) for v in alpha)
        total = 0.0
        for beta in np.ndindex(*[v + 1 for v in alpha]):
            gamma = tuple(x - y for x, y in zip(alpha, beta))
            binom = math.prod(math.comb(x, y) for x, y in zip(alpha, beta))
            total += binom * a.partial(beta) * b.partial(gamma)
        assert prod.partial(alpha) == pytest.approx(total, rel=1e-10, abs=1e-10)


def _fd_derivative(f, x0, k, h=1e-2):
    # high-order central differences of f along one axis
    stencil = np.arange(-4, 5)
    weights = np.linalg.solve(
        np.vander(stencil * h, increasing=True).T, np.eye(9)[k] * math.factorial(k)
    )
    return float(np.dot(weights, [f(x0 + s * h) for s in stencil]))


@pytest.mark.parametrize(
    "src, f",
    [
        ("sin(x)", math.sin),
        ("cos(x)", math.cos),
        ("exp(x)", math.exp),
        ("log(x)", math.log),
        ("sqrt(x)", math.sqrt),
        ("x^2.5", lambda x: x**2.5),
        ("pow(x, -1.5)", lambda x: x**-1.5),
        ("1/(1+x^2)^2", lambda x: 1 / (1 + x * x) ** 2),
    ],
)
def test_against_finite_differences(src, f):
    x0 = 1.3
    j = jet_of(src, [x0], 6)
    for k in range(4):
        fd = _fd_derivative(f, x0, k)
        assert abs(j.partial((k,)) - fd) <= 1e-6 * max(1.0, abs(fd))


def test_batched_jets():
    pts = np.array([[0.1, 0.2], [0.3, -0.4]])
    j = jet_of("x*y + sin(x)", pts, 3)
    assert j.shape == (2,)
    np.testing.assert_allclose(j.value, pts[:, 0] * pts[:, 1] + np.sin(pts[:, 0]))
    np.testing.assert_allclose(j.partial((0, 1)), pts[:, 0])
