import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projtractor.errors import ScaleError, ShapeError
from projtractor.tensors import (
    COT,
    COTR,
    TAN,
    TR,
    ChartTensor,
    antisymmetrize,
    contract,
    symmetrize,
    tensor_product,
    young_class_residual,
    young_dimension,
    young_matrix,
    young_project_rr,
)


def ct(data, slots, weight=0.0, tag=None, n=None):
    data = np.asarray(data, float)
    if n is None:
        ext = data.shape[-1]
        n = ext - 1 if slots[0].is_tractor_type else ext
    return ChartTensor(n, slots, weight, data, tag)


def test_two_slot_symmetrize():
    t = ct([[0, 1], [0, 0]], (COT, COT))
    np.testing.assert_array_equal(symmetrize(t, [0, 1]).data, [[0, 0.5], [0.5, 0]])
    np.testing.assert_array_equal(antisymmetrize(t, [0, 1]).data, [[0, 0.5], [-0.5, 0]])


def test_symmetric_input():
    t = ct([[1, 2], [2, 3]], (COT, COT))
    np.testing.assert_array_equal(symmetrize(t, [0, 1]).data, t.data)
    np.testing.assert_array_equal(antisymmetrize(t, [0, 1]).data, 0)


def test_symmetrize_idempotent_and_decomposition():
    rng = np.random.default_rng(0)
    t = ct(rng.normal(size=(3, 3, 3)), (COT,) * 3)
    once = symmetrize(t, [0, 1, 2])
    np.testing.assert_allclose(symmetrize(once, [0, 1, 2]).data, once.data, atol=1e-15)
    two = ct(rng.normal(size=(4, 4)), (COT, COT))
    np.testing.assert_allclose((symmetrize(two, [0, 1]) + antisymmetrize(two, [0, 1])).data, two.data)


def test_mixed_kind_slot_set_rejected():
    t = ct(np.zeros((2, 2)), (COT, TAN))
    with pytest.raises(ShapeError):
        symmetrize(t, [0, 1])


def test_contractions():
    n = 3
    eye = ChartTensor(n, (TAN, COT), 0.0, np.eye(n))
    assert contract(eye, 0, 1).data == pytest.approx(3.0)
    v = ChartTensor(n, (TAN,), 1.0, [1.0, 2.0, 3.0])
    w = ChartTensor(n, (COT,), -2.0, [4.0, 5.0, 6.0])
    vw = tensor_product(v, w)
    assert vw.weight == -1.0
    assert contract(vw, 0, 1).data == pytest.approx(32.0)
    rng = np.random.default_rng(1)
    a = ChartTensor(n, (TAN, COT), 0.0, rng.normal(size=(n, n)))
    b = ChartTensor(n, (TAN, COT), 0.0, rng.normal(size=(n, n)))
    got = contract(tensor_product(a, b), 1, 2).data
    np.testing.assert_allclose(got, a.data @ b.data)


def test_contraction_kind_checks():
    t = ChartTensor(2, (COT, COT), 0.0, np.eye(2))
    with pytest.raises(ShapeError):
        contract(t, 0, 1)
    m = ChartTensor(2, (TR, COT), 0.0, np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        contract(m, 0, 1)


def test_scale_mismatch():
    a = ChartTensor(2, (COTR,), 0.0, np.ones(3), "one")
    b = ChartTensor(2, (COTR,), 0.0, np.ones(3), "two")
    with pytest.raises(ScaleError):
        a + b


def test_extent_checked():
    with pytest.raises(ShapeError):
        ChartTensor(2, (COTR,), 0.0, np.ones(2))


def test_rank1_young_is_skew_part():
    rng = np.random.default_rng(2)
    t = ct(rng.normal(size=(4, 4)), (COTR, COTR))
    np.testing.assert_allclose(young_project_rr(t, 1).data, antisymmetrize(t, [0, 1]).data)


def test_rank2_pair_swap_symmetry():
    rng = np.random.default_rng(3)
    t = ct(rng.normal(size=(3,) * 4), (COTR,) * 4)
    p = young_project_rr(t, 2).data
    np.testing.assert_allclose(p, p.transpose(2, 3, 0, 1), atol=1e-15)


def _sym(a, i, j):
    return (a + np.swapaxes(a, i, j)) / 2


def _skew(a, i, j):
    return (a - np.swapaxes(a, i, j)) / 2


def test_rank2_closed_form_on_symmetric_last_pair():
    rng = np.random.default_rng(4)
    for m in (3, 4):
        s = _sym(rng.normal(size=(m,) * 4), 2, 3)
        got = young_project_rr(ct(s, (COTR,) * 4), 2).data
        ss = _sym(s, 0, 1)
        e = np.einsum
        want = 0.25 * (ss + e("debc->bcde", ss)) - 0.125 * (
            e("dcbe->bcde", ss) + e("ebcd->bcde", ss) + e("dbce->bcde", ss) + e("ecbd->bcde", ss)
        )
        np.testing.assert_allclose(got, want, atol=1e-13)


def _perm_sum(a, axes_tail):
    perms = list(itertools.permutations(axes_tail))
    return sum(np.transpose(a, (0,) + p) for p in perms) / len(perms)


def test_rank2_closed_form_on_hook_class():
    rng = np.random.default_rng(5)
    m = 4
    s = _sym(rng.normal(size=(m,) * 4), 2, 3)
    s = s - _perm_sum(s, (1, 2, 3))  # no totally symmetric part in the last three slots
    got = young_project_rr(ct(s, (COTR,) * 4), 2).data
    sa = _skew(s, 0, 1)
    e = np.einsum
    want = 0.75 * (s - sa) - 0.375 * (
        e("dcbe->bcde", sa) + e("ebcd->bcde", sa) + e("dbce->bcde", sa) + e("ecbd->bcde", sa)
    )
    np.testing.assert_allclose(got, want, atol=1e-13)


def _idempotence_scalar(m, r, rng):
    t = ct(rng.normal(size=(m,) * (2 * r)), (COTR,) * (2 * r))
    p = young_project_rr(t, r)
    pp = young_project_rr(p, r)
    return float(np.vdot(pp.data, p.data) / np.vdot(p.data, p.data))


@pytest.mark.parametrize("r, expected", [(1, 1.0), (2, 0.75)])
def test_idempotence_scalar(r, expected):
    rng = np.random.default_rng(6)
    c = _idempotence_scalar(3, r, rng)
    assert c == pytest.approx(expected, rel=1e-12)
    for _ in range(50):
        t = ct(rng.normal(size=(3,) * (2 * r)), (COTR,) * (2 * r))
        p = young_project_rr(t, r)
        pp = young_project_rr(p, r)
        assert np.max(np.abs(pp.data - c * p.data)) <= 1e-12 * max(1.0, np.max(np.abs(p.data)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m=st.integers(2, 4), r=st.integers(1, 3))
def test_image_is_in_class(seed, m, r):
    if m ** (2 * r) > 5000:
        r = 2
    rng = np.random.default_rng(seed)
    t = ct(rng.normal(size=(m,) * (2 * r)), (COTR,) * (2 * r))
    assert young_class_residual(young_project_rr(t, r), r) <= 1e-12


@pytest.mark.parametrize("m, r, dim", [(3, 1, 3), (4, 1, 6), (3, 2, 6), (4, 2, 20), (3, 3, 10)])
def test_young_dimension_matches_projector_rank(m, r, dim):
    assert young_dimension(m, r) == dim
    assert np.linalg.matrix_rank(young_matrix(m, r), tol=1e-8) == dim


def test_young_slot_count():
    with pytest.raises(ShapeError):
        young_project_rr(ct(np.zeros((3,) * 3), (COTR,) * 3), 2)
