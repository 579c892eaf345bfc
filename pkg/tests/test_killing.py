import itertools

import numpy as np
import pytest

from projtractor.catalog import geometry
from projtractor.errors import PreconditionError, ShapeError, UnsupportedRankError
from projtractor.jets import n_monomials
from projtractor.killing import (
    KillingCandidate,
    candidate_jet,
    flat_case_check,
    inject_k,
    integrability_obstruction,
    killing_operator,
    random_symmetric_jet,
    rank1_classical_derivative,
    rank1_prolongation_derivative,
    rank1_state,
    rank2_d_form_rhs,
    rank2_prolongation_derivative,
    rank2_Q_sharp,
    recover_k,
    recovery_constant,
    splitting_L,
    t22_rank,
    tractor_killing,
)
from projtractor.tensors import COT, COTR, ChartTensor, JetField, young_class_residual, young_dimension, young_project_rr
from projtractor.tractor import thomas_d, tractor_frame, w_sharp
from projtractor.transport import flat_polynomial_oracle

SPHERE_FACTOR = "4/(1+x^2+y^2)^2"
# Killing fields of the round sphere in stereographic coordinates, lowered with the metric
SPHERE_FIELDS = {
    "rotation": ["-y", "x"],
    "boost-x": ["(1 + x^2 - y^2)/2", "x*y"],
    "boost-y": ["x*y", "(1 - x^2 + y^2)/2"],
}


def sphere_candidate(field):
    return KillingCandidate(1, [f"({SPHERE_FACTOR})*({c})" for c in field], lift=True)


def pts_in(name, count, seed, shrink=0.7):
    lo, hi = geometry(name).box
    return np.random.default_rng(seed).uniform(np.array(lo) * shrink, np.array(hi) * shrink, (count, len(lo)))


def setup(name, count=20, seed=0, order=6):
    cfg = geometry(name)
    s = cfg.structure()
    pts = pts_in(name, count, seed)
    return cfg, s, pts, tractor_frame(s, pts, order)


def liouville_hat(s, pts, order=6):
    cand = [c for c in geometry("liouville").killing if c.label == "liouville-quadratic"][0]
    return candidate_jet(s, cand, pts, order)


# ---------------------------------------------------------------------------
# inclusion and Killing operator
# ---------------------------------------------------------------------------


def test_inject_k():
    rng = np.random.default_rng(0)
    k = random_symmetric_jet(3, 2, (4,), 2, rng)
    big = inject_k(k)
    assert np.max(np.abs(big.data[:, 0])) == 0.0
    assert np.max(np.abs(big.data[:, :, 0])) == 0.0
    np.testing.assert_array_equal(big.data[:, 1:, 1:], k.data)
    assert big.weight == 2.0
    s = geometry("flat2").structure()
    dxdx = candidate_jet(s, KillingCandidate(2, [["1", "0"], ["0", "0"]]), np.zeros((1, 2)), 1)
    vals = inject_k(dxdx).data[0, ..., 0]
    want = np.zeros((3, 3))
    want[1, 1] = 1.0
    np.testing.assert_array_equal(vals, want)
    zero = inject_k(k * 0.0)
    assert np.max(np.abs(zero.data)) == 0.0


def test_killing_operator_examples():
    s = geometry("flat2").structure()
    pts = pts_in("flat2", 5, 1)
    gamma = s.gamma_jet(pts, 2)
    rot = candidate_jet(s, KillingCandidate(1, ["-y", "x"]), pts, 3)
    assert np.max(np.abs(killing_operator(gamma, rot).data)) == 0.0
    xdx = candidate_jet(s, KillingCandidate(1, ["x", "0"]), pts, 3)
    ko = killing_operator(gamma, xdx).data[..., 0]
    np.testing.assert_allclose(ko[:, 0, 0], 1.0)
    np.testing.assert_allclose(ko[:, 0, 1], 0.0)


def test_liouville_quadratic_is_killing():
    cfg, s, pts, f = setup("liouville")
    k = liouville_hat(s, pts)
    ko = killing_operator(f.gamma, k).data[..., 0]
    assert np.max(np.abs(ko)) <= 1e-10


@pytest.mark.parametrize("name", ["flat2", "flat3", "sphere2", "hyperbolic2", "liouville", "perturbed2"])
def test_catalog_candidates_are_killing(name):
    cfg, s, pts, f = setup(name, count=10, order=3)
    for cand in cfg.killing:
        k = candidate_jet(s, cand, pts, 3)
        ko = killing_operator(f.gamma, k).data[..., 0]
        assert np.max(np.abs(ko)) <= 1e-12, cand.label


@pytest.mark.parametrize("label", list(SPHERE_FIELDS))
def test_sphere_fields_are_killing(label):
    cfg, s, pts, f = setup("sphere2", count=10, order=3)
    k = candidate_jet(s, sphere_candidate(SPHERE_FIELDS[label]), pts, 3)
    assert np.max(np.abs(killing_operator(f.gamma, k).data)) <= 1e-12


def test_killing_operator_matches_tractor_form():
    # 50 random (geometry, k) pairs: the Z block of the symmetrised D K is the Killing operator
    rng = np.random.default_rng(2)
    names = ["flat2", "sphere2-changed", "liouville", "perturbed2-changed", "flat3-changed"]
    for i in range(50):
        name = names[i % len(names)]
        cfg = geometry(name)
        s = cfg.structure()
        pts = pts_in(name, 2, i)
        f = tractor_frame(s, pts, 3)
        r = 1 + i % 3
        k = random_symmetric_jet(cfg.n, r, (2,), 3, rng)
        ko = killing_operator(f.gamma, k).data[..., 0]
        tk = tractor_killing(f, k).data[..., 0]
        inner = tk[(Ellipsis,) + (slice(1, None),) * (r + 1)]
        np.testing.assert_allclose(inner, ko, atol=1e-12)
        for pos in range(r + 1):
            idx = [slice(None)] * (r + 1)
            idx[pos] = 0
            assert np.max(np.abs(tk[(slice(None),) + tuple(idx)])) <= 1e-12


# ---------------------------------------------------------------------------
# splitting operator and recovery
# ---------------------------------------------------------------------------


def test_rank1_flat_translation_state():
    cfg, s, pts, f = setup("flat2", count=3)
    k = candidate_jet(s, KillingCandidate(1, ["1", "0"]), pts, 6)
    lv = splitting_L(f, k).value().data
    want = np.zeros((3, 3))
    want[0, 1], want[1, 0] = 1.0, -1.0  # X^F L_FE = K_E
    np.testing.assert_allclose(lv, np.broadcast_to(want, lv.shape), atol=1e-15)


def test_rank2_flat_killing_state_is_parallel():
    from projtractor.tractor import tractor_covd

    cfg, s, pts, f = setup("flat2", count=10)
    basis = flat_polynomial_oracle(2, 2)
    for i in range(basis.dimension):
        k = candidate_jet(s, basis.candidate(i), pts, 6)
        assert np.max(np.abs(tractor_covd(f, splitting_L(f, k)).data[..., 0])) <= 1e-12


def test_recovery_constants():
    cfg, s, pts, f = setup("liouville-changed", count=8)
    rng = np.random.default_rng(3)
    k1 = random_symmetric_jet(2, 1, (8,), 6, rng)
    x_l = recover_k(splitting_L(f, k1).value().data, 1, constant=1.0)
    np.testing.assert_allclose(x_l, k1.data[..., 0], atol=1e-12)
    k2 = random_symmetric_jet(2, 2, (8,), 6, rng)
    xx_l = recover_k(splitting_L(f, k2).value().data, 2, constant=1.0)
    np.testing.assert_allclose(xx_l, 1.5 * k2.data[..., 0], rtol=1e-11, atol=1e-11)


def test_round_trips():
    cfg, s, pts, f = setup("flat2", count=10)
    basis = flat_polynomial_oracle(2, 1)
    coef = np.random.default_rng(4).normal(size=basis.dimension)
    k = sum(c * candidate_jet(s, basis.candidate(i), pts, 6).data for i, c in enumerate(coef))
    k = JetField(2, (COT,), 2.0, k, order=6)
    back = recover_k(splitting_L(f, k).value().data, 1)
    np.testing.assert_allclose(back, k.data[..., 0], atol=1e-12)
    cfg, s, pts, f = setup("liouville", count=10)
    kh = liouville_hat(s, pts)
    np.testing.assert_allclose(recover_k(splitting_L(f, kh).value().data, 2), kh.data[..., 0], atol=1e-10)
    assert np.max(np.abs(recover_k(np.zeros((3,) * 4), 2))) == 0.0


def test_recover_unsupported_rank():
    with pytest.raises(UnsupportedRankError):
        recover_k(np.zeros((3,) * 6), 3)


@pytest.mark.parametrize("name, n", [("flat2", 2), ("flat3", 3)])
@pytest.mark.parametrize("r", [1, 2, 3])
def test_measured_recovery_constants(name, n, r):
    f = tractor_frame(geometry(name).structure(), pts_in(name, 3, 5), r + 1)
    c = recovery_constant(f, r, np.random.default_rng(6))
    assert abs(c) > 1e-6
    if r in (1, 2):
        assert c == pytest.approx({1: 1.0, 2: 1.5}[r], rel=1e-12)


def test_recovery_constant_does_not_depend_on_curvature():
    rng = np.random.default_rng(7)
    f = tractor_frame(geometry("liouville-changed").structure(), pts_in("liouville", 3, 8), 4)
    assert recovery_constant(f, 3, rng) == pytest.approx(
        recovery_constant(tractor_frame(geometry("flat2").structure(), pts_in("flat2", 3, 8), 4), 3, rng),
        rel=1e-10,
    )


# ---------------------------------------------------------------------------
# identities of the rank-2 splitting
# ---------------------------------------------------------------------------


def _symm(a, axes):
    perms = list(itertools.permutations(axes))
    out = 0.0
    for p in perms:
        order = list(range(a.ndim))
        for src, dst in zip(axes, p):
            order[src] = dst
        out = out + np.transpose(a, order)
    return out / len(perms)


def _sym(a, axes):
    # axes counted after the leading batch axis
    return _symm(a, [x + 1 for x in axes])


@pytest.fixture(scope="module")
def liouville_data():
    cfg, s, pts, f = setup("liouville", count=6, seed=9)
    k = liouville_hat(s, pts)
    big = inject_k(k, f.scale_tag)
    return f, k, big, splitting_L(f, k)


def _w_sharp_k(w, big):
    # (W_PQ # K)_RS as [P, Q, R, S]
    return w_sharp(w, big)


def test_closed_form_of_splitting(liouville_data):
    f, k, big, L = liouville_data
    w = f.w_curvature.data[..., 0]
    kv = big.data[..., 0]
    ddk = thomas_d(f, thomas_d(f, big)).data[..., 0]
    ws = _w_sharp_k(f.w_curvature, big).data[..., 0]  # [P, Q, R, S]
    e = np.einsum
    rhs = 0.75 * ddk - 0.375 * (
        ws + _sym(e("zDBCE->zBCDE", ws), [0, 1]) + _sym(e("zEBCD->zBCDE", ws), [0, 1])
    )
    np.testing.assert_allclose(L.data[..., 0], rhs, atol=1e-10)
    assert np.max(np.abs(w)) > 1e-3 and np.max(np.abs(kv)) > 1e-3


def test_x_contraction_of_splitting(liouville_data):
    f, k, big, L = liouville_data
    dk = thomas_d(f, big).data[..., 0]
    np.testing.assert_allclose(L.data[..., 0][:, 0], 0.75 * dk, atol=1e-10)


def test_triple_derivative_symmetry():
    cfg, s, pts, f = setup("perturbed2", count=5, seed=10)
    rng = np.random.default_rng(11)
    big = inject_k(random_symmetric_jet(2, 2, (5,), 6, rng), f.scale_tag)
    d3 = thomas_d(f, thomas_d(f, thomas_d(f, big))).data[..., 0]
    lhs = d3[..., 0, 0]
    dk = thomas_d(f, big).data[..., 0]
    np.testing.assert_allclose(lhs, 6 * _sym(dk, [0, 1, 2]), atol=1e-10 * max(1, np.max(np.abs(lhs))))


def test_x_x_derivative_of_splitting():
    cfg, s, pts, f = setup("perturbed2", count=5, seed=12)
    rng = np.random.default_rng(13)
    big = inject_k(random_symmetric_jet(2, 2, (5,), 6, rng), f.scale_tag)
    dl = thomas_d(f, young_project_rr(thomas_d(f, thomas_d(f, big)), 2)).data[..., 0]
    d3 = thomas_d(f, thomas_d(f, thomas_d(f, big))).data[..., 0]
    np.testing.assert_allclose(dl[..., 0, 0], 0.25 * d3[..., 0, 0], atol=1e-10 * max(1, np.max(np.abs(d3))))


def test_derivative_of_splitting_mid_form(liouville_data):
    f, k, big, L = liouville_data
    e = np.einsum
    lhs = thomas_d(f, L).data[..., 0]  # [C, D, E, A, B]
    w = f.w_curvature
    wsdk = w_sharp(w, thomas_d(f, big)).data[..., 0]
    dwsk = thomas_d(f, w_sharp(w, big)).data[..., 0]
    t1 = 0.5 * _sym(wsdk, [1, 2])
    t2 = -0.75 * _sym(e("zACBDE->zCDEAB", wsdk), [0, 1, 2])
    t3 = -0.75 * _sym(e("zABCDE->zCDEAB", dwsk), [0, 1, 2])
    t4 = -0.125 * (
        e("zCABDE->zCDEAB", dwsk)
        - _sym(e("zCEABD->zCDEAB", dwsk), [3, 4])
        - _sym(e("zCDABE->zCDEAB", dwsk), [3, 4])
    )
    t5 = -0.125 * (
        e("zDABEC->zCDEAB", dwsk)
        + e("zDECAB->zCDEAB", dwsk)
        + 2 * _sym(e("zDEABC->zCDEAB", dwsk), [3, 4])
        + 2 * _sym(e("zDCABE->zCDEAB", dwsk), [3, 4])
    )
    t6 = -0.125 * (
        e("zEABDC->zCDEAB", dwsk)
        + e("zEDCAB->zCDEAB", dwsk)
        + 2 * _sym(e("zECABD->zCDEAB", dwsk), [3, 4])
        + 2 * _sym(e("zEDABC->zCDEAB", dwsk), [3, 4])
    )
    np.testing.assert_allclose(lhs, t1 + t2 + t3 + t4 + t5 + t6, atol=1e-8)


# ---------------------------------------------------------------------------
# prolongation connections
# ---------------------------------------------------------------------------


def test_rank1_flat_rotation_parallel():
    cfg, s, pts, f = setup("flat2", count=5)
    k = candidate_jet(s, KillingCandidate(1, ["-y", "x"]), pts, 6)
    assert np.max(np.abs(rank1_prolongation_derivative(f, splitting_L(f, k)).data)) <= 1e-14


@pytest.mark.parametrize("label", list(SPHERE_FIELDS))
def test_rank1_sphere_fields_parallel(label):
    cfg, s, pts, f = setup("sphere2")
    k = candidate_jet(s, sphere_candidate(SPHERE_FIELDS[label]), pts, 6)
    assert np.max(np.abs(rank1_prolongation_derivative(f, splitting_L(f, k)).data)) <= 1e-10


def test_rank1_classical_agreement_on_sphere():
    cfg, s, pts, f = setup("sphere2")
    rng = np.random.default_rng(14)
    m = n_monomials(2, 3)
    k = JetField(2, (COT,), 2.0, rng.normal(size=(20, 2, m)), order=3)
    mu = JetField(2, (COT, COT), 2.0, rng.normal(size=(20, 2, 2, m)), order=3).antisymmetrize([0, 1])
    got = rank1_prolongation_derivative(f, rank1_state(k, mu, f.scale_tag)).data
    first, second = rank1_classical_derivative(f, k, mu)
    np.testing.assert_allclose(got[..., 0, 1:], first, atol=1e-10)
    np.testing.assert_allclose(got[..., 1:, 0], -first, atol=1e-10)
    np.testing.assert_allclose(got[..., 1:, 1:], second, atol=1e-10)
    np.testing.assert_allclose(got[..., 0, 0], 0.0, atol=1e-10)


def test_rank1_classical_form_gains_skew_schouten_terms():
    # off Levi-Civita scales classical minus tractor form is -beta_ac k_b + beta_ab k_c - beta_bc k_a
    cfg, s, pts, f = setup("sphere2-changed", count=10)
    rng = np.random.default_rng(15)
    m = n_monomials(2, 3)
    k = JetField(2, (COT,), 2.0, rng.normal(size=(10, 2, m)), order=3)
    mu = JetField(2, (COT, COT), 2.0, rng.normal(size=(10, 2, 2, m)), order=3).antisymmetrize([0, 1])
    got = rank1_prolongation_derivative(f, rank1_state(k, mu, f.scale_tag)).data
    first, second = rank1_classical_derivative(f, k, mu)
    beta = f.curvature.beta.data[..., 0]
    kv = k.data[..., 0]
    assert np.max(np.abs(beta)) > 1e-2
    diff = (
        -np.einsum("...ac,...b->...abc", beta, kv)
        + np.einsum("...ab,...c->...abc", beta, kv)
        - np.einsum("...bc,...a->...abc", beta, kv)
    )
    np.testing.assert_allclose(got[..., 0, 1:], first, atol=1e-10)
    np.testing.assert_allclose(second - got[..., 1:, 1:], diff, atol=1e-10)


def test_rank1_state_must_be_skew():
    cfg, s, pts, f = setup("flat2", count=2)
    t = JetField(2, (COTR, COTR), 0.0, np.ones((2, 3, 3, n_monomials(2, 3))), f.scale_tag, order=3)
    with pytest.raises(ShapeError):
        rank1_prolongation_derivative(f, t)


@pytest.mark.parametrize("name", ["flat2", "flat2-changed", "sphere2-changed", "flat3-changed"])
def test_q_sharp_vanishes_when_projectively_flat(name):
    cfg, s, pts, f = setup(name, count=4, order=4)
    n1 = cfg.n + 1
    rng = np.random.default_rng(16)
    lr = young_project_rr(ChartTensor(cfg.n, (COTR,) * 4, 0.0, rng.normal(size=(4,) + (n1,) * 4)), 2).data
    assert np.max(np.abs(rank2_Q_sharp(f, lr))) <= 1e-12
    assert np.max(np.abs(rank2_Q_sharp(f, lr, form="d"))) <= 1e-12


def test_d_form_x_contraction_and_agreement():
    cfg, s, pts, f = setup("liouville", count=30, seed=17, order=4)
    rng = np.random.default_rng(18)
    lr = young_project_rr(ChartTensor(2, (COTR,) * 4, 0.0, rng.normal(size=(30,) + (3,) * 4)), 2).data
    d_rhs = rank2_d_form_rhs(f, lr)
    assert np.max(np.abs(d_rhs)) > 1e-2
    assert np.max(np.abs(d_rhs[:, 0])) <= 1e-10 * np.max(np.abs(d_rhs))


def test_two_forms_agree_on_solutions(liouville_data):
    f, k, big, L = liouville_data
    lv = L.data[..., 0]
    np.testing.assert_allclose(rank2_Q_sharp(f, lv, form="d"), rank2_Q_sharp(f, lv), atol=1e-9)


def test_rank2_liouville_parallel(liouville_data):
    f, k, big, L = liouville_data
    res = rank2_prolongation_derivative(f, L).data
    assert np.max(np.abs(res)) <= 1e-8
    res_d = rank2_prolongation_derivative(f, L, form="d").data
    assert np.max(np.abs(res_d)) <= 1e-8


def test_rank2_metric_parallel_on_curved_geometries():
    for name in ("perturbed2", "liouville-changed"):
        cfg, s, pts, f = setup(name, count=8)
        for cand in cfg.candidates(2):
            L = splitting_L(f, candidate_jet(s, cand, pts, 6))
            assert np.max(np.abs(rank2_prolongation_derivative(f, L).data)) <= 1e-8, (name, cand.label)


def test_rank2_non_solution_detected():
    cfg, s, pts, f = setup("liouville", count=10)
    k = random_symmetric_jet(2, 2, (10,), 6, np.random.default_rng(19))
    L = splitting_L(f, k)
    res = rank2_prolongation_derivative(f, L).data
    assert np.max(np.abs(res)) / max(1.0, np.max(np.abs(L.gradient().data[..., 0]))) > 1e-3


def test_rank2_unsupported_shapes():
    cfg, s, pts, f = setup("flat2", count=2)
    t = JetField(2, (COTR, COTR), 0.0, np.zeros((2, 3, 3, n_monomials(2, 3))), f.scale_tag, order=3)
    with pytest.raises(UnsupportedRankError):
        rank2_prolongation_derivative(f, t)
    with pytest.raises(UnsupportedRankError):
        integrability_obstruction(f, np.zeros((2,) + (3,) * 6), 3)


# ---------------------------------------------------------------------------
# integrability
# ---------------------------------------------------------------------------


def test_obstruction_vanishes_on_liouville_solution(liouville_data):
    f, k, big, L = liouville_data
    assert np.max(np.abs(integrability_obstruction(f, L.value().data, 2))) <= 1e-7


def test_obstruction_vanishes_for_flat_structures():
    cfg, s, pts, f = setup("flat2-changed", count=4)
    rng = np.random.default_rng(20)
    lr = young_project_rr(ChartTensor(2, (COTR,) * 4, 0.0, rng.normal(size=(4,) + (3,) * 4)), 2).data
    assert np.max(np.abs(integrability_obstruction(f, lr, 2))) <= 1e-12
    l1 = young_project_rr(ChartTensor(2, (COTR,) * 2, 0.0, rng.normal(size=(4, 3, 3))), 1).data
    assert np.max(np.abs(integrability_obstruction(f, l1, 1))) <= 1e-12


def test_obstruction_rank_bounds():
    from projtractor.transport import numerical_rank, obstruction_matrix

    flat = geometry("flat2").structure()
    pts = pts_in("flat2", 10, 21)
    assert all(numerical_rank(m).rank == 0 for m in obstruction_matrix(flat, 2, pts))
    pert = geometry("perturbed2").structure()
    # in two dimensions the curvature has one component, so each point removes a
    # single direction: the bounds are 5 of 6 and 2 of 3, holonomy sharpens them to 1 and 0
    for r in (1, 2):
        assert [numerical_rank(m).rank for m in obstruction_matrix(pert, r, pts)] == [1] * 10


# ---------------------------------------------------------------------------
# flat path, all ranks
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("r", [1, 2, 3])
def test_flat_case_oracle_bases(r):
    cfg, s, pts, f = setup("flat2", count=10)
    basis = flat_polynomial_oracle(2, r)
    for i in range(basis.dimension):
        fc = flat_case_check(f, candidate_jet(s, basis.candidate(i), pts, 6))
        assert fc.young_residual <= 1e-10 and fc.parallel_residual <= 1e-10 and fc.passed


def test_flat_case_non_killing_control():
    cfg, s, pts, f = setup("flat2", count=10)
    fc = flat_case_check(f, candidate_jet(s, KillingCandidate(2, [["x^2", "0"], ["0", "0"]]), pts, 6))
    assert fc.young_residual > 1e-3 and fc.killing_residual > 1e-3 and fc.passed


def test_flat_case_on_changed_scale():
    cfg, s, pts, f = setup("flat2-changed", count=10)
    basis = flat_polynomial_oracle(2, 2)
    fc = flat_case_check(f, candidate_jet(s, basis.candidate(0), pts, 6))
    assert fc.passed and fc.young_residual <= 1e-10


def test_flat_case_needs_projective_flatness():
    cfg, s, pts, f = setup("liouville", count=3)
    with pytest.raises(PreconditionError):
        flat_case_check(f, liouville_hat(s, pts))


def test_young_class_of_splitting():
    cfg, s, pts, f = setup("perturbed2", count=5)
    k = random_symmetric_jet(2, 2, (5,), 6, np.random.default_rng(22))
    assert young_class_residual(splitting_L(f, k).value(), 2) <= 1e-10


@pytest.mark.parametrize("n", [2, 3, 4])
def test_rank_of_two_two_bundle(n):
    assert t22_rank(n) == young_dimension(n + 1, 2)
