import numpy as np
import pytest

from projtractor.catalog import geometry
from projtractor.errors import KindError, ScaleError
from projtractor.geometry import curvature_stack
from projtractor.jets import n_monomials
from projtractor.killing import KillingCandidate, candidate_jet, splitting_L
from projtractor.tensors import COT, COTR, TR, ChartTensor, JetField, jeinsum
from projtractor.tractor import (
    canonical_tractors,
    curvature_by_commutator,
    thomas_d,
    tractor_covd,
    tractor_curvature,
    tractor_frame,
    w_curvature,
    w_sharp,
)


def frame_of(name, pts, order=4):
    return tractor_frame(geometry(name).structure(), np.asarray(pts, float), order)


def test_canonical_pairings():
    c = canonical_tractors(3)
    assert jeinsum("A,A->", c["X"], c["Y"]).data == 1.0
    np.testing.assert_array_equal(jeinsum("Ab,Aa->ab", c["Z"], c["W"]).data, np.eye(3))
    np.testing.assert_array_equal(jeinsum("A,Ab->b", c["X"], c["Z"]).data, 0.0)
    np.testing.assert_array_equal(jeinsum("A,Aa->a", c["Y"], c["W"]).data, 0.0)
    assert c["X"].weight == 1.0 and c["Y"].weight == -1.0


def test_constant_cotractor_on_flat():
    f = frame_of("flat2", [[0.1, 0.2]])
    sigma, mu = 0.7, np.array([1.5, -2.0])
    t = ChartTensor(2, (COTR,), 0.0, np.r_[sigma, mu][None], f.scale_tag).to_jet(3)
    d = tractor_covd(f, t).data[0, ..., 0]
    np.testing.assert_allclose(d[:, 0], -mu)
    np.testing.assert_allclose(d[:, 1:], 0.0)


def test_cotractor_connection_formula():
    # (d sigma - mu_a, nabla_a mu_b + P_ab sigma) in a curved scale
    f = frame_of("liouville-changed", [[0.2, -0.3], [0.4, 0.1]])
    rng = np.random.default_rng(0)
    w = 1.3
    t = JetField(2, (COTR,), w - 1.0, rng.normal(size=(2, 3, n_monomials(2, 3))), f.scale_tag, order=3)
    got = tractor_covd(f, t).data[..., 0]
    from projtractor.geometry import covariant_derivative

    sigma = JetField(2, (), w, t.data[:, 0], order=3)
    mu = JetField(2, (COT,), w, t.data[:, 1:], order=3)
    gamma = f.gamma
    ds = covariant_derivative(sigma, gamma).data[..., 0]
    dm = covariant_derivative(mu, gamma).data[..., 0]
    p = f.schouten.data[..., 0]
    np.testing.assert_allclose(got[..., 0], ds - mu.data[..., 0], atol=1e-12)
    np.testing.assert_allclose(got[..., 1:], dm + p * sigma.data[..., 0][:, None, None], atol=1e-12)


def test_x_derivative_is_w():
    f = frame_of("flat2", [[0.0, 0.0]])
    c = canonical_tractors(f)
    np.testing.assert_array_equal(tractor_covd(f, c["X"].to_jet(2)).data[..., 0][0], c["W"].data.T)


def test_flat_killing_tractors_are_parallel():
    cfg = geometry("flat2")
    s = cfg.structure()
    pts = np.random.default_rng(1).uniform(-0.5, 0.5, size=(5, 2))
    f = tractor_frame(s, pts, 4)
    for comps in (["1", "0"], ["-y", "x"]):
        k = candidate_jet(s, KillingCandidate(1, comps), pts, 4)
        nab = tractor_covd(f, splitting_L(f, k))
        assert np.max(np.abs(nab.data[..., 0])) <= 1e-14


def test_thomas_d_examples():
    f = frame_of("sphere2", [[0.2, 0.1], [-0.4, 0.3]])
    c = canonical_tractors(f)
    dx = thomas_d(f, c["X"].to_jet(3)).data[..., 0]
    np.testing.assert_allclose(dx, np.broadcast_to(np.eye(3), dx.shape), atol=1e-15)
    g = JetField(2, (), 0.0, np.random.default_rng(2).normal(size=(2, n_monomials(2, 3))), order=3)
    d = thomas_d(f, g).data[..., 0]
    np.testing.assert_array_equal(d[:, 0], 0.0)
    np.testing.assert_allclose(d[:, 1:], g.gradient().data[..., 0])
    assert thomas_d(f, g).weight == -1.0


def test_scale_mismatch():
    f = frame_of("flat2", [[0.0, 0.0]])
    t = ChartTensor(2, (COTR,), 0.0, np.ones((1, 3)), "another").to_jet(2)
    with pytest.raises(ScaleError):
        tractor_covd(f, t)


def test_flat_curvature_vanishes():
    f = frame_of("flat3-changed", np.random.default_rng(3).uniform(-0.5, 0.5, (4, 3)))
    assert np.max(np.abs(tractor_curvature(f).data[..., 0])) <= 1e-13


def test_sphere_is_projectively_flat():
    pts = np.random.default_rng(4).uniform(-0.6, 0.6, (20, 2))
    f = frame_of("sphere2", pts)
    assert np.max(np.abs(tractor_curvature(f).data[..., 0])) <= 1e-12
    assert np.max(np.abs(curvature_by_commutator(f).data[..., 0])) <= 1e-12


def _fd_cotton(structure, x, h=1e-4):
    # C_abc = nabla_a P_bc - nabla_b P_ac, derivative of P by central differences
    n = len(x)

    def schouten(p):
        return curvature_stack(structure, p).schouten.data

    dp = np.stack([(schouten(x + h * e) - schouten(x - h * e)) / (2 * h) for e in np.eye(n)])
    g = structure.gamma_values(x[None])[0]
    p = schouten(x)
    nab = dp - np.einsum("abd,dc->abc", g, p) - np.einsum("acd,bd->abc", g, p)
    return nab - nab.transpose(1, 0, 2)


def test_liouville_curvature_parts():
    s = geometry("liouville").structure()
    pts = np.array([[0.3, -0.2], [-0.5, 0.4], [0.1, 0.6]])
    kappa = tractor_curvature(tractor_frame(s, pts, 4)).data[..., 0]
    np.testing.assert_allclose(kappa[..., 1:, :], 0.0, atol=1e-13)
    for i, x in enumerate(pts):
        cot = _fd_cotton(s, x)
        np.testing.assert_allclose(kappa[i, :, :, 0, 1:], -cot, atol=1e-6)
        assert np.max(np.abs(cot)) > 1e-2


def test_w_curvature_x_insertions_and_zw():
    pts = np.random.default_rng(5).uniform(-0.6, 0.6, (6, 2))
    f = frame_of("liouville", pts)
    w = w_curvature(f).data[..., 0]
    assert np.max(np.abs(w[:, 0])) == 0.0
    assert np.max(np.abs(w[:, :, 0])) == 0.0
    assert np.max(np.abs(w[..., 0])) == 0.0
    cot = f.curvature.cotton.data[..., 0]
    np.testing.assert_allclose(w[:, 1:, 1:, 0, 1:], -cot)


def test_w_sharp_sign_convention():
    rng = np.random.default_rng(6)
    n = 2
    wc = ChartTensor(n, (COTR, COTR, TR, COTR), -2.0, rng.normal(size=(3,) * 4))
    t = ChartTensor(n, (COTR, COTR), 0.0, rng.normal(size=(3, 3)))
    got = w_sharp(wc, t).data
    want = -np.einsum("ABEC,ED->ABCD", wc.data, t.data) - np.einsum("ABED,CE->ABCD", wc.data, t.data)
    np.testing.assert_allclose(got, want, atol=1e-14)
    v = ChartTensor(n, (TR,), 0.0, rng.normal(size=3))
    np.testing.assert_allclose(w_sharp(wc, v).data, np.einsum("ABCE,E->ABC", wc.data, v.data))


def test_w_sharp_flat_is_zero():
    f = frame_of("flat2", [[0.1, 0.1]])
    t = ChartTensor(2, (COTR,) * 4, 0.0, np.random.default_rng(7).normal(size=(1,) + (3,) * 4), f.scale_tag)
    assert np.max(np.abs(w_sharp(w_curvature(f).value(), t).data)) == 0.0


def test_w_sharp_kind_error():
    wc = ChartTensor(2, (COTR, COTR, TR, COTR), 0.0, np.zeros((3,) * 4))
    with pytest.raises(KindError):
        w_sharp(wc, ChartTensor(2, (COT,), 0.0, np.zeros(2)))
