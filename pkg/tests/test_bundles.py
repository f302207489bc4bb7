"""Higgs bundles, metrics, Chern connections, flat decompositions, gauge action.

Derived expectations (metric compatibility, hand-computed adjoints and
commutators, expm monodromy) act as independent oracles.
"""

import numpy as np
import pytest
import scipy.linalg

from higgslab.bundles import (
    FlatBundle,
    GaugeTransform,
    HermitianMetric,
    HiggsBundle,
    adjoint_star,
    chern_connection,
    flat_decompose,
    flat_orbit_distance,
    gauge_apply,
    gauge_apply_flat,
    hym_residual,
    monodromy,
    random_gauge,
)
from higgslab.torus import Field, SpectralGrid, TorusModulus, inner_product, norm, random_band_limited


def make_grid(tau=1j, N=32):
    return SpectralGrid(TorusModulus(tau), N)


def diag_higgs(grid, p=1.0, sl=True):
    theta = Field.constant(grid, 1, 0, np.diag([p, -p]).astype(complex))
    return HiggsBundle(Field.zero(grid, 0, 1, rank=2), theta, sl_constraint=sl)


def random_metric(grid, rank, rng, scale=0.05, kmax=2):
    # Gentle amplitudes keep the exponential's spectral tail below the
    # tolerances asserted against spectrally differentiated quantities.
    s = random_band_limited(grid, 0, 0, rng, rank=rank, scale=scale, kmax=kmax)
    sv = 0.5 * (s.values + np.conj(np.swapaxes(s.values, -1, -2)))
    from higgslab.bundles import expm_field

    return HermitianMetric(Field(grid, 0, 0, expm_field(sv)))


# ---------------------------------------------------------------------------
# Hermitian metrics and adjoints
# ---------------------------------------------------------------------------


def test_metric_validation():
    g = make_grid()
    bad = Field.constant(g, 0, 0, np.array([[1.0, 0.5], [0.2, 1.0]]))
    with pytest.raises(ValueError):
        HermitianMetric(bad)
    with pytest.raises(ValueError):
        HermitianMetric(Field.constant(g, 0, 0, np.diag([1.0, -1.0])))


def test_adjoint_star_hand_values():
    g = make_grid()
    theta = Field.constant(g, 1, 0, np.array([[0.0, 1.0], [0.0, 0.0]]))
    h_id = HermitianMetric.identity(g, 2)
    out = adjoint_star(theta, h_id)
    assert out.bidegree == (0, 1)
    assert np.allclose(out.values[0, 0], np.array([[0.0, 0.0], [1.0, 0.0]]))
    # h = diag(2,1): h^{-1} conj(theta)^T h = [[0,0],[2,0]]  (hand oracle)
    h2 = HermitianMetric(Field.constant(g, 0, 0, np.diag([2.0, 1.0])))
    out2 = adjoint_star(theta, h2)
    assert np.allclose(out2.values[0, 0], np.array([[0.0, 0.0], [2.0, 0.0]]))


def test_adjoint_star_involution_and_isometry():
    g = make_grid()
    rng = np.random.default_rng(1)
    h = random_metric(g, 2, rng)
    phi = random_band_limited(g, 1, 0, rng, rank=2)
    psi = random_band_limited(g, 1, 0, rng, rank=2)
    back = adjoint_star(adjoint_star(phi, h), h)
    assert np.max(np.abs(back.values - phi.values)) < 1e-12
    # <phi, psi> = conj(<phi^*, psi^*>) under the bidegree swap
    lhs = inner_product(phi, psi, h.h)
    rhs = inner_product(adjoint_star(phi, h), adjoint_star(psi, h), h.h)
    assert abs(lhs - np.conj(rhs)) < 1e-12
    # conjugate linearity
    lam = 0.7 - 1.3j
    scaled = adjoint_star(lam * phi, h)
    assert np.max(np.abs(scaled.values - np.conj(lam) * adjoint_star(phi, h).values)) < 1e-12


# ---------------------------------------------------------------------------
# Chern connection
# ---------------------------------------------------------------------------


def test_chern_flat_metric():
    g = make_grid()
    h = HermitianMetric.identity(g, 2)
    m10 = chern_connection(h, Field.zero(g, 0, 1, rank=2))
    assert norm(m10) < 1e-14


def test_chern_conformal_factor():
    # h = e^u I gives coefficient (du/dz) I
    g = make_grid()
    rng = np.random.default_rng(4)
    u = random_band_limited(g, 0, 0, rng, scale=0.03, kmax=2)
    u = Field(g, 0, 0, u.values + np.conj(u.values))  # real
    hv = np.exp(u.values)[:, :, None, None] * np.eye(2)
    h = HermitianMetric(Field(g, 0, 0, hv))
    m10 = chern_connection(h, Field.zero(g, 0, 1, rank=2))
    expected = g.d_dz(u.values)[:, :, None, None] * np.eye(2)
    assert np.max(np.abs(m10.values - expected)) < 1e-10


def test_chern_metric_compatibility_oracle():
    # d h(s,t) = h(D s, t) + h(s, D t) with sesquilinear first slot, checked
    # componentwise on random sections; validates the a01^{*h} term.
    g = make_grid(tau=0.3 + 1.1j)
    rng = np.random.default_rng(9)
    h = random_metric(g, 2, rng, scale=0.02)
    a01 = random_band_limited(g, 0, 1, rng, rank=2, scale=0.3, kmax=3)
    m10 = chern_connection(h, a01).values

    # keep the triple products inside the alias-free band
    s = np.stack([random_band_limited(g, 0, 0, rng, kmax=3).values for _ in range(2)], axis=-1)
    t = np.stack([random_band_limited(g, 0, 0, rng, kmax=3).values for _ in range(2)], axis=-1)
    hv = h.h.values

    def pair(a, b):
        return np.einsum("xyi,xyij,xyj->xy", np.conj(a), hv, b)

    ds_bar = g.d_dzbar(s) + np.einsum("xyij,xyj->xyi", a01.values, s)
    ds = g.d_dz(s) + np.einsum("xyij,xyj->xyi", m10, s)
    dt_bar = g.d_dzbar(t) + np.einsum("xyij,xyj->xyi", a01.values, t)
    dt = g.d_dz(t) + np.einsum("xyij,xyj->xyi", m10, t)

    res_dz = g.d_dz(pair(s, t)) - np.einsum("xyi,xyij,xyj->xy", np.conj(ds_bar), hv, t) - pair(s, dt)
    res_dzbar = g.d_dzbar(pair(s, t)) - np.einsum("xyi,xyij,xyj->xy", np.conj(ds), hv, t) - pair(s, dt_bar)
    scale = max(1.0, np.max(np.abs(pair(s, t))))
    assert np.max(np.abs(res_dz)) < 1e-10 * scale
    assert np.max(np.abs(res_dzbar)) < 1e-10 * scale


def test_trace_curvature_identity():
    # tr F(D_h) = dbar d log det h for traceless a01 (rank-agnostic identity)
    g = make_grid()
    rng = np.random.default_rng(12)
    h = random_metric(g, 2, rng)
    a01 = random_band_limited(g, 0, 1, rng, rank=2, scale=0.3, kmax=3)
    av = a01.values - (np.trace(a01.values, axis1=-2, axis2=-1) / 2)[..., None, None] * np.eye(2)
    a01 = Field(g, 0, 1, av)
    from higgslab.bundles import curvature

    f = curvature(chern_connection(h, a01), a01)
    tr_f = np.trace(f.values, axis1=-2, axis2=-1)
    logdet = np.linalg.slogdet(h.h.values)[1]
    expected = -g.d_dzbar(g.d_dz(logdet))
    assert np.max(np.abs(tr_f - expected)) < 1e-8


# ---------------------------------------------------------------------------
# HYM residual
# ---------------------------------------------------------------------------


def test_hym_trivial_cases():
    g = make_grid()
    zero_theta = HiggsBundle(Field.zero(g, 0, 1, rank=2), Field.zero(g, 1, 0, rank=2))
    _, r = hym_residual(zero_theta, HermitianMetric.identity(g, 2))
    assert r < 1e-13
    _, r2 = hym_residual(diag_higgs(g, 0.7), HermitianMetric.identity(g, 2))
    assert r2 < 1e-13


def test_hym_nilpotent_residual():
    # theta = [[0,1],[0,0]] dz, h = I: residual = diag(1,-1) dz ^ dzbar
    g = make_grid()
    theta = Field.constant(g, 1, 0, np.array([[0.0, 1.0], [0.0, 0.0]]))
    bundle = HiggsBundle(Field.zero(g, 0, 1, rank=2), theta)
    res, r = hym_residual(bundle, HermitianMetric.identity(g, 2))
    assert np.allclose(res.values[3, 5], np.diag([1.0, -1.0]))
    assert r > 1.0


# ---------------------------------------------------------------------------
# Gauge action
# ---------------------------------------------------------------------------


def test_gauge_identity_and_equivariance():
    g = make_grid()
    rng = np.random.default_rng(21)
    # nilpotent theta so the residual being transported is nonzero
    theta = Field.constant(g, 1, 0, np.array([[0.0, 1.0], [0.0, 0.0]]))
    bundle = HiggsBundle(Field.zero(g, 0, 1, rank=2), theta)
    h = HermitianMetric.identity(g, 2)
    ident = GaugeTransform.identity(g, 2)
    b2, h2 = gauge_apply(ident, bundle, h)
    assert norm(b2.theta - bundle.theta) < 1e-14
    assert norm(h2.h - h.h) < 1e-14
    _, r0 = hym_residual(bundle, h)
    assert r0 > 1.0

    # smooth gauge preserves the h-norm of the residual (spectral-tail limited)
    G = random_gauge(g, 2, rng, scale=0.04, kmax=2)
    b3, h3 = gauge_apply(G, bundle, h)
    _, r3 = hym_residual(b3, h3)
    assert abs(r3 - r0) < 1e-9 * max(1.0, r0)

    # constant h-unitary gauge: exact equivariance within 1e-10
    q, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    GU = GaugeTransform(Field.constant(g, 0, 0, q))
    b4, h4 = gauge_apply(GU, bundle, h)
    assert norm(h4.h - h.h) < 1e-12
    _, r4 = hym_residual(b4, h4)
    assert abs(r4 - r0) < 1e-10


def test_gauge_group_action_composition():
    g = make_grid(N=32)
    rng = np.random.default_rng(31)
    bundle = diag_higgs(g, 0.5)
    h = HermitianMetric.identity(g, 2)
    G1 = random_gauge(g, 2, rng, scale=0.04, kmax=2)
    G2 = random_gauge(g, 2, rng, scale=0.04, kmax=2)
    b_a, h_a = gauge_apply(G2, *gauge_apply(G1, bundle, h))
    b_b, h_b = gauge_apply(G1.compose(G2), bundle, h)
    assert norm(b_a.theta - b_b.theta) < 1e-10
    assert norm(b_a.a01 - b_b.a01) < 1e-10
    assert norm(h_a.h - h_b.h) < 1e-10


def test_gauge_rejects_ill_conditioned():
    g = make_grid(N=8)
    vals = np.zeros((8, 8, 2, 2), dtype=complex)
    vals[..., 0, 0] = 1.0
    vals[..., 1, 1] = 1e-15
    with pytest.raises(ValueError):
        GaugeTransform(Field(g, 0, 0, vals))


# ---------------------------------------------------------------------------
# Flat bundles
# ---------------------------------------------------------------------------


def test_flat_decompose_trivial_and_rank1():
    g = make_grid()
    # trivial connection, constant metric
    triv = FlatBundle.constant(g, np.zeros((1, 1)), np.zeros((1, 1)))
    dec = flat_decompose(triv, HermitianMetric.identity(g, 1))
    assert norm(dec.theta) < 1e-14

    # rank 1 constants: theta = ((mu + conj(nu))/2) dz
    mu, nu = 0.8 - 0.2j, 0.1 + 0.5j
    fb = FlatBundle.constant(g, np.array([[mu]]), np.array([[nu]]))
    dec = flat_decompose(fb, HermitianMetric.identity(g, 1))
    expected = 0.5 * (mu + np.conj(nu))
    assert np.max(np.abs(dec.theta.values - expected)) < 1e-14

    # unitary connection (nu = -conj(mu)): psi vanishes
    fb_u = FlatBundle.constant(g, np.array([[mu]]), np.array([[-np.conj(mu)]]))
    dec_u = flat_decompose(fb_u, HermitianMetric.identity(g, 1))
    assert norm(dec_u.theta) < 1e-14


def test_flat_decompose_reassembly_and_unitarity():
    g = make_grid()
    rng = np.random.default_rng(41)
    m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    n = m @ np.diag([0.3, -0.4]) @ np.linalg.inv(m)
    fb = FlatBundle.constant(g, n, 0.2 * n)  # commuting pair -> flat
    assert fb.flatness_residual() < 1e-12
    h = random_metric(g, 2, np.random.default_rng(5))
    dec = flat_decompose(fb, h)
    # reassembly is exact
    assert np.max(np.abs(dec.u10.values + dec.theta.values - fb.m10.values)) < 1e-12
    assert np.max(np.abs(dec.u01.values + dec.theta_star.values - fb.m01.values)) < 1e-12
    # psi is h-self-adjoint, D_h is h-unitary (metric compatibility of u-part)
    assert np.max(np.abs(h.adjoint_values(dec.theta.values) - dec.theta_star.values)) < 1e-12
    hv = h.h.values
    lhs = g.d_dz(hv)
    rhs = np.conj(np.swapaxes(dec.u01.values, -1, -2)) @ hv + hv @ dec.u10.values
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_non_flat_rejected():
    g = make_grid()
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0, 0.0], [1.0, 0.0]])  # [a,b] != 0 -> not flat
    fb = FlatBundle.constant(g, a, b)
    with pytest.raises(ValueError):
        flat_decompose(fb, HermitianMetric.identity(g, 2))


def test_monodromy_constant_against_expm():
    g = make_grid(tau=0.4 + 1.3j, N=16)
    rng = np.random.default_rng(8)
    m = rng.standard_normal((2, 2)) * 0.5
    fb = FlatBundle.constant(g, m, 0.7 * m)
    A, B = monodromy(fb)
    mx, my = fb.lattice_coefficients()
    assert np.max(np.abs(A - scipy.linalg.expm(-mx[0, 0]))) < 1e-10
    assert np.max(np.abs(B - scipy.linalg.expm(-my[0, 0]))) < 1e-10
    assert np.max(np.abs(A @ B - B @ A)) < 1e-12


def test_monodromy_gauge_invariant_orbit_distance():
    g = make_grid(N=32)
    rng = np.random.default_rng(14)
    m = np.diag([0.4 + 0.1j, -0.4 - 0.1j])
    fb = FlatBundle.constant(g, m, 0.3 * m)
    G = random_gauge(g, 2, rng, scale=0.05, kmax=2)
    fb2 = gauge_apply_flat(G, fb)
    assert fb2.flatness_residual() < 1e-9
    assert flat_orbit_distance(fb, fb2) < 1e-8
