"""Deformation complexes: differentials, bar operator, harmonic
representatives, class distances, and the brute-force dimension oracle."""

import numpy as np
import pytest

from higgslab.bundles import HermitianMetric, HiggsBundle
from higgslab.deformation import (
    ConjugateCocycle,
    DeformationContext,
    DeformationTriple,
    DolbeaultCocycle,
    bar_map,
    theta_star_map,
)
from higgslab.torus import BeltramiField, Field, SpectralGrid, TorusModulus, norm, random_band_limited


@pytest.fixture(scope="module")
def grid():
    return SpectralGrid(TorusModulus(1j), 32)


@pytest.fixture(scope="module")
def rank1_ctx(grid):
    theta = Field.constant(grid, 1, 0, np.array([[0.7 - 0.3j]]))
    bundle = HiggsBundle(Field.zero(grid, 0, 1, rank=1), theta)
    return DeformationContext(bundle, HermitianMetric.identity(grid, 1))


@pytest.fixture(scope="module")
def rank2_ctx(grid):
    theta = Field.constant(grid, 1, 0, np.diag([0.8, -0.8]).astype(complex))
    bundle = HiggsBundle(Field.zero(grid, 0, 1, rank=2), theta, sl_constraint=True)
    return DeformationContext(bundle, HermitianMetric.identity(grid, 2, sl=True))


# ---------------------------------------------------------------------------
# differentials
# ---------------------------------------------------------------------------


def test_d0_center_and_rank1_form(rank1_ctx, rank2_ctx, grid):
    # g = identity lies in the center: d0(I) = 0
    for ctx in (rank1_ctx, rank2_ctx):
        n = ctx.bundle.rank
        eye = np.broadcast_to(np.eye(n), (grid.n_modes, grid.n_modes, n, n)).copy()
        c = ctx.d0(eye)
        assert norm(c.phi) < 1e-14 and norm(c.psi) < 1e-14
    # rank 1 is abelian: d0(g) = (0, dbar g), d1(phi,psi) reduces to dbar phi
    rng = np.random.default_rng(0)
    gg = random_band_limited(grid, 0, 0, rng, rank=1).values
    c = rank1_ctx.d0(gg)
    assert norm(c.phi) < 1e-14
    phi = random_band_limited(grid, 1, 0, rng, rank=1)
    c2 = DolbeaultCocycle(phi, Field.zero(grid, 0, 1, rank=1))
    expected = -grid.d_dzbar(phi.values)
    assert np.max(np.abs(rank1_ctx.d1(c2).values - expected)) < 1e-13


def test_complex_property_many_random_fields(rank2_ctx, grid):
    # d1 d0 = 0 and d1c d0c = 0 over 100 random band-limited endomorphisms
    rng = np.random.default_rng(42)
    for _ in range(100):
        gg = random_band_limited(grid, 0, 0, rng, rank=2).values
        r1 = norm(rank2_ctx.d1(rank2_ctx.d0(gg)), rank2_ctx.metric.h)
        r2 = norm(rank2_ctx.d1c(rank2_ctx.d0c(gg)), rank2_ctx.metric.h)
        scale = max(1.0, float(np.max(np.abs(gg))))
        assert r1 < 1e-10 * scale
        assert r2 < 1e-10 * scale


def test_differentials_dispatch(rank2_ctx):
    d0, d1 = rank2_ctx.differentials("holomorphic")
    d0c, d1c = rank2_ctx.differentials("conjugate")
    assert d0 is not None and d1c is not None
    with pytest.raises(ValueError):
        rank2_ctx.differentials("mixed")


# ---------------------------------------------------------------------------
# theta_star and bar
# ---------------------------------------------------------------------------


def test_theta_star_map(rank2_ctx, grid):
    eta = BeltramiField.constant(grid, 0.4 - 0.1j)
    zero_theta = Field.zero(grid, 1, 0, rank=2)
    c0 = theta_star_map(eta, zero_theta)
    assert norm(c0.psi) < 1e-15
    c = theta_star_map(eta, rank2_ctx.bundle.theta)
    assert rank2_ctx.closedness_residual(c) < 1e-12
    # rank 1: class nonzero iff c p != 0 (constants span H^{0,1})
    theta1 = Field.constant(grid, 1, 0, np.array([[0.7 - 0.3j]]))
    ctx1 = DeformationContext(
        HiggsBundle(Field.zero(grid, 0, 1, rank=1), theta1), HermitianMetric.identity(grid, 1)
    )
    c1 = theta_star_map(eta, theta1)
    assert ctx1.class_norm(c1) > 0.1
    czero = theta_star_map(BeltramiField.constant(grid, 0.0), theta1)
    assert ctx1.class_norm(czero) < 1e-12


def test_theta_star_exactness_iff_constant_mode(rank1_ctx, grid):
    # non-constant eta with zero mean is dbar-exact: class vanishes; in
    # general the harmonic part is the constant mode of the contraction
    c0 = 0.25 - 0.1j
    osc = 0.2 * np.exp(2j * np.pi * grid.x)
    eta = BeltramiField(Field(grid, 0, 1, c0 + osc))
    c = theta_star_map(eta, rank1_ctx.bundle.theta)
    harm, _ = rank1_ctx.harmonic_representative(c)
    p = rank1_ctx.bundle.theta.values[0, 0, 0, 0]
    assert np.max(np.abs(harm.psi.values - c0 * p)) < 1e-9
    assert norm(harm.phi) < 1e-10


def test_bar_map_properties(rank2_ctx, grid):
    rng = np.random.default_rng(3)
    psi = random_band_limited(grid, 0, 1, rng, rank=2)
    c = DolbeaultCocycle(Field.zero(grid, 1, 0, rank=2), psi)
    bc = bar_map(c, rank2_ctx)
    # (0, psi) -> (psi^{*}, 0) in the (conjugate C^{1,0}, C^{0,1}) slots
    assert np.max(np.abs(bc.psi.values - rank2_ctx.metric.adjoint_values(psi.values))) < 1e-14
    assert norm(bc.phi) < 1e-14
    # bar^2 = -id and isometry on a full random cocycle
    full = DolbeaultCocycle(random_band_limited(grid, 1, 0, rng, rank=2), psi)
    twice = bar_map(bar_map(full, rank2_ctx), rank2_ctx)
    assert rank2_ctx.pair_norm(twice + full) < 1e-12
    assert abs(rank2_ctx.pair_norm(bar_map(full, rank2_ctx)) - rank2_ctx.pair_norm(full)) < 1e-12


def test_bar_maps_closed_to_closed_and_descends(rank2_ctx, grid):
    rng = np.random.default_rng(5)
    eta = BeltramiField.constant(grid, 0.4 - 0.1j)
    base = theta_star_map(eta, rank2_ctx.bundle.theta)
    gg = random_band_limited(grid, 0, 0, rng, rank=2).values
    shifted = base + rank2_ctx.d0(gg)
    assert rank2_ctx.closedness_residual(shifted) < 1e-10
    b1 = bar_map(shifted, rank2_ctx)
    assert rank2_ctx.closedness_residual(b1) < 1e-10
    # descends to classes
    d = rank2_ctx.class_distance(b1, bar_map(base, rank2_ctx))
    assert d < 1e-8


# ---------------------------------------------------------------------------
# harmonic representatives and class distance
# ---------------------------------------------------------------------------


def test_harmonic_constant_rank1_unchanged(rank1_ctx, grid):
    c = DolbeaultCocycle(
        Field.constant(grid, 1, 0, np.array([[0.3 + 0.1j]])),
        Field.constant(grid, 0, 1, np.array([[-0.2 + 0.5j]])),
    )
    harm, gsol = rank1_ctx.harmonic_representative(c)
    assert rank1_ctx.pair_norm(harm - c) < 1e-11
    assert np.linalg.norm(gsol) < 1e-9


def test_harmonic_shift_invariance_and_idempotence(rank2_ctx, grid):
    rng = np.random.default_rng(11)
    eta = BeltramiField.constant(grid, 0.4 - 0.1j)
    base = theta_star_map(eta, rank2_ctx.bundle.theta)
    gg = random_band_limited(grid, 0, 0, rng, rank=2).values
    h1, _ = rank2_ctx.harmonic_representative(base)
    h2, _ = rank2_ctx.harmonic_representative(base + rank2_ctx.d0(gg))
    assert rank2_ctx.pair_norm(h1 - h2) < 1e-8
    assert rank2_ctx.closedness_residual(h1) < 1e-8
    assert rank2_ctx.coclosedness_residual(h1) < 1e-8
    h3, g3 = rank2_ctx.harmonic_representative(h1)
    assert rank2_ctx.pair_norm(h3 - h1) < 1e-9


def test_class_distance_properties(rank1_ctx, rank2_ctx, grid):
    rng = np.random.default_rng(13)
    eta = BeltramiField.constant(grid, 0.4 - 0.1j)
    c = theta_star_map(eta, rank2_ctx.bundle.theta)
    gg = random_band_limited(grid, 0, 0, rng, rank=2).values
    assert rank2_ctx.class_distance(c, c + rank2_ctx.d0(gg)) < 1e-8

    # rank 1: distinct Fourier-mode cocycles differ exactly by their constant
    # parts (abelian Hodge decomposition)
    e1 = Field(grid, 0, 1, np.full((32, 32), 0.3 + 0.2j))
    e2 = Field(grid, 0, 1, 0.7 * np.exp(2j * np.pi * grid.y))
    z = Field.zero(grid, 1, 0, rank=1)
    c1 = DolbeaultCocycle(z, Field(grid, 0, 1, e1.values[:, :, None, None]))
    c2 = DolbeaultCocycle(z, Field(grid, 0, 1, e2.values[:, :, None, None]))
    d = rank1_ctx.class_distance(c1, c2)
    expected = norm(Field(grid, 0, 1, np.full((32, 32, 1, 1), 0.3 + 0.2j)))
    assert abs(d - expected) < 1e-9

    # metric axioms on random closed triples
    cocycles = []
    for _ in range(3):
        gg = random_band_limited(grid, 0, 0, rng, rank=2).values
        lam = rng.standard_normal() + 1j * rng.standard_normal()
        cocycles.append(lam * c + rank2_ctx.d0(gg))
    d01 = rank2_ctx.class_distance(cocycles[0], cocycles[1])
    d10 = rank2_ctx.class_distance(cocycles[1], cocycles[0])
    d02 = rank2_ctx.class_distance(cocycles[0], cocycles[2])
    d12 = rank2_ctx.class_distance(cocycles[1], cocycles[2])
    assert abs(d01 - d10) < 1e-10
    assert d02 <= d01 + d12 + 1e-10


def test_class_distance_requires_closed(rank2_ctx, grid):
    rng = np.random.default_rng(17)
    bad = DolbeaultCocycle(
        random_band_limited(grid, 1, 0, rng, rank=2),
        random_band_limited(grid, 0, 1, rng, rank=2),
    )
    eta = BeltramiField.constant(grid, 0.4 - 0.1j)
    good = theta_star_map(eta, rank2_ctx.bundle.theta)
    with pytest.raises(ValueError):
        rank2_ctx.class_distance(bad, good)


# ---------------------------------------------------------------------------
# triples
# ---------------------------------------------------------------------------


def test_triple_closed_check(rank2_ctx, grid):
    rng = np.random.default_rng(19)
    theta = rank2_ctx.bundle.theta
    eta0 = BeltramiField.constant(grid, 0.0)
    closed_pair = theta_star_map(BeltramiField.constant(grid, 0.2), theta)
    t0 = DeformationTriple(closed_pair.phi, closed_pair.psi, eta0)
    assert rank2_ctx.triple_closed_check(t0) < 1e-12

    bad = DeformationTriple(
        random_band_limited(grid, 1, 0, rng, rank=2),
        random_band_limited(grid, 0, 1, rng, rank=2),
        BeltramiField.constant(grid, 0.3),
    )
    assert rank2_ctx.triple_closed_check(bad) > 1e-3


# ---------------------------------------------------------------------------
# dimension oracle
# ---------------------------------------------------------------------------


def test_h1_dimension_rank1(rank1_ctx, grid):
    # rank 1 on the torus: h^{0,1}(O) + h^0(Omega^1) = 2, independent of theta
    for K in (4, 6, 8):
        assert rank1_ctx.h1_dimension(K) == 2
        assert rank1_ctx.h1_singular_gap(K) >= 1e4
    theta0 = Field.zero(grid, 1, 0, rank=1)
    ctx0 = DeformationContext(
        HiggsBundle(Field.zero(grid, 0, 1, rank=1), theta0), HermitianMetric.identity(grid, 1)
    )
    assert ctx0.h1_dimension(4) == 2


def test_h1_dimension_rank2_block_decomposition(rank2_ctx):
    # E = O + O with theta = diag(p, -p), p != 0: the two diagonal rank-1
    # complexes contribute 2 each; the off-diagonal blocks have d0 injective
    # mode-wise with matching d1 kernel (multiplication by 2p dz), so they
    # contribute 0.  Block count: 2 + 2 + 0 + 0.
    assert rank2_ctx.h1_dimension(4) == 4


def test_h1_mode_cut_guard(rank1_ctx):
    with pytest.raises(ValueError):
        rank1_ctx.h1_dimension(9)
