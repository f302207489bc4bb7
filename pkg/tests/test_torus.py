"""Spectral torus geometry: exactness of Dolbeault operators, pairings,
contractions, and modulus deformation.

Derived expectations were computed with independent oracles (centered finite
differences on refined samples, direct lattice transport, direct quadrature)
and frozen here.
"""

import numpy as np
import pytest

from higgslab.torus import (
    BeltramiField,
    DegreeError,
    Field,
    SpectralGrid,
    TorusModulus,
    contract,
    contract_conj,
    deformed_modulus,
    dolbeault,
    dolbeault_adjoint,
    inner_product,
    norm,
    random_band_limited,
)


def make_grid(tau=1j, N=32):
    return SpectralGrid(TorusModulus(tau), N)


def test_modulus_validation():
    with pytest.raises(ValueError):
        TorusModulus(1.0 - 0.5j)
    with pytest.raises(ValueError):
        SpectralGrid(TorusModulus(1j), 7)
    with pytest.raises(ValueError):
        SpectralGrid(TorusModulus(1j), 2)


def test_dolbeault_constant_is_zero():
    g = make_grid()
    c = Field.constant(g, 0, 0, 2.0 - 0.3j)
    assert norm(dolbeault(c, "antiholomorphic")) < 1e-14
    assert norm(dolbeault(c, "holomorphic")) < 1e-14


def test_dolbeault_single_mode_against_fd_oracle():
    # f = e^{2 pi i x} on tau = i; FD oracle on the analytic function gives
    # dbar f = (pi i) f  (frozen from a centered-difference computation).
    g = make_grid(tau=1j, N=16)
    f = Field(g, 0, 0, np.exp(2j * np.pi * g.x))
    df = dolbeault(f, "antiholomorphic")
    expected = np.pi * 1j * f.values
    assert np.max(np.abs(df.values - expected)) < 1e-12
    # holomorphic derivative of the same mode: d f = (pi i) f as well for tau=i
    dh = dolbeault(f, "holomorphic")
    fd = (np.conj(g.tau) * 2j * np.pi - 0.0) / (np.conj(g.tau) - g.tau)
    assert np.max(np.abs(dh.values - fd * f.values)) < 1e-12


def test_dolbeault_product_rule():
    # dbar(fg) - f dbar(g) - dbar(f) g = 0; inputs band-limited so the product
    # stays inside the exact band (oracle: Leibniz identity at doubled band).
    g = make_grid(tau=0.5 + 1.2j, N=32)
    rng = np.random.default_rng(7)
    f = random_band_limited(g, 0, 0, rng)
    h = random_band_limited(g, 0, 0, rng)
    fg = Field(g, 0, 0, f.values * h.values)
    lhs = dolbeault(fg, "antiholomorphic").values
    rhs = f.values * dolbeault(h, "antiholomorphic").values + dolbeault(f, "antiholomorphic").values * h.values
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_dolbeault_degree_overflow():
    g = make_grid()
    phi = Field.zero(g, 1, 0)
    psi = Field.zero(g, 0, 1)
    with pytest.raises(DegreeError):
        dolbeault(phi, "holomorphic")
    with pytest.raises(DegreeError):
        dolbeault(psi, "antiholomorphic")
    with pytest.raises(DegreeError):
        dolbeault(Field.zero(g, 1, 1), "holomorphic")


def test_dbar_squared_vanishes_and_signs():
    # dbar(dbar f) = 0 mode-wise; the (1,1) orientation carries the minus sign.
    g = make_grid(tau=0.3 + 0.9j)
    rng = np.random.default_rng(3)
    f = random_band_limited(g, 0, 0, rng)
    step1 = dolbeault(f, "antiholomorphic")  # (0,1)
    # d then dbar versus dbar then d anticommute through the orientation:
    a = dolbeault(dolbeault(f, "holomorphic"), "antiholomorphic").values
    b = dolbeault(dolbeault(f, "antiholomorphic"), "holomorphic").values
    assert np.max(np.abs(a + b)) < 1e-12 * max(1.0, np.max(np.abs(a)))
    del step1


def test_contract_definition_and_bilinearity():
    g = make_grid()
    rng = np.random.default_rng(11)
    c = 0.4 - 0.2j
    eta = BeltramiField.constant(g, c)
    theta = random_band_limited(g, 1, 0, rng, rank=2)
    out = contract(eta, theta)
    assert out.bidegree == (0, 1)
    assert np.max(np.abs(out.values - c * theta.values)) < 1e-14
    # bilinearity on random inputs
    eta2 = BeltramiField(random_band_limited(g, 0, 1, rng))
    both = BeltramiField(Field(g, 0, 1, eta.coefficient.values + eta2.coefficient.values))
    lhs = contract(both, theta).values
    rhs = contract(eta, theta).values + contract(eta2, theta).values
    assert np.max(np.abs(lhs - rhs)) < 1e-13
    with pytest.raises(DegreeError):
        contract(eta, Field.zero(g, 0, 1))


def test_contract_conj():
    g = make_grid()
    c = 0.3 + 0.5j
    eta = BeltramiField.constant(g, c)
    beta = Field.constant(g, 0, 1, np.array([[0.0, 1.0], [2.0, 0.0]]))
    out = contract_conj(eta, beta)
    assert out.bidegree == (1, 0)
    assert np.max(np.abs(out.values - np.conj(c) * beta.values)) < 1e-14


def test_inner_product_identity_field():
    # <I, I> with h = I, tau = i equals rank * Im(tau) = 2 (direct quadrature).
    g = make_grid(tau=1j)
    I = Field.identity(g, 2)
    val = inner_product(I, I)
    assert abs(val - 2.0) < 1e-13
    # area scales with Im tau
    g2 = make_grid(tau=0.5 + 2.5j)
    val2 = inner_product(Field.identity(g2, 3), Field.identity(g2, 3))
    assert abs(val2 - 3 * 2.5) < 1e-13


def test_inner_product_hermitian_symmetry_and_positivity():
    g = make_grid()
    rng = np.random.default_rng(5)
    a = random_band_limited(g, 1, 0, rng, rank=2)
    b = random_band_limited(g, 1, 0, rng, rank=2)
    s = random_band_limited(g, 0, 0, rng, rank=2, scale=0.3)
    hv = np.linalg.matrix_power(np.eye(2), 1) + s.values @ np.conj(np.swapaxes(s.values, -1, -2))
    h = Field(g, 0, 0, hv)
    assert abs(inner_product(a, b, h) - np.conj(inner_product(b, a, h))) < 1e-12
    assert inner_product(a, a, h).real > 0
    assert abs(inner_product(a, a, h).imag) < 1e-12


def test_inner_product_mode_orthogonality():
    # distinct Fourier modes are orthogonal (quadrature oracle gives 0)
    g = make_grid(N=16)
    e1 = Field(g, 0, 0, np.exp(2j * np.pi * (g.x + 2 * g.y)))
    e2 = Field(g, 0, 0, np.exp(2j * np.pi * (3 * g.x - g.y)))
    assert abs(inner_product(e1, e2)) < 1e-12


def test_inner_product_rejects_bad_metric():
    g = make_grid()
    a = Field.identity(g, 2)
    bad = Field.constant(g, 0, 0, np.array([[1.0, 0.0], [0.0, -2.0]]))
    with pytest.raises(ValueError):
        inner_product(a, a, bad)


def test_integration_by_parts():
    # <dbar f, g> = <f, dbar^* g> on random band-limited fields
    g = make_grid(tau=0.2 + 1.4j)
    rng = np.random.default_rng(17)
    f = random_band_limited(g, 0, 0, rng)
    w = random_band_limited(g, 0, 1, rng)
    lhs = inner_product(dolbeault(f, "antiholomorphic"), w)
    rhs = inner_product(f, dolbeault_adjoint(w, "antiholomorphic"))
    assert abs(lhs - rhs) < 1e-10
    # and for d on (1,0) side
    u = random_band_limited(g, 1, 0, rng)
    lhs2 = inner_product(dolbeault(f, "holomorphic"), u)
    rhs2 = inner_product(f, dolbeault_adjoint(u, "holomorphic"))
    assert abs(lhs2 - rhs2) < 1e-10


def test_deformed_modulus():
    tau = TorusModulus(2j)
    assert deformed_modulus(tau, 0.0).tau == 2j
    # lattice-transport oracle: w = z + mu zbar sends <1, 2i> to ratio 1.8i/1.1
    out = deformed_modulus(tau, 0.1)
    assert abs(out.tau - 1.8j / 1.1) < 1e-14
    with pytest.raises(ValueError):
        deformed_modulus(tau, 1.0)
    # first-order rate dtau'/dmu = conj(tau) - tau (central-difference oracle)
    h = 1e-6
    fd = (deformed_modulus(tau, h).tau - deformed_modulus(tau, -h).tau) / (2 * h)
    assert abs(fd - (-4j)) < 1e-8
    # Im stays positive on random |mu| < 1
    rng = np.random.default_rng(23)
    for _ in range(50):
        mu = (rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1)) * 0.7
        assert deformed_modulus(tau, mu).tau.imag > 0


def test_trig_interpolation_matches_nodes():
    g = make_grid(tau=0.1 + 1.1j, N=16)
    rng = np.random.default_rng(2)
    f = random_band_limited(g, 0, 0, rng)
    pts_x = g.x[:, 0]
    vals = g.evaluate_modes_at(f.modes(), pts_x, np.zeros_like(pts_x))
    assert np.max(np.abs(vals - f.values[:, 0])) < 1e-12
