"""Bundle-level objects over the spectral torus.

All bundles are smoothly trivial (degree zero), so a holomorphic structure is
the perturbation a01 of the flat dbar, a Higgs field is a matrix (1,0) field,
a Hermitian metric is a pointwise positive matrix field, and a flat connection
is D = d + M10 dz + M01 dzbar.  The metric pairing is <s, t>_h = conj(s)^T h t
(conjugate linear in the first slot), which makes the h-adjoint of an
endomorphism  X^{*h} = h^{-1} conj(X)^T h.

Unique splittings used throughout:

* Chern connection of (h, a01):  M10 = h^{-1} dh/dz - a01^{*h}.
* Flat decomposition D = D_h + psi_h with D_h h-unitary and psi_h
  h-self-adjoint:  theta = psi^{1,0} = (M10 + M01^{*h} - h^{-1} dh/dz) / 2,
  which is the frame formula psi_h = -h^{-1} (D h) / 2.

Everything is an immutable value; operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .torus import Field, SpectralGrid, norm

__all__ = [
    "HermitianMetric",
    "HiggsBundle",
    "FlatBundle",
    "GaugeTransform",
    "adjoint_star",
    "chern_connection",
    "curvature",
    "hym_residual",
    "gauge_apply",
    "gauge_apply_flat",
    "flat_decompose",
    "monodromy",
    "flat_orbit_distance",
    "expm_field",
    "random_gauge",
]

DEFAULT_TOL = 1e-10


def _ct(values: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(values, -1, -2))


def expm_field(values: np.ndarray) -> np.ndarray:
    """Pointwise matrix exponential of an (N, N, n, n) array.

    Uses the batched eigendecomposition; falls back to scipy per node when a
    nearly defective matrix makes the eigenbasis ill-conditioned.
    """
    w, v = np.linalg.eig(values)
    out = v @ (np.exp(w)[..., None] * np.linalg.inv(v))
    bad = ~np.isfinite(out).all(axis=(-2, -1))
    if bad.any():
        out = out.copy()
        for idx in zip(*np.nonzero(bad)):
            out[idx] = scipy.linalg.expm(values[idx])
    return out


@dataclass(frozen=True)
class HermitianMetric:
    """Pointwise Hermitian positive definite matrix field, optional det = 1."""

    h: Field
    sl_constraint: bool = False

    def __post_init__(self):
        f = self.h
        if not f.is_matrix or f.bidegree != (0, 0):
            raise ValueError("metric must be a matrix (0,0) field")
        herm = np.max(np.abs(f.values - _ct(f.values)))
        if herm > 1e-9 * max(1.0, np.max(np.abs(f.values))):
            raise ValueError(f"metric not Hermitian (deviation {herm:.2e})")
        eigs = np.linalg.eigvalsh(f.values)
        if eigs.min() <= 0:
            raise ValueError("metric not positive definite")
        if self.sl_constraint:
            dets = np.linalg.det(f.values)
            if np.max(np.abs(dets - 1.0)) > 1e-8:
                raise ValueError("det h = 1 violated under sl constraint")

    @property
    def grid(self) -> SpectralGrid:
        return self.h.grid

    @property
    def rank(self) -> int:
        return self.h.rank

    @property
    def inverse_values(self) -> np.ndarray:
        return np.linalg.inv(self.h.values)

    def adjoint_values(self, values: np.ndarray) -> np.ndarray:
        """Pointwise h-adjoint of matrix coefficients."""
        return self.inverse_values @ _ct(values) @ self.h.values

    def log_det(self) -> Field:
        sign, logabs = np.linalg.slogdet(self.h.values)
        return Field(self.grid, 0, 0, logabs + np.log(sign.astype(np.complex128)))

    def normalized(self) -> "HermitianMetric":
        """Fix the central scaling: det h = 1 (sl) or integral of log det = 0."""
        vals = self.h.values
        n = self.rank
        if self.sl_constraint:
            dets = np.linalg.det(vals)
            vals = vals / (dets ** (1.0 / n))[..., None, None]
        else:
            mean_logdet = float(np.mean(np.linalg.slogdet(vals)[1]))
            vals = vals * np.exp(-mean_logdet / n)
        return HermitianMetric(Field(self.grid, 0, 0, vals.real + 1j * vals.imag), self.sl_constraint)

    def updated(self, s_values: np.ndarray) -> "HermitianMetric":
        """h <- h exp(s) for an h-self-adjoint s; positivity by construction."""
        new_vals = self.h.values @ expm_field(s_values)
        new_vals = 0.5 * (new_vals + _ct(new_vals))  # kill roundoff drift
        return HermitianMetric(Field(self.grid, 0, 0, new_vals), self.sl_constraint)

    @staticmethod
    def identity(grid: SpectralGrid, rank: int, sl: bool = False) -> "HermitianMetric":
        return HermitianMetric(Field.identity(grid, rank), sl)


def adjoint_star(phi: Field, metric: HermitianMetric) -> Field:
    """h-adjoint X -> h^{-1} conj(X)^T h with bidegree swap (p,q) -> (q,p).

    Involutive; conjugate linear; sends a Higgs field theta = P dz to
    theta^{*h} = P^{*h} dzbar.
    """
    if not phi.is_matrix:
        raise ValueError("adjoint_star acts on matrix fields")
    return Field(phi.grid, phi.q, phi.p, metric.adjoint_values(phi.values))


@dataclass(frozen=True)
class HiggsBundle:
    """Higgs data (dbar + a01, theta) on the trivial rank-n bundle."""

    a01: Field
    theta: Field
    sl_constraint: bool = False

    def __post_init__(self):
        if self.a01.bidegree != (0, 1) or not self.a01.is_matrix:
            raise ValueError("a01 must be a matrix (0,1) field")
        if self.theta.bidegree != (1, 0) or not self.theta.is_matrix:
            raise ValueError("theta must be a matrix (1,0) field")
        if not self.a01.grid.compatible(self.theta.grid):
            raise ValueError("a01 and theta live on different grids")
        if self.a01.rank != self.theta.rank:
            raise ValueError("rank mismatch")

    @property
    def grid(self) -> SpectralGrid:
        return self.theta.grid

    @property
    def rank(self) -> int:
        return self.theta.rank

    def holomorphicity_residual(self) -> float:
        """L2 norm of dbar_E theta (the (1,1) coefficient of the obstruction)."""
        g = self.grid
        t = self.theta.values
        a = self.a01.values
        rep = -(g.d_dzbar(t) + a @ t - t @ a)
        return norm(Field(g, 1, 1, rep))

    def trace_residual(self) -> float:
        return float(np.max(np.abs(np.trace(self.theta.values, axis1=-2, axis2=-1))))

    def validate(self, tol: float = 1e-8):
        res = self.holomorphicity_residual()
        scale = max(1.0, norm(self.theta))
        if res > tol * scale:
            raise ValueError(f"theta not holomorphic: residual {res:.2e}")
        if self.sl_constraint and self.trace_residual() > tol:
            raise ValueError("tr theta != 0 under sl constraint")
        return self


@dataclass(frozen=True)
class FlatBundle:
    """Flat connection D = d + M10 dz + M01 dzbar on the trivial bundle."""

    m10: Field
    m01: Field

    def __post_init__(self):
        if self.m10.bidegree != (1, 0) or self.m01.bidegree != (0, 1):
            raise ValueError("connection coefficients must be (1,0) and (0,1) fields")
        if not (self.m10.is_matrix and self.m01.is_matrix):
            raise ValueError("connection coefficients must be matrix fields")
        if not self.m10.grid.compatible(self.m01.grid):
            raise ValueError("coefficients live on different grids")

    @property
    def grid(self) -> SpectralGrid:
        return self.m10.grid

    @property
    def rank(self) -> int:
        return self.m10.rank

    def curvature(self) -> Field:
        return curvature(self.m10, self.m01)

    def flatness_residual(self) -> float:
        return norm(self.curvature())

    def validate(self, tol: float = 1e-8):
        scale = max(1.0, norm(self.m10) + norm(self.m01))
        res = self.flatness_residual()
        if res > tol * scale:
            raise ValueError(f"connection not flat: residual {res:.2e}")
        return self

    def lattice_coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients (Mx, My) of D = d + Mx dx + My dy; fixed under
        isomonodromic transport of the torus modulus."""
        tau = self.grid.tau
        mx = self.m10.values + self.m01.values
        my = tau * self.m10.values + np.conj(tau) * self.m01.values
        return mx, my

    @staticmethod
    def from_lattice_coefficients(grid: SpectralGrid, mx: np.ndarray, my: np.ndarray) -> "FlatBundle":
        tau = grid.tau
        denom = np.conj(tau) - tau
        m10 = (np.conj(tau) * mx - my) / denom
        m01 = (my - tau * mx) / denom
        return FlatBundle(Field(grid, 1, 0, m10), Field(grid, 0, 1, m01))

    @staticmethod
    def constant(grid: SpectralGrid, m10: np.ndarray, m01: np.ndarray) -> "FlatBundle":
        return FlatBundle(Field.constant(grid, 1, 0, m10), Field.constant(grid, 0, 1, m01))


def curvature(m10: Field, m01: Field) -> Field:
    """Curvature coefficient F = dM01/dz - dM10/dzbar + [M10, M01] against dz ^ dzbar."""
    g = m10.grid
    a, b = m10.values, m01.values
    rep = g.d_dz(b) - g.d_dzbar(a) + a @ b - b @ a
    return Field(g, 1, 1, rep)


def chern_connection(metric: HermitianMetric, a01: Field) -> Field:
    """(1,0) coefficient of the unique h-unitary connection with D^{0,1} = dbar + a01."""
    g = metric.grid
    dh = g.d_dz(metric.h.values)
    vals = metric.inverse_values @ dh - metric.adjoint_values(a01.values)
    return Field(g, 1, 0, vals)


def hym_residual(bundle: HiggsBundle, metric: HermitianMetric) -> tuple[Field, float]:
    """Hitchin-Yang-Mills residual F(D_h) + [theta, theta^{*h}] and its L2 norm."""
    m10 = chern_connection(metric, bundle.a01)
    f = curvature(m10, bundle.a01)
    t = bundle.theta.values
    q = metric.adjoint_values(t)
    rep = f.values + t @ q - q @ t
    res = Field(bundle.grid, 1, 1, rep)
    return res, norm(res, metric.h)


@dataclass(frozen=True)
class GaugeTransform:
    """Pointwise invertible matrix field acting on all bundle data."""

    g: Field
    max_condition: float = 1e12

    def __post_init__(self):
        if not self.g.is_matrix or self.g.bidegree != (0, 0):
            raise ValueError("gauge transform must be a matrix (0,0) field")
        conds = np.linalg.cond(self.g.values)
        if not np.isfinite(conds).all() or conds.max() > self.max_condition:
            raise ValueError("gauge transform is ill-conditioned")

    @property
    def grid(self) -> SpectralGrid:
        return self.g.grid

    @property
    def inverse_values(self) -> np.ndarray:
        return np.linalg.inv(self.g.values)

    def inverse(self) -> "GaugeTransform":
        return GaugeTransform(Field(self.grid, 0, 0, self.inverse_values), self.max_condition)

    def compose(self, other: "GaugeTransform") -> "GaugeTransform":
        return GaugeTransform(Field(self.grid, 0, 0, self.g.values @ other.g.values), self.max_condition)

    @staticmethod
    def identity(grid: SpectralGrid, rank: int) -> "GaugeTransform":
        return GaugeTransform(Field.identity(grid, rank))


def gauge_apply(
    gauge: GaugeTransform, bundle: HiggsBundle, metric: HermitianMetric
) -> tuple[HiggsBundle, HermitianMetric]:
    """Pull back (a01, theta, h) along G:

        a01 -> G^{-1} a01 G + G^{-1} dbar G,   theta -> G^{-1} theta G,
        h -> G^{*} h G  (so <s,t>_{h'} = <Gs, Gt>_h).

    hym_residual is equivariant: the residual transforms by conjugation and
    its h-norm is preserved.
    """
    g = bundle.grid
    gv = gauge.g.values
    gi = gauge.inverse_values
    a01 = gi @ bundle.a01.values @ gv + gi @ g.d_dzbar(gv)
    theta = gi @ bundle.theta.values @ gv
    h = _ct(gv) @ metric.h.values @ gv
    h = 0.5 * (h + _ct(h))
    new_bundle = HiggsBundle(Field(g, 0, 1, a01), Field(g, 1, 0, theta), bundle.sl_constraint)
    new_metric = HermitianMetric(Field(g, 0, 0, h), metric.sl_constraint and bool(
        np.max(np.abs(np.linalg.det(h) - 1.0)) < 1e-8))
    return new_bundle, new_metric


def gauge_apply_flat(gauge: GaugeTransform, flat: FlatBundle) -> FlatBundle:
    """Pull back D = d + M along G: M -> G^{-1} M G + G^{-1} dM-legs G."""
    g = flat.grid
    gv = gauge.g.values
    gi = gauge.inverse_values
    m10 = gi @ flat.m10.values @ gv + gi @ g.d_dz(gv)
    m01 = gi @ flat.m01.values @ gv + gi @ g.d_dzbar(gv)
    return FlatBundle(Field(g, 1, 0, m10), Field(g, 0, 1, m01))


class FlatDecomposition(NamedTuple):
    u10: Field
    u01: Field
    theta: Field
    theta_star: Field


def flat_decompose(flat: FlatBundle, metric: HermitianMetric, tol: float = 1e-8) -> FlatDecomposition:
    """Unique splitting D = D_h + psi_h with D_h h-unitary, psi_h h-self-adjoint.

    theta is the (1,0) part of psi_h; the reassembly u + psi returns D exactly.
    """
    flat.validate(tol)
    g = flat.grid
    hinv_dh = metric.inverse_values @ g.d_dz(metric.h.values)
    theta_vals = 0.5 * (flat.m10.values + metric.adjoint_values(flat.m01.values) - hinv_dh)
    theta = Field(g, 1, 0, theta_vals)
    theta_star = Field(g, 0, 1, metric.adjoint_values(theta_vals))
    u10 = Field(g, 1, 0, flat.m10.values - theta_vals)
    u01 = Field(g, 0, 1, flat.m01.values - theta_star.values)
    return FlatDecomposition(u10, u01, theta, theta_star)


# ---------------------------------------------------------------------------
# Monodromy
# ---------------------------------------------------------------------------


def _slice_evaluator(grid: SpectralGrid, values: np.ndarray, along: str):
    """1D trigonometric interpolant of a matrix field along y=0 (x loop) or x=0."""
    modes = grid.to_modes(values)
    if along == "x":
        coeffs = modes.sum(axis=1)  # sum over k2 -> function of x at y=0
    else:
        coeffs = modes.sum(axis=0)
    N = grid.n_modes
    k = np.fft.fftfreq(N, d=1.0 / N)

    def ev(t: float) -> np.ndarray:
        phase = np.exp(2j * np.pi * k * t)
        return np.tensordot(phase, coeffs, axes=(0, 0))

    return ev


def monodromy(flat: FlatBundle, n_steps: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Holonomy (A, B) of D around the two lattice loops through the origin.

    Parallel transport solves s' = -M(t) s with M the lattice coefficient
    along the loop; fixed-step RK4 on trigonometric interpolants.  For flat
    input the pair commutes up to integration error.
    """
    grid = flat.grid
    if n_steps is None:
        n_steps = 32 * grid.n_modes
    mx, my = flat.lattice_coefficients()
    out = []
    for coeff, along in ((mx, "x"), (my, "y")):
        ev = _slice_evaluator(grid, coeff, along)
        n = flat.rank
        S = np.eye(n, dtype=np.complex128)
        h = 1.0 / n_steps
        for i in range(n_steps):
            t = i * h
            k1 = -ev(t) @ S
            k2 = -ev(t + 0.5 * h) @ (S + 0.5 * h * k1)
            k3 = -ev(t + 0.5 * h) @ (S + 0.5 * h * k2)
            k4 = -ev(t + h) @ (S + h * k3)
            S = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(S)
    return out[0], out[1]


def is_semisimple_pair(a: np.ndarray, b: np.ndarray, tol: float = 1e-8) -> bool:
    """Diagonalizability test for a commuting monodromy pair."""
    if np.linalg.norm(a @ b - b @ a) > tol * max(1.0, np.linalg.norm(a) * np.linalg.norm(b)):
        return False
    for m in (a, b):
        w, v = np.linalg.eig(m)
        if np.linalg.cond(v) > 1e8:
            return False
        if np.linalg.norm(v @ np.diag(w) @ np.linalg.inv(v) - m) > 1e-6 * max(1.0, np.linalg.norm(m)):
            return False
    return True


def _spectrum_distance(a: np.ndarray, b: np.ndarray) -> float:
    from scipy.optimize import linear_sum_assignment

    wa = np.linalg.eigvals(a)
    wb = np.linalg.eigvals(b)
    cost = np.abs(wa[:, None] - wb[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


def flat_orbit_distance(f1: FlatBundle, f2: FlatBundle) -> float:
    """Gauge-orbit distance through the character-variety invariants.

    For semisimple commuting monodromy the joint spectra of (A, B, AB)
    separate orbits; the distance is the worst matched-eigenvalue gap.
    """
    a1, b1 = monodromy(f1)
    a2, b2 = monodromy(f2)
    return max(
        _spectrum_distance(a1, a2),
        _spectrum_distance(b1, b2),
        _spectrum_distance(a1 @ b1, a2 @ b2),
    )


def _joint_eigenbasis(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Common eigenbasis of a commuting diagonalizable pair."""
    n = a.shape[0]
    rng = np.random.default_rng(12345)
    best = None
    for _ in range(8):
        c = rng.standard_normal() + 1j * rng.standard_normal()
        w, v = np.linalg.eig(a + c * b)
        sep = np.min(np.abs(w[:, None] - w[None, :]) + np.eye(n) * np.inf)
        off = max(
            np.linalg.norm(np.linalg.solve(v, a @ v) - np.diag(np.diag(np.linalg.solve(v, a @ v)))),
            np.linalg.norm(np.linalg.solve(v, b @ v) - np.diag(np.diag(np.linalg.solve(v, b @ v)))),
        )
        score = off + (0.0 if sep > 1e-6 else 1.0)
        if best is None or score < best[0]:
            best = (score, v)
    return best[1]


def _transport_refined(grid: SpectralGrid, coeff: np.ndarray, refine: int = 8):
    """Refined node values of a lattice-coefficient field by zero-padded FFT."""
    N = grid.n_modes
    rN = refine * N
    modes = grid.to_modes(coeff)
    big = np.zeros((rN, rN) + coeff.shape[2:], dtype=np.complex128)
    k = np.fft.fftfreq(N, d=1.0 / N).astype(int)
    idx = np.ix_(k % rN, k % rN)
    big[idx] = modes
    return np.fft.ifft2(big * rN * rN / 1.0, axes=(0, 1)) * 1.0


def constant_gauge_reduction(flat: FlatBundle, refine: int = 8):
    """Reduce a flat bundle to a constant-coefficient representative.

    Returns (W, const_rep) with gauge_apply_flat(W, flat) = const_rep where
    const_rep has constant lattice coefficients built from principal logs of
    the monodromy.  W is assembled from parallel transport along x-then-y
    grid paths (RK4 on a ``refine``-times oversampled trigonometric
    interpolant), so its accuracy is limited by that quadrature.
    """
    grid = flat.grid
    N = grid.n_modes
    a_mon, b_mon = monodromy(flat)
    if not is_semisimple_pair(a_mon, b_mon):
        raise ValueError("constant gauge reduction requires semisimple monodromy")
    v = _joint_eigenbasis(a_mon, b_mon)
    vi = np.linalg.inv(v)
    la = np.diag(vi @ a_mon @ v)
    lb = np.diag(vi @ b_mon @ v)
    mx0 = -v @ np.diag(np.log(la)) @ vi
    my0 = -v @ np.diag(np.log(lb)) @ vi
    const_rep = FlatBundle.from_lattice_coefficients(
        grid, np.broadcast_to(mx0, (N, N) + mx0.shape).copy(), np.broadcast_to(my0, (N, N) + my0.shape).copy()
    )

    mx, my = flat.lattice_coefficients()
    mx_ref = _transport_refined(grid, mx, refine)
    my_ref = _transport_refined(grid, my, refine)
    rN = refine * N
    h = 2.0 / rN  # RK4 step; evaluation points land on the refined grid
    n = flat.rank

    def rk4_path(values_along, transports_shape):
        """Sequential RK4 for S' = -M(t) S along one axis, recording S at the
        coarse nodes.  values_along has shape (rN, batch..., n, n)."""
        steps = rN // 2
        S = np.broadcast_to(np.eye(n), transports_shape + (n, n)).copy().astype(np.complex128)
        out = [S.copy()]
        for i in range(steps):
            m0 = values_along[(2 * i) % rN]
            m1 = values_along[(2 * i + 1) % rN]
            m2 = values_along[(2 * i + 2) % rN]
            k1 = -m0 @ S
            k2 = -m1 @ (S + 0.5 * h * k1)
            k3 = -m1 @ (S + 0.5 * h * k2)
            k4 = -m2 @ (S + h * k3)
            S = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if (2 * (i + 1)) % refine == 0:
                out.append(S.copy())
        return S, out

    # transports along the x axis (y = 0): T_x(x_j) at coarse nodes
    row = mx_ref[:, 0]  # (rN, n, n)
    _, tx_list = rk4_path(row, ())
    t_x = np.stack(tx_list[:N], axis=0)  # (N, n, n)

    # transports down each y column, batched over the coarse x nodes
    cols = my_ref[:: refine, :, :, :]  # (N, rN, n, n) -> need axis order (rN, N, n, n)
    cols = np.swapaxes(cols, 0, 1)
    _, ty_list = rk4_path(cols, (N,))
    t_y = np.stack(ty_list[:N], axis=0)  # (N, N, n, n): [y, x]
    t_y = np.swapaxes(t_y, 0, 1)  # [x, y]

    t_fb = t_y @ t_x[:, None, :, :]  # transport (0,0) -> (x,0) -> (x,y)

    # constant transport: T_const = exp(-x Mx0 - y My0) = V e^{x log la + y log lb} V^{-1}
    x = np.arange(N) / N
    y = np.arange(N) / N
    ex = np.exp(np.outer(x, np.log(la)))  # (N, n)
    ey = np.exp(np.outer(y, np.log(lb)))
    diag = ex[:, None, :] * ey[None, :, :]  # (N, N, n)
    t_const = (v[None, None] * diag[..., None, :]) @ vi[None, None]

    w_vals = t_fb @ np.linalg.inv(t_const)
    W = GaugeTransform(Field(grid, 0, 0, w_vals))
    return W, const_rep, v


def random_gauge(
    grid: SpectralGrid,
    rank: int,
    rng: np.random.Generator,
    scale: float = 0.5,
    det_one: bool = False,
    kmax: int | None = None,
) -> GaugeTransform:
    """Smooth random gauge transform G = exp(s) with band-limited s.

    exp(s) is analytic but not band-limited; keep scale and kmax small enough
    that its spectral tail sits below the working tolerance on the given grid.
    """
    from .torus import random_band_limited

    s = random_band_limited(grid, 0, 0, rng, rank=rank, scale=scale, kmax=kmax)
    vals = s.values
    if det_one:
        tr = np.trace(vals, axis1=-2, axis2=-1) / rank
        vals = vals - tr[..., None, None] * np.eye(rank)
    return GaugeTransform(Field(grid, 0, 0, expm_field(vals)))
