"""Exact spectral complex geometry on flat tori.

The arena is the torus T_tau = C / (Z + tau Z) with Im(tau) > 0, sampled on a
uniform N x N lattice in the real coordinates (x, y) of z = x + tau*y.  All
fields are trigonometric polynomials, so Dolbeault operators are evaluated
mode-wise and are exact on band-limited data.

Conventions fixed here and used everywhere else:

* Kaehler form  omega0 = (i/2) dz ^ dzbar = Im(tau) dx ^ dy, so the torus has
  area Im(tau).  The contraction satisfies Lambda(dz ^ dzbar) = -2i.
* dz = dx + tau dy, hence
      d/dz    = (conj(tau) d/dx - d/dy) / (conj(tau) - tau)
      d/dzbar = (d/dy - tau d/dx)       / (conj(tau) - tau)
* A (p, q) field stores the coefficient against dz^p dzbar^q; (1,1) fields
  store the coefficient against dz ^ dzbar.  Because of the orientation this
  gives dolbeault(f dz, antiholomorphic) = -(df/dzbar) dz ^ dzbar while
  dolbeault(g dzbar, holomorphic) = +(dg/dz) dz ^ dzbar.
* Pointwise products of two fields band-limited to |k| <= N/3 are alias-free
  at band limit N; test data is generated inside that band.

All values here are immutable; operations are pure and safe to evaluate
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _dc_field

import numpy as np

__all__ = [
    "TorusModulus",
    "SpectralGrid",
    "Field",
    "BeltramiField",
    "DegreeError",
    "dolbeault",
    "dolbeault_adjoint",
    "contract",
    "contract_conj",
    "inner_product",
    "norm",
    "deformed_modulus",
    "random_band_limited",
]


class DegreeError(ValueError):
    """Raised when an operation would leave the curve-case form degrees."""


@dataclass(frozen=True)
class TorusModulus:
    """Modulus tau of the flat torus C/(Z + tau Z), with Im(tau) > 0."""

    tau: complex

    def __post_init__(self):
        tau = complex(self.tau)
        if not np.isfinite(tau.real) or not np.isfinite(tau.imag):
            raise ValueError("tau must be finite")
        if tau.imag <= 0:
            raise ValueError(f"Im(tau) must be positive, got tau = {tau}")
        object.__setattr__(self, "tau", tau)

    @property
    def area(self) -> float:
        return self.tau.imag


def deformed_modulus(modulus: TorusModulus, mu: complex) -> TorusModulus:
    """Modulus of the torus deformed by a constant Beltrami coefficient mu.

    The affine map w = z + mu*conj(z) sends the lattice <1, tau> to
    <1 + mu, tau + mu*conj(tau)>, so the deformed modulus is

        tau' = (tau + mu*conj(tau)) / (1 + mu).

    Requires |mu| < 1 (beyond that the structure degenerates).
    """
    mu = complex(mu)
    if abs(mu) >= 1.0:
        raise ValueError(f"|mu| must be < 1 for a nondegenerate structure, got {abs(mu)}")
    tau = modulus.tau
    return TorusModulus((tau + mu * np.conj(tau)) / (1.0 + mu))


class SpectralGrid:
    """Uniform N x N sampling of the torus with cached spectral multipliers.

    N must be even and >= 4.  Derivatives are exact for fields band-limited
    to |k| <= N/2 - 1 in both lattice directions.
    """

    def __init__(self, modulus: TorusModulus, n_modes: int):
        n_modes = int(n_modes)
        if n_modes < 4 or n_modes % 2 != 0:
            raise ValueError("n_modes must be an even integer >= 4")
        self.modulus = modulus
        self.n_modes = n_modes
        tau = modulus.tau
        N = n_modes
        coords = np.arange(N) / N
        self.x, self.y = np.meshgrid(coords, coords, indexing="ij")
        k = np.fft.fftfreq(N, d=1.0 / N)  # integer wavenumbers
        k1 = k[:, None]
        k2 = k[None, :]
        denom = np.conj(tau) - tau
        two_pi_i = 2j * np.pi
        # d/dz and d/dzbar as Fourier multipliers; the unpaired Nyquist modes
        # are annihilated so that conj(df/dz) = d(conj f)/dzbar holds exactly,
        # which the adjoint/intertwining identities downstream rely on.
        # Exactness on |k| <= N/2 - 1 is unaffected.
        nyq = (np.abs(k1) == N // 2) | (np.abs(k2) == N // 2)
        self.mult_dz = np.where(nyq, 0.0, two_pi_i * (np.conj(tau) * k1 - k2) / denom)
        self.mult_dzbar = np.where(nyq, 0.0, two_pi_i * (k2 - tau * k1) / denom)
        self.k1 = k1
        self.k2 = k2
        self.band_mask = ~nyq  # modes where derivatives are exact

    def band_project(self, values: np.ndarray) -> np.ndarray:
        """Remove the Nyquist modes (outside the exact-derivative band)."""
        m = self.band_mask.reshape(self.band_mask.shape + (1,) * (values.ndim - 2))
        return np.fft.ifft2(m * np.fft.fft2(values, axes=(0, 1)), axes=(0, 1))

    @property
    def tau(self) -> complex:
        return self.modulus.tau

    @property
    def area(self) -> float:
        return self.modulus.area

    def compatible(self, other: "SpectralGrid") -> bool:
        return self.n_modes == other.n_modes and self.tau == other.tau

    def to_modes(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fft2(values, axes=(0, 1)) / self.n_modes**2

    def from_modes(self, modes: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(modes * self.n_modes**2, axes=(0, 1))

    def derivative(self, values: np.ndarray, mult: np.ndarray) -> np.ndarray:
        """Apply a Fourier multiplier to node values of any trailing shape."""
        m = mult.reshape(mult.shape + (1,) * (values.ndim - 2))
        return np.fft.ifft2(m * np.fft.fft2(values, axes=(0, 1)), axes=(0, 1))

    def d_dz(self, values: np.ndarray) -> np.ndarray:
        return self.derivative(values, self.mult_dz)

    def d_dzbar(self, values: np.ndarray) -> np.ndarray:
        return self.derivative(values, self.mult_dzbar)

    def evaluate_modes_at(self, modes: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Trigonometric interpolation of a field at arbitrary (x, y) points."""
        N = self.n_modes
        k = np.fft.fftfreq(N, d=1.0 / N)
        phase_x = np.exp(2j * np.pi * np.outer(x, k))  # (npts, N)
        phase_y = np.exp(2j * np.pi * np.outer(y, k))
        # sum_k modes[k1,k2,...] e^{2pi i (k1 x + k2 y)}
        tmp = np.tensordot(phase_x, modes, axes=(1, 0))  # (npts, N, ...)
        out = np.einsum("pk,pk...->p...", phase_y, tmp)
        return out

    def __repr__(self):
        return f"SpectralGrid(tau={self.tau}, N={self.n_modes})"


@dataclass(frozen=True)
class Field:
    """Grid-sampled scalar or matrix valued (p, q)-form coefficient.

    ``values`` has shape (N, N) for scalar fields or (N, N, n, n) for
    End-valued fields; it is stored read-only.  The bidegree is restricted to
    p, q in {0, 1} (curve case).
    """

    grid: SpectralGrid
    p: int
    q: int
    values: np.ndarray

    def __post_init__(self):
        if self.p not in (0, 1) or self.q not in (0, 1):
            raise DegreeError(f"bidegree ({self.p},{self.q}) outside the curve range")
        v = np.asarray(self.values, dtype=np.complex128)
        N = self.grid.n_modes
        if v.ndim not in (2, 4) or v.shape[0] != N or v.shape[1] != N:
            raise ValueError(f"values shape {v.shape} incompatible with grid N={N}")
        if v.ndim == 4 and v.shape[2] != v.shape[3]:
            raise ValueError("matrix fields must be square")
        if not v.flags.writeable:
            object.__setattr__(self, "values", v)
        else:
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, "values", v)
        object.__setattr__(self, "_modes_cache", None)

    # -- structure ---------------------------------------------------------
    @property
    def is_matrix(self) -> bool:
        return self.values.ndim == 4

    @property
    def rank(self) -> int:
        return self.values.shape[2] if self.is_matrix else 1

    @property
    def bidegree(self) -> tuple[int, int]:
        return (self.p, self.q)

    def modes(self) -> np.ndarray:
        """Fourier coefficients; cached so mode-based serialization round-trips
        bit-exactly (a field built by :meth:`from_modes` returns them verbatim)."""
        if self._modes_cache is None:
            m = self.grid.to_modes(self.values)
            m.setflags(write=False)
            object.__setattr__(self, "_modes_cache", m)
        return self._modes_cache

    @staticmethod
    def from_modes(grid: SpectralGrid, p: int, q: int, modes: np.ndarray) -> "Field":
        f = Field(grid, p, q, grid.from_modes(np.asarray(modes, dtype=np.complex128)))
        m = np.asarray(modes, dtype=np.complex128).copy()
        m.setflags(write=False)
        object.__setattr__(f, "_modes_cache", m)
        return f

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, self.p, self.q, values)

    # -- arithmetic ---------------------------------------------------------
    def _check_same(self, other: "Field"):
        if not self.grid.compatible(other.grid):
            raise ValueError("fields live on different grids")
        if self.bidegree != other.bidegree:
            raise DegreeError(f"bidegree mismatch {self.bidegree} vs {other.bidegree}")
        if self.values.shape != other.values.shape:
            raise ValueError("shape mismatch")

    def __add__(self, other: "Field") -> "Field":
        self._check_same(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check_same(other)
        return self.with_values(self.values - other.values)

    def __neg__(self) -> "Field":
        return self.with_values(-self.values)

    def __mul__(self, c) -> "Field":
        return self.with_values(self.values * complex(c))

    __rmul__ = __mul__

    def __repr__(self):
        kind = f"matrix[{self.rank}]" if self.is_matrix else "scalar"
        return f"Field(({self.p},{self.q}), {kind}, N={self.grid.n_modes})"

    # -- convenience constructors -------------------------------------------
    @staticmethod
    def zero(grid: SpectralGrid, p: int, q: int, rank: int = 0) -> "Field":
        N = grid.n_modes
        shape = (N, N) if rank == 0 else (N, N, rank, rank)
        return Field(grid, p, q, np.zeros(shape, dtype=np.complex128))

    @staticmethod
    def constant(grid: SpectralGrid, p: int, q: int, value) -> "Field":
        value = np.asarray(value, dtype=np.complex128)
        N = grid.n_modes
        if value.ndim == 0:
            vals = np.full((N, N), complex(value))
        elif value.ndim == 2:
            vals = np.broadcast_to(value, (N, N) + value.shape).copy()
        else:
            raise ValueError("constant value must be a scalar or a square matrix")
        return Field(grid, p, q, vals)

    @staticmethod
    def identity(grid: SpectralGrid, rank: int) -> "Field":
        return Field.constant(grid, 0, 0, np.eye(rank))


@dataclass(frozen=True)
class BeltramiField:
    """Beltrami datum eta = c dzbar (x) d/dz stored through its coefficient c.

    On the torus the harmonic representative of a Kodaira-Spencer class is
    the constant field; ``datum`` extracts that constant (the mean value).
    """

    coefficient: Field

    def __post_init__(self):
        c = self.coefficient
        if c.bidegree != (0, 1) or c.is_matrix:
            raise DegreeError("Beltrami coefficient must be a scalar (0,1) field")

    @property
    def grid(self) -> SpectralGrid:
        return self.coefficient.grid

    @property
    def datum(self) -> complex:
        return complex(np.mean(self.coefficient.values))

    @property
    def is_constant(self) -> bool:
        return float(np.max(np.abs(self.coefficient.values - self.datum))) < 1e-13

    @staticmethod
    def constant(grid: SpectralGrid, c: complex) -> "BeltramiField":
        return BeltramiField(Field.constant(grid, 0, 1, c))


# ---------------------------------------------------------------------------
# Dolbeault operators
# ---------------------------------------------------------------------------

_HOLO = ("holomorphic", "dz", "del")
_ANTI = ("antiholomorphic", "dzbar", "delbar")


def dolbeault(f: Field, direction: str) -> Field:
    """Flat-background d or dbar with exact mode-wise derivatives.

    (1,1) outputs are coefficients against dz ^ dzbar, which makes
    dbar on (1,0) fields carry a minus sign (see module docstring).
    """
    g = f.grid
    if direction in _HOLO:
        if f.p == 1:
            raise DegreeError("d of a (1,q) field leaves the curve degrees")
        deriv = g.d_dz(f.values)
        return Field(g, 1, f.q, deriv)  # (0,0)->(1,0), (0,1)->(1,1) with + sign
    if direction in _ANTI:
        if f.q == 1:
            raise DegreeError("dbar of a (p,1) field leaves the curve degrees")
        deriv = g.d_dzbar(f.values)
        if f.p == 1:
            return Field(g, 1, 1, -deriv)  # dzbar ^ dz = -dz ^ dzbar
        return Field(g, 0, 1, deriv)
    raise ValueError(f"unknown direction {direction!r}")


def dolbeault_adjoint(f: Field, direction: str) -> Field:
    """Formal adjoint of :func:`dolbeault` for the flat L2 structure.

    Defined by <d f, g> = <f, d^* g> with the inner product below; for flat
    scalar data  dbar^*(psi dzbar) = -2 d(psi)/dz  and  d^*(phi dz) =
    -2 d(phi)/dzbar as (0,0) fields, with the matching (1,1) -> (1,0)/(0,1)
    versions carrying the orientation signs of :func:`dolbeault`.
    """
    g = f.grid
    if direction in _ANTI:
        # adjoint of dbar
        if f.bidegree == (0, 1):
            return Field(g, 0, 0, -2.0 * g.d_dz(f.values))
        if f.bidegree == (1, 1):
            # dbar: (1,0)->(1,1) has a minus; w(1,1)/w(1,0) = 2
            return Field(g, 1, 0, 2.0 * g.d_dz(f.values))
        raise DegreeError(f"dbar adjoint undefined on bidegree {f.bidegree}")
    if direction in _HOLO:
        if f.bidegree == (1, 0):
            return Field(g, 0, 0, -2.0 * g.d_dzbar(f.values))
        if f.bidegree == (1, 1):
            return Field(g, 0, 1, -2.0 * g.d_dzbar(f.values))
        raise DegreeError(f"d adjoint undefined on bidegree {f.bidegree}")
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------------------
# Contractions
# ---------------------------------------------------------------------------


def contract(eta: BeltramiField, alpha: Field) -> Field:
    """Contraction eta(alpha) of a (1,0) field by eta = c dzbar (x) d/dz.

    For alpha = f dz returns (c f) dzbar; complex bilinear in both slots.
    """
    if alpha.bidegree != (1, 0):
        raise DegreeError(f"contract expects a (1,0) field, got {alpha.bidegree}")
    c = eta.coefficient.values
    if alpha.is_matrix:
        c = c[:, :, None, None]
    return Field(alpha.grid, 0, 1, c * alpha.values)


def contract_conj(eta: BeltramiField, beta: Field) -> Field:
    """Conjugate contraction etabar(beta) for beta = g dzbar, giving conj(c) g dz."""
    if beta.bidegree != (0, 1):
        raise DegreeError(f"contract_conj expects a (0,1) field, got {beta.bidegree}")
    c = np.conj(eta.coefficient.values)
    if beta.is_matrix:
        c = c[:, :, None, None]
    return Field(beta.grid, 1, 0, c * beta.values)


# ---------------------------------------------------------------------------
# L2 pairing
# ---------------------------------------------------------------------------


def _adjoint_values(values: np.ndarray, h: np.ndarray | None) -> np.ndarray:
    """Pointwise h-adjoint of matrix coefficients, or conjugate for scalars."""
    if values.ndim == 2:
        return np.conj(values)
    ct = np.conj(np.swapaxes(values, -1, -2))
    if h is None:
        return ct
    return np.linalg.inv(h) @ ct @ h


def inner_product(alpha: Field, beta: Field, h: "Field | None" = None) -> complex:
    """Hermitian L2 pairing of two (p,q) fields against omega0.

    <phi (x) a, psi (x) b> integrates tr(phi psi^{*h}) times the pointwise
    Hermitian pairing of the form parts.  With the trivializations used here
    the form factor is 2^(p+q) and the measure contributes Im(tau):

        <a, b> = 2^(p+q) * Im(tau) * mean( tr(a b^{*h}) ).

    ``h`` is an optional Hermitian positive (0,0) matrix field; identity when
    omitted.  Conjugate linear in ``beta``; positive on the diagonal.
    """
    alpha._check_same(beta)
    h_vals = None
    if h is not None:
        if not h.is_matrix or h.bidegree != (0, 0):
            raise ValueError("metric must be a matrix (0,0) field")
        h_vals = h.values
        herm = np.max(np.abs(h_vals - np.conj(np.swapaxes(h_vals, -1, -2))))
        if herm > 1e-10:
            raise ValueError("metric is not Hermitian")
        eigs = np.linalg.eigvalsh(h_vals)
        if eigs.min() <= 0:
            raise ValueError("metric is not positive definite")
    b_star = _adjoint_values(beta.values, h_vals)
    if alpha.is_matrix:
        integrand = np.trace(alpha.values @ b_star, axis1=-2, axis2=-1)
    else:
        integrand = alpha.values * b_star
    w = 2.0 ** (alpha.p + alpha.q)
    return complex(w * alpha.grid.area * np.mean(integrand))


def norm(alpha: Field, h: "Field | None" = None) -> float:
    return float(np.sqrt(max(inner_product(alpha, alpha, h).real, 0.0)))


# ---------------------------------------------------------------------------
# Test-data generator
# ---------------------------------------------------------------------------


def random_band_limited(
    grid: SpectralGrid,
    p: int,
    q: int,
    rng: np.random.Generator,
    rank: int = 0,
    kmax: int | None = None,
    scale: float = 1.0,
) -> Field:
    """Random field supported on modes |k1|, |k2| <= kmax (default N//6).

    The default band keeps pointwise products of two such fields alias-free
    and one further product within the exact-derivative band.
    """
    N = grid.n_modes
    if kmax is None:
        kmax = max(1, N // 6)
    if kmax > N // 2 - 1:
        raise ValueError("kmax exceeds the exact-derivative band")
    shape = (N, N) if rank == 0 else (N, N, rank, rank)
    modes = np.zeros(shape, dtype=np.complex128)
    k = np.fft.fftfreq(N, d=1.0 / N).astype(int)
    mask = (np.abs(k[:, None]) <= kmax) & (np.abs(k[None, :]) <= kmax)
    n_active = int(mask.sum())
    tail = shape[2:]
    coeffs = rng.standard_normal((n_active,) + tail) + 1j * rng.standard_normal((n_active,) + tail)
    modes[mask] = coeffs * (scale / np.sqrt(n_active))
    return Field(grid, p, q, grid.from_modes(modes))
