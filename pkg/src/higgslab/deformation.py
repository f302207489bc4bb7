"""Hypercohomology of the Higgs deformation complexes.

Two truncated complexes over a Higgs pair (a01, theta) with background
metric h0 compute the holomorphic and anti-holomorphic tangent spaces of the
moduli at a smooth point:

    holomorphic:    g -> ([theta, g], dbar_E g),
                    (phi, psi) -> dbar_E phi + [theta, psi]
    conjugate:      g -> (D'_h0 g, [theta^{*h0}, g]),
                    (phi, psi) -> D'_h0 phi + [psi, theta^{*h0}]

where the conjugate complex is the Dolbeault resolution for the opposite
complex structure (D'_h0 plays dbar, theta^{*h0} plays theta).  d0 is the
infinitesimal gauge action and d1 the linearized holomorphicity constraint,
so d1 d0 = 0 on holomorphic theta (resp. D'-holomorphic theta^{*h0}).

Harmonicity follows Hitchin: a cocycle is harmonic when it is closed and
coclosed; the weighted-L2 adjoint of d0 equals -2 times the conjugate
differential applied with swapped slots, so the least-squares projection of a
closed cocycle onto Im(d0)^perp produces exactly the harmonic representative.
The projector runs CGNR in the weighted product (iterating from zero keeps
the gauge potential g kernel-free).

The bar operator [(phi, psi)] -> [(psi^{*h0}, -phi^{*h0})] realizes the
anti-holomorphic identification; it is an isometry with bar^2 = -id and sends
closed cocycles to closed conjugate cocycles exactly (the *h0 operation
intertwines dbar_E with D'_h0).

Class-level geometry (distances, dimensions) depends on the inner-product
normalizations fixed in :mod:`higgslab.torus`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bundles import HermitianMetric, HiggsBundle
from .krylov import cgnr
from .operators import PairOperators, comm
from .torus import BeltramiField, Field, contract, inner_product, norm

__all__ = [
    "DolbeaultCocycle",
    "ConjugateCocycle",
    "DeformationTriple",
    "DeformationContext",
    "IterativeSolveFailure",
    "theta_star_map",
    "bar_map",
]


class IterativeSolveFailure(RuntimeError):
    """The harmonic-projection least-squares solve stagnated."""


@dataclass(frozen=True)
class DolbeaultCocycle:
    """Representative (phi, psi) of the holomorphic tangent complex.

    phi is a matrix (1,0) field, psi a matrix (0,1) field.
    """

    phi: Field
    psi: Field

    def __post_init__(self):
        if self.phi.bidegree != (1, 0) or self.psi.bidegree != (0, 1):
            raise ValueError("DolbeaultCocycle slots must be (1,0) and (0,1) fields")

    def __add__(self, other):
        return DolbeaultCocycle(self.phi + other.phi, self.psi + other.psi)

    def __sub__(self, other):
        return DolbeaultCocycle(self.phi - other.phi, self.psi - other.psi)

    def __mul__(self, c):
        return DolbeaultCocycle(self.phi * c, self.psi * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class ConjugateCocycle:
    """Representative of the conjugate (anti-holomorphic) complex.

    The slots mirror the conjugate resolution: psi lives in the conjugate
    C^{1,0} (a (1,0) field, the image slot of D'_h0) and phi in the conjugate
    C^{0,1} (a (0,1) field, the image slot of ad(theta^{*h0})).
    """

    phi: Field  # (0,1) field
    psi: Field  # (1,0) field

    def __post_init__(self):
        if self.phi.bidegree != (0, 1) or self.psi.bidegree != (1, 0):
            raise ValueError("ConjugateCocycle slots must be (0,1) and (1,0) fields")

    def __add__(self, other):
        return ConjugateCocycle(self.phi + other.phi, self.psi + other.psi)

    def __sub__(self, other):
        return ConjugateCocycle(self.phi - other.phi, self.psi - other.psi)

    def __mul__(self, c):
        return ConjugateCocycle(self.phi * c, self.psi * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DeformationTriple:
    """Cocycle (phi, psi, eta) for the relative deformation complex.

    Closedness is the condition dbar_E phi + [theta, psi] = D'_h0(eta(theta)).
    """

    phi: Field
    psi: Field
    eta: BeltramiField

    def __post_init__(self):
        if self.phi.bidegree != (1, 0) or self.psi.bidegree != (0, 1):
            raise ValueError("DeformationTriple slots must be (1,0) and (0,1) fields")

    def pair(self) -> DolbeaultCocycle:
        return DolbeaultCocycle(self.phi, self.psi)


def theta_star_map(eta: BeltramiField, theta: Field) -> DolbeaultCocycle:
    """Kodaira-Spencer pushforward [eta] -> [(0, eta(theta))].

    The output is d1-closed on the nose: [theta, eta(theta)] = 0 pointwise
    because the contraction is a scalar multiple of theta.
    """
    zero = Field.zero(theta.grid, 1, 0, rank=theta.rank)
    return DolbeaultCocycle(zero, contract(eta, theta))


class DeformationContext:
    """All deformation-complex operations for a fixed (bundle, h0)."""

    def __init__(self, bundle: HiggsBundle, metric: HermitianMetric, tol: float = 1e-10):
        self.bundle = bundle
        self.metric = metric
        self.ops = PairOperators(bundle, metric)
        self.grid = bundle.grid
        self.tol = tol

    # -- differentials -------------------------------------------------------
    def d0(self, g: np.ndarray) -> DolbeaultCocycle:
        return DolbeaultCocycle(
            Field(self.grid, 1, 0, comm(self.ops.theta, g)),
            Field(self.grid, 0, 1, self.ops.dbar_end(g)),
        )

    def d1(self, c: DolbeaultCocycle) -> Field:
        rep = self.ops.dbar_rep(c.phi.values) + comm(self.ops.theta, c.psi.values)
        return Field(self.grid, 1, 1, rep)

    def d0c(self, g: np.ndarray) -> ConjugateCocycle:
        return ConjugateCocycle(
            Field(self.grid, 0, 1, comm(self.ops.q, g)),
            Field(self.grid, 1, 0, self.ops.dprime_end(g)),
        )

    def d1c(self, c: ConjugateCocycle) -> Field:
        rep = self.ops.dprime_rep(c.phi.values) + comm(c.psi.values, self.ops.q)
        return Field(self.grid, 1, 1, rep)

    def differentials(self, which: str):
        """The operator pair of the requested complex as evaluable maps."""
        if which == "holomorphic":
            return self.d0, self.d1
        if which == "conjugate":
            return self.d0c, self.d1c
        raise ValueError(f"unknown complex {which!r}")

    # -- inner products -------------------------------------------------------
    def pair_inner(self, c1, c2) -> complex:
        h = self.metric.h
        return inner_product(c1.phi, c2.phi, h) + inner_product(c1.psi, c2.psi, h)

    def pair_norm(self, c) -> float:
        return float(np.sqrt(max(self.pair_inner(c, c).real, 0.0)))

    def endo_inner(self, a: np.ndarray, b: np.ndarray) -> complex:
        return inner_product(Field(self.grid, 0, 0, a), Field(self.grid, 0, 0, b), self.metric.h)

    def closedness_residual(self, c) -> float:
        if isinstance(c, DolbeaultCocycle):
            return norm(self.d1(c), self.metric.h)
        return norm(self.d1c(c), self.metric.h)

    def coclosedness_residual(self, c) -> float:
        """Second Hitchin equation: the swapped-slot conjugate differential."""
        if isinstance(c, DolbeaultCocycle):
            swapped = ConjugateCocycle(c.psi, c.phi)
            return norm(self.d1c(swapped), self.metric.h)
        swapped = DolbeaultCocycle(c.psi, c.phi)
        return norm(self.d1(swapped), self.metric.h)

    # -- harmonic projection ---------------------------------------------------
    def _project(self, c, holomorphic: bool, max_iter: int = 4000):
        """Least squares min_g || c - d0 g || in the weighted L2 product.

        The weighted adjoint of d0 is -2x the conjugate differential with
        swapped slots, which is what makes the residual coclosed.
        """
        d0_map = self.d0 if holomorphic else self.d0c
        bidegrees = ((1, 0), (0, 1)) if holomorphic else ((0, 1), (1, 0))

        def stack(cc):
            return np.stack([cc.phi.values, cc.psi.values])

        def apply_a(g):
            return stack(d0_map(g))

        def apply_ah(r):
            phi, psi = r[0], r[1]
            if holomorphic:
                return 2.0 * (comm(self.ops.q, phi) - self.ops.dprime_end(psi))
            return 2.0 * (comm(self.ops.theta, phi) - self.ops.dbar_end(psi))

        def dot_domain(a, b):
            return self.endo_inner(a, b)

        def dot_range(a, b):
            h = self.metric.h
            (p0, q0), (p1, q1) = bidegrees
            return inner_product(
                Field(self.grid, p0, q0, a[0]), Field(self.grid, p0, q0, b[0]), h
            ) + inner_product(Field(self.grid, p1, q1, a[1]), Field(self.grid, p1, q1, b[1]), h)

        b = stack(c)
        scale = max(1.0, np.sqrt(max(dot_range(b, b).real, 0.0)))
        res = cgnr(
            apply_a,
            apply_ah,
            b,
            tol=1e-12,
            max_iter=max_iter,
            dot_domain=dot_domain,
            dot_range=dot_range,
            atol=1e-11 * scale,
        )
        if not res.converged and res.normal_abs > 1e-7 * scale:
            raise IterativeSolveFailure(
                f"harmonic projection stagnated (normal residual {res.normal_abs:.2e})"
            )
        return res.x

    def harmonic_representative(self, c, max_iter: int = 4000):
        """Split a closed cocycle as harmonic + d0(g) (resp. d0c(g)).

        Returns (harmonic, g).  Idempotent on harmonic inputs; the harmonic
        part is closed and coclosed in the sense of the two defining
        equations.
        """
        if isinstance(c, DolbeaultCocycle):
            g = self._project(c, holomorphic=True, max_iter=max_iter)
            return c - self.d0(g), g
        if isinstance(c, ConjugateCocycle):
            g = self._project(c, holomorphic=False, max_iter=max_iter)
            return c - self.d0c(g), g
        raise TypeError("expected a DolbeaultCocycle or ConjugateCocycle")

    def class_distance(self, c1, c2, tol_closed: float = 1e-6) -> float:
        """L2 norm of the harmonic representative of the difference."""
        if type(c1) is not type(c2):
            raise TypeError("cocycles live in different complexes")
        diff = c1 - c2
        scale = max(1.0, self.pair_norm(c1), self.pair_norm(c2))
        if self.closedness_residual(diff) > tol_closed * scale:
            raise ValueError("class_distance requires closed cocycles")
        harm, _ = self.harmonic_representative(diff)
        return self.pair_norm(harm)

    def class_norm(self, c) -> float:
        harm, _ = self.harmonic_representative(c)
        return self.pair_norm(harm)

    # -- triples ----------------------------------------------------------------
    def ks_rhs(self, eta: BeltramiField) -> Field:
        """(1,1) representative of D'_h0(eta(theta))."""
        return Field(self.grid, 1, 1, self.ops.dprime_rep(contract(eta, self.bundle.theta).values))

    def triple_closed_check(self, t: DeformationTriple) -> float:
        """|| dbar_E phi + [theta, psi] - D'_h0(eta(theta)) ||."""
        res = self.d1(t.pair()) - self.ks_rhs(t.eta)
        return norm(res, self.metric.h)

    def triple_class_distance(self, t1: DeformationTriple, t2: DeformationTriple) -> float:
        """Distance of two relative deformation classes over the same [eta].

        The eta slots must agree up to an exact Beltrami part; the difference
        of the pairs is then d1-closed and compared as a Dolbeault class.
        """
        eta_diff = t1.eta.coefficient - t2.eta.coefficient
        if abs(complex(np.mean(eta_diff.values))) > 1e-8:
            raise ValueError("triples deform along different Kodaira-Spencer classes")
        return self.class_distance(t1.pair(), t2.pair())

    # -- brute-force dimension oracle ---------------------------------------------
    def _assemble_truncated(self, mode_cut: int):
        """Galerkin matrices of d0 and d1 on modes |k1|, |k2| <= mode_cut."""
        K = int(mode_cut)
        if K > 8:
            raise ValueError("mode_cut must be <= 8 for the dense oracle")
        n = self.bundle.rank
        N = self.grid.n_modes
        if K > N // 2 - 1:
            raise ValueError("mode_cut exceeds the grid band")
        ks = range(-K, K + 1)
        basis = [(k1, k2, i, j) for k1 in ks for k2 in ks for i in range(n) for j in range(n)]
        dim = len(basis)

        def mode_field(k1, k2, i, j):
            m = np.zeros((N, N, n, n), dtype=np.complex128)
            m[k1 % N, k2 % N, i, j] = 1.0
            return self.grid.from_modes(m)

        def truncate(values):
            m = self.grid.to_modes(values)
            return np.array([m[k1 % N, k2 % N, i, j] for (k1, k2, i, j) in basis])

        d0_mat = np.zeros((2 * dim, dim), dtype=np.complex128)
        d1_mat = np.zeros((dim, 2 * dim), dtype=np.complex128)
        for a, (k1, k2, i, j) in enumerate(basis):
            g = mode_field(k1, k2, i, j)
            cc = self.d0(g)
            d0_mat[:dim, a] = truncate(cc.phi.values)
            d0_mat[dim:, a] = truncate(cc.psi.values)
            phi = DolbeaultCocycle(Field(self.grid, 1, 0, g), Field.zero(self.grid, 0, 1, rank=n))
            psi = DolbeaultCocycle(Field.zero(self.grid, 1, 0, rank=n), Field(self.grid, 0, 1, g))
            d1_mat[:, a] = truncate(self.d1(phi).values)
            d1_mat[:, dim + a] = truncate(self.d1(psi).values)
        return d0_mat, d1_mat

    @staticmethod
    def _rank_and_gap(mat: np.ndarray, rank_tol: float):
        sv = np.linalg.svd(mat, compute_uv=False)
        if sv.size == 0 or sv[0] == 0.0:
            return 0, np.inf
        cut = rank_tol * sv[0]
        r = int((sv > cut).sum())
        below = sv[r] if r < sv.size else 0.0
        gap = np.inf if below == 0.0 else (sv[r - 1] if r > 0 else sv[0]) / below
        if gap < 10.0:
            warnings.warn(
                f"singular values cluster near the rank cut (gap {gap:.1f})", RuntimeWarning
            )
        return r, gap

    def h1_dimension(self, mode_cut: int = 4, rank_tol: float = 1e-8) -> int:
        """dim ker d1 - rank d0 on the Fourier-truncated (Galerkin) complex.

        A dense brute-force oracle, not a production path (mode_cut <= 8).
        Singular values clustering near the rank cut raise a warning instead
        of silently committing to an answer.
        """
        d0_mat, d1_mat = self._assemble_truncated(mode_cut)
        r1, _ = self._rank_and_gap(d1_mat, rank_tol)
        r0, _ = self._rank_and_gap(d0_mat, rank_tol)
        return (d1_mat.shape[1] - r1) - r0

    def h1_singular_gap(self, mode_cut: int = 4, rank_tol: float = 1e-8) -> float:
        """Smallest singular-value ratio across the rank cuts of d0 and d1."""
        d0_mat, d1_mat = self._assemble_truncated(mode_cut)
        gaps = []
        for mat in (d0_mat, d1_mat):
            _, gap = self._rank_and_gap(mat, rank_tol)
            gaps.append(gap)
        return float(min(gaps))


def bar_map(c, context: DeformationContext):
    """Complex-conjugation isomorphism between the two tangent complexes.

    [(phi, psi)] -> [(psi^{*h0}, -phi^{*h0})]; norm-preserving, bar^2 = -id,
    and closed cocycles map to closed cocycles exactly.
    """
    adj = context.metric.adjoint_values
    g = context.grid
    if isinstance(c, DolbeaultCocycle):
        return ConjugateCocycle(
            Field(g, 0, 1, -adj(c.phi.values)),
            Field(g, 1, 0, adj(c.psi.values)),
        )
    if isinstance(c, ConjugateCocycle):
        return DolbeaultCocycle(
            Field(g, 1, 0, adj(c.phi.values)),
            Field(g, 0, 1, -adj(c.psi.values)),
        )
    raise TypeError("expected a DolbeaultCocycle or ConjugateCocycle")
