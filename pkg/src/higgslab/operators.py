"""Twisted spectral operators attached to Higgs data and a background metric.

Everything here works on raw coefficient arrays (N, N, n, n) with the
orientation conventions of :mod:`higgslab.torus`:

* (1,1) quantities are coefficients against dz ^ dzbar, so the bundle dbar of
  a (1,0) coefficient carries a minus sign while the Chern (1,0) derivative
  of a (0,1) coefficient keeps a plus.
* The linearized Hitchin-Yang-Mills operator

      L(s) = rep[ dbar_E D'_h s ] + [theta, [theta^{*h}, s]]

  is the derivative of the HYM residual along metric updates h -> h(1 + eps s)
  and the left side of the deformation PDE for the metric variation g.
"""

from __future__ import annotations

import numpy as np

from .bundles import HermitianMetric, HiggsBundle, chern_connection

__all__ = ["comm", "PairOperators"]


def comm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def _ad_matrix(a: np.ndarray) -> np.ndarray:
    """ad(a) on row-major vectorized n x n matrices: a (x) I - I (x) a^T."""
    n = a.shape[0]
    eye = np.eye(n)
    return np.kron(a, eye) - np.kron(eye, a.T)


class PairOperators:
    """Cached operator bundle for a fixed (a01, theta, h0)."""

    def __init__(self, bundle: HiggsBundle, metric: HermitianMetric):
        if not bundle.grid.compatible(metric.grid):
            raise ValueError("bundle and metric live on different grids")
        self.bundle = bundle
        self.metric = metric
        self.grid = bundle.grid
        self.theta = bundle.theta.values
        self.q = metric.adjoint_values(self.theta)  # coefficient of theta^{*h0}
        self.a01 = bundle.a01.values
        self.m10 = chern_connection(metric, bundle.a01).values

    # -- first-order twisted derivatives on (0,0) coefficients --------------
    def dbar_end(self, s: np.ndarray) -> np.ndarray:
        """(0,1) coefficient of dbar_E s for an endomorphism s."""
        return self.grid.d_dzbar(s) + comm(self.a01, s)

    def dprime_end(self, s: np.ndarray) -> np.ndarray:
        """(1,0) coefficient of D_h^{1,0} s."""
        return self.grid.d_dz(s) + comm(self.m10, s)

    # -- (1,1) representatives ------------------------------------------------
    def dbar_rep(self, phi: np.ndarray) -> np.ndarray:
        """dz^dzbar coefficient of dbar_E (phi dz)."""
        return -(self.grid.d_dzbar(phi) + comm(self.a01, phi))

    def dprime_rep(self, psi: np.ndarray) -> np.ndarray:
        """dz^dzbar coefficient of D_h^{1,0} (psi dzbar)."""
        return self.grid.d_dz(psi) + comm(self.m10, psi)

    # -- linearized HYM operator ---------------------------------------------
    def linearized_hym(self, s: np.ndarray) -> np.ndarray:
        return self.dbar_rep(self.dprime_end(s)) + comm(self.theta, comm(self.q, s))

    def linearized_hym_adjoint(self, r: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`linearized_hym` in the unweighted node product."""
        g = self.grid
        # adjoint of dbar_rep: phi -> -(d_dzbar + ad a01): adj = -(-d_dz... ) per
        # multiplier conj and ad(A)^H = ad(A^H)
        a01h = np.conj(np.swapaxes(self.a01, -1, -2))
        m10h = np.conj(np.swapaxes(self.m10, -1, -2))
        step = -(g.derivative(r, np.conj(g.mult_dzbar)) + comm(a01h, r))
        out = g.derivative(step, np.conj(g.mult_dz)) + comm(m10h, step)
        th = np.conj(np.swapaxes(self.theta, -1, -2))
        qh = np.conj(np.swapaxes(self.q, -1, -2))
        out = out + comm(qh, comm(th, r))
        return out

    # -- constant-coefficient symbol preconditioner ---------------------------
    def normal_symbol_inverse(self, sigma: float) -> np.ndarray:
        """(S_k^H S_k + sigma)^{-1} per mode for the constant-mode symbol S of
        the linearized HYM operator; used to precondition CGNR."""
        n = self.bundle.rank
        g = self.grid
        p0 = self.theta.mean(axis=(0, 1))
        q0 = self.q.mean(axis=(0, 1))
        a0 = self.a01.mean(axis=(0, 1))
        m0 = self.m10.mean(axis=(0, 1))
        ad_a, ad_m = _ad_matrix(a0), _ad_matrix(m0)
        ad_p, ad_q = _ad_matrix(p0), _ad_matrix(q0)
        eye = np.eye(n * n)
        mu = g.mult_dz[..., None, None]
        nu = g.mult_dzbar[..., None, None]
        sym = -(nu * eye + ad_a) @ (mu * eye + ad_m) + ad_p @ ad_q
        normal = np.conj(np.swapaxes(sym, -1, -2)) @ sym + sigma * eye
        return np.linalg.inv(normal)

    def apply_mode_matrix(self, mat: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Apply per-mode (n^2 x n^2) matrices to a coefficient array."""
        g = self.grid
        n = r.shape[-1]
        modes = g.to_modes(r).reshape(r.shape[0], r.shape[1], n * n)
        out = np.einsum("xyab,xyb->xya", mat, modes).reshape(r.shape)
        return g.from_modes(out)

    # -- metric helpers --------------------------------------------------------
    def self_adjoint_part(self, s: np.ndarray) -> np.ndarray:
        return 0.5 * (s + self.metric.adjoint_values(s))

    def traceless_part(self, s: np.ndarray) -> np.ndarray:
        n = s.shape[-1]
        tr = np.trace(s, axis1=-2, axis2=-1) / n
        return s - tr[..., None, None] * np.eye(n)
