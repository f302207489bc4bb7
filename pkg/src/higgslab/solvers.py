"""Harmonic-metric solvers: both directions of the Hitchin-Simpson map.

The Higgs-side solver drives the Hitchin-Yang-Mills residual
F(D_h) + [theta, theta^{*h}] to zero by a preconditioned Donaldson-type flow

    h <- h exp(eps * s),    s = -4 * precond(residual coefficient),

(the -2i Lambda of the residual, mode-preconditioned by (sigma + |mu_k|^2)^-1)
with optional Newton refinement through the linearized operator.  The
flat-side solver minimizes the energy E(h) = ||psi_h||^2 of the self-adjoint
part of the connection with the analogous flow on the harmonicity residual
D'_u psi^{0,1} + dbar_u psi^{1,0}.

Convergence is declared on the relative residual; non-polystable or
non-semisimple inputs are reported through NonConvergence, detected by
stagnation, by metric drift (||log h||_inf past a cap while the residual is
still above tolerance, the operational signature of a destabilizing
subobject), or by iteration exhaustion.

Central scalings are fixed by det h = 1 (sl case) or by a vanishing mean of
log det h; reported residual traces use fixed reduction orders so repeated
runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .bundles import (
    FlatBundle,
    HermitianMetric,
    HiggsBundle,
    adjoint_star,
    chern_connection,
    constant_gauge_reduction,
    curvature,
    flat_decompose,
    hym_residual,
    is_semisimple_pair,
    monodromy,
)
from .krylov import cgnr
from .operators import PairOperators, comm
from .torus import Field, norm

__all__ = [
    "SolverConfig",
    "SolveReport",
    "SolverError",
    "NonConvergence",
    "StepCollapse",
    "IterativeSolveFailure",
    "IncompatibleRHS",
    "solve_hym",
    "solve_harmonic_flat",
    "hitchin_simpson",
    "higgs_to_flat",
]


class SolverError(RuntimeError):
    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


class NonConvergence(SolverError):
    """Likely non-polystable Higgs input or non-semisimple flat input."""


class StepCollapse(SolverError):
    """Backtracking line search failed to find an acceptable step."""


class IterativeSolveFailure(RuntimeError):
    """An inner Krylov solve stagnated."""


class IncompatibleRHS(RuntimeError):
    """Right side not orthogonal to the cokernel of the linear operator."""


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 2000
    initial_step: float = 0.5
    max_step: float = 2.0
    step_growth: float = 1.3
    backtrack: float = 0.5
    max_backtracks: int = 30
    min_step: float = 1e-8
    flow: Literal["heat", "newton"] = "newton"
    newton_start: float = 1e-2
    drift_cap: float = 6.0
    stagnation_window: int = 50
    stagnation_drop: float = 0.01
    cg_tol: float = 1e-13
    cg_max_iter: int = 4000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SolveReport:
    converged: bool = False
    final_residual: float = float("nan")
    iterations: int = 0
    residual_trace: list = field(default_factory=list)
    energy_trace: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "final_residual": self.final_residual,
            "iterations": self.iterations,
            "residual_trace": list(self.residual_trace),
            "energy_trace": list(self.energy_trace),
            "message": self.message,
        }


def _finite(*arrays) -> bool:
    return all(np.isfinite(a).all() for a in arrays)


def _metric_drift(metric: HermitianMetric) -> float:
    eigs = np.linalg.eigvalsh(metric.h.values)
    return float(np.max(np.abs(np.log(eigs))))


def _flow_preconditioner(grid, sigma: float):
    inv = 1.0 / (sigma + np.abs(grid.mult_dz) ** 2)

    def apply(r: np.ndarray) -> np.ndarray:
        return grid.derivative(r, inv)

    return apply


def _stagnating(trace: list, window: int, drop: float, step: float, min_step: float) -> bool:
    if len(trace) <= window:
        return False
    prev, cur = trace[-window - 1], trace[-1]
    if prev <= 0:
        return False
    return (prev - cur) / prev < drop and step < min_step


def _hym_state(bundle: HiggsBundle, metric: HermitianMetric):
    """Residual coefficient, absolute and relative residuals, energy.

    The line search minimizes the absolute h-norm ||R||; the relative value
    ||R|| / max(1, ||F|| + ||[theta, theta^*]||) is the convergence measure.
    """
    m10 = chern_connection(metric, bundle.a01)
    f = curvature(m10, bundle.a01)
    t = bundle.theta.values
    q = metric.adjoint_values(t)
    bracket = t @ q - q @ t
    rep = f.values + bracket
    grid = bundle.grid
    r_norm = norm(Field(grid, 1, 1, rep), metric.h)
    denom = max(
        1.0,
        norm(f, metric.h) + norm(Field(grid, 1, 1, bracket), metric.h),
    )
    theta_sq = norm(bundle.theta, metric.h) ** 2
    return rep, r_norm, r_norm / denom, 2.0 * theta_sq


def solve_hym(
    bundle: HiggsBundle, h_init: HermitianMetric, cfg: SolverConfig = SolverConfig()
) -> tuple[HermitianMetric, SolveReport]:
    """Hitchin-Yang-Mills metric for a polystable Higgs bundle.

    Raises NonConvergence when the flow stagnates, the metric drifts past
    cfg.drift_cap, or max_iter is exhausted; raises StepCollapse when the
    line search dies early.
    """
    bundle.validate(tol=1e-6)
    metric = h_init.normalized()
    report = SolveReport()
    grid = bundle.grid
    theta_scale = float(np.max(np.abs(bundle.theta.values))) if bundle.rank else 0.0
    sigma = max(1.0, 4.0 * theta_scale**2)
    precond = _flow_preconditioner(grid, sigma)
    step = cfg.initial_step

    rep, absres, rel, energy = _hym_state(bundle, metric)
    for it in range(1, cfg.max_iter + 1):
        report.residual_trace.append(rel)
        report.energy_trace.append(energy)
        report.iterations = it
        report.final_residual = rel
        if rel <= cfg.tol:
            report.converged = True
            report.message = "converged"
            return metric, report
        drift = _metric_drift(metric)
        if drift > cfg.drift_cap:
            report.message = f"metric drift {drift:.2f} exceeded cap {cfg.drift_cap}"
            raise NonConvergence(report.message, report)
        if _stagnating(report.residual_trace, cfg.stagnation_window, cfg.stagnation_drop, step, cfg.min_step):
            report.message = "stagnation: residual drop below 1% over the window with collapsed step"
            raise NonConvergence(report.message, report)
        tr = report.residual_trace
        if cfg.flow == "newton" and len(tr) > 6 and (tr[-7] - tr[-1]) < 1e-3 * tr[-7]:
            report.message = "Newton phase stagnated; tolerance below the data's numerical floor"
            raise NonConvergence(report.message, report)

        ops = PairOperators(bundle, metric)
        if cfg.flow == "newton":
            # Gauss-Newton: L is the exact derivative of the residual along
            # h exp(eps s), so the least-squares step is a descent direction
            # for the unweighted residual norm the line search uses.
            newton_precond = ops.normal_symbol_inverse(1e-8)
            bp = grid.band_project
            res = cgnr(
                lambda s: bp(ops.linearized_hym(bp(s))),
                lambda r: bp(ops.linearized_hym_adjoint(bp(r))),
                bp(-rep),
                tol=cfg.cg_tol,
                max_iter=cfg.cg_max_iter,
                precond=lambda r: bp(ops.apply_mode_matrix(newton_precond, bp(r))),
            )
            direction = res.x
            trial_step = 1.0
        else:
            direction = precond(-4.0 * rep)
            trial_step = step
        direction = ops.self_adjoint_part(direction)
        if bundle.sl_constraint:
            direction = ops.traceless_part(direction)

        accepted = False
        for _ in range(cfg.max_backtracks):
            try:
                trial = metric.updated(trial_step * direction).normalized()
                if not _finite(trial.h.values):
                    raise FloatingPointError
                t_rep, t_abs, t_rel, t_energy = _hym_state(bundle, trial)
                ok = np.isfinite(t_abs) and float(np.linalg.norm(t_rep)) < float(np.linalg.norm(rep))
            except (FloatingPointError, np.linalg.LinAlgError, ValueError):
                ok = False
            if ok:
                metric, rep, absres, rel, energy = trial, t_rep, t_abs, t_rel, t_energy
                accepted = True
                break
            trial_step *= cfg.backtrack
        if not accepted:
            if it > 5:
                report.message = "line search stalled above tolerance; likely non-polystable input"
                raise NonConvergence(report.message, report)
            report.message = "line search failed"
            raise StepCollapse(report.message, report)
        if cfg.flow != "newton":
            step = min(trial_step * cfg.step_growth, cfg.max_step)

    report.message = "max_iter exhausted"
    raise NonConvergence(report.message, report)


class _FlatLinearization:
    """Exact derivative of the flat harmonicity residual along h exp(eps s).

    With A = psi^{1,0}, B = psi^{0,1}, unitary parts (U10, U01) and
    delta A = ([A,s] - D'_u s)/2, delta B = ([B,s] - dbar_u s)/2 one has

        dS(s) = D'_u(dB) + [B, dA] + dbar_u(dA) + [A, dB].
    """

    def __init__(self, flat: FlatBundle, metric: HermitianMetric):
        grid = flat.grid
        self.grid = grid
        hinv_dh = metric.inverse_values @ grid.d_dz(metric.h.values)
        self.a = 0.5 * (flat.m10.values + metric.adjoint_values(flat.m01.values) - hinv_dh)
        self.b = metric.adjoint_values(self.a)
        self.u10 = flat.m10.values - self.a
        self.u01 = flat.m01.values - self.b

    def _dprime_u(self, x):
        return self.grid.d_dz(x) + comm(self.u10, x)

    def _dbar_u(self, x):
        return self.grid.d_dzbar(x) + comm(self.u01, x)

    def _dprime_u_h(self, x):
        u = np.conj(np.swapaxes(self.u10, -1, -2))
        return self.grid.derivative(x, np.conj(self.grid.mult_dz)) + comm(u, x)

    def _dbar_u_h(self, x):
        u = np.conj(np.swapaxes(self.u01, -1, -2))
        return self.grid.derivative(x, np.conj(self.grid.mult_dzbar)) + comm(u, x)

    def residual(self) -> np.ndarray:
        return self._dprime_u(self.b) + self._dbar_u(self.a)

    def apply(self, s: np.ndarray) -> np.ndarray:
        da = 0.5 * (comm(self.a, s) - self._dprime_u(s))
        db = 0.5 * (comm(self.b, s) - self._dbar_u(s))
        return self._dprime_u(db) + comm(self.b, da) + self._dbar_u(da) + comm(self.a, db)

    def apply_adjoint(self, r: np.ndarray) -> np.ndarray:
        ah = np.conj(np.swapaxes(self.a, -1, -2))
        bh = np.conj(np.swapaxes(self.b, -1, -2))
        ra = self._dbar_u_h(r) + comm(bh, r)
        rb = self._dprime_u_h(r) + comm(ah, r)
        out = 0.5 * (comm(ah, ra) - self._dprime_u_h(ra))
        out = out + 0.5 * (comm(bh, rb) - self._dbar_u_h(rb))
        return out

    def normal_symbol_inverse(self, sigma: float) -> np.ndarray:
        from .operators import _ad_matrix

        n = self.a.shape[-1]
        a0 = self.a.mean(axis=(0, 1))
        b0 = self.b.mean(axis=(0, 1))
        u10_0 = self.u10.mean(axis=(0, 1))
        u01_0 = self.u01.mean(axis=(0, 1))
        eye = np.eye(n * n)
        mu = self.grid.mult_dz[..., None, None]
        nu = self.grid.mult_dzbar[..., None, None]
        dp = mu * eye + _ad_matrix(u10_0)
        db = nu * eye + _ad_matrix(u01_0)
        ad_a, ad_b = _ad_matrix(a0), _ad_matrix(b0)
        d_a = 0.5 * (ad_a - dp)
        d_b = 0.5 * (ad_b - db)
        sym = dp @ d_b + ad_b @ d_a + db @ d_a + ad_a @ d_b
        normal = np.conj(np.swapaxes(sym, -1, -2)) @ sym + sigma * eye
        return np.linalg.inv(normal)

    def apply_mode_matrix(self, mat: np.ndarray, r: np.ndarray) -> np.ndarray:
        g = self.grid
        n = r.shape[-1]
        modes = g.to_modes(r).reshape(r.shape[0], r.shape[1], n * n)
        out = np.einsum("xyab,xyb->xya", mat, modes).reshape(r.shape)
        return g.from_modes(out)


def _flat_state(flat: FlatBundle, metric: HermitianMetric):
    """Harmonicity residual coefficient, relative residual, energy."""
    grid = flat.grid
    hinv_dh = metric.inverse_values @ grid.d_dz(metric.h.values)
    a = 0.5 * (flat.m10.values + metric.adjoint_values(flat.m01.values) - hinv_dh)  # psi^{1,0}
    b = metric.adjoint_values(a)  # psi^{0,1}
    u10 = flat.m10.values - a
    u01 = flat.m01.values - b
    s_rep = grid.d_dz(b) + comm(u10, b) + grid.d_dzbar(a) + comm(u01, a)
    r_norm = norm(Field(grid, 1, 1, s_rep), metric.h)
    psi_norm = norm(Field(grid, 1, 0, a), metric.h)
    energy = 2.0 * psi_norm**2
    denom = max(1.0, psi_norm * (1.0 + norm(Field(grid, 1, 0, u10)) + norm(Field(grid, 0, 1, u01))))
    return s_rep, r_norm / denom, energy


def _transport_initializer(flat: FlatBundle) -> HermitianMetric:
    """Pull the closed-form constant-gauge harmonic metric back through the
    parallel-transport reduction; accurate to the transport quadrature."""
    W, _, v = constant_gauge_reduction(flat)
    vi = np.linalg.inv(v)
    hc = np.conj(vi.T) @ vi
    wi = np.linalg.inv(W.g.values)
    N = flat.grid.n_modes
    vals = np.conj(np.swapaxes(wi, -1, -2)) @ np.broadcast_to(hc, (N, N) + hc.shape) @ wi
    vals = 0.5 * (vals + np.conj(np.swapaxes(vals, -1, -2)))
    return HermitianMetric(Field(flat.grid, 0, 0, vals))


def solve_harmonic_flat(
    flat: FlatBundle, cfg: SolverConfig = SolverConfig(), h_init: HermitianMetric | None = None
) -> tuple[HermitianMetric, SolveReport]:
    """Harmonic metric for a semisimple flat bundle.

    The metric is seeded by the constant-gauge transport construction (the
    exact solution up to transport quadrature) and polished by the
    energy-decreasing flow with optional Gauss-Newton refinement; the energy
    trace E(h_k) is non-increasing along accepted flow steps.
    """
    flat.validate(tol=1e-6)
    a_mon, b_mon = monodromy(flat)
    report = SolveReport()
    if not is_semisimple_pair(a_mon, b_mon):
        report.message = "monodromy pair not semisimple"
        raise NonConvergence(report.message, report)
    if h_init is None:
        try:
            h_init = _transport_initializer(flat)
        except (ValueError, np.linalg.LinAlgError):
            h_init = HermitianMetric.identity(flat.grid, flat.rank)
    metric = h_init.normalized()
    grid = flat.grid
    conn_scale = float(np.max(np.abs(flat.m10.values)) + np.max(np.abs(flat.m01.values)))
    sigma = max(1.0, conn_scale**2)
    precond = _flow_preconditioner(grid, sigma)
    step = cfg.initial_step

    s_rep, rel, energy = _flat_state(flat, metric)
    for it in range(1, cfg.max_iter + 1):
        report.residual_trace.append(rel)
        report.energy_trace.append(energy)
        report.iterations = it
        report.final_residual = rel
        if rel <= cfg.tol:
            report.converged = True
            report.message = "converged"
            return metric, report
        drift = _metric_drift(metric)
        if drift > cfg.drift_cap:
            report.message = f"metric drift {drift:.2f} exceeded cap {cfg.drift_cap}"
            raise NonConvergence(report.message, report)
        if _stagnating(report.residual_trace, cfg.stagnation_window, cfg.stagnation_drop, step, cfg.min_step):
            report.message = "stagnation"
            raise NonConvergence(report.message, report)
        tr = report.residual_trace
        use_newton = cfg.flow == "newton" and rel < cfg.newton_start
        if use_newton and len(tr) > 6 and (tr[-7] - tr[-1]) < 1e-3 * tr[-7]:
            report.message = "Newton phase stagnated; tolerance below the data's numerical floor"
            raise NonConvergence(report.message, report)
        if use_newton:
            lin = _FlatLinearization(flat, metric)
            msym = lin.normal_symbol_inverse(1e-8)
            bp = grid.band_project
            res = cgnr(
                lambda s: bp(lin.apply(bp(s))),
                lambda r: bp(lin.apply_adjoint(bp(r))),
                bp(-s_rep),
                tol=cfg.cg_tol,
                max_iter=cfg.cg_max_iter,
                precond=lambda r: bp(lin.apply_mode_matrix(msym, bp(r))),
            )
            direction = res.x
            trial_step = 1.0
        else:
            direction = precond(-4.0 * s_rep)
            trial_step = step
        direction = 0.5 * (direction + metric.adjoint_values(direction))

        accepted = False
        for _ in range(cfg.max_backtracks):
            try:
                trial = metric.updated(trial_step * direction).normalized()
                if not _finite(trial.h.values):
                    raise FloatingPointError
                t_rep, t_rel, t_energy = _flat_state(flat, trial)
                if use_newton:
                    # Gauss-Newton phase: descend the residual norm
                    ok = np.isfinite(t_rel) and float(np.linalg.norm(t_rep)) < float(np.linalg.norm(s_rep))
                else:
                    # heat phase: energy decreases, ties broken by the residual
                    ok = (
                        np.isfinite(t_rel)
                        and t_energy < energy + 1e-14 * max(1.0, energy)
                        and (t_energy < energy or t_rel < rel)
                    )
            except (FloatingPointError, np.linalg.LinAlgError, ValueError):
                ok = False
            if ok:
                metric, s_rep, rel, energy = trial, t_rep, t_rel, t_energy
                accepted = True
                break
            trial_step *= cfg.backtrack
        if not accepted:
            if it > 5:
                report.message = "line search stalled above tolerance; likely non-semisimple input"
                raise NonConvergence(report.message, report)
            report.message = "line search failed"
            raise StepCollapse(report.message, report)
        if not use_newton:
            step = min(trial_step * cfg.step_growth, cfg.max_step)

    report.message = "max_iter exhausted"
    raise NonConvergence(report.message, report)


def hitchin_simpson(
    flat: FlatBundle, cfg: SolverConfig = SolverConfig()
) -> tuple[HiggsBundle, HermitianMetric, SolveReport]:
    """The correspondence Psi: semisimple flat bundle -> Higgs bundle.

    Returns the metric-gauge representative: a01 is the (0,1) part of the
    unitary piece of D, theta the (1,0) part of psi_h, and the metric carries
    the normalization det h = 1 / zero-mean log det.
    """
    metric, report = solve_harmonic_flat(flat, cfg)
    dec = flat_decompose(flat, metric, tol=1e-6)
    tr_scale = max(
        float(np.max(np.abs(np.trace(flat.m10.values, axis1=-2, axis2=-1)))),
        float(np.max(np.abs(np.trace(flat.m01.values, axis1=-2, axis2=-1)))),
    )
    bundle = HiggsBundle(dec.u01, dec.theta, sl_constraint=tr_scale < 1e-10)
    return bundle, metric, report


def higgs_to_flat(
    bundle: HiggsBundle, metric: HermitianMetric, tol: float = 1e-8
) -> FlatBundle:
    """Assemble the flat connection D_h + theta + theta^{*h}.

    Requires hym_residual(bundle, metric) <= tol (relative); the output
    flatness residual is bounded by 3x the combined HYM and holomorphicity
    residuals.
    """
    _, r = hym_residual(bundle, metric)
    scale = max(1.0, norm(bundle.theta, metric.h) ** 2)
    if r > tol * scale:
        raise ValueError(f"metric is not harmonic enough: residual {r:.2e} > {tol:.2e} * {scale:.2e}")
    m10 = chern_connection(metric, bundle.a01).values + bundle.theta.values
    m01 = bundle.a01.values + metric.adjoint_values(bundle.theta.values)
    grid = bundle.grid
    return FlatBundle(Field(grid, 1, 0, m10), Field(grid, 0, 1, m01))
