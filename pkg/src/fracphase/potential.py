"""Logarithmic homogeneous free energy, its convex splitting, and the
resolvent of the associated monotone operator.

The free energy

    Psi(s) = (theta/2) [(1+s) ln(1+s) + (1-s) ln(1-s)] - (theta_c/2) s^2

is split as Psi = Psi0 - kappa s^2 / 2 with Psi0 convex on (-1, 1).  With the
default kappa = theta_c the convex part has the pure-logarithm derivative
Psi0'(s) = (theta/2) ln((1+s)/(1-s)) and Psi0''(s) = theta/(1-s^2) >= theta,
which keeps the pointwise Newton term uniformly convex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import xlogy

from .grid import CellField, Grid, cell_integral, grad_norm_sq, neumann_laplacian
from .nonlocal_form import NonlocalForm, apply_bilinear


@dataclass(frozen=True)
class PotentialParams:
    theta: float
    theta_c: float
    kappa: float | None = None  # default theta_c, set in kappa_eff
    clamp_eps: float = 1e-9  # interior safeguard for Newton iterates

    def __post_init__(self):
        if not (0.0 < self.theta < self.theta_c):
            raise ValueError("require 0 < theta < theta_c")
        if self.kappa_eff < self.theta_c - self.theta:
            raise ValueError("kappa too small: the split part would be nonconvex")
        if not (0.0 < self.clamp_eps <= 1e-6):
            raise ValueError("clamp_eps must lie in (0, 1e-6]")

    @property
    def kappa_eff(self) -> float:
        return self.theta_c if self.kappa is None else self.kappa


class DomainViolation(ValueError):
    """Raised for evaluations at |s| >= 1 where derivatives blow up."""


def psi_value(s, p: PotentialParams):
    """Psi on the closed interval [-1, 1] (finite limit values at +-1)."""
    s = np.asarray(s, dtype=float)
    if np.any(np.abs(s) > 1.0):
        raise DomainViolation("free energy undefined outside [-1, 1]")
    ent = xlogy(1.0 + s, 1.0 + s) + xlogy(1.0 - s, 1.0 - s)
    return 0.5 * p.theta * ent - 0.5 * p.theta_c * s * s


def psi_eval(s, p: PotentialParams):
    """Return (Psi, Psi', Psi0, Psi0', Psi0'') at points strictly inside (-1, 1)."""
    s = np.asarray(s, dtype=float)
    if np.any(np.abs(s) >= 1.0):
        raise DomainViolation("derivative evaluation requires |s| < 1")
    kappa = p.kappa_eff
    psi = psi_value(s, p)
    dlog = 0.5 * p.theta * (np.log1p(s) - np.log1p(-s))
    dpsi = dlog - p.theta_c * s
    psi0 = psi + 0.5 * kappa * s * s
    dpsi0 = dpsi + kappa * s
    ddpsi0 = p.theta / (1.0 - s * s) - p.theta_c + kappa
    return psi, dpsi, psi0, dpsi0, ddpsi0


def convex_derivatives(s, p: PotentialParams):
    """(Psi0', Psi0'') only; the hot path of the nonlinear solvers."""
    s = np.asarray(s, dtype=float)
    kappa = p.kappa_eff
    dpsi0 = 0.5 * p.theta * (np.log1p(s) - np.log1p(-s)) + (kappa - p.theta_c) * s
    ddpsi0 = p.theta / (1.0 - s * s) - p.theta_c + kappa
    return dpsi0, ddpsi0


def project_interior_mean(u: np.ndarray, m: float, eps: float) -> np.ndarray:
    """Clamp into [-1+eps, 1-eps] while restoring the exact mean m.

    Solves mean(clip(u + c)) = m for the scalar shift c by bisection; this is
    the Euclidean projection onto the intersection of box and mean
    constraints.  Requires |m| < 1 - eps.
    """
    lo, hi = -1.0 + eps, 1.0 - eps
    if not (lo < m < hi):
        raise ValueError("target mean outside the admissible open interval")

    def shifted_mean(c):
        return float(np.clip(u + c, lo, hi).mean())

    if shifted_mean(0.0) == m:
        return np.clip(u, lo, hi)
    # bracket: shifting by +-2 saturates every entry
    a, b = -2.0, 2.0
    for _ in range(200):
        c = 0.5 * (a + b)
        if shifted_mean(c) < m:
            a = c
        else:
            b = c
        if b - a < 1e-17:
            break
    c = 0.5 * (a + b)
    out = np.clip(u + c, lo, hi)
    # final exact correction is interior by construction of eps-margin
    out += m - out.mean()
    return np.clip(out, lo, hi)


class ResolventWorkspace:
    """Factorized linear part of the resolvent system, reusable across calls.

    Holds a Cholesky factor of  I + K/a - h_reg * Lap + c * I  used as the
    preconditioner for the projected CG solves inside Newton.
    """

    def __init__(
        self,
        grid: Grid,
        form: NonlocalForm,
        h_reg: float,
        params: PotentialParams,
        precond_curvature: float | None = None,
    ):
        if h_reg <= 0:
            raise ValueError("h_reg must be positive")
        self.grid = grid
        self.form = form
        self.h_reg = h_reg
        self.params = params
        self.lap = neumann_laplacian(grid)
        n = form.n
        a = form.cell_area
        M0 = form.matrix / a
        M0 = M0 + np.eye(n)
        lap_coo = self.lap.tocoo()
        M0[lap_coo.row, lap_coo.col] -= h_reg * lap_coo.data
        c = precond_curvature if precond_curvature is not None else params.theta
        M0[np.diag_indices(n)] += c
        self._chol = sla.cho_factor(M0, lower=True, check_finite=False)
        del M0

    def apply_linear(self, u: np.ndarray) -> np.ndarray:
        """(I + K/a - h_reg Lap) u on raveled fields."""
        return u + (self.form.matrix @ u) / self.form.cell_area - self.h_reg * (
            self.lap @ u
        )

    def precond(self, r: np.ndarray) -> np.ndarray:
        z = sla.cho_solve(self._chol, r, check_finite=False)
        return z - z.mean()


def _projected_pcg(matvec, precond, b, rel_tol, max_iter=500):
    """CG on the mean-zero subspace; b must be mean-zero."""
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0
    for it in range(1, max_iter + 1):
        Ap = matvec(p)
        Ap -= Ap.mean()
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rel_tol * bnorm:
            return x, it
        z = precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


@dataclass
class ResolventResult:
    u: CellField
    residual: float
    iterations: int


class NewtonFailure(RuntimeError):
    def __init__(self, msg, residual=None, history=None):
        super().__init__(msg)
        self.residual = residual
        self.history = history or []


def resolvent(
    f: CellField,
    h_reg: float,
    grid: Grid,
    form: NonlocalForm,
    params: PotentialParams,
    tol_newton: float = 1e-10,
    max_iter: int = 50,
    workspace: ResolventWorkspace | None = None,
    return_info: bool = False,
):
    """Solve u + (K/a) u - h_reg Lap u + P0 Psi0'(u) = f with mean(u) = mean(f).

    Damped Newton with iterates kept strictly inside (-1, 1); the mean is
    preserved exactly because every Newton direction is mean-free.  Returns
    the solution cell field (and solve info when requested).
    """
    f = np.asarray(f, dtype=float)
    fv = f.ravel()
    m = float(fv.mean())
    if not (-1.0 < m < 1.0):
        raise ValueError("mean of the data must lie in (-1, 1)")
    ws = workspace or ResolventWorkspace(grid, form, h_reg, params)
    eps = params.clamp_eps
    lo, hi = -1.0 + eps, 1.0 - eps
    # the projection target must be representable inside the clamp box
    m_box = min(max(m, lo + eps), hi - eps)

    u = project_interior_mean(fv, m_box, eps)

    def residual_vec(uv):
        dpsi0, _ = convex_derivatives(uv, params)
        r = ws.apply_linear(uv) + dpsi0 - fv
        return r - r.mean()

    r = residual_vec(u)
    rnorm = float(np.linalg.norm(r))
    history = [rnorm]
    total_cg = 0
    for _ in range(max_iter):
        if rnorm <= tol_newton:
            break
        _, ddpsi0 = convex_derivatives(u, params)

        def matvec(x, dd=ddpsi0):
            return ws.apply_linear(x) + dd * x

        inner_tol = max(1e-12, min(1e-4, 1e-3 * rnorm))
        delta, cg_it = _projected_pcg(matvec, ws.precond, -r, inner_tol)
        total_cg += cg_it
        step = 1.0
        improved = False
        for _ in range(30):
            trial = u + step * delta
            if trial.min() <= lo or trial.max() >= hi:
                trial = project_interior_mean(trial, m_box, eps)
            r_trial = residual_vec(trial)
            rt = float(np.linalg.norm(r_trial))
            if rt < rnorm:
                u, r, rnorm = trial, r_trial, rt
                improved = True
                break
            step *= 0.5
        if not improved:
            raise NewtonFailure(
                f"resolvent Newton stalled at residual {rnorm:.3e}",
                residual=rnorm,
                history=history,
            )
        history.append(rnorm)
    else:
        if rnorm > tol_newton:
            raise NewtonFailure(
                f"resolvent Newton did not reach {tol_newton:.1e} "
                f"in {max_iter} iterations (residual {rnorm:.3e})",
                residual=rnorm,
                history=history,
            )

    out = u.reshape(grid.nx, grid.ny)
    if return_info:
        return ResolventResult(out, rnorm, total_cg)
    return out


@dataclass
class ChempotDiagnostic:
    psi0_prime_l2: float
    mu_integral_abs: float
    grad_mu_l2: float
    grad_phi_l2: float
    ratio: float


def chempot_diagnostic(
    phi: CellField,
    phi_k: CellField,
    mu: CellField,
    grid: Grid,
    p: PotentialParams,
) -> ChempotDiagnostic:
    """Trend monitor for the singular-derivative bound.

    Reports ||Psi0'(phi)||_2, |int mu|, ||grad mu||_2, ||grad phi||_2 and the
    ratio (||Psi0'|| + |int mu|) / (||grad mu|| + ||grad phi||^2 + 1).  The
    constant in the underlying estimate is not quantified, so only the ratio
    is tracked, never asserted against a fixed bound.
    """
    mean_phi = float(phi.mean())
    mean_phi_k = float(phi_k.mean())
    if abs(mean_phi - mean_phi_k) > 1e-10 or not (-1.0 < mean_phi < 1.0):
        raise ValueError("fields must share a mean inside (-1, 1)")
    dpsi0, _ = convex_derivatives(phi, p)
    a = grid.cell_area
    psi0_l2 = float(np.sqrt(a * np.sum(dpsi0**2)))
    mu_int = abs(cell_integral(grid, mu))
    gmu = float(np.sqrt(grad_norm_sq(grid, mu)))
    gphi = float(np.sqrt(grad_norm_sq(grid, phi)))
    ratio = (psi0_l2 + mu_int) / (gmu + gphi**2 + 1.0)
    return ChempotDiagnostic(psi0_l2, mu_int, gmu, gphi, ratio)
