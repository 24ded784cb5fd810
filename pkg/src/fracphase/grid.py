"""Uniform MAC-staggered grid on a rectangle and its discrete calculus.

Scalars (phase field, chemical potential, pressure, density) live at cell
centers as ``(nx, ny)`` arrays; velocity-like quantities live on faces as a
:class:`FaceField` holding the x-face component ``u`` with shape
``(nx+1, ny)`` and the y-face component ``v`` with shape ``(nx, ny+1)``.

The gradient fills interior faces with difference quotients and leaves
boundary faces at zero (homogeneous Neumann flux); the divergence is the
exact negative adjoint of the gradient under the uniform cell/face inner
products.  That adjoint pair is what makes the per-step energy ledger close
exactly, so it is tested rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

CellField = np.ndarray  # shape (nx, ny), indexed [ix, iy]


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid with nx*ny cells on [0, lx] x [0, ly]."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("cell counts must be positive")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("domain side lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_xfaces(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_yfaces(self) -> int:
        return self.nx * (self.ny + 1)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays X, Y of shape (nx, ny) with the cell-center coordinates."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def zeros_cells(self) -> CellField:
        return np.zeros((self.nx, self.ny))


@dataclass
class FaceField:
    """Both-orientation face data: u on x-faces, v on y-faces."""

    u: np.ndarray  # (nx+1, ny)
    v: np.ndarray  # (nx, ny+1)

    def copy(self) -> "FaceField":
        return FaceField(self.u.copy(), self.v.copy())

    def boundary_is_zero(self, tol: float = 0.0) -> bool:
        return (
            np.max(np.abs(self.u[0, :]), initial=0.0) <= tol
            and np.max(np.abs(self.u[-1, :]), initial=0.0) <= tol
            and np.max(np.abs(self.v[:, 0]), initial=0.0) <= tol
            and np.max(np.abs(self.v[:, -1]), initial=0.0) <= tol
        )


def build_grid(nx: int, ny: int, lx: float, ly: float) -> Grid:
    """Validated grid constructor; rejects non-positive inputs."""
    return Grid(int(nx), int(ny), float(lx), float(ly))


def zeros_faces(grid: Grid) -> FaceField:
    return FaceField(
        np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1))
    )


def _check_cells(grid: Grid, u: CellField) -> None:
    if u.shape != (grid.nx, grid.ny):
        raise ValueError(
            f"cell field shape {u.shape} does not match grid ({grid.nx}, {grid.ny})"
        )


def _check_faces(grid: Grid, w: FaceField) -> None:
    if w.u.shape != (grid.nx + 1, grid.ny) or w.v.shape != (grid.nx, grid.ny + 1):
        raise ValueError("face field shapes do not match grid")


def cell_integral(grid: Grid, u: CellField) -> float:
    """Midpoint quadrature of the cell field over the rectangle."""
    _check_cells(grid, u)
    return float(u.sum() * grid.cell_area)


def cell_mean(grid: Grid, u: CellField) -> float:
    return float(u.mean())


def cell_inner(grid: Grid, a: CellField, b: CellField) -> float:
    """L2 inner product of two cell fields (area-weighted)."""
    return float(np.vdot(a, b) * grid.cell_area)


def face_inner(grid: Grid, a: FaceField, b: FaceField) -> float:
    """L2 inner product of two face fields (uniform area weight per face)."""
    return float((np.vdot(a.u, b.u) + np.vdot(a.v, b.v)) * grid.cell_area)


def discrete_gradient(grid: Grid, u: CellField) -> FaceField:
    """Difference quotients on interior faces, zero flux on the boundary."""
    _check_cells(grid, u)
    g = zeros_faces(grid)
    g.u[1:-1, :] = np.diff(u, axis=0) / grid.hx
    g.v[:, 1:-1] = np.diff(u, axis=1) / grid.hy
    return g


def discrete_divergence(grid: Grid, w: FaceField) -> CellField:
    """Per-cell MAC divergence; exact negative adjoint of the gradient."""
    _check_faces(grid, w)
    return np.diff(w.u, axis=0) / grid.hx + np.diff(w.v, axis=1) / grid.hy


def grad_norm_sq(grid: Grid, u: CellField) -> float:
    """Area-weighted squared L2 norm of the discrete gradient."""
    g = discrete_gradient(grid, u)
    return face_inner(grid, g, g)


def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    """Sparse 5-point Laplacian with pure zero-flux boundary closure.

    Acts on C-order raveled cell fields (index ix*ny + iy).  Symmetric,
    negative semidefinite, zero row sums; equals divergence o gradient.
    """

    def second_diff(n: int, h: float) -> sp.csr_matrix:
        if n == 1:
            return sp.csr_matrix((1, 1))
        main = -2.0 * np.ones(n)
        main[0] = main[-1] = -1.0
        off = np.ones(n - 1)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2

    dxx = second_diff(grid.nx, grid.hx)
    dyy = second_diff(grid.ny, grid.hy)
    ix = sp.eye(grid.nx, format="csr")
    iy = sp.eye(grid.ny, format="csr")
    return (sp.kron(dxx, iy) + sp.kron(ix, dyy)).tocsr()


def apply_laplacian(grid: Grid, lap: sp.csr_matrix, u: CellField) -> CellField:
    _check_cells(grid, u)
    return (lap @ u.ravel()).reshape(grid.nx, grid.ny)


def avg_to_xfaces(grid: Grid, c: CellField) -> np.ndarray:
    """Arithmetic cell-to-x-face average; boundary faces copy the edge cell."""
    _check_cells(grid, c)
    out = np.empty((grid.nx + 1, grid.ny))
    out[1:-1, :] = 0.5 * (c[:-1, :] + c[1:, :])
    out[0, :] = c[0, :]
    out[-1, :] = c[-1, :]
    return out


def avg_to_yfaces(grid: Grid, c: CellField) -> np.ndarray:
    """Arithmetic cell-to-y-face average; boundary faces copy the edge cell."""
    _check_cells(grid, c)
    out = np.empty((grid.nx, grid.ny + 1))
    out[:, 1:-1] = 0.5 * (c[:, :-1] + c[:, 1:])
    out[:, 0] = c[:, 0]
    out[:, -1] = c[:, -1]
    return out


def faces_from_cells(grid: Grid, c: CellField) -> FaceField:
    return FaceField(avg_to_xfaces(grid, c), avg_to_yfaces(grid, c))


def face_scale(w: FaceField, fx: np.ndarray, fy: np.ndarray) -> FaceField:
    """Pointwise product of a face field with per-face coefficient arrays."""
    return FaceField(w.u * fx, w.v * fy)


def velocity_at_centers(grid: Grid, w: FaceField) -> tuple[CellField, CellField]:
    """Face velocities interpolated to cell centers (for output only)."""
    _check_faces(grid, w)
    uc = 0.5 * (w.u[:-1, :] + w.u[1:, :])
    vc = 0.5 * (w.v[:, :-1] + w.v[:, 1:])
    return uc, vc
