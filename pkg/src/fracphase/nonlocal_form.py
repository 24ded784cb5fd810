"""Discrete Dirichlet form of the fractional-order interaction operator.

For piecewise-constant cell fields the double integral

    E(u, v) = iint (u(x) - u(y)) (v(x) - v(y)) k(x, y, x - y) dx dy

collapses to a pairwise sum over cells.  The matrix K is accumulated as
K += w_ij (e_i - e_j)(e_i - e_j)^T over ordered cell pairs with nonnegative
weights w_ij (the quadrature value of the pair integral), which makes
symmetry, zero row sums and positive semidefiniteness exact properties of
the construction rather than approximation statements.  Self-pairs vanish
because the difference factor does.

Cell pairs closer than ``r_near`` cell widths are integrated with an
``r_sub x r_sub`` tensor Gauss rule per cell; distant pairs use the
midpoint rule (the one-point Gauss rule).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .grid import CellField, Grid, cell_mean
from .kernel import KernelSpec

MAX_DENSE_CELLS = 8192

_MAGIC = b"NLFRM1"


class FormSizeError(ValueError):
    """Grid exceeds the dense-storage budget (nx*ny cells)."""


@dataclass(frozen=True)
class QuadratureOptions:
    """Near-pair refinement level and optional sparsification cutoff."""

    r_near: float = 2.0  # pairs closer than r_near cell widths get Gauss
    r_sub: int = 4  # Gauss points per axis per cell on near pairs
    cutoff: float | None = None  # pair weight dropped beyond this distance

    def __post_init__(self):
        if self.r_near < 0:
            raise ValueError("r_near must be >= 0")
        if self.r_sub < 1:
            raise ValueError("r_sub must be >= 1")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ValueError("cutoff must be positive when given")


@dataclass
class NonlocalForm:
    """Dense symmetric PSD matrix realizing the pairwise difference form."""

    matrix: np.ndarray  # (n, n), n = nx*ny, C-order cell index ix*ny + iy
    nx: int
    ny: int
    cell_area: float
    r_near: float
    r_sub: int
    cutoff: float | None

    @property
    def n(self) -> int:
        return self.nx * self.ny


def _gauss_nodes_1d(r: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [-h/2, h/2] (cell-centered)."""
    g, w = np.polynomial.legendre.leggauss(r)
    return 0.5 * h * g, 0.5 * h * w


def _gauss_nodes_cell(r: int, hx: float, hy: float):
    """Tensor nodes (r*r, 2) relative to the cell center, and weights."""
    gx, wx = _gauss_nodes_1d(r, hx)
    gy, wy = _gauss_nodes_1d(r, hy)
    nodes = np.stack(
        [np.repeat(gx, r), np.tile(gy, r)], axis=1
    )  # (r*r, 2)
    weights = np.repeat(wx, r) * np.tile(wy, r)
    return nodes, weights


def _near_offsets(grid: Grid, r_near: float) -> list[tuple[int, int]]:
    """Canonical (upper-triangle) cell offsets within r_near cell widths."""
    if r_near <= 0:
        return []
    hmax = max(grid.hx, grid.hy)
    radius = r_near * hmax
    out = []
    max_di = int(np.ceil(radius / grid.hx))
    max_dj = int(np.ceil(radius / grid.hy))
    for di in range(0, max_di + 1):
        for dj in range(-max_dj, max_dj + 1):
            if di == 0 and dj <= 0:
                continue  # canonical half: flat offset di*ny + dj > 0
            if (di * grid.hx) ** 2 + (dj * grid.hy) ** 2 < radius**2:
                out.append((di, dj))
    return out


def _pair_indices(grid: Grid, di: int, dj: int):
    """Flat indices (i, j) of all cell pairs with j at offset (di, dj)."""
    ix0 = max(0, -di)
    ix1 = grid.nx - max(0, di)
    iy0 = max(0, -dj)
    iy1 = grid.ny - max(0, dj)
    if ix1 <= ix0 or iy1 <= iy0:
        return None
    ix, iy = np.meshgrid(np.arange(ix0, ix1), np.arange(iy0, iy1), indexing="ij")
    i = (ix * grid.ny + iy).ravel()
    j = ((ix + di) * grid.ny + (iy + dj)).ravel()
    return i, j


def _near_pair_integrals(
    grid: Grid, spec: KernelSpec, quad: QuadratureOptions, di: int, dj: int,
    i_idx: np.ndarray, j_idx: np.ndarray,
) -> np.ndarray:
    """Gauss value of the pair integral for every cell pair at one offset."""
    nodes, wq = _gauss_nodes_cell(quad.r_sub, grid.hx, grid.hy)
    delta = np.array([di * grid.hx, dj * grid.hy])
    # node-pair displacement is offset-invariant: delta + xi_a - xi_b
    dxy = delta[None, None, :] + nodes[:, None, :] - nodes[None, :, :]
    dist = np.hypot(dxy[..., 0], dxy[..., 1])
    power = dist ** (-(spec.d + spec.alpha))
    pw = (wq[:, None] * wq[None, :]) * power  # (A, A)

    if spec.omega_name == "constant":
        base = float(pw.sum())
        w0 = float(spec.omega(0.0, 0.0, 1.0, 1.0))
        return np.full(i_idx.shape, w0 * base)

    X, Y = grid.cell_centers()
    cx, cy = X.ravel(), Y.ravel()
    # first-point coordinates vary along axis 1, second-point along axis 2
    ax = cx[i_idx][:, None, None] + nodes[:, 0][None, :, None]
    ay = cy[i_idx][:, None, None] + nodes[:, 1][None, :, None]
    bx = cx[j_idx][:, None, None] + nodes[:, 0][None, None, :]
    by = cy[j_idx][:, None, None] + nodes[:, 1][None, None, :]
    w = np.broadcast_to(
        np.asarray(spec.omega(ax, ay, bx, by), dtype=float),
        (i_idx.size, pw.shape[0], pw.shape[1]),
    )
    return np.einsum("pab,ab->p", w, pw)


def assemble_form(
    grid: Grid, spec: KernelSpec, quad: QuadratureOptions = QuadratureOptions()
) -> NonlocalForm:
    """Assemble the pairwise difference-form matrix for the given kernel."""
    n = grid.n_cells
    if n > MAX_DENSE_CELLS:
        raise FormSizeError(
            f"{n} cells exceeds the dense-form budget of {MAX_DENSE_CELLS}; "
            "dense K would need "
            f"{n * n * 8 / 1e9:.1f} GB"
        )
    a = grid.cell_area
    X, Y = grid.cell_centers()
    cx, cy = X.ravel(), Y.ravel()
    expo = -(spec.d + spec.alpha)

    # pair-weight matrix M[i, j] = 2 * (pair integral), zero diagonal
    M = np.zeros((n, n))
    chunk = max(1, min(n, 8 * 1024 * 1024 // max(n, 1)))
    for r0 in range(0, n, chunk):
        r1 = min(n, r0 + chunk)
        dx = cx[r0:r1, None] - cx[None, :]
        dy = cy[r0:r1, None] - cy[None, :]
        dist = np.hypot(dx, dy)
        with np.errstate(divide="ignore"):
            val = dist**expo
        rows = np.arange(r0, r1)
        val[rows - r0, rows] = 0.0  # self-pairs vanish
        if quad.cutoff is not None:
            val[dist > quad.cutoff] = 0.0
        w = np.asarray(
            spec.omega(cx[r0:r1, None], cy[r0:r1, None], cx[None, :], cy[None, :]),
            dtype=float,
        )
        M[r0:r1, :] = 2.0 * (a * a) * w * val

    cutoff = quad.cutoff if quad.cutoff is not None else np.inf
    for di, dj in _near_offsets(grid, quad.r_near):
        pairs = _pair_indices(grid, di, dj)
        if pairs is None:
            continue
        i_idx, j_idx = pairs
        d_off = np.hypot(di * grid.hx, dj * grid.hy)
        if d_off > cutoff:
            continue
        vals = 2.0 * _near_pair_integrals(grid, spec, quad, di, dj, i_idx, j_idx)
        M[i_idx, j_idx] = vals
        M[j_idx, i_idx] = vals

    # mirror the upper triangle so K = K^T holds exactly
    M = np.triu(M, 1)
    M += M.T
    K = -M
    np.fill_diagonal(K, M.sum(axis=1))
    return NonlocalForm(
        matrix=K,
        nx=grid.nx,
        ny=grid.ny,
        cell_area=a,
        r_near=quad.r_near,
        r_sub=quad.r_sub,
        cutoff=quad.cutoff,
    )


def gagliardo_reference(
    grid: Grid, alpha: float, quad: QuadratureOptions = QuadratureOptions()
) -> NonlocalForm:
    """Reference form with the pure kernel |z|^(-d-alpha) (omega = 1)."""
    from .kernel import make_kernel_spec

    return assemble_form(grid, make_kernel_spec(alpha), quad)


def _ravel_checked(form: NonlocalForm, u: CellField) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape == (form.n,):
        return u
    if u.shape != (form.nx, form.ny):
        raise ValueError(
            f"field shape {u.shape} does not match form ({form.nx}, {form.ny})"
        )
    return u.ravel()


def apply_bilinear(form: NonlocalForm, u: CellField, v: CellField) -> float:
    """Quadratic-form value u^T K v, symmetric in (u, v)."""
    return float(_ravel_checked(form, u) @ form.matrix @ _ravel_checked(form, v))


def apply_operator(form: NonlocalForm, u: CellField) -> CellField:
    """Riesz representative of the form: K u / cell_area; zero mean."""
    out = (form.matrix @ _ravel_checked(form, u)) / form.cell_area
    return out.reshape(form.nx, form.ny)


@dataclass
class RegularizedSolveResult:
    u: CellField
    residual: float  # relative strong-form residual


def regularized_solve(
    form: NonlocalForm,
    lap: sp.spmatrix,
    theta: float,
    g: CellField,
    tol: float = 1e-10,
) -> RegularizedSolveResult:
    """Solve theta <grad u, grad psi> + u^T K psi = <g, psi> on mean-zero fields.

    The mean-zero constraint is imposed by a rank-one pinning of the
    assembled operator (exact because the right-hand side has zero mean);
    the relative strong-form residual is reported and checked against tol.
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    g = np.asarray(g, dtype=float)
    gv = _ravel_checked(form, g)
    a = form.cell_area
    gnorm = float(np.linalg.norm(gv))
    if abs(gv.mean()) > 1e-12 * max(1.0, float(np.abs(gv).max(initial=0.0))):
        raise ValueError("right-hand side must have zero mean")
    if gnorm == 0.0:
        return RegularizedSolveResult(np.zeros((form.nx, form.ny)), 0.0)

    M = form.matrix.copy()
    if theta > 0:
        lap_coo = lap.tocoo()
        M[lap_coo.row, lap_coo.col] -= theta * a * lap_coo.data
    tau = float(np.mean(np.diag(M)))
    if tau <= 0:
        tau = 1.0
    M += tau  # rank-one pin of the constant null space
    c, low = sla.cho_factor(M, lower=True, check_finite=False)
    u = sla.cho_solve((c, low), a * gv, check_finite=False)
    u -= u.mean()

    strong = theta * (-(lap @ u)) + (form.matrix @ u) / a - gv
    residual = float(np.linalg.norm(strong)) / gnorm
    if residual > tol:
        raise RuntimeError(
            f"regularized solve residual {residual:.3e} exceeds tol {tol:.1e}"
        )
    return RegularizedSolveResult(u.reshape(form.nx, form.ny), residual)


# -- binary cache -----------------------------------------------------------


def cache_key(grid: Grid, spec: KernelSpec, quad: QuadratureOptions) -> str:
    """Stable hash of everything the assembled matrix depends on."""
    payload = repr(
        (
            grid.nx, grid.ny, grid.lx, grid.ly,
            spec.alpha, spec.c0, spec.C0, spec.omega_name, spec.omega_params,
            quad.r_near, quad.r_sub, quad.cutoff,
        )
    )
    return hashlib.sha256(payload.encode()).hexdigest()


_HEADER = struct.Struct("<6sHqqdddqd")  # magic, version, nx, ny, area, lx-spare, r_near, r_sub, cutoff


def save_form(path: str | Path, form: NonlocalForm) -> None:
    """Persist the form: fixed header then row-major float64 entries."""
    cutoff = np.nan if form.cutoff is None else float(form.cutoff)
    header = _HEADER.pack(
        _MAGIC, 1, form.nx, form.ny, form.cell_area, 0.0, form.r_near,
        form.r_sub, cutoff,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(form.matrix, dtype="<f8").tobytes())


def load_form(path: str | Path) -> NonlocalForm:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ValueError("truncated form cache file")
        magic, version, nx, ny, area, _, r_near, r_sub, cutoff = _HEADER.unpack(raw)
        if magic != _MAGIC or version != 1:
            raise ValueError("not a form cache file")
        n = nx * ny
        data = np.frombuffer(fh.read(n * n * 8), dtype="<f8")
        if data.size != n * n:
            raise ValueError("truncated form cache payload")
    return NonlocalForm(
        matrix=data.reshape(n, n).copy(),
        nx=nx,
        ny=ny,
        cell_area=area,
        r_near=r_near,
        r_sub=int(r_sub),
        cutoff=None if np.isnan(cutoff) else float(cutoff),
    )


def assemble_form_cached(
    grid: Grid,
    spec: KernelSpec,
    quad: QuadratureOptions = QuadratureOptions(),
    cache_dir: str | Path | None = None,
) -> NonlocalForm:
    """Assemble, or reload a previously assembled matrix from cache_dir."""
    if cache_dir is None:
        return assemble_form(grid, spec, quad)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"form-{cache_key(grid, spec, quad)}.bin"
    if path.exists():
        return load_form(path)
    form = assemble_form(grid, spec, quad)
    save_form(path, form)
    return form
