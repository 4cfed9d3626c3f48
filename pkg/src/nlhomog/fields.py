"""Structured P1 finite-element grids and the fields living on them.

Everything downstream (nonlinear solves, linearized hierarchies, cell
problems) is built on two uniform meshes:

* dim 1: ``n`` equal segments on ``[0, side]``;
* dim 2: an ``n x n`` grid of squares on ``[0, side]^2``, each square split
  into two triangles along the diagonal from its lower-left to its
  upper-right corner.

Scalar unknowns are continuous piecewise-linear (one value per node), so
their gradients are constant on each element; flux-type quantities are
stored as one vector per element.  All quadrature is one-point at element
barycenters, which is exact for element-wise affine integrands.

Two boundary flavors exist.  ``dirichlet`` grids carry ``(n+1)^dim`` nodes
and weak residuals are reported on interior nodes only.  ``periodic`` grids
identify opposite faces, carry ``n^dim`` nodes, and weak residuals are
projected onto mean-zero vectors (the constant function is in the kernel).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

DIRICHLET = "dirichlet"
PERIODIC = "periodic"


class FieldShapeError(ValueError):
    """Raised when field data does not match its grid."""


@dataclass(frozen=True)
class Grid:
    """Uniform structured mesh on ``[0, side_length]^dim``.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    n : int
        Number of cells per side (n >= 1).
    side_length : float
        Physical side length; spacing is ``side_length / n``.
    boundary : str
        ``"dirichlet"`` or ``"periodic"``.
    """

    dim: int
    n: int
    side_length: float
    boundary: str = DIRICHLET

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dim must be 1 or 2, got {self.dim}")
        if self.n < 1:
            raise ValueError(f"grid needs at least one cell, got n={self.n}")
        if not (self.side_length > 0):
            raise ValueError("side_length must be positive")
        if self.boundary not in (DIRICHLET, PERIODIC):
            raise ValueError(f"unknown boundary kind {self.boundary!r}")

    @property
    def spacing(self) -> float:
        return self.side_length / self.n

    @property
    def nodes_per_side(self) -> int:
        return self.n + 1 if self.boundary == DIRICHLET else self.n

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_side**self.dim

    @property
    def n_elements(self) -> int:
        return self.n if self.dim == 1 else 2 * self.n * self.n

    @property
    def volume(self) -> float:
        return self.side_length**self.dim


@functools.lru_cache(maxsize=64)
def node_coordinates(grid: Grid) -> np.ndarray:
    """Node positions, shape (n_nodes, dim), row-major in (y, x) order for dim 2."""
    h = grid.spacing
    m = grid.nodes_per_side
    if grid.dim == 1:
        xs = (h * np.arange(m))[:, None]
        xs.setflags(write=False)
        return xs
    idx = np.arange(m)
    X, Y = np.meshgrid(idx, idx, indexing="xy")  # row i -> y, col j -> x
    coords = h * np.column_stack([X.ravel(), Y.ravel()]).astype(float)
    coords.setflags(write=False)
    return coords


def _node_index(grid: Grid, ix, iy=None):
    m = grid.nodes_per_side
    if grid.boundary == PERIODIC:
        ix = np.mod(ix, m)
        if iy is not None:
            iy = np.mod(iy, m)
    if grid.dim == 1:
        return ix
    return iy * m + ix


@functools.lru_cache(maxsize=64)
def element_nodes(grid: Grid) -> np.ndarray:
    """Connectivity array, shape (n_elements, dim + 1), int node indices.

    dim 2 convention: cell (ix, iy) owns elements 2*(iy*n + ix) (lower
    triangle A,B,C) and +1 (upper triangle A,C,D) with A=(ix,iy), B=(ix+1,iy),
    C=(ix+1,iy+1), D=(ix,iy+1).
    """
    n = grid.n
    if grid.dim == 1:
        i = np.arange(n)
        conn = np.column_stack([_node_index(grid, i), _node_index(grid, i + 1)])
    else:
        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        ix, iy = ix.ravel(), iy.ravel()
        A = _node_index(grid, ix, iy)
        B = _node_index(grid, ix + 1, iy)
        C = _node_index(grid, ix + 1, iy + 1)
        D = _node_index(grid, ix, iy + 1)
        conn = np.empty((2 * n * n, 3), dtype=np.int64)
        conn[0::2] = np.column_stack([A, B, C])
        conn[1::2] = np.column_stack([A, C, D])
    conn = np.ascontiguousarray(conn, dtype=np.int64)
    conn.setflags(write=False)
    return conn


@functools.lru_cache(maxsize=64)
def basis_gradients(grid: Grid) -> np.ndarray:
    """Constant gradients of the local nodal basis, shape (n_elements, dim+1, dim)."""
    h = grid.spacing
    if grid.dim == 1:
        g = np.tile(np.array([[-1.0], [1.0]]) / h, (grid.n_elements, 1, 1))
    else:
        lower = np.array([[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]]) / h
        upper = np.array([[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]]) / h
        g = np.empty((grid.n_elements, 3, 2))
        g[0::2] = lower
        g[1::2] = upper
    g.setflags(write=False)
    return g


@functools.lru_cache(maxsize=64)
def element_barycenters(grid: Grid) -> np.ndarray:
    """Element barycenters, shape (n_elements, dim)."""
    h = grid.spacing
    n = grid.n
    if grid.dim == 1:
        b = (h * (np.arange(n) + 0.5))[:, None]
    else:
        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        ix, iy = ix.ravel().astype(float), iy.ravel().astype(float)
        b = np.empty((2 * n * n, 2))
        b[0::2, 0] = h * (ix + 2.0 / 3.0)  # lower triangle A,B,C
        b[0::2, 1] = h * (iy + 1.0 / 3.0)
        b[1::2, 0] = h * (ix + 1.0 / 3.0)  # upper triangle A,C,D
        b[1::2, 1] = h * (iy + 2.0 / 3.0)
    b.setflags(write=False)
    return b


def element_volume(grid: Grid) -> float:
    """Measure of a single element (all elements are congruent)."""
    h = grid.spacing
    return h if grid.dim == 1 else 0.5 * h * h


@functools.lru_cache(maxsize=64)
def boundary_node_mask(grid: Grid) -> np.ndarray:
    """Boolean mask of constrained nodes (empty for periodic grids)."""
    mask = np.zeros(grid.n_nodes, dtype=bool)
    if grid.boundary == DIRICHLET:
        m = grid.nodes_per_side
        if grid.dim == 1:
            mask[[0, m - 1]] = True
        else:
            idx = np.arange(m)
            mask[_node_index(grid, idx, np.zeros(m, dtype=int))] = True
            mask[_node_index(grid, idx, np.full(m, m - 1))] = True
            mask[_node_index(grid, np.zeros(m, dtype=int), idx)] = True
            mask[_node_index(grid, np.full(m, m - 1), idx)] = True
    mask.setflags(write=False)
    return mask


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise FieldShapeError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class ScalarField:
    """One float per node; immutable after construction."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_nodes,):
            raise FieldShapeError(
                f"scalar field needs shape ({self.grid.n_nodes},), got {v.shape}"
            )
        _check_finite(v, "scalar field")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ElementVectorField:
    """One dim-vector per element; immutable after construction."""

    grid: Grid
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if v.shape != (self.grid.n_elements, self.grid.dim):
            raise FieldShapeError(
                "element vector field needs shape "
                f"({self.grid.n_elements}, {self.grid.dim}), got {v.shape}"
            )
        _check_finite(v, "element vector field")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)


def affine_field(grid: Grid, slope, offset: float = 0.0) -> ScalarField:
    """The field x -> offset + slope . x (periodic grids reject nonzero slope)."""
    slope = np.atleast_1d(np.asarray(slope, dtype=float))
    if slope.shape != (grid.dim,):
        raise FieldShapeError(f"slope must have {grid.dim} components")
    if grid.boundary == PERIODIC and np.any(slope != 0.0):
        raise FieldShapeError("affine fields with nonzero slope are not periodic")
    vals = offset + node_coordinates(grid) @ slope
    return ScalarField(grid, vals)


def field_from_function(grid: Grid, fn) -> ScalarField:
    """Sample fn at the nodes. fn takes an (n_nodes, dim) array of positions."""
    return ScalarField(grid, np.asarray(fn(node_coordinates(grid)), dtype=float))


def gradient(f: ScalarField) -> ElementVectorField:
    """Element-wise constant gradient of a P1 scalar field.

    Exact for any field whose nodal values come from an affine function.
    """
    grid = f.grid
    conn = element_nodes(grid)
    bg = basis_gradients(grid)
    vals = f.values[conn]  # (E, K)
    g = np.einsum("ek,ekd->ed", vals, bg)
    return ElementVectorField(grid, g)


def node_sum_from_elements(grid: Grid, contrib: np.ndarray) -> np.ndarray:
    """Accumulate per-(element, local node) scalars into nodes.

    Uses per-slot bincount so the reduction order is fixed, making repeated
    runs bitwise identical.
    """
    conn = element_nodes(grid)
    out = np.zeros(grid.n_nodes)
    for k in range(conn.shape[1]):
        out += np.bincount(conn[:, k], weights=contrib[:, k], minlength=grid.n_nodes)
    return out


def divergence_form_residual(flux: ElementVectorField) -> ScalarField:
    """Weak residual of a flux: r_i = sum_e |e| q_e . grad(chi_i)|_e.

    For dirichlet grids the residual is reported on interior nodes (boundary
    entries are zeroed); for periodic grids it is projected to mean zero,
    which only removes float round-off since the hat functions sum to one.
    """
    grid = flux.grid
    bg = basis_gradients(grid)
    w = element_volume(grid) * np.einsum("ed,ekd->ek", flux.vectors, bg)
    r = node_sum_from_elements(grid, w)
    if grid.boundary == DIRICHLET:
        r = r.copy()
        r[boundary_node_mask(grid)] = 0.0
    else:
        r = r - r.mean()
    return ScalarField(grid, r)


# ---------------------------------------------------------------------------
# Regions and restriction


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned sub-box given by corner offsets in physical units."""

    lo: tuple
    hi: tuple

    @staticmethod
    def full(grid: Grid) -> "BoxRegion":
        return BoxRegion((0.0,) * grid.dim, (grid.side_length,) * grid.dim)

    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))


def element_mask_for_region(grid: Grid, region: BoxRegion | None) -> np.ndarray:
    """Elements whose barycenters fall inside the region (all if region is None)."""
    if region is None:
        return np.ones(grid.n_elements, dtype=bool)
    b = element_barycenters(grid)
    lo = np.asarray(region.lo, dtype=float)
    hi = np.asarray(region.hi, dtype=float)
    if lo.shape != (grid.dim,) or hi.shape != (grid.dim,):
        raise FieldShapeError("region corners must match the grid dimension")
    return np.all((b >= lo) & (b <= hi), axis=1)


def subbox_grid(parent: Grid, lo_cell, n_sub: int):
    """Carve an aligned dirichlet sub-grid out of ``parent``.

    ``lo_cell`` is the integer cell offset of the sub-box corner; the sub-box
    spans ``n_sub`` cells per side.  Returns ``(grid, node_map, elem_map)``
    where the maps pull parent nodal values / element vectors onto the
    sub-grid (``values[node_map]``, ``vectors[elem_map]``).
    """
    lo_cell = np.atleast_1d(np.asarray(lo_cell, dtype=int))
    if lo_cell.shape != (parent.dim,):
        raise FieldShapeError("lo_cell must have one entry per dimension")
    if n_sub < 1:
        raise ValueError("sub-box needs at least one cell")
    if np.any(lo_cell < 0) or np.any(lo_cell + n_sub > parent.n):
        raise ValueError("sub-box does not fit inside the parent grid")
    if parent.boundary != DIRICHLET:
        raise ValueError("sub-boxes are only carved out of dirichlet grids")
    sub = Grid(parent.dim, n_sub, n_sub * parent.spacing, DIRICHLET)
    if parent.dim == 1:
        node_map = lo_cell[0] + np.arange(n_sub + 1)
        elem_map = lo_cell[0] + np.arange(n_sub)
    else:
        m = parent.nodes_per_side
        jx = lo_cell[0] + np.arange(n_sub + 1)
        jy = lo_cell[1] + np.arange(n_sub + 1)
        node_map = (jy[:, None] * m + jx[None, :]).ravel()
        cx = lo_cell[0] + np.arange(n_sub)
        cy = lo_cell[1] + np.arange(n_sub)
        cell = (cy[:, None] * parent.n + cx[None, :]).ravel()
        elem_map = np.empty(2 * n_sub * n_sub, dtype=np.int64)
        elem_map[0::2] = 2 * cell
        elem_map[1::2] = 2 * cell + 1
    return sub, node_map, elem_map


def restrict_scalar(f: ScalarField, sub: Grid, node_map) -> ScalarField:
    return ScalarField(sub, f.values[node_map])


def restrict_vectors(v: ElementVectorField, sub: Grid, elem_map) -> ElementVectorField:
    return ElementVectorField(sub, v.vectors[elem_map])


# ---------------------------------------------------------------------------
# Norms


def _element_magnitudes(f, mask):
    """|f| per element over the mask, plus the shared element volume."""
    grid = f.grid
    if isinstance(f, ScalarField):
        conn = element_nodes(grid)
        vals = f.values[conn].mean(axis=1)  # barycenter value of the P1 interpolant
        mags = np.abs(vals[mask])
    elif isinstance(f, ElementVectorField):
        mags = np.linalg.norm(f.vectors[mask], axis=1)
    else:
        raise TypeError(f"cannot take norms of {type(f).__name__}")
    return mags, element_volume(grid)


def norm_Lq_volume_normalized(f, q: float, region: BoxRegion | None = None) -> float:
    """Volume-normalized L^q norm: (average over the region of |f|^q)^(1/q).

    Accepts scalar fields (evaluated at barycenters) and element vector
    fields (Euclidean magnitude per element); q must be >= 1.
    """
    if q < 1:
        raise ValueError(f"L^q norms require q >= 1, got q={q}")
    grid = f.grid
    mask = element_mask_for_region(grid, region)
    if not mask.any():
        raise ValueError("region contains no element barycenters")
    mags, vol = _element_magnitudes(f, mask)
    total = vol * np.sum(mags**q)
    covered = vol * int(mask.sum())
    return float((total / covered) ** (1.0 / q))


# ---------------------------------------------------------------------------
# Stiffness assembly and preconditioned CG
#
# These primitives are shared by the H^-1 norm below and by the equation
# solvers built on top of this module.  Sparse storage is scipy CSR; the CG
# loop is written out because the periodic case needs a mean-zero projection
# folded into the preconditioner and callers want exact iteration counts.


class CgError(RuntimeError):
    """CG failed to reach its tolerance; carries the achieved residual."""

    def __init__(self, message, achieved, tolerance, iterations):
        super().__init__(
            f"{message}: achieved relative residual {achieved:.3e} "
            f"(tolerance {tolerance:.1e}) after {iterations} iterations"
        )
        self.achieved = achieved
        self.tolerance = tolerance
        self.iterations = iterations


def assemble_stiffness(grid: Grid, a_elems=None) -> sparse.csr_matrix:
    """Assemble K[i,j] = sum_e |e| grad(chi_i) . a_e grad(chi_j).

    ``a_elems`` may be None (identity, the Laplacian), a scalar per element
    of shape (E,), or a matrix per element of shape (E, dim, dim).
    """
    bg = basis_gradients(grid)
    conn = element_nodes(grid)
    vol = element_volume(grid)
    if a_elems is None:
        kloc = vol * np.einsum("ekd,eld->ekl", bg, bg)
    else:
        a = np.asarray(a_elems, dtype=float)
        if a.ndim == 1:
            kloc = vol * a[:, None, None] * np.einsum("ekd,eld->ekl", bg, bg)
        else:
            kloc = vol * np.einsum("ekd,edc,elc->ekl", bg, a, bg)
    nloc = conn.shape[1]
    rows = np.repeat(conn, nloc, axis=1).ravel()
    cols = np.tile(conn, (1, nloc)).ravel()
    K = sparse.coo_matrix(
        (kloc.ravel(), (rows, cols)), shape=(grid.n_nodes, grid.n_nodes)
    )
    return K.tocsr()


def pcg(matvec, b, diag, project_mean=False, rtol=1e-10, maxiter=None, x0=None):
    """Jacobi-preconditioned CG on SPD (or mean-zero-consistent PSD) systems.

    Returns ``(x, iterations, achieved_relative_residual)``.  When
    ``project_mean`` is set, the mean is subtracted after every
    preconditioner application (and from b and x0), which keeps all iterates
    in the mean-zero complement of the constant kernel.
    """
    b = np.asarray(b, dtype=float)
    if project_mean:
        b = b - b.mean()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    if maxiter is None:
        maxiter = max(1000, 4 * b.shape[0])
    if x0 is None:
        x = np.zeros_like(b)
    else:
        x = np.array(x0, dtype=float)
        if project_mean:
            x -= x.mean()

    iterations = 0
    true_resid = np.inf
    # The recurrence residual can drift below the true residual b - A x, so
    # convergence is confirmed against the recomputed residual, restarting
    # the recurrence from the current iterate if it disagrees.
    for _restart in range(4):
        r = b - matvec(x) if (x0 is not None or _restart) else b.copy()
        z = r / diag
        if project_mean:
            z -= z.mean()
        p = z.copy()
        rz = float(r @ z)
        resid = float(np.linalg.norm(r)) / bnorm
        while resid > rtol and iterations < maxiter:
            Ap = matvec(p)
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                break  # loss of positivity: stop and report what we reached
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            z = r / diag
            if project_mean:
                z -= z.mean()
            rz_next = float(r @ z)
            p = z + (rz_next / rz) * p
            rz = rz_next
            iterations += 1
            resid = float(np.linalg.norm(r)) / bnorm
        true_resid = float(np.linalg.norm(b - matvec(x))) / bnorm
        if true_resid <= rtol or iterations >= maxiter:
            break
    return x, iterations, true_resid


@functools.lru_cache(maxsize=32)
def _laplacian_system(grid: Grid):
    """Unit-coefficient stiffness restricted to free nodes, plus its diagonal."""
    K = assemble_stiffness(grid, None)
    if grid.boundary == DIRICHLET:
        free = np.flatnonzero(~boundary_node_mask(grid))
        Kff = K[free][:, free].tocsr()
    else:
        free = np.arange(grid.n_nodes)
        Kff = K
    diag = Kff.diagonal().copy()
    if diag.size and not np.all(diag > 0):
        raise RuntimeError("laplacian diagonal must be positive")
    free.setflags(write=False)
    diag.setflags(write=False)
    return Kff, free, diag


def dual_norm_of_residual(grid: Grid, residual, rtol: float = 1e-10) -> float:
    """Volume-normalized dual (H^-1-type) norm of a weak residual vector.

    Solves K phi = r with the unit Laplacian K on the free nodes and returns
    sqrt(r . phi / |U|); this equals the volume-normalized L^2 norm of grad
    phi.  Raises CgError when CG stalls above its tolerance.
    """
    r = np.asarray(residual, dtype=float)
    if r.shape != (grid.n_nodes,):
        raise FieldShapeError("residual vector must have one entry per node")
    Kff, free, diag = _laplacian_system(grid)
    rf = r[free]
    if rf.size == 0 or not np.any(rf):
        return 0.0
    project = grid.boundary == PERIODIC
    phi, iters, achieved = pcg(
        lambda v: Kff @ v, rf, diag, project_mean=project, rtol=rtol
    )
    if achieved > rtol:
        raise CgError(
            "dual-norm Poisson solve did not converge", achieved, rtol, iters
        )
    if project:
        rf = rf - rf.mean()
    val = float(rf @ phi)
    return float(np.sqrt(max(val, 0.0) / grid.volume))


def norm_Hminus1(g: ElementVectorField, rtol: float = 1e-10) -> float:
    """Volume-normalized negative-order norm of a vector field.

    Realized by the inverse unit Laplacian applied per component: each
    g_i is paired against the P1 test functions as a plain function
    (element-constant fields make the load integral exact), phi_i solves
    -Lap(phi_i) = g_i with zero boundary values on dirichlet grids and
    mean-zero test functions on periodic ones, and the components
    combine in quadrature,

        norm^2 = sum_i  |U|^-1 ||grad phi_i||^2.

    Oscillating mean-zero fields score far below their L^2 size -- the
    property that lets the norm resolve weak-convergence rates -- while
    any field is bounded by the domain's Poincare constant times its
    L^2 norm.
    """
    grid = g.grid
    conn_width = element_nodes(grid).shape[1]
    weight = element_volume(grid) / conn_width
    total = 0.0
    for i in range(grid.dim):
        contrib = np.repeat(weight * g.vectors[:, i : i + 1], conn_width, axis=1)
        load = node_sum_from_elements(grid, contrib)
        total += dual_norm_of_residual(grid, load, rtol=rtol) ** 2
    return float(np.sqrt(total))
