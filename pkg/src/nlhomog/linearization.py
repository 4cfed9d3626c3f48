"""Higher-order linearization: forcing terms, nested hierarchies, defects.

Linearizing the nonlinear flux around a solution u produces a triangular
family of linear equations: the k-th linearized field w_k solves

    -div( D^2L(grad u, x) grad w_k ) = div F_k(grad u, grad w_1, ..,
                                              grad w_{k-1}, x),

where the forcing F_k collects every way products of lower-order
gradients can feed the higher derivatives of the energy density.
Explicitly, F_k is k! times the sum over j in {2..k} of 1/j! times the
(j+1)-st gradient-derivative tensor contracted with all length-j
compositions (i_1, .., i_j) of k, each slot carrying grad w_{i_l}/i_l!.
F_1 is identically zero.

``solve_hierarchy`` runs the whole ladder on nested concentric boxes:
the base solve produces u and a perturbed solution v, each w_k lives on
a box inset a little further from the boundary, and its boundary data is
k! times the trace of the running Taylor defect xi_{k-1} = v - u -
sum_{j<=k-1} w_j/j!, which makes the next defect xi_k vanish identically
on its own boundary.  ``linearization_error_field`` evaluates the defect's exact
divergence-form source E_n, and ``gradient_power_split`` reproduces the
bookkeeping identity splitting (grad xi_0)^{tensor k} into solved (S)
and error (E) parts; both give independent routes to check the computed
hierarchy against itself.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import fields as F
from .lagrangian import LagrangianModel, ModelError
from .solver import (
    DEFAULT_CG_RTOL,
    DEFAULT_NONLINEAR_TOL,
    SolverError,
    solve_linear_divform,
    solve_nonlinear,
)

__all__ = [
    "compositions",
    "assemble_Fm",
    "evaluate_fbar",
    "HierarchyLevel",
    "HierarchySolution",
    "solve_hierarchy",
    "linearization_error_field",
    "gradient_power_split",
    "hierarchy_identity_residual",
    "combined_residual_tolerance",
]


@functools.lru_cache(maxsize=None)
def compositions(total: int, parts: int):
    """Ordered tuples of ``parts`` positive integers summing to ``total``.

    Lexicographic order; ``compositions(4, 2) == ((1, 3), (2, 2), (3, 1))``.
    """
    if parts < 1 or total < parts:
        return ()
    if parts == 1:
        return ((total,),)
    out = []
    for first in range(1, total - parts + 2):
        for rest in compositions(total - first, parts - 1):
            out.append((first,) + rest)
    return tuple(out)


def _contract_last(val, h):
    """Contract the trailing tensor axis of ``val`` with batched vectors."""
    n, d = h.shape
    flat = val.reshape(n, -1, d)
    return np.einsum("eab,eb->ea", flat, h).reshape(val.shape[:-1])


def _fm_from_derivatives(deriv, m, h_arrays):
    """Shared core: F_m from a per-order derivative-tensor provider.

    ``deriv(k)`` returns the order-k tensor batch of shape (n,) + (d,)*k;
    ``h_arrays[i-1]`` is the batch of i-th direction vectors, shape (n, d).
    """
    n, d = h_arrays[0].shape if h_arrays else (0, 0)
    total = np.zeros((n, d))
    for j in range(2, m + 1):
        tensor = deriv(j + 1)
        block = np.zeros((n, d))
        for comp in compositions(m, j):
            val = tensor
            coeff = 1.0
            for i in comp:
                val = _contract_last(val, h_arrays[i - 1])
                coeff /= math.factorial(i)
            block += coeff * val
        total += block / math.factorial(j)
    return math.factorial(m) * total


def assemble_Fm(model: LagrangianModel, m: int, grad_u, w_grads, points=None):
    """Evaluate the order-m linearization forcing on a grid's elements.

    ``grad_u`` is the ElementVectorField of the base gradient, ``w_grads``
    the list of lower-order linearized gradients (length m-1, same grid).
    ``points`` overrides the evaluation coordinates, which nested sub-box
    grids need because their local frame is shifted against the
    coefficient field.  Returns an ElementVectorField; order 1 is zero.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValueError(f"linearization.assemble_Fm: order must be >= 1, got {m!r}")
    if m > model.N + 1:
        raise ModelError(
            f"linearization.assemble_Fm: order {m} needs derivative tensors of "
            f"order {m + 1}; the model is configured with N={model.N} "
            f"(orders up to {model.N + 1})"
        )
    grid = grad_u.grid
    if len(w_grads) != m - 1:
        raise ValueError(
            f"linearization.assemble_Fm: order {m} takes {m - 1} lower-order "
            f"gradients, got {len(w_grads)}"
        )
    for g in w_grads:
        if g.grid != grid:
            raise ValueError("linearization.assemble_Fm: gradients on mixed grids")
    if points is None:
        points = F.element_barycenters(grid)
    else:
        points = np.asarray(points, dtype=float)
        if points.shape != (grid.n_elements, grid.dim):
            raise ValueError("linearization.assemble_Fm: points shape mismatch")
    if m == 1:
        return F.ElementVectorField(grid, np.zeros((grid.n_elements, grid.dim)))

    cache = {}

    def deriv(k):
        if k not in cache:
            cache[k] = model.derivative_tensor(k, grad_u.vectors, points)
        return cache[k]

    vals = _fm_from_derivatives(deriv, m, [g.vectors for g in w_grads])
    return F.ElementVectorField(grid, vals)


def evaluate_fbar(derivatives, m: int, h_list):
    """Order-m forcing built from constant derivative tensors.

    ``derivatives`` maps order k to a full symmetric ndarray of shape
    (d,)*k (orders 3..m+1 are used); ``h_list`` holds the direction
    vectors, each of shape (d,) or batched (n, d).  Used with effective
    coefficients, whose derivative tensors do not vary in space.
    """
    if m < 1:
        raise ValueError("linearization.evaluate_fbar: order must be >= 1")
    hs = [np.asarray(h, dtype=float) for h in h_list]
    if len(hs) != m - 1:
        raise ValueError(
            f"linearization.evaluate_fbar: order {m} takes {m - 1} directions, "
            f"got {len(hs)}"
        )
    batched = any(h.ndim == 2 for h in hs)
    if m == 1:
        for t in derivatives.values():
            return np.zeros(np.asarray(t).shape[0])
        raise ValueError(
            "linearization.evaluate_fbar: order 1 needs at least one tensor "
            "to infer the dimension"
        )
    d = hs[0].shape[-1]
    n = max((h.shape[0] for h in hs if h.ndim == 2), default=1)
    harr = []
    for h in hs:
        if h.ndim == 1:
            harr.append(np.broadcast_to(h, (n, d)))
        elif h.shape == (n, d):
            harr.append(h)
        else:
            raise ValueError("linearization.evaluate_fbar: inconsistent batch sizes")

    def deriv(k):
        if k not in derivatives:
            raise ValueError(
                f"linearization.evaluate_fbar: missing order-{k} derivative tensor"
            )
        t = np.asarray(derivatives[k], dtype=float)
        if t.shape != (d,) * k:
            raise ValueError(
                f"linearization.evaluate_fbar: order-{k} tensor has shape "
                f"{t.shape}, expected {(d,) * k}"
            )
        return np.broadcast_to(t, (n,) + t.shape)

    out = _fm_from_derivatives(deriv, m, harr)
    return out if batched else out[0]


@dataclass(frozen=True)
class HierarchyLevel:
    """One nesting level: its grid plus index maps into the base grid."""

    grid: F.Grid
    node_map: np.ndarray
    element_map: np.ndarray


@dataclass(frozen=True)
class HierarchySolution:
    """Solved linearization ladder on nested boxes.

    ``levels[k]`` carries w_k (for k >= 1) and the defect xi_k; level 0 is
    the full domain holding u, v and xi_0 = v - u.  ``w`` stores the
    unscaled fields; the 1/k! weights enter only in the xi combinations.
    """

    model: LagrangianModel
    order: int
    levels: tuple
    u: F.ScalarField
    v: F.ScalarField
    w: tuple
    xi: tuple
    reports: dict

    @property
    def base_grid(self) -> F.Grid:
        return self.levels[0].grid


def _positions(child_map, parent_map):
    """Indices of child entries inside the (increasing) parent map."""
    pos = np.searchsorted(parent_map, child_map)
    if pos.size and (pos.max() >= parent_map.size or np.any(parent_map[pos] != child_map)):
        raise ValueError("linearization: hierarchy levels are not nested")
    return pos


def _restrict_nodal(values, level_from: HierarchyLevel, level_to: HierarchyLevel):
    return values[_positions(level_to.node_map, level_from.node_map)]


def _restrict_elems(values, level_from: HierarchyLevel, level_to: HierarchyLevel):
    return values[_positions(level_to.element_map, level_from.element_map)]


def solve_hierarchy(
    model: LagrangianModel,
    grid: F.Grid,
    boundary_u,
    boundary_v,
    order: int,
    margin_fraction: float = 0.125,
    tol: float = DEFAULT_NONLINEAR_TOL,
    cg_rtol: float = DEFAULT_CG_RTOL,
    boundary_w=None,
    max_iterations: int = 40,
) -> HierarchySolution:
    """Solve u, v and the linearized ladder w_1..w_order on nested boxes.

    Level k is inset k * margin_fraction of the side from the boundary
    (rounded to whole cells).  ``boundary_w`` may supply explicit traces
    for individual w_k (ScalarField on the base or level grid, or None to
    keep the default trace k! * xi_{k-1}).
    """
    if grid.boundary != F.DIRICHLET:
        raise SolverError("linearization.solve_hierarchy: needs a dirichlet grid")
    if not 1 <= order <= model.N + 1:
        raise ModelError(
            f"linearization.solve_hierarchy: order must lie in 1..{model.N + 1} "
            f"for N={model.N}, got {order}"
        )
    margin_cells = max(1, round(grid.n * margin_fraction))
    innermost = grid.n - 2 * order * margin_cells
    if innermost < 2:
        raise SolverError(
            f"linearization.solve_hierarchy: grid with n={grid.n} cells cannot "
            f"hold {order} nested margins of {margin_cells} cells; refine the "
            "grid or lower the order"
        )
    if boundary_w is not None and len(boundary_w) != order:
        raise ValueError(
            "linearization.solve_hierarchy: boundary_w needs one entry per level"
        )

    reports = {}

    def run(tag, fn):
        try:
            result, rep = fn()
        except SolverError as err:
            raise SolverError(
                f"linearization.solve_hierarchy: solve '{tag}' failed: {err}",
                err.report,
            ) from err
        reports[tag] = rep
        return result

    u = run(
        "u",
        lambda: solve_nonlinear(
            model, grid, boundary_values=boundary_u, tol=tol, cg_rtol=cg_rtol,
            max_iterations=max_iterations,
        ),
    )
    v = run(
        "v",
        lambda: solve_nonlinear(
            model, grid, boundary_values=boundary_v, tol=tol, cg_rtol=cg_rtol,
            max_iterations=max_iterations, initial_guess=u.values,
        ),
    )

    bary = F.element_barycenters(grid)
    grad_u = F.gradient(u).vectors
    a_full = model.hessian(grad_u, bary)
    lo, hi = model.ellipticity_bounds()
    eig_bounds = (min(lo, 0.5), max(hi, model.Lambda))

    base = HierarchyLevel(
        grid, np.arange(grid.n_nodes), np.arange(grid.n_elements)
    )
    levels = [base]
    for k in range(1, order + 1):
        sub, node_map, elem_map = F.subbox_grid(
            grid, (k * margin_cells,) * grid.dim, grid.n - 2 * k * margin_cells
        )
        levels.append(HierarchyLevel(sub, node_map, elem_map))

    xi0 = v.values - u.values
    w_fields = []
    w_grads = []  # on their own levels
    xi_fields = [F.ScalarField(grid, xi0)]
    for k in range(1, order + 1):
        lev = levels[k]
        emap = lev.element_map
        gu_k = F.ElementVectorField(lev.grid, grad_u[emap])
        h_list = [
            F.ElementVectorField(
                lev.grid, _restrict_elems(w_grads[j - 1], levels[j], lev)
            )
            for j in range(1, k)
        ]
        rhs = (
            assemble_Fm(model, k, gu_k, h_list, points=bary[emap])
            if k >= 2
            else None
        )

        given = None if boundary_w is None else boundary_w[k - 1]
        if given is not None:
            vals = given.values if isinstance(given, F.ScalarField) else np.asarray(given, dtype=float)
            if vals.shape == (grid.n_nodes,):
                trace = vals[lev.node_map]
            elif vals.shape == (lev.grid.n_nodes,):
                trace = vals
            else:
                raise ValueError(
                    f"linearization.solve_hierarchy: boundary_w[{k - 1}] has "
                    f"{vals.shape[0]} nodes; expected the base or level grid"
                )
        else:
            trace = math.factorial(k) * _restrict_nodal(
                xi_fields[k - 1].values, levels[k - 1], lev
            )

        w_k = run(
            f"w{k}",
            lambda lev=lev, emap=emap, rhs=rhs, trace=trace: solve_linear_divform(
                lev.grid,
                a_full[emap],
                rhs_flux=rhs,
                boundary_values=trace,
                cg_rtol=cg_rtol,
                eig_bounds=eig_bounds,
            ),
        )
        w_fields.append(w_k)
        w_grads.append(F.gradient(w_k).vectors)

        xi_vals = _restrict_nodal(xi0, base, lev)
        for j in range(1, k + 1):
            xi_vals = xi_vals - _restrict_nodal(
                w_fields[j - 1].values, levels[j], lev
            ) / math.factorial(j)
        xi_fields.append(F.ScalarField(lev.grid, xi_vals))

    return HierarchySolution(
        model=model,
        order=order,
        levels=tuple(levels),
        u=u,
        v=v,
        w=tuple(w_fields),
        xi=tuple(xi_fields),
        reports=reports,
    )


def _level_context(sol: HierarchySolution, n: int):
    """Common restrictions of the hierarchy onto level n's elements."""
    if not 1 <= n <= sol.order:
        raise ValueError(
            f"linearization: level index must lie in 1..{sol.order}, got {n}"
        )
    lev = sol.levels[n]
    base = sol.levels[0]
    emap = lev.element_map
    gu = F.gradient(sol.u).vectors[emap]
    gv = F.gradient(sol.v).vectors[emap]
    points = F.element_barycenters(sol.base_grid)[emap]
    w_grads = [
        _restrict_elems(F.gradient(sol.w[j - 1]).vectors, sol.levels[j], lev)
        for j in range(1, n + 1)
    ]
    return lev, gu, gv, points, w_grads


def linearization_error_field(sol: HierarchySolution, n: int):
    """The exact divergence-form source E_n driving the defect xi_n.

    Combines the Taylor remainder of the flux between u and v with the
    solved forcing terms; weakly, -div(D^2L(grad u) grad xi_n) = div E_n
    up to the residuals of the underlying solves.
    """
    lev, gu, gv, points, w_grads = _level_context(sol, n)
    model = sol.model
    gxi0 = gv - gu

    cache = {}

    def deriv(k):
        if k not in cache:
            cache[k] = model.derivative_tensor(k, gu, points)
        return cache[k]

    def xi0_power_term(k):
        val = deriv(k + 1)
        for _ in range(k):
            val = _contract_last(val, gxi0)
        return val

    total = model.derivative_tensor(1, gv, points).copy()
    for k in range(0, n + 1):
        total -= xi0_power_term(k) / math.factorial(k)
    for k in range(2, n + 1):
        fk = _fm_from_derivatives(deriv, k, w_grads[: k - 1])
        total += (xi0_power_term(k) - fk) / math.factorial(k)
    return F.ElementVectorField(lev.grid, total)


def _outer(tensor, vec):
    return np.einsum("e...,ed->e...d", tensor, vec)


def gradient_power_split(sol: HierarchySolution, tensor_order: int, upto: int):
    """Split (grad xi_0)^{tensor j} into solved and defect parts.

    Returns batched arrays (S, E) on level ``upto`` with j = tensor_order
    trailing axes satisfying S + E == (grad xi_0)^{tensor j} exactly; S
    collects products of solved gradients grad(w_i/i!) with total weight
    at most ``upto``, E carries everything touched by a defect factor.
    """
    j, m = tensor_order, upto
    if j < 1:
        raise ValueError("linearization.gradient_power_split: order must be >= 1")
    if m < j - 1:
        raise ValueError(
            "linearization.gradient_power_split: depth must be at least order - 1"
        )
    if m == 0:
        gu = F.gradient(sol.u).vectors
        gv = F.gradient(sol.v).vectors
        w_grads = []
    else:
        _, gu, gv, _, w_grads = _level_context(sol, m)
    gxi0 = gv - gu
    n_el = gxi0.shape[0]
    scaled = [w_grads[i - 1] / math.factorial(i) for i in range(1, m + 1)]

    @functools.cache
    def S(jj, mm):
        if jj == 1:
            out = np.zeros((n_el, gxi0.shape[1]))
            for i in range(1, mm + 1):
                out = out + scaled[i - 1]
            return out
        total = np.zeros((n_el,) + (gxi0.shape[1],) * jj)
        for i in range(1, mm + 1 - jj + 1):
            total = total + _outer(S(jj - 1, mm - i), scaled[i - 1])
        return total

    @functools.cache
    def xi0_power(r):
        out = np.ones((n_el,))
        for _ in range(r):
            out = _outer(out, gxi0)
        return out

    @functools.cache
    def E(jj, mm):
        if jj == 1:
            return gxi0 - S(1, mm)
        total = _outer(xi0_power(jj - 1), gxi0 - S(1, mm - jj + 1))
        for i in range(1, mm + 1 - jj + 1):
            total = total + _outer(E(jj - 1, mm - i), scaled[i - 1])
        return total

    return S(j, m), E(j, m)


def hierarchy_identity_residual(sol: HierarchySolution, n: int, cg_rtol=DEFAULT_CG_RTOL):
    """Dual norm of <D^2L(grad u) grad xi_n + E_n, grad chi> on level n.

    Up to the residuals of the solves feeding it, this should vanish;
    compare against ``combined_residual_tolerance``.
    """
    lev, gu, _, points, _ = _level_context(sol, n)
    a = sol.model.hessian(gu, points)
    gxi = F.gradient(sol.xi[n]).vectors
    flux = np.einsum("ecd,ed->ec", a, gxi) + linearization_error_field(sol, n).vectors
    r = F.divergence_form_residual(F.ElementVectorField(lev.grid, flux))
    return F.dual_norm_of_residual(lev.grid, r.values, rtol=cg_rtol)


def combined_residual_tolerance(sol: HierarchySolution, n: int) -> float:
    """Accumulated solver residuals rescaled to level n's dual norm.

    Dual norms are volume-normalized, so a residual measured on a larger
    box controls pairings with test functions supported in level n only
    after multiplying by sqrt of the volume ratio.  The w_k contributions
    carry their Taylor weights 1/k!.  Floored at 1e-12.
    """
    if not 1 <= n <= sol.order:
        raise ValueError(
            f"linearization: level index must lie in 1..{sol.order}, got {n}"
        )
    vol_n = sol.levels[n].grid.volume
    vol_0 = sol.levels[0].grid.volume
    total = math.sqrt(vol_0 / vol_n) * (
        sol.reports["u"].final_residual + sol.reports["v"].final_residual
    )
    for k in range(1, n + 1):
        vol_k = sol.levels[k].grid.volume
        res = sol.reports[f"w{k}"].weak_residual_dual
        total += math.sqrt(vol_k / vol_n) * res / math.factorial(k)
    return max(total, 1e-12)
