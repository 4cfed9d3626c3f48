"""Newton and linear solvers for divergence-form problems on P1 grids.

Two entry points:

* :func:`solve_linear_divform` solves the weak problem
  <a grad w, grad chi> + <rhs_flux, grad chi> = rhs_nodal . chi
  for every free hat function chi, with Dirichlet data on clamped grids or
  a mean-zero solution on periodic ones.  The per-element coefficient must
  be symmetric with eigenvalues inside the stated ellipticity window; this
  is checked before CG ever runs.

* :func:`solve_nonlinear` runs a damped Newton iteration on the convex
  energy  sum_e |e| L(grad u, x_e) - rhs . u  with backtracking (step
  halving under an Armijo sufficient-decrease test).  Convergence is
  declared in the volume-normalized dual norm of the weak residual, the
  same H^-1-type norm the field core exposes, with default tolerance 1e-9.
  The initial guess is the a-harmonic extension of the boundary data with
  a = D^2_p L(0, x).  Failure to converge always raises; nothing is
  silently truncated.

Both solvers use Jacobi-preconditioned CG (relative residual 1e-10) on
scipy CSR matrices and report iteration counts.  All reductions run in a
fixed order, so repeated runs are bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fields as F
from .lagrangian import LagrangianModel

DEFAULT_NONLINEAR_TOL = 1e-9
DEFAULT_CG_RTOL = 1e-10
ARMIJO_SLOPE = 1e-4
MAX_HALVINGS = 30


class SolverError(RuntimeError):
    """A solve failed; carries the partial report when one exists."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    """Outcome of a linear or nonlinear solve.

    For nonlinear solves ``final_residual`` and ``tolerance`` are absolute,
    in the volume-normalized dual norm of the weak residual; for linear
    solves they are the relative algebraic CG residual and its tolerance,
    with the measured dual norm kept in ``weak_residual_dual``.  In both
    cases ``converged`` implies ``final_residual <= tolerance``.
    """

    iterations: int
    final_residual: float
    linear_solve_counts: list = field(default_factory=list)
    converged: bool = False
    tolerance: float = 0.0
    weak_residual_dual: float | None = None
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)
    halvings: list = field(default_factory=list)

    def __post_init__(self):
        if self.converged and self.final_residual > self.tolerance:
            raise ValueError(
                "inconsistent report: converged but residual above tolerance"
            )


def element_eigenvalue_range(a_elems):
    """(min, max) eigenvalue over per-element symmetric 1x1 or 2x2 matrices."""
    a = np.asarray(a_elems, dtype=float)
    if a.ndim == 1 or a.shape[-1] == 1:
        vals = a.reshape(a.shape[0], -1)[:, 0]
        return float(vals.min()), float(vals.max())
    sym_defect = np.abs(a[:, 0, 1] - a[:, 1, 0]).max()
    if sym_defect > 1e-10:
        raise SolverError(
            f"solver.solve_linear_divform: coefficient not symmetric "
            f"(max asymmetry {sym_defect:.3e})"
        )
    half_tr = 0.5 * (a[:, 0, 0] + a[:, 1, 1])
    det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    disc = np.sqrt(np.maximum(half_tr**2 - det, 0.0))
    return float((half_tr - disc).min()), float((half_tr + disc).max())


def _check_coefficient(a_elems, eig_bounds):
    lo, hi = eig_bounds
    emin, emax = element_eigenvalue_range(a_elems)
    tol = 1e-10
    if emin < lo - tol or emax > hi + tol:
        raise SolverError(
            "solver.solve_linear_divform: per-element coefficient eigenvalues "
            f"[{emin:.6g}, {emax:.6g}] violate the ellipticity window "
            f"[{lo:.6g}, {hi:.6g}]"
        )


def _free_system(grid, K):
    if grid.boundary == F.DIRICHLET:
        free = np.flatnonzero(~F.boundary_node_mask(grid))
        Kff = K[free][:, free].tocsr()
        return Kff, free, False
    return K, np.arange(grid.n_nodes), True


def solve_linear_divform(
    grid,
    a_elems,
    rhs_flux=None,
    rhs_nodal=None,
    boundary_values=None,
    cg_rtol=DEFAULT_CG_RTOL,
    eig_bounds=(0.5, 4.0),
    measure_residual=True,
    x0=None,
):
    """Solve <a grad w + rhs_flux, grad chi> = rhs_nodal . chi weakly.

    ``rhs_flux`` is an ElementVectorField (or None), ``rhs_nodal`` a nodal
    vector (or None).  On dirichlet grids ``boundary_values`` (ScalarField
    or nodal array) supplies the clamped values, default zero; periodic
    grids return the mean-zero solution.  Returns ``(w, report)``.
    """
    a = np.asarray(a_elems, dtype=float)
    if a.ndim == 1:
        a = a[:, None, None] * np.eye(grid.dim)
    _check_coefficient(a, eig_bounds)
    K = F.assemble_stiffness(grid, a)
    b = np.zeros(grid.n_nodes)
    if rhs_flux is not None:
        b -= F.divergence_form_residual(rhs_flux).values
    if rhs_nodal is not None:
        b = b + np.asarray(rhs_nodal, dtype=float)

    Kff, free, periodic = _free_system(grid, K)
    w = np.zeros(grid.n_nodes)
    if grid.boundary == F.DIRICHLET:
        if boundary_values is not None:
            bv = (
                boundary_values.values
                if isinstance(boundary_values, F.ScalarField)
                else np.asarray(boundary_values, dtype=float)
            )
            mask = F.boundary_node_mask(grid)
            w[mask] = bv[mask]
            b = b - K @ w
    elif boundary_values is not None:
        raise SolverError(
            "solver.solve_linear_divform: periodic grids take no boundary data"
        )

    diag = Kff.diagonal()
    if np.any(diag <= 0):
        raise SolverError("solver.solve_linear_divform: non-positive diagonal")
    x0f = None if x0 is None else np.asarray(x0, dtype=float)[free]
    sol, iters, achieved = F.pcg(
        lambda v: Kff @ v,
        b[free],
        diag,
        project_mean=periodic,
        rtol=cg_rtol,
        x0=x0f,
    )
    w[free] = sol
    report = SolveReport(
        iterations=iters,
        final_residual=achieved,
        linear_solve_counts=[iters],
        converged=bool(achieved <= cg_rtol),
        tolerance=cg_rtol,
    )
    if not report.converged:
        raise SolverError(
            "solver.solve_linear_divform: CG stalled at relative residual "
            f"{achieved:.3e} (tolerance {cg_rtol:.1e}, {iters} iterations)",
            report,
        )
    field_w = F.ScalarField(grid, w)
    if measure_residual:
        res = _linear_weak_residual(grid, a, field_w, rhs_flux, rhs_nodal)
        report.weak_residual_dual = F.dual_norm_of_residual(grid, res)
    return field_w, report


def _linear_weak_residual(grid, a, w, rhs_flux, rhs_nodal):
    total = np.einsum("ecd,ed->ec", a, F.gradient(w).vectors)
    if rhs_flux is not None:
        total = total + rhs_flux.vectors
    r = F.divergence_form_residual(F.ElementVectorField(grid, total)).values
    if rhs_nodal is not None:
        r = r - np.asarray(rhs_nodal, dtype=float)
        if grid.boundary == F.DIRICHLET:
            r = r.copy()
            r[F.boundary_node_mask(grid)] = 0.0
        else:
            r = r - r.mean()
    return r


def _gradient_argument(grid, u_values, slope):
    g = F.gradient(F.ScalarField(grid, u_values)).vectors
    if slope is not None:
        g = g + slope
    return g


def solve_nonlinear(
    model: LagrangianModel,
    grid: F.Grid,
    boundary_values=None,
    slope=None,
    rhs_nodal=None,
    tol=DEFAULT_NONLINEAR_TOL,
    cg_rtol=DEFAULT_CG_RTOL,
    max_iterations=40,
    max_halvings=MAX_HALVINGS,
    initial_guess=None,
):
    """Damped Newton solve of the nonlinear divergence-form equation.

    Dirichlet mode (``boundary_values``): minimizes the energy of u with
    clamped boundary.  Periodic mode (``slope`` p): solves for the
    mean-zero corrector-type unknown phi whose gradient argument is
    p + grad phi.  Returns ``(u_or_phi, report)``; raises SolverError with
    the partial report when Newton or the line search stalls.
    """
    if (boundary_values is None) == (slope is None):
        raise SolverError(
            "solver.solve_nonlinear: pass exactly one of boundary_values/slope"
        )
    if slope is not None and grid.boundary != F.PERIODIC:
        raise SolverError("solver.solve_nonlinear: slope mode needs a periodic grid")
    if boundary_values is not None and grid.boundary != F.DIRICHLET:
        raise SolverError(
            "solver.solve_nonlinear: boundary-value mode needs a dirichlet grid"
        )
    slope_vec = None if slope is None else np.asarray(slope, dtype=float)
    bary = F.element_barycenters(grid)
    vol = F.element_volume(grid)
    rhs = None if rhs_nodal is None else np.asarray(rhs_nodal, dtype=float)
    lo, hi = model.ellipticity_bounds()
    eig_bounds = (min(lo, 0.5), max(hi, model.Lambda))

    def energy(u_values):
        g = _gradient_argument(grid, u_values, slope_vec)
        e = vol * float(np.sum(model.energy_density(g, bary)))
        if rhs is not None:
            e -= float(rhs @ u_values)
        return e

    def weak_residual(u_values):
        g = _gradient_argument(grid, u_values, slope_vec)
        flux = F.ElementVectorField(grid, model.d_p(g, bary))
        r = F.divergence_form_residual(flux).values
        if rhs is not None:
            r = r - rhs
            if grid.boundary == F.DIRICHLET:
                r = r.copy()
                r[F.boundary_node_mask(grid)] = 0.0
            else:
                r = r - r.mean()
        return r

    # initial guess
    if initial_guess is not None:
        u = np.array(
            initial_guess.values
            if isinstance(initial_guess, F.ScalarField)
            else initial_guess,
            dtype=float,
        )
        if boundary_values is not None:
            mask = F.boundary_node_mask(grid)
            bv = (
                boundary_values.values
                if isinstance(boundary_values, F.ScalarField)
                else np.asarray(boundary_values, dtype=float)
            )
            u[mask] = bv[mask]
        else:
            u = u - u.mean()
        linear_counts = []
    elif boundary_values is not None:
        a0 = model.hessian(np.zeros((grid.n_elements, grid.dim)), bary)
        guess, rep0 = solve_linear_divform(
            grid,
            a0,
            boundary_values=boundary_values,
            cg_rtol=cg_rtol,
            eig_bounds=eig_bounds,
            measure_residual=False,
        )
        u = guess.values.copy()
        linear_counts = list(rep0.linear_solve_counts)
    else:
        u = np.zeros(grid.n_nodes)
        linear_counts = []

    report = SolveReport(
        iterations=0,
        final_residual=np.inf,
        linear_solve_counts=linear_counts,
        converged=False,
        tolerance=tol,
    )
    e_now = energy(u)
    report.energy_history.append(e_now)
    for newton_iter in range(max_iterations + 1):
        r = weak_residual(u)
        res = F.dual_norm_of_residual(grid, r, rtol=cg_rtol)
        report.residual_history.append(res)
        report.final_residual = res
        report.iterations = newton_iter
        if res <= tol:
            report.converged = True
            return F.ScalarField(grid, u), report
        if newton_iter == max_iterations:
            break
        g = _gradient_argument(grid, u, slope_vec)
        a = model.hessian(g, bary)
        step_field, step_rep = solve_linear_divform(
            grid,
            a,
            rhs_nodal=-r,
            cg_rtol=cg_rtol,
            eig_bounds=eig_bounds,
            measure_residual=False,
        )
        report.linear_solve_counts.extend(step_rep.linear_solve_counts)
        delta = step_field.values
        slope_dir = float(r @ delta)  # directional derivative of the energy
        t = 1.0
        accepted = False
        if abs(slope_dir) <= 1e-12 * (abs(e_now) + 1e-12):
            # predicted decrease is below energy round-off: the Armijo test
            # is meaningless noise here, and plain Newton is safe this close
            accepted = True
            halving = 0
        else:
            for halving in range(max_halvings + 1):
                e_try = energy(u + t * delta)
                if e_try <= e_now + ARMIJO_SLOPE * t * slope_dir:
                    accepted = True
                    break
                t *= 0.5
        if not accepted:
            raise SolverError(
                "solver.solve_nonlinear: line search failed to decrease the "
                f"energy after {max_halvings} halvings at Newton step "
                f"{newton_iter} (residual {res:.3e})",
                report,
            )
        report.halvings.append(halving)
        u = u + t * delta
        if slope is not None:
            u = u - u.mean()
        e_now = energy(u)
        report.energy_history.append(e_now)
    raise SolverError(
        "solver.solve_nonlinear: Newton did not reach tolerance "
        f"{tol:.1e} in {max_iterations} iterations "
        f"(final residual {report.final_residual:.3e})",
        report,
    )
