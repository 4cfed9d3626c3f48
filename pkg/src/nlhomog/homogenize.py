"""Periodic cell problems and the effective energy's derivative tensors.

On a periodic sampling cell the nonlinear corrector phi_p turns an
imposed mean slope p into an exact solution p.x + phi_p; averaging the
flux over the cell gives the effective (homogenized) flux.  Higher
derivatives of the effective energy come from linearized correctors
psi^(1), psi^(2), ... solved around the corrector state in a direction
h: psi^(1) corrects the direction itself, and each later psi^(m) solves
the same linear operator against the forcing built from the lower
ladder.  Averaged fluxes of the ladder are exactly the directional
derivatives of the effective flux, so polarization over directions
rebuilds the full symmetric derivative tensors.

``oracle_flux_1d`` computes the one-dimensional effective flux by a
completely different route (pointwise inversion of the scalar flux law
plus quadrature over the cell) and exists to validate the finite-element
pipeline against it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import fields as F
from .lagrangian import LagrangianModel, ModelError, sample_coefficient_field
from .linearization import assemble_Fm
from .solver import (
    DEFAULT_CG_RTOL,
    DEFAULT_NONLINEAR_TOL,
    SolverError,
    solve_linear_divform,
    solve_nonlinear,
)
from .tensors import SymTensor, canonical_indices, polarize

__all__ = [
    "CorrectorSet",
    "solve_first_corrector",
    "corrector_ladder",
    "solve_linearized_corrector",
    "homogenized_gradient",
    "homogenized_energy",
    "homogenized_flux_diagonal",
    "homogenized_derivative_tensor",
    "HomogenizedExpansion",
    "taylor_expansion",
    "oracle_flux_1d",
    "oracle_d2_1d",
]


@dataclass
class CorrectorSet:
    """Solved nonlinear cell problem plus a cache of linearized ladders.

    ``base_gradient`` holds p + grad phi_p per element and ``a`` the
    gradient Hessian of the energy density frozen at that state -- the
    coefficient every linearized solve shares.  ``ladders`` maps a
    direction key to the list of solved psi fields for that direction.
    """

    model: LagrangianModel
    p: np.ndarray
    grid: F.Grid
    phi: F.ScalarField
    report: object
    base_gradient: np.ndarray
    a: np.ndarray
    cg_rtol: float
    ladders: dict = field(default_factory=dict)
    ladder_reports: dict = field(default_factory=dict)

    @property
    def eig_bounds(self):
        lo, hi = self.model.ellipticity_bounds()
        return (min(lo, 0.5), max(hi, self.model.Lambda))


def solve_first_corrector(
    model: LagrangianModel,
    p,
    resolution: int = 8,
    tol: float = DEFAULT_NONLINEAR_TOL,
    cg_rtol: float = DEFAULT_CG_RTOL,
    max_iterations: int = 40,
) -> CorrectorSet:
    """Solve the periodic nonlinear cell problem at mean slope p.

    The cell spans one full period of the coefficient (extent cells,
    ``resolution`` grid cells per coefficient cell) and the returned
    corrector has mean-zero gradient by construction.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (model.dim,):
        raise ModelError(
            f"homogenize.solve_first_corrector: slope must have shape "
            f"({model.dim},), got {p.shape}"
        )
    if resolution < 2:
        raise ModelError("homogenize.solve_first_corrector: resolution must be >= 2")
    extent = model.coeff.extent
    grid = F.Grid(
        dim=model.dim,
        n=extent * resolution,
        side_length=extent * model.eps,
        boundary=F.PERIODIC,
    )
    phi, report = solve_nonlinear(
        model, grid, slope=p, tol=tol, cg_rtol=cg_rtol, max_iterations=max_iterations
    )
    base = F.gradient(phi).vectors + p
    bary = F.element_barycenters(grid)
    return CorrectorSet(
        model=model,
        p=p,
        grid=grid,
        phi=phi,
        report=report,
        base_gradient=base,
        a=model.hessian(base, bary),
        cg_rtol=cg_rtol,
    )


def _direction_key(h):
    return tuple(float(x) for x in np.asarray(h, dtype=float))


def corrector_ladder(cset: CorrectorSet, h, upto: int):
    """Solve (or fetch) the linearized correctors psi^(1)..psi^(upto).

    Returns the list of ScalarFields; results are cached per direction so
    polarization sweeps reuse every ladder they have already built.
    """
    if upto < 1:
        raise ModelError("homogenize.corrector_ladder: ladder depth must be >= 1")
    if upto > cset.model.N + 1:
        raise ModelError(
            f"homogenize.corrector_ladder: depth {upto} needs derivative order "
            f"{upto + 1}; the model is configured with N={cset.model.N}"
        )
    h = np.asarray(h, dtype=float)
    key = _direction_key(h)
    ladder = cset.ladders.setdefault(key, [])
    grid = cset.grid
    while len(ladder) < upto:
        m = len(ladder) + 1
        if m == 1:
            rhs = F.ElementVectorField(
                grid, np.einsum("ecd,d->ec", cset.a, h)
            )
        else:
            rhs = _ladder_forcing(cset, m, h, ladder)
        psi, rep = solve_linear_divform(
            grid,
            cset.a,
            rhs_flux=rhs,
            cg_rtol=cset.cg_rtol,
            eig_bounds=cset.eig_bounds,
        )
        ladder.append(psi)
        cset.ladder_reports[(key, m)] = rep
    return ladder[:upto]


def _ladder_directions(cset, h, ladder, count):
    """Direction fields h + grad psi^(1), grad psi^(2), ... for forcing."""
    grid = cset.grid
    dirs = [
        F.ElementVectorField(grid, F.gradient(ladder[0]).vectors + h)
    ]
    for j in range(1, count):
        dirs.append(F.gradient(ladder[j]))
    return dirs


def _ladder_forcing(cset, m, h, ladder):
    base = F.ElementVectorField(cset.grid, cset.base_gradient)
    dirs = _ladder_directions(cset, h, ladder, m - 1)
    return assemble_Fm(cset.model, m, base, dirs)


def solve_linearized_corrector(cset: CorrectorSet, m: int, h):
    """The order-m linearized corrector in direction h (ladder solved)."""
    ladder = corrector_ladder(cset, h, m)
    return ladder[m - 1]


def homogenized_gradient(cset: CorrectorSet) -> np.ndarray:
    """Cell average of the corrected flux: the effective flux at p."""
    bary = F.element_barycenters(cset.grid)
    return cset.model.d_p(cset.base_gradient, bary).mean(axis=0)


def homogenized_energy(cset: CorrectorSet) -> float:
    """Cell average of the energy density along the corrector state."""
    bary = F.element_barycenters(cset.grid)
    return float(cset.model.energy_density(cset.base_gradient, bary).mean())


def homogenized_flux_diagonal(cset: CorrectorSet, k: int, h) -> np.ndarray:
    """Diagonal slice of the order-k effective derivative tensor.

    Returns the vector contracting the order-k tensor with k-1 copies of
    h: for k = 2 the averaged corrected direction flux a (h + grad
    psi^(1)), for larger k the averaged ladder flux a grad psi^(k-1)
    plus the matching forcing evaluated along the ladder.
    """
    if k < 2:
        raise ModelError("homogenize.homogenized_flux_diagonal: order must be >= 2")
    h = np.asarray(h, dtype=float)
    ladder = corrector_ladder(cset, h, k - 1)
    if k == 2:
        direction = F.gradient(ladder[0]).vectors + h
        return np.einsum("ecd,ed->ec", cset.a, direction).mean(axis=0)
    flux = np.einsum(
        "ecd,ed->ec", cset.a, F.gradient(ladder[k - 2]).vectors
    )
    forcing = _ladder_forcing(cset, k - 1, h, ladder)
    return (flux + forcing.vectors).mean(axis=0)


def homogenized_derivative_tensor(cset: CorrectorSet, k: int):
    """Full symmetric order-k derivative tensor of the effective energy.

    Polarizes the diagonal flux slices over the k-1 direction slots; the
    leading (component) slot is then symmetrized against them.  Returns
    ``(SymTensor, asymmetry)`` where the second entry reports how far the
    raw polarized array was from fully symmetric -- a measure of solver
    and quadrature error, since the exact tensor is symmetric.
    """
    if k < 2:
        raise ModelError(
            "homogenize.homogenized_derivative_tensor: order must be >= 2"
        )
    dim = cset.model.dim
    basis = np.eye(dim)
    raw = np.zeros((dim,) * k)
    for idx in canonical_indices(dim, k - 1):
        vec = polarize(
            lambda v: homogenized_flux_diagonal(cset, k, v),
            [basis[i] for i in idx],
        )
        for perm in set(itertools.permutations(idx)):
            raw[(slice(None),) + perm] = vec
    tensor = SymTensor.from_full(raw, symmetrize=True)
    asymmetry = float(np.abs(raw - tensor.full()).max())
    return tensor, asymmetry


@dataclass(frozen=True)
class HomogenizedExpansion:
    """Taylor data of the effective energy at a fixed slope.

    ``tensors[k]`` is the order-k symmetric derivative tensor (k >= 2);
    ``gradient`` the effective flux, ``value`` the effective energy.
    Diagnostics record the polarization asymmetry per order, the spread
    across seeds when averaging, and the order-2 eigenvalue range
    checked against the model's ellipticity interval.
    """

    p: np.ndarray
    value: float
    gradient: np.ndarray
    tensors: dict
    asymmetry: dict
    seed_spread: dict
    seeds: tuple
    eig_range: tuple
    spd_ok: bool

    def derivative(self, k: int) -> np.ndarray:
        """Full ndarray of the order-k derivative (k = 1 is the flux)."""
        if k == 1:
            return self.gradient.copy()
        if k not in self.tensors:
            raise KeyError(f"expansion holds orders {sorted(self.tensors)}, not {k}")
        return self.tensors[k].full()

    @property
    def max_order(self) -> int:
        return max(self.tensors, default=1)

    def taylor_value(self, q) -> float:
        """Taylor polynomial of the effective energy evaluated at q."""
        dq = np.asarray(q, dtype=float) - self.p
        total = self.value + float(self.gradient @ dq)
        for k, t in sorted(self.tensors.items()):
            total += t.apply(*([dq] * k)) / math.factorial(k)
        return total

    def taylor_flux(self, q) -> np.ndarray:
        """Taylor polynomial of the effective flux evaluated at q."""
        dq = np.asarray(q, dtype=float) - self.p
        total = self.gradient.copy()
        for k, t in sorted(self.tensors.items()):
            total = total + t.apply(*([dq] * (k - 1))) / math.factorial(k - 1)
        return total


def taylor_expansion(
    model: LagrangianModel,
    p,
    orders: int,
    resolution: int = 8,
    seeds=None,
    tol: float = DEFAULT_NONLINEAR_TOL,
    cg_rtol: float = DEFAULT_CG_RTOL,
) -> HomogenizedExpansion:
    """Effective energy, flux and derivative tensors up to ``orders``.

    ``seeds`` may list coefficient seeds to average over (sampling a
    fresh realization per seed); None keeps the model's own realization.
    """
    if not 2 <= orders <= model.N + 2:
        raise ModelError(
            f"homogenize.taylor_expansion: orders must lie in 2..{model.N + 2} "
            f"for N={model.N}, got {orders}"
        )
    p = np.asarray(p, dtype=float)
    models = []
    if seeds is None:
        models.append(model)
        seed_list = (model.coeff.seed,)
    else:
        seed_list = tuple(int(s) for s in seeds)
        if not seed_list:
            raise ModelError("homogenize.taylor_expansion: seeds may not be empty")
        for s in seed_list:
            coeff = sample_coefficient_field(
                model.coeff.kind,
                model.dim,
                model.coeff.extent,
                s,
                mollifier_width=model.coeff.mollifier_width,
                constant_value=model.coeff.constant_value,
            )
            models.append(replace(model, coeff=coeff))

    values, grads = [], []
    per_order = {k: [] for k in range(2, orders + 1)}
    asym = {k: 0.0 for k in range(2, orders + 1)}
    for mdl in models:
        cset = solve_first_corrector(
            mdl, p, resolution=resolution, tol=tol, cg_rtol=cg_rtol
        )
        values.append(homogenized_energy(cset))
        grads.append(homogenized_gradient(cset))
        for k in range(2, orders + 1):
            tensor, a_k = homogenized_derivative_tensor(cset, k)
            per_order[k].append(tensor)
            asym[k] = max(asym[k], a_k)

    gradient = np.mean(grads, axis=0)
    tensors, spread = {}, {}
    for k, ts in per_order.items():
        stack = np.stack([t.entries for t in ts])
        mean = stack.mean(axis=0)
        tensors[k] = SymTensor(model.dim, k, mean)
        spread[k] = float(np.abs(stack - mean).max())
    spread[1] = float(np.abs(np.stack(grads) - gradient).max())

    eigs = np.linalg.eigvalsh(tensors[2].full())
    lo, hi = model.ellipticity_bounds()
    spd_ok = bool(eigs.min() >= lo - 1e-8 and eigs.max() <= hi + 1e-8)
    return HomogenizedExpansion(
        p=p,
        value=float(np.mean(values)),
        gradient=gradient,
        tensors=tensors,
        asymmetry=asym,
        seed_spread=spread,
        seeds=seed_list,
        eig_range=(float(eigs.min()), float(eigs.max())),
        spd_ok=spd_ok,
    )


# ---------------------------------------------------------------------------
# independent one-dimensional reference


def _invert_flux_1d(model, c, xs, rtol):
    """Per-point slopes s(x) with D_pL(s(x), x) = c, by guarded Newton.

    The flux law is strictly increasing in s with slope inside the
    model's ellipticity interval, so s is bracketed by [c/hi, c/lo]
    stretched to either side of zero.
    """
    lo, hi = model.ellipticity_bounds()
    pts = xs[:, None]
    span = abs(c) / lo + 1.0
    lo_s = np.full(xs.shape, -span)
    hi_s = np.full(xs.shape, span)
    s = np.full(xs.shape, c / ((lo + hi) / 2))
    for _ in range(100):
        flux = model.d_p(s[:, None], pts)[:, 0] - c
        deriv = model.hessian(s[:, None], pts)[:, 0, 0]
        hi_s = np.where(flux > 0, np.minimum(hi_s, s), hi_s)
        lo_s = np.where(flux < 0, np.maximum(lo_s, s), lo_s)
        step = flux / deriv
        s_new = s - step
        outside = (s_new <= lo_s) | (s_new >= hi_s)
        s_new = np.where(outside, 0.5 * (lo_s + hi_s), s_new)
        if np.abs(s_new - s).max() <= rtol * (1.0 + np.abs(s_new).max()):
            s = s_new
            break
        s = s_new
    return s


def oracle_flux_1d(
    model: LagrangianModel,
    p: float,
    quadrature_points: int = 2048,
    rtol: float = 1e-10,
) -> float:
    """Effective flux in one dimension by flux-law inversion.

    The exact one-dimensional cell solution carries a spatially constant
    flux c with mean slope p; this solves mean_x (D_pL(., x))^{-1}(c) = p
    for c by bisection with midpoint quadrature, never touching the
    finite-element machinery.
    """
    if model.dim != 1:
        raise ModelError("homogenize.oracle_flux_1d: one-dimensional models only")
    period = model.coeff.extent * model.eps
    xs = (np.arange(quadrature_points) + 0.5) * (period / quadrature_points)

    def mean_slope(c):
        return _invert_flux_1d(model, c, xs, rtol).mean()

    lo, hi = model.ellipticity_bounds()
    c_lo = min(lo * p, hi * p) - 1.0
    c_hi = max(lo * p, hi * p) + 1.0
    for _ in range(60):
        if mean_slope(c_lo) - p <= 0.0 <= mean_slope(c_hi) - p:
            break
        width = c_hi - c_lo
        c_lo -= width
        c_hi += width
    else:
        raise SolverError("homogenize.oracle_flux_1d: failed to bracket the flux")
    for _ in range(200):
        c_mid = 0.5 * (c_lo + c_hi)
        f_mid = mean_slope(c_mid) - p
        if f_mid > 0.0:
            c_hi = c_mid
        else:
            c_lo = c_mid
        if c_hi - c_lo <= rtol * (1.0 + abs(c_mid)):
            break
    return 0.5 * (c_lo + c_hi)


def oracle_d2_1d(
    model: LagrangianModel,
    p: float,
    quadrature_points: int = 2048,
    rtol: float = 1e-10,
) -> float:
    """Second derivative of the 1d effective energy, by the same route.

    Differentiating the mean-slope relation in p shows the effective
    stiffness is the harmonic mean of the pointwise stiffness along the
    exact cell profile.
    """
    c = oracle_flux_1d(model, p, quadrature_points, rtol)
    period = model.coeff.extent * model.eps
    xs = (np.arange(quadrature_points) + 0.5) * (period / quadrature_points)
    s = _invert_flux_1d(model, c, xs, rtol)
    stiff = model.hessian(s[:, None], xs[:, None])[:, 0, 0]
    return float(1.0 / np.mean(1.0 / stiff))
