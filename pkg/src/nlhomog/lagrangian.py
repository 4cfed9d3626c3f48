"""Analytic Lagrangian families L(p, x) = |p|^2/2 + c(x) g(p).

The nonlinearity g is fixed per model:

* ``cosprod`` (default): g(p) = (1/2) prod_i cos(p_i).  The scale makes
  sup |D^2 g| = 1/2 in dimensions 1 and 2, so with 0 <= c(x) <= c_max < 1
  every Hessian eigenvalue of L stays inside [1 - c_max/2, 1 + c_max/2],
  a subset of [1/2, 3/2].  All p-derivatives exist in closed form:
  differentiating cos shifts its phase by pi/2 per order.
* ``quadratic``: g(p) = |p|^2 / 2.  Then L = (1 + c(x)) |p|^2 / 2 is the
  heterogeneous quadratic (linear-equation) degenerate family; c only
  improves convexity, so amplitudes up to Lambda - 1 are allowed.  Third
  and higher p-derivatives vanish identically.

The spatial coefficient c(x) = c_max * field(x / eps) is a stationary
random field with unit cells: piecewise constant per integer cell
(checkerboard), its mollification by a tensor-product hat kernel, a
deterministic equal-volume two-phase laminate in x_1, or a constant.
Randomness is drawn from numpy's counter-based Philox generator keyed by
the user seed, one value per cell in C order of the cell array, so a seed
pins the entire field bitwise.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field

import numpy as np

CONSTANT = "constant"
CHECKERBOARD = "checkerboard"
MOLLIFIED_CHECKERBOARD = "mollified_checkerboard"
LAMINATE_1D = "laminate1d"
COEFFICIENT_KINDS = (CONSTANT, CHECKERBOARD, MOLLIFIED_CHECKERBOARD, LAMINATE_1D)

COSPROD = "cosprod"
QUADRATIC = "quadratic"
G_KINDS = (COSPROD, QUADRATIC)

MAX_LINEARIZATION_ORDER = 4


class ModelError(ValueError):
    """Invalid Lagrangian or coefficient-field construction/usage."""


# ---------------------------------------------------------------------------
# Coefficient fields


def _hat_cdf(y, w):
    """CDF of the width-w hat kernel (w - |t|)/w^2 on [-w, w]."""
    y = np.clip(y, -w, w)
    neg = (y + w) ** 2 / (2 * w * w)
    pos = 1.0 - (w - y) ** 2 / (2 * w * w)
    return np.where(y < 0, neg, pos)


def _cell_weight(t, w):
    """Convolution of the indicator of [0, 1) with the hat kernel, at t."""
    return _hat_cdf(t, w) - _hat_cdf(t - 1.0, w)


def _half_cell_weight(t, w):
    """Convolution of the indicator of [1/2, 1) with the hat kernel, at t."""
    return _hat_cdf(t - 0.5, w) - _hat_cdf(t - 1.0, w)


@dataclass(frozen=True)
class CoefficientField:
    """Stationary unit-cell coefficient realization with values in [0, 1].

    ``cells`` holds one uniform draw per integer cell for the checkerboard
    kinds (shape ``(extent,) * dim``, indexed by cell coordinates); the
    evaluation wraps periodically with period ``extent``.  The laminate and
    constant kinds carry no cells.
    """

    kind: str
    dim: int
    extent: int
    seed: int
    mollifier_width: float = 0.0
    constant_value: float = 1.0
    cells: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in COEFFICIENT_KINDS:
            raise ModelError(f"unknown coefficient kind {self.kind!r}")
        if self.dim not in (1, 2):
            raise ModelError("coefficient fields support dim 1 or 2")
        if not 0.0 <= self.mollifier_width <= 0.49:
            raise ModelError("mollifier width must lie in [0, 0.49]")
        if self.kind == MOLLIFIED_CHECKERBOARD and self.mollifier_width == 0.0:
            raise ModelError("mollified checkerboard needs a positive width")
        if self.kind in (CHECKERBOARD, MOLLIFIED_CHECKERBOARD):
            if self.cells is None:
                raise ModelError(f"{self.kind} requires sampled cell values")
            c = np.ascontiguousarray(self.cells, dtype=np.float64)
            if c.shape != (self.extent,) * self.dim:
                raise ModelError(
                    f"cell array must have shape {(self.extent,) * self.dim}"
                )
            if c.min() < 0.0 or c.max() > 1.0:
                raise ModelError("cell values must lie in [0, 1]")
            c.setflags(write=False)
            object.__setattr__(self, "cells", c)
        if self.kind == CONSTANT and not 0.0 <= self.constant_value <= 1.0:
            raise ModelError("constant coefficient value must lie in [0, 1]")

    @property
    def dependence_range(self) -> float:
        """Points at least this far apart see disjoint cell values."""
        if self.kind == CONSTANT:
            return 0.0
        return 1.0 + 2.0 * self.mollifier_width

    def eval(self, points) -> np.ndarray:
        """Raw coefficient in [0, 1] at unit-cell coordinates (..., dim)."""
        y = np.asarray(points, dtype=float)
        if y.shape[-1] != self.dim:
            raise ModelError(f"points must have {self.dim} components")
        if self.kind == CONSTANT:
            return np.full(y.shape[:-1], self.constant_value)
        if self.kind == LAMINATE_1D:
            s = np.mod(y[..., 0], 1.0)
            w = self.mollifier_width
            if w == 0.0:
                return np.where(s < 0.5, 0.0, 1.0)
            return _half_cell_weight(s, w) + _half_cell_weight(s + 1.0, w)
        if self.kind == CHECKERBOARD:
            z = np.floor(y).astype(np.int64)
            idx = tuple(np.mod(z[..., j], self.extent) for j in range(self.dim))
            return self.cells[idx]
        # mollified checkerboard: at most two cells contribute per axis
        w = self.mollifier_width
        upper = np.floor(y + w).astype(np.int64)
        out = np.zeros(y.shape[:-1])
        for offsets in itertools.product((0, -1), repeat=self.dim):
            z = upper + np.array(offsets)
            weight = np.ones(y.shape[:-1])
            for j in range(self.dim):
                weight = weight * _cell_weight(y[..., j] - z[..., j], w)
            idx = tuple(np.mod(z[..., j], self.extent) for j in range(self.dim))
            out += weight * self.cells[idx]
        return out


def sample_coefficient_field(
    kind: str,
    dim: int,
    extent: int,
    seed: int,
    mollifier_width: float = 0.0,
    constant_value: float = 1.0,
) -> CoefficientField:
    """Draw a coefficient realization for an ``extent``-cell periodic box.

    The checkerboard kinds draw ``extent**dim`` iid uniforms from a Philox
    stream keyed by ``seed``; the laminate and constant kinds are
    deterministic and ignore the seed.
    """
    if extent < 1 or extent != int(extent):
        raise ModelError("field extent must be a positive integer cell count")
    cells = None
    if kind in (CHECKERBOARD, MOLLIFIED_CHECKERBOARD):
        gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        cells = gen.random((int(extent),) * dim)
    return CoefficientField(
        kind=kind,
        dim=dim,
        extent=int(extent),
        seed=int(seed),
        mollifier_width=mollifier_width,
        constant_value=constant_value,
        cells=cells,
    )


def cells_for_domain(side_length: float, eps: float = 1.0) -> int:
    """Number of coefficient cells spanned by a domain side, which must be whole."""
    ratio = side_length / eps
    extent = round(ratio)
    if abs(ratio - extent) > 1e-9 * max(1.0, abs(ratio)) or extent < 1:
        raise ModelError(
            f"domain side {side_length} is not an integer number of "
            f"coefficient cells at scale eps={eps}"
        )
    return int(extent)


# ---------------------------------------------------------------------------
# Lagrangian models


def _cos_derivative(P, m):
    """m-th derivative of cos, elementwise: the exact 4-cycle of cos/sin."""
    c, s = np.cos(P), np.sin(P)
    return (c, -s, -c, s)[m % 4]


def _cosprod_derivative(P, k):
    """D^k of (1/2) prod_i cos(p_i); returns shape P.shape[:-1] + (d,)*k."""
    d = P.shape[-1]
    cos_table = [_cos_derivative(P, m) for m in range(k + 1)]
    out = np.zeros(P.shape[:-1] + (d,) * k)
    for idx in itertools.product(range(d), repeat=k):
        counts = np.bincount(np.asarray(idx, dtype=int), minlength=d)
        term = 0.5 * np.ones(P.shape[:-1])
        for j in range(d):
            term = term * cos_table[counts[j]][..., j]
        out[(...,) + idx] = term
    return out


def _cosprod_value(P):
    return 0.5 * np.prod(np.cos(P), axis=-1)


@dataclass(frozen=True)
class LagrangianModel:
    """Uniformly convex Lagrangian L(p, x) = |p|^2/2 + c(x) g(p).

    ``N`` is the depth of the linearization hierarchy the model supports
    (derivatives up to order N + 2 are available in closed form);
    ``eps`` rescales the coefficient, c(x) = c_max * field(x / eps).
    """

    dim: int
    coeff: CoefficientField
    g_kind: str = COSPROD
    c_max: float = 0.5
    N: int = 3
    Lambda: float = 4.0
    eps: float = 1.0

    def __post_init__(self):
        if self.g_kind not in G_KINDS:
            raise ModelError(f"unknown nonlinearity kind {self.g_kind!r}")
        if self.dim not in (1, 2):
            raise ModelError("models support dim 1 or 2")
        if self.coeff.dim != self.dim:
            raise ModelError("coefficient field dimension mismatch")
        if not 1 <= self.N <= MAX_LINEARIZATION_ORDER:
            raise ModelError(
                f"linearization depth N must be 1..{MAX_LINEARIZATION_ORDER}"
            )
        if self.c_max < 0:
            raise ModelError("c_max must be nonnegative")
        if self.g_kind == COSPROD and not self.c_max < 1.0:
            raise ModelError("cosprod models require c_max < 1")
        if self.g_kind == QUADRATIC and self.c_max > self.Lambda - 1.0:
            raise ModelError("quadratic models require c_max <= Lambda - 1")
        if self.eps <= 0:
            raise ModelError("eps must be positive")

    # -- family constants ---------------------------------------------------

    @property
    def sup_d2g(self) -> float:
        return 0.5 if self.g_kind == COSPROD else 1.0

    @property
    def max_derivative_order(self) -> int:
        return self.N + 2

    def ellipticity_bounds(self):
        """Guaranteed interval containing every Hessian eigenvalue."""
        lo = 1.0 - self.c_max * self.sup_d2g if self.g_kind == COSPROD else 1.0
        hi = 1.0 + self.c_max * self.sup_d2g
        return lo, hi

    def with_eps(self, eps: float) -> "LagrangianModel":
        return dataclasses.replace(self, eps=eps)

    # -- evaluation ---------------------------------------------------------

    def coefficient(self, X) -> np.ndarray:
        """c(x) = c_max * field(x / eps) at physical points (..., dim)."""
        return self.c_max * self.coeff.eval(np.asarray(X, dtype=float) / self.eps)

    def energy_density(self, P, X) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        g = _cosprod_value(P) if self.g_kind == COSPROD else 0.5 * np.sum(P * P, -1)
        return 0.5 * np.sum(P * P, axis=-1) + self.coefficient(X) * g

    def derivative_tensor(self, k: int, P, X) -> np.ndarray:
        """Exact k-th p-derivative tensor of L, shape (..., dim^k).

        k must lie in 1..N+2; the result is symmetric in all k slots.
        """
        if not 1 <= k <= self.max_derivative_order:
            raise ModelError(
                f"derivative order {k} outside 1..{self.max_derivative_order}"
            )
        P = np.asarray(P, dtype=float)
        if P.shape[-1] != self.dim:
            raise ModelError(f"p must have {self.dim} components")
        c = self.coefficient(X)
        d = self.dim
        if self.g_kind == QUADRATIC:
            if k == 1:
                return (1.0 + c)[..., None] * P
            if k == 2:
                return (1.0 + c)[..., None, None] * np.eye(d)
            return np.zeros(P.shape[:-1] + (d,) * k)
        g_part = _cosprod_derivative(P, k)
        out = c.reshape(c.shape + (1,) * k) * g_part
        if k == 1:
            out = out + P
        elif k == 2:
            out = out + np.eye(d)
        return out

    def d_p(self, P, X) -> np.ndarray:
        """D_p L(p, x): the flux map."""
        return self.derivative_tensor(1, P, X)

    def hessian(self, P, X) -> np.ndarray:
        """D^2_p L(p, x): the linearized coefficient."""
        return self.derivative_tensor(2, P, X)


def eval_derivative(model: LagrangianModel, k: int, p, x) -> np.ndarray:
    """Single-point derivative tensor D^k_p L(p, x), shape (dim,)*k."""
    p = np.asarray(p, dtype=float).reshape(1, model.dim)
    x = np.asarray(x, dtype=float).reshape(1, model.dim)
    return model.derivative_tensor(k, p, x)[0]


# ---------------------------------------------------------------------------
# Assumption audit


def audit_model(model: LagrangianModel, n_samples: int = 1000, seed: int = 0) -> dict:
    """Sampled audit of smoothness, convexity and zero-point bounds.

    Draws random (p, x) pairs, computes Hessian eigenvalues and derivative
    magnitudes, and checks them against the family's guaranteed interval and
    the global ellipticity window [1/2, Lambda].  Returns a report dict with
    an overall ``ok`` flag; callers decide whether to raise.
    """
    rng = np.random.default_rng(seed)
    P = rng.uniform(-3.0, 3.0, size=(n_samples, model.dim))
    X = rng.uniform(0.0, model.coeff.extent * model.eps, size=(n_samples, model.dim))
    H = model.hessian(P, X)
    eigs = np.linalg.eigvalsh(H)
    lo, hi = model.ellipticity_bounds()
    tol = 1e-10
    in_family = bool(eigs.min() >= lo - tol and eigs.max() <= hi + tol)
    in_global = bool(eigs.min() >= 0.5 - tol and eigs.max() <= model.Lambda + tol)
    sup_by_order = {}
    for k in range(2, model.max_derivative_order + 1):
        T = model.derivative_tensor(k, P, X)
        flat = T.reshape(n_samples, -1)
        sup_by_order[k] = float(np.abs(flat).max())
    zero = model.d_p(np.zeros_like(P), X)
    m0 = float(np.linalg.norm(zero, axis=-1).max())
    m0_bound = model.c_max * (0.5 if model.g_kind == COSPROD else 0.0)
    report = {
        "samples": n_samples,
        "eig_min": float(eigs.min()),
        "eig_max": float(eigs.max()),
        "family_interval": (lo, hi),
        "global_interval": (0.5, model.Lambda),
        "eigs_in_family_interval": in_family,
        "eigs_in_global_interval": in_global,
        "sup_derivative_by_order": sup_by_order,
        "flux_at_zero_max": m0,
        "flux_at_zero_bound": m0_bound,
        "flux_at_zero_ok": bool(m0 <= m0_bound + tol),
        "coefficient_dependence_range": model.coeff.dependence_range,
    }
    report["ok"] = bool(
        in_family and in_global and report["flux_at_zero_ok"]
    )
    return report
