"""Grid, gradient, weak-residual and norm checks for the field core."""

import math

import numpy as np
import pytest

from nlhomog import fields as F


def random_vectors(grid, seed):
    rng = np.random.default_rng(seed)
    return F.ElementVectorField(grid, rng.normal(size=(grid.n_elements, grid.dim)))


# ---------------------------------------------------------------------------
# Grid bookkeeping


def test_counts_dirichlet_2d():
    g = F.Grid(2, 8, 1.0, F.DIRICHLET)
    assert g.n_nodes == 81
    assert g.n_elements == 128
    assert F.element_nodes(g).shape == (128, 3)
    assert np.isclose(F.element_volume(g) * g.n_elements, g.volume)


def test_counts_periodic():
    g = F.Grid(2, 8, 1.0, F.PERIODIC)
    assert g.n_nodes == 64
    g1 = F.Grid(1, 8, 2.0, F.PERIODIC)
    assert g1.n_nodes == 8
    assert g1.n_elements == 8


def test_grid_validation():
    with pytest.raises(ValueError):
        F.Grid(3, 4, 1.0)
    with pytest.raises(ValueError):
        F.Grid(2, 0, 1.0)
    with pytest.raises(ValueError):
        F.Grid(2, 4, 1.0, "robin")


def test_field_shape_and_finiteness():
    g = F.Grid(1, 4, 1.0)
    with pytest.raises(F.FieldShapeError):
        F.ScalarField(g, np.zeros(3))
    bad = np.zeros(5)
    bad[2] = np.nan
    with pytest.raises(F.FieldShapeError):
        F.ScalarField(g, bad)
    with pytest.raises(F.FieldShapeError):
        F.ElementVectorField(g, np.zeros((4, 2)))


def test_fields_immutable():
    g = F.Grid(1, 4, 1.0)
    f = F.ScalarField(g, np.zeros(5))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


# ---------------------------------------------------------------------------
# Gradient: exact on affine data, O(h^2) at midpoints for smooth data


@pytest.mark.parametrize("dim", [1, 2])
def test_gradient_exact_for_affine(dim):
    g = F.Grid(dim, 8, 1.0)
    slope = np.arange(1, dim + 1, dtype=float)
    f = F.affine_field(g, slope, offset=0.7)
    gr = F.gradient(f)
    assert np.abs(gr.vectors - slope).max() < 1e-13


def test_gradient_linearity():
    g = F.Grid(2, 6, 1.5)
    rng = np.random.default_rng(3)
    f1 = F.ScalarField(g, rng.normal(size=g.n_nodes))
    f2 = F.ScalarField(g, rng.normal(size=g.n_nodes))
    lhs = F.gradient(F.ScalarField(g, 2.0 * f1.values - 3.0 * f2.values))
    rhs = 2.0 * F.gradient(f1).vectors - 3.0 * F.gradient(f2).vectors
    assert np.abs(lhs.vectors - rhs).max() < 1e-12


def test_gradient_matches_analytic_derivative_1d():
    # A P1 gradient of sampled sin(2 pi x) is a centered difference about the
    # element midpoint, so it matches the true derivative there to O(h^2).
    errs = []
    for n in (64, 128):
        g = F.Grid(1, n, 1.0)
        f = F.field_from_function(g, lambda x: np.sin(2 * np.pi * x[:, 0]))
        mid = F.element_barycenters(g)[:, 0]
        exact = 2 * np.pi * np.cos(2 * np.pi * mid)
        errs.append(np.abs(F.gradient(f).vectors[:, 0] - exact).max())
        assert errs[-1] <= (2 * np.pi) ** 3 * g.spacing**2 / 24 * 1.01
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


# ---------------------------------------------------------------------------
# Weak divergence-form residual


@pytest.mark.parametrize("dim", [1, 2])
def test_residual_of_constant_flux_vanishes(dim):
    # A constant flux is weakly divergence-free against interior hats.
    g = F.Grid(dim, 6, 1.0)
    q = F.ElementVectorField(g, np.tile(np.arange(1.0, dim + 1.0), (g.n_elements, 1)))
    r = F.divergence_form_residual(q)
    assert np.abs(r.values).max() < 1e-13


def test_residual_periodic_mean_zero():
    g = F.Grid(2, 6, 3.0, F.PERIODIC)
    r = F.divergence_form_residual(random_vectors(g, 11))
    assert abs(r.values.sum()) < 1e-13


def test_residual_is_load_vector():
    # r_i must equal sum_e |e| q . grad chi_i: cross-check through the
    # stiffness identity r = K f when q = grad f.
    g = F.Grid(2, 5, 1.0)
    rng = np.random.default_rng(8)
    f = F.ScalarField(g, rng.normal(size=g.n_nodes))
    q = F.gradient(f)
    r = F.divergence_form_residual(q)
    K = F.assemble_stiffness(g)
    expect = K @ f.values
    interior = ~F.boundary_node_mask(g)
    assert np.abs(r.values[interior] - expect[interior]).max() < 1e-12


# ---------------------------------------------------------------------------
# L^q norms


def test_norm_rejects_q_below_one():
    g = F.Grid(1, 4, 1.0)
    with pytest.raises(ValueError):
        F.norm_Lq_volume_normalized(random_vectors(g, 0), 0.5)


def test_norm_constant_field():
    g = F.Grid(2, 4, 2.0)
    v = F.ElementVectorField(g, np.full((g.n_elements, 2), [3.0, 4.0]))
    assert F.norm_Lq_volume_normalized(v, 2) == pytest.approx(5.0, abs=1e-14)
    assert F.norm_Lq_volume_normalized(v, 7) == pytest.approx(5.0, abs=1e-13)


def test_norm_q4_matches_quadrature_sum_oracle():
    g = F.Grid(2, 6, 1.5)
    v = random_vectors(g, 21)
    # direct quadrature-sum oracle: explicit loop over elements
    vol = F.element_volume(g)
    acc = 0.0
    for e in range(g.n_elements):
        acc += vol * np.sqrt(v.vectors[e] @ v.vectors[e]) ** 4
    expect = (acc / g.volume) ** 0.25
    got = F.norm_Lq_volume_normalized(v, 4)
    assert got == pytest.approx(expect, rel=1e-14)


def test_norm_homogeneity_and_triangle_inequality():
    g = F.Grid(2, 5, 1.0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(g.n_elements, 2))
        b = rng.normal(size=(g.n_elements, 2))
        c = float(rng.normal())
        for q in (1, 2, 3.5):
            na = F.norm_Lq_volume_normalized(F.ElementVectorField(g, a), q)
            nb = F.norm_Lq_volume_normalized(F.ElementVectorField(g, b), q)
            nca = F.norm_Lq_volume_normalized(F.ElementVectorField(g, c * a), q)
            nab = F.norm_Lq_volume_normalized(F.ElementVectorField(g, a + b), q)
            assert nca == pytest.approx(abs(c) * na, rel=1e-12)
            assert nab <= na + nb + 1e-12


def test_norm_on_subregion():
    g = F.Grid(1, 8, 1.0)
    vals = np.zeros((8, 1))
    vals[:4] = 2.0  # left half
    v = F.ElementVectorField(g, vals)
    left = F.BoxRegion((0.0,), (0.5,))
    right = F.BoxRegion((0.5,), (1.0,))
    assert F.norm_Lq_volume_normalized(v, 2, left) == pytest.approx(2.0)
    assert F.norm_Lq_volume_normalized(v, 2, right) == pytest.approx(0.0, abs=1e-15)


# ---------------------------------------------------------------------------
# H^-1 norm


def test_hminus1_matches_dense_oracle_1d():
    # Hand-built 4-segment oracle: hat loads b_j = (g_{j-1} + g_j) h / 2 on
    # the interior nodes, tridiagonal Laplacian (2, -1)/h, dense solve.
    g = F.Grid(1, 4, 1.0)
    rng = np.random.default_rng(20260823)
    vals = rng.normal(size=(4, 1))
    v = F.ElementVectorField(g, vals)
    h = 0.25
    b = np.array([vals[e, 0] + vals[e + 1, 0] for e in range(3)]) * h / 2.0
    K = (np.diag([2.0, 2.0, 2.0]) + np.diag([-1.0, -1.0], 1) + np.diag([-1.0, -1.0], -1)) / h
    phi = np.linalg.solve(K, b)
    assert F.norm_Hminus1(v) == pytest.approx(math.sqrt(b @ phi), rel=1e-10)


def test_hminus1_matches_dense_oracle_2d():
    # Dense interior solve with loads accumulated by an explicit loop
    # over elements and their vertices (one third of the area each).
    g = F.Grid(2, 2, 1.0)
    rng = np.random.default_rng(4)
    vals = rng.normal(size=(8, 2))
    v = F.ElementVectorField(g, vals)
    conn = F.element_nodes(g)
    vol = F.element_volume(g)
    total = 0.0
    K = F.assemble_stiffness(g).toarray()
    free = np.flatnonzero(~F.boundary_node_mask(g))
    for i in range(2):
        b = np.zeros(g.n_nodes)
        for e in range(g.n_elements):
            for j in conn[e]:
                b[j] += vals[e, i] * vol / 3.0
        phi = np.linalg.solve(K[np.ix_(free, free)], b[free])
        total += b[free] @ phi
    assert F.norm_Hminus1(v) == pytest.approx(math.sqrt(total), rel=1e-9)


def test_hminus1_scaling_linearity():
    g = F.Grid(2, 6, 1.0, F.PERIODIC)
    v = random_vectors(g, 5)
    base = F.norm_Hminus1(v)
    for c in (2.0, -4.0, 0.5):
        scaled = F.ElementVectorField(g, c * v.vectors)
        assert F.norm_Hminus1(scaled) == pytest.approx(abs(c) * base, rel=1e-12)


@pytest.mark.parametrize("boundary", [F.DIRICHLET, F.PERIODIC])
def test_hminus1_bounded_by_l2(boundary):
    # Energy argument: ||grad phi|| <= ||g|| in the same volume-normalized
    # norms, so the ratio never exceeds 1.  Checked over 100 random fields.
    g = F.Grid(2, 6, 1.0, boundary)
    worst = 0.0
    for seed in range(100):
        v = random_vectors(g, seed)
        ratio = F.norm_Hminus1(v) / F.norm_Lq_volume_normalized(v, 2)
        worst = max(worst, ratio)
    assert worst <= 1.0 + 1e-12


def test_hminus1_damps_fine_scale_oscillations():
    # A +-1 square wave over two-element blocks has unit L^2 norm at
    # every resolution, but its negative-order norm must shrink in
    # proportion to the oscillation period.
    norms = {}
    for n in (16, 64):
        g = F.Grid(1, n, 1.0)
        vals = np.where((np.arange(n) // 2) % 2 == 0, 1.0, -1.0)[:, None]
        norms[n] = F.norm_Hminus1(F.ElementVectorField(g, vals))
    assert norms[16] / norms[64] == pytest.approx(4.0, rel=0.05)


def test_hminus1_single_mode_matches_analytic_value():
    # -phi'' = sin(pi x) on (0,1) gives phi = sin(pi x)/pi^2, so the norm
    # is ||cos(pi x)||/pi = 1/(sqrt(2) pi) in the volume-normalized norm.
    g = F.Grid(1, 64, 1.0)
    x = F.element_barycenters(g)[:, 0]
    v = F.ElementVectorField(g, np.sin(np.pi * x)[:, None])
    assert F.norm_Hminus1(v) == pytest.approx(1.0 / (math.sqrt(2.0) * math.pi), rel=1e-3)


def test_cg_failure_reports_achieved_residual():
    g = F.Grid(2, 6, 1.0)
    v = random_vectors(g, 2)
    with pytest.raises(F.CgError) as err:
        F.norm_Hminus1(v, rtol=1e-30)
    assert err.value.achieved > 0
    assert "achieved relative residual" in str(err.value)


# ---------------------------------------------------------------------------
# Sub-box extraction


def test_subbox_restriction_roundtrip():
    parent = F.Grid(2, 8, 2.0)
    sub, node_map, elem_map = F.subbox_grid(parent, (2, 1), 4)
    assert sub.n == 4 and sub.spacing == parent.spacing
    f = F.field_from_function(parent, lambda x: np.sin(x[:, 0] + 2 * x[:, 1]))
    fs = F.restrict_scalar(f, sub, node_map)
    # node positions shift by the offset; values must agree pointwise
    shift = np.array([2, 1]) * parent.spacing
    expect = np.sin(
        (F.node_coordinates(sub) + shift)[:, 0]
        + 2 * (F.node_coordinates(sub) + shift)[:, 1]
    )
    assert np.abs(fs.values - expect).max() < 1e-13
    # element restriction commutes with taking gradients
    gs = F.restrict_vectors(F.gradient(f), sub, elem_map)
    assert np.abs(gs.vectors - F.gradient(fs).vectors).max() < 1e-13


def test_subbox_bounds_checked():
    parent = F.Grid(2, 8, 1.0)
    with pytest.raises(ValueError):
        F.subbox_grid(parent, (6, 0), 4)
    with pytest.raises(ValueError):
        F.subbox_grid(F.Grid(2, 8, 1.0, F.PERIODIC), (0, 0), 4)
