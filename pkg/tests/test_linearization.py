"""Forcing-term combinatorics and the nested linearization hierarchy."""

import math

import numpy as np
import pytest

from _oracles import fm_polynomial_oracle
from nlhomog import fields as F
from nlhomog.lagrangian import (
    CHECKERBOARD,
    CONSTANT,
    MOLLIFIED_CHECKERBOARD,
    QUADRATIC,
    CoefficientField,
    LagrangianModel,
    ModelError,
    sample_coefficient_field,
)
from nlhomog.linearization import (
    assemble_Fm,
    combined_residual_tolerance,
    compositions,
    evaluate_fbar,
    gradient_power_split,
    hierarchy_identity_residual,
    linearization_error_field,
    solve_hierarchy,
)
from nlhomog.solver import SolverError, solve_linear_divform


def constant_model(dim, c_max=0.72, N=3):
    coeff = CoefficientField(CONSTANT, dim=dim, extent=1, seed=0)
    return LagrangianModel(dim=dim, coeff=coeff, c_max=c_max, N=N)


def rough_model(dim, c_max=0.8, N=3, seed=7, extent=5, width=0.2):
    coeff = sample_coefficient_field(
        MOLLIFIED_CHECKERBOARD, dim, extent, seed, mollifier_width=width
    )
    return LagrangianModel(dim=dim, coeff=coeff, c_max=c_max, N=N)


def fields_for(model, n_points, rng, n_dirs):
    """Random gradient/direction fields on a throwaway grid of that size."""
    dim = model.dim
    n = n_points if dim == 1 else 2
    grid = F.Grid(dim=dim, n=n, side_length=1.0, boundary=F.DIRICHLET)
    count = grid.n_elements
    X = rng.uniform(0.0, 4.0, size=(count, dim))
    gu = F.ElementVectorField(grid, rng.standard_normal((count, dim)))
    hs = [
        F.ElementVectorField(grid, rng.standard_normal((count, dim)))
        for _ in range(n_dirs)
    ]
    return grid, X, gu, hs


def test_compositions_enumeration():
    assert compositions(4, 2) == ((1, 3), (2, 2), (3, 1))
    assert compositions(3, 3) == ((1, 1, 1),)
    assert compositions(2, 3) == ()
    for m in range(1, 7):
        for j in range(1, m + 1):
            assert len(compositions(m, j)) == math.comb(m - 1, j - 1)


def test_order_one_is_identically_zero():
    rng = np.random.default_rng(0)
    model = rough_model(2)
    _, X, gu, _ = fields_for(model, 4, rng, 0)
    out = assemble_Fm(model, 1, gu, [], points=X)
    assert np.all(out.vectors == 0.0)


def test_hand_derived_values_in_one_dimension():
    # With a constant weight c the derivative ladder is elementary:
    # D3 = c/2 sin p, D4 = c/2 cos p, D5 = -c/2 sin p, and expanding the
    # flux through third order in the perturbation parameter gives
    #   F2 = D3 h1^2
    #   F3 = 3 D3 h1 h2 + D4 h1^3
    #   F4 = 4 D3 h1 h3 + 3 D3 h2^2 + 6 D4 h1^2 h2 + D5 h1^4.
    c = 0.72
    model = constant_model(1, c_max=c)
    p, h1, h2, h3 = 0.4, 1.3, -0.7, 0.9
    d3 = c * 0.5 * math.sin(p)
    d4 = c * 0.5 * math.cos(p)
    d5 = -c * 0.5 * math.sin(p)

    grid = F.Grid(dim=1, n=4, side_length=1.0, boundary=F.DIRICHLET)
    ones = np.ones((grid.n_elements, 1))
    gu = F.ElementVectorField(grid, p * ones)
    dirs = [F.ElementVectorField(grid, v * ones) for v in (h1, h2, h3)]

    f2 = assemble_Fm(model, 2, gu, dirs[:1]).vectors[0, 0]
    f3 = assemble_Fm(model, 3, gu, dirs[:2]).vectors[0, 0]
    f4 = assemble_Fm(model, 4, gu, dirs[:3]).vectors[0, 0]
    assert f2 == pytest.approx(d3 * h1**2, rel=1e-13)
    assert f3 == pytest.approx(3 * d3 * h1 * h2 + d4 * h1**3, rel=1e-13)
    assert f4 == pytest.approx(
        4 * d3 * h1 * h3 + 3 * d3 * h2**2 + 6 * d4 * h1**2 * h2 + d5 * h1**4,
        rel=1e-13,
    )


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("m", [2, 3, 4])
def test_matches_polynomial_oracle(dim, m):
    rng = np.random.default_rng(100 * dim + m)
    model = rough_model(dim)
    _, X, gu, hs = fields_for(model, 6, rng, m - 1)
    got = assemble_Fm(model, m, gu, hs, points=X).vectors

    def deriv(k):
        return model.derivative_tensor(k, gu.vectors, X)

    want = fm_polynomial_oracle(deriv, m, [h.vectors for h in hs])
    scale = np.abs(want).max() + 1.0
    assert np.abs(got - want).max() <= 1e-12 * scale


@pytest.mark.parametrize("m", [2, 3, 4])
def test_homogeneity_with_weighted_directions(m):
    # Scaling h_i by t^i multiplies the whole forcing by t^m.
    rng = np.random.default_rng(m)
    model = rough_model(2)
    _, X, gu, hs = fields_for(model, 5, rng, m - 1)
    base = assemble_Fm(model, m, gu, hs, points=X).vectors
    for t in (0.5, 2.0):
        scaled = [
            F.ElementVectorField(h.grid, t ** (i + 1) * h.vectors)
            for i, h in enumerate(hs)
        ]
        got = assemble_Fm(model, m, gu, scaled, points=X).vectors
        assert np.abs(got - t**m * base).max() <= 1e-12 * np.abs(base).max() * t**m


@pytest.mark.parametrize("m", [2, 3, 4])
def test_growth_bound_with_mixed_scales(m):
    # |F_m| <= C sum_i |h_i|^(m/i) with C computable from tensor norms:
    # contracting with unit vectors is controlled by the Frobenius norm,
    # and the product over a composition is dominated via the weighted
    # arithmetic-geometric inequality by j times the exponent sum.
    rng = np.random.default_rng(42 + m)
    model = rough_model(2)
    _, X, gu, hs0 = fields_for(model, 6, rng, m - 1)

    C = 0.0
    for j in range(2, m + 1):
        T = model.derivative_tensor(j + 1, gu.vectors, X)
        frob = np.sqrt((T**2).sum(axis=tuple(range(1, T.ndim)))).max()
        comp_weight = sum(
            1.0 / np.prod([math.factorial(i) for i in comp])
            for comp in compositions(m, j)
        )
        C += math.factorial(m) / math.factorial(j) * frob * comp_weight * j

    for scale_pattern in ([1.0] * (m - 1), [100.0, 0.01, 5.0][: m - 1]):
        hs = [
            F.ElementVectorField(h.grid, s * h.vectors)
            for h, s in zip(hs0, scale_pattern)
        ]
        got = assemble_Fm(model, m, gu, hs, points=X).vectors
        mags = np.linalg.norm(got, axis=1)
        bound = sum(
            np.linalg.norm(h.vectors, axis=1) ** (m / (i + 1))
            for i, h in enumerate(hs)
        )
        assert np.all(mags <= C * bound + 1e-12)


@pytest.mark.parametrize("m", [3, 4])
def test_top_direction_enters_linearly(m):
    # For m >= 3 the highest direction appears only through the single
    # leading pairing m * T3 . (h_{m-1}, h_1).
    rng = np.random.default_rng(m * 11)
    model = rough_model(2)
    _, X, gu, hs = fields_for(model, 5, rng, m - 1)
    alt_top = F.ElementVectorField(
        hs[-1].grid, rng.standard_normal(hs[-1].vectors.shape)
    )
    f_a = assemble_Fm(model, m, gu, hs, points=X).vectors
    f_b = assemble_Fm(model, m, gu, hs[:-1] + [alt_top], points=X).vectors
    T3 = model.derivative_tensor(3, gu.vectors, X)
    delta = hs[-1].vectors - alt_top.vectors
    want = m * np.einsum("eabc,eb,ec->ea", T3, delta, hs[0].vectors)
    scale = np.abs(want).max() + 1.0
    assert np.abs((f_a - f_b) - want).max() <= 1e-12 * scale


@pytest.mark.parametrize("m", [2, 3])
def test_composition_with_smooth_reparametrization(m):
    # Feeding the t-derivatives of a composed path through the forcing at
    # order m+1 equals the p-derivative of the order-m forcing along the
    # path plus one extra pairing of the third derivative tensor with the
    # first and top path derivatives.
    rng = np.random.default_rng(5 + m)
    model = constant_model(2, c_max=0.8)
    X = np.zeros((1, 2))
    p = rng.standard_normal(2)
    h = rng.standard_normal(2)
    A = rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 2, 2))
    B = 0.5 * (B + B.transpose(0, 2, 1))

    def gmap(q):
        return A @ q + 0.5 * np.einsum("abc,b,c->a", B, q, q)

    def path_derivs(s, count):
        q = p + s * h
        out = [A @ h + np.einsum("abc,b,c->a", B, q, h)]
        if count >= 2:
            out.append(np.einsum("abc,b,c->a", B, h, h))
        out.extend(np.zeros(2) for _ in range(count - len(out)))
        return out

    grid = F.Grid(dim=2, n=1, side_length=1.0, boundary=F.DIRICHLET)

    def forcing(order, s):
        zs = path_derivs(s, order - 1)
        gu = F.ElementVectorField(
            grid, np.repeat(gmap(p + s * h)[None, :], grid.n_elements, axis=0)
        )
        dirs = [
            F.ElementVectorField(grid, np.repeat(z[None, :], grid.n_elements, axis=0))
            for z in zs
        ]
        pts = np.repeat(X, grid.n_elements, axis=0)
        return assemble_Fm(model, order, gu, dirs, points=pts).vectors[0]

    lhs = forcing(m + 1, 0.0)

    def fd(step):
        return (forcing(m, step) - forcing(m, -step)) / (2 * step)

    step = 1e-2
    deriv = (4.0 * fd(step / 2) - fd(step)) / 3.0

    T3 = model.derivative_tensor(3, gmap(p)[None, :], X)[0]
    z = path_derivs(0.0, m)
    extra = np.einsum("abc,b,c->a", T3, z[0], z[m - 1])
    rhs = deriv + extra
    assert np.abs(lhs - rhs).max() <= 1e-6 * (np.abs(lhs).max() + 1.0)


def test_rejections():
    rng = np.random.default_rng(1)
    model = rough_model(2, N=2)
    _, X, gu, hs = fields_for(model, 4, rng, 3)
    with pytest.raises(ModelError):
        assemble_Fm(model, 4, gu, hs[:3], points=X)  # needs N >= 3
    with pytest.raises(ValueError):
        assemble_Fm(model, 3, gu, hs[:1], points=X)  # wrong direction count
    with pytest.raises(ValueError):
        assemble_Fm(model, 0, gu, [], points=X)
    other = F.Grid(dim=2, n=3, side_length=1.0, boundary=F.DIRICHLET)
    stray = F.ElementVectorField(other, np.zeros((other.n_elements, 2)))
    with pytest.raises(ValueError):
        assemble_Fm(model, 2, gu, [stray])
    with pytest.raises(ValueError):
        assemble_Fm(model, 2, gu, hs[:1], points=X[:2])


def test_constant_tensor_route_matches_field_route():
    rng = np.random.default_rng(9)
    model = constant_model(2, c_max=0.8)
    grid = F.Grid(dim=2, n=2, side_length=1.0, boundary=F.DIRICHLET)
    X = np.zeros((grid.n_elements, 2))
    p = rng.standard_normal(2)
    derivs = {
        k: model.derivative_tensor(k, p[None, :], X[:1])[0] for k in (3, 4, 5)
    }
    for m in (2, 3, 4):
        hs_vec = [rng.standard_normal(2) for _ in range(m - 1)]
        gu = F.ElementVectorField(grid, np.repeat(p[None, :], grid.n_elements, 0))
        dirs = [
            F.ElementVectorField(grid, np.repeat(h[None, :], grid.n_elements, 0))
            for h in hs_vec
        ]
        field = assemble_Fm(model, m, gu, dirs, points=X).vectors[0]
        flat = evaluate_fbar(derivs, m, hs_vec)
        batched = evaluate_fbar(
            derivs, m, [np.repeat(h[None, :], 3, 0) for h in hs_vec]
        )
        assert np.abs(flat - field).max() <= 1e-12 * (np.abs(field).max() + 1)
        assert batched.shape == (3, 2)
        assert np.abs(batched - flat[None, :]).max() <= 1e-14


# ---------------------------------------------------------------------------
# nested hierarchy


def affine_boundary(grid, slope, offset=0.0):
    x = F.node_coordinates(grid)
    return F.ScalarField(grid, x @ np.asarray(slope) + offset)


@pytest.fixture(scope="module")
def perturbed_hierarchy():
    model = rough_model(2, c_max=0.8, N=3, extent=3, width=0.15)
    grid = F.Grid(dim=2, n=16, side_length=3.0, boundary=F.DIRICHLET)
    p = np.array([0.4, -0.2])
    h = np.array([0.5, 0.3])
    t = 0.05
    return solve_hierarchy(
        model,
        grid,
        affine_boundary(grid, p),
        affine_boundary(grid, p + t * h),
        order=3,
        tol=1e-11,
        cg_rtol=1e-12,
    )


def test_hierarchy_geometry_and_traces(perturbed_hierarchy):
    sol = perturbed_hierarchy
    ns = [lev.grid.n for lev in sol.levels]
    assert ns == [16, 12, 8, 4]
    base = sol.base_grid
    for k, lev in enumerate(sol.levels[1:], start=1):
        assert np.all(np.diff(lev.node_map) > 0)
        assert np.all(np.diff(lev.element_map) > 0)
        # physical inset of k * 2 cells on a 3/16 spacing
        coords = F.node_coordinates(base)[lev.node_map]
        inset = k * 2 * base.spacing
        assert coords.min() == pytest.approx(inset, abs=1e-12)
        assert coords.max() == pytest.approx(base.side_length - inset, abs=1e-12)
        # boundary values of w_k are k! times the previous defect's trace,
        # so the new defect vanishes on its own boundary
        mask = F.boundary_node_mask(lev.grid)
        prev = sol.levels[k - 1]
        pos = np.searchsorted(prev.node_map, lev.node_map)
        expect = math.factorial(k) * sol.xi[k - 1].values[pos]
        assert np.array_equal(sol.w[k - 1].values[mask], expect[mask])
        floor = 1e-14 * max(np.abs(sol.xi[k - 1].values).max(), 1e-30)
        assert np.abs(sol.xi[k].values[mask]).max() <= floor


def test_hierarchy_defect_composition(perturbed_hierarchy):
    sol = perturbed_hierarchy
    base = sol.levels[0]
    xi0 = sol.v.values - sol.u.values
    for k in range(1, sol.order + 1):
        lev = sol.levels[k]
        pos = np.searchsorted(base.node_map, lev.node_map)
        acc = xi0[pos].copy()
        for j in range(1, k + 1):
            posj = np.searchsorted(sol.levels[j].node_map, lev.node_map)
            acc -= sol.w[j - 1].values[posj] / math.factorial(j)
        assert np.array_equal(acc, sol.xi[k].values)


def test_hierarchy_defects_shrink(perturbed_hierarchy):
    sol = perturbed_hierarchy
    norms = [
        F.norm_Lq_volume_normalized(F.gradient(x), 2.0) for x in sol.xi
    ]
    for a, b in zip(norms, norms[1:]):
        assert b < 0.5 * a


def test_error_field_first_order_formula(perturbed_hierarchy):
    sol = perturbed_hierarchy
    lev = sol.levels[1]
    emap = lev.element_map
    bary = F.element_barycenters(sol.base_grid)[emap]
    gu = F.gradient(sol.u).vectors[emap]
    gv = F.gradient(sol.v).vectors[emap]
    want = (
        sol.model.d_p(gv, bary)
        - sol.model.d_p(gu, bary)
        - np.einsum("ecd,ed->ec", sol.model.hessian(gu, bary), gv - gu)
    )
    got = linearization_error_field(sol, 1).vectors
    assert np.abs(got - want).max() <= 1e-14


def test_weak_identity_within_solver_budget(perturbed_hierarchy):
    sol = perturbed_hierarchy
    for n in range(1, sol.order + 1):
        residual = hierarchy_identity_residual(sol, n)
        budget = combined_residual_tolerance(sol, n)
        assert residual <= 10.0 * budget


def test_gradient_power_split_reconstructs_powers(perturbed_hierarchy):
    sol = perturbed_hierarchy
    for j in (2, 3, 4):
        for m in range(j - 1, sol.order + 1):
            S, E = gradient_power_split(sol, j, m)
            lev = sol.levels[m]
            gxi0 = (
                F.gradient(sol.v).vectors - F.gradient(sol.u).vectors
            )[lev.element_map]
            power = np.ones((gxi0.shape[0],))
            for _ in range(j):
                power = np.einsum("e...,ed->e...d", power, gxi0)
            scale = np.abs(power).max() + 1e-30
            assert np.abs(S + E - power).max() <= 1e-12 * max(scale, 1.0)


def test_quadratic_model_collapses_hierarchy():
    coeff = sample_coefficient_field(CHECKERBOARD, 2, 4, 3)
    model = LagrangianModel(dim=2, coeff=coeff, g_kind=QUADRATIC, c_max=2.0, N=3)
    grid = F.Grid(dim=2, n=16, side_length=4.0, boundary=F.DIRICHLET)
    sol = solve_hierarchy(
        model,
        grid,
        affine_boundary(grid, [0.3, -0.1]),
        affine_boundary(grid, [0.45, 0.05]),
        order=3,
        tol=1e-11,
        cg_rtol=1e-13,
    )
    # All forcing terms vanish, w_1 absorbs the whole difference, and the
    # higher fields plus every defect past the first sit at solver floor.
    for k in (2, 3):
        wk = F.norm_Lq_volume_normalized(F.gradient(sol.w[k - 1]), 2.0)
        assert wk <= 1e-8
    xi1 = F.norm_Lq_volume_normalized(F.gradient(sol.xi[1]), 2.0)
    assert xi1 <= 1e-8
    e2 = linearization_error_field(sol, 2).vectors
    assert np.abs(e2).max() <= 1e-10


def test_explicit_boundary_and_failure_reporting():
    model = rough_model(2, extent=3)
    grid = F.Grid(dim=2, n=16, side_length=3.0, boundary=F.DIRICHLET)
    bu = affine_boundary(grid, [0.2, 0.1])
    bv = affine_boundary(grid, [0.25, 0.1])
    sol = solve_hierarchy(
        model, grid, bu, bv, order=2,
        boundary_w=[None, np.zeros(grid.n_nodes)],
    )
    lev = sol.levels[2]
    mask = F.boundary_node_mask(lev.grid)
    assert np.all(sol.w[1].values[mask] == 0.0)

    with pytest.raises(SolverError, match="solve 'u'"):
        solve_hierarchy(model, grid, bu, bv, order=1, max_iterations=0)
    with pytest.raises(SolverError, match="nested margins"):
        solve_hierarchy(model, F.Grid(2, 4, 1.0, F.DIRICHLET), bu, bv, order=2)
    with pytest.raises(ModelError):
        solve_hierarchy(model, grid, bu, bv, order=5)
