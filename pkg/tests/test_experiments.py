"""Rate experiments: fits, floors, verdicts, and determinism."""

import json
import math

import numpy as np
import pytest

from nlhomog import fields as F
from nlhomog.lagrangian import (
    CHECKERBOARD,
    CONSTANT,
    LAMINATE_1D,
    MOLLIFIED_CHECKERBOARD,
    QUADRATIC,
    CoefficientField,
    LagrangianModel,
    ModelError,
    sample_coefficient_field,
)
from nlhomog.experiments import (
    ExperimentReport,
    exp_commutation,
    exp_corrector_taylor,
    exp_homogenization_rate,
    exp_linerror_scaling,
    exp_sublinearity_and_lipschitz,
    fit_loglog_slope,
)
from nlhomog.experiments import _assemble_report


def constant_model(dim, c_max=0.8, N=3, g_kind="cosprod"):
    coeff = CoefficientField(CONSTANT, dim=dim, extent=1, seed=0)
    return LagrangianModel(dim=dim, coeff=coeff, g_kind=g_kind, c_max=c_max, N=N)


def laminate_model(dim, extent=1, c_max=3.0, N=3):
    coeff = CoefficientField(LAMINATE_1D, dim=dim, extent=extent, seed=0)
    return LagrangianModel(dim=dim, coeff=coeff, g_kind=QUADRATIC, c_max=c_max, N=N)


def checkerboard_quadratic(dim=2, extent=4, seed=3, c_max=2.0):
    coeff = sample_coefficient_field(CHECKERBOARD, dim, extent, seed)
    return LagrangianModel(dim=dim, coeff=coeff, g_kind=QUADRATIC, c_max=c_max, N=3)


def mollified_model(dim=1, extent=5, seed=9, width=0.2, c_max=0.8):
    coeff = sample_coefficient_field(
        MOLLIFIED_CHECKERBOARD, dim, extent, seed, mollifier_width=width
    )
    return LagrangianModel(dim=dim, coeff=coeff, c_max=c_max, N=3)


# ---------------------------------------------------------------------------
# fitting and report assembly


def test_loglog_fit_recovers_exact_power_law():
    ts = np.array([1.0, 0.5, 0.25, 0.125, 0.0625])
    points = [(t, 3.7 * t**2.5) for t in ts]
    slope, stderr, resid = fit_loglog_slope(points)
    assert slope == pytest.approx(2.5, abs=1e-12)
    assert stderr <= 1e-12
    assert max(abs(r) for r in resid) <= 1e-12


def test_loglog_fit_rejects_bad_input():
    with pytest.raises(ValueError, match="at least 4"):
        fit_loglog_slope([(1.0, 1.0), (0.5, 0.25)])
    with pytest.raises(ValueError, match="positive"):
        fit_loglog_slope([(1.0, 1.0), (0.5, -0.2), (0.25, 0.1), (0.1, 0.01)])
    with pytest.raises(ValueError, match="abscissas"):
        fit_loglog_slope([(1.0, 1.0)] * 4)


def test_report_noisy_fit_is_marked_inconclusive_not_passed():
    # Alternating values give a slope near 2 but a huge standard error;
    # with a narrow declared band that must surface as inconclusive.
    raw = [(t, t**2 * (10.0 if i % 2 else 0.1)) for i, t in
           enumerate((1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125))]
    rep = _assemble_report(
        "probe", "d", raw, [0.0] * len(raw), [0] * len(raw), (1.9, 2.1), 0.0
    )
    assert rep.inconclusive and not rep.passed
    assert any("inconclusive" in n for n in rep.notes)


def test_report_partial_floor_survivors_cannot_be_judged():
    raw = [(1.0, 1.0), (0.5, 0.25), (0.25, 1e-12), (0.125, 1e-12)]
    floors = [1e-9, 1e-9, 1e-9, 1e-9]
    rep = _assemble_report("probe", "d", raw, floors, [0] * 4, (1.8, 2.2), 0.0)
    assert rep.inconclusive and not rep.passed
    assert len(rep.points) == 2 and len(rep.excluded) == 2


def test_report_floor_agreement_threshold_is_enforced():
    raw = [(1.0, 1e-5), (0.5, 1e-5), (0.25, 1e-5), (0.125, 1e-5)]
    floors = [1e-4] * 4
    ok = _assemble_report(
        "probe", "d", raw, floors, [0] * 4, (1.8, 2.2), 0.0, floor_agreement=1e-4
    )
    bad = _assemble_report(
        "probe", "d", raw, floors, [0] * 4, (1.8, 2.2), 0.0, floor_agreement=1e-6
    )
    assert ok.passed and math.isnan(ok.fitted_slope)
    assert not bad.passed


def test_report_round_trips_through_json():
    raw = [(1.0, 1e-12), (0.5, 1e-12), (0.25, 1e-12), (0.125, 1e-12)]
    rep = _assemble_report(
        "probe", "deadbeef", raw, [1e-9] * 4, [7] * 4, (1.8, 2.2), 0.0
    )
    data = json.loads(json.dumps(rep.as_dict()))
    assert data["name"] == "probe"
    assert data["pass"] is True
    assert data["fitted_slope"] is None
    assert data["config_digest"] == "deadbeef"
    assert len(data["excluded"]) == 4


# ---------------------------------------------------------------------------
# commutation of the two derivative routes


def test_commutation_linear_flux_agrees_to_roundoff():
    # Spatially constant quadratic energy: the flux map is linear, so
    # central differences are exact and every step sits at the floor.
    model = constant_model(2, c_max=0.5, g_kind=QUADRATIC)
    [rep] = exp_commutation(model, [0.4, -0.2])
    assert rep.passed and not rep.inconclusive
    assert not rep.points and len(rep.excluded) == 5
    assert all(v <= 1e-9 for _, v, _, _ in rep.excluded)
    assert any("floor" in n for n in rep.notes)


def test_commutation_two_phase_1d_both_routes_give_the_harmonic_mean():
    model = laminate_model(1)
    [rep] = exp_commutation(model, [0.4])
    assert rep.passed
    assert rep.extras["d2_matrix"][0, 0] == pytest.approx(1.6, abs=1e-9)
    for fd in rep.extras["fd_matrices"]:
        assert fd[0, 0] == pytest.approx(1.6, abs=1e-7)


def test_commutation_smooth_flux_shows_second_order_truncation():
    model = constant_model(2, c_max=0.8)
    [rep] = exp_commutation(model, [0.4, -0.2])
    assert rep.passed and not rep.inconclusive
    assert len(rep.points) == 5
    assert rep.fitted_slope == pytest.approx(2.0, abs=0.3)
    assert rep.slope_stderr < 0.1


def test_commutation_reruns_bit_identically():
    model = constant_model(2, c_max=0.8)
    [one] = exp_commutation(model, [0.4, -0.2])
    [two] = exp_commutation(model, [0.4, -0.2])
    assert one.points == two.points
    assert one.fitted_slope == two.fitted_slope
    assert one.config_digest == two.config_digest


def test_commutation_rejects_bad_input():
    model = constant_model(2)
    with pytest.raises(ValueError, match="steps"):
        exp_commutation(model, [0.1, 0.0], steps=(1e-2, -1e-3))


# ---------------------------------------------------------------------------
# linearization-error scaling


def test_linerror_quadratic_energy_first_defect_sits_at_floor():
    model = checkerboard_quadratic()
    grid = F.Grid(dim=2, n=16, side_length=4.0, boundary=F.DIRICHLET)
    [rep] = exp_linerror_scaling(
        model, grid, 1, (0.4, 0.2, 0.1, 0.05, 0.04)
    )
    assert rep.passed
    assert not rep.points and len(rep.excluded) == 5
    assert any("floor" in n for n in rep.notes)


def test_linerror_smooth_energy_slopes_match_orders():
    # Spatially constant smooth energy: the first defect scales like the
    # data distance squared, the second like its cube.
    model = constant_model(2, c_max=0.8)
    grid = F.Grid(dim=2, n=24, side_length=3.0, boundary=F.DIRICHLET)
    reports = exp_linerror_scaling(
        model,
        grid,
        2,
        (0.32, 0.16, 0.08, 0.04, 0.02),
        bands={1: (1.8, 2.2), 2: (2.6, 3.4)},
    )
    assert [r.name for r in reports] == ["linerror[m=1]", "linerror[m=2]"]
    for m, rep in enumerate(reports, start=1):
        assert rep.passed, rep.notes
        assert rep.fitted_slope == pytest.approx(m + 1, abs=0.4)
        assert len(rep.points) + len(rep.excluded) == 5
        assert rep.sample_seeds == (0,) * len(rep.points)


def test_linerror_requires_a_decade_of_sizes():
    model = constant_model(2)
    grid = F.Grid(dim=2, n=16, side_length=2.0, boundary=F.DIRICHLET)
    with pytest.raises(ValueError, match="decade"):
        exp_linerror_scaling(model, grid, 1, (0.4, 0.2, 0.1))


# ---------------------------------------------------------------------------
# corrector Taylor remainders


def test_corrector_taylor_constant_energy_remainders_vanish():
    model = constant_model(2, c_max=0.8)
    reports = exp_corrector_taylor(model, [0.3, 0.1], m_max=2, resolution=4)
    for rep in reports:
        assert rep.passed
        assert not rep.points
        assert all(v == 0.0 for _, v, _, _ in rep.excluded)


def test_corrector_taylor_quadratic_energy_is_exactly_linear_in_slope():
    # Quadratic energy: the slope-to-corrector map is affine, so the
    # first-order remainder is solver noise for every t.
    model = laminate_model(1)
    [rep] = exp_corrector_taylor(model, [0.5], m_max=1)
    assert rep.passed
    assert not rep.points and len(rep.excluded) == 5


def test_corrector_taylor_smooth_model_slopes_match_orders():
    model = mollified_model()
    reports = exp_corrector_taylor(
        model, [0.4], m_max=2, tol=1e-11, cg_rtol=1e-12
    )
    for m, rep in enumerate(reports, start=1):
        assert rep.passed, rep.notes
        assert rep.fitted_slope == pytest.approx(m + 1, abs=0.4)
        assert len(rep.points) >= 4


def test_corrector_taylor_parallel_points_match_serial_bitwise():
    model = mollified_model()
    serial = exp_corrector_taylor(model, [0.4], m_max=1, jobs=1)
    parallel = exp_corrector_taylor(model, [0.4], m_max=1, jobs=2)
    assert serial[0].points == parallel[0].points
    assert serial[0].fitted_slope == parallel[0].fitted_slope


def test_corrector_taylor_rejects_excessive_order():
    model = constant_model(1, N=2)
    with pytest.raises(ModelError, match="m_max"):
        exp_corrector_taylor(model, [0.3], m_max=3)


# ---------------------------------------------------------------------------
# homogenization rate


def test_rate_two_phase_1d_converges_at_first_order():
    model = laminate_model(1)
    reports = exp_homogenization_rate(
        model, [0.5], epsilons=(1 / 2, 1 / 4, 1 / 8, 1 / 16)
    )
    first, second = reports
    assert first.passed, first.notes
    assert first.fitted_slope == pytest.approx(1.0, abs=0.25)
    assert first.extras["monotone"]
    # the quadratic energy has no third derivative: the second linearized
    # equation is trivial on both sides and sits at the floor
    assert second.passed
    assert not second.points


def test_rate_constant_energy_errors_sit_at_floor():
    model = constant_model(1, c_max=0.5, g_kind=QUADRATIC)
    reports = exp_homogenization_rate(
        model, [0.7], epsilons=(1 / 2, 1 / 4, 1 / 8, 1 / 16)
    )
    for rep in reports:
        assert rep.passed
        assert not rep.points
        assert any("floor" in n for n in rep.notes)


def test_rate_rejects_scales_that_do_not_tile_the_box():
    model = laminate_model(1)
    with pytest.raises(ValueError, match="tile"):
        exp_homogenization_rate(model, [0.5], epsilons=(0.3, 0.15, 0.075, 0.0375))


# ---------------------------------------------------------------------------
# sublinearity and gradient boundedness


def test_sublinearity_constant_energy_quantity_vanishes():
    model = constant_model(2, c_max=0.6)
    sub, ratio = exp_sublinearity_and_lipschitz(model, [0.4, -0.1], resolution=16)
    assert sub.passed
    assert not sub.points and all(v == 0.0 for _, v, _, _ in sub.excluded)
    assert ratio.passed
    norm_sq = 0.4**2 + 0.1**2
    for _, v in ratio.points:
        assert v == pytest.approx(norm_sq / (1 + norm_sq), rel=1e-9)


def test_sublinearity_bounded_corrector_decays_at_first_order():
    # The 1D two-phase corrector is bounded and periodic, so the box
    # average of |phi - mean| is r-independent once r spans whole
    # periods, giving the quantity an exact 1/r decay.
    model = laminate_model(1, extent=16)
    sub, ratio = exp_sublinearity_and_lipschitz(
        model, [0.5], sublinearity_band=(-1.2, -0.8)
    )
    assert sub.passed, sub.notes
    assert sub.fitted_slope == pytest.approx(-1.0, abs=0.2)
    assert ratio.passed


def test_sublinearity_checkerboard_trend_is_decreasing():
    model = checkerboard_quadratic(extent=8, seed=5)
    sub, ratio = exp_sublinearity_and_lipschitz(model, [0.6, 0.2], resolution=4)
    assert sub.passed, sub.notes
    assert sub.fitted_slope < 0
    assert ratio.passed
    assert len(sub.points) + len(sub.excluded) == 4


def test_sublinearity_rejects_oversized_boxes():
    model = constant_model(1)
    with pytest.raises(ValueError, match="box sides"):
        exp_sublinearity_and_lipschitz(model, [0.3], rs=(1.0, 2.0, 4.0, 9.0))
