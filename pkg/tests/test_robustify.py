from fractions import Fraction

import numpy as np
import pytest

from trialmiss.data import AdjustmentSpec, build_counts, counts_from_cells
from trialmiss.estimators import EstimateReport, StratumDetail, delta_ate, phi
from trialmiss.identification import rho
from trialmiss.robustify import (
    BoundInterval,
    GapPolicy,
    ate_bounds,
    positivity_check,
    resolve_stratum,
    rho_bounds,
    sign_stability,
    smooth_value,
    smoothed_rho,
    unidentifiability_warning,
)
from trialmiss.simulation import CovariateSpec, ScenarioSpec, generate


def test_rho_bounds_hand_value():
    counts = counts_from_cells([[[3, 3, 4], [2, 2, 1]]])
    b = rho_bounds(counts, 0, 1)
    assert (b.lb, b.ub, b.midpoint) == (Fraction(2, 5), Fraction(3, 5), Fraction(1, 2))


def test_rho_bounds_degenerate_cases():
    full = rho_bounds(counts_from_cells([[[1, 1, 0], [1, 3, 0]]]), 0, 1)
    assert full.lb == full.ub == Fraction(3, 4)
    vacuous = rho_bounds(counts_from_cells([[[1, 1, 0], [0, 0, 5]]]), 0, 1)
    assert (vacuous.lb, vacuous.ub) == (0, 1)
    with pytest.raises(ValueError, match="empty"):
        rho_bounds(counts_from_cells([[[1, 1, 0], [0, 0, 0]]]), 0, 1)


def test_rho_bounds_width_identity(rng):
    for _ in range(300):
        counts = counts_from_cells(rng.integers(0, 9, size=(1, 2, 3)) + np.array([0, 0, 1]))
        for t in (0, 1):
            b = rho_bounds(counts, 0, t)
            fail, succ, miss = counts.arm(0, t)
            assert b.width == Fraction(miss, fail + succ + miss)
            assert 0 <= b.lb <= b.ub <= 1


def test_ate_arm_chain_hand_value():
    counts = counts_from_cells([[[5, 3, 2], [4, 4, 2]]])
    b = ate_bounds(counts, 0, chain="arm")
    assert (b.lb, b.ub) == (Fraction(-1, 10), Fraction(3, 10))


def test_ate_bounds_without_missingness_are_a_point():
    counts = counts_from_cells([[[3, 1, 0], [1, 3, 0]]])
    for chain in ("arm", "delta"):
        b = ate_bounds(counts, 0, chain=chain)
        assert b.lb == b.ub == Fraction(1, 2)


def test_ate_bounds_contain_truth():
    spec = ScenarioSpec(mechanism="sa_internal", n=4000, seed=9, a_o=1.5, a_s=-1.0,
                        covariates=(CovariateSpec("x1", (0.5, 0.5)),))
    data = generate(spec)
    counts = build_counts(data, AdjustmentSpec(("x1", "s")))
    full = build_counts(data.unmasked(), AdjustmentSpec(("x1", "s")))
    for k in range(counts.n_strata):
        truth = sum(Fraction(full.cell(k, t, 1), full.n_t(t)) * sign for t, sign in ((1, 1), (0, -1)))
        assert ate_bounds(counts, k, chain="arm").contains(truth)
        for t in (0, 1):
            assert rho_bounds(counts, k, t).contains(Fraction(full.cell(k, t, 1), full.n_tw(k, t)))


def test_positivity_classes():
    assert positivity_check(counts_from_cells([[[0, 3, 1], [0, 2, 0]]]), 0) == "lack_of_data"
    assert positivity_check(counts_from_cells([[[2, 1, 1], [2, 1, 3]]]), 0) == "equal_impact"
    assert positivity_check(counts_from_cells([[[3, 1, 0], [1, 3, 0]]]), 0) == "ok"


def test_all_treated_special_case_is_equal_impact():
    # P(T|O*)=P(T|not O*)=1 within the stratum
    assert positivity_check(counts_from_cells([[[0, 0, 2], [2, 3, 0]]]), 0) == "equal_impact"


def test_smoothing_hand_value_and_limits():
    assert smooth_value(0.9, 0.5, 0.75) == pytest.approx(0.7)
    assert smooth_value(Fraction(9, 10), Fraction(1, 2), Fraction(3, 4)) == Fraction(7, 10)
    assert smooth_value(0.9, 0.5, 1) == 0.9
    assert smooth_value(0.9, 0.5, 0.5) == 0.5


def test_smoothed_rho_falls_back_to_midpoint():
    counts = counts_from_cells([[[2, 1, 1], [2, 1, 3]]])
    assert smoothed_rho(counts, 0, 1) == rho_bounds(counts, 0, 1).midpoint


def test_sign_stability_methods_agree_on_large_strata(rng):
    for _ in range(10):
        cells = rng.integers(50, 150, size=(1, 2, 3))
        counts = counts_from_cells(cells)
        analytic = sign_stability(counts, 0, 1, "analytic")
        boot = sign_stability(counts, 0, 1, "bootstrap", 2000, rng)
        assert abs(analytic - boot) < 0.1


def test_sign_stability_null_difference():
    counts = counts_from_cells([[[2, 1, 0], [2, 1, 0]]])
    assert sign_stability(counts, 0, 1) == 0.5
    with pytest.raises(ValueError):
        sign_stability(counts_from_cells([[[3, 1, 0], [1, 3, 0]]]), 0, 1, "bootstrap")


def test_clip_idempotent():
    b = BoundInterval(0.2, 0.4)
    for v in (-1.0, 0.1, 0.3, 0.5):
        assert b.clip(b.clip(v)) == b.clip(v)


def test_policy_validation():
    with pytest.raises(ValueError):
        GapPolicy(mode="nope")
    with pytest.raises(ValueError):
        GapPolicy(resamples=0)
    with pytest.raises(ValueError):
        GapPolicy(fallback="zero")


def test_resolution_modes():
    # stratum 0 undefined (equal impact), stratum 1 well defined
    counts = counts_from_cells([[[2, 1, 1], [2, 1, 3]], [[3, 1, 0], [1, 3, 0]]])
    mid = resolve_stratum(counts, 0, 1, GapPolicy())
    assert mid.from_bounds and mid.value == mid.bounds.midpoint
    skip = phi(counts, 1, GapPolicy(mode="skip_renormalize"))
    assert skip.point == pytest.approx(0.75)
    report = phi(counts, 1, GapPolicy())
    assert report.flags["equal_impact"]
    assert report.lower <= report.point <= report.upper


def test_clip_flags_out_of_range_values():
    # rho for arm 1 exceeds its upper bound here
    counts = counts_from_cells([[[5, 1, 0], [1, 4, 4]]])
    raw = rho(counts, 0, 1)
    b = rho_bounds(counts, 0, 1)
    assert not b.lb <= raw <= b.ub
    clipped = phi(counts, 1, GapPolicy(clip=True))
    assert clipped.flags["clipped_to_bounds"]
    assert clipped.point == pytest.approx(float(b.clip(raw)))
    unclipped = phi(counts, 1, GapPolicy(clip=False))
    assert unclipped.point == pytest.approx(raw)


def test_smooth_policy_reports_weights():
    counts = counts_from_cells([[[30, 20, 5], [20, 30, 5]], [[3, 1, 0], [1, 3, 0]]])
    rep = phi(counts, 1, GapPolicy(mode="smooth"))
    assert rep.flags["smoothed"] is not None and 0.5 <= rep.flags["smoothed"] <= 1
    ate = delta_ate(counts, GapPolicy(mode="smooth"))
    assert ate.defined


def _report(flags):
    details = [StratumDetail((i,), 0.5, 1 / len(flags), f) for i, f in enumerate(flags)]
    return EstimateReport("P(O|T=1)", "mnar", 0.5, strata=details, association_z=3.0)


def test_unidentifiability_warning():
    assert unidentifiability_warning(_report(["equal_impact"] * 3))
    assert unidentifiability_warning(_report(["ok"] * 3)) is None
    null = _report(["ok"] * 3)
    null.association_z = 0.4
    assert unidentifiability_warning(null)


def test_warning_frequent_without_treatment_effect():
    fired = 0
    for seed in range(200):
        spec = ScenarioSpec(mechanism="oa_internal", n=500, seed=seed, effect_t_on_o=0.0, effect_t_on_s=0.0,
                            a_o=1.5, a_x=0.3, covariates=(CovariateSpec("x1", (0.5, 0.5)),))
        counts = build_counts(generate(spec), AdjustmentSpec(("x1",)))
        fired += unidentifiability_warning(phi(counts, 1)) is not None
    assert fired > 100
