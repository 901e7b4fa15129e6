"""End-to-end acceptance checks.

Each test prints a single ``PASS``/``FAIL`` line (visible even under
output capture) and then asserts. Seeds are fixed at 0 throughout. The
Monte Carlo checks are marked ``slow``; ``pytest -m "not slow"`` skips them.
"""
import itertools
import math
import random
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from trialmiss.dag import builtin_dag, d_separated, d_separated_by_paths, validate_adjustment
from trialmiss.data import AdjustmentSpec, build_counts, counts_from_cells
from trialmiss.estimators import aclor, delta_ate, marginal_log_odds_ratio, phi
from trialmiss.montecarlo import EstimatorConfig, MonteCarloGrid, replicate_rng, run_montecarlo
from trialmiss.presets import preset
from trialmiss.robustify import positivity_check, smooth_value
from trialmiss.simulation import CovariateSpec, ScenarioSpec, generate

from conftest import complete_dataset
from test_dag import VERDICTS, random_dag

ARMS = ("P(O|T=0)", "P(O|T=1)")
PHI_FAMILY = ARMS + ("ATE",)


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


# -- 1. complete-data oracle ------------------------------------------------

def _direct_adjusted_log_or(data):
    total = 0.0
    for k in np.unique(data.x[:, 0]):
        m = data.x[:, 0] == k
        n = [[np.sum(m & (data.t == t) & (data.o_star == o)) for o in (0, 1)] for t in (0, 1)]
        if n[0][0] * n[0][1] * n[1][0] * n[1][1] == 0:
            return None
        total += m.mean() * math.log(n[1][1] * n[0][0] / (n[1][0] * n[0][1]))
    return total


def test_complete_data_oracle(verdict):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    while checked < 100:
        data = complete_dataset(rng, 200, (int(rng.integers(1, 4)),))
        direct = _direct_adjusted_log_or(data)
        if direct is None or data.t.min() == data.t.max():
            continue  # the identity is stated for data with positivity
        counts = build_counts(data, AdjustmentSpec(("x1",)))
        p = [data.o_star[data.t == t].mean() for t in (0, 1)]
        errs = [abs(phi(counts, t).point - p[t]) for t in (0, 1)]
        errs.append(abs(delta_ate(counts).point - (p[1] - p[0])))
        errs.append(abs(aclor(counts).point - direct))
        worst = max(worst, *errs)
        checked += 1
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-12 and elapsed < 5,
            f"{checked} datasets, max deviation {worst:.2e} (tol 1e-12), {elapsed:.2f}s (limit 5s)")


# -- 2. exact distribution-level identity ------------------------------------

def _random_distribution(r):
    """Exact joint over (T, X, S, O, A) with A depending on (O, S, X) only."""
    p = lambda: Fraction(r.randint(1, 29), 30)  # noqa: E731
    pt, px = p(), p()
    ps = {(t, x): p() for t in (0, 1) for x in (0, 1)}
    po = {(t, s, x): p() for t in (0, 1) for s in (0, 1) for x in (0, 1)}
    a_on_s = r.random() < 0.5
    pa = {}
    for o, x in itertools.product((0, 1), repeat=2):
        shared = p()
        for s in (0, 1):
            pa[(o, s, x)] = p() if a_on_s else shared
    # When A ignores S, adjusting for X alone already separates T from A.
    with_s = a_on_s or r.random() < 0.5
    strata = list(itertools.product((0, 1), repeat=2)) if with_s else [(0,), (1,)]
    cells = np.full((len(strata), 2, 3), Fraction(0), dtype=object)
    truth = [Fraction(0), Fraction(0)]
    bern = lambda q, v: q if v else 1 - q  # noqa: E731
    for t, x, s, o in itertools.product((0, 1), repeat=4):
        mass = bern(pt, t) * bern(px, x) * bern(ps[t, x], s) * bern(po[t, s, x], o)
        truth[t] += mass * o / bern(pt, t)
        k = strata.index((x, s) if with_s else (x,))
        cells[k, t, o] += mass * pa[o, s, x]
        cells[k, t, 2] += mass * (1 - pa[o, s, x])
    return counts_from_cells(cells), truth


def test_exact_distribution_identity(verdict):
    r = random.Random(0)
    start = time.perf_counter()
    checked = mismatches = 0
    while checked < 1000:
        counts, truth = _random_distribution(r)
        if any(positivity_check(counts, k) != "ok" for k in range(counts.n_strata)):
            continue
        for t in (0, 1):
            value = phi(counts, t).point
            if not (isinstance(value, Fraction) and value == truth[t]):
                mismatches += 1
        checked += 1
    elapsed = time.perf_counter() - start
    verdict(2, mismatches == 0 and elapsed < 30,
            f"{checked} exact distributions, {mismatches} inexact arms, {elapsed:.1f}s (limit 30s)")


# -- 3. MAR estimator ---------------------------------------------------------

MAR_SCENARIO = ScenarioSpec(
    mechanism="mar", n=20000,
    covariates=(CovariateSpec("x1", (0.5, 0.5)), CovariateSpec("x2", (0.3, 0.4, 0.3))),
    s_intercept=-0.5, effect_t_on_s=0.5, s_x=0.5, s_u=1.0,
    o_intercept=-0.5, effect_t_on_o=1.0, effect_s_on_o=2.0, o_x=0.3, o_u=1.0,
    a_intercept=1.5, a_s=-2.5, a_x=0.3,
)


@pytest.mark.slow
def test_mar_estimator_recovers(verdict):
    grid = MonteCarloGrid(MAR_SCENARIO, (20000,), (1.0,), EstimatorConfig(("naive", "mar")))
    start = time.perf_counter()
    result = run_montecarlo(grid, 200, seed=0)
    elapsed = time.perf_counter() - start
    parts, ok = [], elapsed < 120
    for estimand in ARMS:
        mar = result.get(estimator="mar", estimand=estimand)["mean_abs_bias"]
        naive = result.get(estimator="naive", estimand=estimand)["mean_abs_bias"]
        ok &= mar < 0.01 and naive >= 3 * mar
        parts.append(f"{estimand} mar {mar:.4f} naive {naive:.4f} ({naive / mar:.1f}x)")
    verdict(3, ok, "; ".join(parts) + f"; {elapsed:.0f}s (limit 120s)")


# -- 4-6. preset replications -------------------------------------------------

@pytest.fixture(scope="module")
def preset_runs():
    runs = {}
    for name in ("paper-internal", "paper-external"):
        start = time.perf_counter()
        runs[name] = (run_montecarlo(preset(name), 200, seed=0), time.perf_counter() - start)
    return runs


def _mab(result, **where):
    return result.get(**where)["mean_abs_bias"]


@pytest.mark.slow
def test_internal_replication(verdict, preset_runs):
    result, elapsed = preset_runs["paper-internal"]
    grid = preset("paper-internal")
    # (a) bias non-increasing in effect size at each n
    bad_a = []
    for n, est, estimand in itertools.product(grid.n_values, ("mnar", "smoothed"), PHI_FAMILY):
        seq = [_mab(result, n=n, effect=e, estimator=est, estimand=estimand) for e in grid.effects]
        if any(b > a for a, b in zip(seq, seq[1:])):
            bad_a.append((n, est, estimand))
    # (b) smoothed interval no wider than the unsmoothed one
    units = list(itertools.product(grid.n_values, grid.effects, PHI_FAMILY))
    narrower = sum(
        result.get(n=n, effect=e, estimator="smoothed", estimand=m)["ci_width"]
        <= result.get(n=n, effect=e, estimator="mnar", estimand=m)["ci_width"]
        for n, e, m in units)
    share = narrower / len(units)
    # (c) naive at least twice as biased in the strongest-effect cells
    top = max(grid.effects)
    ratios = [_mab(result, n=n, effect=top, estimator="naive", estimand=m)
              / _mab(result, n=n, effect=top, estimator="mnar", estimand=m)
              for n in grid.n_values for m in PHI_FAMILY]
    ok = not bad_a and share >= 0.8 and min(ratios) >= 2 and elapsed < 900
    verdict(4, ok, f"(a) {len(bad_a)} non-monotone series {bad_a}; (b) smoothed CI narrower in "
                   f"{narrower}/{len(units)} = {share:.0%}; (c) min naive/mnar ratio at effect {top} "
                   f"{min(ratios):.1f}; {elapsed:.0f}s (limit 900s)")


@pytest.mark.slow
def test_external_replication(verdict, preset_runs):
    result, elapsed = preset_runs["paper-external"]
    grid = preset("paper-external")
    worse = [(n, e, m) for n in grid.n_values if n >= 5000 for e in grid.effects for m in ARMS
             if _mab(result, n=n, effect=e, estimator="mnar", estimand=m)
             >= _mab(result, n=n, effect=e, estimator="naive", estimand=m)]
    ns = sorted(grid.n_values)

    def bound_range(n, effects):
        rows = [r for e in effects for r in result.select(n=n, effect=e, estimator="mnar") if r["estimand"] in ARMS]
        return sum(r["mean_bound_range"] for r in rows) / len(rows)

    overall = [bound_range(n, grid.effects) for n in ns]
    strictly = all(b < a for a, b in zip(overall, overall[1:]))
    per_effect = all(bound_range(b, [e]) <= bound_range(a, [e])
                     for e in grid.effects for a, b in zip(ns, ns[1:]))
    ok = not worse and strictly and per_effect and elapsed < 900
    verdict(5, ok, f"{len(worse)} cells with mnar bias >= naive at n>=5000; bound range by n "
                   f"{[f'{v:.2e}' for v in overall]} strictly decreasing={strictly}, "
                   f"non-increasing per effect={per_effect}; {elapsed:.0f}s (limit 900s)")


@pytest.mark.slow
def test_bound_containment(verdict, preset_runs):
    violations = mismatches = 0
    for result, _ in preset_runs.values():
        seen = set()
        for row in result.rows:
            cell = (row["mechanism"], row["n"], row["effect"])
            if cell not in seen:  # the tallies are per cell, repeated on each row
                seen.add(cell)
                violations += row["bound_violations"]
                mismatches += row["width_mismatches"]
    verdict(6, violations == 0 and mismatches == 0,
            f"{violations} strata with truth outside [lb, ub], {mismatches} width mismatches")


# -- 7. AC-LOR robustness -----------------------------------------------------

OA_SCENARIO = ScenarioSpec(
    mechanism="oa_internal", n=50000, covariates=(CovariateSpec("x1", (0.5, 0.5)),),
    o_intercept=1.0, effect_t_on_o=1.5, o_x=-3.0, a_intercept=1.0, a_o=1.5, a_x=-3.0,
)


@pytest.mark.slow
def test_aclor_robustness(verdict):
    adjustment = AdjustmentSpec(("x1",))
    adjusted, marginal = [], []
    for rep in range(100):
        data = generate(OA_SCENARIO, replicate_rng(0, 0, rep))
        obs, full = build_counts(data.observed(), adjustment), build_counts(data.unmasked(), adjustment)
        adjusted.append(abs(aclor(obs).point - aclor(full).point))
        marginal.append(abs(marginal_log_odds_ratio(obs) - marginal_log_odds_ratio(full)))
    a, m = float(np.mean(adjusted)), float(np.mean(marginal))
    verdict(7, a < 0.05 and m > 0.15,
            f"mean |AC-LOR gap| {a:.4f} (< 0.05), mean |marginal log-OR gap| {m:.4f} (> 0.15), 100 reps")


# -- 8. d-separation ----------------------------------------------------------

def test_dsep_oracle(verdict):
    rnd = random.Random(0)
    start = time.perf_counter()
    queries = disagreements = 0
    for _ in range(500):
        g = random_dag(rnd, rnd.randint(2, 8), rnd.uniform(0.15, 0.6))
        nodes = g.nodes
        for x, y in itertools.combinations(nodes, 2):
            rest = [v for v in nodes if v not in (x, y)]
            for size in range(len(rest) + 1):
                for zs in itertools.combinations(rest, size):
                    queries += 1
                    if d_separated(g, {x}, {y}, zs) != d_separated_by_paths(g, {x}, {y}, zs):
                        disagreements += 1
    wrong = [(s, adj) for s, adj, valid in VERDICTS if validate_adjustment(s, adj).valid != valid]
    scenarios = {s for s, _, _ in VERDICTS}
    for s in scenarios:
        builtin_dag(s)
    elapsed = time.perf_counter() - start
    verdict(8, disagreements == 0 and not wrong and len(scenarios) == 6 and elapsed < 60,
            f"{queries} queries on 500 DAGs, {disagreements} disagreements; "
            f"{len(VERDICTS) - len(wrong)}/{len(VERDICTS)} adjustment verdicts over "
            f"{len(scenarios)} scenarios; {elapsed:.1f}s (limit 60s)")


# -- 9. smoothing algebra -----------------------------------------------------

def test_smoothing_algebra(verdict):
    r = random.Random(0)
    frac = lambda lo=0: Fraction(r.randint(lo, 10**6), 10**6)  # noqa: E731
    failures = 0
    for _ in range(1000):
        rho, fallback = frac(), frac()
        q = Fraction(1, 2) + frac() / 2
        value = smooth_value(rho, fallback, q)
        ok = (smooth_value(rho, fallback, Fraction(1)) == rho
              and smooth_value(rho, fallback, Fraction(1, 2)) == fallback
              and min(rho, fallback) <= value <= max(rho, fallback)
              and isinstance(value, Fraction))
        failures += not ok
    verdict(9, failures == 0, f"1000 exact (rho, R, q_s) triples, {failures} failures")


# -- 10. determinism across worker counts ------------------------------------

@pytest.mark.slow
def test_cli_determinism(verdict, tmp_path):
    outputs = []
    for jobs in (1, 8):
        out = tmp_path / f"jobs{jobs}"
        cmd = [sys.executable, "-m", "trialmiss", "montecarlo", "--preset", "paper-internal", "--reps", "3",
               "--seed", "0", "--jobs", str(jobs), "--no-plots", "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append((out / "results.csv").read_bytes())
    same = outputs[0] == outputs[1]
    verdict(10, same, f"results.csv with --jobs 1 and --jobs 8 byte-identical={same} "
                      f"({len(outputs[0])} bytes)")
