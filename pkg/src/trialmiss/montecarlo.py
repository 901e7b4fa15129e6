"""Monte Carlo sweeps over scenario grids and bootstrap percentile intervals."""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Union

import numpy as np

from . import _kernels
from .dag import validate_adjustment
from .data import AdjustmentSpec, TrialDataset, build_counts
from .estimators import aclor, delta_ate, mar_estimate, naive_estimate, phi
from .estimators import marginal_log_odds_ratio
from .robustify import GapPolicy
from .simulation import ScenarioSpec, default_adjustment, generate

ESTIMATORS = ("naive", "mnar", "smoothed", "mar")
ESTIMANDS = ("P(O|T=0)", "P(O|T=1)", "ATE", "AC-LOR")


@dataclass(frozen=True)
class EstimatorConfig:
    estimators: tuple = ESTIMATORS
    adjustment: Optional[tuple] = None
    bins: int = 5
    policy: GapPolicy = GapPolicy()
    smooth_policy: GapPolicy = GapPolicy(mode="smooth")
    aclor_method: str = "logistic"
    check_adjustment: bool = True

    def __post_init__(self):
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimator(s): {', '.join(sorted(unknown))}")
        if self.smooth_policy.mode != "smooth":
            raise ValueError("smooth_policy must use mode 'smooth'")


@dataclass(frozen=True)
class MonteCarloGrid:
    base: ScenarioSpec
    n_values: tuple = (1000,)
    effects: tuple = (1.0,)
    config: EstimatorConfig = EstimatorConfig()

    def cells(self):
        return [replace(self.base, n=int(n), effect_t_on_o=float(e))
                for n in self.n_values for e in self.effects]

    def adjustment_for(self, spec: ScenarioSpec):
        comps = self.config.adjustment
        if comps is None:
            comps = default_adjustment(spec.mechanism, [c.name for c in spec.covariates])
        return AdjustmentSpec(tuple(comps), bins=self.config.bins, scenario_hint=spec.mechanism.value)


RESULT_COLUMNS = (
    "mechanism", "n", "effect", "estimator", "estimand", "reps", "n_defined",
    "mean_estimate", "mean_truth", "mean_bias", "mean_abs_bias", "ci_low", "ci_high",
    "ci_width", "mean_bound_range", "missing_t0", "missing_t1", "bound_violations",
    "width_mismatches",
)


@dataclass
class MonteCarloResult:
    rows: list
    reps: int
    seed: int
    # raw[(cell_index, estimator, estimand)] -> (estimates, truths)
    raw: dict = field(default_factory=dict, repr=False)

    def select(self, **where):
        return [r for r in self.rows if all(r[k] == v for k, v in where.items())]

    def get(self, **where):
        rows = self.select(**where)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {where}")
        return rows[0]


def _fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def result_to_csv(result: MonteCarloResult) -> str:
    lines = [",".join(RESULT_COLUMNS)]
    for row in result.rows:
        lines.append(",".join(_fmt(row[c]) for c in RESULT_COLUMNS))
    return "\n".join(lines) + "\n"


def replicate_rng(seed, cell_index, rep):
    """Independent stream for one replicate, derived only from its coordinates."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cell_index), int(rep)]))


def _bound_checks(counts, full_counts):
    """Count strata where the full-data P(O|T,w) escapes [lb, ub] and
    where ub - lb differs from P(A=0|T,w)."""
    from .robustify import rho_bounds

    violations = mismatches = 0
    for k in range(counts.n_strata):
        for t in (0, 1):
            n_tw = counts.n_tw(k, t)
            if n_tw == 0:
                continue
            b = rho_bounds(counts, k, t)
            truth = Fraction(full_counts.cell(k, t, 1), n_tw)
            if not b.lb <= truth <= b.ub:
                violations += 1
            if b.ub - b.lb != Fraction(counts.cell(k, t, 2), n_tw):
                mismatches += 1
    return violations, mismatches


def _nan(v):
    return float("nan") if v is None else float(v)


def run_replicate(spec: ScenarioSpec, adjustment: AdjustmentSpec, config: EstimatorConfig, rng):
    """Generate one trial and evaluate every configured estimator.

    Returns ``{(estimator, estimand): (estimate, truth, bound_range)}`` plus
    bookkeeping under the ``"_meta"`` key.
    """
    data = generate(spec, rng)
    full = data.unmasked()
    obs = data.observed()
    counts = build_counts(obs, adjustment)
    full_counts = build_counts(full, adjustment)

    truth = {}
    for t in (0, 1):
        truth[f"P(O|T={t})"] = naive_estimate(full_counts, t)
    truth["ATE"] = truth["P(O|T=1)"] - truth["P(O|T=0)"]
    truth["AC-LOR"] = _nan(aclor(full_counts, config.aclor_method).point)

    out = {}
    if "naive" in config.estimators:
        vals = {}
        for t in (0, 1):
            try:
                vals[t] = naive_estimate(counts, t)
            except ValueError:
                vals[t] = float("nan")
        out[("naive", "P(O|T=0)")] = (vals[0], 0.0)
        out[("naive", "P(O|T=1)")] = (vals[1], 0.0)
        out[("naive", "ATE")] = (vals[1] - vals[0], 0.0)
        out[("naive", "AC-LOR")] = (_nan(marginal_log_odds_ratio(counts)), 0.0)
    for name, policy in (("mnar", config.policy), ("smoothed", config.smooth_policy)):
        if name not in config.estimators:
            continue
        for t in (0, 1):
            rep = phi(counts, t, policy, rng)
            out[(name, f"P(O|T={t})")] = (_nan(rep.point), rep.bound_range)
        rep = delta_ate(counts, policy, rng)
        out[(name, "ATE")] = (_nan(rep.point), rep.bound_range)
        if name == "mnar":
            out[(name, "AC-LOR")] = (_nan(aclor(counts, config.aclor_method).point), 0.0)
    if "mar" in config.estimators:
        mar_adj = AdjustmentSpec(tuple(obs.covariate_names) + ("s",))
        mar_counts = counts if adjustment.components == mar_adj.components else build_counts(obs, mar_adj)
        p = {t: _nan(mar_estimate(mar_counts, t).point) for t in (0, 1)}
        out[("mar", "P(O|T=0)")] = (p[0], 0.0)
        out[("mar", "P(O|T=1)")] = (p[1], 0.0)
        out[("mar", "ATE")] = (p[1] - p[0], 0.0)

    violations, mismatches = _bound_checks(counts, full_counts)
    result = {key: (est, truth[key[1]], br) for key, (est, br) in out.items()}
    result["_meta"] = {
        "missing": (data.missing_rate(0), data.missing_rate(1)),
        "bound_violations": violations,
        "width_mismatches": mismatches,
    }
    return result


def _task(args):
    cell_index, rep, spec, adjustment, config, seed = args
    return cell_index, rep, run_replicate(spec, adjustment, config, replicate_rng(seed, cell_index, rep))


def _chunk(args):
    return [_task(a) for a in args]


def run_montecarlo(grid: MonteCarloGrid, reps: int, seed: int = 0, jobs: int = 1,
                   progress: Optional[Callable] = None) -> MonteCarloResult:
    """Run ``reps`` replicates for every grid cell and aggregate them.

    Replicate ``i`` of cell ``c`` draws from a stream seeded by
    ``(seed, c, i)``, so results do not depend on ``jobs``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    cells = grid.cells()
    if not cells:
        raise ValueError("empty grid")
    tasks = []
    for ci, spec in enumerate(cells):
        adjustment = grid.adjustment_for(spec)
        if grid.config.check_adjustment and ("mnar" in grid.config.estimators
                                             or "smoothed" in grid.config.estimators):
            verdict = validate_adjustment(spec.mechanism, adjustment.components)
            if not verdict.valid:
                raise ValueError(f"adjustment does not suit the mechanism: {verdict.message}")
        for r in range(reps):
            tasks.append((ci, r, spec, adjustment, grid.config, seed))

    results = {}
    if jobs <= 1:
        for i, task in enumerate(tasks):
            ci, r, res = _task(task)
            results[(ci, r)] = res
            if progress:
                progress(i + 1, len(tasks))
    else:
        size = max(1, len(tasks) // (jobs * 4))
        chunks = [tasks[i:i + size] for i in range(0, len(tasks), size)]
        done = 0
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(_chunk, chunks):
                for ci, r, res in chunk:
                    results[(ci, r)] = res
                done += len(chunk)
                if progress:
                    progress(done, len(tasks))
    return aggregate(cells, results, reps, seed)


def aggregate(cells, results, reps, seed) -> MonteCarloResult:
    rows, raw = [], {}
    for ci, spec in enumerate(cells):
        reps_res = [results[(ci, r)] for r in range(reps)]
        keys = [k for k in reps_res[0] if k != "_meta"]
        miss = np.array([r["_meta"]["missing"] for r in reps_res])
        violations = sum(r["_meta"]["bound_violations"] for r in reps_res)
        mismatches = sum(r["_meta"]["width_mismatches"] for r in reps_res)
        for est_name in ESTIMATORS:
            for estimand in ESTIMANDS:
                key = (est_name, estimand)
                if key not in keys:
                    continue
                vals = np.array([r[key][0] for r in reps_res], dtype=float)
                truths = np.array([r[key][1] for r in reps_res], dtype=float)
                ranges = np.array([r[key][2] for r in reps_res], dtype=float)
                bias = vals - truths
                ok = np.isfinite(bias)
                raw[(ci, est_name, estimand)] = (vals, truths)
                if ok.any():
                    lo, hi = np.percentile(bias[ok], [2.5, 97.5])
                    row_stats = dict(
                        mean_estimate=float(np.mean(vals[ok])), mean_truth=float(np.mean(truths[ok])),
                        mean_bias=float(np.mean(bias[ok])), mean_abs_bias=float(np.mean(np.abs(bias[ok]))),
                        ci_low=float(lo), ci_high=float(hi), ci_width=float(hi - lo),
                    )
                else:
                    row_stats = dict.fromkeys(("mean_estimate", "mean_truth", "mean_bias", "mean_abs_bias",
                                               "ci_low", "ci_high", "ci_width"), float("nan"))
                rows.append(dict(
                    mechanism=spec.mechanism.value, n=spec.n, effect=spec.effect_t_on_o,
                    estimator=est_name, estimand=estimand, reps=reps, n_defined=int(ok.sum()),
                    **row_stats,
                    mean_bound_range=float(np.mean(ranges)),
                    missing_t0=float(np.nanmean(miss[:, 0])), missing_t1=float(np.nanmean(miss[:, 1])),
                    bound_violations=violations, width_mismatches=mismatches,
                ))
    return MonteCarloResult(rows, reps, seed, raw)


@dataclass
class BootstrapInterval:
    low: float
    high: float
    n_undefined: int = 0
    resamples: int = 0
    flagged: bool = False

    def __iter__(self):
        return iter((self.low, self.high))


_FAST = {"phi0": "P(O|T=0)", "phi1": "P(O|T=1)", "ate": "ATE"}


def _percentiles(values, resamples, level=0.95):
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    n_undef = int((~ok).sum())
    if ok.any():
        tail = 100.0 * (1.0 - level) / 2.0
        lo, hi = np.percentile(values[ok], [tail, 100.0 - tail])
    else:
        lo = hi = float("nan")
    return BootstrapInterval(float(lo), float(hi), n_undef, resamples, n_undef > resamples / 2)


def bootstrap_ci(data: TrialDataset, estimator: Union[str, Callable], resamples: int = 200,
                 rng: Optional[np.random.Generator] = None, *, adjustment: AdjustmentSpec = AdjustmentSpec(),
                 policy: Optional[GapPolicy] = None, level: float = 0.95) -> BootstrapInterval:
    """Percentile interval over ``resamples`` bootstrap datasets.

    ``estimator`` is either a callable mapping a dataset to a number (or
    None when undefined), or one of ``"phi0"``, ``"phi1"``, ``"ate"``. The
    named estimators resample the stratified count table directly: drawing
    n rows with replacement is the same as a multinomial draw over the
    table's cells, and the batch kernel then evaluates all resamples at
    once (smoothed ATEs and resampled sign stability go through the row
    path instead). The interval is flagged when more than half the
    resamples are undefined.
    """
    if resamples < 2:
        raise ValueError("at least 2 resamples are needed")
    rng = rng if rng is not None else np.random.default_rng()
    policy = policy or GapPolicy()
    if isinstance(estimator, str):
        if estimator not in _FAST:
            raise ValueError(f"unknown estimator {estimator!r}; expected one of {sorted(_FAST)}")
        if policy.mode == "smooth" and (policy.ps_method == "bootstrap" or estimator == "ate"):
            # the batch kernel smooths each arm on its own, which matches phi
            # with analytic weights but not the smoothed ATE
            return bootstrap_ci(data, _named_estimator(estimator, adjustment, policy, rng), resamples, rng,
                                level=level)
        counts = build_counts(data, adjustment)
        draws = _kernels.multinomial_resample(counts.cells, resamples, rng)
        mode, fallback = policy_codes(policy)
        clip = policy.clips
        if estimator == "ate":
            values = (_kernels.phi_batch(draws, 1, mode, fallback, clip)
                      - _kernels.phi_batch(draws, 0, mode, fallback, clip))
        else:
            values = _kernels.phi_batch(draws, int(estimator[-1]), mode, fallback, clip)
        return _percentiles(values, resamples, level)
    n = len(data)
    values = []
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        try:
            v = estimator(data.take(idx))
        except ValueError:
            v = None
        values.append(float("nan") if v is None else float(v))
    return _percentiles(values, resamples, level)


def _named_estimator(name, adjustment, policy, rng):
    def stat(sample):
        counts = build_counts(sample, adjustment)
        if name == "ate":
            return delta_ate(counts, policy, rng).point
        return phi(counts, int(name[-1]), policy, rng).point

    return stat


def policy_codes(policy: GapPolicy):
    mode = {
        "bounds_midpoint": _kernels.MODE_MIDPOINT,
        "clip_to_bounds": _kernels.MODE_MIDPOINT,
        "smooth": _kernels.MODE_SMOOTH,
        "skip_renormalize": _kernels.MODE_SKIP,
    }[policy.mode]
    fallback = {
        "midpoint": _kernels.FALLBACK_MIDPOINT,
        "naive": _kernels.FALLBACK_NAIVE,
        "mar": _kernels.FALLBACK_MAR,
    }[policy.fallback]
    return mode, fallback
