"""Treatment-effect estimators computed from stratified observed counts.

* :func:`phi` - P(O|T=t) as the P(w|T=t)-weighted sum of stratum rho values
* :func:`delta_ate` - ATE as the P(w)-weighted sum of delta0 * rho0
* :func:`aclor` - average conditional log-odds ratio between O* and T
* :func:`mar_estimate` - weighted available-case mean over [X, S] strata
* :func:`naive_estimate` - P(O*|T=t, A=1) ignoring missingness
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .data import AdjustmentSpec, StratifiedCounts, ratio
from .identification import (
    delta0,
    observed_association_z,
    rho,
    rho0,
    theta_contingency,
)
from .robustify import (
    EQUAL_IMPACT,
    LACK_OF_DATA,
    GapPolicy,
    resolve_stratum,
    smoothed_rho0,
)

__all__ = [
    "AdjustmentSpec", "EstimateReport", "StratumDetail", "LogisticFit",
    "rho0", "rho", "phi", "delta_ate", "theta_stratum", "aclor",
    "fit_logistic", "mar_estimate", "naive_estimate", "naive_report",
    "marginal_log_odds_ratio", "estimand_name",
]

ESTIMANDS = ("P(O|T=0)", "P(O|T=1)", "ATE", "AC-LOR")


def estimand_name(t):
    return f"P(O|T={t})"


@dataclass
class StratumDetail:
    key: tuple
    value: Optional[float]
    weight: float
    flag: str = "ok"
    lb: Optional[float] = None
    ub: Optional[float] = None


@dataclass
class EstimateReport:
    estimand: str
    estimator: str
    point: Optional[float]
    lower: Optional[float] = None
    upper: Optional[float] = None
    ci: Optional[tuple] = None
    strata: list = field(default_factory=list)
    flags: dict = field(default_factory=lambda: {
        "positivity_violation": False,
        "equal_impact": False,
        "clipped_to_bounds": False,
        "smoothed": None,
    })
    bound_range: float = 0.0
    adjustment: tuple = ()
    association_z: Optional[float] = None
    warnings: list = field(default_factory=list)
    n: int = 0

    @property
    def defined(self):
        return self.point is not None and not (isinstance(self.point, float) and math.isnan(self.point))


def _as_out(value, exact):
    if value is None:
        return None
    return value if exact else float(value)


def _flags(details, q_values=None):
    return {
        "positivity_violation": any(d.flag == LACK_OF_DATA for d in details),
        "equal_impact": any(d.flag == EQUAL_IMPACT for d in details),
        "clipped_to_bounds": any(d.flag.endswith("clipped") for d in details),
        "smoothed": q_values,
    }


def _resolve_arm(counts, t, policy, rng, shared_q=None):
    out = {}
    for k in range(counts.n_strata):
        q = shared_q.get(k) if shared_q else None
        res = resolve_stratum(counts, k, t, policy, rng, q_s=q)
        if res is not None:
            out[k] = res
    return out


def _phi_from_resolutions(counts, t, resolutions, policy, estimator):
    exact = counts.is_exact()
    n_t = counts.n_t(t)
    details, total, wsum = [], 0, 0
    lo, hi, brange, within = 0, 0, 0, True
    q_acc, q_w = 0.0, 0.0
    for k, res in resolutions.items():
        weight = ratio(counts.n_tw(k, t), n_t)
        flag = res.status
        if res.clipped:
            flag = f"{flag}+clipped" if flag != "ok" else "clipped"
        details.append(StratumDetail(counts.keys[k], _as_out(res.value, exact), _as_out(weight, exact),
                                     flag, _as_out(res.bounds.lb, exact), _as_out(res.bounds.ub, exact)))
        if res.value is None:
            continue
        total += weight * res.value
        wsum += weight
        lo += weight * res.bounds.lb
        hi += weight * res.bounds.ub
        if res.from_bounds:
            brange += weight * (res.bounds.ub - res.bounds.lb)
        if not res.bounds.contains(res.value):
            within = False
        if res.q_s is not None:
            q_acc += float(weight) * res.q_s
            q_w += float(weight)
    skip = policy.mode == "skip_renormalize"
    if wsum == 0:
        point = None
    else:
        point = total / wsum if skip else total
    report = EstimateReport(
        estimand=estimand_name(t),
        estimator=estimator,
        point=_as_out(point, exact),
        strata=details,
        flags=_flags(details, (q_acc / q_w) if q_w else None),
        bound_range=float(brange),
        adjustment=counts.components,
        association_z=observed_association_z(counts),
        n=int(counts.total) if not exact else 0,
    )
    if not skip and within and point is not None:
        report.lower, report.upper = _as_out(lo, exact), _as_out(hi, exact)
    return report


def phi(counts: StratifiedCounts, t, policy: Optional[GapPolicy] = None, rng=None) -> EstimateReport:
    """Estimate P(O|T=t) as sum over strata of rho(w, t) * P(w|T=t).

    Strata whose rho is undefined or outside its bounds are resolved by
    ``policy`` (default: bounds midpoint with clipping).
    """
    if t not in (0, 1):
        raise ValueError("t must be 0 or 1")
    policy = policy or GapPolicy()
    if counts.n_t(t) == 0:
        raise ValueError(f"treatment arm {t} is empty")
    name = "smoothed" if policy.mode == "smooth" else "mnar"
    return _phi_from_resolutions(counts, t, _resolve_arm(counts, t, policy, rng), policy, name)


def _arm_from_rho0(counts, k, t, rho0_value, bounds, policy, exact):
    """rho_t = P(T=t|O*,w) / P(T=t|w) * rho0, clipped to the arm bounds."""
    succ_t = counts.cell(k, t, 1)
    succ = succ_t + counts.cell(k, 1 - t, 1)
    value = ratio(succ_t * counts.n_w(k), succ * counts.n_tw(k, t)) * rho0_value
    if not exact:
        value = float(value)
    if policy.clips and not bounds.contains(value):
        return bounds.clip(value), True
    return value, False


def delta_ate(counts: StratifiedCounts, policy: Optional[GapPolicy] = None, rng=None,
              p_treat=None) -> EstimateReport:
    """Estimate P(O|T=1) - P(O|T=0) as sum over strata of delta0 * rho0 * P(w).

    Strata where rho0 is undefined, or where the policy altered either arm's
    value, contribute rho_1 P(w|T=1) - rho_0 P(w|T=0) with the resolved
    values instead; both forms agree wherever everything is defined. In
    ``smooth`` mode the rho0 factor itself is smoothed towards the pooled
    fallback with the stratum's sign-stability weight.
    ``p_treat`` swaps the empirical P(T=1) in delta0 for a design value.
    """
    policy = policy or GapPolicy()
    if counts.n_t(0) == 0 or counts.n_t(1) == 0:
        raise ValueError("degenerate randomization: a treatment arm is empty")
    exact = counts.is_exact()
    name = "smoothed" if policy.mode == "smooth" else "mnar"
    res = {1: _resolve_arm(counts, 1, policy, rng)}
    # both arms of a stratum share one sign-stability weight
    res[0] = _resolve_arm(counts, 0, policy, rng, {k: r.q_s for k, r in res[1].items() if r.q_s is not None})
    if policy.mode == "skip_renormalize":
        p1 = _phi_from_resolutions(counts, 1, res[1], policy, name)
        p0 = _phi_from_resolutions(counts, 0, res[0], policy, name)
        point = None if p1.point is None or p0.point is None else p1.point - p0.point
        return EstimateReport("ATE", name, point, strata=p1.strata + p0.strata,
                              flags=_flags(p1.strata + p0.strata), adjustment=counts.components,
                              association_z=observed_association_z(counts))
    n = counts.total
    n1, n0 = counts.n_t(1), counts.n_t(0)
    details, total = [], 0
    lo, hi, brange = 0, 0, 0
    q_acc, q_w = 0.0, 0.0
    for k in range(counts.n_strata):
        r1, r0 = res[1].get(k), res[0].get(k)
        w1 = ratio(counts.n_tw(k, 1), n1)
        w0 = ratio(counts.n_tw(k, 0), n0)
        both_raw = (r1 is not None and r0 is not None
                    and r1.raw is not None and r0.raw is not None)
        smooth = policy.mode == "smooth" and both_raw and r1.q_s is not None
        clean = both_raw and r1.value == r1.raw and r0.value == r0.raw
        r0_ = rho0(counts, k, 1) if (clean or smooth) else None
        pooled_clip = False
        if smooth and r0_ is not None:
            # smooth the shared rho0 factor rather than each arm separately,
            # which keeps the two arms' errors coupled
            pooled = smoothed_rho0(counts, k, r0_, r1.q_s, policy)
            v1, c1 = _arm_from_rho0(counts, k, 1, pooled, r1.bounds, policy, exact)
            v0, c0 = _arm_from_rho0(counts, k, 0, pooled, r0.bounds, policy, exact)
            pooled_clip = c1 or c0
            contrib = v1 * w1 - v0 * w0
        elif clean and r0_ is not None:
            d0 = delta0(counts, k, p_treat)
            contrib = d0 * r0_ * ratio(counts.n_w(k), n)
        else:
            contrib = (r1.value * w1 if r1 else 0) - (r0.value * w0 if r0 else 0)
        total += contrib
        flags = [r.status for r in (r1, r0) if r is not None]
        flag = next((f for f in flags if f != "ok"), "ok")
        arm_clip = not smooth and any(r is not None and r.clipped for r in (r1, r0))
        if arm_clip or pooled_clip:
            flag = f"{flag}+clipped" if flag != "ok" else "clipped"
        s_lo = (r1.bounds.lb * w1 if r1 else 0) - (r0.bounds.ub * w0 if r0 else 0)
        s_hi = (r1.bounds.ub * w1 if r1 else 0) - (r0.bounds.lb * w0 if r0 else 0)
        lo, hi = lo + s_lo, hi + s_hi
        for r, w in ((r1, w1), (r0, w0)):
            if r is None:
                continue
            if r.from_bounds:
                brange += w * (r.bounds.ub - r.bounds.lb)
            if r.q_s is not None:
                q_acc += float(w) * r.q_s
                q_w += float(w)
        details.append(StratumDetail(counts.keys[k], _as_out(contrib, exact),
                                     _as_out(ratio(counts.n_w(k), n), exact), flag,
                                     _as_out(s_lo, exact), _as_out(s_hi, exact)))
    report = EstimateReport(
        estimand="ATE", estimator=name, point=_as_out(total, exact), strata=details,
        flags=_flags(details, (q_acc / q_w) if q_w else None), bound_range=float(brange),
        adjustment=counts.components, association_z=observed_association_z(counts),
        n=int(n) if not exact else 0,
    )
    if lo <= total <= hi:
        report.lower, report.upper = _as_out(lo, exact), _as_out(hi, exact)
    return report


@dataclass
class LogisticFit:
    coef: np.ndarray
    converged: bool
    iterations: int
    # per stratum: log odds ratio between O* and T implied by the fit
    log_or: np.ndarray
    # True when separation forced the bias-reduced (Firth) refit
    penalized: bool = False


def _dummies(codes):
    """Treatment-coded indicators per adjustment component."""
    cols = []
    for j in range(codes.shape[1]):
        present = np.unique(codes[:, j])
        for lv in present[1:]:
            cols.append((codes[:, j] == lv).astype(float))
    if not cols:
        return np.zeros((codes.shape[0], 0))
    return np.stack(cols, axis=1)


def _irls(X, y, m, firth, max_iter, tol, jitter):
    p = X.shape[1]
    beta = np.zeros(p)
    for it in range(1, max_iter + 1):
        eta = np.clip(X @ beta, -35.0, 35.0)
        mu = 1.0 / (1.0 + np.exp(-eta))
        wts = m * mu * (1.0 - mu)
        info = X.T @ (X * wts[:, None])
        if np.linalg.cond(info) > 1e12:
            info = info + jitter * np.eye(p)
        resid = y - m * mu
        if firth:
            # hat values of the weighted design; Firth's score adds h/2
            # pseudo-successes and h pseudo-trials to every row
            h = np.einsum("ij,ij->i", X @ np.linalg.inv(info), X) * wts
            resid = resid + h * (0.5 - mu)
        step = np.linalg.solve(info, X.T @ resid)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            return beta, True, it, np.max(np.abs(X @ beta))
    return beta, False, max_iter, np.max(np.abs(X @ beta))


def fit_logistic(counts: StratifiedCounts, max_iter=50, tol=1e-8, jitter=1e-6) -> LogisticFit:
    """Binomial IRLS of O* on T, the W indicators and all T x W interactions.

    Fitted on the aggregated observed counts. Each W component enters
    through its own indicators. When a zero cell separates the data the
    maximum-likelihood fit diverges; the model is then refitted with
    Firth's bias-reduced score, whose estimates are always finite (for a
    saturated model they match adding 1/2 to every cell).
    """
    dum = _dummies(np.asarray(counts.codes))
    k_n = counts.n_strata
    rows, succ, trials = [], [], []
    for t in (0, 1):
        for k in range(k_n):
            fail, s, _ = counts.arm(k, t)
            rows.append(np.concatenate(([1.0], dum[k], [float(t)], float(t) * dum[k])))
            succ.append(float(s))
            trials.append(float(s + fail))
    X = np.array(rows)
    y = np.array(succ)
    m = np.array(trials)
    keep = m > 0
    X, y, m = X[keep], y[keep], m[keep]
    beta, converged, it, max_eta = _irls(X, y, m, False, max_iter, tol, jitter)
    penalized = False
    if not converged or max_eta > 30.0:
        beta, converged, it, _ = _irls(X, y, m, True, 4 * max_iter, tol, jitter)
        penalized = True
    n_d = dum.shape[1]
    log_or = beta[1 + n_d] + dum @ beta[2 + n_d:]
    return LogisticFit(beta, converged, it, log_or, penalized)


def theta_stratum(counts: StratifiedCounts, w, method="contingency", haldane=False, fit=None):
    """Odds ratio between O* and T within stratum w, or None if undefined."""
    k = counts.index(w)
    if method == "contingency":
        return theta_contingency(counts, k, haldane=haldane)
    if method != "logistic":
        raise ValueError(f"unknown odds-ratio method {method!r}")
    fit = fit or fit_logistic(counts)
    if not fit.converged:
        return None
    return math.exp(fit.log_or[k])


def aclor(counts: StratifiedCounts, method="logistic", policy: Optional[GapPolicy] = None,
          haldane=False) -> EstimateReport:
    """Average conditional log-odds ratio: sum over strata of log theta(w) * P(w).

    With the contingency method, strata with a zero cell are skipped (and
    the remaining weights renormalized) unless ``haldane`` applies the
    +0.5 correction. The logistic method fails as a whole only when even
    the bias-reduced refit does not converge.
    """
    n = counts.total
    details = []
    fit = None
    if method == "logistic":
        fit = fit_logistic(counts)
    elif method != "contingency":
        raise ValueError(f"unknown odds-ratio method {method!r}")
    total, wsum, any_gap = 0.0, 0.0, False
    for k in range(counts.n_strata):
        weight = float(ratio(counts.n_w(k), n))
        if weight == 0:
            continue
        if method == "logistic":
            value = float(fit.log_or[k]) if fit.converged else None
            flag = "ok" if fit.converged else "no_convergence"
            fail1, succ1, _ = counts.arm(k, 1)
            fail0, succ0, _ = counts.arm(k, 0)
            if fit.converged and (fit.penalized or fail1 * succ1 * fail0 * succ0 == 0):
                flag = "zero_cell"
        else:
            th = theta_contingency(counts, k)
            flag = "ok"
            if th is None:
                any_gap = True
                flag = LACK_OF_DATA
                if haldane:
                    th = theta_contingency(counts, k, haldane=True)
                    flag = "haldane"
            value = None if th is None else math.log(th)
        details.append(StratumDetail(counts.keys[k], value, weight, flag))
        if value is None:
            continue
        total += weight * value
        wsum += weight
    point = total / wsum if wsum > 0 else None
    flags = _flags(details)
    flags["positivity_violation"] = any_gap or any(d.flag in ("zero_cell", "no_convergence")
                                                   for d in details)
    return EstimateReport(
        estimand="AC-LOR", estimator=f"mnar-{method}", point=point, strata=details, flags=flags,
        adjustment=counts.components, association_z=observed_association_z(counts),
        n=int(n) if not counts.is_exact() else 0,
    )


def mar_estimate(counts: StratifiedCounts, t) -> EstimateReport:
    """Sum over [X, S] strata with observed outcomes of P(O*|T=t,w) * P(w|T=t)."""
    if "s" not in counts.components or any(c.startswith("pa_") for c in counts.components):
        raise ValueError("the MAR estimator needs strata built over the covariates and S")
    n_t = counts.n_t(t)
    if n_t == 0:
        raise ValueError(f"treatment arm {t} is empty")
    exact = counts.is_exact()
    total = 0
    details = []
    for k in range(counts.n_strata):
        fail, succ, miss = counts.arm(k, t)
        if fail + succ == 0:
            if miss:
                details.append(StratumDetail(counts.keys[k], None, _as_out(ratio(miss, n_t), exact),
                                             LACK_OF_DATA))
            continue
        weight = ratio(fail + succ + miss, n_t)
        value = ratio(succ, fail + succ)
        total += value * weight
        details.append(StratumDetail(counts.keys[k], _as_out(value, exact), _as_out(weight, exact)))
    return EstimateReport(
        estimand=estimand_name(t), estimator="mar", point=_as_out(total, exact), strata=details,
        flags=_flags(details), adjustment=counts.components,
        association_z=observed_association_z(counts), n=counts.total,
    )


def naive_estimate(counts: StratifiedCounts, t):
    """P(O*=1|T=t, A=1) pooled over strata."""
    succ = sum(counts.cell(k, t, 1) for k in range(counts.n_strata))
    obs = succ + sum(counts.cell(k, t, 0) for k in range(counts.n_strata))
    if obs == 0:
        raise ValueError(f"no observed outcomes in arm {t}")
    return ratio(succ, obs)


def naive_report(counts: StratifiedCounts, estimand) -> EstimateReport:
    """Available-case estimate for any of the four estimands."""
    if estimand == "ATE":
        point = naive_estimate(counts, 1) - naive_estimate(counts, 0)
    elif estimand == "AC-LOR":
        point = marginal_log_odds_ratio(counts)
    else:
        point = naive_estimate(counts, int(estimand[-2]))
    return EstimateReport(estimand=estimand, estimator="naive", point=point,
                          adjustment=(), association_z=observed_association_z(counts), n=counts.total)


def marginal_log_odds_ratio(counts: StratifiedCounts):
    """Unadjusted log-odds ratio between O* and T over all observed rows."""
    cells = counts.cells
    a = sum(cells[:, 1, 1].tolist(), 0)
    b = sum(cells[:, 1, 0].tolist(), 0)
    c = sum(cells[:, 0, 1].tolist(), 0)
    d = sum(cells[:, 0, 0].tolist(), 0)
    if a * b * c * d == 0:
        return None
    return math.log(a) + math.log(d) - math.log(b) - math.log(c)
