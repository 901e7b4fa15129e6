"""Fallbacks for strata where the identification formula cannot be used.

Covers the outcome bounds obtained by letting the missing outcomes be
all failures or all successes, ATE bounds, the sign-stability smoothing
of the stratum estimate, positivity diagnostics and the warning raised
when the treatment shows no observable association with the outcome.
"""
from dataclasses import dataclass
from fractions import Fraction
from statistics import NormalDist
from typing import Optional

import numpy as np

from .data import StratifiedCounts, ratio
from .identification import (
    delta0,
    equal_impact,
    lack_of_data,
    rho,
    two_proportion_z,
)

MODES = ("bounds_midpoint", "clip_to_bounds", "smooth", "skip_renormalize")
FALLBACKS = ("midpoint", "naive", "mar")
PS_METHODS = ("analytic", "bootstrap")

OK = "ok"
LACK_OF_DATA = "lack_of_data"
EQUAL_IMPACT = "equal_impact"

_NORMAL = NormalDist()


@dataclass(frozen=True)
class GapPolicy:
    """How to resolve strata whose identification formula is unusable.

    mode
        ``bounds_midpoint``: undefined strata take the midpoint of their
        bounds; ``clip_to_bounds``: same, and defined values are always
        clipped into the bounds; ``smooth``: defined values are mixed with
        the fallback ``R`` by the sign-stability weight; ``skip_renormalize``:
        undefined strata are dropped and the weights renormalized.
    fallback
        Low-variance estimate R used by ``smooth``: bound ``midpoint``,
        arm-level ``naive`` P(O*|T, A=1) or stratum-level ``mar``
        P(O*|T, w, A=1).
    resamples
        Number of resamples when ``ps_method`` is ``bootstrap``.
    clip
        Clip evaluable values that fall outside the bounds.
    """

    mode: str = "bounds_midpoint"
    fallback: str = "midpoint"
    resamples: int = 200
    ps_method: str = "analytic"
    clip: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown gap policy {self.mode!r}; expected one of {MODES}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"unknown fallback {self.fallback!r}; expected one of {FALLBACKS}")
        if self.ps_method not in PS_METHODS:
            raise ValueError(f"unknown ps method {self.ps_method!r}")
        if self.resamples < 1:
            raise ValueError("resamples must be >= 1")

    @property
    def clips(self):
        return self.mode == "clip_to_bounds" or self.clip


@dataclass(frozen=True)
class BoundInterval:
    lb: object
    ub: object
    source: str = "rho_bounds"

    @property
    def width(self):
        return self.ub - self.lb

    @property
    def midpoint(self):
        return (self.lb + self.ub) / 2

    def contains(self, value):
        return self.lb <= value <= self.ub

    def clip(self, value):
        if value < self.lb:
            return self.lb
        if value > self.ub:
            return self.ub
        return value


def _frac(num, den):
    if isinstance(num, Fraction) or isinstance(den, Fraction):
        return Fraction(num) / Fraction(den)
    return Fraction(int(num), int(den))


def rho_bounds(counts: StratifiedCounts, w, t) -> BoundInterval:
    """Bounds on P(O|T=t,w) with the missing outcomes set to 0 or to 1.

    Values are exact rationals, so ``ub - lb`` equals P(A=0|T=t,w).
    """
    k = counts.index(w)
    fail, succ, miss = counts.arm(k, t)
    n_tw = fail + succ + miss
    if n_tw == 0:
        raise ValueError(f"arm {t} is empty in stratum {counts.keys[k]}")
    lb = _frac(succ, n_tw)
    return BoundInterval(lb, lb + _frac(miss, n_tw), "rho_bounds")


def ate_bounds(counts: StratifiedCounts, w, chain="auto") -> BoundInterval:
    """Bounds on the stratum's contribution to the ATE.

    ``chain="delta"`` bounds delta0(w) * P(O|w) * P(w) through the bounds on
    P(O|w); ``chain="arm"`` uses lb(1)P(w|T=1) - ub(0)P(w|T=0) up to
    ub(1)P(w|T=1) - lb(0)P(w|T=0). ``auto`` takes the delta chain when
    P(T=1|O*=1,w) is computable and the arm chain otherwise.
    """
    k = counts.index(w)
    if counts.n_t(0) == 0 or counts.n_t(1) == 0:
        raise ValueError("both treatment arms must be nonempty")
    d0 = delta0(counts, k)
    if chain == "auto":
        chain = "delta" if d0 is not None else "arm"
    if chain == "delta":
        if d0 is None:
            raise ValueError("delta chain needs P(T=1|O*=1,w)")
        n_w = counts.n_w(k)
        succ = counts.cell(k, 0, 1) + counts.cell(k, 1, 1)
        miss = counts.cell(k, 0, 2) + counts.cell(k, 1, 2)
        lo_o, hi_o = _frac(succ, n_w), _frac(succ + miss, n_w)
        scale = Fraction(d0) * _frac(n_w, counts.total)
        ends = sorted((lo_o * scale, hi_o * scale))
        return BoundInterval(ends[0], ends[1], "ate_bounds")
    if chain != "arm":
        raise ValueError(f"unknown bound chain {chain!r}")
    lo, hi = Fraction(0), Fraction(0)
    for t, sign in ((1, 1), (0, -1)):
        n_tw = counts.n_tw(k, t)
        if n_tw == 0:
            continue
        b = rho_bounds(counts, k, t)
        wt = _frac(n_tw, counts.n_t(t))
        if sign > 0:
            lo, hi = lo + b.lb * wt, hi + b.ub * wt
        else:
            lo, hi = lo - b.ub * wt, hi - b.lb * wt
    return BoundInterval(lo, hi, "ate_bounds")


def positivity_check(counts: StratifiedCounts, w, t=1) -> str:
    """Classify a stratum as ``ok``, ``lack_of_data`` or ``equal_impact``.

    The classification uses only observed rows and is the same for both
    arms; ``t`` is accepted for symmetry with the other stratum functions.
    """
    k = counts.index(w)
    if lack_of_data(counts, k):
        return LACK_OF_DATA
    if equal_impact(counts, k):
        return EQUAL_IMPACT
    return OK


def sign_stability(counts: StratifiedCounts, w, t=1, method="analytic", resamples=200, rng=None):
    """Probability p_s that P(T|O*,w) - P(T|not O*,w) keeps its sign when resampled.

    ``analytic`` uses a normal approximation with the pooled-proportion
    standard error; ``bootstrap`` redraws the stratum's observed rows
    ``resamples`` times. Returns 0.5 when the difference is zero.
    """
    k = counts.index(w)
    fail_t, succ_t, _ = counts.arm(k, t)
    fail_u, succ_u, _ = counts.arm(k, 1 - t)
    a, b, c, d = (float(v) for v in (succ_t, fail_t, succ_u, fail_u))
    if a + c == 0 or b + d == 0:
        return 0.5
    diff = a / (a + c) - b / (b + d)
    if diff == 0:
        return 0.5
    if method == "analytic":
        z = two_proportion_z(a, b, c, d)
        return _NORMAL.cdf(abs(z))
    if method != "bootstrap":
        raise ValueError(f"unknown ps method {method!r}")
    if rng is None:
        raise ValueError("bootstrap sign stability needs a numpy Generator")
    total = a + b + c + d
    draws = rng.multinomial(int(total), np.array([a, b, c, d]) / total, size=resamples)
    da, db, dc, dd = (draws[:, i].astype(float) for i in range(4))
    with np.errstate(divide="ignore", invalid="ignore"):
        boot = da / (da + dc) - db / (db + dd)
    keeps = np.isfinite(boot) & (np.sign(boot) == np.sign(diff))
    return float(np.mean(keeps))


def smooth_value(rho_value, fallback_value, q_s):
    """(2 q_s - 1) rho + 2 (1 - q_s) R for q_s in [1/2, 1]."""
    return (2 * q_s - 1) * rho_value + 2 * (1 - q_s) * fallback_value


def fallback_value(counts: StratifiedCounts, w, t, fallback="midpoint"):
    """The low-variance estimate R for one stratum and arm, or None."""
    k = counts.index(w)
    if fallback == "midpoint":
        if counts.n_tw(k, t) == 0:
            return None
        return rho_bounds(counts, k, t).midpoint
    if fallback == "mar":
        fail, succ, _ = counts.arm(k, t)
        return ratio(succ, fail + succ)
    if fallback == "naive":
        succ = sum(counts.cell(j, t, 1) for j in range(counts.n_strata))
        obs = succ + sum(counts.cell(j, t, 0) for j in range(counts.n_strata))
        return ratio(succ, obs)
    raise ValueError(f"unknown fallback {fallback!r}")


def smoothed_rho(counts: StratifiedCounts, w, t, policy: GapPolicy = GapPolicy(mode="smooth"),
                 rng=None, q_s=None):
    """Sign-stability smoothed estimate of P(O|T=t,w).

    Falls back to the bounds midpoint when either rho or R is not
    evaluable.
    """
    k = counts.index(w)
    r_value = rho(counts, k, t)
    fb = fallback_value(counts, k, t, policy.fallback)
    if r_value is None or fb is None:
        return rho_bounds(counts, k, t).midpoint
    if q_s is None:
        q_s = max(0.5, sign_stability(counts, k, t, policy.ps_method, policy.resamples, rng))
    return smooth_value(r_value, fb, q_s)


def pooled_bounds(counts: StratifiedCounts, w) -> BoundInterval:
    """Bounds on P(O|w) from both arms together."""
    k = counts.index(w)
    n_w = counts.n_w(k)
    if n_w == 0:
        raise ValueError(f"stratum {counts.keys[k]} is empty")
    succ = counts.cell(k, 0, 1) + counts.cell(k, 1, 1)
    miss = counts.cell(k, 0, 2) + counts.cell(k, 1, 2)
    lb = _frac(succ, n_w)
    return BoundInterval(lb, lb + _frac(miss, n_w), "rho_bounds")


def pooled_fallback(counts: StratifiedCounts, w, fallback="midpoint"):
    """The fallback R for P(O|w), pooling both arms."""
    k = counts.index(w)
    if fallback == "midpoint":
        return pooled_bounds(counts, k).midpoint
    if fallback == "mar":
        succ = counts.cell(k, 0, 1) + counts.cell(k, 1, 1)
        return ratio(succ, succ + counts.cell(k, 0, 0) + counts.cell(k, 1, 0))
    if fallback == "naive":
        cells = [counts.cell(j, t, o) for j in range(counts.n_strata) for t in (0, 1) for o in (0, 1)]
        return ratio(sum(cells[1::2], 0), sum(cells, 0))
    raise ValueError(f"unknown fallback {fallback!r}")


def smoothed_rho0(counts: StratifiedCounts, w, rho0_value, q_s, policy: GapPolicy):
    """Sign-stability smoothing of rho0, the stratum's P(O|w) estimate.

    Falls back to the midpoint of the pooled bounds when R is not evaluable.
    """
    k = counts.index(w)
    fb = pooled_fallback(counts, k, policy.fallback)
    if fb is None:
        return pooled_bounds(counts, k).midpoint
    if not counts.is_exact():
        fb = float(fb)
    return smooth_value(rho0_value, fb, q_s)


@dataclass
class StratumResolution:
    value: object
    status: str
    bounds: BoundInterval
    raw: object = None
    q_s: Optional[float] = None
    clipped: bool = False
    from_bounds: bool = False


def resolve_stratum(counts: StratifiedCounts, w, t, policy: GapPolicy, rng=None,
                    q_s=None) -> Optional[StratumResolution]:
    """Apply the gap policy to one stratum and arm.

    Returns None when the arm is absent from the stratum. In
    ``skip_renormalize`` mode an undefined stratum keeps ``value=None``.
    A precomputed ``q_s`` (it does not depend on the arm) skips the
    sign-stability step.
    """
    k = counts.index(w)
    if counts.n_tw(k, t) == 0:
        return None
    exact = counts.is_exact()
    bounds = rho_bounds(counts, k, t)
    if not exact:
        bounds = BoundInterval(float(bounds.lb), float(bounds.ub), bounds.source)
    status = positivity_check(counts, k, t)
    raw = rho(counts, k, t)
    if raw is None:
        if policy.mode == "skip_renormalize":
            return StratumResolution(None, status, bounds, None)
        return StratumResolution(bounds.midpoint, status, bounds, None, from_bounds=True)
    value, q_s = raw, None
    if policy.mode == "smooth":
        fb = fallback_value(counts, k, t, policy.fallback)
        if fb is None:
            return StratumResolution(bounds.midpoint, status, bounds, raw, from_bounds=True)
        if not exact:
            fb = float(fb)
        if q_s is None:
            q_s = max(0.5, sign_stability(counts, k, t, policy.ps_method, policy.resamples, rng))
        value = smooth_value(raw, fb, q_s)
    clipped = False
    if policy.clips and not bounds.contains(value):
        value, clipped = bounds.clip(value), True
    return StratumResolution(value, status, bounds, raw, q_s, clipped)


def unidentifiability_warning(report, threshold=0.5, z_crit=1.959963984540054):
    """Warning text when P(O|T) may not be identifiable, else None.

    Fires when the share of strata with equal observed treatment
    proportions across outcome levels exceeds ``threshold``, or when the
    overall observed association between treatment and outcome is not
    distinguishable from zero (|z| below ``z_crit``).
    """
    strata = [s for s in report.strata if s.weight and s.weight > 0]
    share = (sum(s.flag == EQUAL_IMPACT for s in strata) / len(strata)) if strata else 0.0
    z = report.association_z
    null_assoc = z is not None and abs(z) < z_crit
    if share > threshold or null_assoc:
        reason = (f"{share:.0%} of strata show equal observed treatment proportions across "
                  "outcome levels" if share > threshold else
                  f"no detectable observed association between treatment and outcome (|z|={abs(z):.2f})")
        return (f"{report.estimand}: {reason}; if the treatment has no effect on the outcome, "
                "P(O|T) is not identifiable from the observed rows without further assumptions")
    return None
