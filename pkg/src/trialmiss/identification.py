"""Stratum-level identification formulas on observed-only counts.

Each formula is evaluated on integer cell counts after clearing
denominators, so there is a single rounding step for integer tables and
no rounding at all for ``Fraction`` tables. ``None`` marks an undefined
value (empty conditioning event or a vanishing denominator).

Within a stratum and for arm ``t`` the counts are named::

    a = n(T=t,  O*=1)   b = n(T=t,  O*=0)   m  = n(T=t,  A=0)
    c = n(T=1-t, O*=1)  d = n(T=1-t, O*=0)  mu = n(T=1-t, A=0)
"""
from fractions import Fraction

from .data import StratifiedCounts, ratio


def _abcd(counts: StratifiedCounts, k, t):
    b, a, m = counts.arm(k, t)
    d, c, mu = counts.arm(k, 1 - t)
    return a, b, m, c, d, mu


def rho0(counts: StratifiedCounts, w, t):
    """(P(T|w) - P(T|not O*,w)) / (P(T|O*,w) - P(T|not O*,w)) for T=t.

    Identifies P(O|w); the value does not depend on ``t``.
    """
    k = counts.index(w)
    a, b, m, c, d, mu = _abcd(counts, k, t)
    n_tw = a + b + m
    n_w = n_tw + c + d + mu
    det = a * d - b * c
    if a + c == 0 or b + d == 0 or n_w == 0 or det == 0:
        return None
    return ratio((n_tw * (b + d) - b * n_w) * (a + c), n_w * det)


def rho(counts: StratifiedCounts, w, t):
    """P(T|O*,w) / P(T|w) * rho0; identifies P(O|T=t,w)."""
    k = counts.index(w)
    a, b, m, c, d, mu = _abcd(counts, k, t)
    n_tw = a + b + m
    n_w = n_tw + c + d + mu
    det = a * d - b * c
    if a + c == 0 or b + d == 0 or n_tw == 0 or det == 0:
        return None
    return ratio(a * (n_tw * (b + d) - b * n_w), n_tw * det)


def delta0(counts: StratifiedCounts, w, p_treat=None):
    """(P(T=1|O*=1,w) - P(T=1)) / (P(T=1)(1 - P(T=1))).

    ``p_treat`` replaces the empirical P(T=1) by a known design value.
    """
    k = counts.index(w)
    a, _, _, c, _, _ = _abcd(counts, k, 1)
    n1, n0 = counts.n_t(1), counts.n_t(0)
    n = n1 + n0
    if a + c == 0:
        return None
    if p_treat is not None:
        if not 0.0 < p_treat < 1.0:
            raise ValueError("design treatment probability must lie in (0, 1)")
        return (a / (a + c) - p_treat) / (p_treat * (1.0 - p_treat))
    if n1 == 0 or n0 == 0:
        return None
    return ratio(n * (a * n - n1 * (a + c)), (a + c) * n1 * n0)


def theta_contingency(counts: StratifiedCounts, w, haldane=False):
    """Odds ratio between O* and T in stratum w from the 2x2 observed table.

    Returns None on a zero cell unless ``haldane`` adds 0.5 to every cell.
    """
    k = counts.index(w)
    a, b, _, c, d, _ = _abcd(counts, k, 1)
    if a * b * c * d == 0:
        if not haldane:
            return None
        half = Fraction(1, 2) if counts.is_exact() else 0.5
        a, b, c, d = a + half, b + half, c + half, d + half
    return ratio(a * d, b * c)


def equal_impact(counts: StratifiedCounts, w):
    """P(T|O*,w) == P(T|not O*,w), tested exactly by cross-multiplication."""
    k = counts.index(w)
    a, b, _, c, d, _ = _abcd(counts, k, 1)
    return a * d == b * c


def lack_of_data(counts: StratifiedCounts, w):
    k = counts.index(w)
    a, b, _, c, d, _ = _abcd(counts, k, 1)
    return a + c == 0 or b + d == 0


def observed_association_z(counts: StratifiedCounts):
    """Pooled two-proportion z statistic for T vs O* over all observed rows."""
    a = sum(counts.cell(k, 1, 1) for k in range(counts.n_strata))
    b = sum(counts.cell(k, 1, 0) for k in range(counts.n_strata))
    c = sum(counts.cell(k, 0, 1) for k in range(counts.n_strata))
    d = sum(counts.cell(k, 0, 0) for k in range(counts.n_strata))
    return two_proportion_z(a, b, c, d)


def two_proportion_z(a, b, c, d):
    """z for P(T=1|O*=1) - P(T=1|O*=0) with a pooled standard error.

    ``a, b`` are treated successes/failures, ``c, d`` control ones.
    Returns 0.0 when either outcome level is empty or the pooled
    proportion is degenerate.
    """
    n_pos, n_neg = a + c, b + d
    if n_pos == 0 or n_neg == 0:
        return 0.0
    diff = float(a) / float(n_pos) - float(b) / float(n_neg)
    pbar = float(a + b) / float(n_pos + n_neg)
    var = pbar * (1.0 - pbar) * (1.0 / float(n_pos) + 1.0 / float(n_neg))
    if var <= 0.0:
        return 0.0
    return diff / var ** 0.5
