"""Trial data model, the observed/missing outcome split and stratified counts.

Rows are stored column-wise in numpy arrays; :class:`TrialRecord` is the
row view used for construction and iteration. The observed outcome
``o_star`` is encoded as -1 when the outcome is unavailable (``a == 0``).
"""
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral
from typing import Optional, Sequence

import numpy as np

from . import _kernels

MISSING = -1

PA_COLUMNS = {
    2: ("pa_0", "pa_1"),
    4: ("pa_00", "pa_10", "pa_01", "pa_11"),
}


@dataclass(frozen=True)
class TrialRecord:
    t: int
    s: int
    a: int
    o_star: Optional[int]
    x: tuple = ()
    pa: Optional[tuple] = None
    o_true: Optional[int] = None

    def __post_init__(self):
        for name in ("t", "s", "a"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        if self.a == 1 and self.o_star not in (0, 1):
            raise ValueError("o_star must be 0 or 1 when the outcome is available")
        if self.a == 0 and self.o_star is not None:
            raise ValueError("o_star must be absent when the outcome is unavailable")
        if self.pa is not None and any(not 0.0 <= p <= 1.0 for p in self.pa):
            raise ValueError("propensities must lie in [0, 1]")


class TrialDataset:
    """Column store of trial rows.

    Parameters
    ----------
    t, s, a : array-like of {0, 1}
    o_star : array-like of {0, 1, -1}
        Observed outcome, -1 where ``a == 0``.
    x : (n, k) array of integer level codes
    covariate_names : names of the k covariates
    covariate_levels : per covariate, the tuple of level labels indexed by code
    pa : (n, 2) or (n, 4) float array, optional
    o_true : ground-truth outcome, optional (simulation only)
    """

    def __init__(self, t, s, a, o_star, x=None, covariate_names=(), covariate_levels=None,
                 pa=None, o_true=None, validate=True):
        self.t = np.asarray(t, dtype=np.int8)
        n = self.t.shape[0]
        self.s = np.asarray(s, dtype=np.int8)
        self.a = np.asarray(a, dtype=np.int8)
        self.o_star = np.asarray(o_star, dtype=np.int8)
        self.covariate_names = tuple(covariate_names)
        k = len(self.covariate_names)
        if x is None:
            x = np.zeros((n, 0), dtype=np.int64)
        self.x = np.asarray(x, dtype=np.int64).reshape(n, k)
        if covariate_levels is None:
            covariate_levels = [
                tuple(str(v) for v in range(int(self.x[:, j].max(initial=-1)) + 1))
                for j in range(k)
            ]
        self.covariate_levels = tuple(tuple(lv) for lv in covariate_levels)
        self.pa = None if pa is None else np.asarray(pa, dtype=np.float64).reshape(n, -1)
        self.pa_arity = None if self.pa is None else self.pa.shape[1]
        self.o_true = None if o_true is None else np.asarray(o_true, dtype=np.int8)
        if validate:
            self._check()

    def _check(self):
        n = len(self)
        for name in ("s", "a", "o_star"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"column {name} has the wrong length")
        for name in ("t", "s", "a"):
            col = getattr(self, name)
            if np.any((col != 0) & (col != 1)):
                raise ValueError(f"column {name} must be binary")
        obs = self.a == 1
        if np.any(obs & (self.o_star == MISSING)):
            raise ValueError("outcome absent while available")
        if np.any(~obs & (self.o_star != MISSING)):
            raise ValueError("outcome present while unavailable")
        if np.any(obs & (self.o_star != 0) & (self.o_star != 1)):
            raise ValueError("observed outcome must be binary")
        if self.pa is not None:
            if self.pa_arity not in PA_COLUMNS:
                raise ValueError("propensity vectors must have length 2 or 4")
            if np.any((self.pa < 0) | (self.pa > 1)) or np.any(np.isnan(self.pa)):
                raise ValueError("propensities must lie in [0, 1]")
        for j, levels in enumerate(self.covariate_levels):
            col = self.x[:, j]
            if col.size and (col.min() < 0 or col.max() >= len(levels)):
                raise ValueError(f"covariate {self.covariate_names[j]} has an unknown level code")
        if self.o_true is not None:
            if self.o_true.shape != (n,):
                raise ValueError("column o_true has the wrong length")
            if np.any(obs & (self.o_true != self.o_star)):
                raise ValueError("o_true disagrees with an observed outcome")

    def __len__(self):
        return int(self.t.shape[0])

    @property
    def pa_columns(self):
        return () if self.pa is None else PA_COLUMNS[self.pa_arity]

    @classmethod
    def from_records(cls, records: Sequence[TrialRecord], covariate_names=(), covariate_levels=None):
        records = list(records)
        if not records:
            raise ValueError("a dataset needs at least one record")
        k = len(records[0].x)
        pa_arity = None if records[0].pa is None else len(records[0].pa)
        for r in records:
            if len(r.x) != k:
                raise ValueError("records have differing covariate arity")
            if (None if r.pa is None else len(r.pa)) != pa_arity:
                raise ValueError("records have differing propensity arity")
        names = tuple(covariate_names) or tuple(f"x{j + 1}" for j in range(k))
        if covariate_levels is None:
            covariate_levels = [tuple(sorted({str(r.x[j]) for r in records})) for j in range(k)]
        lookup = [{lv: i for i, lv in enumerate(levels)} for levels in covariate_levels]
        x = np.array([[lookup[j][str(r.x[j])] for j in range(k)] for r in records],
                     dtype=np.int64).reshape(len(records), k)
        has_truth = any(r.o_true is not None for r in records)
        return cls(
            t=[r.t for r in records],
            s=[r.s for r in records],
            a=[r.a for r in records],
            o_star=[MISSING if r.o_star is None else r.o_star for r in records],
            x=x,
            covariate_names=names,
            covariate_levels=covariate_levels,
            pa=None if pa_arity is None else [list(r.pa) for r in records],
            o_true=[(-1 if r.o_true is None else r.o_true) for r in records] if has_truth else None,
        )

    def record(self, i) -> TrialRecord:
        o = int(self.o_star[i])
        return TrialRecord(
            t=int(self.t[i]),
            s=int(self.s[i]),
            a=int(self.a[i]),
            o_star=None if o == MISSING else o,
            x=tuple(self.covariate_levels[j][self.x[i, j]] for j in range(self.x.shape[1])),
            pa=None if self.pa is None else tuple(float(v) for v in self.pa[i]),
            o_true=None if self.o_true is None else int(self.o_true[i]),
        )

    @property
    def records(self):
        return [self.record(i) for i in range(len(self))]

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def take(self, idx):
        idx = np.asarray(idx)
        return TrialDataset(
            self.t[idx], self.s[idx], self.a[idx], self.o_star[idx], self.x[idx],
            self.covariate_names, self.covariate_levels,
            None if self.pa is None else self.pa[idx],
            None if self.o_true is None else self.o_true[idx],
            validate=False,
        )

    def observed(self):
        """View without the ground-truth column; what estimators receive."""
        if self.o_true is None:
            return self
        return TrialDataset(self.t, self.s, self.a, self.o_star, self.x, self.covariate_names,
                            self.covariate_levels, self.pa, None, validate=False)

    def unmasked(self):
        """Complete-data dataset built from ``o_true`` (simulation truth)."""
        if self.o_true is None:
            raise ValueError("dataset carries no ground-truth outcome")
        ones = np.ones(len(self), dtype=np.int8)
        return TrialDataset(self.t, self.s, ones, self.o_true, self.x, self.covariate_names,
                            self.covariate_levels, self.pa, None, validate=False)

    def missing_rate(self, t):
        arm = self.t == t
        if not arm.any():
            return float("nan")
        return float(np.mean(self.a[arm] == 0))

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented

        def same(u, v):
            if u is None or v is None:
                return u is None and v is None
            return u.shape == v.shape and np.array_equal(u, v)

        return (
            self.covariate_names == other.covariate_names
            and self.covariate_levels == other.covariate_levels
            and all(same(getattr(self, c), getattr(other, c))
                    for c in ("t", "s", "a", "o_star", "x", "pa", "o_true"))
        )

    def __repr__(self):
        return (f"TrialDataset(n={len(self)}, covariates={list(self.covariate_names)}, "
                f"pa_arity={self.pa_arity})")


@dataclass(frozen=True)
class AdjustmentSpec:
    """Adjustment set W.

    ``components`` entries are covariate names (with or without the ``x_``
    prefix), ``"s"`` for the intercurrent event, ``"pa"`` for every
    propensity dimension, or a single propensity column such as ``"pa_01"``.
    """

    components: tuple = ()
    bins: int = 5
    scenario_hint: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.bins < 1:
            raise ValueError("bins must be >= 1")

    @classmethod
    def parse(cls, text, bins=5, scenario_hint=None):
        parts = [p.strip() for p in (text or "").split(",") if p.strip()]
        return cls(tuple(parts), bins=bins, scenario_hint=scenario_hint)


@dataclass(frozen=True)
class StratifiedCounts:
    """Exact joint counts over (W-stratum, T, O*, A).

    ``cells[k, t, j]``: j=0 observed O*=0, j=1 observed O*=1, j=2 missing.
    Entries are integers, or exact ``Fraction`` masses when the table is
    built from a distribution.
    """

    components: tuple
    keys: tuple
    codes: np.ndarray
    cells: np.ndarray
    levels: tuple = field(default=())

    def __post_init__(self):
        if any(len(k) != len(self.components) for k in self.keys):
            raise ValueError("stratum key arity does not match the adjustment")
        if len(self.keys) != self.cells.shape[0]:
            raise ValueError("one key per stratum is required")

    @property
    def n_strata(self):
        return len(self.keys)

    def index(self, w):
        if isinstance(w, Integral):
            return int(w)
        return self.keys.index(tuple(w))

    def cell(self, k, t, j):
        v = self.cells[k, t, j]
        return int(v) if isinstance(v, (np.integer, Integral)) else v

    def arm(self, k, t):
        """(observed failures, observed successes, missing) for arm t in stratum k."""
        return self.cell(k, t, 0), self.cell(k, t, 1), self.cell(k, t, 2)

    def n_w(self, k):
        return sum(self.cell(k, t, j) for t in (0, 1) for j in range(3))

    def n_tw(self, k, t):
        return sum(self.cell(k, t, j) for j in range(3))

    def n_t(self, t):
        return _total(self.cells[:, t, :])

    @property
    def total(self):
        return _total(self.cells)

    def is_exact(self):
        return self.cells.dtype == object


def _total(arr):
    if arr.dtype == object:
        return sum(arr.ravel().tolist(), Fraction(0))
    return int(arr.sum())


def ratio(num, den):
    """num/den, or None for an empty conditioning event.

    Integer inputs give a correctly rounded float; Fractions stay exact.
    """
    if den == 0:
        return None
    if isinstance(num, Fraction) or isinstance(den, Fraction):
        return Fraction(num) / Fraction(den)
    return num / den


def _component_columns(data: TrialDataset, adjustment: AdjustmentSpec):
    cols, labels, names = [], [], []
    for comp in adjustment.components:
        key = comp.strip()
        low = key.lower()
        if low == "s":
            cols.append(data.s.astype(np.int64))
            labels.append((0, 1))
            names.append("s")
        elif low == "pa" or low.startswith("pa_"):
            if data.pa is None:
                raise ValueError("propensity bins requested but the dataset has no propensities")
            if low == "pa":
                which = list(range(data.pa_arity))
            else:
                if low not in data.pa_columns:
                    raise ValueError(f"propensity column {key!r} not present "
                                     f"(dataset has {', '.join(data.pa_columns)})")
                which = [data.pa_columns.index(low)]
            bins = adjustment.bins
            for j in which:
                code = np.minimum(np.floor(data.pa[:, j] * bins), bins - 1).astype(np.int64)
                cols.append(code)
                labels.append(tuple(range(bins)))
                names.append(data.pa_columns[j])
        else:
            name = key[2:] if key.startswith("x_") and key[2:] in data.covariate_names else key
            if name not in data.covariate_names:
                raise ValueError(f"unknown covariate {key!r}")
            j = data.covariate_names.index(name)
            cols.append(data.x[:, j])
            labels.append(data.covariate_levels[j])
            names.append(name)
    return cols, labels, names


def pa_bin(value, bins):
    """Equal-width bin index over [0, 1] (right edge folded into the last bin)."""
    return min(int(np.floor(value * bins)), bins - 1)


def build_counts(data: TrialDataset, adjustment: AdjustmentSpec = AdjustmentSpec()) -> StratifiedCounts:
    """Partition rows by the adjustment set and count (T, O*, A) per stratum."""
    data = data.observed()
    n = len(data)
    if n == 0:
        raise ValueError("cannot stratify an empty dataset")
    cols, labels, names = _component_columns(data, adjustment)
    if cols:
        mat = np.stack(cols, axis=1)
        uniq, inverse = np.unique(mat, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
    else:
        uniq = np.zeros((1, 0), dtype=np.int64)
        inverse = np.zeros(n, dtype=np.int64)
    keys = tuple(
        tuple(labels[j][int(row[j])] for j in range(len(names))) for row in uniq
    )
    cells = _kernels.count_cells(inverse, data.t, np.maximum(data.o_star, 0), data.a, len(keys))
    return StratifiedCounts(
        components=tuple(names),
        keys=keys,
        codes=uniq.astype(np.int64),
        cells=np.asarray(cells, dtype=np.int64),
        levels=tuple(labels),
    )


def counts_from_cells(cells, components=None, keys=None, levels=None):
    """Build a StratifiedCounts directly from a (K, 2, 3) cell table.

    Cells may hold integers or ``Fraction`` probability masses.
    """
    cells = np.asarray(cells)
    if cells.dtype != object:
        cells = cells.astype(np.int64)
    k = cells.shape[0]
    if components is None:
        components = () if k == 1 and keys is None else ("w",)
    components = tuple(components)
    if keys is None:
        keys = ((),) if not components else tuple((i,) for i in range(k))
    keys = tuple(tuple(key) for key in keys)
    if levels is None:
        levels = tuple(tuple(sorted({key[j] for key in keys}, key=repr))
                       for j in range(len(components)))
    codes = np.array([[levels[j].index(key[j]) for j in range(len(components))] for key in keys],
                     dtype=np.int64).reshape(k, len(components))
    return StratifiedCounts(components, keys, codes, cells, tuple(levels))


QUERIES = ("t|w", "t|o,w", "o|t,w", "a|t,w", "a|w", "w", "w|t", "t")


def prob(counts: StratifiedCounts, query: str, *, t=None, o=None, a=None, w=None):
    """Empirical probability for one of the closed set of estimator queries.

    ``query`` is one of ``"t|w"``, ``"t|o,w"`` (observed rows only),
    ``"o|t,w"`` (observed rows only), ``"a|t,w"``, ``"a|w"``, ``"w"``,
    ``"w|t"`` and ``"t"``. Returns ``None`` when the conditioning event has
    zero count.
    """
    if query not in QUERIES:
        raise ValueError(f"malformed probability query {query!r}")
    needs = {
        "t|w": ("t", "w"), "t|o,w": ("t", "o", "w"), "o|t,w": ("o", "t", "w"),
        "a|t,w": ("a", "t", "w"), "a|w": ("a", "w"), "w": ("w",), "w|t": ("w", "t"),
        "t": ("t",),
    }[query]
    given = {"t": t, "o": o, "a": a, "w": w}
    for name in needs:
        if given[name] is None:
            raise ValueError(f"query {query!r} needs {name}")
    for name in ("t", "o", "a"):
        if name in needs and given[name] not in (0, 1):
            raise ValueError(f"{name} must be 0 or 1")
    k = counts.index(w) if w is not None else None
    c = counts.cell
    if query == "t|w":
        return ratio(counts.n_tw(k, t), counts.n_w(k))
    if query == "t|o,w":
        return ratio(c(k, t, o), c(k, 0, o) + c(k, 1, o))
    if query == "o|t,w":
        return ratio(c(k, t, o), c(k, t, 0) + c(k, t, 1))
    if query == "a|t,w":
        num = c(k, t, 0) + c(k, t, 1) if a == 1 else c(k, t, 2)
        return ratio(num, counts.n_tw(k, t))
    if query == "a|w":
        if a == 1:
            num = sum(c(k, u, j) for u in (0, 1) for j in (0, 1))
        else:
            num = c(k, 0, 2) + c(k, 1, 2)
        return ratio(num, counts.n_w(k))
    if query == "w":
        return ratio(counts.n_w(k), counts.total)
    if query == "w|t":
        return ratio(counts.n_tw(k, t), counts.n_t(t))
    return ratio(counts.n_t(t), counts.total)
