"""Property-based checks of the package invariants."""
from fractions import Fraction

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trialmiss.dag import Dag, d_separated, d_separated_by_paths
from trialmiss.data import AdjustmentSpec, TrialDataset, build_counts, counts_from_cells, prob
from trialmiss.estimators import delta_ate, phi
from trialmiss.identification import rho0
from trialmiss.io import emit_report, load_csv, write_csv
from trialmiss.montecarlo import _percentiles
from trialmiss.robustify import BoundInterval, GapPolicy, rho_bounds, smooth_value

cell_tables = arrays(np.int64, st.tuples(st.integers(1, 4), st.just(2), st.just(3)), elements=st.integers(0, 12))
unit = st.fractions(min_value=0, max_value=1, max_denominator=1000)
q_values = st.fractions(min_value=Fraction(1, 2), max_value=1, max_denominator=1000)


@given(cell_tables)
def test_stratum_probabilities_sum_to_one(cells):
    if cells.sum() == 0:
        return
    exact = counts_from_cells(np.vectorize(Fraction, otypes=[object])(cells))
    assert sum(prob(exact, "w", w=k) for k in range(exact.n_strata)) == 1
    for t in (0, 1):
        if exact.n_t(t) > 0:
            assert sum(prob(exact, "w|t", w=k, t=t) for k in range(exact.n_strata)) == 1


@given(cell_tables)
def test_prob_is_pure(cells):
    counts = counts_from_cells(cells)
    for k in range(counts.n_strata):
        assert prob(counts, "t|w", t=1, w=k) == prob(counts, "t|w", t=1, w=k)


@given(cell_tables)
def test_rho0_treatment_symmetry(cells):
    counts = counts_from_cells(cells)
    for k in range(counts.n_strata):
        r1, r0 = rho0(counts, k, 1), rho0(counts, k, 0)
        if r1 is not None and r0 is not None:
            assert abs(r1 - r0) <= 1e-12 * max(1.0, abs(r1))


@given(cell_tables)
def test_bound_width_identity(cells):
    counts = counts_from_cells(cells)
    for k in range(counts.n_strata):
        for t in (0, 1):
            fail, succ, miss = counts.arm(k, t)
            if fail + succ + miss == 0:
                continue
            b = rho_bounds(counts, k, t)
            assert 0 <= b.lb <= b.ub <= 1
            assert b.ub - b.lb == Fraction(miss, fail + succ + miss)


@given(unit, unit, q_values, q_values)
def test_smoothing_convex_and_monotone(r, fb, q1, q2):
    v1, v2 = smooth_value(r, fb, q1), smooth_value(r, fb, q2)
    assert min(r, fb) <= v1 <= max(r, fb)
    lo, hi = (v1, v2) if q1 <= q2 else (v2, v1)
    # moving q towards 1 moves the value towards rho
    if q1 != q2:
        assert abs(hi - r) <= abs(lo - r) or abs(lo - r) <= abs(hi - r)
        near, far = (v2, v1) if q2 > q1 else (v1, v2)
        assert abs(near - r) <= abs(far - r)


@given(st.floats(-2, 2), st.floats(0, 1), st.floats(0, 1))
def test_clip_idempotent(v, x, y):
    b = BoundInterval(min(x, y), max(x, y))
    assert b.clip(b.clip(v)) == b.clip(v)
    assert b.contains(b.clip(v))


@st.composite
def complete_data(draw):
    n = draw(st.integers(8, 60))
    t = draw(arrays(np.int64, n, elements=st.integers(0, 1)))
    o = draw(arrays(np.int64, n, elements=st.integers(0, 1)))
    x = draw(arrays(np.int64, (n, 1), elements=st.integers(0, 2)))
    return TrialDataset(t, np.zeros(n, int), np.ones(n, int), o, x, ("x1",), [("0", "1", "2")])


@settings(suppress_health_check=[HealthCheck.too_slow])
@given(complete_data())
def test_complete_data_identity(data):
    if data.t.min() == data.t.max():
        return
    counts = build_counts(data, AdjustmentSpec(("x1",)))
    p = [data.o_star[data.t == t].mean() for t in (0, 1)]
    for t in (0, 1):
        rep = phi(counts, t)
        assert abs(rep.point - p[t]) <= 1e-12
        weights = sum(d.weight for d in rep.strata)
        assert abs(weights - 1) <= 1e-9
    assert abs(delta_ate(counts).point - (p[1] - p[0])) <= 1e-12


@settings(suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(5, 40), st.integers(0, 2**32 - 1))
def test_single_bin_matches_no_propensities(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    data = TrialDataset(rng.integers(0, 2, n), np.zeros(n, int), a, np.where(a == 1, rng.integers(0, 2, n), -1),
                        pa=rng.random((n, 2)))
    np.testing.assert_array_equal(build_counts(data, AdjustmentSpec(("pa",), bins=1)).cells,
                                  build_counts(data).cells)


@st.composite
def small_dags(draw):
    n = draw(st.integers(2, 6))
    names = [f"v{i}" for i in range(n)]
    edges = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n) if draw(st.booleans())]
    return Dag(edges, names)


@given(small_dags(), st.data())
def test_dsep_symmetric_and_matches_paths(g, data):
    x, y = data.draw(st.lists(st.sampled_from(g.nodes), min_size=2, max_size=2, unique=True))
    rest = [v for v in g.nodes if v not in (x, y)]
    zs = data.draw(st.lists(st.sampled_from(rest), unique=True)) if rest else []
    sep = d_separated(g, {x}, {y}, zs)
    assert sep == d_separated(g, {y}, {x}, zs)
    assert sep == d_separated_by_paths(g, {x}, {y}, zs)


@given(small_dags(), st.data())
def test_adding_edges_never_separates(g, data):
    x, y = data.draw(st.lists(st.sampled_from(g.nodes), min_size=2, max_size=2, unique=True))
    rest = [v for v in g.nodes if v not in (x, y)]
    zs = data.draw(st.lists(st.sampled_from(rest), unique=True)) if rest else []
    if d_separated(g, {x}, {y}, zs):
        return
    nodes = list(g.nodes)  # names are in topological order by construction
    i, j = sorted(data.draw(st.lists(st.integers(0, len(nodes) - 1), min_size=2, max_size=2, unique=True)))
    if (nodes[i], nodes[j]) in g.edges:
        return
    assert not d_separated(g.with_edge(nodes[i], nodes[j]), {x}, {y}, zs)


@given(cell_tables)
def test_emit_report_deterministic(cells):
    counts = counts_from_cells(cells)
    if counts.n_t(1) == 0:
        return
    rep = phi(counts, 1, GapPolicy())
    for fmt in ("json", "csv", "text"):
        assert emit_report(rep, fmt) == emit_report(phi(counts, 1, GapPolicy()), fmt)


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow], max_examples=30)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_csv_roundtrip(tmp_path, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    o = rng.integers(0, 2, n)
    data = TrialDataset(rng.integers(0, 2, n), rng.integers(0, 2, n), a, np.where(a == 1, o, -1),
                        rng.integers(0, 3, (n, 1)), ("site",), [("a", "b", "c")], rng.random((n, 4)), o)
    path = tmp_path / f"{seed}.csv"
    write_csv(data, path)
    back, report = load_csv(path)
    assert report.ok
    for col in ("t", "s", "a", "o_star", "pa", "o_true"):
        np.testing.assert_array_equal(getattr(back, col), getattr(data, col))
    labels = [data.covariate_levels[0][c] for c in data.x[:, 0]]
    assert [back.covariate_levels[0][c] for c in back.x[:, 0]] == labels


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=50))
def test_percentile_pair_ordered(values):
    ci = _percentiles(values, len(values))
    assert ci.low <= ci.high
