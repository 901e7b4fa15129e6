from fractions import Fraction

import numpy as np
import pytest

from trialmiss.data import (
    AdjustmentSpec,
    MISSING,
    TrialDataset,
    TrialRecord,
    build_counts,
    counts_from_cells,
    pa_bin,
    prob,
)

from conftest import complete_dataset


def test_record_requires_outcome_iff_available():
    with pytest.raises(ValueError):
        TrialDataset([1], [0], [0], [1])
    with pytest.raises(ValueError):
        TrialDataset([1], [0], [1], [MISSING])


def test_propensities_must_lie_in_unit_interval():
    with pytest.raises(ValueError):
        TrialDataset([1, 0], [0, 0], [1, 1], [1, 0], pa=[[0.2, 1.2], [0.1, 0.1]])


def test_from_records_roundtrip():
    recs = [TrialRecord(1, 0, 1, 1, ("a",)), TrialRecord(0, 1, 0, None, ("b",))]
    data = TrialDataset.from_records(recs, covariate_names=("x1",))
    assert len(data) == 2
    assert data.record(1).o_star is None
    assert data.record(0).x == ("a",)


def test_two_level_covariate_gives_two_strata():
    data = TrialDataset([0, 1, 0, 1], [0, 0, 1, 1], [1, 1, 1, 1], [0, 1, 1, 0],
                        x=[[0], [1], [1], [0]], covariate_names=("x1",), covariate_levels=[("a", "b")])
    counts = build_counts(data, AdjustmentSpec(("x1",)))
    assert counts.n_strata == 2
    assert sum(counts.n_w(k) for k in range(2)) == 4
    assert set(counts.keys) == {("a",), ("b",)}


def test_empty_adjustment_is_one_stratum(rng):
    data = complete_dataset(rng, n=50)
    counts = build_counts(data)
    assert counts.n_strata == 1 and counts.n_w(0) == 50


def test_equal_width_binning():
    assert pa_bin(0.31, 5) == 1
    assert [pa_bin(v, 5) for v in (0.0, 0.2, 0.39999, 0.4, 0.99, 1.0)] == [0, 1, 1, 2, 4, 4]


def test_pa_bins_in_stratification(rng):
    n = 100
    pa = np.column_stack([rng.uniform(size=n), rng.uniform(size=n)])
    pa[0, 0] = 0.31
    data = TrialDataset(rng.integers(0, 2, n), np.zeros(n, int), np.ones(n, int), rng.integers(0, 2, n), pa=pa)
    counts = build_counts(data, AdjustmentSpec(("pa_0",), bins=5))
    assert counts.components == ("pa_0",)
    expected = np.bincount(np.minimum(np.floor(pa[:, 0] * 5), 4).astype(int), minlength=5)
    for key in counts.keys:
        assert counts.n_w(counts.index(key)) == expected[key[0]]
    alone = build_counts(data.take([0]), AdjustmentSpec(("pa_0",), bins=5))
    assert alone.keys == ((1,),)
    one_bin = build_counts(data, AdjustmentSpec(("pa",), bins=1))
    assert one_bin.n_strata == 1
    np.testing.assert_array_equal(one_bin.cells, build_counts(data).cells)


def test_unknown_covariate_and_missing_pa(rng):
    data = complete_dataset(rng, n=20)
    with pytest.raises(ValueError, match="unknown covariate"):
        build_counts(data, AdjustmentSpec(("age",)))
    with pytest.raises(ValueError, match="propensit"):
        build_counts(data, AdjustmentSpec(("pa",)))


def test_prob_hand_value():
    # one stratum: n(T=1,O*=1)=3, n(T=0,O*=1)=1
    counts = counts_from_cells([[[2, 1, 0], [1, 3, 0]]])
    assert prob(counts, "t|o,w", t=1, o=1, w=0) == 0.75


def test_prob_zero_count_is_undefined():
    counts = counts_from_cells([[[0, 0, 0], [1, 3, 0]]])
    assert prob(counts, "o|t,w", t=0, o=1, w=0) is None
    assert prob(counts, "w|t", w=0, t=0) is None


def test_prob_symmetry_when_counts_equal():
    counts = counts_from_cells([[[1, 1, 1], [1, 1, 1]]])
    assert prob(counts, "t|w", t=1, w=0) == 0.5


def test_prob_rejects_malformed_query():
    counts = counts_from_cells([[[1, 1, 1], [1, 1, 1]]])
    with pytest.raises(ValueError):
        prob(counts, "o|a", w=0)
    with pytest.raises(ValueError):
        prob(counts, "t|w", w=0)


def test_weights_sum_to_one_exactly(rng):
    data = complete_dataset(rng, n=300, levels=(3, 2))
    counts = build_counts(data, AdjustmentSpec(("x1", "x2", "s")))
    exact = counts_from_cells(np.vectorize(Fraction, otypes=[object])(counts.cells), counts.components,
                              counts.keys)
    assert sum(prob(exact, "w", w=k) for k in range(exact.n_strata)) == 1
    for t in (0, 1):
        assert sum(prob(exact, "w|t", w=k, t=t) for k in range(exact.n_strata)) == 1
        assert abs(sum(prob(counts, "w|t", w=k, t=t) for k in range(counts.n_strata)) - 1) < 1e-12


def test_counts_reproduce_marginals(rng):
    data = complete_dataset(rng, n=123, levels=(3,))
    counts = build_counts(data, AdjustmentSpec(("x1",)))
    assert counts.total == 123
    assert counts.n_t(1) == int(data.t.sum())
    assert int(counts.cells[:, :, 1].sum()) == int((data.o_star == 1).sum())


def test_estimators_never_see_truth(rng):
    data = complete_dataset(rng, n=30)
    assert data.observed().o_true is None
