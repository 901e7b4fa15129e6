import numpy as np
import pytest
from hypothesis import settings

from trialmiss.data import MISSING, TrialDataset

# JIT compilation makes the first example of a test slow, so no per-example deadline.
settings.register_profile("trialmiss", deadline=None)
settings.load_profile("trialmiss")


def complete_dataset(rng, n=200, levels=(2,), p_treat=0.5):
    """Fully observed dataset with random covariates and outcome probabilities."""
    k = len(levels)
    x = np.stack([rng.integers(0, m, n) for m in levels], axis=1) if k else np.zeros((n, 0), int)
    t = (rng.random(n) < p_treat).astype(int)
    s = rng.integers(0, 2, n)
    cell = np.zeros(n, dtype=int)
    for j, m in enumerate(levels):
        cell = cell * m + x[:, j]
    p = rng.uniform(0.15, 0.85, size=(int(np.prod(levels)) if k else 1, 2))
    o = (rng.random(n) < p[cell, t]).astype(int)
    return TrialDataset(t, s, np.ones(n, int), o, x, tuple(f"x{j + 1}" for j in range(k)), o_true=o)


def masked(data: TrialDataset, a):
    """Copy of ``data`` with availability ``a`` applied to the outcome."""
    a = np.asarray(a, dtype=int)
    o = data.o_true if data.o_true is not None else data.o_star
    return TrialDataset(data.t, data.s, a, np.where(a == 1, o, MISSING), data.x, data.covariate_names,
                        data.covariate_levels, data.pa, o)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
