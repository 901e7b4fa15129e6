"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``TRIALMISS_BACKEND``
(``numba`` or ``numpy``). When unset, numba is used if it imports.
Both implementations are always importable through ``NUMBA_KERNELS`` and
``NUMPY_KERNELS`` so tests and benchmarks can compare them directly.

Cell layout used everywhere: ``cells[..., k, t, j]`` where ``k`` is the
stratum index, ``t`` the arm and ``j`` is 0 for an observed failure
(O*=0), 1 for an observed success (O*=1) and 2 for a missing outcome.
"""
import math
import os
import warnings

import numpy as np

# Policy codes shared by both backends.
MODE_MIDPOINT = 0
MODE_SMOOTH = 1
MODE_SKIP = 2

FALLBACK_MIDPOINT = 0
FALLBACK_NAIVE = 1
FALLBACK_MAR = 2

_SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def count_cells_numpy(codes, t, o, a, n_strata):
    slot = np.where(a == 1, o, 2).astype(np.int64)
    flat = codes.astype(np.int64) * 6 + t.astype(np.int64) * 3 + slot
    return np.bincount(flat, minlength=n_strata * 6).reshape(n_strata, 2, 3)


def _normal_cdf_np(z):
    from math import erf

    return 0.5 * (1.0 + np.vectorize(erf, otypes=[float])(z / _SQRT2))


def phi_batch_numpy(cells, t, mode, fallback, clip):
    """Vectorized stratified estimate of P(O|T=t) for a batch of tables.

    ``cells`` has shape (B, K, 2, 3). Returns shape (B,) with NaN where the
    estimate is undefined.
    """
    cells = np.asarray(cells, dtype=np.float64)
    u = 1 - t
    a = cells[:, :, t, 1]
    b = cells[:, :, t, 0]
    m = cells[:, :, t, 2]
    c = cells[:, :, u, 1]
    d = cells[:, :, u, 0]
    mu = cells[:, :, u, 2]
    n_tw = a + b + m
    n_w = n_tw + c + d + mu
    n_t = n_tw.sum(axis=1, keepdims=True)
    present = n_tw > 0

    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(present, n_tw / n_t, 0.0)
        lb = np.where(present, a / n_tw, 0.0)
        ub = np.where(present, (a + m) / n_tw, 0.0)
        lack = ((a + c) == 0) | ((b + d) == 0)
        det = a * d - b * c
        undefined = lack | (det == 0) | ~present
        rho = (a * (n_tw * (b + d) - b * n_w)) / (n_tw * det)
        mid = 0.5 * (lb + ub)

        value = rho
        if mode == MODE_SMOOTH:
            if fallback == FALLBACK_MIDPOINT:
                r = mid
                r_ok = present
            elif fallback == FALLBACK_NAIVE:
                obs_t = (a + b).sum(axis=1, keepdims=True)
                naive = a.sum(axis=1, keepdims=True) / obs_t
                r = np.broadcast_to(naive, a.shape)
                r_ok = np.broadcast_to(obs_t > 0, a.shape)
            else:
                r = a / (a + b)
                r_ok = (a + b) > 0
            n1 = a + c
            n0 = b + d
            delta = a / n1 - b / n0
            pbar = (a + b) / (n1 + n0)
            se = np.sqrt(pbar * (1.0 - pbar) * (1.0 / n1 + 1.0 / n0))
            z = np.abs(delta) / se
            z = np.where(np.isfinite(z), z, 0.0)
            qs = np.maximum(0.5, _normal_cdf_np(z))
            smoothed = (2.0 * qs - 1.0) * rho + 2.0 * (1.0 - qs) * r
            undefined = undefined | ~r_ok
            value = smoothed

        if clip:
            value = np.minimum(np.maximum(value, lb), ub)

        if mode == MODE_SKIP:
            keep = present & ~undefined
            wsum = np.where(keep, weight, 0.0).sum(axis=1)
            total = np.where(keep, weight * value, 0.0).sum(axis=1)
            out = np.where(wsum > 0, total / wsum, np.nan)
        else:
            value = np.where(undefined, mid, value)
            out = np.where(present, weight * value, 0.0).sum(axis=1)
            out = np.where(n_t[:, 0] > 0, out, np.nan)
    return out


def multinomial_resample_numpy(cells, n_resamples, rng):
    """Draw bootstrap count tables; row resampling == multinomial over cells."""
    flat = np.asarray(cells, dtype=np.int64).ravel()
    total = int(flat.sum())
    draws = rng.multinomial(total, flat / total, size=n_resamples)
    return draws.reshape((n_resamples,) + np.shape(cells))


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

try:
    import numba as nb

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAS_NUMBA = False


if HAS_NUMBA:

    @nb.njit(cache=True)
    def count_cells_numba(codes, t, o, a, n_strata):
        out = np.zeros((n_strata, 2, 3), dtype=np.int64)
        for i in range(codes.shape[0]):
            slot = o[i] if a[i] == 1 else 2
            out[codes[i], t[i], slot] += 1
        return out

    @nb.njit(cache=True)
    def _phi_one(tab, t, mode, fallback, clip):
        u = 1 - t
        k_n = tab.shape[0]
        n_t = 0.0
        obs_t = 0.0
        succ_t = 0.0
        for k in range(k_n):
            n_t += tab[k, t, 0] + tab[k, t, 1] + tab[k, t, 2]
            obs_t += tab[k, t, 0] + tab[k, t, 1]
            succ_t += tab[k, t, 1]
        if n_t == 0.0:
            return np.nan
        total = 0.0
        wsum = 0.0
        for k in range(k_n):
            a = tab[k, t, 1]
            b = tab[k, t, 0]
            m = tab[k, t, 2]
            c = tab[k, u, 1]
            d = tab[k, u, 0]
            mu = tab[k, u, 2]
            n_tw = a + b + m
            if n_tw == 0.0:
                continue
            n_w = n_tw + c + d + mu
            weight = n_tw / n_t
            lb = a / n_tw
            ub = (a + m) / n_tw
            mid = 0.5 * (lb + ub)
            det = a * d - b * c
            undefined = (a + c) == 0.0 or (b + d) == 0.0 or det == 0.0
            value = mid
            if not undefined:
                value = (a * (n_tw * (b + d) - b * n_w)) / (n_tw * det)
                if mode == MODE_SMOOTH:
                    r_ok = True
                    if fallback == FALLBACK_MIDPOINT:
                        r = mid
                    elif fallback == FALLBACK_NAIVE:
                        if obs_t > 0.0:
                            r = succ_t / obs_t
                        else:
                            r = 0.0
                            r_ok = False
                    else:
                        if a + b > 0.0:
                            r = a / (a + b)
                        else:
                            r = 0.0
                            r_ok = False
                    if r_ok:
                        n1 = a + c
                        n0 = b + d
                        delta = a / n1 - b / n0
                        pbar = (a + b) / (n1 + n0)
                        se = math.sqrt(pbar * (1.0 - pbar) * (1.0 / n1 + 1.0 / n0))
                        z = 0.0
                        if se > 0.0:
                            z = abs(delta) / se
                        qs = 0.5 * (1.0 + math.erf(z / _SQRT2))
                        if qs < 0.5:
                            qs = 0.5
                        value = (2.0 * qs - 1.0) * value + 2.0 * (1.0 - qs) * r
                    else:
                        undefined = True
                        value = mid
                if clip and not undefined:
                    if value < lb:
                        value = lb
                    elif value > ub:
                        value = ub
            if mode == MODE_SKIP:
                if undefined:
                    continue
                wsum += weight
                total += weight * value
            else:
                total += weight * value
        if mode == MODE_SKIP:
            if wsum == 0.0:
                return np.nan
            return total / wsum
        return total

    @nb.njit(cache=True)
    def phi_batch_numba(cells, t, mode, fallback, clip):
        out = np.empty(cells.shape[0])
        for i in range(cells.shape[0]):
            out[i] = _phi_one(cells[i], t, mode, fallback, clip)
        return out

    def multinomial_resample_numba(cells, n_resamples, rng):
        # numba cannot consume a numpy Generator; resampling stays in numpy
        return multinomial_resample_numpy(cells, n_resamples, rng)


NUMPY_KERNELS = {
    "count_cells": count_cells_numpy,
    "phi_batch": phi_batch_numpy,
    "multinomial_resample": multinomial_resample_numpy,
}

if HAS_NUMBA:
    NUMBA_KERNELS = {
        "count_cells": count_cells_numba,
        "phi_batch": lambda cells, t, mode, fallback, clip: phi_batch_numba(
            np.ascontiguousarray(cells, dtype=np.float64), t, mode, fallback, bool(clip)
        ),
        "multinomial_resample": multinomial_resample_numba,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = None


def _select_backend():
    requested = os.environ.get("TRIALMISS_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy", NUMPY_KERNELS
    if requested not in ("", "numba"):
        warnings.warn(f"unknown TRIALMISS_BACKEND={requested!r}; using default")
    if HAS_NUMBA:
        return "numba", NUMBA_KERNELS
    if requested == "numba":  # pragma: no cover
        warnings.warn("numba requested but not importable; using numpy kernels")
    return "numpy", NUMPY_KERNELS


BACKEND, _ACTIVE = _select_backend()


def count_cells(codes, t, o, a, n_strata):
    """Integer cell counts of shape (n_strata, 2, 3)."""
    return _ACTIVE["count_cells"](
        np.ascontiguousarray(codes, dtype=np.int64),
        np.ascontiguousarray(t, dtype=np.int64),
        np.ascontiguousarray(o, dtype=np.int64),
        np.ascontiguousarray(a, dtype=np.int64),
        int(n_strata),
    )


def phi_batch(cells, t, mode=MODE_MIDPOINT, fallback=FALLBACK_MIDPOINT, clip=True):
    return _ACTIVE["phi_batch"](cells, int(t), int(mode), int(fallback), bool(clip))


def multinomial_resample(cells, n_resamples, rng):
    return _ACTIVE["multinomial_resample"](cells, int(n_resamples), rng)
