"""Built-in experiment grids.

The generative coefficients are choices of this package. Three
three-level covariates give 27 covariate cells (54 strata once S is
added), so small samples leave some strata without usable outcome
contrasts. That is the regime where bounds and smoothing matter.
Missingness is driven mainly by the outcome itself (``a_o``).
"""
from .montecarlo import EstimatorConfig, MonteCarloGrid
from .robustify import GapPolicy
from .simulation import CovariateSpec, ScenarioSpec

N_VALUES = (1000, 5000, 20000)
EFFECTS = (0.5, 1.0, 2.0)

COVARIATES = (
    CovariateSpec("x1", (0.4, 0.3, 0.3)),
    CovariateSpec("x2", (0.3, 0.4, 0.3)),
    CovariateSpec("x3", (0.3, 0.3, 0.4)),
)

_COMMON = dict(
    covariates=COVARIATES,
    u_probs=(0.5, 0.5),
    s_intercept=-1.0,
    effect_t_on_s=0.5,
    s_x=0.3,
    s_u=0.5,
    o_intercept=-1.0,
    effect_s_on_o=-0.5,
    o_x=0.3,
    o_u=0.5,
    a_intercept=0.0,
    a_o=2.0,
    a_s=-1.0,
    a_x=0.2,
)

INTERNAL = ScenarioSpec(mechanism="sa_internal", **_COMMON)
EXTERNAL = ScenarioSpec(mechanism="sa_external_pr", a_u=0.8, **_COMMON)

# Resampled sign stability is exactly 1 when no resample flips the sign,
# so well-identified strata are left untouched by the smoothing.
SMOOTH = GapPolicy(mode="smooth", ps_method="bootstrap", resamples=200)

CONFIG = EstimatorConfig(estimators=("naive", "mnar", "smoothed"), bins=5, smooth_policy=SMOOTH)

PRESETS = {
    "paper-internal": MonteCarloGrid(INTERNAL, N_VALUES, EFFECTS, CONFIG),
    "paper-external": MonteCarloGrid(EXTERNAL, N_VALUES, EFFECTS, CONFIG),
}


def preset(name) -> MonteCarloGrid:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
