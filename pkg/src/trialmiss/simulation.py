"""Synthetic trials drawn from the missingness scenario graphs.

Every structural equation is logistic in its parents. Covariates enter
through their integer level code times a coefficient.
"""
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .dag import ScenarioDagId
from .data import MISSING, TrialDataset


def expit(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    probs: tuple

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if len(probs) < 1 or any(p < 0 for p in probs) or not np.isclose(sum(probs), 1.0):
            raise ValueError(f"covariate {self.name}: level probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def levels(self):
        return len(self.probs)


# Coefficients into A that each mechanism's graph allows.
_ALLOWED_A = {
    ScenarioDagId.MCAR: set(),
    ScenarioDagId.MAR: {"a_s", "a_x"},
    ScenarioDagId.OA_INTERNAL: {"a_o", "a_x"},
    ScenarioDagId.OA_EXTERNAL: {"a_o", "a_x", "a_u"},
    ScenarioDagId.SA_INTERNAL: {"a_o", "a_s", "a_x"},
    ScenarioDagId.SA_EXTERNAL: {"a_o", "a_s", "a_x", "a_u"},
    ScenarioDagId.OA_EXTERNAL_PR: {"a_o", "a_x", "a_u"},
    ScenarioDagId.SA_EXTERNAL_PR: {"a_o", "a_s", "a_x", "a_u"},
}
_A_COEFS = ("a_o", "a_s", "a_x", "a_u")


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative parameters for one scenario.

    ``*_x`` coefficients are per covariate (a scalar applies to all).
    ``a_intercept`` may be ``inf`` to make every outcome available.
    """

    mechanism: ScenarioDagId = ScenarioDagId.SA_INTERNAL
    n: int = 1000
    p_treat: float = 0.5
    covariates: tuple = (CovariateSpec("x1", (0.5, 0.5)),)
    u_probs: tuple = (0.5, 0.5)
    s_intercept: float = -1.0
    effect_t_on_s: float = 0.5
    s_x: object = 0.5
    s_u: float = 0.5
    o_intercept: float = -0.5
    effect_t_on_o: float = 1.0
    effect_s_on_o: float = -0.5
    o_x: object = 0.5
    o_u: float = 0.5
    a_intercept: float = 1.0
    a_o: float = 0.0
    a_s: float = 0.0
    a_x: object = 0.0
    a_u: float = 0.0
    pa_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mechanism", ScenarioDagId.parse(self.mechanism))
        covs = tuple(c if isinstance(c, CovariateSpec) else CovariateSpec(**c) for c in self.covariates)
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "u_probs", tuple(float(p) for p in self.u_probs))
        for name in ("s_x", "o_x", "a_x"):
            object.__setattr__(self, name, self._per_covariate(getattr(self, name), name))
        self.validate()

    def _per_covariate(self, value, name):
        if np.isscalar(value):
            return (float(value),) * len(self.covariates)
        value = tuple(float(v) for v in value)
        if len(value) != len(self.covariates):
            raise ValueError(f"{name} needs one coefficient per covariate")
        return value

    def validate(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.p_treat < 1.0:
            raise ValueError("p_treat must lie in (0, 1)")
        if not np.isclose(sum(self.u_probs), 1.0) or any(p < 0 for p in self.u_probs):
            raise ValueError("u_probs must be >= 0 and sum to 1")
        if self.pa_noise < 0:
            raise ValueError("pa_noise must be >= 0")
        allowed = _ALLOWED_A[self.mechanism]
        for name in _A_COEFS:
            value = getattr(self, name)
            nonzero = any(v != 0 for v in value) if isinstance(value, tuple) else value != 0
            if nonzero and name not in allowed:
                raise ValueError(f"mechanism {self.mechanism.value} forbids a nonzero {name}")
        if self.mechanism.is_pr and not np.isfinite(self.a_intercept):
            raise ValueError("elicited-propensity scenarios need a finite a_intercept")

    def conform(self):
        """Copy with the coefficients the mechanism forbids set to zero."""
        allowed = _ALLOWED_A[self.mechanism]
        changes = {}
        for name in _A_COEFS:
            if name not in allowed:
                changes[name] = (0.0,) * len(self.covariates) if name == "a_x" else 0.0
        return _replace_unchecked(self, **changes)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["mechanism"] = self.mechanism.value
        d["covariates"] = [{"name": c.name, "probs": list(c.probs)} for c in self.covariates]
        for key, value in list(d.items()):
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        if "covariates" in d:
            d["covariates"] = tuple(
                c if isinstance(c, CovariateSpec) else CovariateSpec(c["name"], tuple(c["probs"]))
                for c in d["covariates"]
            )
        return cls(**d)


def _replace_unchecked(spec, **changes):
    d = {f.name: getattr(spec, f.name) for f in fields(spec)}
    d.update(changes)
    return ScenarioSpec(**d)


def _a_logit(spec, o, s, xlin, u):
    return spec.a_intercept + spec.a_o * o + spec.a_s * s + xlin + spec.a_u * u


def availability_propensities(spec: ScenarioSpec, x, u):
    """True P(A^{so}=1 | X, U) for each (s, o) pair, columns ordered 00, 10, 01, 11.

    OA scenarios return the two columns (o=0, o=1).
    """
    xlin = x @ np.asarray(spec.a_x) if x.shape[1] else np.zeros(x.shape[0])
    pairs = [(0, 0), (1, 0), (0, 1), (1, 1)]
    if spec.mechanism == ScenarioDagId.OA_EXTERNAL_PR:
        pairs = [(0, 0), (0, 1)]
    return np.stack([expit(_a_logit(spec, o, s, xlin, u)) for s, o in pairs], axis=1)


def generate(spec: ScenarioSpec, rng: Optional[np.random.Generator] = None) -> TrialDataset:
    """Draw one trial of ``spec.n`` patients.

    Without ``rng`` the generator is seeded from ``spec.seed``.
    """
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = spec.n
    k = len(spec.covariates)
    x = np.zeros((n, k), dtype=np.int64)
    for j, cov in enumerate(spec.covariates):
        x[:, j] = rng.choice(cov.levels, size=n, p=cov.probs)
    u = rng.choice(len(spec.u_probs), size=n, p=spec.u_probs).astype(float)
    xf = x.astype(float)
    t = (rng.random(n) < spec.p_treat).astype(np.int64)
    s_lin = spec.s_intercept + spec.effect_t_on_s * t + spec.s_u * u
    o_lin = spec.o_intercept + spec.effect_t_on_o * t + spec.o_u * u
    if k:
        s_lin = s_lin + xf @ np.asarray(spec.s_x)
        o_lin = o_lin + xf @ np.asarray(spec.o_x)
    s = (rng.random(n) < expit(s_lin)).astype(np.int64)
    o = (rng.random(n) < expit(o_lin + spec.effect_s_on_o * s)).astype(np.int64)

    pa = None
    if spec.mechanism.is_pr:
        pa_true = availability_propensities(spec, xf, u)
        draws = (rng.random(pa_true.shape) < pa_true).astype(np.int64)
        if spec.mechanism == ScenarioDagId.OA_EXTERNAL_PR:
            a = o * draws[:, 1] + (1 - o) * draws[:, 0]
        else:
            a = (s * o * draws[:, 3] + (1 - s) * o * draws[:, 2]
                 + s * (1 - o) * draws[:, 1] + (1 - s) * (1 - o) * draws[:, 0])
        pa = pa_true
        if spec.pa_noise > 0:
            pa = np.clip(pa * np.exp(rng.normal(0.0, spec.pa_noise, size=pa.shape)), 0.0, 1.0)
    elif np.isposinf(spec.a_intercept):
        a = np.ones(n, dtype=np.int64)
    else:
        xlin = xf @ np.asarray(spec.a_x) if k else 0.0
        a = (rng.random(n) < expit(_a_logit(spec, o, s, xlin, u))).astype(np.int64)

    o_star = np.where(a == 1, o, MISSING)
    return TrialDataset(
        t=t, s=s, a=a, o_star=o_star, x=x,
        covariate_names=tuple(c.name for c in spec.covariates),
        covariate_levels=tuple(tuple(str(v) for v in range(c.levels)) for c in spec.covariates),
        pa=pa, o_true=o, validate=False,
    )


def population_p_o_given_t(spec: ScenarioSpec, t):
    """Exact P(O=1|T=t) under ``spec`` by enumerating X, U and S."""
    total = 0.0
    grids = [np.arange(c.levels) for c in spec.covariates]
    mesh = np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(grids), -1).T if grids else np.zeros((1, 0))
    for xv in mesh:
        px = float(np.prod([c.probs[int(v)] for c, v in zip(spec.covariates, xv)])) if len(xv) else 1.0
        for uv, pu in enumerate(spec.u_probs):
            s_lin = spec.s_intercept + spec.effect_t_on_s * t + spec.s_u * uv + float(np.dot(xv, spec.s_x))
            ps1 = expit(s_lin)
            for sv, ps in ((0, 1 - ps1), (1, ps1)):
                o_lin = (spec.o_intercept + spec.effect_t_on_o * t + spec.effect_s_on_o * sv
                         + spec.o_u * uv + float(np.dot(xv, spec.o_x)))
                total += px * pu * ps * expit(o_lin)
    return float(total)


def default_adjustment(mechanism, covariate_names):
    """Adjustment components for a mechanism (the choice that makes T and A
    d-separated given W and O when one exists)."""
    sid = ScenarioDagId.parse(mechanism)
    cov = tuple(covariate_names)
    return {
        ScenarioDagId.MCAR: (),
        ScenarioDagId.MAR: cov + ("s",),
        ScenarioDagId.OA_INTERNAL: cov,
        ScenarioDagId.OA_EXTERNAL: cov,
        ScenarioDagId.SA_INTERNAL: cov + ("s",),
        ScenarioDagId.SA_EXTERNAL: cov + ("s",),
        ScenarioDagId.OA_EXTERNAL_PR: ("pa",),
        ScenarioDagId.SA_EXTERNAL_PR: ("pa", "s"),
    }[sid]
