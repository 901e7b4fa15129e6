"""Command-line interface: ``trialmiss {simulate,estimate,montecarlo,dsep,validate}``.

Exit codes: 0 success, 2 invalid input, 3 requested estimand undefined.
Machine-readable output goes to stdout or ``--out``; the resolved seed,
warnings and summaries go to stderr.
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dag import ScenarioDagId, builtin_dag, d_separated, dag_to_text, parse_dag_text, validate_adjustment
from .data import AdjustmentSpec, build_counts
from .estimators import EstimateReport, aclor, delta_ate, mar_estimate, naive_report, phi
from .io import DatasetError, emit_reports, load_csv, read_dataset, write_csv
from .montecarlo import ESTIMATORS, EstimatorConfig, MonteCarloGrid, bootstrap_ci, result_to_csv, run_montecarlo
from .plots import emit_plots
from .presets import PRESETS, preset
from .robustify import FALLBACKS, MODES, PS_METHODS, GapPolicy, unidentifiability_warning
from .simulation import ScenarioSpec, generate

EXIT_OK, EXIT_INPUT, EXIT_UNDEFINED = 0, 2, 3
ESTIMATE_CHOICES = ("naive", "mnar", "smoothed", "mar", "aclor")


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _info(msg):
    print(msg, file=sys.stderr)


def _resolve_seed(seed):
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
    _info(f"seed: {seed}")
    return seed


def _load_config(path):
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError(f"config {path} must be a mapping")
    return cfg


def _spec_from(cfg):
    body = cfg.get("scenario", cfg)
    try:
        return ScenarioSpec.from_dict(body)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid scenario: {exc}") from None


def _policy_args(p, smooth_default=False):
    p.add_argument("--gap-policy", choices=MODES, default=None,
                   help="how strata without a usable estimate are resolved")
    p.add_argument("--fallback", choices=FALLBACKS, default=None, help="low-variance estimate used by smoothing")
    p.add_argument("--resamples", type=int, default=None, help="resamples for bootstrap sign stability")
    p.add_argument("--ps-method", choices=PS_METHODS, default=None, help="sign-stability method")
    p.add_argument("--clip", action=argparse.BooleanOptionalAction, default=None,
                   help="clip evaluable estimates into their bounds (default on)")


def _policy(args, base: GapPolicy = GapPolicy()) -> GapPolicy:
    changes = {k: v for k, v in (("mode", args.gap_policy), ("fallback", args.fallback),
                                 ("resamples", args.resamples), ("ps_method", args.ps_method),
                                 ("clip", args.clip)) if v is not None}
    try:
        return replace(base, **changes)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _adjustment(text, bins, scenario=None):
    try:
        return AdjustmentSpec.parse(text or "", bins=bins, scenario_hint=scenario)
    except ValueError as exc:
        raise InputError(str(exc)) from None


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    cfg = _load_config(args.config)
    spec = _spec_from(cfg)
    seed = _resolve_seed(args.seed if args.seed is not None else spec.seed)
    spec = replace(spec, seed=seed)
    if args.n is not None:
        try:
            spec = replace(spec, n=args.n)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    data = generate(spec)
    write_csv(data, args.out)
    _info(f"wrote {len(data)} rows to {args.out}")
    for t in (0, 1):
        _info(f"missing outcome rate, arm {t}: {data.missing_rate(t):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- estimate

def _reports_for(name, counts, policy, args, rng):
    if name == "naive":
        return [naive_report(counts, e) for e in ("P(O|T=0)", "P(O|T=1)", "ATE")]
    if name == "mar":
        p = [mar_estimate(counts, t) for t in (0, 1)]
        ate = None if p[0].point is None or p[1].point is None else p[1].point - p[0].point
        return p + [EstimateReport("ATE", "mar", ate, adjustment=counts.components,
                                   association_z=p[0].association_z, n=counts.total)]
    if name == "aclor":
        return [aclor(counts, args.method, policy, haldane=args.haldane)]
    if name == "smoothed" and policy.mode != "smooth":
        policy = replace(policy, mode="smooth")
    if name == "mnar" and policy.mode == "smooth":
        policy = replace(policy, mode="bounds_midpoint")
    return [phi(counts, 0, policy, rng), phi(counts, 1, policy, rng),
            delta_ate(counts, policy, rng, p_treat=args.p_treat)]


def _bootstrap(data, adjustment, name, policy, args, report, rng):
    fast = {"P(O|T=0)": "phi0", "P(O|T=1)": "phi1", "ATE": "ate"}
    eff_policy = policy
    if name == "smoothed":
        eff_policy = replace(policy, mode="smooth")
    elif name == "mnar" and policy.mode == "smooth":
        eff_policy = replace(policy, mode="bounds_midpoint")
    if name in ("mnar", "smoothed"):
        return bootstrap_ci(data, fast[report.estimand], args.bootstrap, rng, adjustment=adjustment, policy=eff_policy)

    def stat(sample):
        counts = build_counts(sample, adjustment)
        for r in _reports_for(name, counts, eff_policy, args, rng):
            if r.estimand == report.estimand:
                return r.point
        return None

    return bootstrap_ci(data, stat, args.bootstrap, rng)


def cmd_estimate(args):
    seed = _resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    try:
        data = read_dataset(args.data)
    except DatasetError as exc:
        for err in exc.report.errors:
            _info(f"error: {err}")
        raise InputError(f"{args.data} failed validation") from None
    except OSError as exc:
        raise InputError(f"cannot read {args.data}: {exc.strerror}") from None
    names = args.estimator or ["mnar"]
    scenario = None
    if args.scenario:
        try:
            scenario = ScenarioDagId.parse(args.scenario)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    adjustment = _adjustment(args.adjust, args.bins, scenario.value if scenario else None)
    if scenario is not None and any(n in ("mnar", "smoothed", "aclor") for n in names):
        verdict = validate_adjustment(scenario, adjustment.components)
        if not verdict.valid:
            raise InputError(f"adjustment {list(adjustment.components)} rejected for {scenario.value}: "
                             f"{verdict.message}")
    policy = _policy(args)
    try:
        counts = build_counts(data.observed(), adjustment)
        mar_counts = None
        if "mar" in names:
            mar_adj = AdjustmentSpec(tuple(data.covariate_names) + ("s",))
            mar_counts = build_counts(data.observed(), mar_adj)
    except ValueError as exc:
        raise InputError(str(exc)) from None

    reports, undefined = [], []
    for name in names:
        try:
            batch = _reports_for(name, mar_counts if name == "mar" else counts, policy, args, rng)
        except ValueError as exc:
            _warn(f"{name}: {exc}")
            undefined.append(name)
            continue
        if all(not r.defined for r in batch):
            undefined.append(name)
        for r in batch:
            if args.bootstrap and r.defined and name != "aclor":
                ci = _bootstrap(data.observed(), adjustment if name != "mar" else mar_adj, name, policy, args, r, rng)
                r.ci = (ci.low, ci.high)
                if ci.flagged:
                    r.warnings.append(f"estimate undefined in {ci.n_undefined} of {ci.resamples} resamples")
            if name in ("mnar", "smoothed") and r.estimand.startswith("P("):
                msg = unidentifiability_warning(r)
                if msg:
                    r.warnings.append(msg)
            if r.flags.get("positivity_violation"):
                r.warnings.append("some strata lack outcome contrasts; bounds were used there")
            if r.flags.get("clipped_to_bounds"):
                r.warnings.append("some stratum estimates were clipped into their bounds")
            for msg in r.warnings:
                _warn(f"{r.estimator} {r.estimand}: {msg}")
        reports.extend(batch)
    if reports:
        payload = emit_reports(reports, args.format)
        if args.out:
            Path(args.out).write_bytes(payload)
        else:
            sys.stdout.write(payload.decode())
    if undefined:
        _info(f"estimate undefined for: {', '.join(undefined)}")
        return EXIT_UNDEFINED
    return EXIT_OK


# -------------------------------------------------------------- montecarlo

def _grid_from_config(cfg) -> MonteCarloGrid:
    spec = _spec_from(cfg)
    try:
        estimators = tuple(cfg.get("estimators", ESTIMATORS))
        smooth = GapPolicy(**{"mode": "smooth", **cfg.get("smoothing", {})})
        config = EstimatorConfig(
            estimators=estimators,
            adjustment=tuple(cfg["adjust"]) if cfg.get("adjust") is not None else None,
            bins=int(cfg.get("bins", 5)),
            policy=GapPolicy(**cfg.get("policy", {})),
            smooth_policy=smooth,
            aclor_method=cfg.get("aclor_method", "logistic"),
        )
        return MonteCarloGrid(spec, tuple(int(n) for n in cfg.get("n_values", (spec.n,))),
                              tuple(float(e) for e in cfg.get("effects", (spec.effect_t_on_o,))), config)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid grid: {exc}") from None


def cmd_montecarlo(args):
    if args.reps < 1:
        raise InputError("--reps must be at least 1")
    if args.jobs < 1:
        raise InputError("--jobs must be at least 1")
    if bool(args.preset) == bool(args.config):
        raise InputError("give exactly one of --preset or --config")
    cfg_seed = None
    if args.preset:
        grid = preset(args.preset)
    else:
        cfg = _load_config(args.config)
        cfg_seed = cfg.get("seed")
        grid = _grid_from_config(cfg)
    config = grid.config
    changes = {}
    if args.bins is not None:
        changes["bins"] = args.bins
    if args.adjust is not None:
        changes["adjustment"] = tuple(_adjustment(args.adjust, args.bins or 5).components)
    if args.estimator:
        changes["estimators"] = tuple(args.estimator)
    if any(v is not None for v in (args.gap_policy, args.fallback, args.resamples, args.ps_method, args.clip)):
        pol = _policy(args, config.policy)
        if pol.mode == "smooth":
            raise InputError("--gap-policy smooth applies to the smoothed estimator; pick another mode")
        changes["policy"] = pol
        changes["smooth_policy"] = replace(_policy(args, config.smooth_policy), mode="smooth")
    if args.method:
        changes["aclor_method"] = args.method
    try:
        grid = replace(grid, config=replace(config, **changes))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    seed = _resolve_seed(args.seed if args.seed is not None else cfg_seed)
    try:
        result = run_montecarlo(grid, args.reps, seed=seed, jobs=args.jobs)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(result_to_csv(result))
    files = [out / "results.csv"]
    if args.plots:
        files += emit_plots(result, out)
    for f in files:
        _info(f"wrote {f}")
    return EXIT_OK


# -------------------------------------------------------------------- dsep

def _nodes(text):
    return [v.strip() for v in (text or "").split(",") if v.strip()]


def cmd_dsep(args):
    _resolve_seed(args.seed if args.seed is not None else 0)
    if bool(args.dag) == bool(args.scenario):
        raise InputError("give exactly one of --dag or --scenario")
    try:
        if args.dag:
            g = parse_dag_text(Path(args.dag).read_text())
        else:
            g = builtin_dag(ScenarioDagId.parse(args.scenario))
    except OSError as exc:
        raise InputError(f"cannot read {args.dag}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.show:
        sys.stdout.write(dag_to_text(g))
        return EXIT_OK
    if args.adjust is not None:
        if not args.scenario:
            raise InputError("--adjust needs --scenario")
        verdict = validate_adjustment(ScenarioDagId.parse(args.scenario), _nodes(args.adjust))
        print("valid" if verdict.valid else "invalid")
        _info(verdict.message)
        return EXIT_OK
    try:
        sep = d_separated(g, _nodes(args.x), _nodes(args.y), _nodes(args.z))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    print("d-separated" if sep else "d-connected")
    return EXIT_OK


# ---------------------------------------------------------------- validate

def cmd_validate(args):
    _resolve_seed(args.seed if args.seed is not None else 0)
    try:
        data, report = load_csv(args.data)
    except OSError as exc:
        raise InputError(f"cannot read {args.data}: {exc.strerror}") from None
    print(report.summary())
    return EXIT_OK if data is not None else EXIT_INPUT


# ------------------------------------------------------------------ parser

def build_parser():
    parser = _Parser(prog="trialmiss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic trial from a scenario config")
    p.add_argument("--config", required=True, help="scenario file (YAML or JSON)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--n", type=int, help="override the sample size")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate P(O|T), the ATE or the AC-LOR from a trial CSV")
    p.add_argument("data", help="trial CSV")
    p.add_argument("--estimator", action="append", choices=ESTIMATE_CHOICES,
                   help="repeatable; default mnar")
    p.add_argument("--adjust", default="", help="comma-separated adjustment set, e.g. x1,s or pa,s")
    p.add_argument("--scenario", help="missingness scenario used to check the adjustment set")
    p.add_argument("--bins", type=int, default=5, help="equal-width bins per propensity column")
    _policy_args(p)
    p.add_argument("--method", choices=("logistic", "contingency"), default="logistic",
                   help="odds-ratio method for aclor")
    p.add_argument("--haldane", action="store_true", help="add 0.5 to zero cells (contingency method)")
    p.add_argument("--p-treat", type=float, default=None, help="known randomization probability")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="percentile CI from B resamples")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("json", "csv", "text"), default="json")
    p.add_argument("--out", help="write the reports here instead of stdout")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("montecarlo", help="run a Monte Carlo grid and write a tidy CSV plus SVG panels")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="grid file (YAML or JSON)")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1, help="worker processes; results do not depend on it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--estimator", action="append", choices=ESTIMATORS)
    p.add_argument("--adjust", default=None)
    p.add_argument("--bins", type=int, default=None)
    _policy_args(p)
    p.add_argument("--method", choices=("logistic", "contingency"), default=None)
    p.add_argument("--plots", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("dsep", help="d-separation query on a built-in or custom graph")
    p.add_argument("--dag", help="graph file with 'parent -> child' lines")
    p.add_argument("--scenario", help="built-in scenario graph")
    p.add_argument("--x", default="")
    p.add_argument("--y", default="")
    p.add_argument("--z", default="")
    p.add_argument("--adjust", default=None, help="check an adjustment set against --scenario")
    p.add_argument("--show", action="store_true", help="print the graph")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_dsep)

    p = sub.add_parser("validate", help="check a trial CSV and summarize it")
    p.add_argument("data")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
