"""Command-line interface: ``mnariv simulate | estimate | identify``.

Every run writes a JSON document ``{config, results, diagnostics, version}``
and prints a plain table to standard output.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .data import Dataset
from .errors import (ConsistencyError, InsufficientData, MnarIvError, OutOfParameterSpace,
                     ParseError, SchemaError)
from .estimators import estimate
from .model import Design, default_config
from .moments import EstimatorKind
from .solver import SolveOptions

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MISSING_TOKENS = ("", "NA")
DATA_ERRORS = (ParseError, SchemaError, ConsistencyError, InsufficientData, OSError)
ALL_ESTIMATORS = ("CC", "MAR_IPW", "IV_IPW", "IV_OR", "IV_DR", "IV_EFF")


class UsageError(Exception):
    pass


# CSV

@dataclass(frozen=True)
class ColumnMapping:
    """Which CSV columns play which role.  ``covariates=None`` takes every other column."""
    instruments: tuple = ("z",)
    covariates: tuple | None = None
    indicator: str = "r"
    outcome: str = "y"


def _parse_number(text, line, column):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line=line, column=column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", line=line, column=column)
    return v


def load_csv(path, mapping: ColumnMapping = ColumnMapping()) -> Dataset:
    """Read a UTF-8 CSV with a header row.  Missing outcomes are empty or ``NA``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise SchemaError(f"duplicate column names in header: {header}")
    roles = [mapping.indicator, mapping.outcome, *mapping.instruments]
    covariates = mapping.covariates
    if covariates is None:
        covariates = tuple(h for h in header if h not in roles)
    for name in roles + list(covariates):
        if name not in header:
            raise SchemaError(f"column {name!r} not found in header {header}")
    pos = {h: i for i, h in enumerate(header)}
    body = [(i + 2, row) for i, row in enumerate(rows[1:]) if row]
    if not body:
        raise InsufficientData("file has a header but no rows")

    x = np.empty((len(body), len(covariates)))
    z = np.empty((len(body), len(mapping.instruments)))
    r = np.empty(len(body), dtype=int)
    y = np.full(len(body), np.nan)
    for k, (line, row) in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        for j, c in enumerate(covariates):
            x[k, j] = _parse_number(row[pos[c]].strip(), line, c)
        for j, c in enumerate(mapping.instruments):
            z[k, j] = _parse_number(row[pos[c]].strip(), line, c)
        rv = row[pos[mapping.indicator]].strip()
        if rv not in ("0", "1"):
            raise ParseError(f"indicator must be 0 or 1, got {rv!r}", line=line, column=mapping.indicator)
        r[k] = int(rv)
        yv = row[pos[mapping.outcome]].strip()
        if yv in MISSING_TOKENS:
            if r[k] == 1:
                raise ConsistencyError("indicator is 1 but the outcome is empty", row=k)
        else:
            if r[k] == 0:
                raise ConsistencyError("indicator is 0 but the outcome is present", row=k)
            y[k] = _parse_number(yv, line, mapping.outcome)
    return Dataset(x, z, r, y, covariates, mapping.instruments)


def _format_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def save_csv(data: Dataset, path, indicator: str = "r", outcome: str = "y"):
    """Canonical form: covariates, instruments, indicator, outcome; empty field for missing."""
    if data.weights is not None:
        raise SchemaError("weighted (compressed) datasets cannot be written row by row")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*data.covariate_names, *data.instrument_names, indicator, outcome])
        for i in range(data.n):
            y = _format_number(data.y[i]) if data.r[i] == 1 else ""
            w.writerow([*map(_format_number, data.x[i]), *map(_format_number, data.z[i]),
                        str(int(data.r[i])), y])


# configuration

CONFIG_KEYS = {
    "input": str, "output": str, "estimators": str, "scenario": str, "n": int, "reps": int,
    "seed": int, "zeta_start": float, "bracket_lo": float, "bracket_hi": float, "tol": float,
    "covariates": str, "instruments": str, "indicator": str, "outcome": str, "workers": int,
    "baseline_design": str, "outcome_design": str, "iv_design": str, "write_data": str,
    "theta": str, "xi": float, "pz": float, "rho0": float, "max_iter": int,
}
DEFAULTS = {
    "estimators": None, "scenario": "iii", "n": 2000, "reps": 500, "seed": 0, "zeta_start": 0.0,
    "bracket_lo": -10.0, "bracket_hi": 10.0, "tol": 1e-9, "max_iter": 200, "instruments": "z",
    "indicator": "r", "outcome": "y", "workers": 1,
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment.  Keys use underscores or dashes."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"config line {no}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"config line {no}: bad value for {key}: {value!r}") from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mnariv", description="Outcome mean under MNAR selection with an instrument")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--output", help="JSON report path")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", type=float, help="solver residual tolerance")
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--zeta-start", type=float)
        sp.add_argument("--bracket-lo", type=float)
        sp.add_argument("--bracket-hi", type=float)

    s = sub.add_parser("simulate", help="Monte Carlo study on the built-in generator")
    common(s)
    s.add_argument("--scenario", help="iii (both correct), i (wrong propensity), ii (wrong outcome)")
    s.add_argument("--n", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--estimators", help="comma list, e.g. IPW,OR,DR")
    s.add_argument("--workers", type=int)
    s.add_argument("--write-data", help="write one generated dataset to this CSV and stop")

    e = sub.add_parser("estimate", help="fit estimators to a CSV file")
    common(e)
    e.add_argument("--input")
    e.add_argument("--estimators", help=f"comma list from {','.join(ALL_ESTIMATORS)}")
    e.add_argument("--covariates", help="comma list; default every unassigned column")
    e.add_argument("--instruments", help="comma list (default z)")
    e.add_argument("--indicator", help="response indicator column (default r)")
    e.add_argument("--outcome", help="outcome column (default y)")
    e.add_argument("--baseline-design", help="terms, e.g. '1, z, x1, x2'")
    e.add_argument("--outcome-design")
    e.add_argument("--iv-design", help="design for each instrument's law given covariates")

    i = sub.add_parser("identify", help="observational-equivalence probes for the binary model")
    common(i)
    i.add_argument("--theta", help="t0,t1,t2,t3 of the saturated propensity")
    i.add_argument("--xi", type=float, help="log P(Y=1)")
    i.add_argument("--pz", type=float)
    i.add_argument("--rho0", type=float)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _split(text):
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else ()


def _solve_options(cfg) -> SolveOptions:
    try:
        return SolveOptions(tol_residual=cfg["tol"], max_iter=cfg["max_iter"],
                            bracket=(cfg["bracket_lo"], cfg["bracket_hi"]), seed=cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _estimators(cfg, default):
    names = _split(cfg.get("estimators")) or default
    try:
        return tuple(EstimatorKind.parse(n).value for n in names)
    except ValueError as exc:
        raise UsageError(f"unknown estimator: {exc}") from None


def _clean(obj):
    """JSON-safe copy: numpy to python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Report:
    config: dict
    results: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def document(self) -> dict:
        return _clean({"config": self.config, "results": self.results,
                       "diagnostics": self.diagnostics, "version": __version__})


# subcommands

def _fmt(v, width=8, digits=3):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "-".rjust(width)
    return f"{v:{width}.{digits}f}"


def _ci(lo, hi):
    if lo is None or not math.isfinite(lo):
        return "-".rjust(17)
    return f"({lo:6.3f}, {hi:6.3f})"


def estimate_table(results: dict) -> str:
    lines = [f"{'estimator':<9} {'phi':>8} {'95% CI':>17} {'zeta':>8} {'95% CI':>17} {'p-value':>8}"]
    for name, r in results.items():
        if "error" in r:
            lines.append(f"{name:<9} failed: {r['error']}")
            continue
        zci = r["ci_zeta"] or [None, None]
        lines.append(f"{name:<9} {_fmt(r['phi_hat'])} {_ci(*[_nan(v) for v in r['ci_phi']])} "
                     f"{_fmt(r['zeta_hat'])} {_ci(*[_nan(v) for v in zci])} {_fmt(r['p_value_zeta'], 8, 4)}")
    return "\n".join(lines)


def _nan(v):
    return float("nan") if v is None else v


def run_estimate(cfg: dict, report: Report) -> int:
    if not cfg.get("input"):
        raise UsageError("estimate needs --input")
    covs = cfg.get("covariates")
    mapping = ColumnMapping(_split(cfg["instruments"]), None if covs is None else _split(covs),
                            cfg["indicator"], cfg["outcome"])
    data = load_csv(cfg["input"], mapping)
    config = default_config(data.covariate_names, data.instrument_names)
    try:
        designs = {}
        if cfg.get("baseline_design"):
            designs["baseline"] = Design.parse(cfg["baseline_design"])
        if cfg.get("outcome_design"):
            designs["outcome"] = Design.parse(cfg["outcome_design"])
        if cfg.get("iv_design"):
            designs["iv"] = tuple(Design.parse(cfg["iv_design"]) for _ in data.instrument_names)
        config = config.with_designs(**designs)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad design: {exc}") from None
    for d in (config.baseline.design, config.outcome.design, *config.iv.designs):
        unknown = d.variables - set(data.covariate_names) - set(data.instrument_names)
        if unknown:
            raise SchemaError(f"design refers to unknown columns {sorted(unknown)}")

    binary = (len(data.instrument_names) == 1
              and all(np.isin(c, (0.0, 1.0)).all() for c in (data.z, data.x, data.y[data.r == 1])))
    requested = cfg.get("estimators")
    names = _estimators(cfg, ALL_ESTIMATORS if binary else ALL_ESTIMATORS[:-1])
    report.config["model"] = config.describe()
    report.config["n"] = data.n
    report.config["n_observed"] = int(data.n_observed)
    opts = _solve_options(cfg)
    report.config["solver"] = asdict(opts)

    status, dr = EXIT_OK, None
    for name in names:
        try:
            if name == "IV_EFF":
                if not binary:
                    raise SchemaError("IV_EFF needs one binary instrument and binary x, y")
                from .efficiency import estimate_efficient
                fit = estimate_efficient(data, config, opts=opts, zeta_start=cfg["zeta_start"], dr=dr)
            else:
                fit = estimate(data, config, name, opts=opts, zeta_start=cfg["zeta_start"])
                if name == "IV_DR":
                    dr = fit
        except SchemaError as exc:
            if requested:
                raise
            report.results[name] = {"error": str(exc), "kind": "skipped"}
            continue
        except MnarIvError as exc:
            report.results[name] = {"error": str(exc), "kind": type(exc).__name__}
            report.diagnostics[name] = {"exception": type(exc).__name__, "message": str(exc),
                                        "detail": _clean(getattr(getattr(exc, "diagnostics", None),
                                                                 "to_dict", lambda: None)())}
            status = EXIT_NUMERIC
            continue
        report.results[name] = fit.to_dict()
        report.diagnostics[name] = fit.diagnostics.to_dict()
    print(estimate_table(report.results))
    return status


def simulation_table(doc: dict) -> str:
    lines = [f"{'estimator':<9} {'param':<5} {'truth':>7} {'bias':>8} {'MC sd':>7} {'mean se':>7} "
             f"{'cover %':>7} {'failed':>6}"]
    for e, d in doc["summaries"].items():
        for p, s in d.items():
            lines.append(f"{e:<9} {p:<5} {s['truth']:7.3f} {s['bias']:8.4f} {s['mc_sd']:7.4f} "
                         f"{_fmt(s['mean_se'], 7, 4)} {100 * s['coverage']:7.1f} {s['failed']:6d}")
    return "\n".join(lines)


def run_simulate(cfg: dict, report: Report) -> int:
    from .simharness import ScenarioSpec, generate_dataset, run_study, scenario_config
    if cfg.get("write_data"):
        data = generate_dataset(cfg["n"], cfg["seed"])
        save_csv(data, cfg["write_data"])
        report.results = {"written": cfg["write_data"], "n": data.n, "n_observed": int(data.n_observed)}
        print(f"wrote {data.n} rows to {cfg['write_data']}")
        return EXIT_OK
    try:
        spec = ScenarioSpec(cfg["scenario"], cfg["n"], cfg["reps"], cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    names = _estimators(cfg, ("IV_IPW", "IV_OR", "IV_DR"))
    opts = _solve_options(cfg)
    report.config["solver"] = asdict(opts)
    report.config["model"] = scenario_config(spec.kind).describe()
    rep = run_study(spec, names, opts, workers=max(1, cfg["workers"]))
    doc = rep.to_dict()
    report.results = doc
    report.diagnostics = {"failures": doc["failures"], "warnings": doc["warnings"]}
    print(simulation_table(doc))
    for w in doc["warnings"]:
        print("warning:", w)
    return EXIT_OK


def run_identify(cfg: dict, report: Report) -> int:
    from . import identification as ident
    out = ident.identification_report()
    if cfg.get("theta") or "xi" in cfg or "rho0" in cfg or "pz" in cfg:
        base = ident.EXAMPLE_LAW
        theta = tuple(float(t) for t in _split(cfg["theta"])) if cfg.get("theta") else base.theta
        try:
            law = ident.BinaryFullLaw(theta, cfg.get("xi", base.xi), cfg.get("pz", base.pz))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        rho0 = cfg.get("rho0", ident.EXAMPLE_RHO0)
        tilde = ident.construct_equivalent_law(law, rho0)
        out["saturated_example"] = {
            "input": list(law.as_tuple()), "rho0": rho0, "rho1": ident.rho1_for(law.xi, rho0),
            "equivalent": list(tilde.as_tuple()),
            "observed_law_distance": ident.observed_law(law).distance(ident.observed_law(tilde)),
        }
        flat = ident.BinaryFullLaw(theta[:3] + (0.0,), law.xi, law.pz)
        out["no_interaction_probe"] = ident.probe_no_interaction_identifiability(flat).to_dict()
    report.results = out
    ex = out["saturated_example"]
    print("saturated model, equivalent law")
    print("  input      (t0, t1, t2, t3, xi) =", ", ".join(f"{v:.2f}" for v in ex["input"]))
    print(f"  rho0 = {ex['rho0']:.2f}, rho1 = {ex['rho1']:.2f}")
    print("  equivalent (t0, t1, t2, t3, xi) =", ", ".join(f"{v:.2f}" for v in ex["equivalent"]))
    print(f"  observed-law distance = {ex['observed_law_distance']:.2e}")
    probe = out["no_interaction_probe"]
    print("no-interaction model, constraint violation by rho0")
    for e in probe["entries"]:
        print(f"  rho0 = {e['rho0']:+.2f}: " + ("-" if e["violation"] is None else f"{e['violation']:.4g}"))
    grid = out["no_interaction_grid_search"]
    print(f"grid search: {grid['laws']} laws, {len(grid['close_pairs'])} near-equivalent pairs")
    return EXIT_OK


COMMANDS = {"simulate": run_simulate, "estimate": run_estimate, "identify": run_identify}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("choose a subcommand: simulate, estimate or identify")
        cfg = resolve(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = Report(config={k: v for k, v in cfg.items()})
    try:
        status = COMMANDS[cfg["command"]](cfg, report)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        report.diagnostics["error"] = {"kind": type(exc).__name__, "message": str(exc)}
        status = EXIT_DATA
    except (MnarIvError, OutOfParameterSpace) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        report.diagnostics["error"] = {"kind": type(exc).__name__, "message": str(exc)}
        status = EXIT_NUMERIC
    if cfg.get("output"):
        with open(cfg["output"], "w", encoding="utf-8") as fh:
            json.dump(report.document(), fh, indent=2)
            fh.write("\n")
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
