"""Command-line interface: ``hcace match | analyze | simulate | report``.

Every option can also come from a JSON config file (``--config``) whose
keys are the option names with dashes replaced by underscores. Flags on
the command line take precedence over the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric degeneracy.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import io
from .analysis import analyze
from .closed_testing import TooManyLeavesError
from .core import DataError, DegenerateError
from .matching import DistanceSpec, match_units
from .simulation import (
    COMPLIANCE_SETTINGS,
    PipelineParams,
    builtin_scenarios,
    honesty_diagnostic,
    run_replications,
    scenario,
)
from .tree import TreeConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3

DEFAULTS = {
    "lambda0": 0.0,
    "alpha": 0.05,
    "preset": "default",
    "cp": None,
    "max_depth": None,
    "min_split": None,
    "min_bucket": None,
    "signed": False,
    "seed": 0,
    "reps": 200,
    "jobs": 1,
    "scenario": "strong",
    "compliance_setting": "same",
    "grid": "0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
    "n_pairs": None,
    "honesty": False,
    "caliper": None,
    "caliper_on": None,
    "pair_covariates": "treated",
    "instrument": "z",
    "treatment": "d",
    "response": "r",
    "covariates": None,
    "categorical": None,
    "id_column": None,
}

METRIC_COLUMNS = ("scenario", "compliance", "n_reps", "true_discovery_rate", "tdr_all_subsets",
                  "tdr_tested_subsets", "fpr", "f_score", "fwer", "mean_type1", "mean_leaves",
                  "realized_compliance")
PLOT_METRICS = METRIC_COLUMNS[3:]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class Outputs:
    """Tracks files written by a command so they can be removed on failure."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.created_dir = not self.dir.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.files.append(p)
        return p

    def rollback(self) -> None:
        for p in self.files:
            if p.exists():
                p.unlink()
        if self.created_dir and self.dir.exists() and not any(self.dir.iterdir()):
            self.dir.rmdir()


def _split(v):
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        return [str(s) for s in v]
    return [s.strip() for s in str(v).split(",") if s.strip()]


def _resolve(args) -> dict:
    """Merge built-in defaults, the config file and explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc.msg}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        opts.update(cfg)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            opts[key] = v
    return opts


def _tree_config(opts) -> TreeConfig:
    presets = {"default": TreeConfig(), "ohie": TreeConfig.ohie_analysis(),
               "liberal": TreeConfig.liberal(), "simulation": TreeConfig.ohie_simulation()}
    if opts["preset"] not in presets:
        raise UsageError(f"unknown tree preset {opts['preset']!r}; choose from {', '.join(presets)}")
    base = presets[opts["preset"]]
    changes = {}
    for key, field in (("cp", "complexity_parameter"), ("max_depth", "max_depth"),
                       ("min_split", "min_split"), ("min_bucket", "min_bucket")):
        if opts[key] is not None:
            changes[field] = opts[key]
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_alpha(opts):
    if not 0.0 < float(opts["alpha"]) < 1.0:
        raise UsageError("--alpha must lie strictly between 0 and 1")


def cmd_match(args, out: Outputs) -> int:
    opts = _resolve(args)
    covs = _split(opts["covariates"])
    cats = set(_split(opts["categorical"]))
    if not covs:
        raise UsageError("match needs --covariates")
    undeclared = cats - set(covs)
    if undeclared:
        raise UsageError(f"categorical columns not listed in --covariates: {', '.join(sorted(undeclared))}")
    schema = io.Schema(opts["instrument"], opts["treatment"], opts["response"],
                       {c: io.CATEGORICAL if c in cats else io.NUMERIC for c in covs},
                       opts["id_column"])
    if not Path(args.input).exists():
        raise UsageError(f"input file not found: {args.input}")
    data = io.ingest_csv(args.input, schema)
    names = data.covariate_names
    cal_var = None
    if opts["caliper_on"] is not None:
        if opts["caliper_on"] not in names:
            raise UsageError(f"caliper variable {opts['caliper_on']!r} is not a covariate")
        if opts["caliper"] is None:
            raise UsageError("--caliper-on needs --caliper WIDTH")
        cal_var = names.index(opts["caliper_on"])
    elif opts["caliper"] is not None:
        raise UsageError("--caliper needs --caliper-on NAME")
    try:
        spec = DistanceSpec(caliper_variable=cal_var, caliper_width=float(opts["caliper"] or 0.0))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = match_units(data.units, spec, names, opts["pair_covariates"])

    io.write_pairs_csv(out.path("pairs.csv"), result.pairs, names, data.categorical)
    io.write_balance_csv(out.path("balance.csv"), result.balance)
    io.write_json(out.path("match_summary.json"), {
        "n_units": data.n_units,
        "rows_rejected_missing_response": data.rejected_rows,
        "missing_counts": data.missing_counts,
        "n_pairs": len(result.pairs),
        "total_distance": result.total_distance,
        "pair_covariates": opts["pair_covariates"],
        "flagged_covariates": list(result.balance.flagged),
    })
    print(f"matched {len(result.pairs)} pairs from {data.n_units} units "
          f"({data.rejected_rows} rows dropped for missing response)")
    if result.balance.flagged:
        print(f"warning: post-match |std diff| > 0.25 for {', '.join(result.balance.flagged)}")
    return EXIT_OK


def cmd_analyze(args, out: Outputs) -> int:
    opts = _resolve(args)
    _check_alpha(opts)
    if not Path(args.input).exists():
        raise UsageError(f"input file not found: {args.input}")
    pairs = io.read_pairs_csv(args.input, _split(opts["categorical"]))
    result = analyze(pairs, float(opts["lambda0"]), float(opts["alpha"]), _tree_config(opts),
                     use_abs=not opts["signed"])
    summary = io.analysis_to_dict(result)
    io.write_json(out.path("report.json"), summary)
    io.write_table_csv(out.path("nodes.csv"), summary["nodes"], io.NODE_COLUMNS)
    out.path("tree.dot").write_text(result.to_dot(), encoding="utf-8")
    out.path("tree.txt").write_text(result.tree.to_text(), encoding="utf-8")
    verdict = "rejected" if summary["global_rejected"] else "retained"
    print(f"{summary['n_pairs']} pairs, {summary['n_leaves']} leaves; global null {verdict}; "
          f"rejected leaves: {summary['rejected_leaves'] or 'none'}")
    return EXIT_OK


def _grid(opts) -> list[float]:
    try:
        vals = [float(v) for v in _split(opts["grid"])]
    except ValueError:
        raise UsageError(f"--grid must be comma-separated numbers, got {opts['grid']!r}") from None
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise UsageError("--grid values must lie in [0, 1]")
    return vals


def cmd_simulate(args, out: Outputs) -> int:
    opts = _resolve(args)
    _check_alpha(opts)
    names = builtin_scenarios()
    if opts["scenario"] not in names:
        raise UsageError(f"unknown scenario {opts['scenario']!r}; choose from {', '.join(names)}")
    if opts["compliance_setting"] not in COMPLIANCE_SETTINGS:
        raise UsageError(f"unknown compliance setting {opts['compliance_setting']!r}")
    reps, jobs = int(opts["reps"]), int(opts["jobs"])
    if reps < 1 or jobs < 1:
        raise UsageError("--reps and --jobs must be positive")
    overrides = {"seed": int(opts["seed"])}
    if opts["n_pairs"] is not None:
        overrides["n_pairs"] = int(opts["n_pairs"])
    try:
        base = scenario(opts["scenario"], opts["compliance_setting"], **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    if opts["honesty"]:
        tree = _tree_config(opts) if opts["preset"] != "default" or opts["cp"] is not None else TreeConfig.liberal()
        params = PipelineParams(float(opts["lambda0"]), float(opts["alpha"]), tree)
        res = honesty_diagnostic(base, reps, not opts["signed"], params, jobs)
        io.write_table_csv(out.path("pvalues.csv"), [{"p_value": float(p)} for p in res.p_values],
                           ["p_value"])
        io.write_json(out.path("honesty.json"), {
            "scenario": base.name, "n_reps": reps, "use_abs": res.use_abs,
            "n_p_values": int(res.p_values.size),
            "ks_statistic": res.ks_statistic, "ks_pvalue": res.ks_pvalue})
        print(f"KS distance {res.ks_statistic:.4f} (p = {res.ks_pvalue:.3g}) over {res.p_values.size} p-values")
        return EXIT_OK

    params = PipelineParams(float(opts["lambda0"]), float(opts["alpha"]), _tree_config(opts),
                            not opts["signed"])
    records = []
    for pi in _grid(opts):
        rec = run_replications(base.replace(compliance=pi), params, reps, jobs)
        records.append(rec.to_dict())
        print(f"{base.name} pi={pi:g}: TDR {rec.true_discovery_rate:.3f}, FPR {rec.fpr:.4f}, "
              f"FWER {rec.fwer:.3f}")
    io.write_json(out.path("metrics.json"), {"scenario": base.name, "seed": int(opts["seed"]),
                                             "n_reps": reps, "records": records})
    io.write_table_csv(out.path("metrics.csv"), records, METRIC_COLUMNS)
    leaf_rows = [{"scenario": r["scenario"], "compliance": r["compliance"], "cell": cell, **v}
                 for r in records for cell, v in r["per_leaf"].items()]
    io.write_table_csv(out.path("per_leaf.csv"), leaf_rows,
                       ("scenario", "compliance", "cell", "leaves", "rejected", "tdr"))
    return EXIT_OK


def cmd_report(args, out: Outputs) -> int:
    path = Path(args.input)
    if not path.exists():
        raise UsageError(f"input file not found: {args.input}")
    try:
        doc = io.read_json(path)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc.msg}") from None
    if isinstance(doc, dict) and "records" in doc:
        rows = []
        for r in doc["records"]:
            row = {k: io.from_json_number(r[k]) for k in METRIC_COLUMNS[1:]}
            row["scenario"], row["n_reps"] = r["scenario"], int(r["n_reps"])
            rows.append(row)
        text = io.render_text_table(rows, METRIC_COLUMNS)
        long = [{"scenario": r["scenario"], "compliance": r["compliance"], "metric": m, "value": r[m]}
                for r in rows for m in PLOT_METRICS]
        io.write_table_csv(out.path("plot_data.csv"), long, ("scenario", "compliance", "metric", "value"))
    elif isinstance(doc, dict) and "nodes" in doc:
        rows = []
        for nd in doc["nodes"]:
            row = dict(nd)
            for k in ("compliance", "estimate", "ci_low", "ci_high"):
                row[k] = io.from_json_number(nd[k])
            rows.append(row)
        cols = ("node", "description", "n_pairs", "compliance", "estimate", "ci_low", "ci_high",
                "ci_shape", "decision")
        text = io.render_text_table(rows, cols)
        io.write_table_csv(out.path("plot_data.csv"), rows, cols)
    else:
        raise DataError(f"{path}: not a metrics or analysis report")
    out.path("table.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _add_tree_flags(p):
    p.add_argument("--lambda0", type=float, help="null value of the effect ratio (default 0)")
    p.add_argument("--alpha", type=float, help="familywise error rate (default 0.05)")
    p.add_argument("--preset", choices=("default", "ohie", "liberal", "simulation"),
                   help="starting tree settings before --cp and friends are applied")
    p.add_argument("--cp", type=float, help="complexity parameter, relative to root sum of squares")
    p.add_argument("--max-depth", type=int)
    p.add_argument("--min-split", type=int)
    p.add_argument("--min-bucket", type=int)
    p.add_argument("--signed", action="store_true",
                   help="grow the tree on signed differences (invalidates the error guarantee)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hcace", description=__doc__.split("\n\n")[0])
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--seed", type=int, help="random seed (only simulate draws random numbers)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    m = sub.add_parser("match", parents=[common], help="pair instrument-1 with instrument-0 units")
    m.add_argument("input", help="unit-level CSV")
    m.add_argument("--instrument")
    m.add_argument("--treatment")
    m.add_argument("--response")
    m.add_argument("--covariates", help="comma-separated covariate columns")
    m.add_argument("--categorical", help="comma-separated subset of covariates that are categorical")
    m.add_argument("--id-column")
    m.add_argument("--caliper", type=float, help="caliper width in units of the caliper variable")
    m.add_argument("--caliper-on", help="covariate the caliper applies to")
    m.add_argument("--pair-covariates", choices=("treated", "control", "mean"))
    m.set_defaults(func=cmd_match)

    a = sub.add_parser("analyze", parents=[common], help="tree discovery and closed testing on a pairs file")
    a.add_argument("input", help="pairs CSV written by 'hcace match'")
    a.add_argument("--categorical", help="comma-separated x_ columns to treat as categorical")
    _add_tree_flags(a)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo operating characteristics")
    s.add_argument("--scenario")
    s.add_argument("--compliance-setting", choices=tuple(COMPLIANCE_SETTINGS))
    s.add_argument("--grid", help="comma-separated compliance rates")
    s.add_argument("--reps", type=int)
    s.add_argument("--jobs", type=int, help="worker processes")
    s.add_argument("--n-pairs", type=int)
    s.add_argument("--honesty", action="store_true",
                   help="collect first-leaf p-values and a KS test against uniform instead")
    _add_tree_flags(s)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", parents=[common], help="render tables and plot data from a JSON output")
    r.add_argument("input", help="metrics.json or report.json")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    out = None
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a command is required: match, analyze, simulate or report")
        out = Outputs(args.out)
        return args.func(args, out)
    except UsageError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (DataError, TooManyLeavesError) as exc:
        code, msg = EXIT_DATA, str(exc)
    except DegenerateError as exc:
        code, msg = EXIT_DEGENERATE, str(exc)
    except (OSError, ValueError) as exc:
        code, msg = EXIT_DATA, str(exc)
    except FloatingPointError as exc:
        code, msg = EXIT_DEGENERATE, str(exc)
    if out is not None:
        out.rollback()
    print(f"hcace: error: {' '.join(msg.split())}", file=sys.stderr)
    return code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
