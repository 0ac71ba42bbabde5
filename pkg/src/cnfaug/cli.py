"""Command-line entry point: ``cnfaug {gen,cnf-table,experiment,props}``."""
from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
import time
from pathlib import Path

from . import datagen as dg
from . import experiments as ex
from . import props

EXIT_OK, EXIT_INVALID, EXIT_PROPERTY, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "CNFAUG_OUT"

CNF_TABLE_HELP = f"""\
CSV columns ({ex.CNF_TABLE_SCHEMA}):
  r                   confounding strength
  n                   samples per seed
  n_seeds             number of seeds averaged
  cnf_empirical_mean  mean plug-in CNF(fg, digit) over seeds, nats
  cnf_empirical_sd    sample sd over seeds (empty for one seed)
  cnf_exact           CNF from the exact joint of the generating model
  closed_form         2 (ln K + p_m ln p_m + (K-1) p_o ln p_o)
"""

EXPERIMENT_HELP = f"""\
experiment.csv columns ({ex.EXPERIMENT_SCHEMA}):
  group, strategy, method   simulated intervention, strategy id, display name
  n_seeds, n_pool_mean      seeds aggregated, mean size of the training pool
  accuracy_mean/_sd         test accuracy (fraction); sd empty for one seed
  cnf_<style>_mean/_sd      plug-in CNF(digit, style) of the pooled training set
  cmi_<style>_mean/_sd      I(style; prediction | digit) on the test split
runs.csv ({ex.RUN_SCHEMA}) has one row per (strategy, seed).
Strategies: none, erm_uc, replicate_unconfounded, do_x, do_z0_zcnf, do_zcnf, do_z0.
"""


class UsageError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _names(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "cnfaug-out"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnfaug", description="Confounded synthetic data, causal augmentation and measures.")
    p.add_argument("--config", help="JSON file whose keys mirror the subcommand flags (flags given on the command line win)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate train/test datasets")
    g.add_argument("--variant", choices=dg.VARIANTS, default="dcm")
    g.add_argument("--r", type=float, default=0.95)
    g.add_argument("--n-train", type=int, default=60000)
    g.add_argument("--n-test", type=int, default=10000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV}/gen)")

    c = sub.add_parser("cnf-table", help="confounding vs. correlation sweep",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=CNF_TABLE_HELP)
    c.add_argument("--r", type=_floats, default=list(ex.DEFAULT_RS), help="comma-separated r values")
    c.add_argument("--n", type=int, default=60000)
    c.add_argument("--seeds", type=_ints, default=list(range(5)), help="comma-separated seeds")
    c.add_argument("--out", help=f"output directory (default ${OUT_ENV}/cnf-table)")

    e = sub.add_parser("experiment", help="augmentation-strategy comparison",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=EXPERIMENT_HELP)
    e.add_argument("--variant", choices=dg.VARIANTS, default="dcm")
    e.add_argument("--r", type=float, default=0.95)
    e.add_argument("--strategies", type=_names, default=["none", "do_z0"])
    e.add_argument("--measure-only", type=_names, default=[], help="strategies measured but not trained")
    e.add_argument("--tau", type=float, default=0.05)
    e.add_argument("--alpha", type=int, default=None, help="cap on emitted instances (default: no cap)")
    e.add_argument("--seeds", type=_ints, default=list(range(5)))
    e.add_argument("--n-train", type=int, default=60000)
    e.add_argument("--n-test", type=int, default=10000)
    e.add_argument("--epochs", type=int, default=30)
    e.add_argument("--jobs", type=int, default=None, help="parallel seed workers (default: min(seeds, cpus))")
    e.add_argument("--out", help=f"output directory (default ${OUT_ENV}/experiment)")

    r = sub.add_parser("props", help="run the invariant suite")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--trials", type=int, default=100)
    r.add_argument("--inject-fault", action="store_true", help="perturb the model corpus (negative control)")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as err:
        raise UsageError(f"config {args.config}: {err}") from err
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest == "command":
            continue
        if dest not in known:
            raise UsageError(f"config key {key!r} is not a flag of {args.command}")
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else _out_root() / name


def _provenance(args, argv) -> dict:
    return {"command_line": "cnfaug " + shlex.join(argv), "arguments": {k: v for k, v in vars(args).items()}}


def cmd_gen(args, argv) -> int:
    spec = dg.DatasetSpec(args.variant, args.r, args.n_train, args.n_test, args.seed)
    train, test = dg.generate_dataset(spec)
    out = _out_dir(args, "gen")
    extra = _provenance(args, argv)
    for ds in (train, test):
        manifest = dg.save_dataset(ds, out / ds.split, extra)
        print(f"{ds.split}\t{len(ds)}\t{manifest['digest']}")
    return EXIT_OK


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def cmd_cnf_table(args, argv) -> int:
    if any(not 0.0 <= r <= 1.0 for r in args.r):
        raise UsageError("every r must lie in [0, 1]")
    if args.n <= 0 or not args.seeds:
        raise UsageError("need n > 0 and at least one seed")
    rows = ex.cnf_table(args.r, args.n, args.seeds)
    text = ex.cnf_table_csv(rows)
    sys.stdout.write(text)
    out = _out_dir(args, "cnf-table")
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "cnf_table.csv", text)
    manifest = {"schema": ex.CNF_TABLE_SCHEMA, "columns": list(ex.CNF_TABLE_COLUMNS), "seeds": args.seeds,
                **_provenance(args, argv)}
    _write(out / "manifest.json", json.dumps(manifest, indent=1))
    return EXIT_OK


def cmd_experiment(args, argv) -> int:
    cfg = ex.ExperimentConfig(args.variant, args.r, tuple(args.strategies), tuple(args.seeds), args.n_train,
                              args.n_test, args.tau, args.alpha, args.epochs, tuple(args.measure_only))
    out = _out_dir(args, "experiment")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records = ex.run_experiment(cfg, args.jobs)
    elapsed = time.perf_counter() - t0
    rows = ex.aggregate(cfg, records)
    md = ex.experiment_markdown(cfg, rows)
    _write(out / "experiment.csv", ex.experiment_csv(cfg, rows))
    _write(out / "runs.csv", ex.runs_csv(cfg, records))
    _write(out / "experiment.md", md)
    manifest = {"schema": ex.EXPERIMENT_SCHEMA, "runs_schema": ex.RUN_SCHEMA, "seeds": list(cfg.seeds),
                "columns": ex.experiment_columns(cfg.styles), "seconds": round(elapsed, 2), **_provenance(args, argv)}
    _write(out / "manifest.json", json.dumps(manifest, indent=1))
    sys.stdout.write(md)
    return EXIT_OK


def cmd_props(args, argv) -> int:
    if args.trials < 0:
        raise UsageError("trials must be >= 0")
    results = props.run_suite(args.seed, args.trials, args.inject_fault)
    for res in results:
        print(res.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_PROPERTY if failed else EXIT_OK


COMMANDS = {"gen": cmd_gen, "cnf-table": cmd_cnf_table, "experiment": cmd_experiment, "props": cmd_props}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args, argv)
    except SystemExit as err:  # argparse reports usage errors this way
        return int(err.code or 0)
    except OSError as err:
        print(f"cnfaug: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"cnfaug: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
