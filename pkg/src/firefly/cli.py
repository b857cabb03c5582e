"""Command line entry point: ``firefly {gen-data,run,report,continual}``."""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from . import experiments as ex
from .config import check_seeds, load_config, parse_config
from .data import gen_cl_tasks, gen_toy_dataset, gen_toy_truth, write_dataset_csv
from .exceptions import ConfigError, ContractError, NumericError, StructuralError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _seeds_arg(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return seeds


def build_parser():
    p = argparse.ArgumentParser(prog="firefly", description="Grow networks by firefly descent.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic datasets as CSV")
    g.add_argument("--config", help="JSON run configuration (default: toy RBF)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seeds", type=_seeds_arg, help="comma-separated seeds")

    for name, text in (("run", "run an experiment"), ("continual", "run the continual suite")):
        r = sub.add_parser(name, help=text)
        r.add_argument("--config", required=True, help="JSON run configuration")
        r.add_argument("--out", help="output directory (overrides the config)")
        r.add_argument("--seeds", type=_seeds_arg, help="comma-separated seeds")

    rep = sub.add_parser("report", help="aggregate JSONL run logs")
    rep.add_argument("logs", nargs="+", help="JSONL files or directories holding them")
    rep.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def _config(args, experiment=None):
    if args.config is None:
        cfg = parse_config({} if experiment is None else {"experiment": experiment})
    elif experiment is None:
        cfg = load_config(args.config)
    else:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if isinstance(doc, dict):
            doc.setdefault("experiment", experiment)
            if doc["experiment"] != experiment:
                raise ConfigError("experiment", f"the {experiment} command needs {experiment!r}")
        cfg = parse_config(doc)
    if getattr(args, "seeds", None) is not None:
        cfg.seeds = check_seeds(args.seeds, "--seeds")
    return cfg


def _out_dir(args, cfg):
    out = args.out or cfg.output
    if not out:
        raise ConfigError("output", "no output directory (use --out or the 'output' key)")
    return out


def cmd_gen_data(args):
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    for seed in cfg.seeds:
        if cfg.experiment == "toy-rbf":
            d = cfg.data
            truth = gen_toy_truth(seed, d.truth_neurons, d.truth_scale)
            write_dataset_csv(gen_toy_dataset(truth, d.n_points, seed),
                              os.path.join(args.out, f"toy_seed{seed}.csv"))
        elif cfg.experiment == "continual":
            for t, (train, test) in enumerate(ex.cl_suite(cfg, seed)):
                write_dataset_csv(train, os.path.join(args.out, f"cl_seed{seed}_task{t}_train.csv"))
                write_dataset_csv(test, os.path.join(args.out, f"cl_seed{seed}_task{t}_test.csv"))
        else:
            train, holdout = ex.mlp_problem(cfg, seed)
            write_dataset_csv(train, os.path.join(args.out, f"mlp_seed{seed}_train.csv"))
            if holdout is not None:
                write_dataset_csv(holdout, os.path.join(args.out, f"mlp_seed{seed}_holdout.csv"))
    return EXIT_OK


def _run(cfg, out):
    per_seed = ex.run_all(cfg, cfg.seeds, ex.thread_count())
    rows = ex.write_outputs(cfg, per_seed, out)
    if cfg.experiment == "continual":
        for rec in (r for recs in per_seed.values() for r in recs
                    if r["record"] == "continual-summary"):
            line = (f"seed {rec['seed']}: average accuracy {rec['average_accuracy']:.4f}, "
                    f"{rec['master_params']} parameters")
            if "scratch" in rec:
                s = rec["scratch"]
                line += (f" (scratch {s['average_accuracy']:.4f}, "
                         f"{s['total_params']} parameters)")
            print(line)
    else:
        finals = {}
        for r in rows:
            finals[r["method"]] = r
        for method, r in finals.items():
            print(f"{method}: final mean loss {r['mean_loss']:.6g} "
                  f"(sd {r['std_loss']:.3g}, {r['n_seeds']} seeds)")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    return _run(cfg, _out_dir(args, cfg))


def cmd_continual(args):
    cfg = _config(args, "continual")
    return _run(cfg, _out_dir(args, cfg))


def _log_files(paths):
    files = []
    for p in paths:
        if os.path.isdir(p):
            files.extend(sorted(glob.glob(os.path.join(p, "*.jsonl"))))
        else:
            files.append(p)
    if not files:
        raise UsageError("no log files found")
    return files


BOUNDARY_FIELDS = {"method": str, "phase": int, "loss": (int, float), "neurons": (int, float)}


def read_records(paths):
    """All records of the given JSONL logs; a malformed line is a usage error."""
    records = []
    for path in _log_files(paths):
        try:
            fh = open(path)
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror}") from None
        with fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise UsageError(f"{path}: line {lineno}: corrupt record ({exc.msg})") from None
                if not isinstance(rec, dict):
                    raise UsageError(f"{path}: line {lineno}: corrupt record (not an object)")
                if rec.get("record") == "boundary":
                    for key, typ in BOUNDARY_FIELDS.items():
                        if not isinstance(rec.get(key), typ) or isinstance(rec.get(key), bool):
                            raise UsageError(f"{path}: line {lineno}: corrupt record "
                                             f"(bad or missing {key!r})")
                records.append(rec)
    return records


def cmd_report(args):
    rows = ex.aggregate(read_records(args.logs))
    if args.format == "json":
        sys.stdout.write(json.dumps(rows, indent=2) + "\n")
    else:
        sys.stdout.write(ex.format_csv(rows))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "run": cmd_run, "report": cmd_report,
            "continual": cmd_continual}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"firefly: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"firefly: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"firefly: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StructuralError, ContractError) as exc:
        print(f"firefly: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
