"""Experiment pipelines behind the command line.

Every pipeline is a pure function of its configuration and seed and returns a
list of JSON-ready records. Boundary records (``"record": "boundary"``) carry
the loss at the end of each training phase and are what the aggregate tables
summarise; growth records hold the per-candidate reports.
"""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .baselines import baseline_scratch, random_train
from .continual import (
    MasterNetwork,
    accuracy,
    evaluate_all_tasks,
    grow_for_task,
    retrieve_task_model,
)
from .data import Dataset, gen_cl_tasks, gen_toy_dataset, gen_toy_truth, init_rbf_network
from .exceptions import ConfigError, NumericError
from .growth import firefly_train
from .network import GrowableNetwork
from .training import fit_parameters


def method_label(method, m_prime=None):
    return method if m_prime is None else f"firefly-m{m_prime}"


def _boundary(method, seed, phase, loss, neurons, params, **extra):
    rec = {"record": "boundary", "method": method, "seed": seed, "phase": phase,
           "loss": loss, "neurons": neurons, "params": params}
    rec.update(extra)
    return rec


def _history_records(method, seed, history, growth_mode="width"):
    out = [_boundary(method, seed, b["phase"], b["loss"], b["neurons"], b["params"])
           for b in history.boundaries]
    for report in history.reports:
        for r in report.records():
            out.append(dict({"record": "growth", "method": method, "seed": seed}, **r))
    return out


# -- toy RBF -----------------------------------------------------------------

def toy_problem(cfg, seed):
    """Truth, dataset and the shared one-neuron starting network for ``seed``."""
    d = cfg.data
    truth = gen_toy_truth(seed, d.truth_neurons, d.truth_scale)
    data = gen_toy_dataset(truth, d.n_points, seed)
    net = init_rbf_network(d.initial_width, [seed, 1000], d.init_scale)
    return truth, data, net


def _run_growth_methods(cfg, seed, X, y, net, init_fn, layers=None, mode="width",
                        growth_data=None):
    records = []
    gcfg = replace(cfg.growth, rng_seed=seed)
    jobs = [(m, None) for m in cfg.methods]
    jobs += [("firefly", k) for k in cfg.m_prime_sweep]
    for method, sweep in jobs:
        label = method_label(method, sweep)
        try:
            records += _run_method(cfg, seed, X, y, net, init_fn, layers, mode, growth_data,
                                   gcfg, method, sweep, label)
        except NumericError as exc:
            raise NumericError(f"seed {seed}, method {label}: {exc}") from None
    return records


def _run_method(cfg, seed, X, y, net, init_fn, layers, mode, growth_data, gcfg, method, sweep,
                label):
    if method == "firefly":
        c = gcfg if sweep is None else replace(gcfg, m_prime=sweep)
        _, hist = firefly_train(net, X, y, c, cfg.schedule, mode, layers, growth_data)
    elif method == "firefly-split-only":
        _, hist = firefly_train(net, X, y, replace(gcfg, m_prime=0), cfg.schedule, mode,
                                layers, growth_data)
    elif method in ("rand-split", "rand-split-new"):
        b = cfg.baseline
        _, hist = random_train(net, X, y, cfg.schedule, seed, b.k_trials,
                               b.m_prime if method == "rand-split-new" else 0,
                               b.finetune_iters, cfg.growth.init_scale,
                               layers[0] if layers else 0)
    else:
        return _scratch_records(cfg, seed, X, y, net, init_fn)
    return _history_records(label, seed, hist)


def _scratch_records(cfg, seed, X, y, net, init_fn):
    start = net.count_neurons()
    widths = range(start, start + cfg.schedule.grow_phases + 1)
    iters = cfg.scratch.train_iters
    iters = cfg.schedule.train_iters if iters is None else iters
    out = []
    for phase, (w, loss) in enumerate(baseline_scratch(widths, X, y, iters,
                                                       cfg.schedule.learning_rate, init_fn, seed)):
        params = init_fn(w, np.random.default_rng(0)).count_params()
        out.append(_boundary("scratch", seed, phase, loss, w, params))
    return out


def run_toy_seed(cfg, seed):
    _, data, net = toy_problem(cfg, seed)

    def init(width, rng):
        return init_rbf_network(width, rng, cfg.data.init_scale)

    return _run_growth_methods(cfg, seed, data.X, data.y, net, init)


# -- MLP width / depth ----------------------------------------------------------

def mlp_problem(cfg, seed):
    """Training set and the held-out batch used to score growth candidates."""
    d = cfg.data
    ds = gen_cl_tasks(1, seed, n_per_class=d.n_per_class, n_classes=d.n_classes)[0]
    if d.holdout_fraction == 0:
        return ds, None
    return split_dataset(ds, d.holdout_fraction)


def run_mlp_seed(cfg, seed):
    d = cfg.data
    ds, holdout = mlp_problem(cfg, seed)
    growth_data = None if holdout is None else (holdout.X, holdout.y)
    widths = list(d.initial_widths)

    def init(width, rng):
        return GrowableNetwork.mlp(2, widths[:-1] + [width], d.n_classes, rng=rng)

    net = init(widths[-1], np.random.default_rng([seed, 1000]))
    if cfg.experiment == "width-mlp":
        return _run_growth_methods(cfg, seed, ds.X, ds.y, net, init,
                                   layers=[len(widths) - 1], mode="width",
                                   growth_data=growth_data)
    return _run_growth_methods(cfg, seed, ds.X, ds.y, net, init, mode="both",
                               growth_data=growth_data)


# -- continual -----------------------------------------------------------------

def split_dataset(ds, test_fraction):
    n_test = int(round(len(ds) * test_fraction))
    n_train = len(ds) - n_test
    return (Dataset(ds.X[:n_train], ds.y[:n_train], ds.kind),
            Dataset(ds.X[n_train:], ds.y[n_train:], ds.kind))


def cl_suite(cfg, seed):
    s = cfg.suite
    tasks = gen_cl_tasks(s.tasks, seed, n_per_class=s.n_per_class, n_classes=s.n_classes)
    return [split_dataset(t, s.test_fraction) for t in tasks]


def run_continual(cfg, seed, snapshots=None):
    """Full CL pass; returns ``(master, log records, summary)``.

    ``snapshots`` (a dict) receives each task model's test-set outputs right
    after its task finishes, for later bit-exact comparison.
    """
    suite = cl_suite(cfg, seed)
    n_classes = cfg.suite.n_classes
    master = MasterNetwork(2, n_classes)
    ccfg = replace(cfg.continual, rng_seed=seed)
    log = []
    tests = {}
    for t, (train, test) in enumerate(suite):
        tests[t] = test
        grow_for_task(master, train, ccfg, t, tests, log)
        if snapshots is not None:
            snapshots[t] = retrieve_task_model(master, t).forward(test.X)
    table = evaluate_all_tasks(master, tests)
    summary = {"seed": seed, "average_accuracy": table["average_accuracy"],
               "master_params": table["master_params"], "neurons": len(master),
               "per_task": table["tasks"]}
    if "scratch" in cfg.methods:
        summary["scratch"] = scratch_cl(cfg, suite, seed)
    return master, log, summary


def scratch_cl(cfg, suite, seed):
    """One independent fixed-width network per task."""
    iters = cfg.scratch.train_iters
    iters = cfg.continual.finetune_iters * (cfg.continual.max_grow_rounds + 1) \
        if iters is None else iters
    accs, params = [], 0
    for t, (train, test) in enumerate(suite):
        net = GrowableNetwork.mlp(2, [cfg.scratch.width], cfg.suite.n_classes,
                                  rng=[seed, 7, t])
        fit_parameters(net, train.X, train.y, iters, cfg.continual.learning_rate)
        accs.append(accuracy(net, test.X, test.y))
        params += net.count_params()
    return {"accuracy_per_task": accs, "average_accuracy": float(np.mean(accs)),
            "total_params": params, "width": cfg.scratch.width, "train_iters": iters}


# -- orchestration -------------------------------------------------------------

def run_seed(cfg, seed):
    if cfg.experiment == "toy-rbf":
        return run_toy_seed(cfg, seed)
    if cfg.experiment in ("width-mlp", "depth-mlp"):
        return run_mlp_seed(cfg, seed)
    _, log, summary = run_continual(cfg, seed)
    return [dict({"record": "continual"}, **r) for r in log] + \
        [dict({"record": "continual-summary"}, **summary)]


def thread_count():
    raw = os.environ.get("FIREFLY_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError("FIREFLY_THREADS", f"expected a positive integer, got {raw!r}")
    return n


def _seed_job(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def run_all(cfg, seeds, workers=1):
    """Records per seed, in seed order, whatever the worker count."""
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            return dict(zip(seeds, pool.map(_seed_job, [(cfg, s) for s in seeds])))
    return {s: run_seed(cfg, s) for s in seeds}


def aggregate(records):
    """Mean and sample stddev of the loss over seeds for every (method, phase).

    Only boundary records count. A single seed yields a stddev of zero.
    """
    groups = {}
    for r in records:
        if r.get("record") != "boundary":
            continue
        groups.setdefault((r["method"], r["phase"]), []).append(r)
    rows = []
    for (method, phase) in sorted(groups, key=lambda k: (k[0], k[1])):
        g = groups[(method, phase)]
        losses = np.array([r["loss"] for r in g], dtype=np.float64)
        rows.append({"method": method, "phase": phase, "n_seeds": len(g),
                     "neurons": float(np.mean([r["neurons"] for r in g])),
                     "mean_loss": float(losses.mean()),
                     "std_loss": float(losses.std(ddof=1)) if len(g) > 1 else 0.0})
    return rows


AGG_COLUMNS = ("method", "phase", "n_seeds", "neurons", "mean_loss", "std_loss")


def format_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGG_COLUMNS)
    for r in rows:
        w.writerow([r["method"], r["phase"], r["n_seeds"], repr(r["neurons"]),
                    repr(r["mean_loss"]), repr(r["std_loss"])])
    return buf.getvalue()


def summarize(cfg, per_seed):
    """Final metrics per method (the last boundary of every seed)."""
    finals = {}
    for seed, records in per_seed.items():
        last = {}
        for r in records:
            if r.get("record") == "boundary":
                last[r["method"]] = r
        for method, r in last.items():
            finals.setdefault(method, []).append(r)
    methods = {}
    for method in sorted(finals):
        losses = np.array([r["loss"] for r in finals[method]])
        methods[method] = {
            "final_loss_mean": float(losses.mean()),
            "final_loss_std": float(losses.std(ddof=1)) if len(losses) > 1 else 0.0,
            "final_neurons": float(np.mean([r["neurons"] for r in finals[method]])),
            "final_params": float(np.mean([r["params"] for r in finals[method]])),
            "seeds": len(losses),
        }
    summary = {"experiment": cfg.experiment, "seeds": list(per_seed), "methods": methods,
               "config": cfg.to_dict()}
    cl = [r for recs in per_seed.values() for r in recs if r.get("record") == "continual-summary"]
    if cl:
        summary["continual"] = cl
    return summary


def write_outputs(cfg, per_seed, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for seed, records in per_seed.items():
        with open(os.path.join(out_dir, f"seed_{seed}.jsonl"), "w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    rows = aggregate([r for recs in per_seed.values() for r in recs])
    with open(os.path.join(out_dir, "aggregate.csv"), "w") as fh:
        fh.write(format_csv(rows))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summarize(cfg, per_seed), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rows
