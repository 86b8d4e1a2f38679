"""Command-line front end: ``structgcca {fit,simulate,cv,bootstrap,project}``.

Every command writes its outputs and a ``manifest.json`` into ``--out``.
Numbers are written with 17 significant digits so that reruns are
byte-identical. Exit codes: 0 success, 1 usage or input error, 2 numerical
non-convergence (outputs are still written).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, config as cfgmod, core, model, simulate
from . import penalty as pen
from .project import (Ellipsoid, NewtonError, project_l1, project_W,
                      soft_threshold)
from .solver import fit as fit_model

log = logging.getLogger("structgcca")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
FMT = "%.17g"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, "%s: error: %s\n" % (self.prog, message))


# ---------------------------------------------------------------- output ---

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return FMT % v
    return str(v)


def write_matrix(path, M, header):
    M = np.atleast_2d(np.asarray(M, dtype=float).T).T
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in M:
            w.writerow([FMT % v for v in row])


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    raise TypeError(type(o))


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def write_manifest(out, args, resolved, inputs, seeds, t0):
    write_json(os.path.join(out, "manifest.json"), {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": resolved,
        "seeds": seeds,
        "inputs": {p: sha256(p) for p in inputs if p},
        "version": __version__,
        "wall_time_s": round(time.time() - t0, 3),
    })


def read_vector(path):
    """All numbers in a one-row or one-column CSV; a header line is skipped."""
    vals = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            cells = [c for c in row if c.strip()]
            try:
                vals.extend(float(c) for c in cells)
            except ValueError:
                if i == 0:
                    continue
                raise ValueError("%s: non-numeric entry on line %d"
                                 % (path, i + 1))
    if not vals:
        raise ValueError("%s contains no numbers" % path)
    return np.array(vals)


def _tidy_rows(matrices, labels):
    rows = []
    for M, label in zip(matrices, labels):
        for a in range(M.shape[1]):
            for i in range(M.shape[0]):
                rows.append((a + 1, i, float(M[i, a]), label))
    return rows


# --------------------------------------------------------------- helpers ---

def _read_design(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    try:
        return np.array([[float(c) for c in r] for r in rows])
    except ValueError:
        raise ValueError("%s: design must be a numeric CSV matrix without "
                         "header" % path)


def _load(args):
    conf = cfgmod.load_config(args.config)
    if getattr(args, "design", None):
        conf.design = _read_design(args.design)
    paths = args.data or conf.data_paths()
    if any(p is None for p in paths):
        raise UsageError("every block needs a data file (config 'data' key "
                         "or --data)")
    if len(paths) != conf.K:
        raise UsageError("config has %d blocks but %d data files were given"
                         % (conf.K, len(paths)))
    blocks = [core.read_block_csv(p, center=conf.center, scale=conf.scale)
              for p in paths]
    return conf, paths, blocks


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


# --------------------------------------------------------------- commands ---

def cmd_fit(args):
    t0 = time.time()
    conf, paths, blocks = _load(args)
    comps = args.components if args.components is not None \
        else conf.components
    if comps < 1:
        raise UsageError("--components must be at least 1")
    spec = conf.build_spec(blocks, comps, args.seed)
    res = fit_model(blocks, spec)
    out = _out_dir(args)
    A = res.n_components
    head = ["component_%d" % (a + 1) for a in range(A)]
    labels = ["block%d" % (k + 1) for k in range(len(blocks))]
    for k, (W, T) in enumerate(zip(res.weights, res.scores)):
        write_matrix(os.path.join(out, "weights_%s.csv" % labels[k]), W, head)
        write_matrix(os.path.join(out, "scores_%s.csv" % labels[k]), T, head)
    write_rows(os.path.join(out, "weights.csv"),
               ["component", "index", "value", "label"],
               _tidy_rows(res.weights, labels))
    write_rows(os.path.join(out, "scores.csv"),
               ["component", "index", "value", "label"],
               _tidy_rows(res.scores, labels))
    trace = []
    for d in res.diagnostics:
        for sweep, v in enumerate(d["objective_trace"]):
            trace.append((d["component"] + 1, sweep, v))
    write_rows(os.path.join(out, "objective_trace.csv"),
               ["component", "sweep", "objective"], trace)
    diag = [{key: d[key] for key in ("component", "converged", "degenerate",
                                      "sweeps", "gradient_map_norms",
                                      "step_sizes", "fista_iterations",
                                      "fista_capped", "dykstra_capped")}
            for d in res.diagnostics]
    write_json(os.path.join(out, "diagnostics.json"),
               {"converged": res.converged, "components": diag})
    resolved = conf.resolved()
    resolved["components"] = comps
    write_manifest(out, args, resolved, list(paths) + conf.group_paths()
                   + [args.config, args.design], {"seed": args.seed}, t0)
    if not res.converged:
        log.error("solver did not converge; see diagnostics.json")
        return EXIT_NONCONVERGED
    return EXIT_OK


SIM_CONFIG = """\
# Two-block simulation problem: TV + l1 on X1, group l1,2 on X2.
[model]
design = 0 1; 1 0
components = 1
center = true
scale = false

[block 1]
data = X1.csv
tau = 0.33
s = 7.7
tv = 0.61
mu = 5e-4

[block 2]
data = X2.csv
tau = 0.32
group_l12 = 0.13
groups = groups.txt
mu = 5e-4
"""


def cmd_simulate(args):
    t0 = time.time()
    spec = simulate.SimSpec(n=args.n, p1=args.p1, p2=args.p2,
                            sd_t2=args.sd_t2, sd_e1=args.sd_e1,
                            sd_e2=args.sd_e2, seed=args.seed)
    X1, X2, truth = simulate.generate(spec)
    out = _out_dir(args)
    write_matrix(os.path.join(out, "X1.csv"), X1.data,
                 ["x%d" % j for j in range(X1.p)])
    write_matrix(os.path.join(out, "X2.csv"), X2.data,
                 ["x%d" % j for j in range(X2.p)])
    write_matrix(os.path.join(out, "truth_w1.csv"), truth.w1, ["w1"])
    write_matrix(os.path.join(out, "truth_w2.csv"), truth.w2, ["w2"])
    write_matrix(os.path.join(out, "truth_t.csv"),
                 np.column_stack([truth.t1, truth.t2]), ["t1", "t2"])
    write_json(os.path.join(out, "simspec.json"), spec.to_dict())
    pen.write_groups(os.path.join(out, "groups.txt"),
                     simulate.default_groups(spec.p2))
    with open(os.path.join(out, "simulation.ini"), "w",
              encoding="utf-8") as fh:
        fh.write(SIM_CONFIG)
    d = spec.to_dict()
    d.pop("true_w1")
    d.pop("true_w2")
    write_manifest(out, args, d, [], {"seed": args.seed}, t0)
    return EXIT_OK


def cmd_cv(args):
    t0 = time.time()
    conf, paths, blocks = _load(args)
    conf.cv = dict(conf.cv or {"target": conf.K, "folds": 7, "grid": {}})
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            axes, folds, target = cfgmod.parse_grid(fh.read())
        conf.cv["grid"] = axes
        if folds is not None:
            conf.cv["folds"] = folds
        if target is not None:
            conf.cv["target"] = target
    if args.folds is not None:
        conf.cv["folds"] = args.folds
    if args.target is not None:
        if not 1 <= args.target <= conf.K:
            raise UsageError("--target must be a block number 1..%d"
                             % conf.K)
        conf.cv["target"] = args.target
    if not 1 <= conf.cv["target"] <= conf.K:
        raise UsageError("CV target must be a block number 1..%d" % conf.K)
    if not conf.cv["grid"]:
        raise UsageError("no CV grid: add a [cv] section or pass --grid")
    grid = model.CvGrid(conf.cv["grid"], folds=conf.cv["folds"])
    template = conf.build_spec(blocks, seed=args.seed)
    raw = [core.read_block_csv(p, center=False).data for p in paths]
    res = model.cross_validate(raw, template, grid, conf.cv["target"] - 1,
                               seed=args.seed, center=conf.center,
                               scale=conf.scale, jobs=args.jobs)
    out = _out_dir(args)
    names = list(grid.axes)
    write_rows(os.path.join(out, "cv_table.csv"),
               ["cell"] + names + ["score", "nonconverged", "error"],
               [[i] + [r[n] for n in names]
                + [r["score"], r["nonconverged"], r["error"]]
                for i, r in enumerate(res.table)])
    write_json(os.path.join(out, "cv_best.json"),
               {"cell": res.best_index, "values": res.best_cell,
                "tied": res.tied})
    write_manifest(out, args, conf.resolved(), list(paths)
                   + conf.group_paths() + [args.config, args.grid],
                   {"seed": args.seed}, t0)
    return EXIT_NONCONVERGED if res.nonconverged else EXIT_OK


def cmd_bootstrap(args):
    t0 = time.time()
    conf, paths, blocks = _load(args)
    B = args.rounds or conf.bootstrap.get("rounds", 100)
    thr = conf.bootstrap.get("threshold", model.SELECTION_THRESHOLD)
    spec = conf.build_spec(blocks, seed=args.seed)
    raw = [core.read_block_csv(p, center=False).data for p in paths]
    rep = model.bootstrap_stability(raw, spec, B=B, seed=args.seed,
                                    center=conf.center, scale=conf.scale,
                                    threshold=thr, jobs=args.jobs)
    out = _out_dir(args)
    A = spec.n_components
    head = ["component_%d" % (a + 1) for a in range(A)]
    for k, C in enumerate(rep.selection_counts):
        write_matrix(os.path.join(out, "selection_block%d.csv" % (k + 1)),
                     C, head)
    write_rows(os.path.join(out, "selection_counts.csv"),
               ["component", "index", "value", "label"],
               [(a, i, int(v), lab) for a, i, v, lab in _tidy_rows(
                   rep.selection_counts,
                   ["block%d" % (k + 1)
                    for k in range(len(rep.selection_counts))])])
    write_rows(os.path.join(out, "kappa.csv"),
               ["block", "component", "kappa"],
               [(k + 1, a + 1, v) for k, row in enumerate(rep.kappa)
                for a, v in enumerate(row)])
    write_json(os.path.join(out, "bootstrap.json"),
               {"rounds": rep.B, "successes": rep.successes,
                "nonconverged": rep.nonconverged,
                "failures": [list(f) for f in rep.failures]})
    resolved = conf.resolved()
    resolved["bootstrap"] = {"rounds": B, "threshold": thr}
    write_manifest(out, args, resolved, list(paths) + conf.group_paths()
                   + [args.config], {"seed": args.seed}, t0)
    if rep.successes == 0:
        raise UsageError("every bootstrap fit failed: %s"
                         % rep.failures[0][1])
    return EXIT_NONCONVERGED if rep.nonconverged else EXIT_OK


def cmd_project(args):
    t0 = time.time()
    x = read_vector(args.input)
    kind = args.kind
    if kind == "auto":
        if args.s is not None and args.tau is None and args.block is None:
            kind = "l1"
        elif args.s is None:
            kind = "ellipsoid"
        else:
            kind = "both"
    if kind in ("l1", "soft", "both") and args.s is None:
        raise UsageError("--s is required for the %s projection" % kind)
    tau = 1.0 if args.tau is None else args.tau
    E = None
    if kind in ("ellipsoid", "both"):
        if args.block:
            blk = core.read_block_csv(args.block, center=True)
        else:
            blk = core.block_from_array(np.zeros((2, x.size)))
        if blk.p != x.size:
            raise UsageError("vector has %d entries, block has %d columns"
                             % (x.size, blk.p))
        E = Ellipsoid(blk, tau, args.c)
    if kind == "soft":
        y = soft_threshold(x, args.s)
        report = {"iterations": 1, "residual": 0.0, "active": {}}
    elif kind == "l1":
        y = project_l1(x, args.s)
        report = {"iterations": 1, "residual": 0.0,
                  "active": {"l1": bool(abs(np.abs(y).sum() - args.s)
                                        <= 1e-8 * args.s)}}
    else:
        cons = core.BlockConstraint(tau, args.s if kind == "both" else None,
                                    args.c)
        rep = project_W(x, cons, E, args.eps, args.max_iter)
        y = rep.point
        report = {"iterations": rep.iterations, "residual": rep.residual,
                  "active": rep.active, "converged": rep.converged}
    out = _out_dir(args)
    write_matrix(os.path.join(out, "projected.csv"), y, ["value"])
    report["kind"] = kind
    write_json(os.path.join(out, "report.json"), report)
    print("iterations=%d residual=%.3g active=%s"
          % (report["iterations"], report["residual"],
             ",".join(k for k, v in report["active"].items() if v) or "none"))
    write_manifest(out, args, {"kind": kind, "s": args.s, "tau": tau,
                               "c": args.c, "eps": args.eps},
                   [args.input, args.block], {"seed": args.seed}, t0)
    if report.get("converged") is False:
        return EXIT_NONCONVERGED
    return EXIT_OK


# ------------------------------------------------------------------ main ---

def build_parser():
    p = _Parser(prog="structgcca", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="count", default=0)
        if config:
            sp.add_argument("--config", required=True, help="INI model file")
            sp.add_argument("--data", "--blocks", nargs="+", metavar="CSV",
                            help="block CSVs (override the config)")

    sp = sub.add_parser("fit", help="fit the model")
    common(sp)
    sp.add_argument("--components", type=int)
    sp.add_argument("--design", help="CSV 0/1 design matrix (overrides the "
                    "config)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("simulate", help="write a simulated two-block dataset")
    common(sp, config=False)
    sp.add_argument("--config", help="ignored; accepted for symmetry")
    d = simulate.SimSpec
    sp.add_argument("--n", type=int, default=d.n)
    sp.add_argument("--p1", type=int, default=d.p1)
    sp.add_argument("--p2", type=int, default=d.p2)
    sp.add_argument("--sd-t2", type=float, default=d.sd_t2)
    sp.add_argument("--sd-e1", type=float, default=d.sd_e1)
    sp.add_argument("--sd-e2", type=float, default=d.sd_e2)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("cv", help="grid-search cross-validation")
    common(sp)
    sp.add_argument("--grid", help="file of axes, e.g. 'block1.s = 5, 10'")
    sp.add_argument("--folds", type=int)
    sp.add_argument("--target", type=int, help="block number, from 1")
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("bootstrap", help="bootstrap selection stability")
    common(sp)
    sp.add_argument("--rounds", type=int)
    sp.set_defaults(func=cmd_bootstrap)

    sp = sub.add_parser("project", help="apply a single projection")
    common(sp, config=False)
    sp.add_argument("--config", help="ignored; accepted for symmetry")
    sp.add_argument("--input", required=True, help="vector CSV")
    sp.add_argument("--kind", default="auto",
                    choices=("auto", "l1", "soft", "ellipsoid", "both"))
    sp.add_argument("--s", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--c", type=float, default=1.0)
    sp.add_argument("--eps", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=10000)
    sp.add_argument("--block", help="data CSV defining the ellipsoid")
    sp.set_defaults(func=cmd_project)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError, pen.PowerIterationError) as e:
        print("structgcca %s: error: %s" % (args.command, e), file=sys.stderr)
        return EXIT_INPUT
    except NewtonError as e:
        print("structgcca %s: numerical failure: %s" % (args.command, e),
              file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
