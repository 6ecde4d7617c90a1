"""Command-line front end: ``wvspace <command> [options]``.

Each command writes ``<out>.csv`` with the data and ``<out>.json`` with a summary,
the full configuration and a pass/fail verdict.  Options may also come from a flat
``key = value`` file given with ``--config``; the environment variables
WVSPACE_SEED and WVSPACE_WORKERS override the file, and explicit flags override both.
"""
import argparse
import csv
import json
import logging
import math
import os
import sys
from datetime import datetime, timezone

import numpy as np

from .exceptions import BelowResolutionError
from .geometry import (Atom, AtomCombination, Domain, QuadratureSpec, WeightFn, atom_l2_norm,
                       l2_error_estimate, random_unit_vectors, weight)
from .pipeline import (Scaffold, budget_for_resolution, default_workers, fit_slope,
                       random_combination, rate_experiment, single_atom)
from .sampling import MaureyConfig, maurey_compress
from .training import FitProblem, fit, min_norm_path

logger = logging.getLogger("wvspace")

COMMANDS = ("norms", "approximate-atom", "rates", "maurey", "train", "path")

# allowed slack above the theoretical slope for the pass/fail verdict of `rates`
RATE_SLACK = {("combination", 2): 0.25, ("combination", 3): 0.15,
              ("atom", 2): 0.10, ("atom", 3): 0.15}


def int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def t_grid(text):
    """'a:b:N' -> N evenly spaced offsets from a to b."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("t grid must look like start:stop:count")
    a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    if n < 1:
        raise argparse.ArgumentTypeError("t grid needs a positive count")
    return np.linspace(a, b, n).tolist()


def read_config(path):
    """Flat key = value file; '#' starts a comment, dashes and underscores are equivalent."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def _common(p):
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("--domain", choices=("ball", "square"), default="ball")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--weight", choices=("ball_power", "square_chord_sqrt", "unweighted"),
                   default=None, help="weight kind (default: natural weight of the domain)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200_000, help="Monte Carlo quadrature budget")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="output prefix for .csv and .json")


def build_parser():
    parser = argparse.ArgumentParser(prog="wvspace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("norms", help="atom norms against the weight over an offset grid")
    _common(p)
    p.add_argument("--t-grid", type=t_grid, default=t_grid("-0.9:0.9999:50"))

    p = sub.add_parser("approximate-atom", help="single-atom approximation errors")
    _common(p)
    p.add_argument("--m", type=int_list, default=[8, 16, 32])
    p.add_argument("--atoms", type=int, default=50)
    p.add_argument("--t", type=float, default=None, help="fixed offset (default: random)")

    p = sub.add_parser("rates", help="convergence-rate experiment with slope fit")
    _common(p)
    p.add_argument("--m", type=int_list, default=[8, 16, 32, 64])
    p.add_argument("--n", type=int_list, default=None, help="budgets instead of resolutions")
    p.add_argument("--generator", choices=("combination", "atom"), default="combination")
    p.add_argument("--atoms", type=int, default=200)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--slack", type=float, default=None)

    p = sub.add_parser("maurey", help="Maurey sampling rate and bound check")
    _common(p)
    p.add_argument("--n", type=int_list, default=[4, 16, 64])
    p.add_argument("--atoms", type=int, default=100)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--trials", type=int, default=10)

    for name, helptext in (("train", "fit a shallow network"),
                           ("path", "warm-started fits along decreasing lambda")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--points", type=int, default=10)
        p.add_argument("--neurons", type=int, default=20)
        p.add_argument("--regularizer", default="weighted_vw",
                       choices=("weighted_vw", "path_norm", "weight_decay"))
        p.add_argument("--budget", type=int, default=5000)
        p.add_argument("--restarts", type=int, default=10)
        if name == "train":
            p.add_argument("--lam", type=float, default=1e-3)
        else:
            p.add_argument("--lams", type=float_list, default=[1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    parser.commands = sub.choices
    return parser


def _apply_overrides(parser, argv):
    """Parse with config-file defaults and environment overrides applied."""
    args = parser.parse_args(argv)
    sub = parser.commands[args.command]
    defaults = {}
    if getattr(args, "config", None):
        conf = read_config(args.config)
        known = {a.dest: a for a in sub._actions}
        for key, val in conf.items():
            if key == "command":
                if val != args.command:
                    raise ValueError(f"config names command {val!r} but {args.command!r} was given")
                continue
            if key not in known or key in ("config", "help"):
                raise ValueError(f"unknown config key {key!r} for command {args.command}")
            action = known[key]
            defaults[key] = action.type(val) if action.type else val
            if action.choices is not None and defaults[key] not in action.choices:
                raise ValueError(f"config value {val!r} not allowed for {key}")
    env = {"seed": os.environ.get("WVSPACE_SEED"), "workers": os.environ.get("WVSPACE_WORKERS")}
    for key, val in env.items():
        if val is not None:
            defaults[key] = int(val)
    if defaults:
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.workers is None:
        args.workers = default_workers()
    if args.out is None:
        args.out = f"wvspace_{args.command.replace('-', '_')}"
    return args


def _weight(args, dom):
    kind = args.weight or ("square_chord_sqrt" if dom.kind == "square" else "ball_power")
    return WeightFn(kind, dom.dim)


def _domain(args):
    return Domain.square() if args.domain == "square" else Domain.ball(args.dim)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def _write_json(path, summary, args):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    body = dict(summary)
    body["config"] = config
    body["created"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


# ------------------------------------------------------------------ commands

def cmd_norms(args):
    dom = _domain(args)
    wf = _weight(args, dom)
    q = QuadratureSpec.slice() if dom.kind == "ball" else QuadratureSpec.monte_carlo(args.samples, args.seed)
    xi = np.zeros(dom.dim)
    xi[0] = 1.0
    power = 1.5 + (dom.dim - 1) / 4.0
    rows, normalized = [], []
    for t in args.t_grid:
        atom = Atom(xi, t)
        norm = atom_l2_norm(atom, dom, q)
        w = weight(wf, atom)
        ratio = norm / w if w > 0 else math.inf
        scaled = norm * (1.0 - t) ** (-power) if t < 1 else math.nan
        normalized.append(scaled)
        rows.append([float(t), norm, w, ratio, scaled])
    vals = np.array([v for v in normalized if np.isfinite(v) and v > 0])
    spread = float(vals.max() / vals.min()) if len(vals) else math.nan
    ok = bool(dom.kind != "ball" or spread <= 10.0)
    return (["t", "norm", "weight", "norm_over_weight", "normalized_norm"], rows,
            {"spread": spread, "threshold": 10.0, "pass": ok}, ok)


def cmd_approximate_atom(args):
    dom = _domain(args)
    wf = _weight(args, dom)
    rng = np.random.default_rng(args.seed)
    q = QuadratureSpec.monte_carlo(min(args.samples, 50_000), args.seed)
    rows, ratios, skipped = [], {}, 0
    D = random_unit_vectors(args.atoms, dom.dim, rng)
    T = rng.uniform(-0.95, 0.95, args.atoms) if args.t is None else np.full(args.atoms, args.t)
    for m in args.m:
        try:
            n = budget_for_resolution(dom, m)
            scaffold = Scaffold(dom, n)
        except (ValueError, BelowResolutionError) as exc:
            logger.warning("m=%d skipped: %s", m, exc)
            skipped += 1
            continue
        for j in range(args.atoms):
            atom = Atom(D[j], float(T[j]))
            try:
                approx = scaffold.approximate(atom)
            except BelowResolutionError:
                skipped += 1
                continue
            err, se = l2_error_estimate(AtomCombination.single(atom), approx.combination, dom, q,
                                        support=[approx.support] if approx.support else None)
            w = weight(wf, atom)
            ratio = err / (w * n ** (-1.5 / dom.dim)) if w > 0 else math.nan
            ratios.setdefault(m, []).append(ratio)
            rows.append([m, n, j, float(T[j]), err, se, w, ratio, approx.branch])
    summary = {"max_ratio": {str(m): float(np.nanmax(v)) for m, v in ratios.items()},
               "skipped": skipped, "pass": True}
    return (["m", "n", "atom", "t", "error", "stderr", "weight", "ratio", "branch"], rows,
            summary, True)


def cmd_rates(args):
    dom = _domain(args)
    wf = _weight(args, dom)
    gen = (single_atom(args.t, seed=args.seed) if args.generator == "atom"
           else random_combination(args.atoms, seed=args.seed))
    q = QuadratureSpec.monte_carlo(args.samples, args.seed)
    cfg = MaureyConfig(1, trials=args.trials, seed=args.seed)
    kw = {"n_list": args.n} if args.n else {"m_list": args.m}
    report = rate_experiment(gen, dom=dom, wf=wf, q=q, cfg=cfg, workers=args.workers, **kw)
    slack = args.slack if args.slack is not None else RATE_SLACK.get(
        (args.generator, min(dom.dim, 3)), 0.15)
    threshold = report.target_slope + slack
    rows = [[e.n, e.error, e.stderr, e.seed] for e in report.entries]
    summary = report.summary(threshold)
    return ["n", "error", "stderr", "seed"], rows, summary, summary["pass"]


def maurey_study(atoms, n_list, seeds, trials, dom, samples, seed):
    """Best-of-trials and mean errors of Maurey sampling over random sums of atoms."""
    rows = []
    for k in range(seeds):
        rng = np.random.default_rng([seed, k])
        D = random_unit_vectors(atoms, dom.dim, rng)
        h = AtomCombination(D, rng.uniform(-0.5, 0.5, atoms), np.full(atoms, 1.0 / atoms))
        q = QuadratureSpec.monte_carlo(samples, seed + k)
        gram = None
        for n in n_list:
            res = maurey_compress(h, MaureyConfig(n, trials, seed=1000 * k + n), dom, q, gram=gram)
            gram = res.gram
            rows.append([n, k, res.error, res.mean_error, res.bound])
    return rows


def cmd_maurey(args):
    dom = _domain(args)
    rows = maurey_study(args.atoms, args.n, args.seeds, args.trials, dom,
                        min(args.samples, 50_000), args.seed)
    med = [float(np.median([r[3] for r in rows if r[0] == n])) for n in args.n]
    slope = fit_slope(args.n, med)[0] if len(args.n) >= 3 else math.nan
    within = float(np.mean([r[2] <= r[4] for r in rows]))
    ok = bool(abs(slope + 0.5) <= 0.15 and within >= 0.95)
    summary = {"median_error": dict(zip(map(str, args.n), med)), "median_slope": slope,
               "within_bound": within, "pass": ok}
    return ["n", "seed", "best_error", "mean_error", "bound"], rows, summary, ok


def _training_problem(args, lam):
    rng = np.random.default_rng(args.seed)
    X = random_unit_vectors(args.points, args.dim, rng) * (0.95 * rng.random(args.points) ** (1 / args.dim))[:, None]
    y = rng.standard_normal(args.points)
    return FitProblem(X, y, lam, args.neurons, args.regularizer)


def cmd_train(args):
    prob = _training_problem(args, args.lam)
    res = fit(prob, optimizer_budget=args.budget, restarts=args.restarts, seed=args.seed,
              workers=args.workers)
    rows = [[k, float(v)] for k, v in enumerate(res.trace)]
    summary = res.to_json(kind=prob.regularizer)
    summary["pass"] = bool(np.isfinite(res.objective))
    return ["iteration", "objective"], rows, summary, summary["pass"]


def cmd_path(args):
    prob = _training_problem(args, args.lams[0])
    path = min_norm_path(prob, args.lams, optimizer_budget=args.budget, restarts=args.restarts,
                         seed=args.seed)
    rows = [[p.lam, p.residual, p.vw_cost, p.objective, p.net.active_count()] for p in path]
    summary = {"final_residual": path[-1].residual, "final_vw_cost": path[-1].vw_cost,
               "pass": True}
    return ["lambda", "residual", "vw_cost", "objective", "active"], rows, summary, True


HANDLERS = {"norms": cmd_norms, "approximate-atom": cmd_approximate_atom, "rates": cmd_rates,
            "maurey": cmd_maurey, "train": cmd_train, "path": cmd_path}


def run(args):
    """Execute a parsed command; returns the process exit code."""
    header, rows, summary, ok = HANDLERS[args.command](args)
    _write_csv(args.out + ".csv", header, rows)
    _write_json(args.out + ".json", summary, args)
    print(f"{args.command}: {'pass' if ok else 'fail'} ({len(rows)} rows -> {args.out}.csv)")
    return 0 if ok else 1


def _command_from_config(argv):
    """Prepend the command named in a config file when the command line has none."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if known.config is None or any(tok in COMMANDS for tok in rest):
        return argv
    command = read_config(known.config).get("command")
    if command is None:
        return argv
    return [command, *rest, "--config", known.config]


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        argv = _command_from_config(argv)
        args = _apply_overrides(parser, argv)
    except (ValueError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"wvspace: invalid configuration: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return run(args)
    except (ValueError, BelowResolutionError) as exc:
        print(f"wvspace {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
