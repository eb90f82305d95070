"""Command-line entry point: ``dacd simulate | run | bench | export-plots``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .acquisition import parse_acquisition
from .active_loop import ArrayOracle, LoopConfig, LoopResult, run_dacd
from .detect import estimate_mcp, knn_slope_2d
from .evaluation import f1_score, load_benchmark_config, run_benchmark
from .simulate import default_scenarios, grid_2d, load_scenarios, load_welllog, simulate, test_function_2d

log = logging.getLogger("dacd")

OUTPUT_ROOT_ENV = "DACD_OUTPUT_ROOT"
NOISE_2D = float(np.sqrt(0.1))


class CLIError(Exception):
    """Reported on stderr with exit status 1."""


def _fmt(v) -> str:
    return f"{v:.6g}"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class Output:
    """Writes into one directory, refusing to clobber files unless told to."""

    def __init__(self, directory: Path, overwrite: bool):
        self.dir = Path(directory)
        self.overwrite = overwrite
        self.dir.mkdir(parents=True, exist_ok=True)

    def check(self, *names):
        if self.overwrite:
            return
        clash = [n for n in names if (self.dir / n).exists()]
        if clash:
            raise CLIError(f"{self.dir}: refusing to overwrite {', '.join(clash)} (use --overwrite)")

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "dacd-output")) / default_name


def _scenarios(args):
    return load_scenarios(args.config) if args.config else default_scenarios()


def _get_scenario(args):
    known = _scenarios(args)
    if args.scenario not in known:
        raise CLIError(f"unknown scenario {args.scenario!r}; known: {', '.join(known)}")
    return known[args.scenario]


def _acq_type(text):
    try:
        return parse_acquisition(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --- simulate ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = _get_scenario(args).with_seed(args.seed)
    out = Output(_out_dir(args, f"simulate_{spec.name}_seed{args.seed}"), args.overwrite)
    out.check("series.csv", "changepoints.csv")
    series = simulate(spec)
    out.write("series.csv", series.to_csv())
    rows = zip(series.true_changepoints, series.true_indices, series.jump_sizes)
    out.write("changepoints.csv", _csv(["time", "index", "jump_size"], rows))
    print(f"{spec.name}: {len(series.grid)} points, change-points {np.round(series.true_changepoints, 4).tolist()}")
    return 0


# --- run ----------------------------------------------------------------------------------


def _write_posterior_1d(out: Output, result: LoopResult):
    s = result.final_slice
    grid = np.asarray(s.grid).reshape(-1)
    out.write(
        "posterior.csv",
        _csv(["x", "mean", "var", "dmean", "dvar"], zip(grid, s.mean, s.var, s.dmean, s.dvar)),
    )


def _write_posterior_2d(out: Output, result: LoopResult):
    s = result.final_slice
    cols = zip(s.grid[:, 0], s.grid[:, 1], s.mean, s.var, s.dmean[:, 0], s.dmean[:, 1], s.dvar[:, 0], s.dvar[:, 1])
    out.write("posterior.csv", _csv(["x1", "x2", "mean", "var", "dmean1", "dmean2", "dvar1", "dvar2"], cols))


def _write_samples(out: Output, result: LoopResult):
    X, y = result.samples.inputs, result.samples.targets
    header = ["index"] + [f"x{d + 1}" for d in range(X.shape[1])] + ["y"]
    if X.shape[1] == 1:
        header = ["index", "x", "y"]
    rows = ([i, *x, yy] for i, x, yy in zip(result.indices, X, y))
    out.write("samples.csv", _csv(header, rows))


def cmd_run(args) -> int:
    sources = [args.scenario is not None, args.data is not None, args.test_2d]
    if sum(sources) != 1:
        raise CLIError("give exactly one of --scenario, --data, --test-2d")

    truth_idx = None
    if args.test_2d:
        name = "test2d"
        grid = grid_2d(args.grid_size)
        values = test_function_2d(grid[:, 0], grid[:, 1])
        oracle = ArrayOracle(values, noise_std=args.noise if args.noise is not None else NOISE_2D, seed=args.seed)
        init_count = args.init_count or 100
        boundary = False
    elif args.data:
        name = Path(args.data).stem
        samples = load_welllog(args.data)
        grid = samples.inputs[:, 0]
        oracle = ArrayOracle(samples.targets)
        init_count = args.init_count or 8
        boundary = True
    else:
        spec = _get_scenario(args).with_seed(args.seed)
        name = spec.name
        series = simulate(spec)
        grid = series.grid
        oracle = ArrayOracle(series.values)
        truth_idx = series.true_indices
        init_count = args.init_count or 8
        boundary = True

    out = Output(_out_dir(args, f"run_{name}_seed{args.seed}"), args.overwrite)
    files = ["trace.jsonl", "posterior.csv", "samples.csv", "detection.json", "manifest.json"]
    out.check(*files)

    cfg = LoopConfig(
        budget=args.budget,
        acquisition=args.acq,
        init_count=init_count,
        boundary_init=boundary,
        refit_every=args.refit_every,
        seed=args.seed,
    )
    result = run_dacd(oracle, grid, cfg)

    out.write("trace.jsonl", result.trace.to_jsonl())
    _write_samples(out, result)
    manifest = {
        "subcommand": "run",
        "source": {"scenario": args.scenario, "data": args.data, "test_2d": args.test_2d},
        "config": args.config,
        "output_dir": str(out.dir),
        "seed": args.seed,
        "acquisition": args.acq.label,
        "budget": args.budget,
        "init_count": init_count,
        "refit_every": args.refit_every,
        "dim": result.samples.dim,
        "final_params": result.final_state.params.as_dict(),
    }

    if args.test_2d:
        _write_posterior_2d(out, result)
        k = args.k or 10
        pts = knn_slope_2d(result.samples, k, k_neighbors=10)
        detection = {"method": "knn_slope", "k_neighbors": 10, "changepoints": pts.tolist()}
        manifest["grid_size"] = args.grid_size
    else:
        _write_posterior_1d(out, result)
        k = args.k or (len(truth_idx) if truth_idx is not None else 1)
        det = estimate_mcp(result.final_slice.mean, args.window, k, grid=result.final_slice.grid)
        detection = {"method": "filtered_derivative", **det.to_json()}
        if truth_idx is not None:
            margin = args.margin * len(grid)
            rep = f1_score(det.indices, truth_idx, margin)
            detection["truth_indices"] = truth_idx.tolist()
            detection["score"] = {
                "tp": rep.tp, "fp": rep.fp, "fn": rep.fn,
                "precision": rep.precision, "recall": rep.recall, "f1": rep.f1, "margin": margin,
            }
    out.write_json("detection.json", detection)
    out.write_json("manifest.json", manifest)

    cps = detection["changepoints"]
    print(f"{name}: {len(result.trace)} queries, change-points {np.round(cps, 4).tolist()}")
    if "score" in detection:
        print(f"F1 = {_fmt(detection['score']['f1'])} (margin {_fmt(detection['score']['margin'])} indices)")
    return 0


# --- bench ----------------------------------------------------------------------------------


def cmd_bench(args) -> int:
    overrides = {
        "runs": args.runs,
        "mcp_runs": args.mcp_runs if args.mcp_runs is not None else args.runs,
        "base_seed": args.seed,
    }
    if args.scenarios:
        overrides["scenarios"] = tuple(s.strip() for s in args.scenarios.split(",") if s.strip())
    if args.methods:
        overrides["methods"] = tuple(parse_acquisition(m) for m in args.methods.split(",") if m.strip())
    cfg = load_benchmark_config(args.config, **overrides)
    cfg.scenario_specs()  # fail early on unknown names

    out = Output(_out_dir(args, f"bench_seed{cfg.base_seed}"), args.overwrite)
    out.check("table.csv", "table.json", "runs.jsonl")

    workers = args.workers or os.cpu_count() or 1
    done = [0]

    def progress(rec):
        done[0] += 1
        if args.verbose:
            print(f"[{done[0]}] {rec.scenario} {rec.method} run {rec.run}: f1={_fmt(rec.f1)}", file=sys.stderr)

    result = run_benchmark(cfg, workers=workers, progress=progress)
    out.write("runs.jsonl", result.records_jsonl())
    out.write_json("table.json", result.to_json())
    out.write("table.csv", result.to_csv())
    print(result.to_csv(), end="")
    return 0


# --- export-plots ------------------------------------------------------------------------------


def _read_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {h: body[:, i] for i, h in enumerate(header)}


def cmd_export_plots(args) -> int:
    run_dir = Path(args.run_dir)
    post_path = run_dir / "posterior.csv"
    samples_path = run_dir / "samples.csv"
    missing = [p.name for p in (post_path, samples_path) if not p.exists()]
    if missing:
        raise CLIError(f"{run_dir}: missing run artifacts {', '.join(missing)}")
    out = Output(Path(args.out) if args.out else run_dir / "plots", args.overwrite)
    post = _read_csv(post_path)

    if "x" in post:
        out.check("posterior_1d.csv", "samples.csv")
        half = 1.959963984540054 * np.sqrt(post["var"])
        rows = zip(post["x"], post["mean"], post["mean"] - half, post["mean"] + half, post["dmean"], post["dvar"])
        out.write("posterior_1d.csv", _csv(["x", "mean", "lower95", "upper95", "dmean", "dvar"], rows))
        written = ["posterior_1d.csv"]
    else:
        out.check("mean_grid.csv", "dmean_norm_grid.csv", "samples.csv")
        x1, x2 = np.unique(post["x1"]), np.unique(post["x2"])
        shape = (len(x1), len(x2))
        mean = post["mean"].reshape(shape)
        dnorm = np.hypot(post["dmean1"], post["dmean2"]).reshape(shape)
        for name, mat in (("mean_grid.csv", mean), ("dmean_norm_grid.csv", dnorm)):
            header = ["x1\\x2"] + [_fmt(v) for v in x2]
            out.write(name, _csv(header, ([a, *row] for a, row in zip(x1, mat))))
        written = ["mean_grid.csv", "dmean_norm_grid.csv"]
    out.write("samples.csv", samples_path.read_text())
    print(f"wrote {', '.join(written + ['samples.csv'])} to {out.dir}")
    return 0


# --- parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dacd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--out", help=f"output directory (default under ${OUTPUT_ROOT_ENV})")
        sp.add_argument("--overwrite", action="store_true", help="replace existing result files")
        sp.add_argument("--seed", type=int, default=seed_default)

    s = sub.add_parser("simulate", help="simulate one scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--config", help="scenario INI file (default: bundled scenarios)")
    common(s)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="one active-learning experiment")
    r.add_argument("--scenario")
    r.add_argument("--data", help="one- or two-column delimited series (e.g. well-log)")
    r.add_argument("--test-2d", action="store_true", help="the sin(2x1)cos(2x2) surface")
    r.add_argument("--config", help="scenario INI file")
    r.add_argument("--acq", type=_acq_type, default=parse_acquisition("ei:0.001"),
                   help="kind:param[:signed], e.g. ei:0.001, pi:0.075, ucb:2, random")
    r.add_argument("--budget", type=int, default=20)
    r.add_argument("--k", type=int, help="number of change-points to report")
    r.add_argument("--window", type=int, default=100)
    r.add_argument("--init-count", type=int)
    r.add_argument("--refit-every", type=int, default=1)
    r.add_argument("--margin", type=float, default=0.05, help="F1 margin as a fraction of the grid")
    r.add_argument("--grid-size", type=int, default=50)
    r.add_argument("--noise", type=float, help="2-D observation noise std (default sqrt(0.1))")
    common(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="F1 benchmark sweep")
    b.add_argument("--config", help="benchmark INI file (default: full sweep)")
    b.add_argument("--runs", type=int)
    b.add_argument("--mcp-runs", type=int)
    b.add_argument("--scenarios", help="comma-separated subset")
    b.add_argument("--methods", help="comma-separated acquisition specs")
    b.add_argument("--workers", type=int, help="process pool size (default: logical cores)")
    common(b, seed_default=None)
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("export-plots", help="plot-ready columns from a run directory")
    e.add_argument("run_dir")
    e.add_argument("--out")
    e.add_argument("--overwrite", action="store_true")
    e.set_defaults(func=cmd_export_plots)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dacd: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
