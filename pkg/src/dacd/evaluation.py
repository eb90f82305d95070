"""Margin-based F1 scoring and the Monte-Carlo benchmark harness."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .acquisition import AcquisitionSpec, parse_acquisition
from .active_loop import ArrayOracle, LoopConfig, run_dacd
from .detect import estimate_mcp
from .simulate import ScenarioSpec, default_scenarios, load_scenarios, simulate

__all__ = [
    "EvalReport",
    "match_changepoints",
    "f1_score",
    "BenchmarkConfig",
    "BenchmarkAborted",
    "RunRecord",
    "BenchmarkResult",
    "load_benchmark_config",
    "run_single",
    "run_benchmark",
]

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.2


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    margin: float


def _greedy_pairs(dist, margin):
    pairs = sorted(
        (dist[i, j], i, j)
        for i in range(dist.shape[0])
        for j in range(dist.shape[1])
        if dist[i, j] <= margin
    )
    used_p, used_t = set(), set()
    for _, i, j in pairs:
        if i not in used_p and j not in used_t:
            used_p.add(i)
            used_t.add(j)
    return len(used_p)


def _optimal_pairs(dist, margin):
    if dist.size == 0:
        return 0
    within = dist <= margin
    # any in-margin pair outweighs every possible sum of distances
    big = (float(margin) + 1.0) * (min(dist.shape) + 1)
    cost = np.where(within, dist, big)
    rows, cols = linear_sum_assignment(cost)
    return int(within[rows, cols].sum())


def match_changepoints(predicted, truth, margin: float, method: str = "optimal") -> tuple[int, int, int]:
    """One-to-one matching of predictions to true change-points within ``margin``.

    ``method="optimal"`` maximizes the number of matched pairs (ties broken
    by total distance); ``"greedy"`` accepts pairs nearest-first. Returns
    ``(tp, fp, fn)``.
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    pred = np.asarray(predicted, dtype=float).reshape(-1)
    true = np.asarray(truth, dtype=float).reshape(-1)
    dist = np.abs(pred[:, None] - true[None, :])
    if method == "optimal":
        tp = _optimal_pairs(dist, margin)
    elif method == "greedy":
        tp = _greedy_pairs(dist, margin)
    else:
        raise ValueError(f"unknown matching method {method!r}")
    return tp, len(pred) - tp, len(true) - tp


def _ratio(a, b):
    return a / b if b else 0.0


def f1_score(predicted, truth, margin: float, method: str = "optimal") -> EvalReport:
    tp, fp, fn = match_changepoints(predicted, truth, margin, method)
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return EvalReport(tp, fp, fn, p, r, _ratio(2 * p * r, p + r), float(margin))


# --- benchmark -----------------------------------------------------------------------


class BenchmarkAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchmarkConfig:
    """One benchmark sweep.

    ``runs`` applies to single change-point scenarios and ``mcp_runs`` /
    ``mcp_budget`` to scenarios with more than one required jump. ``margin``
    is a fraction of the grid length; run ``r`` uses seed ``base_seed + r``.
    """

    scenarios: tuple[str, ...]
    methods: tuple[AcquisitionSpec, ...]
    runs: int = 100
    mcp_runs: int = 30
    budget: int = 20
    mcp_budget: int = 100
    init_count: int = 8
    window: int = 100
    margin: float = 0.05
    base_seed: int = 0
    scenario_file: str | None = None

    def __post_init__(self):
        if self.runs < 1 or self.mcp_runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.scenarios or not self.methods:
            raise ValueError("need at least one scenario and one method")

    def scenario_specs(self) -> dict[str, ScenarioSpec]:
        known = load_scenarios(self.scenario_file) if self.scenario_file else default_scenarios()
        missing = [s for s in self.scenarios if s not in known]
        if missing:
            raise KeyError(f"unknown scenario(s): {', '.join(missing)}")
        return {s: known[s] for s in self.scenarios}

    @staticmethod
    def _multi(spec: ScenarioSpec) -> bool:
        return (spec.required_jumps or 1) > 1

    def runs_for(self, spec: ScenarioSpec) -> int:
        return self.mcp_runs if self._multi(spec) else self.runs

    def budget_for(self, spec: ScenarioSpec) -> int:
        return self.mcp_budget if self._multi(spec) else self.budget

    def to_json(self) -> dict:
        d = asdict(self)
        d["methods"] = [m.label for m in self.methods]
        d["scenarios"] = list(self.scenarios)
        return d


def _split_list(raw: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in raw.replace("\n", ",").split(",") if p.strip())


def load_benchmark_config(path: str | Path | None = None, **overrides) -> BenchmarkConfig:
    """Read the ``[benchmark]`` section of an INI file (bundled default if None)."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is None:
        parser.read_string(resources.files("dacd").joinpath("data/benchmark.ini").read_text())
    else:
        with open(path) as fh:
            parser.read_file(fh)
    sec = parser["benchmark"]
    kw = {
        "scenarios": _split_list(sec["scenarios"]),
        "methods": tuple(parse_acquisition(m) for m in _split_list(sec["methods"])),
    }
    for key in ("runs", "mcp_runs", "budget", "mcp_budget", "init_count", "window", "base_seed"):
        if key in sec:
            kw[key] = sec.getint(key)
    if "margin" in sec:
        kw["margin"] = sec.getfloat("margin")
    if "scenario_file" in sec:
        kw["scenario_file"] = str((Path(path).parent if path else Path()) / sec["scenario_file"])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return BenchmarkConfig(**kw)


@dataclass
class RunRecord:
    scenario: str
    method: str
    run: int
    seed: int
    predicted: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    margin: float = 0.0
    sampled: list = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0

    @property
    def failed(self) -> bool:
        return self.error is not None


def run_single(
    spec: ScenarioSpec,
    method: AcquisitionSpec,
    run: int,
    cfg: BenchmarkConfig,
) -> RunRecord:
    """Simulate, run the active loop, detect, and score one benchmark cell entry.

    Predictions and truth are compared in grid-index units.
    """
    seed = cfg.base_seed + run
    rec = RunRecord(spec.name, method.label, run, seed)
    start = time.perf_counter()
    try:
        series = simulate(spec.with_seed(seed))
        loop_cfg = LoopConfig(
            budget=cfg.budget_for(spec), acquisition=method, init_count=cfg.init_count, seed=seed
        )
        result = run_dacd(ArrayOracle(series.values), series.grid, loop_cfg)
        k = spec.required_jumps or len(series.true_changepoints) or 1
        det = estimate_mcp(result.final_slice.mean, cfg.window, k)
        if k > 1:
            assert np.min(np.diff(det.indices)) >= 2 * cfg.window, "2A separation violated"
        margin = cfg.margin * len(series.grid)
        report = f1_score(det.indices, series.true_indices, margin)
        rec.predicted = det.indices.tolist()
        rec.truth = series.true_indices.tolist()
        rec.sampled = [int(i) for i in result.indices]
        rec.margin = margin
        for name in ("tp", "fp", "fn", "precision", "recall", "f1"):
            setattr(rec, name, getattr(report, name))
    except AssertionError:
        raise
    except Exception as exc:  # one bad run must not sink a sweep
        log.warning("%s / %s / run %d failed: %s", spec.name, method.label, run, exc)
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.seconds = time.perf_counter() - start
    return rec


def _run_job(args):
    return run_single(*args)


class _Serial:
    """In-process stand-in for an executor."""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @staticmethod
    def map(fn, items):
        return map(fn, items)


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    records: list[RunRecord]

    def cell(self, scenario: str, method: str) -> dict:
        ok = [r.f1 for r in self.records if r.scenario == scenario and r.method == method and not r.failed]
        failed = sum(1 for r in self.records if r.scenario == scenario and r.method == method and r.failed)
        n = len(ok)
        mean = float(np.mean(ok)) if n else math.nan
        se = float(np.std(ok, ddof=1) / math.sqrt(n)) if n > 1 else 0.0 if n else math.nan
        return {"mean": mean, "se": se, "n": n, "failed": failed}

    def table(self) -> dict[str, dict[str, dict]]:
        """``table[method][scenario] -> {mean, se, n, failed}``."""
        return {
            m.label: {s: self.cell(s, m.label) for s in self.config.scenarios}
            for m in self.config.methods
        }

    def mean_f1(self, scenario: str, method: str) -> float:
        return self.cell(scenario, method)["mean"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["method"]
        for s in self.config.scenarios:
            header += [s, f"{s}_se"]
        w.writerow(header)
        for method, row in self.table().items():
            line = [method]
            for s in self.config.scenarios:
                line += [f"{row[s]['mean']:.6g}", f"{row[s]['se']:.6g}"]
            w.writerow(line)
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "table": self.table(),
            "failed_runs": sum(r.failed for r in self.records),
        }

    def records_jsonl(self) -> str:
        out = []
        for r in self.records:
            d = asdict(r)
            d.pop("seconds")  # wall time would break byte-identical reruns
            out.append(json.dumps(d))
        return "\n".join(out) + "\n"


def run_benchmark(cfg: BenchmarkConfig, workers: int = 1, progress=None) -> BenchmarkResult:
    """Run every (scenario, method, run) cell and aggregate.

    Runs may execute in a process pool; records are always returned in
    (scenario, method, run) order. Raises :class:`BenchmarkAborted` if more
    than 20% of runs fail.
    """
    specs = cfg.scenario_specs()
    jobs = [
        (specs[s], m, r, cfg)
        for s in cfg.scenarios
        for m in cfg.methods
        for r in range(cfg.runs_for(specs[s]))
    ]
    records = []
    with ProcessPoolExecutor(max_workers=workers) if workers > 1 else _Serial() as pool:
        for rec in pool.map(_run_job, jobs):
            records.append(rec)
            if progress:
                progress(rec)

    n_failed = sum(r.failed for r in records)
    if n_failed > MAX_FAILURE_FRACTION * len(records):
        raise BenchmarkAborted(f"{n_failed} of {len(records)} runs failed")
    return BenchmarkResult(cfg, records)
