"""The sequential sampling loop: fit, derivative posterior, acquire, query."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

import numpy as np

from . import gp
from .acquisition import AcquisitionSpec, parse_acquisition, select_next
from .kernel import FactorizationError, KernelParams, SampleSet, _as_matrix, fit_hyperparams

__all__ = [
    "LoopConfig",
    "Oracle",
    "ArrayOracle",
    "LoopRecord",
    "LoopTrace",
    "LoopResult",
    "LoopError",
    "GridTooSmallError",
    "init_design",
    "run_dacd",
]

log = logging.getLogger(__name__)


class GridTooSmallError(ValueError):
    pass


class LoopError(RuntimeError):
    """A fit failed with no usable fallback; carries the iteration number."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass(frozen=True)
class LoopConfig:
    budget: int
    acquisition: AcquisitionSpec = field(default_factory=lambda: parse_acquisition("ei:0.001"))
    init_count: int = 8
    boundary_init: bool = True
    refit_every: int = 1
    seed: int = 0
    fresh_restarts: int = 2
    # skips hyperparameter fitting entirely (standardized-target units)
    fixed_params: KernelParams | None = None
    snapshot_iterations: frozenset = frozenset()

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.boundary_init and self.init_count < 2:
            raise ValueError("boundary_init needs init_count >= 2")
        if self.init_count < 1 or self.refit_every < 1:
            raise ValueError("init_count and refit_every must be positive")
        object.__setattr__(self, "snapshot_iterations", frozenset(self.snapshot_iterations))


class Oracle(Protocol):
    def __call__(self, index: int) -> float: ...


class ArrayOracle:
    """Looks responses up in a precomputed array, optionally adding noise."""

    def __init__(self, values, noise_std: float = 0.0, seed: int | None = None):
        self.values = np.asarray(values, dtype=float)
        self.noise_std = float(noise_std)
        self._rng = np.random.default_rng(seed)

    def __call__(self, index: int) -> float:
        y = float(self.values[index])
        if self.noise_std > 0:
            y += float(self._rng.normal(0.0, self.noise_std))
        return y


@dataclass
class LoopRecord:
    iteration: int
    index: int
    x: list
    y: float
    params: KernelParams
    fit_failed: bool = False
    state: gp.GPState | None = None
    slice: gp.PosteriorSlice | None = None

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "index": self.index,
            "x": self.x,
            "y": self.y,
            "params": self.params.as_dict(),
            "fit_failed": self.fit_failed,
        }


@dataclass
class LoopTrace:
    records: list[LoopRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def indices(self) -> list[int]:
        return [r.index for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "LoopTrace":
        records = []
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(
                LoopRecord(
                    d["iteration"], d["index"], d["x"], d["y"],
                    KernelParams(**d["params"]), d.get("fit_failed", False),
                )
            )
        return cls(records)


@dataclass
class LoopResult:
    samples: SampleSet
    trace: LoopTrace
    final_slice: gp.PosteriorSlice
    final_state: gp.GPState
    indices: list[int]

    def __iter__(self):
        # unpacks as (samples, trace, final_slice)
        return iter((self.samples, self.trace, self.final_slice))


def init_design(grid, cfg: LoopConfig) -> np.ndarray:
    """Initial grid indices: both ends plus seeded uniform picks, or all uniform."""
    n = len(grid)
    if n < cfg.init_count:
        raise GridTooSmallError(f"grid of {n} points cannot hold {cfg.init_count} initial samples")
    rng = np.random.default_rng([cfg.seed, 0])
    if cfg.boundary_init:
        interior = rng.choice(np.arange(1, n - 1), size=cfg.init_count - 2, replace=False)
        return np.concatenate([[0, n - 1], interior]).astype(int)
    return rng.choice(n, size=cfg.init_count, replace=False).astype(int)


def _domain_length(G: np.ndarray) -> float:
    span = float(np.max(G.max(axis=0) - G.min(axis=0)))
    return span if span > 0 else 1.0


def _fit_step(data, prev, restarts_seed, n_fresh, domain_length):
    std_data, _, _ = gp.standardize(data)
    # the first start is either the warm start or the default heuristic
    starts = [prev] if prev is not None else None
    return fit_hyperparams(
        std_data, restarts=1 + n_fresh, seed=restarts_seed, starts=starts, domain_length=domain_length
    )


def run_dacd(
    oracle: Callable[[int], float],
    grid,
    cfg: LoopConfig,
    *,
    initial_indices: Iterable[int] | None = None,
    on_iteration: Callable[[LoopRecord], None] | None = None,
) -> LoopResult:
    """Run ``cfg.budget`` acquisition steps starting from an initial design.

    Hyperparameters are refit on standardized targets every
    ``cfg.refit_every`` iterations, warm-started from the previous optimum
    plus ``cfg.fresh_restarts`` random starts. If a refit fails the last
    good parameters are reused and the record is flagged.
    """
    grid = np.asarray(grid, dtype=float)
    G = _as_matrix(grid)
    domain_length = _domain_length(G)
    idx0 = list(initial_indices) if initial_indices is not None else list(init_design(grid, cfg))
    if len(set(idx0)) != len(idx0):
        raise ValueError("initial indices must be distinct")

    data = SampleSet(G[idx0], [oracle(int(i)) for i in idx0])
    sampled = [int(i) for i in idx0]
    sampled_set = set(sampled)

    seeds = np.random.SeedSequence([cfg.seed, 1])
    restart_seeds = seeds.generate_state(cfg.budget + 1)
    pick_rng = np.random.default_rng([cfg.seed, 2])

    params: KernelParams | None = cfg.fixed_params
    refit = cfg.fixed_params is None
    trace = LoopTrace()
    for it in range(cfg.budget):
        failed = False
        if refit and (params is None or it % cfg.refit_every == 0):
            try:
                params = _fit_step(data, params, int(restart_seeds[it]), cfg.fresh_restarts, domain_length)
            except FactorizationError as exc:
                if params is None:
                    raise LoopError(it, exc) from exc
                log.warning("iteration %d: hyperparameter fit failed, reusing previous", it)
                failed = True
        try:
            state = gp.fit(data, params, standardize_targets=True)
        except FactorizationError as exc:
            raise LoopError(it, exc) from exc
        slc = gp.posterior_slice(state, grid)

        nxt = select_next(slc, cfg.acquisition, sampled_set, rng=pick_rng)
        y = float(oracle(nxt))
        data = data.append(G[nxt], y)
        sampled.append(nxt)
        sampled_set.add(nxt)

        keep = it in cfg.snapshot_iterations
        rec = LoopRecord(
            it, nxt, G[nxt].tolist(), y, params, failed,
            state if keep else None, slc if keep else None,
        )
        trace.records.append(rec)
        if on_iteration is not None:
            on_iteration(rec)

    if refit:
        try:
            params = _fit_step(data, params, int(restart_seeds[-1]), cfg.fresh_restarts, domain_length)
        except FactorizationError:
            log.warning("final hyperparameter fit failed, reusing previous")
    try:
        state = gp.fit(data, params, standardize_targets=True)
    except FactorizationError as exc:
        raise LoopError(cfg.budget, exc) from exc
    return LoopResult(data, trace, gp.posterior_slice(state, grid), state, sampled)
