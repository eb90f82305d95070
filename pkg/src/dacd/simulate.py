"""Ground-truth generators: jump-diffusion paths, a 2-D test surface, well-log input."""

from __future__ import annotations

import ast
import configparser
import dataclasses
import math
import re
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .kernel import SampleSet

__all__ = [
    "RejectionLimitError",
    "NonFiniteStateError",
    "ScenarioSpec",
    "SimulatedSeries",
    "compile_expression",
    "load_scenarios",
    "default_scenarios",
    "simulate",
    "simulate_linear",
    "simulate_nonlinear",
    "euler_maruyama",
    "test_function_2d",
    "grid_2d",
    "load_welllog",
    "WELLLOG_LENGTH",
]

MAX_REJECTIONS = 10_000
STATE_FLOOR = 1e-6
WELLLOG_LENGTH = 4050


class RejectionLimitError(RuntimeError):
    pass


class NonFiniteStateError(FloatingPointError):
    pass


# --- coefficient expressions ---------------------------------------------------------

_FUNCS = {"sqrt": np.sqrt, "exp": np.exp, "log": np.log, "abs": np.abs}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, ast.Call,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def compile_expression(text: str) -> Callable[[np.ndarray, float], np.ndarray]:
    """Turn an arithmetic expression in ``S`` and ``t`` into a function.

    Only numbers, ``+ - * / **``, the names ``S``, ``t``, ``pi``, ``e`` and
    calls to ``sqrt``, ``exp``, ``log``, ``abs`` are accepted.
    """
    tree = ast.parse(text.strip(), mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"disallowed syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in {"S", "t", *_FUNCS, *_CONSTS}:
            raise ValueError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and (
            not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords
        ):
            raise ValueError(f"disallowed call in {text!r}")
    code = compile(tree, "<expr>", "eval")

    def fn(S, t):
        return eval(code, {"__builtins__": {}}, {**_FUNCS, **_CONSTS, "S": S, "t": t})

    fn.__doc__ = text
    return fn


# --- scenario description ---------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    kind: str = "linear_exact"
    mu_pre: float = 0.0
    mu_post: float = 0.0
    sigma: float = 0.0
    jump_intensity: float = 0.0
    jump_mean: float = 0.0
    jump_std: float = 0.0
    S0: float = 1.0
    T: float = 10.0
    dt: float = 0.01
    drift_fn: str | None = None
    diffusion_fn: str | None = None
    jump_fn: str | None = None
    required_jumps: int | None = 1
    seed: int = 0
    jump_window: tuple[float, float] = (0.1, 0.9)
    forced_jump_times: tuple[float, ...] | None = None
    forced_jump_sizes: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("linear_exact", "nonlinear_euler"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.sigma < 0 or self.jump_std < 0 or self.jump_intensity < 0:
            raise ValueError("sigma, jump_std and jump_intensity must be non-negative")
        if not (self.T > 0 and 0 < self.dt < self.T):
            raise ValueError("need T > 0 and 0 < dt < T")
        if self.kind == "nonlinear_euler" and None in (self.drift_fn, self.diffusion_fn, self.jump_fn):
            raise ValueError("nonlinear scenarios need drift_fn, diffusion_fn and jump_fn")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        """Observation times ``dt, 2 dt, ..., T``."""
        n = self.n_steps
        return self.T * np.arange(1, n + 1) / n

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return dataclasses.replace(self, seed=int(seed))


@dataclass(frozen=True)
class SimulatedSeries:
    grid: np.ndarray
    values: np.ndarray
    true_changepoints: np.ndarray
    jump_sizes: np.ndarray

    @property
    def true_indices(self) -> np.ndarray:
        """Grid index of the first observation at or after each jump."""
        return np.searchsorted(self.grid, self.true_changepoints, side="left")

    def to_csv(self) -> str:
        rows = ["t,value"] + [f"{t:.6g},{v:.6g}" for t, v in zip(self.grid, self.values)]
        return "\n".join(rows) + "\n"


_FLOAT_FIELDS = {
    f.name for f in dataclasses.fields(ScenarioSpec) if f.type in ("float", "float | None")
}


def _parse_section(name: str, section) -> ScenarioSpec:
    kwargs = {"name": name}
    for key, raw in section.items():
        if key in ("drift_fn", "diffusion_fn", "jump_fn", "kind"):
            kwargs[key] = raw.strip()
        elif key == "required_jumps":
            kwargs[key] = None if raw.strip().lower() == "none" else int(raw)
        elif key == "seed":
            kwargs[key] = int(raw)
        elif key in ("jump_window", "forced_jump_times", "forced_jump_sizes"):
            kwargs[key] = tuple(float(v) for v in re.split(r"[,\s]+", raw.strip()) if v)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(raw)
        else:
            raise ValueError(f"unknown key {key!r} in scenario {name!r}")
    return ScenarioSpec(**kwargs)


def load_scenarios(path: str | Path | None = None) -> dict[str, ScenarioSpec]:
    """Read scenarios from an INI file, one section per scenario.

    With no path the bundled benchmark scenarios are returned.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep S0 / T as written
    if path is None:
        parser.read_string(resources.files("dacd").joinpath("data/scenarios.ini").read_text())
    else:
        with open(path) as fh:
            parser.read_file(fh)
    return {name: _parse_section(name, parser[name]) for name in parser.sections()}


def default_scenarios() -> dict[str, ScenarioSpec]:
    return load_scenarios(None)


# --- jump process -------------------------------------------------------------------


def _draw_jumps(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if spec.forced_jump_times is not None:
        times = np.sort(np.asarray(spec.forced_jump_times, dtype=float))
        if spec.forced_jump_sizes is not None:
            sizes = np.asarray(spec.forced_jump_sizes, dtype=float)
            if len(sizes) != len(times):
                raise ValueError("forced jump times and sizes differ in length")
        else:
            sizes = rng.normal(spec.jump_mean, spec.jump_std, len(times))
        return times, sizes

    if spec.required_jumps is None:
        # plain compound Poisson process, no conditioning
        count = rng.poisson(spec.jump_intensity * spec.T)
        times = np.sort(rng.uniform(0.0, spec.T, count))
        return times, rng.normal(spec.jump_mean, spec.jump_std, count)

    lo, hi = spec.jump_window[0] * spec.T, spec.jump_window[1] * spec.T
    for _ in range(MAX_REJECTIONS):
        count = rng.poisson(spec.jump_intensity * spec.T)
        if count != spec.required_jumps:
            continue
        times = np.sort(rng.uniform(0.0, spec.T, count))
        if np.all((times > lo) & (times < hi)):
            return times, rng.normal(spec.jump_mean, spec.jump_std, count)
    raise RejectionLimitError(
        f"{spec.name}: no path with exactly {spec.required_jumps} jumps in "
        f"({lo:g}, {hi:g}) after {MAX_REJECTIONS} draws"
    )


def _streams(spec: ScenarioSpec):
    jump_rng = np.random.default_rng([spec.seed, 0])
    bm_rng = np.random.default_rng([spec.seed, 1])
    return jump_rng, bm_rng


# --- simulators ------------------------------------------------------------------------


def simulate_linear(spec: ScenarioSpec) -> SimulatedSeries:
    """Exact Merton jump-diffusion path on ``spec.times``.

    ``log S_t = log S0 + drift(t) + sigma W_t - sigma^2 t / 2 + J_t`` where the
    drift integral switches from ``mu_pre`` to ``mu_post`` at the first jump.
    """
    if spec.kind != "linear_exact":
        raise ValueError(f"{spec.name} is not a linear scenario")
    jump_rng, bm_rng = _streams(spec)
    times, sizes = _draw_jumps(spec, jump_rng)
    t = spec.times
    W = np.cumsum(bm_rng.normal(0.0, math.sqrt(spec.dt), len(t)))

    if len(times) and spec.mu_pre != spec.mu_post:
        tau = times[0]
        drift = spec.mu_pre * np.minimum(t, tau) + spec.mu_post * np.maximum(t - tau, 0.0)
    else:
        drift = spec.mu_pre * t
    J = np.zeros_like(t)
    for tau, y in zip(times, sizes):
        J[t >= tau] += y

    log_s = math.log(spec.S0) + drift + spec.sigma * W - 0.5 * spec.sigma**2 * t + J
    return SimulatedSeries(t, np.exp(log_s), times, sizes)


def euler_maruyama(f, g, h, S0: float, t: np.ndarray, dW: np.ndarray, dJ: np.ndarray) -> np.ndarray:
    """Euler steps of ``dS = f dt + g dW + h dJ`` from ``S0`` at time 0.

    Returns the state at each ``t[i]``; ``dW[i]`` and ``dJ[i]`` are the
    increments over ``(t[i-1], t[i]]`` with ``t[-1] = 0``.
    """
    out = np.empty(len(t))
    s, prev = float(S0), 0.0
    for i, ti in enumerate(t):
        step = ti - prev
        arg = max(s, STATE_FLOOR)
        s = s + f(arg, prev) * step + g(arg, prev) * dW[i] + h(arg, prev) * dJ[i]
        if not math.isfinite(s):
            raise NonFiniteStateError(f"state became {s} at t={ti:g}")
        out[i] = s
        prev = ti
    return out


def simulate_nonlinear(spec: ScenarioSpec) -> SimulatedSeries:
    """Euler-Maruyama path of ``dS = f(S,t) dt + g(S,t) dW + h(S,t) dJ``."""
    if spec.kind != "nonlinear_euler":
        raise ValueError(f"{spec.name} is not a nonlinear scenario")
    f, g, h = (compile_expression(e) for e in (spec.drift_fn, spec.diffusion_fn, spec.jump_fn))
    jump_rng, bm_rng = _streams(spec)
    times, sizes = _draw_jumps(spec, jump_rng)
    t = spec.times
    dW = bm_rng.normal(0.0, math.sqrt(spec.dt), len(t))
    # a jump at tau lands in the step ending at the first grid time >= tau
    dJ = np.zeros(len(t))
    np.add.at(dJ, np.searchsorted(t, times, side="left"), sizes)
    values = euler_maruyama(f, g, h, spec.S0, t, dW, dJ)
    return SimulatedSeries(t, values, times, sizes)


def simulate(spec: ScenarioSpec) -> SimulatedSeries:
    if spec.kind == "linear_exact":
        return simulate_linear(spec)
    return simulate_nonlinear(spec)


# --- 2-D test surface -------------------------------------------------------------------


def test_function_2d(x1, x2):
    """``sin(2 x1) cos(2 x2)``; vectorized."""
    return np.sin(2 * np.asarray(x1)) * np.cos(2 * np.asarray(x2))


# keep pytest from collecting the function above as a test
test_function_2d.__test__ = False


def grid_2d(n: int = 50, x1_range=(0.0, 3.0), x2_range=(1.0, 4.0)) -> np.ndarray:
    """An (n*n, 2) mesh over the candidate region, x2 varying fastest."""
    a = np.linspace(*x1_range, n)
    b = np.linspace(*x2_range, n)
    A, B = np.meshgrid(a, b, indexing="ij")
    return np.column_stack([A.ravel(), B.ravel()])


# --- well-log ingestion ------------------------------------------------------------------

_SPLIT = re.compile(r"[,\s;]+")


def load_welllog(path: str | Path) -> SampleSet:
    """Read a one- or two-column delimited well-log file.

    The measurement is the last column. Leading non-numeric lines
    (headers) are skipped. Inputs are sample indices scaled to [0, 1].
    """
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = [f for f in _SPLIT.split(line.strip()) if f]
            if not fields:
                continue
            try:
                values.append(float(fields[-1]))
            except ValueError:
                if values:
                    raise OSError(f"{path}:{lineno}: non-numeric value {fields[-1]!r}") from None
                continue  # header
    if not values:
        raise OSError(f"{path}: no measurements found")
    n = len(values)
    if n != WELLLOG_LENGTH:
        warnings.warn(f"{path}: expected {WELLLOG_LENGTH} measurements, found {n}", stacklevel=2)
    x = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
    return SampleSet(x, values)
