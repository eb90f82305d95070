"""PI, EI and UCB acquisition on the GP derivative posterior."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm

from .gp import PosteriorSlice

__all__ = [
    "Kind",
    "SignalMode",
    "AcquisitionSpec",
    "BudgetExhaustedError",
    "parse_acquisition",
    "signal",
    "incumbent",
    "score",
    "select_next",
]

SIGMA_FLOOR = 1e-12


class Kind(str, Enum):
    PI = "pi"
    EI = "ei"
    UCB = "ucb"
    # uniform choice among unsampled points; a baseline, not a derivative AF
    RANDOM = "random"


class SignalMode(str, Enum):
    ABSOLUTE = "absolute"
    SIGNED = "signed"


class BudgetExhaustedError(RuntimeError):
    """Every grid index has already been queried."""


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: Kind
    xi: float = 0.0
    lam: float = 0.0
    signal_mode: SignalMode = SignalMode.ABSOLUTE

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "signal_mode", SignalMode(self.signal_mode))
        if self.xi < 0 or self.lam < 0:
            raise ValueError("xi and lambda must be non-negative")

    @property
    def label(self) -> str:
        """Compact string form, the inverse of :func:`parse_acquisition`."""
        if self.kind is Kind.RANDOM:
            text = "random"
        else:
            param = self.lam if self.kind is Kind.UCB else self.xi
            text = f"{self.kind.value}:{param:g}"
        if self.signal_mode is SignalMode.SIGNED:
            text += ":signed"
        return text


def parse_acquisition(text: str) -> AcquisitionSpec:
    """Parse ``kind:param[:signed|:absolute]``, e.g. ``"ei:0.001"`` or ``"ucb:2"``."""
    parts = [p.strip() for p in text.strip().lower().split(":")]
    try:
        kind = Kind(parts[0])
    except ValueError:
        raise ValueError(f"unknown acquisition kind in {text!r}") from None
    rest = parts[1:]
    mode = SignalMode.ABSOLUTE
    if rest and rest[-1] in ("signed", "absolute"):
        mode = SignalMode(rest.pop())
    if kind is Kind.RANDOM:
        if rest:
            raise ValueError(f"random takes no parameter: {text!r}")
        return AcquisitionSpec(kind, signal_mode=mode)
    if len(rest) != 1:
        raise ValueError(f"expected exactly one parameter in {text!r}")
    try:
        value = float(rest[0])
    except ValueError:
        raise ValueError(f"bad parameter in {text!r}") from None
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"parameter must be finite and non-negative: {text!r}")
    if kind is Kind.UCB:
        return AcquisitionSpec(kind, lam=value, signal_mode=mode)
    return AcquisitionSpec(kind, xi=value, signal_mode=mode)


def signal(dmean: np.ndarray, mode: SignalMode = SignalMode.ABSOLUTE) -> np.ndarray:
    return np.abs(dmean) if SignalMode(mode) is SignalMode.ABSOLUTE else np.asarray(dmean)


def incumbent(slice_: PosteriorSlice, sampled_indices, mode=SignalMode.ABSOLUTE) -> float:
    """Best derivative signal among already-sampled grid indices.

    Derivatives are never observed directly, so the posterior derivative
    mean at the sampled locations stands in for the observed best.
    """
    idx = np.asarray(sorted(sampled_indices), dtype=int)
    if idx.size == 0:
        raise ValueError("incumbent needs at least one sampled index")
    return float(np.max(signal(slice_.dmean[idx], mode)))


def _per_direction(g, sigma, spec: AcquisitionSpec, best: float) -> np.ndarray:
    if spec.kind is Kind.UCB:
        return g + spec.lam * sigma

    gap = g - best - spec.xi
    tiny = sigma <= SIGMA_FLOOR
    safe = np.where(tiny, 1.0, sigma)
    gamma = gap / safe
    if spec.kind is Kind.PI:
        out = norm.cdf(gamma)
        return np.where(tiny, (gap > 0).astype(float), out)
    if spec.kind is Kind.EI:
        out = safe * (gamma * norm.cdf(gamma) + norm.pdf(gamma))
        return np.where(tiny, np.maximum(gap, 0.0), np.maximum(out, 0.0))
    raise ValueError(f"{spec.kind.value} has no closed-form score")


def score(slice_: PosteriorSlice, spec: AcquisitionSpec, best: float) -> np.ndarray:
    """Acquisition values on every grid point.

    For D > 1 each gradient component is scored separately against the same
    incumbent and the largest component score is kept.
    """
    g = signal(slice_.dmean, spec.signal_mode)
    sigma = np.sqrt(slice_.dvar)
    a = _per_direction(g, sigma, spec, best)
    return a if a.ndim == 1 else a.max(axis=1)


def _argmax_unsampled(values: np.ndarray, sampled_indices) -> int:
    values = np.asarray(values, dtype=float)
    available = np.ones(values.size, dtype=bool)
    available[np.fromiter(sampled_indices, dtype=int)] = False
    if not available.any():
        raise BudgetExhaustedError("every grid index has been sampled")
    # NaN scores never win
    masked = np.where(available & ~np.isnan(values), values, -np.inf)
    best = masked[available].max()
    candidates = available & (masked == best)
    # first True is the smallest index among ties
    return int(np.flatnonzero(candidates)[0])


def select_next(slice_: PosteriorSlice, spec: AcquisitionSpec, sampled_indices, rng=None) -> int:
    """Index of the unsampled grid point with the highest score.

    ``rng`` is only consulted by the random baseline.
    """
    sampled = set(int(i) for i in sampled_indices)
    n = len(slice_.mean)
    if len(sampled) >= n:
        raise BudgetExhaustedError("every grid index has been sampled")
    if spec.kind is Kind.RANDOM:
        free = np.setdiff1d(np.arange(n), np.fromiter(sampled, dtype=int))
        rng = rng if rng is not None else np.random.default_rng()
        return int(rng.choice(free))
    best = incumbent(slice_, sampled, spec.signal_mode)
    return _argmax_unsampled(score(slice_, spec, best), sampled)
