"""Change-point localization from a dense series or scattered 2-D samples."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .kernel import SampleSet

__all__ = [
    "WindowTooLargeError",
    "InfeasibleKError",
    "DegenerateNeighborhoodError",
    "DetectionResult",
    "filtered_derivative",
    "estimate_single",
    "estimate_mcp",
    "local_slopes",
    "knn_slope_2d",
]


class WindowTooLargeError(ValueError):
    pass


class InfeasibleKError(ValueError):
    """Suppression used up the valid range before K change-points were found."""


class DegenerateNeighborhoodError(ValueError):
    """A neighborhood's points are collinear, so no plane can be fitted."""


@dataclass(frozen=True)
class DetectionResult:
    """Filtered-derivative trace and the detected change-points.

    ``trace[i]`` is ``D(window + i, window)``; ``indices`` are series
    positions of the detections and ``changepoints`` their grid locations,
    both sorted ascending.
    """

    trace: np.ndarray
    indices: np.ndarray
    changepoints: np.ndarray
    window: int

    @property
    def trace_index(self) -> np.ndarray:
        return np.arange(self.window, self.window + len(self.trace))

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "indices": self.indices.tolist(),
            "changepoints": self.changepoints.tolist(),
            "trace": self.trace.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def filtered_derivative(series, window: int) -> np.ndarray:
    """Difference of right and left window means, for k in [A, n - A].

    Element ``k - A`` of the result is
    ``mean(x[k:k+A]) - mean(x[k-A:k])`` (0-based), i.e. the right window
    starts at index k. Runs in O(n) with a cumulative sum.
    """
    x = np.asarray(series, dtype=float)
    A = int(window)
    n = len(x)
    if A < 1:
        raise ValueError("window must be >= 1")
    if n < 2 * A + 1:
        raise WindowTooLargeError(f"series of length {n} is too short for window {A}")
    # centering keeps the running sums small; D is shift-invariant
    cs = np.concatenate([[0.0], np.cumsum(x - x.mean())])
    k = np.arange(A, n - A + 1)
    return ((cs[k + A] - cs[k]) - (cs[k] - cs[k - A])) / A


def _locations(idx, grid):
    idx = np.asarray(idx, dtype=int)
    if grid is None:
        return idx.astype(float)
    return np.asarray(grid, dtype=float)[idx]


def estimate_single(series, window: int, grid=None) -> float:
    """Location of ``argmax |D(k, A)|``; the smallest k wins ties."""
    D = filtered_derivative(series, window)
    k = int(np.argmax(np.abs(D))) + int(window)
    return float(_locations([k], grid)[0])


def estimate_mcp(series, window: int, n_changes: int, grid=None) -> DetectionResult:
    """Greedy argmax-then-suppress detection of ``n_changes`` change-points.

    After each pick at k, every candidate strictly within 2A of k is
    removed, so reported points are pairwise at least 2A apart.
    """
    A = int(window)
    if n_changes < 1:
        raise ValueError("n_changes must be >= 1")
    D = filtered_derivative(series, A)
    score = np.abs(D)
    available = np.ones(len(D), dtype=bool)
    picked = []
    for i in range(n_changes):
        if not available.any():
            raise InfeasibleKError(f"found only {i} of {n_changes} change-points with window {A}")
        masked = np.where(available, score, -np.inf)
        j = int(np.argmax(masked))
        picked.append(j + A)
        available[max(j - 2 * A + 1, 0) : j + 2 * A] = False
    idx = np.sort(np.asarray(picked, dtype=int))
    if len(idx) > 1:
        assert np.min(np.diff(idx)) >= 2 * A, "suppression violated 2A separation"
    return DetectionResult(D, idx, _locations(idx, grid), A)


def local_slopes(samples: SampleSet, k_neighbors: int = 10) -> np.ndarray:
    """Gradient-norm of a least-squares plane through each point's neighborhood.

    Each neighborhood is the point itself plus its ``k_neighbors`` nearest
    other samples (Euclidean).
    """
    X, y = samples.inputs, samples.targets
    n, dim = X.shape
    if n < k_neighbors + 1:
        raise ValueError(f"need at least {k_neighbors + 1} samples, got {n}")
    _, nbrs = cKDTree(X).query(X, k=k_neighbors + 1)
    out = np.empty(n)
    for i, nb in enumerate(nbrs):
        design = np.column_stack([np.ones(len(nb)), X[nb]])
        coef, _, rank, _ = np.linalg.lstsq(design, y[nb], rcond=None)
        if rank < dim + 1:
            raise DegenerateNeighborhoodError(f"neighborhood of point {i} is rank {rank}")
        out[i] = np.linalg.norm(coef[1:])
    return out


def knn_slope_2d(samples: SampleSet, n_changes: int, k_neighbors: int = 10) -> np.ndarray:
    """The ``n_changes`` sampled points with the steepest local plane.

    Candidates closer than twice the median nearest-neighbor spacing to an
    already accepted point are skipped, so the result does not pile up on
    one ridge. Returns an (n_changes, D) array ordered by decreasing slope.
    """
    X = samples.inputs
    slopes = local_slopes(samples, k_neighbors)
    tree = cKDTree(X)
    nn_dist = tree.query(X, k=2)[0][:, 1]
    radius = 2.0 * float(np.median(nn_dist))

    # descending slope, then lexicographic point order
    keys = [X[:, d] for d in reversed(range(X.shape[1]))] + [-slopes]
    order = np.lexsort(keys)
    chosen: list[int] = []
    for i in order:
        if all(np.linalg.norm(X[i] - X[j]) > radius for j in chosen):
            chosen.append(int(i))
            if len(chosen) == n_changes:
                return X[chosen].copy()
    raise InfeasibleKError(f"only {len(chosen)} separated points available, wanted {n_changes}")
