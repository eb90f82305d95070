"""Exact GP posterior for function values and first derivatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernel import (
    KernelParams,
    SampleSet,
    _as_matrix,
    jittered_cholesky,
    rbf_matrix,
    rbf_matrix_grad_x2,
)

__all__ = [
    "GPState",
    "PosteriorSlice",
    "standardize",
    "fit",
    "predict",
    "predict_derivative",
    "posterior_slice",
]

log = logging.getLogger(__name__)

NEGATIVE_VAR_TOL = 1e-10


def standardize(data: SampleSet) -> tuple[SampleSet, float, float]:
    """Shift and scale targets to zero mean, unit std.

    Returns the standardized set with the ``(offset, scale)`` used. A constant
    target vector gets scale 1.
    """
    y = data.targets
    offset = float(np.mean(y))
    scale = float(np.std(y))
    if not scale > 0:
        scale = 1.0
    return data.with_targets((y - offset) / scale), offset, scale


@dataclass(frozen=True)
class GPState:
    """A fitted GP: data, hyperparameters, and the factorized Gram matrix.

    ``params`` live in the standardized target units whenever
    ``y_scale != 1`` or ``y_offset != 0``; predictions are mapped back.
    """

    data: SampleSet
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    y_offset: float = 0.0
    y_scale: float = 1.0

    def gram(self) -> np.ndarray:
        """The matrix that ``chol`` factorizes (noise and jitter included)."""
        X = self.data.inputs
        n = len(X)
        return rbf_matrix(X, X, self.params) + (self.params.noise_std**2 + self.jitter) * np.eye(n)


@dataclass(frozen=True)
class PosteriorSlice:
    """Value and derivative posterior on a fixed evaluation grid.

    In 1-D ``dmean`` and ``dvar`` are flat; for D > 1 they have shape
    (m, D), ``dvar`` holding the diagonal of the gradient covariance.
    """

    grid: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    dmean: np.ndarray
    dvar: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    @property
    def dstd(self) -> np.ndarray:
        return np.sqrt(self.dvar)


def fit(data: SampleSet, params: KernelParams, standardize_targets: bool = False) -> GPState:
    """Factorize ``C = K + noise^2 I`` and solve ``C alpha = y``."""
    offset, scale = 0.0, 1.0
    if standardize_targets:
        data_fit, offset, scale = standardize(data)
    else:
        data_fit = data
    X = data_fit.inputs
    C = rbf_matrix(X, X, params) + params.noise_std**2 * np.eye(len(X))
    L, jitter = jittered_cholesky(C, params.output_scale**2)
    alpha = cho_solve((L, True), data_fit.targets)
    L.setflags(write=False)
    alpha.setflags(write=False)
    return GPState(data_fit, params, L, alpha, jitter, offset, scale)


def _clamp(v, what, bound):
    lowest = float(np.min(v)) if v.size else 0.0
    if lowest < -NEGATIVE_VAR_TOL * bound:
        log.warning("%s reached %.3g before clamping", what, lowest)
    return np.maximum(v, 0.0)


def _grid_matrix(state: GPState, grid) -> np.ndarray:
    G = _as_matrix(grid)
    if G.shape[1] != state.data.dim:
        raise ValueError(f"grid has dimension {G.shape[1]}, data has {state.data.dim}")
    return G


def predict(state: GPState, grid) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and marginal variance of f on ``grid``."""
    G = _grid_matrix(state, grid)
    p = state.params
    Ks = rbf_matrix(state.data.inputs, G, p)
    mean = Ks.T @ state.alpha
    V = solve_triangular(state.chol, Ks, lower=True)
    var = p.output_scale**2 - np.einsum("ij,ij->j", V, V)
    var = _clamp(var, "posterior variance", p.output_scale**2)
    return state.y_offset + state.y_scale * mean, state.y_scale**2 * var


def predict_derivative(state: GPState, grid) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the gradient of f on ``grid``.

    The derivative is taken with respect to the grid point; in 1-D both
    outputs are flat arrays, otherwise shape (m, D).
    """
    G = _grid_matrix(state, grid)
    p = state.params
    m, D = G.shape
    n = len(state.data)
    dK = rbf_matrix_grad_x2(state.data.inputs, G, p)  # (n, m, D)
    dmean = np.einsum("ijp,i->jp", dK, state.alpha)
    V = solve_triangular(state.chol, dK.reshape(n, m * D), lower=True)
    prior = p.output_scale**2 / p.lengthscale**2
    dvar = prior - np.einsum("ij,ij->j", V, V).reshape(m, D)
    dvar = _clamp(dvar, "derivative variance", prior)
    dmean = state.y_scale * dmean
    dvar = state.y_scale**2 * dvar
    if D == 1:
        return dmean[:, 0], dvar[:, 0]
    return dmean, dvar


def posterior_slice(state: GPState, grid) -> PosteriorSlice:
    grid = np.asarray(grid, dtype=float)
    mean, var = predict(state, grid)
    dmean, dvar = predict_derivative(state, grid)
    return PosteriorSlice(grid, mean, var, dmean, dvar)
