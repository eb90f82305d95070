"""RBF kernel, its input derivatives, and marginal-likelihood fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

__all__ = [
    "FactorizationError",
    "KernelParams",
    "SampleSet",
    "rbf",
    "rbf_grad_x2",
    "rbf_hess_mixed",
    "rbf_matrix",
    "rbf_matrix_grad_x2",
    "jittered_cholesky",
    "nlml",
    "fit_hyperparams",
    "hyperparam_bounds",
]

log = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-2


class FactorizationError(np.linalg.LinAlgError):
    """Raised when the Gram matrix stays indefinite after the maximum jitter."""


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the RBF kernel plus Gaussian observation noise."""

    output_scale: float
    lengthscale: float
    noise_std: float = 0.0

    def __post_init__(self):
        if not (self.output_scale > 0 and self.lengthscale > 0 and self.noise_std >= 0):
            raise ValueError(f"invalid kernel parameters: {self}")

    def to_log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log([self.output_scale, self.lengthscale, self.noise_std])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        s, ell, sn = np.exp(np.asarray(theta, dtype=float))
        return cls(float(s), float(ell), float(sn))

    def as_dict(self) -> dict:
        return {
            "output_scale": self.output_scale,
            "lengthscale": self.lengthscale,
            "noise_std": self.noise_std,
        }


def _as_matrix(x) -> np.ndarray:
    """Coerce to an (n, D) array; a flat array is n points in 1-D."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[:, None]
    return x


def _as_point(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


class SampleSet:
    """Ordered labelled observations ``(inputs, targets)``.

    Instances are immutable; :meth:`append` returns a new set. Duplicate
    inputs are rejected since they make the noiseless Gram matrix singular.
    """

    __slots__ = ("_inputs", "_targets")

    def __init__(self, inputs, targets):
        X = _as_matrix(inputs).copy()
        y = np.asarray(targets, dtype=float).reshape(-1).copy()
        if len(X) != len(y):
            raise ValueError(f"{len(X)} inputs but {len(y)} targets")
        if len(y) < 1:
            raise ValueError("a SampleSet needs at least one observation")
        if len(np.unique(X, axis=0)) != len(X):
            raise ValueError("duplicate inputs in SampleSet")
        X.setflags(write=False)
        y.setflags(write=False)
        self._inputs = X
        self._targets = y

    @property
    def inputs(self) -> np.ndarray:
        return self._inputs

    @property
    def targets(self) -> np.ndarray:
        return self._targets

    @property
    def dim(self) -> int:
        return self._inputs.shape[1]

    def __len__(self) -> int:
        return len(self._targets)

    def append(self, x, y: float) -> "SampleSet":
        x = _as_point(x).reshape(1, -1)
        if x.shape[1] != self.dim:
            raise ValueError(f"point has dimension {x.shape[1]}, expected {self.dim}")
        if np.any(np.all(self._inputs == x, axis=1)):
            raise ValueError(f"duplicate input {x.ravel().tolist()}")
        return SampleSet(np.vstack([self._inputs, x]), np.append(self._targets, float(y)))

    def with_targets(self, targets) -> "SampleSet":
        return SampleSet(self._inputs, targets)

    def __repr__(self):
        return f"SampleSet(n={len(self)}, dim={self.dim})"


# --- pointwise kernel and derivatives -------------------------------------------


def rbf(x, x2, params: KernelParams) -> float:
    """``s^2 exp(-|x - x2|^2 / (2 l^2))`` for two single points."""
    d = _as_point(x) - _as_point(x2)
    return float(params.output_scale**2 * np.exp(-0.5 * (d @ d) / params.lengthscale**2))


def rbf_grad_x2(x, x2, params: KernelParams) -> np.ndarray:
    """Gradient of :func:`rbf` with respect to its second argument."""
    d = _as_point(x) - _as_point(x2)
    return d / params.lengthscale**2 * rbf(x, x2, params)


def rbf_hess_mixed(x, x2, params: KernelParams) -> np.ndarray:
    """Mixed second derivatives ``d^2 k / dx_i dx2_j`` as a D x D matrix."""
    d = _as_point(x) - _as_point(x2)
    ell2 = params.lengthscale**2
    return (ell2 * np.eye(len(d)) - np.outer(d, d)) / ell2**2 * rbf(x, x2, params)


# --- batched versions -------------------------------------------------------------


def _sqdist(X1, X2):
    d = X1[:, None, :] - X2[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def rbf_matrix(X1, X2, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix ``K[i, j] = k(X1[i], X2[j])``."""
    X1, X2 = _as_matrix(X1), _as_matrix(X2)
    return params.output_scale**2 * np.exp(-0.5 * _sqdist(X1, X2) / params.lengthscale**2)


def rbf_matrix_grad_x2(X1, X2, params: KernelParams) -> np.ndarray:
    """Array ``G[i, j, p] = d k(X1[i], X2[j]) / d X2[j]_p`` of shape (n1, n2, D)."""
    X1, X2 = _as_matrix(X1), _as_matrix(X2)
    d = X1[:, None, :] - X2[None, :, :]
    K = params.output_scale**2 * np.exp(-0.5 * np.einsum("ijk,ijk->ij", d, d) / params.lengthscale**2)
    return d / params.lengthscale**2 * K[:, :, None]


# --- factorization ------------------------------------------------------------------


def jittered_cholesky(C: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``C + jitter * I``.

    Jitter starts at ``1e-8 * scale`` and grows tenfold up to ``1e-2 * scale``.
    Returns the factor and the absolute jitter that was added.
    """
    rel = JITTER_START
    eye = np.eye(len(C))
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(C + jitter * eye), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise FactorizationError(
        f"Gram matrix of size {len(C)} not positive definite after jitter {JITTER_MAX * scale:g}"
    )


# --- marginal likelihood ------------------------------------------------------------


def _nlml_from_log(theta, X, y):
    s, ell, sn = np.exp(theta)
    n = len(y)
    r2 = _sqdist(X, X)
    E = np.exp(-0.5 * r2 / ell**2)
    K = s**2 * E
    L, jitter = jittered_cholesky(K + sn**2 * np.eye(n), s**2)
    alpha = cho_solve((L, True), y)
    value = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * np.log(2 * np.pi)

    # d nlml / d theta = 1/2 tr(W dC/dtheta), W = C^-1 - alpha alpha^T
    W = cho_solve((L, True), np.eye(n)) - np.outer(alpha, alpha)
    # jitter scales with s^2 so it contributes to the output-scale derivative
    g_s = np.sum(W * K) + jitter * np.trace(W)
    g_ell = 0.5 * np.sum(W * K * r2) / ell**2
    g_sn = sn**2 * np.trace(W)
    return float(value), np.array([g_s, g_ell, g_sn])


def nlml(params: KernelParams, data: SampleSet) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient in log-parameters.

    The gradient is ordered ``(log s, log l, log noise_std)``.
    """
    return _nlml_from_log(params.to_log(), data.inputs, data.targets)


def _domain_length(X) -> float:
    span = float(np.max(X.max(axis=0) - X.min(axis=0))) if len(X) > 1 else 0.0
    return span if span > 0 else 1.0


def _target_std(y) -> float:
    sd = float(np.std(y))
    return sd if sd > 0 else 1.0


def hyperparam_bounds(data: SampleSet, domain_length: float | None = None) -> np.ndarray:
    """Box constraints on ``(log s, log l, log noise_std)`` as a (3, 2) array."""
    length = domain_length if domain_length is not None else _domain_length(data.inputs)
    sd = _target_std(data.targets)
    return np.log(
        [
            [1e-3 * sd, 1e3 * sd],
            [1e-3 * length, 10.0 * length],
            [1e-4 * sd, 1.0 * sd],
        ]
    )


def fit_hyperparams(
    data: SampleSet,
    restarts: int = 3,
    seed: int | None = 0,
    *,
    starts: list[KernelParams] | None = None,
    domain_length: float | None = None,
    max_iter: int = 200,
) -> KernelParams:
    """Multi-start L-BFGS-B minimization of :func:`nlml` in log-space.

    Parameters
    ----------
    data : SampleSet
        Observations; at least two are needed.
    restarts : int
        Total number of optimizer starts.
    seed : int, optional
        Seed for the log-uniform random starts.
    starts : list of KernelParams, optional
        Explicit start points used before any generated ones (warm starts).
        When omitted the first start is the heuristic
        ``(target std, 0.1 * domain length, 0.1 * target std)``.
    domain_length : float, optional
        Input-domain extent used for the lengthscale bounds. Defaults to the
        span of ``data.inputs``.
    max_iter : int
        Iteration cap per start.

    Returns
    -------
    KernelParams
        Parameters with the lowest objective over all starts and optima.
    """
    if len(data) < 2:
        raise ValueError("fit_hyperparams needs at least two observations")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    X, y = data.inputs, data.targets
    bounds = hyperparam_bounds(data, domain_length)
    length = domain_length if domain_length is not None else _domain_length(X)
    sd = _target_std(y)

    thetas = [np.clip(p.to_log(), bounds[:, 0], bounds[:, 1]) for p in (starts or [])]
    if not thetas:
        thetas.append(np.clip(np.log([sd, 0.1 * length, 0.1 * sd]), bounds[:, 0], bounds[:, 1]))
    rng = np.random.default_rng(seed)
    while len(thetas) < restarts:
        thetas.append(rng.uniform(bounds[:, 0], bounds[:, 1]))

    best_theta, best_val = None, np.inf
    last_error = None
    for theta0 in thetas:
        try:
            val0, _ = _nlml_from_log(theta0, X, y)
            if val0 < best_val:
                best_theta, best_val = theta0, val0
            res = minimize(
                _nlml_from_log,
                theta0,
                args=(X, y),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": max_iter, "gtol": 1e-6},
            )
        except (FactorizationError, FloatingPointError) as exc:
            last_error = exc
            log.debug("restart from %s failed: %s", theta0, exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)

    if best_theta is None:
        raise FactorizationError(f"all {len(thetas)} restarts failed") from last_error
    return KernelParams.from_log(best_theta)
