import sys

import numpy as np
import pytest

from dacd.kernel import KernelParams, SampleSet, rbf_matrix


def central_diff(f, x, h):
    """Central difference gradient of scalar ``f`` at the 1-D array ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def sample_gp_prior(rng, X, params: KernelParams):
    """Draw noisy targets from the zero-mean GP prior at inputs ``X``."""
    K = rbf_matrix(X, X, params) + 1e-10 * np.eye(len(X))
    f = np.linalg.cholesky(K) @ rng.standard_normal(len(X))
    return f + params.noise_std * rng.standard_normal(len(X))


def write_welllog(path, n=4050, seed=0, header=False):
    """Piecewise-constant series with Gaussian noise, shaped like the well-log record.

    Levels and noise are on the raw nuclear-response scale (~1e5).
    """
    rng = np.random.default_rng(seed)
    edges = [0, 420, 1050, 1480, 1650, 2100, 2600, 2900, 3400, n]
    levels = [1.15e5, 1.30e5, 1.21e5, 1.38e5, 1.10e5, 1.27e5, 1.17e5, 1.33e5, 1.12e5]
    y = np.concatenate([np.full(b - a, lv) for a, b, lv in zip(edges[:-1], edges[1:], levels)])
    y = y + rng.normal(0, 2.5e3, n)
    lines = (["nmr_response"] if header else []) + [f"{v:.1f}" for v in y]
    path.write_text("\n".join(lines) + "\n")
    return np.array(edges[1:-1]), y


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def welllog_file(tmp_path):
    path = tmp_path / "well_log.csv"
    write_welllog(path)
    return path


def random_sampleset(rng, n, dim=1, lo=0.0, hi=10.0):
    X = rng.uniform(lo, hi, size=(n, dim))
    y = np.sin(X).sum(axis=1) + 0.1 * rng.standard_normal(n)
    return SampleSet(X if dim > 1 else X[:, 0], y)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
