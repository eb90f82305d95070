"""Derivative-aware active learning for change-point detection."""

from .acquisition import AcquisitionSpec, parse_acquisition
from .active_loop import ArrayOracle, LoopConfig, run_dacd
from .detect import estimate_mcp, estimate_single, filtered_derivative, knn_slope_2d
from .evaluation import BenchmarkConfig, f1_score, run_benchmark
from .gp import GPState, PosteriorSlice
from .kernel import KernelParams, SampleSet, fit_hyperparams
from .simulate import ScenarioSpec, default_scenarios, simulate

__version__ = "0.1.0"
