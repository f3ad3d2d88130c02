"""Flow-level bottleneck simulator and switch-weight optimizer.

Predicts tail-latency SLO compliance for bursty traffic classes sharing
one bottleneck link, tunes per-class scheduling weights, and searches
for the minimum link capacity each scheduling strategy needs.
"""

from .bottleneck import (
    ProcessorSharing,
    SharedFifo,
    StrictPriority,
    WeightAllocation,
    WeightedClasses,
)
from .ccmodel import CcParams, dctcp_like, hpcc_like
from .engine import (
    FlowRecord,
    NetworkConfig,
    SimConfig,
    SimResult,
    bin_by_size,
    run_simulation,
    run_with_arrivals,
    slowdown_percentile,
)
from .errors import ConfigError, SloSyntaxError, SpecValidationError
from .optimizer import (
    BaselineResult,
    CapacityResult,
    OptimizationOutcome,
    OptimizerConfig,
    ScenarioSpace,
    Strategy,
    find_baselines,
    inflation,
    min_bandwidth,
    optimize_weights,
    run_scenario_batch,
    sample_scenario,
)
from .shaper import (
    LeakyBucketParams,
    ShaperResult,
    default_bucket_grid,
    shape_trace,
    simulate_shaper,
    sweep_bucket_sizes,
)
from .slo import (
    Max,
    Mean,
    Percentile,
    SliDef,
    Verdict,
    class_loss,
    compute_sli,
    eval_slo,
    parse_slo,
)
from .workload import (
    Constant,
    EmpiricalCdf,
    Exponential,
    LogNormal,
    TrafficClassSpec,
    bundled_workload_path,
    dist_mean,
    load_cdf_file,
    mu_for_load,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineResult",
    "CapacityResult",
    "CcParams",
    "ConfigError",
    "Constant",
    "EmpiricalCdf",
    "Exponential",
    "FlowRecord",
    "LeakyBucketParams",
    "LogNormal",
    "Max",
    "Mean",
    "NetworkConfig",
    "OptimizationOutcome",
    "OptimizerConfig",
    "Percentile",
    "ProcessorSharing",
    "ScenarioSpace",
    "ShaperResult",
    "SharedFifo",
    "SimConfig",
    "SimResult",
    "SliDef",
    "SloSyntaxError",
    "SpecValidationError",
    "Strategy",
    "StrictPriority",
    "TrafficClassSpec",
    "Verdict",
    "WeightAllocation",
    "WeightedClasses",
    "bin_by_size",
    "bundled_workload_path",
    "class_loss",
    "compute_sli",
    "dctcp_like",
    "default_bucket_grid",
    "dist_mean",
    "eval_slo",
    "find_baselines",
    "hpcc_like",
    "inflation",
    "load_cdf_file",
    "min_bandwidth",
    "mu_for_load",
    "optimize_weights",
    "parse_slo",
    "run_scenario_batch",
    "run_simulation",
    "run_with_arrivals",
    "sample_scenario",
    "shape_trace",
    "simulate_shaper",
    "slowdown_percentile",
    "sweep_bucket_sizes",
]
