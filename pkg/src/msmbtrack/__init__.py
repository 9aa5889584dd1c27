"""Multi-sensor multi-Bernoulli tracking library.

Filters: the multi-sensor multi-Bernoulli filter (greedy measurement-subset
and quasi-partition selection) and a truncated multi-sensor CPHD baseline,
with Gaussian-mixture and particle densities, plus scenario simulation, the
OSPA metric, and a seeded Monte Carlo benchmark CLI.
"""
from .bench import run_batch, run_benchmark, sweep
from .config import (
    ConfigError,
    Scenario,
    build_scenario,
    doppler_benchmark_config,
    linear_benchmark_config,
    load_config,
    parse_config,
)
from .estimation import (
    UnscentedParams,
    kalman_update,
    particle_reweight,
    resample,
    sequential_subset_update,
    unscented_update,
)
from .member import FilterParams, MsMemberFilter, QuasiPartition, ScoredSubset
from .metrics import OspaParams, RunSummary, SummaryRow, ospa, summarize
from .models import (
    BirthModel,
    DopplerSensorModel,
    GroundTruth,
    LinearSensorModel,
    MotionModel,
    Track,
    simulate_scan,
)
from .rfs import (
    Bernoulli,
    GaussianMixture,
    MultiBernoulli,
    ParticleSet,
    collapse_duplicates,
    mean_cardinality,
    phd_intensity,
    prune_and_cap,
)
from .tcphd import IidClusterState, MsTcphdFilter, TcphdParams

__version__ = "0.1.0"

__all__ = [
    "Bernoulli",
    "BirthModel",
    "ConfigError",
    "DopplerSensorModel",
    "FilterParams",
    "GaussianMixture",
    "GroundTruth",
    "IidClusterState",
    "LinearSensorModel",
    "MotionModel",
    "MsMemberFilter",
    "MsTcphdFilter",
    "MultiBernoulli",
    "OspaParams",
    "ParticleSet",
    "QuasiPartition",
    "RunSummary",
    "Scenario",
    "ScoredSubset",
    "SummaryRow",
    "TcphdParams",
    "Track",
    "UnscentedParams",
    "build_scenario",
    "collapse_duplicates",
    "doppler_benchmark_config",
    "kalman_update",
    "linear_benchmark_config",
    "load_config",
    "mean_cardinality",
    "ospa",
    "parse_config",
    "particle_reweight",
    "phd_intensity",
    "prune_and_cap",
    "resample",
    "run_batch",
    "run_benchmark",
    "sequential_subset_update",
    "simulate_scan",
    "summarize",
    "sweep",
    "unscented_update",
]
