"""Traffic-class workload models: flow sizes, arrival processes, calibration.

A traffic class is an open-loop source: flow sizes drawn i.i.d. from a size
distribution, and inter-arrival gaps drawn i.i.d. from an arrival process.
Heavy-tailed gap distributions (log-normal with sigma around 1-2) are the
main source of the burstiness this simulator exists to study.

Every class samples from its own random stream derived from
``(global seed, class index)`` so adding or reordering classes never
perturbs another class's draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from .errors import ConfigError

if TYPE_CHECKING:
    from .slo import SliDef, SloExpr


# --------------------------------------------------------------------------
# distribution variants


@dataclass(frozen=True)
class EmpiricalCdf:
    """Piecewise-linear empirical CDF over flow sizes in bytes.

    ``points`` is a sequence of (size_bytes, cum_prob) pairs with strictly
    increasing sizes and non-decreasing probabilities ending at 1.0.
    Sampling inverts the CDF with linear interpolation in bytes; draws
    below the first listed probability take the first point's size.
    """

    points: tuple[tuple[float, float], ...]
    source: Optional[str] = None

    def __post_init__(self):
        if len(self.points) < 1:
            raise ConfigError("empirical CDF needs at least one point")
        sizes = [p[0] for p in self.points]
        probs = [p[1] for p in self.points]
        if any(s <= 0 for s in sizes):
            raise ConfigError("empirical CDF sizes must be positive")
        if any(b <= a for a, b in zip(sizes, sizes[1:])) and len(sizes) > 1:
            # strictly increasing sizes keep the inverse well defined
            raise ConfigError("empirical CDF sizes must be strictly increasing")
        if any(p < 0 or p > 1 for p in probs):
            raise ConfigError("empirical CDF probabilities must lie in [0, 1]")
        if any(b < a for a, b in zip(probs, probs[1:])):
            raise ConfigError("empirical CDF probabilities must be non-decreasing")
        if abs(probs[-1] - 1.0) > 1e-12:
            raise ConfigError("empirical CDF must end at probability 1.0")


@dataclass(frozen=True)
class LogNormal:
    """Log-normal distribution; ``mu``/``sigma`` act on the natural log.

    For flow sizes the underlying unit is bytes, for inter-arrival gaps it
    is nanoseconds, i.e. a gap process with mu=ln(1000) and sigma=0 ticks
    every microsecond.
    """

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("log-normal sigma must be >= 0")


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self):
        if self.mean <= 0:
            raise ConfigError("exponential mean must be positive")


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if self.value <= 0:
            raise ConfigError("constant distribution value must be positive")


FlowSizeDistribution = Union[EmpiricalCdf, LogNormal, Exponential, Constant]
# Arrival gaps are restricted to the two processes the planner reasons about.
InterarrivalProcess = Union[LogNormal, Exponential]


def load_cdf_file(path: str | Path) -> EmpiricalCdf:
    """Parse a ``size_bytes cum_prob`` text file into an EmpiricalCdf.

    Blank lines and ``#`` comments are ignored.  Malformed rows raise
    ConfigError naming the offending line.
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"CDF file not found: {p}")
    points: list[tuple[float, float]] = []
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"{p}:{lineno}: expected 'size_bytes cum_prob', got {raw!r}")
        try:
            size, prob = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError(f"{p}:{lineno}: non-numeric CDF entry {raw!r}") from None
        points.append((size, prob))
    if not points:
        raise ConfigError(f"{p}: empty CDF file")
    try:
        return EmpiricalCdf(points=tuple(points), source=str(p))
    except ConfigError as e:
        raise ConfigError(f"{p}: {e}") from None


def bundled_workload_path(name: str) -> Path:
    """Path of a CDF file shipped with the package (google, facebook, ...)."""
    path = Path(__file__).parent / "workloads" / f"{name}.txt"
    if not path.exists():
        raise ConfigError(f"no bundled workload named {name!r}")
    return path


# --------------------------------------------------------------------------
# analytic moments


def dist_mean(dist: FlowSizeDistribution) -> float:
    """Analytic mean of a size distribution / arrival process.

    For EmpiricalCdf this is the trapezoid mean implied by the linear
    interpolation used when sampling: an atom at the first point plus a
    uniform segment per CDF interval.
    """
    if isinstance(dist, Constant):
        return dist.value
    if isinstance(dist, Exponential):
        return dist.mean
    if isinstance(dist, LogNormal):
        return math.exp(dist.mu + dist.sigma**2 / 2.0)
    if isinstance(dist, EmpiricalCdf):
        sizes = np.array([p[0] for p in dist.points])
        probs = np.array([p[1] for p in dist.points])
        mean = sizes[0] * probs[0]
        if len(sizes) > 1:
            mean += float(np.sum(np.diff(probs) * (sizes[:-1] + sizes[1:]) / 2.0))
        return float(mean)
    raise TypeError(f"unsupported distribution {dist!r}")


def mu_for_load(target_rate: float, mean_flow_size: float, sigma: float) -> float:
    """Log-normal gap ``mu`` so the class offers ``target_rate`` bytes/ns.

    Inverts the log-normal mean: a gap process LogNormal(mu, sigma) has
    mean gap exp(mu + sigma^2/2), and offered rate mean_size / mean_gap.
    """
    if target_rate <= 0:
        raise ConfigError("target rate must be positive")
    if mean_flow_size <= 0:
        raise ConfigError("mean flow size must be positive")
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    return math.log(mean_flow_size / target_rate) - sigma**2 / 2.0


# --------------------------------------------------------------------------
# traffic classes


@dataclass
class TrafficClassSpec:
    """One traffic class: sizes, arrivals, and the SLIs/SLO that judge it."""

    name: str
    flow_sizes: FlowSizeDistribution
    interarrivals: InterarrivalProcess
    slis: list["SliDef"] = field(default_factory=list)
    slo: Optional["SloExpr"] = None
    priority_rank: Optional[int] = None

    def __post_init__(self):
        if not self.name:
            raise ConfigError("traffic class needs a name")
        if not isinstance(self.interarrivals, (LogNormal, Exponential)):
            raise ConfigError(
                f"class {self.name!r}: inter-arrival process must be log-normal or exponential"
            )
        if isinstance(self.slo, str):
            from .slo import parse_slo

            self.slo = parse_slo(self.slo)
        names = [s.name for s in self.slis]
        if len(names) != len(set(names)):
            raise ConfigError(f"class {self.name!r}: duplicate SLI names")
        if self.slo is not None:
            declared = set(names)
            for ident in self.slo.identifiers():
                if ident not in declared:
                    raise ConfigError(
                        f"class {self.name!r}: SLO references undeclared SLI {ident!r}"
                    )

    def offered_load(self) -> float:
        """Mean offered rate in bytes/ns."""
        return dist_mean(self.flow_sizes) / dist_mean(self.interarrivals)


@dataclass(frozen=True)
class FlowArrival:
    flow_id: int
    class_id: int
    arrival_time: float  # ns
    size: int  # bytes


def class_stream(seed: int, class_index: int) -> np.random.Generator:
    """Independent per-class random stream for a given global seed."""
    return np.random.default_rng([seed, class_index])


def sample_flow_size(dist: FlowSizeDistribution, rng: np.random.Generator) -> int:
    """Draw one flow size in whole bytes (always >= 1)."""
    return int(_sample_sizes(dist, 1, rng)[0])


def _sample_sizes(dist: FlowSizeDistribution, count: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(dist, Constant):
        sizes = np.full(count, dist.value)
    elif isinstance(dist, Exponential):
        sizes = rng.exponential(dist.mean, size=count)
    elif isinstance(dist, LogNormal):
        sizes = rng.lognormal(dist.mu, dist.sigma, size=count)
    elif isinstance(dist, EmpiricalCdf):
        sizes_ax = np.array([p[0] for p in dist.points])
        probs_ax = np.array([p[1] for p in dist.points])
        u = rng.random(count)
        # inverse transform with linear interpolation in bytes; np.interp
        # clamps u below the first probability to the first size
        sizes = np.interp(u, probs_ax, sizes_ax)
    else:
        raise TypeError(f"unsupported size distribution {dist!r}")
    return np.maximum(1, np.rint(sizes)).astype(np.int64)


def _sample_gaps(proc: InterarrivalProcess, count: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(proc, Exponential):
        return rng.exponential(proc.mean, size=count)
    if isinstance(proc, LogNormal):
        if proc.sigma == 0.0:
            return np.full(count, math.exp(proc.mu))
        return rng.lognormal(proc.mu, proc.sigma, size=count)
    raise TypeError(f"unsupported inter-arrival process {proc!r}")


def generate_arrivals(
    spec: TrafficClassSpec,
    count: int,
    rng: np.random.Generator,
    class_id: int = 0,
    start_id: int = 0,
) -> list[FlowArrival]:
    """Generate ``count`` flows for one class.

    Arrival times are the cumulative sum of sampled gaps (first flow lands
    one gap after t=0).  Flow ids increase with arrival order.
    """
    if count < 0:
        raise ConfigError("flow count must be >= 0")
    times, sizes = generate_arrival_arrays(spec, count, rng)
    return [
        FlowArrival(flow_id=start_id + i, class_id=class_id,
                    arrival_time=float(times[i]), size=int(sizes[i]))
        for i in range(count)
    ]


def generate_arrival_arrays(
    spec: TrafficClassSpec, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Array form of generate_arrivals: (arrival_times_ns, sizes_bytes)."""
    gaps = _sample_gaps(spec.interarrivals, count, rng)
    times = np.cumsum(gaps)
    sizes = _sample_sizes(spec.flow_sizes, count, rng)
    return times, sizes
