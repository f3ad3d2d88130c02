"""Switch-weight optimization and minimum-capacity searches.

The weight optimizer starts from per-class worst-case baselines: the
smallest weight w such that the class, alone on a link throttled to w*C
but judged against the full-speed network, still meets its SLO.  The
normalized baselines seed an iterative loop that transfers weight from
the classes with the most headroom to those missing their SLOs, half a
loss fraction at a time, until every loss is negative or the transfer
budget runs out.

Capacity searches answer the planning question instead: the smallest
link speed at which a scheduling strategy meets every SLO.  Each probe
capacity is simulated as a self-contained network (sources start at the
probe's line rate, slowdowns judged against it).
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .bottleneck import SharedFifo, WeightAllocation, WeightedClasses
from .engine import NetworkConfig, SimConfig, SimResult, run_simulation
from .errors import ConfigError
from .slo import Percentile, SliDef, class_loss, compute_sli
from .workload import (
    TrafficClassSpec,
    bundled_workload_path,
    dist_mean,
    load_cdf_file,
    mu_for_load,
)
from .units import gbps, to_gbps


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 50
    baseline_weight_tolerance: float = 0.01
    capacity_search_tolerance: float = 0.02
    replications: int = 1
    seed: int = 1
    bracket_cap_factor: float = 16.0
    timeout_s: Optional[float] = None  # wall clock; None: no limit

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        for name in ("baseline_weight_tolerance", "capacity_search_tolerance"):
            v = getattr(self, name)
            if not 0.0 < v < 0.5:
                raise ConfigError(f"{name} must lie in (0, 0.5)")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.bracket_cap_factor <= 1.0:
            raise ConfigError("bracket cap factor must exceed 1")
        if self.timeout_s is not None and self.timeout_s <= 0:
            raise ConfigError("timeout_s must be positive when set")

    def deadline(self) -> Optional[float]:
        if self.timeout_s is None:
            return None
        return time.monotonic() + self.timeout_s


@dataclass
class BaselineResult:
    """Per-class minimal isolated weights; None marks an infeasible class."""

    weights: list[Optional[float]]

    @property
    def feasible(self) -> bool:
        return all(w is not None for w in self.weights)

    def normalized(self) -> WeightAllocation:
        if not self.feasible:
            raise ConfigError("cannot normalize infeasible baselines")
        total = sum(self.weights)
        return WeightAllocation(tuple(w / total for w in self.weights))


@dataclass
class OptimizationOutcome:
    weights: WeightAllocation
    success: bool
    trace: list[tuple[WeightAllocation, np.ndarray]] = field(default_factory=list)
    infeasible_classes: tuple[int, ...] = ()


def _isolated_cfg(cfg: SimConfig, class_id: int, w: float, seed: int) -> SimConfig:
    """Class alone on a link throttled to w*C, judged against full C.

    Stand-in for the worst case where every other class always has work:
    under the activity-scaled share equation the class then sees exactly
    w*C of capacity, so simulating a slower private link is equivalent
    and far cheaper than co-simulating synthetic backlog.
    """
    net = cfg.network
    throttled = replace(net, capacity=w * net.capacity, dt=net.dt,
                        slowdown_reference=net.reference_capacity)
    return replace(cfg, network=throttled, discipline=SharedFifo(), weights=None,
                   classes=[cfg.classes[class_id]], seed=seed)


def _class_met(result: SimResult, class_id: int = 0) -> bool:
    if result.unstable:
        return False
    return result.all_slos_met()


def find_baselines(
    cfg: SimConfig,
    opt: OptimizerConfig,
    hints: Optional[list[Optional[float]]] = None,
) -> BaselineResult:
    """Binary-search each class's minimal isolated weight in (0, 1]."""
    tol = opt.baseline_weight_tolerance
    out: list[Optional[float]] = []
    for k in range(len(cfg.classes)):

        def met(w: float) -> bool:
            return _class_met(run_simulation(_isolated_cfg(cfg, k, w, opt.seed)))

        lo, hi = 0.0, 1.0
        hint = hints[k] if hints else None
        if hint is not None:
            h_lo = max(0.0, hint - 2 * tol)
            h_hi = min(1.0, hint + 2 * tol)
            if met(h_hi):
                hi = h_hi
                if h_lo > 0.0 and not met(h_lo):
                    lo = h_lo
            else:
                lo = h_hi
                if not met(1.0):
                    out.append(None)
                    continue
        elif not met(1.0):
            out.append(None)
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if met(mid):
                hi = mid
            else:
                lo = mid
        out.append(hi)
    return BaselineResult(weights=out)


def _default_losses(cfg: SimConfig, opt: OptimizerConfig) -> Callable[[np.ndarray], np.ndarray]:
    n = len(cfg.classes)

    def evaluate(weights: np.ndarray) -> np.ndarray:
        sim_cfg = replace(cfg, weights=WeightAllocation(tuple(weights)), seed=opt.seed)
        result = run_simulation(sim_cfg)
        if result.unstable:
            return np.full(n, 2.0)
        losses = np.empty(n)
        for k, spec in enumerate(cfg.classes):
            if spec.slo is None:
                losses[k] = -1.0  # no objective: pure donor
                continue
            records = result.sli_records(k)
            values = {s.name: compute_sli(s, records) for s in spec.slis}
            losses[k] = class_loss(spec.slo, values)
        return losses

    return evaluate


def optimize_weights(
    cfg: SimConfig,
    opt: OptimizerConfig,
    baselines: Optional[BaselineResult] = None,
    evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> OptimizationOutcome:
    """Weight-transfer loop over simulated per-class SLO losses.

    ``evaluate`` maps a normalized weight vector to per-class losses;
    the default simulates ``cfg`` under those weights with a pinned
    seed.  Injectable so the transfer arithmetic is testable without
    simulations.
    """
    n = len(cfg.classes)
    if baselines is None:
        baselines = find_baselines(cfg, opt)
    if not baselines.feasible:
        bad = tuple(k for k, w in enumerate(baselines.weights) if w is None)
        return OptimizationOutcome(
            weights=WeightAllocation(tuple([1.0 / n] * n)), success=False,
            infeasible_classes=bad)
    if evaluate is None:
        evaluate = _default_losses(cfg, opt)

    weights = np.array(baselines.normalized().weights, dtype=float)
    trace: list[tuple[WeightAllocation, np.ndarray]] = []
    best_weights = weights.copy()
    best_maxloss = math.inf
    deadline = opt.deadline()

    for _ in range(opt.max_iterations):
        if deadline is not None and time.monotonic() > deadline:
            break
        losses = np.asarray(evaluate(weights), dtype=float)
        trace.append((WeightAllocation(tuple(weights)), losses.copy()))
        worst = float(losses.max())
        if worst < best_maxloss:
            best_maxloss = worst
            best_weights = weights.copy()
        if np.all(losses < 0):
            return OptimizationOutcome(
                weights=WeightAllocation(tuple(weights)), success=True, trace=trace)
        if float(losses.min()) > 0:
            return OptimizationOutcome(
                weights=WeightAllocation(tuple(weights)), success=False, trace=trace)
        order = np.argsort(losses, kind="stable")
        ranked = [(int(k), float(max(losses[k], -2.0))) for k in order]
        for (k, l_k), (q, l_q) in zip(ranked, reversed(ranked)):
            if l_k >= 0 or l_q <= 0:
                break
            delta = abs(l_k / 2.0) * weights[k]
            weights[k] -= delta
            weights[q] += delta
            if weights[k] <= 0:
                raise AssertionError("weight transfer drove a weight non-positive")

    return OptimizationOutcome(
        weights=WeightAllocation(tuple(best_weights)), success=False, trace=trace)


class Strategy(enum.Enum):
    SHARED_FIFO = "fifo"
    WEIGHTS_FIFO = "weights-fifo"
    WEIGHTS_FQ = "weights-fq"
    STATIC = "static"


@dataclass
class CapacityResult:
    capacity: Optional[float]  # bytes/ns; None when infeasible under the cap
    probes: int = 0
    weights: Optional[WeightAllocation] = None  # tuned weights at the found capacity

    @property
    def feasible(self) -> bool:
        return self.capacity is not None


def _probe_cfg(cfg: SimConfig, capacity: float, discipline, seed: int) -> SimConfig:
    """A self-contained network at the probe capacity.

    Sources start at the probe's line rate and slowdowns are judged
    against it: each candidate link is evaluated as the network that
    would actually be deployed.
    """
    net = replace(cfg.network, capacity=capacity, dt=cfg.network.dt,
                  slowdown_reference=None)
    cc = replace(cfg.cc, r_init=capacity)
    n = len(cfg.classes)
    placeholder = WeightAllocation(tuple([1.0 / n] * n))  # overridden by every consumer
    return replace(cfg, network=net, discipline=discipline, weights=placeholder,
                   cc=cc, seed=seed)


def offered_load(classes: list[TrafficClassSpec]) -> float:
    return sum(spec.offered_load() for spec in classes)


def _search_capacity(
    met: Callable[[float], bool],
    start: float,
    opt: OptimizerConfig,
    hint_hi: Optional[float] = None,
    counter: Optional[list[int]] = None,
    deadline: Optional[float] = None,
) -> Optional[float]:
    """Geometric bracket upward from ``start``, then bisect to tolerance.

    On a deadline the best feasible capacity found so far is returned
    (conservative: feasible but possibly not minimal), or None if no
    probe has passed yet.
    """

    def probe(c: float) -> bool:
        if counter is not None:
            counter[0] += 1
        return met(c)

    def out_of_time() -> bool:
        return deadline is not None and time.monotonic() > deadline

    cap = start * opt.bracket_cap_factor
    lo = start
    hi = None
    if hint_hi is not None and start < hint_hi <= cap and probe(hint_hi):
        hi = hint_hi
    if hi is None:
        c = start
        while True:
            if out_of_time():
                return None
            c *= 2.0
            if c > cap * (1 + 1e-9):
                return None
            if probe(c):
                hi = c
                break
            lo = c
    while (hi - lo) / hi > opt.capacity_search_tolerance:
        if out_of_time():
            break
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
        else:
            lo = mid
    return hi


def min_bandwidth(
    cfg: SimConfig,
    strategy: Strategy,
    opt: OptimizerConfig,
    hint_hi: Optional[float] = None,
) -> CapacityResult:
    """Minimum link capacity at which ``strategy`` meets every SLO."""
    counter = [0]
    deadline = opt.deadline()
    start = offered_load(cfg.classes)
    if start <= 0:
        raise ConfigError("aggregate offered load must be positive")

    if strategy is Strategy.STATIC:
        total = 0.0
        for k in range(len(cfg.classes)):
            solo = replace(cfg, classes=[cfg.classes[k]])
            part = offered_load(solo.classes)

            def met_k(c: float, solo=solo) -> bool:
                probe = _probe_cfg(solo, c, SharedFifo(), opt.seed)
                return _class_met(run_simulation(probe))

            c_k = _search_capacity(met_k, part, opt, counter=counter,
                                   deadline=deadline)
            if c_k is None:
                return CapacityResult(capacity=None, probes=counter[0])
            total += c_k
        return CapacityResult(capacity=total, probes=counter[0])

    tuned: dict[float, WeightAllocation] = {}

    if strategy is Strategy.SHARED_FIFO:
        def met(c: float) -> bool:
            return run_simulation(_probe_cfg(cfg, c, SharedFifo(), opt.seed)).all_slos_met()
    else:
        within = "fifo" if strategy is Strategy.WEIGHTS_FIFO else "fq"
        hint_box: list[Optional[list[Optional[float]]]] = [None]

        def met(c: float) -> bool:
            probe = _probe_cfg(cfg, c, WeightedClasses(within=within), opt.seed)
            baselines = find_baselines(probe, opt, hints=hint_box[0])
            if not baselines.feasible:
                return False
            hint_box[0] = list(baselines.weights)
            outcome = optimize_weights(probe, opt, baselines=baselines)
            if outcome.success:
                tuned[c] = outcome.weights
            return outcome.success

    c_min = _search_capacity(met, start, opt, hint_hi=hint_hi, counter=counter,
                             deadline=deadline)
    if c_min is None:
        return CapacityResult(capacity=None, probes=counter[0])
    return CapacityResult(capacity=c_min, probes=counter[0], weights=tuned.get(c_min))


def inflation(c_fifo: float, c_other: float) -> float:
    """How much more capacity the shared queue needs than the alternative."""
    if c_fifo <= 0 or c_other <= 0:
        raise ConfigError("capacities must be positive")
    return c_fifo / c_other


# --------------------------------------------------------------------------
# randomized scenario sampling


@dataclass(frozen=True)
class ScenarioSpace:
    """Sampling ranges for randomized multi-class scenarios."""

    network: NetworkConfig
    size_dists: tuple[str, ...] = ("google", "facebook", "alibaba")
    sigma_range: tuple[float, float] = (1.0, 2.0)
    rate_range_3: tuple[float, float] = (gbps(5), gbps(10))
    rate_range_5: tuple[float, float] = (gbps(3), gbps(6))
    threshold_range: tuple[float, float] = (3.0, 8.0)

    def rate_range(self, n_classes: int) -> tuple[float, float]:
        if n_classes == 3:
            return self.rate_range_3
        if n_classes == 5:
            return self.rate_range_5
        raise ConfigError("scenario sampling supports 3 or 5 classes")


def sample_scenario(
    space: ScenarioSpace, n_classes: int, rng: np.random.Generator
) -> list[TrafficClassSpec]:
    """Draw one multi-class scenario from the sampling table.

    Each class gets two SLIs split at the network's bandwidth-delay
    product, with the large-flow threshold doubled.
    """
    from .workload import LogNormal

    lo_r, hi_r = space.rate_range(n_classes)
    bdp = space.network.bdp()
    classes = []
    for k in range(n_classes):
        dist_name = str(rng.choice(list(space.size_dists)))
        cdf = replace(load_cdf_file(bundled_workload_path(dist_name)), source=dist_name)
        sigma = float(rng.uniform(*space.sigma_range))
        rate = float(rng.uniform(lo_r, hi_r))
        theta = float(rng.uniform(*space.threshold_range))
        mu = mu_for_load(rate, dist_mean(cdf), sigma)
        slis = [
            SliDef(name="small_p99", metric=Percentile(0.99), size_range=(0.0, bdp)),
            SliDef(name="large_p99", metric=Percentile(0.99), size_range=(bdp, None)),
        ]
        slo = f"small_p99 < {theta:.6g} && large_p99 < {2 * theta:.6g}"
        classes.append(TrafficClassSpec(
            name=f"class{k}", flow_sizes=cdf,
            interarrivals=LogNormal(mu, sigma), slis=slis, slo=slo))
    return classes


@dataclass
class ScenarioRow:
    index: int
    seed: int
    classes: list[TrafficClassSpec]
    capacities: dict[str, Optional[float]] = field(default_factory=dict)

    def inflation_over(self, strategy: Strategy) -> Optional[float]:
        c_f = self.capacities.get(Strategy.SHARED_FIFO.value)
        c_o = self.capacities.get(strategy.value)
        if c_f is None or c_o is None:
            return None
        return inflation(c_f, c_o)

    def class_summary(self) -> str:
        parts = []
        for spec in self.classes:
            sigma = getattr(spec.interarrivals, "sigma", float("nan"))
            src = getattr(spec.flow_sizes, "source", None) or "custom"
            slo = spec.slo.unparse() if spec.slo is not None else ""
            parts.append(f"{src}:sigma={sigma:.3f}"
                         f":rate={to_gbps(spec.offered_load()):.3f}G"
                         f":slo={slo}")
        return ";".join(parts)


def run_scenario_batch(
    space: ScenarioSpace,
    count: int,
    n_classes: int,
    cfg_template: SimConfig,
    opt: OptimizerConfig,
    strategies: tuple[Strategy, ...] = (
        Strategy.SHARED_FIFO, Strategy.WEIGHTS_FIFO, Strategy.WEIGHTS_FQ, Strategy.STATIC),
    progress: Optional[Callable[[str], None]] = None,
) -> list[ScenarioRow]:
    """Sample ``count`` scenarios and run every capacity strategy on each.

    The shared-FIFO capacity, searched first, seeds the weighted
    searches' upper brackets; a tuned strategy rarely needs more link
    than the shared queue.
    """
    rows = []
    for i in range(count):
        rng = np.random.default_rng([opt.seed, i])
        classes = sample_scenario(space, n_classes, rng)
        scen_opt = replace(opt, seed=opt.seed + 1000 * (i + 1))
        # discipline is per-strategy; a neutral one keeps validation happy
        cfg = replace(cfg_template, classes=classes, weights=None,
                      discipline=SharedFifo())
        row = ScenarioRow(index=i, seed=scen_opt.seed, classes=classes)
        fifo_cap: Optional[float] = None
        for strat in strategies:
            hint = fifo_cap if strat in (Strategy.WEIGHTS_FIFO, Strategy.WEIGHTS_FQ) else None
            res = min_bandwidth(cfg, strat, scen_opt, hint_hi=hint)
            row.capacities[strat.value] = res.capacity
            if strat is Strategy.SHARED_FIFO:
                fifo_cap = res.capacity
            if progress:
                cap = "infeasible" if res.capacity is None else f"{to_gbps(res.capacity):.2f} Gbps"
                progress(f"scenario {i}: {strat.value} -> {cap} ({res.probes} probes)")
        rows.append(row)
    return rows


def write_scenario_csv(rows: list[ScenarioRow], path: str) -> None:
    strategies = [s.value for s in Strategy]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["scenario", "seed", "n_classes", "classes"]
        header += [f"cap_gbps_{s}" for s in strategies]
        header += [f"inflation_{s.value}" for s in Strategy if s is not Strategy.SHARED_FIFO]
        writer.writerow(header)
        for row in rows:
            rec = [row.index, row.seed, len(row.classes), row.class_summary()]
            for s in strategies:
                cap = row.capacities.get(s)
                rec.append("" if cap is None else f"{to_gbps(cap):.4f}")
            for s in Strategy:
                if s is Strategy.SHARED_FIFO:
                    continue
                inf = row.inflation_over(s)
                rec.append("" if inf is None else f"{inf:.4f}")
            writer.writerow(rec)
