"""Flow-level simulation engine.

Sources, a one-way propagation delay, and one bottleneck queue are
advanced together on a fixed grid of width dt.  Every step:

1. bytes sent tau ago arrive at the switch and join their class queue
2. per-class signals are sampled and recorded (the rule consumes them
   later at their transport lags)
3. the congestion-control rule sets a target rate per class; smoothed
   per-flow rates chase it
4. sources emit rate*dt bytes into the delay pipe
5. the scheduler splits the step's byte budget over the queues and
   drains; completion instants are interpolated inside the step

A flow is complete when its last byte drains, plus the switch-to-sink
delay tau.  Latencies are judged against the unloaded network:
min_latency = size / capacity + rtt, so slowdown >= 1 by construction.

The step loop is array-oriented: live flows occupy slots in parallel
numpy columns so the per-step work does not degrade into per-flow Python
loops during arrival bursts.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import slo as slo_mod
from .bottleneck import (
    BottleneckState,
    ProcessorSharing,
    QueueDiscipline,
    SharedFifo,
    StrictPriority,
    WeightAllocation,
    WeightedClasses,
)
from .ccmodel import CcParams, class_capacity, update_rule
from .errors import ConfigError
from .workload import TrafficClassSpec, class_stream, generate_arrival_arrays

_BYTE_EPS = 1e-6


@dataclass(frozen=True)
class NetworkConfig:
    """Bottleneck link parameters; times in ns, rates in bytes/ns.

    ``slowdown_reference`` is the capacity slowdowns are judged against.
    It defaults to the link capacity; capacity-planning searches that
    throttle the link below its nominal speed set it to the nominal value
    so the SLO keeps meaning the same thing across probes.
    """

    capacity: float
    rtt: float
    dt: float = 0.0  # 0 -> default of tau / 20
    slowdown_reference: Optional[float] = None

    def __post_init__(self):
        if self.capacity <= 0:
            raise ConfigError("link capacity must be positive")
        if self.rtt <= 0:
            raise ConfigError("rtt must be positive")
        dt = self.dt if self.dt > 0 else self.tau / 20.0
        object.__setattr__(self, "dt", dt)
        m = round(self.tau / dt)
        if m < 4 or abs(m * dt - self.tau) > 1e-9 * self.tau:
            raise ConfigError("dt must divide tau evenly and be at most tau / 4")
        if self.slowdown_reference is not None and self.slowdown_reference < self.capacity:
            raise ConfigError("slowdown reference cannot be below the link capacity")

    @property
    def tau(self) -> float:
        return self.rtt / 2.0

    @property
    def steps_per_tau(self) -> int:
        return round(self.tau / self.dt)

    @property
    def reference_capacity(self) -> float:
        return self.slowdown_reference if self.slowdown_reference is not None else self.capacity

    def min_latency(self, size: float) -> float:
        """Completion time of this size on the unloaded reference network."""
        if size <= 0:
            raise ConfigError("size must be positive")
        return size / self.reference_capacity + self.rtt

    def bdp(self) -> float:
        """Bandwidth-delay product of the reference network, bytes."""
        return self.reference_capacity * self.rtt


@dataclass
class SimConfig:
    """Everything one simulation run needs."""

    network: NetworkConfig
    discipline: QueueDiscipline
    cc: CcParams
    classes: list[TrafficClassSpec]
    num_flows: int = 100_000  # flows generated per class
    seed: int = 1
    weights: Optional[WeightAllocation] = None
    warmup_fraction: float = 0.05
    horizon_factor: float = 2.0
    record_telemetry: bool = False
    track_uncontrolled_budget: bool = False

    def __post_init__(self):
        if not self.classes:
            raise ConfigError("need at least one traffic class")
        if self.num_flows < 1:
            raise ConfigError("num_flows must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup fraction must lie in [0, 1)")
        if self.horizon_factor < 1.0:
            raise ConfigError("horizon factor must be >= 1")
        n = len(self.classes)
        if isinstance(self.discipline, (WeightedClasses,)) or (
            isinstance(self.discipline, ProcessorSharing) and self.discipline.weighted
        ):
            if self.weights is None:
                raise ConfigError("this discipline needs per-class weights")
            if len(self.weights) != n:
                raise ConfigError("weight count must match class count")
        if isinstance(self.discipline, StrictPriority):
            ranks = [c.priority_rank for c in self.classes]
            if any(r is None for r in ranks) or len(set(ranks)) != n:
                raise ConfigError("strict priority needs a distinct priority_rank per class")
        if self.network.dt > self.cc.eta * self.network.tau:
            raise ConfigError("dt must be <= eta * tau")


@dataclass(slots=True)
class FlowRecord:
    flow_id: int
    class_id: int
    size: int
    arrival: float
    completion: float
    latency: float
    slowdown: float


@dataclass
class SimCounters:
    bytes_offered: float = 0.0
    bytes_generated: float = 0.0
    bytes_drained: float = 0.0
    peak_queue: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_conservation_error: float = 0.0
    steps: int = 0
    duration_ns: float = 0.0
    runtime_s: float = 0.0


@dataclass
class Telemetry:
    times: np.ndarray
    queue_lengths: np.ndarray  # (steps, n_classes)
    drained: np.ndarray  # (steps, n_classes)


@dataclass
class SimResult:
    config: SimConfig
    records_by_class: list[list[FlowRecord]]
    counters: SimCounters
    unstable: bool = False
    telemetry: Optional[Telemetry] = None
    uncontrolled_sent: Optional[np.ndarray] = None  # per global flow id, bytes

    @property
    def records(self) -> list[FlowRecord]:
        out: list[FlowRecord] = []
        for rs in self.records_by_class:
            out.extend(rs)
        return out

    def sli_records(self, class_id: int) -> list[FlowRecord]:
        """Post-warmup records of one class, in completion order."""
        rs = self.records_by_class[class_id]
        drop = int(self.config.warmup_fraction * len(rs))
        return rs[drop:]

    def evaluate(self) -> list[slo_mod.SliReport]:
        """SLI values and SLO verdict per class over post-warmup records."""
        reports = []
        for k, spec in enumerate(self.config.classes):
            reports.append(
                slo_mod.evaluate_class(spec.name, spec.slis, spec.slo, self.sli_records(k))
            )
        return reports

    def all_slos_met(self) -> bool:
        """True only when every class with an SLO has verdict met."""
        if self.unstable:
            return False
        for rep in self.evaluate():
            if rep.verdict is not None and rep.verdict is not slo_mod.Verdict.MET:
                return False
        return True


def slowdown_percentile(records: list[FlowRecord], p: float,
                        size_range: Optional[tuple[float, Optional[float]]] = None
                        ) -> Optional[float]:
    """Nearest-rank slowdown percentile over (optionally size-banded) records."""
    if size_range is None:
        vals = [r.slowdown for r in records]
    else:
        lo, hi = size_range
        vals = [r.slowdown for r in records if r.size >= lo and (hi is None or r.size < hi)]
    return slo_mod.nearest_rank_percentile(vals, p)


def bin_by_size(records: list[FlowRecord], num_bins: int = 10) -> list[list[FlowRecord]]:
    """Split records into equal-count bins by flow size (ascending).

    Bin populations differ by at most one; with fewer records than bins
    the trailing bins are simply absent.
    """
    if num_bins < 1:
        raise ConfigError("need at least one bin")
    ordered = sorted(records, key=lambda r: (r.size, r.flow_id))
    if not ordered:
        return []
    bins = [list(chunk) for chunk in np.array_split(np.array(ordered, dtype=object),
                                                    min(num_bins, len(ordered)))]
    return [b for b in bins if b]


# --------------------------------------------------------------------------
# the simulator


class _FlowTable:
    """Parallel numpy columns for live flows, with slot reuse."""

    def __init__(self, cap: int = 256):
        self.cap = cap
        self.fid = np.zeros(cap, dtype=np.int64)
        self.cls = np.zeros(cap, dtype=np.int32)
        self.promote_step = np.zeros(cap, dtype=np.int64)
        self.unsent = np.zeros(cap)
        self.rho = np.zeros(cap)
        self.insystem = np.zeros(cap)
        self.alive = np.zeros(cap, dtype=bool)
        self.free: list[int] = list(range(cap - 1, -1, -1))
        self.slot_of: dict[int, int] = {}
        self.count = 0

    def _grow(self) -> None:
        old = self.cap
        self.cap = old * 2
        for name in ("fid", "cls", "promote_step", "unsent", "rho", "insystem", "alive"):
            arr = getattr(self, name)
            grown = np.zeros(self.cap, dtype=arr.dtype)
            grown[:old] = arr
            setattr(self, name, grown)
        self.free.extend(range(self.cap - 1, old - 1, -1))

    def add(self, fid: int, cls: int, promote_step: int, size: float, rho: float) -> int:
        if not self.free:
            self._grow()
        slot = self.free.pop()
        self.fid[slot] = fid
        self.cls[slot] = cls
        self.promote_step[slot] = promote_step
        self.unsent[slot] = size
        self.rho[slot] = rho
        self.insystem[slot] = 0.0
        self.alive[slot] = True
        self.slot_of[fid] = slot
        self.count += 1
        return slot

    def remove(self, fid: int) -> None:
        slot = self.slot_of.pop(fid)
        self.alive[slot] = False
        self.free.append(slot)
        self.count -= 1


def run_simulation(cfg: SimConfig) -> SimResult:
    """Generate each class's arrivals and simulate to completion."""
    arrivals = []
    for k, spec in enumerate(cfg.classes):
        rng = class_stream(cfg.seed, k)
        times, sizes = generate_arrival_arrays(spec, cfg.num_flows, rng)
        arrivals.append((times, sizes))
    return run_with_arrivals(cfg, arrivals)


def run_with_arrivals(
    cfg: SimConfig, arrivals: list[tuple[np.ndarray, np.ndarray]]
) -> SimResult:
    """Simulate explicit per-class arrival traces (times_ns, sizes_bytes)."""
    started = time.perf_counter()
    net = cfg.network
    n_classes = len(cfg.classes)
    if len(arrivals) != n_classes:
        raise ConfigError("need one arrival trace per class")

    dt = net.dt
    tau = net.tau
    m = net.steps_per_tau
    capacity = net.capacity
    cc = cfg.cc
    r_init = cc.r_init
    window = 2.0 * tau
    alpha = dt / (cc.eta * tau)
    shared_cc = isinstance(cfg.discipline, SharedFifo)
    weighted_cc: Optional[WeightAllocation]
    if isinstance(cfg.discipline, (WeightedClasses,)) or (
        isinstance(cfg.discipline, ProcessorSharing) and cfg.discipline.weighted
    ):
        weighted_cc = cfg.weights.normalized()
    elif isinstance(cfg.discipline, ProcessorSharing):
        weighted_cc = WeightAllocation(tuple([1.0] * n_classes)).normalized()
    else:
        weighted_cc = None  # shared fifo / strict priority: full C per class
    ranks = [c.priority_rank for c in cfg.classes] if isinstance(
        cfg.discipline, StrictPriority) else None

    arr_times = [np.asarray(t, dtype=float) for t, _ in arrivals]
    arr_sizes = [np.asarray(s, dtype=float) for _, s in arrivals]
    adm_steps = [np.ceil(t / dt - 1e-12).astype(np.int64) for t in arr_times]
    ptrs = [0] * n_classes
    fid_offsets = np.cumsum([0] + [len(t) for t in arr_times[:-1]])

    total_bytes = float(sum(s.sum() for s in arr_sizes))
    last_arrival = float(max((t[-1] for t in arr_times if len(t)), default=0.0))
    horizon_ns = cfg.horizon_factor * (last_arrival + total_bytes / capacity + 10 * net.rtt)

    from .ccmodel import ClassSignals, SignalHistory

    history = SignalHistory(n_classes, depth=2 * m + 4)
    bottleneck = BottleneckState(n_classes, cfg.discipline)
    table = _FlowTable()
    pipe: deque[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = deque()
    pipe_bytes = 0.0
    r_u_ledger = np.zeros(n_classes)
    r_u_drops: dict[int, np.ndarray] = {}
    drained_prev = np.zeros(n_classes)

    counters = SimCounters(bytes_offered=total_bytes, peak_queue=np.zeros(n_classes))
    records_by_class: list[list[FlowRecord]] = [[] for _ in range(n_classes)]
    telem_t: list[float] = []
    telem_q: list[np.ndarray] = []
    telem_d: list[np.ndarray] = []

    blind_sent = None
    if cfg.track_uncontrolled_budget:
        blind_sent = np.zeros(sum(len(t) for t in arr_times))

    generated = 0.0
    drained_total = 0.0
    unstable = False
    step = 0
    ref_capacity = net.reference_capacity
    rtt = net.rtt

    def all_admitted() -> bool:
        return all(ptrs[k] >= len(arr_times[k]) for k in range(n_classes))

    while True:
        t_now = step * dt

        if t_now > horizon_ns:
            unstable = True
            break

        # 1. expire uncontrolled windows from the signal ledger
        if r_u_drops:
            if step in r_u_drops:
                r_u_ledger -= r_u_drops.pop(step)
            np.clip(r_u_ledger, 0.0, None, out=r_u_ledger)

        # 2. admissions at this step boundary
        for k in range(n_classes):
            steps_k = adm_steps[k]
            p = ptrs[k]
            n_k = len(steps_k)
            while p < n_k and steps_k[p] <= step:
                size = arr_sizes[k][p]
                fid = int(fid_offsets[k] + p)
                table.add(fid, k, step + 2 * m, size, r_init)
                u = min(r_init * window, size) / window
                r_u_ledger[k] += u
                drop = r_u_drops.get(step + 2 * m)
                if drop is None:
                    drop = np.zeros(n_classes)
                    r_u_drops[step + 2 * m] = drop
                drop[k] += u
                p += 1
            ptrs[k] = p

        # 3. sample this boundary's signals; the queue signal is the
        # standing backlog, before this step's tau-delayed batch lands
        alive = table.alive
        qlens = bottleneck.queue_lengths()
        controlled = alive & (table.promote_step <= step)
        sending_ctl = controlled & (table.unsent > _BYTE_EPS)
        n_ctl = np.bincount(table.cls[sending_ctl], minlength=n_classes)
        active = (qlens > _BYTE_EPS) | (drained_prev > _BYTE_EPS)
        history.record(step, ClassSignals(
            uncontrolled_rate=r_u_ledger.copy(), queue=qlens,
            n_controlled=n_ctl, active=active))
        np.maximum(counters.peak_queue, qlens, out=counters.peak_queue)

        # 4. rule evaluation with lagged signals
        sig_switch = history.lookup(step - m)       # queue, activity: lag tau
        sig_source = history.lookup(step - 2 * m)   # r_u, N: lag 2 tau
        targets = np.full(n_classes, np.nan)
        if shared_cc:
            n_lag = int(sig_source.n_controlled.sum())
            if n_lag >= 1:
                r = update_rule(cc, capacity, float(sig_source.uncontrolled_rate.sum()),
                                float(sig_switch.queue.sum()), n_lag, tau)
                targets[:] = max(0.0, r)
        else:
            active_set = [i for i in range(n_classes) if sig_switch.active[i]]
            for k in range(n_classes):
                n_lag = int(sig_source.n_controlled[k])
                if n_lag < 1:
                    continue
                if weighted_cc is not None:
                    c_k = class_capacity(weighted_cc, active_set, k, capacity)
                else:
                    c_k = capacity  # strict priority: rule is blind to ranks
                r = update_rule(cc, c_k, float(sig_source.uncontrolled_rate[k]),
                                float(sig_switch.queue[k]), n_lag, tau)
                targets[k] = max(0.0, r)

        # 5. smoothed rates chase the rule
        tgt = targets[table.cls]
        upd = controlled & ~np.isnan(tgt)
        if upd.any():
            rho = table.rho
            rho[upd] += alpha * (tgt[upd] - rho[upd])
            np.clip(rho, 0.0, r_init, out=rho)

        # 6. sources emit into the delay pipe
        sending = alive & (table.unsent > _BYTE_EPS)
        if sending.any():
            rate = np.where(controlled, table.rho, r_init)
            send = np.minimum(rate * dt, table.unsent)
            send[~sending] = 0.0
            idx = np.flatnonzero(send > _BYTE_EPS)
            if idx.size:
                quanta = send[idx]
                table.unsent[idx] -= quanta
                table.insystem[idx] += quanta
                emitted = float(quanta.sum())
                generated += emitted
                pipe_bytes += emitted
                pipe.append((step + m, table.fid[idx].copy(),
                             table.cls[idx].copy(), quanta.copy()))
                if blind_sent is not None:
                    blind = ~controlled[idx]
                    if blind.any():
                        np.add.at(blind_sent, table.fid[idx][blind], quanta[blind])

        # 7. bytes sent tau ago reach the switch
        while pipe and pipe[0][0] <= step:
            _, b_fids, b_cls, b_bytes = pipe.popleft()
            pipe_bytes -= float(b_bytes.sum())
            for i in range(len(b_fids)):
                bottleneck.enqueue(int(b_cls[i]), int(b_fids[i]), float(b_bytes[i]))

        # 8. scheduler splits the budget; queues drain; flows complete
        if bottleneck.total_queued() > _BYTE_EPS:
            budgets = bottleneck.service_allocation(capacity, dt, cfg.weights, ranks)
            report = bottleneck.drain(budgets, dt, capacity, ranks)
            drained_prev = report.drained_by_class
            step_drained = float(drained_prev.sum())
            drained_total += step_drained
            slot_of = table.slot_of
            insystem = table.insystem
            for fid, amt in report.drained_by_flow.items():
                slot = slot_of.get(fid)
                # a completed flow may leave <= 1e-3 bytes of dust in the
                # delay pipe; when it lands and drains, just let it pass
                if slot is not None:
                    insystem[slot] -= amt
            if report.emptied_at:
                unsent = table.unsent
                for fid, sub in report.emptied_at.items():
                    slot = slot_of.get(fid)
                    if slot is None:
                        continue
                    if unsent[slot] <= _BYTE_EPS and insystem[slot] <= 1e-3:
                        k = int(table.cls[slot])
                        intra = fid - int(fid_offsets[k])
                        arrival = float(arr_times[k][intra])
                        size = float(arr_sizes[k][intra])
                        completion = t_now + sub + tau
                        latency = completion - arrival
                        slow = latency / (size / ref_capacity + rtt)
                        records_by_class[k].append(FlowRecord(
                            flow_id=fid, class_id=k, size=int(size), arrival=arrival,
                            completion=completion, latency=latency, slowdown=slow))
                        table.remove(fid)
        else:
            drained_prev = np.zeros(n_classes)

        # 9. byte conservation: sent == in pipe + queued + drained
        residual = abs(generated - (pipe_bytes + bottleneck.total_queued() + drained_total))
        if residual > counters.max_conservation_error:
            counters.max_conservation_error = residual

        if cfg.record_telemetry:
            telem_t.append(t_now)
            telem_q.append(bottleneck.queue_lengths())
            telem_d.append(drained_prev.copy())

        counters.steps += 1

        # 10. advance, fast-forwarding across dead air
        if table.count == 0 and not pipe and bottleneck.total_queued() <= _BYTE_EPS:
            if all_admitted():
                break
            next_step = min(int(adm_steps[k][ptrs[k]]) for k in range(n_classes)
                            if ptrs[k] < len(adm_steps[k]))
            if next_step > step + 1:
                for s in [s for s in r_u_drops if s <= next_step]:
                    r_u_ledger -= r_u_drops.pop(s)
                np.clip(r_u_ledger, 0.0, None, out=r_u_ledger)
                step = next_step
                drained_prev = np.zeros(n_classes)
                continue
        step += 1

    counters.bytes_generated = generated
    counters.bytes_drained = drained_total
    counters.duration_ns = step * dt
    counters.runtime_s = time.perf_counter() - started

    telemetry = None
    if cfg.record_telemetry:
        telemetry = Telemetry(times=np.array(telem_t), queue_lengths=np.array(telem_q),
                              drained=np.array(telem_d))
    return SimResult(config=cfg, records_by_class=records_by_class, counters=counters,
                     unstable=unstable, telemetry=telemetry, uncontrolled_sent=blind_sent)
