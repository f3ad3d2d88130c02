"""Single bottleneck queue under several scheduling disciplines.

The switch is modeled at fluid granularity: each simulation step a byte
budget C*dt is split across class queues according to the discipline, the
queues drain, and completion instants inside the step are recovered by
linear interpolation along the drain order.

Disciplines:

* SharedFifo        one queue for everyone, pure arrival order
* StrictPriority    per-class FIFO, lower priority_rank drains first
* WeightedClasses   per-class weight share, FIFO or fair-queueing inside
* ProcessorSharing  equal (or weighted) split across busy classes; the
                    fluid limit of round-robin / deficit round-robin

Weighted splits are work conserving: budget a class cannot use is handed
to the still-backlogged classes in proportion to their weights.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np

from .errors import ConfigError

# Byte-dust threshold, matching the engine's send filter.  Accumulated
# float drift between the budget arithmetic and the segment deques sits
# around 1e-9 on realistic byte totals; comparisons must tolerate it or
# a segment can retain dust forever while the engine already considers
# the queue empty, stranding its flow one completion short.
_EPS = 1e-6


@dataclass(frozen=True)
class WeightAllocation:
    """Per-class scheduling weights; normalized() scales them to sum 1."""

    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.weights:
            raise ConfigError("weight allocation cannot be empty")
        if any(w <= 0 for w in self.weights):
            raise ConfigError("weights must be strictly positive")

    def normalized(self) -> "WeightAllocation":
        total = sum(self.weights)
        return WeightAllocation(tuple(w / total for w in self.weights))

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, k: int) -> float:
        return self.weights[k]


@dataclass(frozen=True)
class SharedFifo:
    pass


@dataclass(frozen=True)
class StrictPriority:
    pass


@dataclass(frozen=True)
class WeightedClasses:
    within: Literal["fifo", "fq"] = "fifo"

    def __post_init__(self):
        if self.within not in ("fifo", "fq"):
            raise ConfigError(f"unknown within-class discipline {self.within!r}")


@dataclass(frozen=True)
class ProcessorSharing:
    weighted: bool = False


QueueDiscipline = Union[SharedFifo, StrictPriority, WeightedClasses, ProcessorSharing]


@dataclass
class DrainReport:
    """Outcome of one drain step."""

    drained_by_flow: dict[int, float] = field(default_factory=dict)
    # flow id -> time offset (ns) within the step when its queued bytes hit zero
    emptied_at: dict[int, float] = field(default_factory=dict)
    drained_by_class: np.ndarray = field(default_factory=lambda: np.zeros(0))
    unused_budget: float = 0.0


class BottleneckState:
    """Queue contents of the bottleneck for one simulation run."""

    def __init__(self, n_classes: int, discipline: QueueDiscipline):
        if n_classes < 1:
            raise ConfigError("need at least one traffic class")
        self.n_classes = n_classes
        self.discipline = discipline
        self._qlen = np.zeros(n_classes)
        self._fair_queue = isinstance(discipline, WeightedClasses) and discipline.within == "fq"
        self._shared = isinstance(discipline, SharedFifo)
        if self._shared:
            # segments [class_id, flow_id, bytes] in arrival order
            self._global: deque[list] = deque()
        elif self._fair_queue:
            self._backlogs: list[dict[int, float]] = [dict() for _ in range(n_classes)]
        else:
            self._queues: list[deque[list]] = [deque() for _ in range(n_classes)]
        # queued bytes per flow, for detecting when a flow's last byte leaves
        self._flow_queued: dict[int, float] = {}

    # -- state inspection ---------------------------------------------------

    def queue_length(self, class_id: int) -> float:
        return float(self._qlen[class_id])

    def queue_lengths(self) -> np.ndarray:
        return self._qlen.copy()

    def total_queued(self) -> float:
        return float(self._qlen.sum())

    def flow_queued(self, flow_id: int) -> float:
        return self._flow_queued.get(flow_id, 0.0)

    # -- enqueue ------------------------------------------------------------

    def enqueue(self, class_id: int, flow_id: int, nbytes: float) -> None:
        if nbytes <= 0:
            raise ConfigError("enqueue needs a positive byte count")
        if not 0 <= class_id < self.n_classes:
            raise ConfigError(f"class id {class_id} out of range")
        self._qlen[class_id] += nbytes
        self._flow_queued[flow_id] = self._flow_queued.get(flow_id, 0.0) + nbytes
        if self._shared:
            q = self._global
            if q and q[-1][0] == class_id and q[-1][1] == flow_id:
                q[-1][2] += nbytes
            else:
                q.append([class_id, flow_id, nbytes])
        elif self._fair_queue:
            b = self._backlogs[class_id]
            b[flow_id] = b.get(flow_id, 0.0) + nbytes
        else:
            q = self._queues[class_id]
            # merge with the tail segment when the same flow sent last;
            # arrival order across flows is preserved
            if q and q[-1][0] == flow_id:
                q[-1][1] += nbytes
            else:
                q.append([flow_id, nbytes])

    # -- budget allocation --------------------------------------------------

    def service_allocation(
        self,
        capacity: float,
        dt: float,
        weights: Optional[WeightAllocation] = None,
        priority_ranks: Optional[list[int]] = None,
    ) -> np.ndarray:
        """Byte budgets per class for one step of length dt.

        The total never exceeds capacity*dt, no class is budgeted beyond
        its queue, and weighted variants redistribute unusable budget to
        still-backlogged classes (work conservation).
        """
        if capacity <= 0 or dt <= 0:
            raise ConfigError("capacity and dt must be positive")
        total = capacity * dt
        qlens = self._qlen
        disc = self.discipline

        if isinstance(disc, SharedFifo):
            budgets = np.zeros(self.n_classes)
            remaining = min(total, float(qlens.sum()))
            # attribute the global budget to classes in arrival order
            for seg in self._global:
                if remaining <= _EPS:
                    break
                take = min(seg[2], remaining)
                budgets[seg[0]] += take
                remaining -= take
            return budgets

        if isinstance(disc, StrictPriority):
            if priority_ranks is None or len(priority_ranks) != self.n_classes:
                raise ConfigError("strict priority needs a rank per class")
            if len(set(priority_ranks)) != self.n_classes:
                raise ConfigError("priority ranks must be distinct")
            budgets = np.zeros(self.n_classes)
            remaining = total
            for k in sorted(range(self.n_classes), key=lambda i: priority_ranks[i]):
                take = min(float(qlens[k]), remaining)
                budgets[k] = take
                remaining -= take
            return budgets

        if isinstance(disc, ProcessorSharing):
            if disc.weighted:
                if weights is None:
                    raise ConfigError("weighted processor sharing needs weights")
                w = weights.normalized()
            else:
                w = WeightAllocation(tuple([1.0] * self.n_classes)).normalized()
            return self._weighted_budgets(total, w)

        if isinstance(disc, WeightedClasses):
            if weights is None:
                raise ConfigError("weighted classes need weights")
            return self._weighted_budgets(total, weights.normalized())

        raise TypeError(f"unsupported discipline {disc!r}")

    def _weighted_budgets(self, total: float, weights: WeightAllocation) -> np.ndarray:
        if len(weights) != self.n_classes:
            raise ConfigError("weight count must match class count")
        budgets = np.zeros(self.n_classes)
        remaining = total
        active = [k for k in range(self.n_classes) if self._qlen[k] > _EPS]
        while remaining > _EPS and active:
            wsum = sum(weights[k] for k in active)
            shares = {k: remaining * weights[k] / wsum for k in active}
            satisfied = [k for k in active
                         if self._qlen[k] - budgets[k] <= shares[k] + _EPS]
            if not satisfied:
                for k in active:
                    budgets[k] += shares[k]
                break
            for k in satisfied:
                need = self._qlen[k] - budgets[k]
                budgets[k] = float(self._qlen[k])
                remaining -= need
            active = [k for k in active if k not in satisfied]
        return budgets

    # -- drain --------------------------------------------------------------

    def drain(
        self,
        budgets: np.ndarray,
        dt: float,
        capacity: float,
        priority_ranks: Optional[list[int]] = None,
    ) -> DrainReport:
        """Drain up to the budgeted bytes from each queue.

        Completion offsets inside the step assume each class drains at its
        budgeted rate for the whole step; SharedFifo and StrictPriority
        drain sequentially at full line rate instead, which matches how
        those schedulers actually serialize service.
        """
        report = DrainReport()
        report.drained_by_class = np.zeros(self.n_classes)
        disc = self.discipline

        if isinstance(disc, SharedFifo):
            self._drain_sequential_global(report, float(np.sum(budgets)), capacity)
        elif isinstance(disc, StrictPriority):
            if priority_ranks is None:
                raise ConfigError("strict priority drain needs priority ranks")
            order = sorted(range(self.n_classes), key=lambda i: priority_ranks[i])
            self._drain_sequential_classes(report, budgets, capacity, order)
        elif self._fair_queue:
            for k in range(self.n_classes):
                self._drain_fair_queue(report, k, float(budgets[k]), dt)
        else:
            for k in range(self.n_classes):
                self._drain_fifo_class(report, k, float(budgets[k]), dt)

        total_budget = float(np.sum(budgets))
        report.unused_budget = max(0.0, total_budget - float(report.drained_by_class.sum()))
        np.clip(self._qlen, 0.0, None, out=self._qlen)
        return report

    def _note_drain(self, report: DrainReport, class_id: int, flow_id: int,
                    nbytes: float, emptied: bool, subtime: float) -> None:
        self._qlen[class_id] -= nbytes
        report.drained_by_class[class_id] += nbytes
        report.drained_by_flow[flow_id] = report.drained_by_flow.get(flow_id, 0.0) + nbytes
        left = self._flow_queued.get(flow_id, 0.0) - nbytes
        if emptied and left <= _EPS:
            self._flow_queued.pop(flow_id, None)
            report.emptied_at[flow_id] = subtime
        else:
            self._flow_queued[flow_id] = left

    def _drain_sequential_global(self, report: DrainReport, budget: float,
                                 capacity: float) -> None:
        q = self._global
        remaining = budget
        pos = 0.0
        while q and remaining > _EPS:
            class_id, flow_id, seg = q[0]
            take = min(seg, remaining)
            pos += take
            remaining -= take
            if take >= seg - _EPS:
                q.popleft()
                self._note_drain(report, class_id, flow_id, seg, True, pos / capacity)
            else:
                q[0][2] -= take
                self._note_drain(report, class_id, flow_id, take, False, 0.0)

    def _drain_sequential_classes(self, report: DrainReport, budgets: np.ndarray,
                                  capacity: float, order: list[int]) -> None:
        # higher-priority classes hold the line first; completion offsets
        # accumulate across classes because service is serialized
        pos = 0.0
        for k in order:
            remaining = float(budgets[k])
            q = self._queues[k]
            while q and remaining > _EPS:
                flow_id, seg = q[0]
                take = min(seg, remaining)
                pos += take
                remaining -= take
                if take >= seg - _EPS:
                    q.popleft()
                    self._note_drain(report, k, flow_id, seg, True, pos / capacity)
                else:
                    q[0][1] -= take
                    self._note_drain(report, k, flow_id, take, False, 0.0)

    def _drain_fifo_class(self, report: DrainReport, k: int, budget: float,
                          dt: float) -> None:
        if budget <= _EPS:
            return
        q = self._queues[k]
        remaining = budget
        pos = 0.0
        while q and remaining > _EPS:
            flow_id, seg = q[0]
            take = min(seg, remaining)
            pos += take
            remaining -= take
            if take >= seg - _EPS:
                q.popleft()
                self._note_drain(report, k, flow_id, seg, True, pos / budget * dt)
            else:
                q[0][1] -= take
                self._note_drain(report, k, flow_id, take, False, 0.0)

    def _drain_fair_queue(self, report: DrainReport, k: int, budget: float,
                          dt: float) -> None:
        """Idealized bit-by-bit round robin inside one class.

        All backlogged flows drain at the same rate; when the smallest
        backlog empties its share is redistributed.  Completion offsets
        follow the piecewise-constant drain schedule exactly.
        """
        if budget <= _EPS:
            return
        backlogs = self._backlogs[k]
        if not backlogs:
            return
        items = sorted(backlogs.items(), key=lambda kv: (kv[1], kv[0]))
        m = len(items)
        remaining = budget
        pos = 0.0  # class bytes drained so far this step
        level = 0.0  # per-flow bytes drained so far (equal across active flows)
        cut = m  # index of the first flow that did not fully drain
        for i, (flow_id, backlog) in enumerate(items):
            active = m - i
            stage = (backlog - level) * active
            if stage <= remaining + _EPS:
                remaining -= stage
                pos += stage
                level = backlog
                del backlogs[flow_id]
                self._note_drain(report, k, flow_id, backlog, True, pos / budget * dt)
            else:
                level += remaining / active
                pos += remaining
                remaining = 0.0
                cut = i
                break
        if cut < m:
            for flow_id, backlog in items[cut:]:
                if level > _EPS:
                    left = backlog - level
                    if left <= _EPS:
                        del backlogs[flow_id]
                        self._note_drain(report, k, flow_id, backlog, True,
                                         pos / budget * dt)
                    else:
                        backlogs[flow_id] = left
                        self._note_drain(report, k, flow_id, level, False, 0.0)
