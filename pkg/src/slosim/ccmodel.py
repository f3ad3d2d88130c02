"""Abstract endpoint congestion control driven by delayed switch signals.

Instead of emulating any one protocol, sources obey a shared rate rule
parameterized by four knobs: a utilization target, a queue threshold, an
uncontrolled-traffic discount, and a smoothing gain.  The two bundled
presets approximate a queue-threshold protocol (dctcp) and a near-zero
queue protocol (hpcc).

Timing model, with tau = one-way source<->switch delay (rtt / 2):

* A new flow sends blind at its initial rate for one RTT (2*tau); only
  flows older than that are "controlled" and divide the rule's rate.
* Signals collected at the source (uncontrolled rate, controlled count)
  reach the rule with a 2*tau lag; signals collected at the switch
  (queue length, class capacity) with a tau lag.
* The commanded rate is smoothed through a first-order filter with time
  constant eta*tau before it becomes the sending rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .bottleneck import WeightAllocation
from .errors import ConfigError
from .units import gbps, kb


@dataclass(frozen=True)
class CcParams:
    """Congestion-control knobs.

    r_init           initial (and maximum) per-flow rate, bytes/ns
    u_target         fraction of class capacity the rule aims to use
    queue_threshold  queue length (bytes) tolerated before draining extra
    beta             0 or 1: whether the rule discounts uncontrolled traffic
    eta              smoothing time constant in units of tau
    """

    r_init: float
    u_target: float
    queue_threshold: float
    beta: float
    eta: float

    def __post_init__(self):
        if self.r_init <= 0:
            raise ConfigError("r_init must be positive")
        if not 0.0 < self.u_target <= 1.0:
            raise ConfigError("u_target must lie in (0, 1]")
        if self.queue_threshold < 0:
            raise ConfigError("queue_threshold must be >= 0")
        if self.beta not in (0.0, 1.0):
            raise ConfigError("beta must be 0 or 1")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")


def dctcp_like(r_init: float = gbps(100)) -> CcParams:
    """Queue-threshold preset: full utilization, 100 KB standing queue."""
    return CcParams(r_init=r_init, u_target=1.0, queue_threshold=kb(100), beta=0.0, eta=5.5)


def hpcc_like(r_init: float = gbps(100)) -> CcParams:
    """Near-empty-queue preset: 90% utilization target, zero threshold."""
    return CcParams(r_init=r_init, u_target=0.9, queue_threshold=0.0, beta=1.0, eta=5.0)


CC_PRESETS = {"dctcp": dctcp_like, "hpcc": hpcc_like}


# --------------------------------------------------------------------------
# per-flow state and reference rate functions


@dataclass
class FlowCcState:
    """Sending-side view of one flow."""

    flow_id: int
    class_id: int
    arrival_time: float  # ns, when the source was admitted
    size: float  # bytes
    bytes_sent: float = 0.0
    rho: float = 0.0  # smoothed sending rate, bytes/ns
    controlled: bool = False

    @property
    def unsent(self) -> float:
        return max(0.0, self.size - self.bytes_sent)


def uncontrolled_rate_of_flow(flow: FlowCcState, t: float, tau: float,
                              r_init: float) -> float:
    """Signal contribution of a flow still inside its blind first RTT.

    The initial window of min(r_init * 2*tau, size) bytes is accounted as
    if paced evenly across the 2*tau window, and contributes nothing
    afterwards.
    """
    age = t - flow.arrival_time
    if 0.0 <= age < 2.0 * tau:
        return min(r_init * 2.0 * tau, flow.size) / (2.0 * tau)
    return 0.0


def update_rule(params: CcParams, class_capacity_lagged: float,
                uncontrolled_rate_lagged: float, queue_lagged: float,
                n_controlled_lagged: int, tau: float) -> float:
    """Per-flow rate commanded to every controlled flow of a class.

    Inputs carry their transport lags already applied: capacity and queue
    as of t - tau, uncontrolled rate and controlled count as of t - 2*tau.
    """
    if n_controlled_lagged < 1:
        raise ConfigError("update rule needs at least one controlled flow")
    excess_queue = max(0.0, queue_lagged - params.queue_threshold)
    rate = (
        params.u_target * class_capacity_lagged
        - params.beta * uncontrolled_rate_lagged
        - excess_queue / (2.0 * tau)
    )
    return rate / n_controlled_lagged


def ideal_rate(flow: FlowCcState, t: float, tau: float, params: CcParams,
               rule_value: Optional[float]) -> float:
    """Target rate before smoothing: r_init during the blind RTT, then the
    (non-negative) rule value."""
    if t - flow.arrival_time <= 2.0 * tau:
        return params.r_init
    if rule_value is None:
        # no controlled flows were visible at the lagged horizon; hold
        return flow.rho
    return max(0.0, rule_value)


def smooth_rate(rho: float, target: float, dt: float, eta: float, tau: float,
                r_init: float) -> float:
    """One explicit-Euler step of the first-order rate filter.

    dt must not exceed the filter time constant eta*tau or the update is
    numerically unstable.
    """
    if dt > eta * tau:
        raise ConfigError("dt must be <= eta * tau for stable smoothing")
    rho = rho + dt * (target - rho) / (eta * tau)
    return min(max(rho, 0.0), r_init)


def class_capacity(weights: WeightAllocation, active: Iterable[int], k: int,
                   capacity: float) -> float:
    """Capacity class k can count on: its weight share among the classes
    currently active at the switch (itself always included)."""
    w = weights.normalized()
    members = set(active) | {k}
    denom = sum(w[i] for i in members)
    return w[k] * capacity / denom


# --------------------------------------------------------------------------
# per-class signals


@dataclass
class ClassSignals:
    """Per-class signal vector sampled at one step boundary."""

    uncontrolled_rate: np.ndarray  # bytes/ns per class
    queue: np.ndarray  # bytes per class
    n_controlled: np.ndarray  # int per class
    active: np.ndarray  # bool per class


def class_signals(flows: Iterable[FlowCcState], queue_lengths: np.ndarray,
                  drained_prev: np.ndarray, t: float, tau: float,
                  r_init: float) -> ClassSignals:
    """Reference signal computation over explicit flow objects.

    The engine computes the same quantities incrementally; this form is
    the readable definition used by the unit tests.
    """
    n_classes = len(queue_lengths)
    r_u = np.zeros(n_classes)
    n_ctl = np.zeros(n_classes, dtype=np.int64)
    for f in flows:
        r_u[f.class_id] += uncontrolled_rate_of_flow(f, t, tau, r_init)
        if t - f.arrival_time >= 2.0 * tau and f.unsent > 0:
            n_ctl[f.class_id] += 1
    active = (np.asarray(queue_lengths) > 0) | (np.asarray(drained_prev) > 0)
    return ClassSignals(uncontrolled_rate=r_u, queue=np.asarray(queue_lengths, dtype=float),
                        n_controlled=n_ctl, active=active)


class SignalHistory:
    """Fixed-depth ring of per-class signals addressed by absolute step.

    Lookups at steps that were never recorded (before the run started, or
    skipped while the system was empty) return zeros / inactive, which is
    exactly the signal an idle system would have produced.
    """

    def __init__(self, n_classes: int, depth: int):
        if depth < 1:
            raise ConfigError("history depth must be >= 1")
        self.n_classes = n_classes
        self.depth = depth
        self._tags = np.full(depth, -1, dtype=np.int64)
        self._r_u = np.zeros((depth, n_classes))
        self._queue = np.zeros((depth, n_classes))
        self._n_ctl = np.zeros((depth, n_classes), dtype=np.int64)
        self._active = np.zeros((depth, n_classes), dtype=bool)

    def record(self, step: int, signals: ClassSignals) -> None:
        slot = step % self.depth
        self._tags[slot] = step
        self._r_u[slot] = signals.uncontrolled_rate
        self._queue[slot] = signals.queue
        self._n_ctl[slot] = signals.n_controlled
        self._active[slot] = signals.active

    def lookup(self, step: int) -> ClassSignals:
        slot = step % self.depth
        if step < 0 or self._tags[slot] != step:
            return ClassSignals(
                uncontrolled_rate=np.zeros(self.n_classes),
                queue=np.zeros(self.n_classes),
                n_controlled=np.zeros(self.n_classes, dtype=np.int64),
                active=np.zeros(self.n_classes, dtype=bool),
            )
        return ClassSignals(
            uncontrolled_rate=self._r_u[slot].copy(),
            queue=self._queue[slot].copy(),
            n_controlled=self._n_ctl[slot].copy(),
            active=self._active[slot].copy(),
        )
