"""Flow registry and per-flow EWMA throughput estimation.

Byte counters arrive every sample period via :meth:`ThroughputEstimator.ingest_counter`.
At each epoch boundary :meth:`ThroughputEstimator.update_epoch` folds the bytes seen
since the previous boundary into the smoothed estimate

    x_f <- delta * x_f + (1 - delta) * x_inst
"""
from dataclasses import dataclass
import logging
import warnings

from ._validation import check_positive
from .exceptions import (CounterResetWarning, ParameterError, RegistrationError,
                         UnknownFlowWarning)

__all__ = ["EstimatorConfig", "FlowRecord", "ThroughputEstimator"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    delta: float = 0.0
    sample_period: float = 3.0
    idle_timeout: float = None
    epoch: float = 15.0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ParameterError(f"delta must lie in [0, 1], got {self.delta}")
        check_positive(self.sample_period, "sample_period")
        check_positive(self.epoch, "epoch")
        if self.sample_period > self.epoch:
            raise ParameterError("sample_period must not exceed the epoch")
        if self.idle_timeout is None:
            object.__setattr__(self, "idle_timeout", 2.0 * self.sample_period)
        check_positive(self.idle_timeout, "idle_timeout")


@dataclass
class FlowRecord:
    flow_id: object
    class_id: object
    registered_at: float
    ewma_throughput: float = 0.0
    cumulative_bytes: float = 0.0
    last_counter_time: float = 0.0
    last_activity_time: float = 0.0
    window_bytes: float = 0.0
    window_start: float = 0.0
    last_instantaneous: float = 0.0
    epochs_measured: int = 0

    def is_active(self, now, idle_timeout):
        return now - self.last_activity_time <= idle_timeout


class ThroughputEstimator:
    """Owns the flow records; all mutating calls come from one thread."""

    def __init__(self, config=None):
        self.config = config or EstimatorConfig()
        self._flows = {}
        self._last_epoch = None

    def __contains__(self, flow_id):
        return flow_id in self._flows

    def __len__(self):
        return len(self._flows)

    def record(self, flow_id):
        return self._flows[flow_id]

    def register_flow(self, flow_id, class_id, now, initial_bytes=0.0):
        if flow_id in self._flows:
            raise RegistrationError(f"flow {flow_id!r} is already registered")
        rec = FlowRecord(flow_id, class_id, registered_at=now,
                         cumulative_bytes=float(initial_bytes),
                         last_counter_time=now, last_activity_time=now,
                         window_start=now)
        self._flows[flow_id] = rec
        return rec

    def deregister_flow(self, flow_id):
        if self._flows.pop(flow_id, None) is None:
            warnings.warn(f"deregister of unknown flow {flow_id!r}", UnknownFlowWarning,
                          stacklevel=2)

    def ingest_counter(self, flow_id, cumulative_bytes, now):
        """Record a cumulative byte count; returns the rate since the last one."""
        rec = self._flows[flow_id]
        elapsed = now - rec.last_counter_time
        if elapsed <= 0:
            raise ParameterError(
                f"flow {flow_id!r}: counter time {now} is not after {rec.last_counter_time}")
        delta_bytes = cumulative_bytes - rec.cumulative_bytes
        if delta_bytes < 0:
            warnings.warn(f"flow {flow_id!r}: byte counter went backwards; treating as reset",
                          CounterResetWarning, stacklevel=2)
            delta_bytes = cumulative_bytes
        rec.cumulative_bytes = cumulative_bytes
        rec.last_counter_time = now
        rec.window_bytes += delta_bytes
        if delta_bytes > 0:
            rec.last_activity_time = now
        rec.last_instantaneous = 8.0 * delta_bytes / elapsed
        return rec.last_instantaneous

    def update_epoch(self, now):
        """Fold the finished window into each active flow's estimate."""
        delta = self.config.delta
        out = {}
        for fid, rec in self._flows.items():
            span = now - rec.window_start
            if rec.is_active(now, self.config.idle_timeout) and span > 0:
                inst = 8.0 * rec.window_bytes / span
                rec.ewma_throughput = delta * rec.ewma_throughput + (1.0 - delta) * inst
                # A flow registered mid-window has not yet seen a whole epoch.
                if rec.registered_at <= now - self.config.epoch * (1 - 1e-9):
                    rec.epochs_measured += 1
                out[fid] = rec.ewma_throughput
            rec.window_bytes = 0.0
            rec.window_start = now
        self._last_epoch = now
        return out

    def measured_estimates(self, now):
        """Estimates of active flows that have at least one full epoch of data."""
        return {fid: rec.ewma_throughput for fid, rec in self._flows.items()
                if rec.epochs_measured > 0 and rec.is_active(now, self.config.idle_timeout)}

    def active_flows(self, now):
        """Active flow ids grouped by class, in registration order."""
        groups = {}
        for fid, rec in self._flows.items():
            if rec.is_active(now, self.config.idle_timeout):
                groups.setdefault(rec.class_id, []).append(fid)
        return groups

    def active_counts(self, now):
        return {cid: len(fids) for cid, fids in self.active_flows(now).items()}
