"""Discrete-time fluid model of one bottleneck link.

Per tick, every meter group turns its aggregate congestion window into an
offered rate and splits it among members by weighted max-min filling with
RTT-biased weights ``(base_rtt + queue_delay) ** -kappa``.  A token bucket
per group clips the offered bytes (ingress metering), the survivors enter a
shared FIFO buffer in front of the link, and overflow is dropped pro rata.
Losses feed back into the group windows, which is what makes buffer size
and RTT mix matter.

The loss/growth constants in :data:`CC_PROFILES` and the exponent table in
:func:`kappa_of` are calibration constants for directional behaviour, not
measurements of real TCP stacks.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .exceptions import ParameterError, SimulationAbort

__all__ = [
    "CELL_BYTES",
    "MSS_BYTES",
    "CC_PROFILES",
    "CCProfile",
    "LinkConfig",
    "FlowPathConfig",
    "MeterState",
    "TickRecord",
    "World",
    "kappa_of",
    "equilibrium_shares",
    "step",
    "counters",
]

CELL_BYTES = 80
MSS_BYTES = 1500
INITIAL_WINDOW = 10 * MSS_BYTES
_MIN_WINDOW = 2 * MSS_BYTES


@dataclass(frozen=True)
class CCProfile:
    decrease: float  # window factor applied to a flow's share on a loss event
    probe_gain: float  # per-RTT multiplicative growth; 0 means additive 1 MSS/RTT
    inflight_cap: float  # max window in units of (estimated bw x base RTT); inf = none


CC_PROFILES = {
    "cubic-like": CCProfile(decrease=0.7, probe_gain=0.0, inflight_cap=math.inf),
    "bbr-like": CCProfile(decrease=0.8, probe_gain=0.25, inflight_cap=2.0),
}


@dataclass(frozen=True)
class LinkConfig:
    capacity: float
    buffer_bytes: float
    tick: float

    def __post_init__(self):
        if not self.capacity > 0:
            raise ParameterError("link capacity must be positive")
        if not self.buffer_bytes >= 0:
            raise ParameterError("buffer_bytes must be non-negative")
        if not self.tick > 0:
            raise ParameterError("tick must be positive")

    @property
    def buffer_limit(self):
        """Usable buffer after rounding down to whole 80-byte cells."""
        return (int(self.buffer_bytes) // CELL_BYTES) * CELL_BYTES


@dataclass(frozen=True)
class FlowPathConfig:
    flow_id: object
    base_rtt: float
    cc_model: str = "cubic-like"
    demand_cap: float = math.inf

    def __post_init__(self):
        if not self.base_rtt > 0:
            raise ParameterError(f"flow {self.flow_id!r}: base_rtt must be positive")
        if not self.demand_cap > 0:
            raise ParameterError(f"flow {self.flow_id!r}: demand_cap must be positive")
        if self.cc_model not in CC_PROFILES:
            raise ParameterError(f"unknown cc_model {self.cc_model!r}")


@dataclass
class MeterState:
    group_id: str
    rate: float
    burst_bytes: float
    tokens: float
    member_flow_ids: frozenset = frozenset()


@dataclass(frozen=True)
class TickRecord:
    t: float
    queue_bytes: float
    arrivals_bytes: float
    delivered_bytes: float
    drops_bytes: float
    meter_drops_bytes: float
    flushed_bytes: float
    queue_delta: float
    utilization: float


def kappa_of(cc_model, buffer_bytes, capacity, mean_rtt):
    """RTT-bias exponent for a congestion-control family and buffer depth."""
    if cc_model == "cubic-like":
        return 1.0
    if cc_model != "bbr-like":
        raise ParameterError(f"unknown cc_model {cc_model!r}")
    bdp = capacity * mean_rtt / 8.0
    ratio = buffer_bytes / bdp
    if ratio <= 0.5:
        return 0.3
    if ratio >= 2.0:
        return 0.8
    return 0.3 + 0.5 * (ratio - 0.5) / 1.5


def _fill(weights, caps, capacity):
    """Weighted max-min progressive filling over numpy arrays."""
    n = weights.shape[0]
    out = np.zeros(n)
    if n == 0 or capacity <= 0:
        return out
    if np.all(np.isfinite(caps)) and math.fsum(caps) <= capacity:
        return caps.astype(float).copy()
    order = np.argsort(caps / weights, kind="stable")
    remaining, wsum = float(capacity), float(weights.sum())
    for pos, i in enumerate(order):
        level = remaining / wsum
        if caps[i] <= level * weights[i]:
            out[i] = caps[i]
            remaining -= caps[i]
            wsum -= weights[i]
            if wsum <= 0:
                break
        else:
            rest = order[pos:]
            out[rest] = weights[rest] * (remaining / weights[rest].sum())
            break
    return out


def equilibrium_shares(flows, group_capacity):
    """Weighted max-min split of ``group_capacity``.

    ``flows`` is a sequence of ``(flow_id, weight, demand_cap)``; returns a
    dict flow_id -> rate summing to ``min(group_capacity, sum of caps)``.
    """
    flows = list(flows)
    if not flows:
        return {}
    ids = [f[0] for f in flows]
    weights = np.array([f[1] for f in flows], dtype=float)
    if np.any(weights <= 0):
        raise ParameterError("share weights must be positive")
    caps = np.array([f[2] for f in flows], dtype=float)
    rates = _fill(weights, caps, max(float(group_capacity), 0.0))
    return dict(zip(ids, rates.tolist()))


_UNASSIGNED = "__unassigned__"


class World:
    """Mutable simulation state: link, flows, queue, meters, clock."""

    def __init__(self, link, flows=()):
        self.link = link
        self.time = 0.0
        self.tick_index = 0
        self.flow_ids = []
        self._index = {}
        self._arrays = {name: np.zeros(0) for name in (
            "base_rtt", "kappa", "decrease", "probe", "inflight", "demand",
            "queue", "delivered", "cwnd", "debt", "hold_until", "offered", "slow_start")}
        self._cc = []
        self._meters = {}
        self._plan_key = None
        self._flushed = 0.0
        self.last_arrivals = np.zeros(0)
        for f in flows:
            self.add_flow(f)

    # -- flow management -------------------------------------------------
    def _arr(self, name):
        return self._arrays[name]

    def add_flow(self, cfg):
        if cfg.flow_id in self._index:
            raise ParameterError(f"flow {cfg.flow_id!r} already in the world")
        if self.link.tick > cfg.base_rtt / 4.0:
            raise ParameterError(
                f"tick {self.link.tick} exceeds a quarter of flow {cfg.flow_id!r}'s "
                f"base RTT {cfg.base_rtt}")
        prof = CC_PROFILES[cfg.cc_model]
        values = dict(base_rtt=cfg.base_rtt, kappa=1.0, decrease=prof.decrease,
                      probe=prof.probe_gain, inflight=prof.inflight_cap,
                      demand=cfg.demand_cap, queue=0.0, delivered=0.0,
                      cwnd=INITIAL_WINDOW, debt=0.0, hold_until=-math.inf, offered=0.0,
                      slow_start=1.0)
        for name, v in values.items():
            self._arrays[name] = np.append(self._arrays[name], v)
        self._index[cfg.flow_id] = len(self.flow_ids)
        self.flow_ids.append(cfg.flow_id)
        self._cc.append(cfg.cc_model)
        self._refresh()

    def remove_flow(self, flow_id):
        i = self._index.pop(flow_id)
        self._flushed += float(self._arrays["queue"][i])
        for name in self._arrays:
            self._arrays[name] = np.delete(self._arrays[name], i)
        del self.flow_ids[i]
        del self._cc[i]
        self._index = {f: k for k, f in enumerate(self.flow_ids)}
        self._refresh()

    def _refresh(self):
        self._plan_key = None
        if not self.flow_ids:
            return
        mean_rtt = float(self._arrays["base_rtt"].mean())
        self._arrays["kappa"] = np.array([
            kappa_of(cc, self.link.buffer_limit, self.link.capacity, mean_rtt)
            for cc in self._cc])

    def __contains__(self, flow_id):
        return flow_id in self._index

    def set_demand(self, flow_id, cap):
        self._arrays["demand"][self._index[flow_id]] = cap

    def demand(self, flow_id):
        return float(self._arrays["demand"][self._index[flow_id]])

    @property
    def queue_bytes(self):
        return float(self._arrays["queue"].sum())

    @property
    def queue_delay(self):
        return self.queue_bytes * 8.0 / self.link.capacity

    def counters(self):
        return dict(zip(self.flow_ids, self._arrays["delivered"].tolist()))

    def kappa(self, flow_id):
        return float(self._arrays["kappa"][self._index[flow_id]])

    def meter(self, group_id):
        return self._meters[group_id]

    # -- plan binding ----------------------------------------------------
    def _bind(self, plan):
        key = (id(plan), len(self.flow_ids), tuple(self.flow_ids[-1:]))
        if key == self._plan_key:
            return
        n = len(self.flow_ids)
        gid_of = np.full(n, -1, dtype=int)
        names, rates, bursts, metered = [], [], [], []
        groups = plan.groups if plan is not None else ()
        for g in groups:
            k = len(names)
            names.append(g.group_id)
            rates.append(g.rate_limit)
            bursts.append(float(g.burst_bytes))
            metered.append(bool(plan.metered))
            for f in g.members:
                i = self._index.get(f)
                if i is not None:
                    gid_of[i] = k
        if np.any(gid_of < 0):
            gid_of[gid_of < 0] = len(names)
            names.append(_UNASSIGNED)
            rates.append(self.link.capacity)
            bursts.append(math.inf)
            metered.append(False)
        meters = {}
        for name, rate, burst, m in zip(names, rates, bursts, metered):
            old = self._meters.get(name)
            tokens = burst if old is None or not m else min(old.tokens, burst)
            members = frozenset(self.flow_ids[i] for i in np.flatnonzero(gid_of == names.index(name)))
            meters[name] = MeterState(name, rate, burst, tokens, members)
        self._meters = meters
        self._g_names = names
        self._g_of = gid_of
        self._g_rate = np.array(rates, dtype=float)
        self._g_burst = np.array(bursts, dtype=float)
        self._g_metered = np.array(metered, dtype=bool)
        self._g_tokens = np.array([meters[nm].tokens for nm in names], dtype=float)
        bbr = np.array([cc == "bbr-like" for cc in self._cc], dtype=float)
        cnt = np.bincount(gid_of, minlength=len(names)).astype(float)
        self._g_bbr = np.bincount(gid_of, bbr, minlength=len(names)) > 0.5 * cnt
        self._plan_key = key

    # -- dynamics --------------------------------------------------------
    def advance(self, plan, dt=None):
        """Advance one tick under ``plan``; returns ``(delivered, TickRecord)``.

        ``delivered`` is an array aligned with :attr:`flow_ids`.
        """
        dt = self.link.tick if dt is None else dt
        now = self.time
        C = self.link.capacity
        A = self._arrays
        n = len(self.flow_ids)
        flushed, self._flushed = self._flushed, 0.0
        if n == 0:
            self.time += dt
            self.tick_index += 1
            rec = TickRecord(self.time, 0.0, 0.0, 0.0, 0.0, 0.0, flushed, 0.0, 0.0)
            return np.zeros(0), rec

        self._bind(plan)
        G = len(self._g_names)
        g = self._g_of
        active = A["demand"] > 0
        act = active.astype(float)

        q_before = A["queue"].copy()
        q_total = float(q_before.sum())
        rtt = A["base_rtt"] + q_total * 8.0 / C
        phi = rtt ** (-A["kappa"])

        counts = np.bincount(g, act, minlength=G)
        has = counts > 0
        safe_counts = np.where(has, counts, 1.0)
        W = np.bincount(g, A["cwnd"] * act, minlength=G)
        rtt_g = np.bincount(g, rtt * act, minlength=G) / safe_counts
        caps = np.where(active, A["demand"], 0.0)
        cap_g = np.bincount(g, np.minimum(caps, 1e300), minlength=G)
        agg = np.where(has, np.minimum(W * 8.0 / np.where(has, rtt_g, 1.0), cap_g), 0.0)

        phi_act = phi * act
        phi_g = np.bincount(g, phi_act, minlength=G)
        offered = agg[g] * phi_act / np.where(phi_g[g] > 0, phi_g[g], 1.0)
        over_cap = offered > caps * (1 + 1e-12)
        if np.any(over_cap):
            for k in np.unique(g[over_cap]):
                idx = np.flatnonzero((g == k) & active)
                offered[idx] = _fill(phi[idx], caps[idx], agg[k])

        offered_bytes = offered * dt / 8.0
        want_g = np.bincount(g, offered_bytes, minlength=G)
        tokens = np.where(self._g_metered,
                          np.minimum(self._g_burst, self._g_tokens + self._g_rate * dt / 8.0),
                          math.inf)
        pass_g = np.minimum(want_g, tokens)
        self._g_tokens = np.where(self._g_metered, tokens - pass_g, self._g_tokens)
        frac_g = np.where(want_g > 0, pass_g / np.where(want_g > 0, want_g, 1.0), 1.0)
        arrivals = offered_bytes * frac_g[g]
        meter_drop = offered_bytes - arrivals

        # Shared FIFO: drain pro rata to content, then drop the overflow of
        # this tick's arrivals pro rata.
        content = q_before + arrivals
        total_content = float(content.sum())
        drain = min(total_content, C * dt / 8.0)
        delivered = content * (drain / total_content) if total_content > 0 else np.zeros(n)
        remaining = total_content - drain
        total_arrivals = float(arrivals.sum())
        overflow = max(0.0, remaining - self.link.buffer_limit)
        drops = arrivals * (overflow / total_arrivals) if overflow > 0 else np.zeros(n)
        queue = np.maximum(content - delivered - drops, 0.0)
        A["queue"] = queue
        A["delivered"] = A["delivered"] + delivered

        # Congestion response: one loss event per RTT per flow.
        recovering = now < A["hold_until"]
        A["debt"] = np.where(recovering, 0.0, A["debt"] + meter_drop + drops)
        event = (A["debt"] >= MSS_BYTES) & active
        share = np.where(active, offered / np.where(agg[g] > 0, agg[g], 1.0), 0.0)
        flow_w = W[g] * share
        cut = np.bincount(g, np.where(event, (1.0 - A["decrease"]) * flow_w, 0.0), minlength=G)
        growing = active & ~recovering & ~event
        # Slow start doubles per RTT until the first loss; afterwards cubic-like
        # flows add one MSS per RTT and bbr-like flows probe multiplicatively.
        gain = np.where(A["slow_start"] > 0, 1.0, A["probe"])
        per_flow_growth = np.where(gain > 0, gain * flow_w, MSS_BYTES) * dt / rtt
        grow = np.bincount(g, np.where(growing, per_flow_growth, 0.0), minlength=G)
        W_new = W - cut + grow
        base_g = np.bincount(g, A["base_rtt"] * act, minlength=G) / safe_counts
        bw_g = np.where(self._g_metered, self._g_rate, C)
        inflight = np.where(self._g_bbr, CC_PROFILES["bbr-like"].inflight_cap * bw_g * base_g / 8.0,
                            math.inf)
        W_new = np.minimum(W_new, np.maximum(inflight, W - cut))
        W_new = np.minimum(W_new, cap_g * rtt_g / 8.0 + _MIN_WINDOW * counts)
        W_new = np.maximum(W_new, _MIN_WINDOW * counts)
        A["cwnd"] = np.where(active, W_new[g] * share, np.minimum(A["cwnd"], INITIAL_WINDOW))
        A["slow_start"] = np.where(event, 0.0, np.where(active, A["slow_start"], 1.0))
        A["hold_until"] = np.where(event, now + rtt, A["hold_until"])
        A["debt"] = np.where(event, 0.0, A["debt"])
        A["offered"] = offered
        self.last_arrivals = arrivals  # bytes admitted past the meters, per flow

        delivered_total = float(delivered.sum())
        q_after = float(queue.sum())
        self.time = now + dt
        self.tick_index += 1
        rec = TickRecord(
            t=self.time,
            queue_bytes=q_after,
            arrivals_bytes=total_arrivals,
            delivered_bytes=delivered_total,
            drops_bytes=float(drops.sum()),
            meter_drops_bytes=float(meter_drop.sum()),
            flushed_bytes=flushed,
            queue_delta=q_after - q_total,
            utilization=delivered_total / (C * dt / 8.0),
        )
        if not (math.isfinite(q_after) and math.isfinite(delivered_total)
                and np.all(np.isfinite(A["cwnd"]))):
            raise SimulationAbort(self.tick_index, "non-finite simulator state")
        for k, name in enumerate(self._g_names):
            self._meters[name].tokens = float(self._g_tokens[k])
        return delivered, rec


def step(world, plan, dt=None):
    """Advance ``world`` by one tick; returns flow_id -> delivered bytes."""
    delivered, _ = world.advance(plan, dt)
    return dict(zip(world.flow_ids, delivered.tolist()))


def counters(world):
    """Cumulative delivered bytes per flow."""
    return world.counters()
