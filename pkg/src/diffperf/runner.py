"""Coupled experiment loop and run reports.

One tick of the loop advances the link model.  Every ``client_step``
seconds the DASH clients consume the bytes delivered to them, arrivals and
departures are applied, and demand ceilings are refreshed.  Every sample
period the byte counters feed the estimator; every epoch the controller
emits a new enforcement plan.
"""
from dataclasses import dataclass, field
import csv
import json
import logging
import math
import os
from collections import Counter

import numpy as np

from .controller import admit_flow, control_epoch, null_plan
from .dash import DashClientState, advance, demand_cap, qoe, sample_rtts, spawn_arrivals, Arrival
from .exceptions import AccountingError, SimulationAbort, ValidationError
from .netsim import FlowPathConfig, World
from .stats_collector import ThroughputEstimator

__all__ = ["ClientSummary", "RunReport", "run_scenario", "planned_arrivals", "jain_index",
           "write_report"]

log = logging.getLogger(__name__)

EPOCH_HEADER = ("epoch", "class_id", "group_id", "tier", "n_flows", "rate_bps")
LINK_HEADER = ("t", "queue_bytes", "drops_bytes", "utilization")
CLIENT_HEADER = ("flow_id", "class_id", "qoe", "t_stall_s", "t_startup_s", "mean_bitrate_bps",
                 "switches")


def jain_index(values):
    x = np.asarray(list(values), dtype=float)
    if x.size == 0 or not np.any(x):
        return float("nan")
    return float(x.sum() ** 2 / (x.size * np.square(x).sum()))


@dataclass
class ClientSummary:
    flow_id: str
    class_id: str
    qoe: float
    t_stall_s: float
    t_startup_s: float
    mean_bitrate_bps: float
    switches: int
    base_rtt: float
    throughput_bps: float
    tier: str
    truncated: bool
    arrival: float
    departure: float

    def row(self):
        q = "" if math.isnan(self.qoe) else repr(self.qoe)
        return (self.flow_id, self.class_id, q, repr(self.t_stall_s), repr(self.t_startup_s),
                repr(self.mean_bitrate_bps), self.switches)


@dataclass
class RunReport:
    scenario: object
    epochs: list = field(default_factory=list)
    link: dict = field(default_factory=dict)  # column name -> np.ndarray
    clients: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    active_counts: list = field(default_factory=list)  # (epoch, t, {class: n})
    active_sets: list = field(default_factory=list)  # (epoch, t, frozenset of flow ids)
    plan_totals: list = field(default_factory=list)  # (epoch, t, total rate)
    departures: list = field(default_factory=list)  # (t, flow_id)
    pauses: list = field(default_factory=list)  # (flow_id, start, end)
    meter_log: dict = field(default_factory=dict)  # group_id -> list of (t, passed bytes)

    def client(self, flow_id):
        for c in self.clients:
            if c.flow_id == flow_id:
                return c
        raise KeyError(flow_id)


def planned_arrivals(cfg, seed=None):
    """Every client the scenario will start, in arrival order.

    Raises ValidationError when the link tick exceeds a quarter of the
    smallest drawn base RTT.
    """
    arrivals = _initial_arrivals(cfg, np.random.default_rng(cfg.seed if seed is None else seed))
    arrivals = [a for a in arrivals if a.time < cfg.duration]
    if arrivals:
        shortest = min(a.path.base_rtt for a in arrivals)
        if cfg.link.tick > shortest / 4.0:
            raise ValidationError("link.tick", f"{cfg.link.tick} exceeds a quarter of the "
                                  f"smallest base RTT {shortest:.6f}")
    return arrivals


def _initial_arrivals(cfg, rng):
    w = cfg.workload
    out = []
    if w.population is not None:
        rtt = w.population["rtt"]
        order = [(cid, n) for cid, n in w.population["counts"].items()]
        total = sum(n for _, n in order)
        if rtt["kind"] == "fixed":
            rtts = np.full(total, float(rtt["value"]))
        else:
            rtts, _ = sample_rtts(rng, total, deterministic_split=rtt["kind"] == "split")
        k = 0
        for cid, n in order:
            for _ in range(n):
                out.append(Arrival(0.0, cid, FlowPathConfig(f"f{k}", float(rtts[k]), cfg.cc_model)))
                k += 1
    if w.arrivals is not None:
        a = w.arrivals
        out.extend(spawn_arrivals(a["rate"], a["ratio"], horizon=a.get("horizon", math.inf),
                                  seed=int(rng.integers(2**31)), count=a.get("count"),
                                  assignment=a.get("assignment", "random"),
                                  cc_model=cfg.cc_model, flow_prefix="c"))
    out.sort(key=lambda a: a.time)
    return out


class _Loop:
    def __init__(self, cfg, seed, record_meters=False):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.world = World(cfg.link)
        self.est = ThroughputEstimator(cfg.estimator)
        self.clients = {}
        self.class_of = {}
        self.arrival_time = {}
        self.base_rtt = {}
        self.departed = {}
        self.delivered_total = {}
        self.tier_votes = {}
        self.plan = null_plan((), cfg.link.capacity)
        self.epoch_index = 0
        self.replans = 0
        self.report = RunReport(cfg)
        self.record_meters = record_meters
        self.pause_start = {}

    # -- plan maintenance ---------------------------------------------
    def _replan(self, now):
        cfg = self.cfg
        if cfg.is_baseline:
            self.plan = null_plan(self.world.flow_ids, cfg.link.capacity, self.epoch_index)
            return
        active = self.est.active_flows(now)
        for fid in self.world.flow_ids:
            if self.world.demand(fid) > 0 and fid not in active.get(self.class_of[fid], ()):
                active.setdefault(self.class_of[fid], []).append(fid)
        self.plan = control_epoch(cfg.controller, active, self.est.measured_estimates(now), now,
                                  self.epoch_index)

    def _admit(self, fid, now):
        if self.cfg.is_baseline:
            return False
        plan = admit_flow(self.plan, fid, self.class_of[fid])
        if plan is None:
            return True
        self.plan = plan
        return False

    # -- client boundary ----------------------------------------------
    def _client_boundary(self, now, acc, client_dt, arrivals):
        world, cfg = self.world, self.cfg
        abr = cfg.workload.abr
        if client_dt > 0:
            for i, fid in enumerate(world.flow_ids):
                c = self.clients[fid]
                was_paused = c.paused
                advance(c, float(acc[i]), client_dt, abr)
                if c.paused and not was_paused:
                    self.pause_start[fid] = now
                elif was_paused and not c.paused:
                    self.report.pauses.append((fid, self.pause_start.pop(fid), now))
        membership_changed = False
        for fid in [f for f in world.flow_ids if self.clients[f].done]:
            self.delivered_total[fid] = world.counters()[fid]
            world.remove_flow(fid)
            self.est.deregister_flow(fid)
            self.departed[fid] = now
            self.report.departures.append((now, fid))
            membership_changed = True
        need_replan = False
        while arrivals and arrivals[-1].time <= now + 1e-9:
            a = arrivals.pop()
            fid = a.path.flow_id
            c = DashClientState(fid, cfg.workload.video, a.class_id)
            self.clients[fid] = c
            self.class_of[fid] = a.class_id
            self.arrival_time[fid] = now
            self.base_rtt[fid] = a.path.base_rtt
            world.add_flow(FlowPathConfig(fid, a.path.base_rtt, cfg.cc_model, demand_cap(c)))
            self.est.register_flow(fid, a.class_id, now)
            membership_changed = True
        caps = [demand_cap(self.clients[f]) for f in world.flow_ids]
        for fid, cap in zip(world.flow_ids, caps):
            world.set_demand(fid, cap)
            if cap > 0 and not cfg.is_baseline and self.plan.group_of(fid) is None:
                need_replan |= self._admit(fid, now)
        if need_replan or (membership_changed and cfg.is_baseline):
            if not cfg.is_baseline:
                self.replans += 1
            self._replan(now)

    def _epoch(self, now):
        self.est.update_epoch(now)
        self.epoch_index += 1
        self._replan(now)
        rep = self.report
        rep.epochs.extend(self.plan.records())
        rep.plan_totals.append((self.epoch_index, now, self.plan.total_rate()))
        active = self.est.active_flows(now)
        rep.active_counts.append((self.epoch_index, now, {c: len(v) for c, v in active.items()}))
        rep.active_sets.append((self.epoch_index, now,
                                frozenset(f for v in active.values() for f in v)))
        for g in self.plan.groups:
            for f in g.members:
                self.tier_votes.setdefault(f, Counter())[g.tier] += 1

    # -- main loop ----------------------------------------------------
    def run(self):
        cfg = self.cfg
        tick = cfg.link.tick
        n_ticks = int(round(cfg.duration / tick))
        per_client = max(1, int(round(cfg.client_step / tick)))
        per_sample = max(1, int(round(cfg.estimator.sample_period / tick)))
        per_epoch = max(1, int(round(cfg.estimator.epoch / tick)))
        arrivals = planned_arrivals(cfg, self.seed)[::-1]

        buf = float(cfg.link.buffer_limit)
        link_t = np.empty(n_ticks)
        link_q = np.empty(n_ticks)
        link_d = np.empty(n_ticks)
        link_u = np.empty(n_ticks)
        acc = np.zeros(0)
        last_client = 0
        worst_err, peak_q = 0.0, 0.0
        world = self.world
        for k in range(n_ticks):
            now = k * tick
            if k % per_client == 0:
                self._client_boundary(now, acc, (k - last_client) * tick, arrivals)
                acc = np.zeros(len(world.flow_ids))
                last_client = k
            if k and k % per_sample == 0:
                counters = world.counters()
                for fid, b in counters.items():
                    if self.est.record(fid).last_counter_time < now:  # skip just-registered
                        self.est.ingest_counter(fid, b, now)
            if k and k % per_epoch == 0:
                self._epoch(now)
            delivered, rec = world.advance(self.plan)
            acc += delivered
            scale = cfg.link.capacity * tick / 8.0
            err = rec.arrivals_bytes - rec.delivered_bytes - rec.queue_delta - rec.drops_bytes
            worst_err = max(worst_err, abs(err))
            peak_q = max(peak_q, rec.queue_bytes)
            if abs(err) > 1e-9 * scale:
                raise AccountingError(f"tick {k}: byte conservation off by {err}")
            if not -1e-9 <= rec.queue_bytes <= buf * (1 + 1e-12) + 1e-9:
                raise AccountingError(f"tick {k}: queue {rec.queue_bytes} outside [0, {buf}]")
            link_t[k], link_q[k], link_d[k], link_u[k] = (rec.t, rec.queue_bytes,
                                                          rec.drops_bytes, rec.utilization)
            if self.record_meters and self.plan.metered:
                for g in self.plan.groups:
                    idx = [world._index[f] for f in g.members if f in world]
                    self.report.meter_log.setdefault(g.group_id, []).append(
                        (rec.t, float(delivered[idx].sum()) if idx else 0.0))
        end = n_ticks * tick
        if n_ticks:
            self._client_boundary(end, acc, (n_ticks - last_client) * tick, [])
        self.report.link = dict(t=link_t, queue_bytes=link_q, drops_bytes=link_d,
                                utilization=link_u)
        self._finish(end)
        self.report.summary.update(max_conservation_error_bytes=worst_err, peak_queue_bytes=peak_q,
                                   buffer_limit_bytes=buf)
        return self.report

    def _finish(self, end):
        cfg = self.cfg
        counters = self.world.counters()
        rep = self.report
        for fid, c in self.clients.items():
            delivered = self.delivered_total.get(fid, counters.get(fid, 0.0))
            dep = self.departed.get(fid, end)
            life = dep - self.arrival_time[fid]
            thr = 8.0 * delivered / life if life > 0 else 0.0
            trace = c.trace()
            score = qoe(trace) if trace.bitrates else float("nan")
            br = c.chosen_bitrates
            votes = self.tier_votes.get(fid)
            tier = votes.most_common(1)[0][0] if votes else "whole"
            rep.clients.append(ClientSummary(
                fid, c.class_id, score, c.stall_time, c.startup_delay,
                float(np.mean(br)) if br else 0.0,
                sum(1 for a, b in zip(br, br[1:]) if a != b),
                self.base_rtt[fid], thr, tier, trace.truncated, self.arrival_time[fid], dep))
        rep.summary = _summary(cfg, rep, self.seed, self.replans)


def _mean(xs):
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else float("nan")


def _summary(cfg, rep, seed, replans):
    by_class = {}
    by_tier = {}
    for c in rep.clients:
        by_class.setdefault(c.class_id, []).append(c)
        by_tier.setdefault(f"{c.class_id}:{c.tier}", []).append(c)
    duration = cfg.duration
    delivered = float(np.sum(rep.link["utilization"])) * cfg.link.capacity * cfg.link.tick
    return dict(
        name=cfg.name,
        seed=seed,
        duration=duration,
        baseline=cfg.is_baseline,
        controller=cfg.controller if cfg.is_baseline else "diffperf",
        n_clients=len(rep.clients),
        n_truncated=sum(c.truncated for c in rep.clients),
        n_epochs=len(rep.plan_totals),
        off_epoch_replans=replans,
        aggregate_throughput_bps=delivered / duration if duration else 0.0,
        mean_utilization=float(np.mean(rep.link["utilization"])) if duration else 0.0,
        total_drops_bytes=float(np.sum(rep.link["drops_bytes"])),
        mean_qoe=_mean(c.qoe for c in rep.clients),
        mean_stall_s=_mean(c.t_stall_s for c in rep.clients),
        mean_startup_s=_mean(c.t_startup_s for c in rep.clients),
        jain_index=jain_index(c.throughput_bps for c in rep.clients),
        mean_qoe_by_class={k: _mean(c.qoe for c in v) for k, v in by_class.items()},
        mean_throughput_by_class={k: _mean(c.throughput_bps for c in v)
                                  for k, v in by_class.items()},
        mean_qoe_by_subclass={k: _mean(c.qoe for c in v) for k, v in by_tier.items()},
        n_by_subclass={k: len(v) for k, v in by_tier.items()},
    )


def run_scenario(cfg, seed=None, record_meters=False):
    """Run one scenario and return its :class:`RunReport`."""
    loop = _Loop(cfg, seed, record_meters)
    try:
        return loop.run()
    except (FloatingPointError, OverflowError) as exc:
        raise SimulationAbort(loop.world.tick_index, str(exc)) from exc


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "epochs.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_HEADER)
        w.writerows(tuple(_fmt(v) for v in row) for row in report.epochs)
    with open(os.path.join(out_dir, "link.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LINK_HEADER)
        cols = [report.link[h] for h in LINK_HEADER]
        w.writerows(zip(*(map(repr, c.tolist()) for c in cols)))
    with open(os.path.join(out_dir, "clients.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CLIENT_HEADER)
        w.writerows(c.row() for c in report.clients)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(report.summary, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
