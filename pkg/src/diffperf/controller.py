"""Per-epoch control loop: allocate, split, and emit meter rate limits."""
from dataclasses import dataclass, field, replace
import math

from ._validation import check_alpha, check_gamma, check_positive
from .inter_class import InterClassInput, ServiceClassSpec, allocate_closed_form
from .intra_class import allocate_subclasses, compute_stats, partition
from .exceptions import ConfigurationError, ParameterError

__all__ = [
    "MTU_BYTES",
    "MIN_GROUP_RATE",
    "ControllerConfig",
    "MeterGroup",
    "EnforcementPlan",
    "PlanDiff",
    "control_epoch",
    "admit_flow",
    "null_plan",
    "plan_diff",
]

MTU_BYTES = 1500
MIN_GROUP_RATE = 8_000.0
_KBPS = 1000.0


@dataclass(frozen=True)
class ControllerConfig:
    capacity: float
    classes: tuple
    alpha: float = 1.0
    beta: float = -0.25
    gamma: float = 0.5
    epoch: float = 15.0
    burst_bytes: int = 64_000

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(
            c if isinstance(c, ServiceClassSpec) else ServiceClassSpec(*c)
            for c in self.classes))
        check_positive(self.capacity, "capacity")
        check_alpha(self.alpha)
        check_gamma(self.gamma)
        check_positive(self.epoch, "epoch")
        if not math.isfinite(self.beta):
            raise ParameterError(f"beta must be finite, got {self.beta}")
        if self.burst_bytes < MTU_BYTES:
            raise ParameterError(f"burst_bytes must be at least one MTU ({MTU_BYTES})")
        if not self.classes:
            raise ConfigurationError("at least one service class is required")
        ids = [c.class_id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate class ids in {ids}")


@dataclass(frozen=True)
class MeterGroup:
    group_id: str
    class_id: object
    tier: str  # "lower" | "upper" | "whole"
    members: frozenset
    rate_limit: float
    burst_bytes: int


@dataclass(frozen=True)
class EnforcementPlan:
    epoch_index: int
    groups: tuple = ()
    class_shares: dict = field(default_factory=dict)
    metered: bool = True

    def __post_init__(self):
        seen = set()
        for g in self.groups:
            if seen & g.members:
                raise ConfigurationError(f"flows {sorted(seen & g.members)} appear in two groups")
            seen |= g.members

    @property
    def is_empty(self):
        return not self.groups

    def total_rate(self):
        return math.fsum(g.rate_limit for g in self.groups)

    def group(self, group_id):
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(group_id)

    def group_of(self, flow_id):
        for g in self.groups:
            if flow_id in g.members:
                return g
        return None

    def flows(self):
        return frozenset().union(*(g.members for g in self.groups)) if self.groups else frozenset()

    def records(self):
        """Rows for the epochs log: (epoch, class_id, group_id, tier, n_flows, rate_bps)."""
        return [(self.epoch_index, g.class_id, g.group_id, g.tier, len(g.members), g.rate_limit)
                for g in self.groups]


def null_plan(flow_ids, capacity, epoch_index=0, burst_bytes=MTU_BYTES):
    """Single unmetered group at link capacity: plain TCP sharing."""
    group = MeterGroup("all:whole", None, "whole", frozenset(flow_ids), float(capacity),
                       burst_bytes)
    return EnforcementPlan(epoch_index, (group,) if group.members else (), {}, metered=False)


def admit_flow(plan, flow_id, class_id):
    """Plan with ``flow_id`` added to its class's upper (or whole) group.

    Rates are unchanged until the next epoch.  Returns None when the class
    has no group in ``plan``; the caller must then build a fresh plan.
    """
    if plan.group_of(flow_id) is not None:
        return plan
    target = None
    for g in plan.groups:
        if g.class_id == class_id and g.tier in ("upper", "whole"):
            target = g
    if target is None:
        return None
    groups = tuple(replace(g, members=g.members | {flow_id}) if g is target else g
                   for g in plan.groups)
    return replace(plan, groups=groups)


def _round_rates(rates, total):
    """Floor to whole kbps, hand the residue to the largest group, then lift
    any group below the floor by borrowing pro rata from the others."""
    floored = [math.floor(r / _KBPS) * _KBPS for r in rates]
    biggest = max(range(len(rates)), key=lambda i: (rates[i], -i))
    floored[biggest] += total - math.fsum(floored)
    short = [i for i, r in enumerate(floored) if r < MIN_GROUP_RATE]
    if short and len(rates) * MIN_GROUP_RATE <= total:
        need = math.fsum(MIN_GROUP_RATE - floored[i] for i in short)
        donors = [i for i in range(len(rates)) if i not in short]
        spare = math.fsum(floored[i] - MIN_GROUP_RATE for i in donors)
        for i in short:
            floored[i] = MIN_GROUP_RATE
        for i in donors:
            floored[i] -= need * (floored[i] - MIN_GROUP_RATE) / spare
        floored[biggest] += total - math.fsum(floored)
    return floored


def control_epoch(config, active_flows, estimates, now=None, epoch_index=0):
    """Build the enforcement plan for the next epoch.

    ``active_flows`` maps class id to the active flow ids of that class (a
    plain count per class is accepted too, in which case flows are named
    ``"<class>/<i>"``).  ``estimates`` maps flow id to its smoothed
    throughput; active flows without an estimate are newcomers and ride in
    the upper group until they have been measured.
    """
    membership = {}
    for spec in config.classes:
        flows = active_flows.get(spec.class_id, ())
        if isinstance(flows, int):
            flows = [f"{spec.class_id}/{i}" for i in range(flows)]
        membership[spec.class_id] = list(flows)
    unknown = set(active_flows) - set(membership)
    if unknown:
        raise ConfigurationError(f"flows reported for unknown classes {sorted(map(str, unknown))}")

    if not any(membership.values()):
        return EnforcementPlan(epoch_index)

    inp = InterClassInput(tuple((spec, len(membership[spec.class_id]))
                                for spec in config.classes),
                          config.capacity, config.alpha)
    shares = allocate_closed_form(inp).shares

    pending = []  # (class_id, tier, members, rate)
    for spec in config.classes:
        cid = spec.class_id
        members = membership[cid]
        if not members:
            continue
        x_s = shares[cid]
        measured = [(f, estimates[f]) for f in members if f in estimates]
        newcomers = [f for f in members if f not in estimates]
        alloc, part = None, None
        if len(measured) >= 2:
            stats = compute_stats(measured)
            if not stats.degenerate:
                part = partition(measured, stats, config.beta)
                # Measured flows get their proportional slice of X_s so the
                # per-flow equal share stays X_s / n_s with newcomers present.
                x_measured = x_s * len(measured) / len(members)
                alloc = allocate_subclasses(part, measured, stats, x_measured, config.gamma)
        if alloc is not None and alloc.split:
            upper = frozenset(part.upper) | frozenset(newcomers)
            pending.append((cid, "lower", frozenset(part.lower), alloc.capacity_lower))
            pending.append((cid, "upper", upper, x_s - alloc.capacity_lower))
        else:
            pending.append((cid, "whole", frozenset(members), x_s))

    rates = _round_rates([p[3] for p in pending], config.capacity)
    groups = tuple(MeterGroup(f"{cid}:{tier}", cid, tier, members, rate, config.burst_bytes)
                   for (cid, tier, members, _), rate in zip(pending, rates))
    return EnforcementPlan(epoch_index, groups, dict(shares))


@dataclass(frozen=True)
class PlanDiff:
    added: tuple = ()
    removed: tuple = ()
    rate_changes: dict = field(default_factory=dict)
    moves: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.added or self.removed or self.rate_changes or self.moves)


def plan_diff(previous, following):
    """Group additions/removals, rate changes, and per-flow group moves.

    A flow that joins or leaves the plan shows up in ``moves`` with ``None``
    on the missing side.
    """
    old = {g.group_id: g for g in previous.groups}
    new = {g.group_id: g for g in following.groups}
    added = tuple(gid for gid in new if gid not in old)
    removed = tuple(gid for gid in old if gid not in new)
    rate_changes = {gid: (old[gid].rate_limit, new[gid].rate_limit)
                    for gid in new if gid in old
                    and old[gid].rate_limit != new[gid].rate_limit}
    where_old = {f: g.group_id for g in previous.groups for f in g.members}
    where_new = {f: g.group_id for g in following.groups for f in g.members}
    moves = {}
    for f in sorted(set(where_old) | set(where_new), key=str):
        a, b = where_old.get(f), where_new.get(f)
        if a != b:
            moves[f] = (a, b)
    return PlanDiff(added, removed, rate_changes, moves)
