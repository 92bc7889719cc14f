"""DASH client population: segment downloads, ABR, playout buffer, QoE."""
from dataclasses import dataclass, field
import math

import numpy as np

from .exceptions import AccountingError, DomainError, ParameterError
from .netsim import FlowPathConfig

__all__ = [
    "STARTUP_SEGMENTS",
    "VideoSpec",
    "AbrConfig",
    "QoEParams",
    "DashClientState",
    "ClientTrace",
    "Arrival",
    "abr_select",
    "advance",
    "demand_cap",
    "qoe",
    "spawn_arrivals",
    "sample_rtts",
]

STARTUP_SEGMENTS = 1
_T_EPS = 1e-9
_B_EPS = 1e-6


@dataclass(frozen=True)
class VideoSpec:
    duration: float = 600.0
    segment_len: float = 2.0
    ladder: tuple = (1.2e6, 2.2e6, 4.1e6)

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(float(b) for b in self.ladder))
        if not (self.duration > 0 and self.segment_len > 0):
            raise ParameterError("duration and segment_len must be positive")
        n = self.duration / self.segment_len
        if abs(n - round(n)) > 1e-9:
            raise ParameterError("duration must be a whole number of segments")
        if not self.ladder or any(b <= 0 for b in self.ladder):
            raise ParameterError("ladder must hold positive bitrates")
        if any(b >= c for b, c in zip(self.ladder, self.ladder[1:])):
            raise ParameterError("ladder must be strictly ascending")

    @property
    def n_segments(self):
        return int(round(self.duration / self.segment_len))

    def segment_bytes(self, bitrate):
        return bitrate * self.segment_len / 8.0


@dataclass(frozen=True)
class AbrConfig:
    safety: float = 0.8
    delta: float = 0.5  # EWMA weight on the previous estimate
    max_buffer: float = None  # pause downloading at this many seconds buffered
    resume_buffer: float = None

    def __post_init__(self):
        if not 0 < self.safety <= 1:
            raise ParameterError("ABR safety factor must lie in (0, 1]")
        if not 0 <= self.delta <= 1:
            raise ParameterError("ABR delta must lie in [0, 1]")
        if self.max_buffer is not None:
            resume = self.resume_buffer if self.resume_buffer is not None else self.max_buffer
            if not 0 < resume <= self.max_buffer:
                raise ParameterError("need 0 < resume_buffer <= max_buffer")
            object.__setattr__(self, "resume_buffer", resume)


@dataclass(frozen=True)
class QoEParams:
    lam: float = 1.0
    mu: float = 4.1
    mu_s: float = 4.1
    quality: object = None  # bitrate (bps) -> quality; default is Mbps

    def __post_init__(self):
        if min(self.lam, self.mu, self.mu_s) < 0:
            raise ParameterError("QoE weights must be non-negative")

    def q(self, bitrate):
        return self.quality(bitrate) if self.quality is not None else bitrate / 1e6


@dataclass
class DashClientState:
    flow_id: object
    video: VideoSpec
    class_id: object = None
    next_segment_index: int = 0  # segment currently being downloaded
    chosen_bitrates: list = field(default_factory=list)  # completed segments
    bytes_remaining_current_segment: float = 0.0
    current_bitrate: float = 0.0
    playout_buffer: float = 0.0
    startup_delay: float = 0.0
    stall_time: float = 0.0
    played: float = 0.0
    wall_time: float = 0.0
    phase: str = "startup"
    throughput_estimate: float = 0.0
    paused: bool = False
    segment_elapsed: float = 0.0
    discarded_bytes: float = 0.0

    def __post_init__(self):
        if not self.chosen_bitrates and self.current_bitrate == 0.0:
            self.current_bitrate = self.video.ladder[0]
            self.bytes_remaining_current_segment = self.video.segment_bytes(self.current_bitrate)

    @property
    def segments_completed(self):
        return len(self.chosen_bitrates)

    @property
    def all_downloaded(self):
        return self.segments_completed >= self.video.n_segments

    @property
    def done(self):
        return self.phase == "done"

    def trace(self, truncated=None):
        return ClientTrace(tuple(self.chosen_bitrates), self.stall_time, self.startup_delay,
                           (not self.done) if truncated is None else truncated)


@dataclass(frozen=True)
class ClientTrace:
    bitrates: tuple
    stall_time: float = 0.0
    startup_delay: float = 0.0
    truncated: bool = False


def abr_select(throughput_estimate, ladder, safety=0.8):
    """Highest rung not above ``safety * estimate``; the lowest rung otherwise."""
    if not ladder:
        raise ParameterError("empty ladder")
    budget = safety * throughput_estimate
    best = ladder[0]
    for rung in ladder:
        if rung <= budget:
            best = rung
    return best


def demand_cap(client):
    """Application ceiling in bits/second; 0 when the client wants no bytes."""
    if client.done or client.all_downloaded or client.paused:
        return 0.0
    return 2.0 * client.current_bitrate


def _complete_segment(c, abr):
    v = c.video
    c.chosen_bitrates.append(c.current_bitrate)
    c.playout_buffer += v.segment_len
    if c.segment_elapsed > 0:
        sample = 8.0 * v.segment_bytes(c.current_bitrate) / c.segment_elapsed
        if c.segments_completed == 1:
            c.throughput_estimate = sample
        else:
            c.throughput_estimate = abr.delta * c.throughput_estimate + (1 - abr.delta) * sample
    c.segment_elapsed = 0.0
    c.next_segment_index += 1
    if c.phase == "startup" and c.segments_completed >= STARTUP_SEGMENTS:
        c.phase = "playing"
    elif c.phase == "stalled":
        c.phase = "playing"
    if c.all_downloaded:
        c.bytes_remaining_current_segment = 0.0
        return
    c.current_bitrate = abr_select(c.throughput_estimate, v.ladder, abr.safety)
    c.bytes_remaining_current_segment = v.segment_bytes(c.current_bitrate)
    if abr.max_buffer is not None and c.playout_buffer >= abr.max_buffer - _T_EPS:
        c.paused = True


def advance(client, delivered_bytes, dt, abr=None):
    """Advance ``client`` by ``dt`` seconds, receiving ``delivered_bytes``
    spread uniformly over the interval.  Mutates and returns the client."""
    abr = abr or AbrConfig()
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if delivered_bytes < 0:
        raise AccountingError(f"negative delivery to {client.flow_id!r}")
    c = client
    if c.done:
        if delivered_bytes > _B_EPS:
            raise AccountingError(f"{delivered_bytes} bytes delivered to finished client "
                                  f"{c.flow_id!r}")
        return c
    rate = delivered_bytes / dt  # bytes per second
    left = dt
    while left > _T_EPS and not c.done:
        downloading = not c.all_downloaded
        t_seg = (c.bytes_remaining_current_segment / rate
                 if downloading and rate > 0 else math.inf)
        t_buf = c.playout_buffer if c.phase == "playing" else math.inf
        if c.paused and c.phase == "playing":
            t_buf = max(c.playout_buffer - abr.resume_buffer, 0.0)
        step = min(t_seg, t_buf, left)

        if downloading:
            c.bytes_remaining_current_segment -= rate * step
            if rate > 0 or not c.paused:
                c.segment_elapsed += step
        elif rate > 0:
            c.discarded_bytes += rate * step
        if c.phase == "playing":
            c.playout_buffer -= step
            c.played += step
        elif c.phase == "startup":
            c.startup_delay += step
        elif c.phase == "stalled":
            c.stall_time += step
        c.wall_time += step
        left -= step

        if downloading and (step == t_seg or c.bytes_remaining_current_segment <= _B_EPS):
            _complete_segment(c, abr)
            continue
        if c.paused and c.playout_buffer <= abr.resume_buffer + _T_EPS:
            c.paused = False
        if c.phase == "playing" and c.playout_buffer <= _T_EPS:
            c.playout_buffer = 0.0
            c.phase = "done" if c.all_downloaded else "stalled"
    if c.done and left > _T_EPS and rate > 0:
        c.discarded_bytes += rate * left
    return c


def qoe(trace, params=None):
    """sum q(R_n) - lam * sum |q(R_n+1) - q(R_n)| - mu * T_stall - mu_s * T_s."""
    params = params or QoEParams()
    if isinstance(trace, DashClientState):
        trace = trace.trace()
    if not trace.bitrates:
        raise DomainError("QoE of an empty bitrate trace")
    q = [params.q(b) for b in trace.bitrates]
    switches = math.fsum(abs(b - a) for a, b in zip(q, q[1:]))
    return (math.fsum(q) - params.lam * switches
            - params.mu * trace.stall_time - params.mu_s * trace.startup_delay)


@dataclass(frozen=True)
class Arrival:
    time: float
    class_id: object
    path: FlowPathConfig


_RTT_MIX = ((0.7, 0.064, 0.016), (0.3, 0.224, 0.032))
_RTT_FLOOR = 0.001


def sample_rtts(rng, n, mix=_RTT_MIX, deterministic_split=False):
    """Base RTTs from a Gaussian mixture, floored at 1 ms.

    With ``deterministic_split`` the component sizes are exact (rounded)
    fractions of ``n`` in order, e.g. 28 short then 12 long for n = 40.
    """
    weights = np.array([m[0] for m in mix], dtype=float)
    weights /= weights.sum()
    if deterministic_split:
        sizes = np.floor(weights * n + 0.5).astype(int)
        sizes[-1] = n - sizes[:-1].sum()
        comp = np.repeat(np.arange(len(mix)), sizes)
    else:
        comp = rng.choice(len(mix), size=n, p=weights)
    means = np.array([m[1] for m in mix])[comp]
    sds = np.array([m[2] for m in mix])[comp]
    return np.maximum(rng.normal(means, sds), _RTT_FLOOR), comp


def _round_robin(ratio, n):
    """Smooth weighted round-robin over ``ratio`` (class -> weight)."""
    ids = list(ratio)
    weights = [float(ratio[c]) for c in ids]
    total = sum(weights)
    current = [0.0] * len(ids)
    out = []
    for _ in range(n):
        current = [c + w for c, w in zip(current, weights)]
        k = max(range(len(ids)), key=lambda i: (current[i], -i))
        current[k] -= total
        out.append(ids[k])
    return out


def spawn_arrivals(rate_lambda, class_ratio, horizon=math.inf, seed=0, count=None,
                   assignment="random", cc_model="cubic-like", rtt_mix=_RTT_MIX,
                   flow_prefix="c"):
    """Poisson arrivals with class assignment by ratio and mixture RTTs.

    Stops at ``horizon`` seconds or after ``count`` arrivals, whichever is
    first; at least one of them must be finite.
    """
    if not rate_lambda > 0:
        raise ParameterError("arrival rate must be positive")
    if count is None and not math.isfinite(horizon):
        raise ParameterError("need a finite horizon or an arrival count")
    if not horizon > 0:
        raise ParameterError("horizon must be positive")
    if not class_ratio or any(w < 0 for w in class_ratio.values()) or \
            sum(class_ratio.values()) <= 0:
        raise ParameterError("class ratio must hold non-negative weights with a positive sum")
    if assignment not in ("random", "round_robin"):
        raise ParameterError(f"unknown assignment {assignment!r}")
    rng = np.random.default_rng(seed)
    times = []
    t = 0.0
    limit = count if count is not None else math.inf
    while len(times) < limit:
        t += rng.exponential(1.0 / rate_lambda)
        if t > horizon:
            break
        times.append(t)
    n = len(times)
    ids = list(class_ratio)
    if assignment == "round_robin":
        classes = _round_robin(class_ratio, n)
    else:
        p = np.array([class_ratio[c] for c in ids], dtype=float)
        classes = [ids[k] for k in rng.choice(len(ids), size=n, p=p / p.sum())]
    rtts, _ = sample_rtts(rng, n, rtt_mix)
    return [Arrival(ti, cid, FlowPathConfig(f"{flow_prefix}{i}", float(r), cc_model))
            for i, (ti, cid, r) in enumerate(zip(times, classes, rtts))]
