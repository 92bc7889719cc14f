"""Scenario files: JSON schema, parsing, validation and serialization.

A scenario is a JSON object with these keys (all seconds / bits per second
/ bytes unless noted)::

    name        free text
    seed        integer
    duration    simulated seconds
    client_step seconds between client updates (default 0.1)
    link        {capacity, buffer_bytes, tick}
    classes     [{class_id, weight}, ...]
    controller  {alpha, beta, gamma, epoch, burst_bytes}  or  "baseline:<cc_model>"
    estimator   {delta, sample_period, idle_timeout}
    workload    {video: {duration, segment_len, ladder},
                 abr: {safety, delta, max_buffer, resume_buffer},
                 cc_model,
                 population: {counts: {class: n}, rtt: RTT},      (static start at t=0)
                 arrivals: {rate, count, horizon, ratio, assignment}}  (Poisson)

``RTT`` is ``{"kind": "fixed", "value": s}``, ``{"kind": "mix"}`` (random
70/30 Gaussian mixture) or ``{"kind": "split"}`` (exact 70/30 counts).
"""
from dataclasses import asdict, dataclass, field, replace
import json
import math
from importlib import resources

from .controller import ControllerConfig
from .dash import AbrConfig, VideoSpec
from .exceptions import ValidationError
from .inter_class import ServiceClassSpec
from .netsim import CC_PROFILES, LinkConfig
from .stats_collector import EstimatorConfig

__all__ = [
    "ScenarioConfig",
    "WorkloadConfig",
    "parse_scenario",
    "load_scenario",
    "shipped_scenarios",
    "scenario_to_dict",
    "with_param",
]

BASELINE_PREFIX = "baseline:"


@dataclass(frozen=True)
class WorkloadConfig:
    video: VideoSpec
    abr: AbrConfig
    cc_model: str = "cubic-like"
    population: dict = None
    arrivals: dict = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    duration: float
    link: LinkConfig
    classes: tuple
    controller: object  # ControllerConfig or "baseline:<cc>"
    estimator: EstimatorConfig
    workload: WorkloadConfig
    client_step: float = 0.1

    @property
    def is_baseline(self):
        return isinstance(self.controller, str)

    @property
    def cc_model(self):
        if self.is_baseline:
            return self.controller[len(BASELINE_PREFIX):]
        return self.workload.cc_model

    @property
    def class_ids(self):
        return [c.class_id for c in self.classes]


def _req(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ValidationError(f"{where}.{key}" if where else key, "missing required field")
    return d[key]


def _build(where, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValidationError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ValidationError(where, str(exc)) from exc


def _number(d, key, where, default=None):
    if default is not None and key not in d:
        return default
    v = _req(d, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"{where}.{key}", f"expected a finite number, got {v!r}")
    return float(v)


def _check_cc(cc, where):
    if cc not in CC_PROFILES:
        raise ValidationError(where, f"unknown cc_model {cc!r}; expected one of {sorted(CC_PROFILES)}")
    return cc


def _rtt_spec(spec, where):
    kind = _req(spec, "kind", where)
    if kind == "fixed":
        v = _number(spec, "value", where)
        if v <= 0:
            raise ValidationError(f"{where}.value", "RTT must be positive")
    elif kind not in ("mix", "split"):
        raise ValidationError(f"{where}.kind", f"unknown RTT kind {kind!r}")
    return dict(spec)


def parse_scenario(data):
    """Validate a decoded JSON scenario; raises ValidationError naming the field."""
    if not isinstance(data, dict):
        raise ValidationError("<root>", "scenario must be a JSON object")
    seed = _req(data, "seed", "")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValidationError("seed", "expected an integer")
    duration = _number(data, "duration", "")
    if duration < 0:
        raise ValidationError("duration", "must be non-negative")
    client_step = _number(data, "client_step", "", default=0.1)

    ld = _req(data, "link", "")
    link = _build("link", LinkConfig, _number(ld, "capacity", "link"),
                  _number(ld, "buffer_bytes", "link"), _number(ld, "tick", "link"))
    if client_step < link.tick:
        raise ValidationError("client_step", "must be at least one tick")

    raw_classes = _req(data, "classes", "")
    if not isinstance(raw_classes, list) or not raw_classes:
        raise ValidationError("classes", "expected a nonempty list")
    classes = tuple(_build(f"classes[{i}]", ServiceClassSpec, _req(c, "class_id", f"classes[{i}]"),
                           _number(c, "weight", f"classes[{i}]"))
                    for i, c in enumerate(raw_classes))
    ids = [c.class_id for c in classes]
    if len(set(ids)) != len(ids):
        raise ValidationError("classes", f"duplicate class ids {ids}")

    est = data.get("estimator", {})
    estimator = _build("estimator", EstimatorConfig,
                       delta=_number(est, "delta", "estimator", 0.0) if "delta" in est else 0.0,
                       sample_period=_number(est, "sample_period", "estimator")
                       if "sample_period" in est else 3.0,
                       idle_timeout=est.get("idle_timeout"),
                       epoch=_number(data["controller"], "epoch", "controller")
                       if isinstance(data.get("controller"), dict) and "epoch" in data["controller"]
                       else 15.0)

    ctl = _req(data, "controller", "")
    if isinstance(ctl, str):
        if not ctl.startswith(BASELINE_PREFIX):
            raise ValidationError("controller", f"expected an object or 'baseline:<cc_model>', got {ctl!r}")
        _check_cc(ctl[len(BASELINE_PREFIX):], "controller")
        controller = ctl
    else:
        kwargs = {k: _number(ctl, k, "controller") for k in ("alpha", "beta", "gamma", "epoch")
                  if k in ctl}
        if "burst_bytes" in ctl:
            kwargs["burst_bytes"] = int(_number(ctl, "burst_bytes", "controller"))
        unknown = set(ctl) - {"alpha", "beta", "gamma", "epoch", "burst_bytes"}
        if unknown:
            raise ValidationError("controller", f"unknown keys {sorted(unknown)}")
        controller = _build("controller", ControllerConfig, link.capacity, classes, **kwargs)

    wd = _req(data, "workload", "")
    vd = wd.get("video", {})
    video = _build("workload.video", VideoSpec, **vd)
    abr = _build("workload.abr", AbrConfig, **wd.get("abr", {}))
    cc = _check_cc(wd.get("cc_model", "cubic-like"), "workload.cc_model")
    population = wd.get("population")
    arrivals = wd.get("arrivals")
    if population is None and arrivals is None:
        raise ValidationError("workload", "needs a population or an arrivals block")
    if population is not None:
        counts = _req(population, "counts", "workload.population")
        for cid, n in counts.items():
            if cid not in ids:
                raise ValidationError("workload.population.counts", f"unknown class {cid!r}")
            if isinstance(n, bool) or not isinstance(n, int) or n < 0:
                raise ValidationError(f"workload.population.counts.{cid}", "expected a count >= 0")
        population = dict(population, rtt=_rtt_spec(_req(population, "rtt", "workload.population"),
                                                     "workload.population.rtt"))
    if arrivals is not None:
        where = "workload.arrivals"
        if _number(arrivals, "rate", where) <= 0:
            raise ValidationError(f"{where}.rate", "must be positive")
        ratio = _req(arrivals, "ratio", where)
        for cid in ratio:
            if cid not in ids:
                raise ValidationError(f"{where}.ratio", f"unknown class {cid!r}")
        if "count" not in arrivals and "horizon" not in arrivals:
            raise ValidationError(where, "needs a count or a horizon")
        if arrivals.get("assignment", "random") not in ("random", "round_robin"):
            raise ValidationError(f"{where}.assignment", "expected 'random' or 'round_robin'")
        arrivals = dict(arrivals)
    workload = WorkloadConfig(video, abr, cc, population, arrivals)

    return ScenarioConfig(str(data.get("name", "scenario")), seed, duration, link, classes,
                          controller, estimator, workload, client_step)


def scenario_to_dict(cfg):
    """Inverse of :func:`parse_scenario`."""
    if cfg.is_baseline:
        ctl = cfg.controller
    else:
        c = cfg.controller
        ctl = dict(alpha=c.alpha, beta=c.beta, gamma=c.gamma, epoch=c.epoch,
                   burst_bytes=c.burst_bytes)
    w = cfg.workload
    abr = asdict(w.abr)
    workload = dict(video=dict(duration=w.video.duration, segment_len=w.video.segment_len,
                               ladder=list(w.video.ladder)),
                    abr=abr, cc_model=w.cc_model)
    if w.population is not None:
        workload["population"] = w.population
    if w.arrivals is not None:
        workload["arrivals"] = w.arrivals
    est = cfg.estimator
    out = dict(name=cfg.name, seed=cfg.seed, duration=cfg.duration, client_step=cfg.client_step,
               link=dict(capacity=cfg.link.capacity, buffer_bytes=cfg.link.buffer_bytes,
                         tick=cfg.link.tick),
               classes=[dict(class_id=c.class_id, weight=c.weight) for c in cfg.classes],
               controller=ctl,
               estimator=dict(delta=est.delta, sample_period=est.sample_period,
                              idle_timeout=est.idle_timeout),
               workload=workload)
    return out


def load_scenario(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError("<file>", f"invalid JSON: {exc}") from exc
    return parse_scenario(data)


def shipped_scenarios():
    """Names and paths of the scenario files bundled with the package."""
    root = resources.files("diffperf") / "scenarios"
    return {p.name[:-5]: p for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".json")}


SWEEP_PARAMS = ("alpha", "beta", "gamma", "buffer")


def with_param(cfg, param, value):
    """Copy of ``cfg`` with one sweep axis set to ``value``."""
    if param == "buffer":
        return replace(cfg, link=LinkConfig(cfg.link.capacity, float(value), cfg.link.tick))
    if param not in SWEEP_PARAMS:
        raise ValidationError("param", f"expected one of {SWEEP_PARAMS}, got {param!r}")
    if cfg.is_baseline:
        raise ValidationError("param", f"cannot sweep {param} on a baseline controller")
    return replace(cfg, controller=_build("controller", replace, cfg.controller,
                                          **{param: float(value)}))
