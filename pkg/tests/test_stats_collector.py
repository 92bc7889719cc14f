import pytest

from diffperf.exceptions import (CounterResetWarning, ParameterError, RegistrationError,
                                 UnknownFlowWarning)
from diffperf.stats_collector import EstimatorConfig, ThroughputEstimator


def feed(est, fid, rate_bps, start, end, period):
    """Constant-rate counter samples from ``start`` (exclusive) to ``end``."""
    t = start
    while t < end - 1e-9:
        t += period
        rec = est.record(fid)
        est.ingest_counter(fid, rec.cumulative_bytes + rate_bps * period / 8.0, t)


def test_config_defaults_and_checks():
    cfg = EstimatorConfig()
    assert cfg.idle_timeout == 6.0 and cfg.delta == 0.0
    with pytest.raises(ParameterError):
        EstimatorConfig(delta=1.5)
    with pytest.raises(ParameterError):
        EstimatorConfig(sample_period=20, epoch=15)


def test_delta_zero_is_instantaneous():
    est = ThroughputEstimator(EstimatorConfig(delta=0.0))
    est.register_flow("a", "G", 0.0)
    feed(est, "a", 4e6, 0.0, 15.0, 3.0)
    assert est.update_epoch(15.0)["a"] == 4e6
    feed(est, "a", 1e6, 15.0, 30.0, 3.0)
    assert est.update_epoch(30.0)["a"] == 1e6


def test_ewma_weights():
    est = ThroughputEstimator(EstimatorConfig(delta=0.25))
    est.register_flow("a", "G", 0.0)
    feed(est, "a", 8e6, 0.0, 15.0, 3.0)
    assert est.update_epoch(15.0)["a"] == pytest.approx(0.75 * 8e6)
    feed(est, "a", 4e6, 15.0, 30.0, 3.0)
    assert est.update_epoch(30.0)["a"] == pytest.approx(0.25 * 6e6 + 0.75 * 4e6)


def test_idle_timeout_dip_and_recovery():
    est = ThroughputEstimator(EstimatorConfig())
    for f in "abc":
        est.register_flow(f, "S", 0.0)
    counts = []
    t = 0.0
    for step in range(1, 16):
        t = 3.0 * step
        for f in "abc":
            silent = f == "c" and 5 <= step <= 8  # 12 s of silence
            rec = est.record(f)
            est.ingest_counter(f, rec.cumulative_bytes + (0 if silent else 1000), t)
        counts.append(est.active_counts(t)["S"])
    assert 2 in counts
    first_dip = counts.index(2)
    assert counts[first_dip - 1] == 3 and counts[-1] == 3


def test_inactive_flows_drop_out_of_estimates():
    est = ThroughputEstimator(EstimatorConfig())
    est.register_flow("a", "G", 0.0)
    est.register_flow("b", "G", 0.0)
    feed(est, "a", 1e6, 0.0, 15.0, 3.0)
    est.ingest_counter("b", 0.0, 15.0)
    out = est.update_epoch(15.0)
    assert "a" in out and "b" not in out
    assert est.active_flows(15.0) == {"G": ["a"]}


def test_counter_reset_warns_and_restarts():
    est = ThroughputEstimator()
    est.register_flow("a", "G", 0.0)
    est.ingest_counter("a", 3000.0, 3.0)
    with pytest.warns(CounterResetWarning):
        rate = est.ingest_counter("a", 600.0, 6.0)
    assert rate == 8 * 600.0 / 3.0


def test_registration_errors():
    est = ThroughputEstimator()
    est.register_flow("a", "G", 0.0)
    with pytest.raises(RegistrationError):
        est.register_flow("a", "G", 1.0)
    with pytest.warns(UnknownFlowWarning):
        est.deregister_flow("zzz")
    est.deregister_flow("a")
    assert "a" not in est and len(est) == 0
    est.register_flow("b", "G", 0.0)
    with pytest.raises(ParameterError):
        est.ingest_counter("b", 10.0, 0.0)


def test_newcomer_is_unmeasured_until_full_epoch():
    est = ThroughputEstimator()
    est.register_flow("old", "G", 0.0)
    est.register_flow("new", "G", 9.0)
    feed(est, "old", 1e6, 0.0, 15.0, 3.0)
    est.ingest_counter("new", 1000.0, 12.0)
    est.ingest_counter("new", 2000.0, 15.0)
    est.update_epoch(15.0)
    assert set(est.measured_estimates(15.0)) == {"old"}
