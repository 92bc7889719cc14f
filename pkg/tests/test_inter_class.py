import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from diffperf.exceptions import ConfigurationError, DomainError, ParameterError
from diffperf.inter_class import (AlphaFairAllocator, InterClassAllocation, InterClassInput,
                                  allocate_closed_form, allocate_numeric_oracle,
                                  marginal_utility, per_flow_ratio, utility, verify_kkt)


def make(weights, counts, capacity=50e6, alpha=1.0):
    return InterClassInput.from_weights(weights, counts, capacity, alpha, ["G", "S", "B"][:len(weights)]
                                        if len(weights) <= 3 else None)


def test_gsb_example_shares():
    alloc = allocate_closed_form(make([3, 2, 1], [13, 13, 13]))
    assert alloc["G"] == pytest.approx(25e6, rel=1e-12)
    assert alloc["S"] == pytest.approx(50e6 / 3, rel=1e-12)
    assert alloc["B"] == pytest.approx(25e6 / 3, rel=1e-12)


def test_empty_class_gets_zero_and_single_class_gets_all():
    alloc = allocate_closed_form(make([3, 2, 1], [0, 5, 5]))
    assert alloc["G"] == 0.0
    assert alloc.total() == pytest.approx(50e6)
    alone = allocate_closed_form(make([3, 2, 1], [0, 7, 0]))
    assert alone["S"] == 50e6


def test_all_empty_rejected():
    with pytest.raises(ConfigurationError):
        make([3, 2, 1], [0, 0, 0])


@pytest.mark.parametrize("alpha", [0.0, -1.0, 1e-4, math.nan, math.inf])
def test_bad_alpha_rejected(alpha):
    with pytest.raises(ParameterError):
        make([1, 2], [1, 1], alpha=alpha)


def test_bad_weight_and_capacity_rejected():
    with pytest.raises(ParameterError):
        make([0, 1], [1, 1])
    with pytest.raises(ParameterError):
        make([1, 1], [1, 1], capacity=0)


def test_utility_log_branch_and_domain():
    assert utility(math.e, 2.0, 1.0) == pytest.approx(2.0)
    assert utility(4.0, 1.0, 2.0) == pytest.approx(-0.25)
    assert marginal_utility(2.0, 3.0, 2.0) == pytest.approx(0.75)
    with pytest.raises(DomainError):
        utility(0.0, 1.0, 1.0)


def test_per_flow_ratio_matches_weight_root():
    inp = make([3, 2, 1], [13, 13, 13], alpha=2.0)
    alloc = allocate_closed_form(inp)
    assert per_flow_ratio(alloc, inp, "G", "B") == pytest.approx(math.sqrt(3), rel=1e-12)


def test_large_alpha_nearly_equal_per_flow():
    inp = make([3, 2, 1], [13, 13, 13], alpha=64.0)
    alloc = allocate_closed_form(inp)
    assert per_flow_ratio(alloc, inp, "G", "B") == pytest.approx(3 ** (1 / 64), rel=1e-12)
    assert per_flow_ratio(alloc, inp, "G", "B") < 1.02


def test_extreme_inputs_stay_finite():
    inp = InterClassInput.from_weights([1e6, 1e-6], [1, 10**6], 1e9, 1e-3)
    alloc = allocate_closed_form(inp)
    assert all(math.isfinite(v) for v in alloc.shares.values())
    assert alloc.total() == pytest.approx(1e9)


def test_kkt_rejects_perturbed_allocation():
    inp = make([3, 2, 1], [4, 5, 6])
    alloc = allocate_closed_form(inp)
    assert verify_kkt(inp, alloc)
    moved = dict(alloc.shares)
    moved["G"] += 1e3
    moved["B"] -= 1e3
    assert not verify_kkt(inp, InterClassAllocation(moved))
    short = {k: v * 0.99 for k, v in alloc.shares.items()}
    assert not verify_kkt(inp, InterClassAllocation(short))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 10), st.integers(0, 40)), min_size=2, max_size=6)
       .filter(lambda cs: any(n for _, n in cs)),
       st.floats(0.25, 8))
def test_closed_form_agrees_with_oracle(classes, alpha):
    w, n = zip(*classes)
    inp = InterClassInput.from_weights(w, n, 1e8, alpha)
    exact = allocate_closed_form(inp)
    numeric = allocate_numeric_oracle(inp)
    for cid in inp.class_ids:
        assert numeric[cid] == pytest.approx(exact[cid], rel=1e-6, abs=1e-9)
    assert verify_kkt(inp, exact)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 4), st.integers(1, 30), st.floats(0.1, 10))
def test_scaling_counts_scales_per_class_share(alpha, k, w):
    # Doubling every count leaves the class shares unchanged.
    a = allocate_closed_form(InterClassInput.from_weights([w, 1.0], [k, 3], 1e7, alpha))
    b = allocate_closed_form(InterClassInput.from_weights([w, 1.0], [2 * k, 6], 1e7, alpha))
    assert a["0"] == pytest.approx(b["0"], rel=1e-12)


def test_estimator_api():
    est = AlphaFairAllocator(weights=(3, 2, 1), capacity=50e6, alpha=1.0)
    out = est.fit_transform(np.array([[13, 13, 13], [0, 1, 1]]))
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out[0], [25e6, 50e6 / 3, 25e6 / 3], rtol=1e-12)
    np.testing.assert_allclose(out[1], [0, 50e6 * 2 / 3, 50e6 / 3], rtol=1e-12)
    assert clone(est).get_params()["alpha"] == 1.0
    est.set_params(alpha=2.0)
    assert est.fit_transform([[1, 0, 1]])[0, 0] == pytest.approx(50e6 * math.sqrt(3) / (math.sqrt(3) + 1))
    with pytest.raises(ValueError):
        est.transform([[1, 2]])
    pipe = make_pipeline(AlphaFairAllocator(weights=(1, 1), capacity=10.0))
    np.testing.assert_allclose(pipe.fit_transform([[1, 1]]), [[5.0, 5.0]])
