import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cogradio_ec.capacity import mean_service_bits
from cogradio_ec.markov import System, SystemParams, build_chain, build_feedback_chain
from cogradio_ec.montecarlo import (
    _retransmission_flags,
    estimate_effective_capacity,
    estimate_queue_tail_exponent,
    occupancy_by_batch,
    queue_lengths,
    simulate_batches,
    simulate_service,
)
from cogradio_ec.sensing import SensingConfig

PAPER = SystemParams()


@given(arrays(bool, st.integers(1, 200)))
def test_retransmission_flags_match_loop(candidate):
    expected = np.zeros(len(candidate), dtype=bool)
    for t in range(len(candidate) - 1):
        expected[t + 1] = candidate[t] and not expected[t]
    np.testing.assert_array_equal(_retransmission_flags(candidate), expected)


@given(arrays(float, st.integers(1, 200), elements=st.floats(0, 100)), st.floats(0, 100))
def test_queue_lengths_match_lindley_loop(service, arrival):
    q, expected = 0.0, []
    for s in service:
        q = max(0.0, q + arrival - s)
        expected.append(q)
    np.testing.assert_allclose(queue_lengths(service, arrival), expected, atol=1e-9)


@pytest.mark.parametrize("system", list(System))
def test_trace_is_deterministic(system):
    a = simulate_service(PAPER, system, 5000, 17)
    b = simulate_service(PAPER, system, 5000, 17)
    np.testing.assert_array_equal(a.state, b.state)
    np.testing.assert_array_equal(a.served_bits, b.served_bits)


@pytest.mark.parametrize("system,appendix_k1", [("no_feedback", False), ("feedback", False), ("feedback", True)])
def test_served_bits_follow_state(system, appendix_k1):
    model = build_chain(PAPER, system, appendix_k1)
    trace = simulate_service(PAPER, system, 50_000, 3, appendix_k1=appendix_k1)
    assert trace.state.min() >= 1 and trace.state.max() <= model.size
    np.testing.assert_allclose(trace.served_bits, model.effective_bits[trace.state - 1])
    np.testing.assert_allclose(trace.power, model.powers[trace.state - 1])


def test_feedback_trace_semantics():
    trace = simulate_service(PAPER, System.FEEDBACK, 50_000, 5)
    nack_slot = trace.state >= 9
    assert np.all(trace.sensing[nack_slot] == 2)  # skipped
    assert np.all(trace.pu_state[nack_slot] == 2)  # primary retransmitting
    # retransmit once: a retransmission never follows a retransmission
    retx = trace.pu_state == 2
    assert not np.any(retx[1:] & retx[:-1])
    first = trace.outcome(int(np.flatnonzero(nack_slot)[0]))
    assert first.sensing == "skipped"
    assert first.pu_state == "retransmitting"


@pytest.mark.parametrize("system", list(System))
def test_transition_frequencies_match_chain(system):
    model = build_chain(PAPER, system)
    frames = 400_000
    s = simulate_service(PAPER, system, frames, 11).state.astype(int) - 1
    counts = np.zeros((model.size, model.size))
    np.add.at(counts, (s[:-1], s[1:]), 1.0)
    rows = counts.sum(axis=1)
    for i in np.flatnonzero(rows > 1000):
        p = model.R[i]
        se = np.sqrt(np.maximum(p * (1 - p), 1e-12) / rows[i])
        assert np.all(np.abs(counts[i] / rows[i] - p) <= 4.5 * se + 1e-9), i


def test_sample_level_sensing_matches_operating_point():
    c = SensingConfig(1.7, 0.026, 1000.0, 0.9990715387462608, 1.0009052876537243)
    trace = simulate_service(PAPER, System.NO_FEEDBACK, 100_000, 8, sensing=c)
    busy = trace.pu_state > 0
    detected = trace.sensing == 1
    pd_hat = detected[busy].mean()
    se = math.sqrt(PAPER.pd * (1 - PAPER.pd) / busy.sum())
    assert abs(pd_hat - PAPER.pd) <= 4 * se


def test_batches_use_distinct_streams():
    traces = simulate_batches(PAPER, "no_feedback", 3, 1000, seed=1)
    assert not np.array_equal(traces[0].state, traces[1].state)
    occ = occupancy_by_batch(traces, 12)
    np.testing.assert_allclose(occ.sum(axis=1), 1.0)


def test_estimator_on_iid_bernoulli_service():
    # i.i.d. service of c bits with probability q: EC = -ln(1 - q + q e^{-theta c}) / theta
    rng = np.random.default_rng(4)
    q, c, theta = 0.6, 50.0, 0.02
    service = c * (rng.random((100, 10_000)) < q)
    exact = -math.log(1 - q + q * math.exp(-theta * c)) / theta
    est = estimate_effective_capacity(service, theta)
    assert abs(est.point - exact) <= max(3 * est.half_width_95, 0.01 * exact)
    assert est.batches == 100
    assert est.half_width_95 > 0


def test_estimator_cuts_flat_trace():
    est = estimate_effective_capacity(np.full(40 * 100, 3.0), 0.1, batch_length=100)
    assert est.point == pytest.approx(3.0, rel=1e-12)
    assert est.batches == 40


def test_estimator_errors():
    with pytest.raises(ValueError):
        estimate_effective_capacity(np.ones((40, 100)), 0.0)
    with pytest.raises(ValueError):
        estimate_effective_capacity(np.ones((29, 100)), 0.1)
    with pytest.raises(ValueError):
        estimate_effective_capacity(np.ones(1000), 0.1)
    with pytest.warns(RuntimeWarning):
        service = np.ones((40, 100))
        service[0] = 0.0
        est = estimate_effective_capacity(service, 0.1)
    assert est.degenerate_batches == 1


def test_queue_tail_unstable():
    mean_bits = mean_service_bits(build_feedback_chain(PAPER))
    with pytest.raises(ValueError, match="unstable"):
        estimate_queue_tail_exponent(PAPER, "feedback", mean_bits * 1.01, 10_000, 0)


def test_queue_tail_censored_for_light_load():
    # every frame is ON and serves more than the arrival, so the queue stays empty
    params = PAPER.replace(snr=(1e6, 1e6, 1e6, 1e6))
    est = estimate_queue_tail_exponent(params, "no_feedback", 1.0, 20_000, 0)
    assert est.censored
    assert est.point == math.inf


def test_idle_primary_never_busy():
    trace = simulate_service(PAPER.replace(rho=0.0), System.FEEDBACK, 20_000, 2)
    assert np.all(trace.pu_state == 0)
    assert np.all(trace.feedback == 0)


def test_deterministic_service_normalized():
    est = estimate_effective_capacity(np.full((30, 50), 74.0), 0.02, time_bandwidth=100.0)
    assert est.point == pytest.approx(0.74, rel=1e-12)


def test_simulated_feedback_beats_no_feedback():
    ests = {}
    for k, system in enumerate(System):
        traces = simulate_batches(PAPER, system, 100, 10_000, seed=20 + k)
        served = np.stack([t.served_bits for t in traces])
        ests[system] = estimate_effective_capacity(served, PAPER.theta, time_bandwidth=PAPER.time_bandwidth)
    assert ests[System.FEEDBACK].point > ests[System.NO_FEEDBACK].point


def test_tail_exponent_decreases_with_load():
    mean_bits = mean_service_bits(build_chain(PAPER, System.NO_FEEDBACK))
    exponents = [
        estimate_queue_tail_exponent(PAPER, "no_feedback", frac * mean_bits, 500_000, 6).point
        for frac in (0.80, 0.85, 0.90)
    ]
    assert exponents[0] >= exponents[1] >= exponents[2]


def test_sample_level_sensing_matches_bernoulli_ec():
    c = SensingConfig(1.7, 0.026, 1000.0, 0.9990715387462608, 1.0009052876537243)
    ests = []
    for sensing in (None, c):
        traces = simulate_batches(PAPER, System.FEEDBACK, 40, 10_000, seed=31, sensing=sensing)
        served = np.stack([t.served_bits for t in traces])
        ests.append(estimate_effective_capacity(served, PAPER.theta, time_bandwidth=PAPER.time_bandwidth))
    a, b = ests
    assert abs(a.point - b.point) <= a.half_width_95 + b.half_width_95
