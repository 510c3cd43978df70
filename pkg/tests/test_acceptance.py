"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test records a ``criterion N: PASS|FAIL ...`` line that the terminal
summary prints, whether or not the assertions hold.
"""

import math
import time

import numpy as np
import pytest

from cogradio_ec.capacity import (
    appendix_quadratic_coefficients,
    ec_pair,
    effective_capacity,
    mean_service_rate,
    random_system_params,
    sweep,
    verify_theorem_1,
)
from cogradio_ec.config import load_config, paper_config_path
from cogradio_ec.markov import (
    System,
    build_chain,
    build_feedback_chain,
    build_no_feedback_chain,
    mgf_weighted_matrix,
    on_probability,
)
from cogradio_ec.montecarlo import (
    estimate_effective_capacity,
    estimate_queue_tail_exponent,
    occupancy_by_batch,
    simulate_batches,
)
from cogradio_ec.numerics import positive_quadratic_root, spectral_radius
from cogradio_ec.sensing import (
    SensingConfig,
    SensingOperatingPoint,
    invert_operating_point,
    operating_point,
    simulate_detections,
)

TRIALS = 10_000
SEED = 0


@pytest.fixture(scope="module")
def cfg():
    return load_config(paper_config_path())


@pytest.fixture(scope="module")
def params(cfg):
    return cfg.system_params()


@pytest.fixture(scope="module")
def sensing(cfg):
    return cfg.sensing_config()


@pytest.fixture
def verdict(record_property):
    def record(n, checks, detail):
        ok = all(checks.values())
        failed = [name for name, good in checks.items() if not good]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        if failed:
            line += f" [failed: {', '.join(failed)}]"
        print(line)
        record_property("criterion", line)
        return ok

    return record


def test_criterion_1_cross_method(verdict):
    start = time.perf_counter()
    worst = 0.0
    for i in range(TRIALS):
        p = random_system_params(np.random.default_rng([SEED, i]))
        for model in (build_no_feedback_chain(p), build_feedback_chain(p, appendix_k1=True)):
            closed = positive_quadratic_root(appendix_quadratic_coefficients(model))
            numeric = spectral_radius(mgf_weighted_matrix(model))
            worst = max(worst, abs(closed - numeric) / numeric)
    elapsed = time.perf_counter() - start
    checks = {"rel_error<=1e-9": worst <= 1e-9, "runtime<30s": elapsed < 30.0}
    verdict(1, checks, f"worst relative gap {worst:.3e} over {TRIALS} draws, {elapsed:.1f} s")
    assert all(checks.values())


def test_criterion_2_feedback_dominates(params, verdict):
    report = verify_theorem_1(trials=TRIALS, rng_seed=SEED)
    k1 = report.conventions["appendix_k1"]
    strict = report.conventions["strict"]
    n, f = ec_pair(params, params.theta)
    ratio = f.ec_normalized / n.ec_normalized
    _, f_k1 = ec_pair(params, params.theta, appendix_k1=True)
    ratio_k1 = f_k1.ec_normalized / n.ec_normalized
    checks = {
        "zero appendix_k1 violations": k1.violation_count == 0,
        "reference-point ratio 1.36+-0.10": abs(ratio - 1.36) <= 0.10,
    }
    detail = (
        f"appendix_k1 violations {k1.violation_count}/{TRIALS} (worst margin {k1.worst_margin:.3f}); "
        f"strict violations logged {strict.violation_count}/{TRIALS}; "
        f"reference-point EC_F/EC_N {ratio:.4f} (appendix_k1 {ratio_k1:.4f})"
    )
    verdict(2, checks, detail)
    assert all(checks.values())


def test_criterion_3_sensing_operating_point(params, verdict):
    start = time.perf_counter()
    target = SensingOperatingPoint(params.pf, params.pd)
    noise, interference = invert_operating_point(target, 1.7, params.sensing_duration, params.bandwidth)
    c = SensingConfig(1.7, params.sensing_duration, params.bandwidth, noise, interference)
    point = operating_point(c)
    n = 1_000_000
    rng = np.random.default_rng(SEED)
    pf_hat = simulate_detections(c, False, n, rng).mean()
    pd_hat = simulate_detections(c, True, n, rng).mean()
    z_f = (pf_hat - point.p_f) / math.sqrt(point.p_f * (1 - point.p_f) / n)
    z_d = (pd_hat - point.p_d) / math.sqrt(point.p_d * (1 - point.p_d) / n)
    elapsed = time.perf_counter() - start
    checks = {
        "pf within 1e-6": abs(point.p_f - 0.0012) <= 1e-6,
        "pd within 1e-6": abs(point.p_d - 0.7705) <= 1e-6,
        "Monte Carlo within 3 SE": abs(z_f) <= 3 and abs(z_d) <= 3,
        "runtime<10s": elapsed < 10.0,
    }
    detail = (
        f"variances ({noise:.6f}, {interference:.6f}); pf {point.p_f:.9f} pd {point.p_d:.9f}; "
        f"MC z ({z_f:.2f}, {z_d:.2f}); {elapsed:.1f} s"
    )
    verdict(3, checks, detail)
    assert all(checks.values())


def test_criterion_4_sensing_time_tradeoff(params, sensing, verdict):
    grid = np.linspace(0.01, 0.9, 90)
    rows = sweep(params, "n_fraction", grid, sensing=sensing)
    ec_n = np.array([r.ec_no_feedback for r in rows])
    ec_f = np.array([r.ec_feedback for r in rows])
    argmax = grid[int(np.argmax(ec_n))]
    at_001 = ec_f[int(np.argmin(np.abs(grid - 0.01)))]
    checks = {
        "no-feedback argmax 0.26+-0.08": abs(argmax - 0.26) <= 0.08,
        "feedback at 0.01 >= 0.95 * no-feedback max": at_001 >= 0.95 * ec_n.max(),
    }
    detail = f"argmax N/T {argmax:.2f}; feedback EC at 0.01 is {at_001 / ec_n.max():.4f} of no-feedback max"
    verdict(4, checks, detail)
    assert all(checks.values())


def _nonincreasing(values, tol=1e-12):
    values = np.asarray(values)
    return bool(np.all(np.diff(values) <= tol * np.maximum(1.0, np.abs(values[:-1]))))


def test_criterion_5_monotonicity(params, verdict):
    theta_rows = sweep(params, "theta", np.geomspace(1e-4, 1.0, 50))
    rho_rows = sweep(params, "rho", np.linspace(0.0, 1.0, 50))
    checks = {
        "EC nonincreasing in theta": _nonincreasing([r.ec_no_feedback for r in theta_rows])
        and _nonincreasing([r.ec_feedback for r in theta_rows]),
        "EC nonincreasing in rho": _nonincreasing([r.ec_no_feedback for r in rho_rows])
        and _nonincreasing([r.ec_feedback for r in rho_rows]),
        "EC(rho=1) > 0": rho_rows[-1].ec_no_feedback > 0 and rho_rows[-1].ec_feedback > 0,
        "P_avg nonincreasing in rho": _nonincreasing([r.pavg_no_feedback for r in rho_rows])
        and _nonincreasing([r.pavg_feedback for r in rho_rows]),
        "P_avg_F <= P_avg_N": all(r.pavg_feedback <= r.pavg_no_feedback + 1e-15 for r in rho_rows),
    }
    detail = (
        f"EC(rho=1) = ({rho_rows[-1].ec_no_feedback:.4f}, {rho_rows[-1].ec_feedback:.4f}); "
        f"max P_avg_F - P_avg_N {max(r.pavg_feedback - r.pavg_no_feedback for r in rho_rows):.3e}"
    )
    verdict(5, checks, detail)
    assert all(checks.values())


def test_criterion_6_simulator_consistency(params, verdict):
    start = time.perf_counter()
    batches, length = 100, 10_000
    checks, parts = {}, []
    for k, system in enumerate(System):
        model = build_chain(params, system)
        analytic = effective_capacity(model)
        traces = simulate_batches(params, system, batches, length, seed=SEED + k)
        served = np.stack([t.served_bits for t in traces])
        est = estimate_effective_capacity(served, params.theta, time_bandwidth=params.time_bandwidth)
        gap = abs(est.point - analytic.ec_normalized)
        checks[f"{system.value} EC"] = gap <= max(0.05 * analytic.ec_normalized, est.half_width_95)

        occ = occupancy_by_batch(traces, model.size)
        pi = analytic.stationary
        batch_se = occ.std(axis=0, ddof=1) / math.sqrt(batches)
        binomial_se = np.sqrt(pi * (1 - pi) / (batches * length))
        se = np.maximum(batch_se, binomial_se)
        z = np.divide(occ.mean(axis=0) - pi, se, out=np.zeros_like(pi), where=se > 0)
        checks[f"{system.value} occupancy 3 sigma"] = bool(np.all(np.abs(z) <= 3.0))

        power = float(np.mean([t.power.mean() for t in traces]))
        checks[f"{system.value} power 1%"] = abs(power - analytic.avg_power) <= 0.01 * analytic.avg_power
        parts.append(
            f"{system.value}: EC {est.point:.5f} vs {analytic.ec_normalized:.5f} (+-{est.half_width_95:.5f}), "
            f"max |z| {np.max(np.abs(z)):.2f}, power {power:.5f} vs {analytic.avg_power:.5f}"
        )
    elapsed = time.perf_counter() - start
    checks["runtime<120s"] = elapsed < 120.0
    verdict(6, checks, "; ".join(parts) + f"; {elapsed:.1f} s")
    assert all(checks.values())


def test_criterion_7_queue_tail(params, verdict):
    checks, parts = {}, []
    for theta in (0.005, 0.02):
        p = params.replace(theta=theta)
        for k, system in enumerate(System):
            arrival = effective_capacity(build_chain(p, system)).ec_bits_per_frame
            est = estimate_queue_tail_exponent(p, system, arrival, 2_000_000, seed=SEED + 10 * k + int(theta * 1000))
            rel = abs(est.point - theta) / theta
            checks[f"{system.value} theta={theta}"] = rel <= 0.15
            parts.append(f"{system.value} theta={theta}: {est.point:.5f} ({rel:.1%})")
    verdict(7, checks, "; ".join(parts))
    assert all(checks.values())


def test_criterion_8_degenerate_limits(params, verdict):
    quiet = params.replace(pr_nack_low=0.0, pr_nack_high=0.0)
    gaps = [abs(f.ec_normalized - n.ec_normalized) for n, f in (ec_pair(quiet, appendix_k1=k) for k in (False, True))]

    rel = []
    for model in (build_no_feedback_chain(params), build_feedback_chain(params)):
        ec = effective_capacity(model, 1e-8).ec_normalized
        rate = mean_service_rate(model)
        rel.append(abs(ec - rate) / rate)

    idle = params.replace(rho=0.0, pf=0.0)
    q4 = on_probability(4, idle)
    sp = q4 * math.exp(-idle.theta * idle.r2 * idle.data_time) + 1.0 - q4
    closed = -math.log(sp) / idle.theta / idle.time_bandwidth
    collapse = [abs(r.ec_normalized - closed) / closed for r in ec_pair(idle)]

    checks = {
        "no NACK: EC_F = EC_N": max(gaps) <= 1e-10,
        "theta->0 mean rate 1e-4": max(rel) <= 1e-4,
        "rho=0, pf=0 two-state": max(collapse) <= 1e-10,
    }
    detail = f"no-NACK gap {max(gaps):.1e}; small-theta rel {max(rel):.1e}; two-state rel {max(collapse):.1e}"
    verdict(8, checks, detail)
    assert all(checks.values())
