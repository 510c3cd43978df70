"""Effective capacity of the secondary link.

EC(theta) = -ln sp(Phi(-theta) R) / theta, in bits per frame, and normalized
by ``T * B`` to bits/sec/Hz. The closed-form route reduces the Perron root to
the positive root of a quadratic; both routes are exposed so they can check
each other.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .markov import (
    MarkovModel,
    System,
    SystemParams,
    base_probabilities,
    build_chain,
    build_feedback_chain,
    build_no_feedback_chain,
    mgf_weighted_matrix,
    on_probability,
)
from .numerics import (
    QuadraticCoefficients,
    positive_quadratic_root,
    spectral_radius,
    stationary_distribution,
)
from .sensing import SensingConfig

__all__ = [
    "ECResult",
    "RateSearchResult",
    "SweepRow",
    "DrawRecord",
    "ConventionSummary",
    "TheoremReport",
    "effective_capacity",
    "mean_service_bits",
    "mean_service_rate",
    "appendix_quadratic_coefficients",
    "average_power",
    "ec_pair",
    "retransmission_mgfs",
    "random_system_params",
    "verify_theorem_1",
    "optimize_rates",
    "sweep",
    "SWEEP_VARIABLES",
]

_SP_TOL = 1e-9


@dataclass(frozen=True)
class ECResult:
    spectral_radius: float
    ec_bits_per_frame: float
    ec_normalized: float
    method: str
    stationary: np.ndarray
    avg_power: float
    theta: float
    system: System


def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not theta > 0.0:
        raise ValueError(f"theta must be positive, got {theta}")
    return theta


def effective_capacity(
    model: MarkovModel, theta: float | None = None, method: str = "power_iteration"
) -> ECResult:
    """Effective capacity of ``model`` at QoS exponent ``theta``.

    Args:
        model: Chain from ``build_no_feedback_chain``/``build_feedback_chain``.
        theta: QoS exponent per bit; defaults to ``model.params.theta``.
        method: ``"power_iteration"`` or ``"quadratic"`` (closed form; the
            feedback chain must use the ``appendix_k1`` convention).

    Raises:
        ValueError: ``theta <= 0`` or an unknown method.
        ArithmeticError: spectral radius above one, which no valid chain can
            produce.
    """
    theta = _check_theta(model.params.theta if theta is None else theta)
    if method == "power_iteration":
        sp = spectral_radius(mgf_weighted_matrix(model, theta))
    elif method == "quadratic":
        sp = positive_quadratic_root(appendix_quadratic_coefficients(model, theta))
    else:
        raise ValueError(f"unknown method {method!r}")
    if sp >= 1.0 + _SP_TOL:
        raise ArithmeticError(f"spectral radius {sp!r} exceeds one; inconsistent model")
    if sp <= 0.0:
        raise ArithmeticError("spectral radius underflowed to zero")
    bits = max(0.0, -math.log(min(sp, 1.0)) / theta)
    pi = stationary_distribution(model.R)
    return ECResult(
        spectral_radius=sp,
        ec_bits_per_frame=bits,
        ec_normalized=bits / model.params.time_bandwidth,
        method=method,
        stationary=pi,
        avg_power=float(pi @ model.powers),
        theta=theta,
        system=model.tag,
    )


def mean_service_bits(model: MarkovModel) -> float:
    """Stationary mean bits per frame, the theta -> 0 limit of EC."""
    return float(stationary_distribution(model.R) @ model.effective_bits)


def mean_service_rate(model: MarkovModel) -> float:
    return mean_service_bits(model) / model.params.time_bandwidth


def average_power(model: MarkovModel) -> float:
    """Stationary average transmit power of the secondary user."""
    return float(stationary_distribution(model.R) @ model.powers)


def appendix_quadratic_coefficients(model: MarkovModel, theta: float | None = None) -> QuadraticCoefficients:
    """Coefficients of ``lam**2 - a lam - b = 0`` whose positive root is sp(Phi R).

    Every column 1..8 of ``Phi R`` is ``p_j`` times the same weight vector,
    so eliminating the left-eigenvector entries of the retransmission states
    leaves a quadratic. ``a`` is shared by both chains; ``b`` collects the
    NACK-column mass.

    Raises:
        ValueError: feedback chain not built with ``appendix_k1=True``.
    """
    theta = model.params.theta if theta is None else float(theta)
    if model.tag is System.FEEDBACK and not model.appendix_k1:
        raise ValueError("the quadratic reduction needs the feedback chain built with appendix_k1=True")
    params = model.params
    p1, p2, p3, p4, p5, p6, p7, p8 = base_probabilities(params)
    a1 = 1.0 - params.pr_nack_low
    a2 = 1.0 - params.pr_nack_high
    phi = model.phi(theta)
    k1, k2 = phi[0], phi[2]
    P = model.R

    a = a1 * k1 * p1 + a1 * p2 + a2 * k2 * p3 + a2 * p4 + k1 * p5 + p6 + k2 * p7 + p8

    # Rows 1..4 of R in 1-based notation; P[i - 1, j - 1] is p_{i,j}.
    def p_(i, j):
        return P[i - 1, j - 1]

    if model.tag is System.NO_FEEDBACK:
        b = (
            (k1 * k1 * p_(1, 9) + k1 * p_(1, 10) + k1 * k2 * p_(1, 11) + k1 * p_(1, 12)) * p1
            + (k1 * p_(2, 9) + p_(2, 10) + k2 * p_(2, 11) + p_(2, 12)) * p2
            + (k1 * k2 * p_(3, 9) + k2 * p_(3, 10) + k2 * k2 * p_(3, 11) + k2 * p_(3, 12)) * p3
            + (k1 * p_(4, 9) + p_(4, 10) + k2 * p_(4, 11) + p_(4, 12)) * p4
        )
    else:
        b = (
            (k1 * k1 * p_(1, 9) + k1 * p_(1, 10)) * p1
            + (k1 * p_(2, 9) + p_(2, 10)) * p2
            + (k1 * k2 * p_(3, 9) + k2 * p_(3, 10)) * p3
            + (k1 * p_(4, 9) + p_(4, 10)) * p4
        )
    return QuadraticCoefficients(float(a), float(b), model.tag.value)


def retransmission_mgfs(params: SystemParams, appendix_k1: bool = True) -> tuple[float, float]:
    """Expected per-frame MGF of a retransmission slot at each setting.

    Returns ``(g_low, g_high)``: ``E[exp(-theta * bits)]`` for a frame sent
    at ``(P1, r1)`` and at ``(P2, r2)`` into a busy channel. The quadratic
    coefficients obey

        b_no_feedback - b_feedback = (1 - pd) * (g_high - g_low) * sum_i p_i k_i nack_i

    over the four fresh busy-channel states, so under the ``appendix_k1``
    convention the feedback system wins exactly when ``g_low <= g_high``.
    """
    theta = params.theta
    low_time = params.data_time if appendix_k1 else params.slot_duration
    q1 = on_probability(1, params)
    q2 = on_probability(2, params)
    g_low = 1.0 - q1 * (1.0 - math.exp(-theta * params.r1 * low_time))
    g_high = 1.0 - q2 * (1.0 - math.exp(-theta * params.r2 * params.data_time))
    return g_low, g_high


def ec_pair(params: SystemParams, theta: float | None = None, appendix_k1: bool = False) -> tuple[ECResult, ECResult]:
    """(no-feedback, feedback) effective capacities at one parameter point."""
    n = effective_capacity(build_no_feedback_chain(params), theta)
    f = effective_capacity(build_feedback_chain(params, appendix_k1=appendix_k1), theta)
    return n, f


# Randomized parameter draws -------------------------------------------------

PARAM_FIELDS = tuple(f.name for f in fields(SystemParams))


def random_system_params(
    rng: np.random.Generator, base: SystemParams | None = None, pinned=()
) -> SystemParams:
    """Draw a valid SystemParams over broad, physically consistent ranges.

    SNRs are built from a reference SNR, a power ratio ``P2/P1`` and an
    interference-to-noise ratio, so the four levels keep their physical
    ordering. Fields named in ``pinned`` are copied from ``base``.
    """
    T = rng.uniform(0.01, 1.0)
    B = 10.0 ** rng.uniform(2.0, 4.0)
    spectral = np.sort(rng.uniform(0.05, 8.0, size=2))
    pf = rng.uniform(0.0, 0.5)
    nack = np.sort(rng.uniform(0.0, 1.0, size=2))
    p1 = 10.0 ** rng.uniform(-1.0, 1.0)
    power_ratio = 10.0 ** (rng.uniform(0.0, 10.0) / 10.0)
    interference_ratio = 10.0 ** (rng.uniform(0.0, 30.0) / 10.0)
    snr3 = 10.0 ** (rng.uniform(-5.0, 40.0) / 10.0)
    snr4 = snr3 * power_ratio
    drawn = dict(
        rho=rng.uniform(0.0, 1.0),
        theta=10.0 ** rng.uniform(-4.0, -1.0),
        slot_duration=T,
        sensing_duration=T * rng.uniform(0.01, 0.99),
        bandwidth=B,
        r1=spectral[0] * B,
        r2=spectral[1] * B,
        p1=p1,
        p2=p1 * power_ratio,
        snr=(snr3 / interference_ratio, snr4 / interference_ratio, snr3, snr4),
        pr_nack_low=nack[0],
        pr_nack_high=nack[1],
        fading_mean=10.0 ** rng.uniform(-0.3, 0.3),
        pf=pf,
        pd=rng.uniform(pf, 1.0),
        threshold_mode="paper",
    )
    if pinned:
        if base is None:
            raise ValueError("pinned fields need a base SystemParams")
        names = PARAM_FIELDS if pinned == "all" else tuple(pinned)
        for name in names:
            if name not in PARAM_FIELDS:
                raise ValueError(f"unknown SystemParams field {name!r}")
            drawn[name] = getattr(base, name)
        # keep order constraints valid after pinning a subset
        if drawn["pr_nack_low"] > drawn["pr_nack_high"]:
            drawn["pr_nack_low"], drawn["pr_nack_high"] = drawn["pr_nack_high"], drawn["pr_nack_low"]
        if not drawn["sensing_duration"] < drawn["slot_duration"]:
            drawn["sensing_duration"] = drawn["slot_duration"] * rng.uniform(0.01, 0.99)
        if drawn["r1"] > drawn["r2"]:
            drawn["r1"], drawn["r2"] = drawn["r2"], drawn["r1"]
        if drawn["p1"] > drawn["p2"]:
            drawn["p1"], drawn["p2"] = drawn["p2"], drawn["p1"]
        if drawn["pd"] < drawn["pf"]:
            drawn["pd"], drawn["pf"] = drawn["pf"], drawn["pd"]
    return SystemParams(**drawn)


# Theorem check ---------------------------------------------------------------

CONVENTIONS = ("appendix_k1", "strict")


@dataclass(frozen=True)
class DrawRecord:
    index: int
    params: SystemParams
    ec_no_feedback: float
    ec_feedback: dict
    coefficients_no_feedback: QuadraticCoefficients
    coefficients_feedback: QuadraticCoefficients

    def margin(self, convention: str) -> float:
        """Relative EC gain of the feedback system, ``EC_F / EC_N - 1``.

        Falls back to the plain difference when ``EC_N`` is at round-off
        level, where the ratio carries no information.
        """
        f = self.ec_feedback[convention]
        if self.ec_no_feedback > 1e-12:
            return f / self.ec_no_feedback - 1.0
        return f - self.ec_no_feedback


@dataclass
class ConventionSummary:
    convention: str
    violations: list = field(default_factory=list)
    worst_margin: float = math.inf
    worst_index: int = -1

    @property
    def violation_count(self) -> int:
        return len(self.violations)


@dataclass
class TheoremReport:
    trials: int
    seed: int
    records: list
    conventions: dict
    b_violations: list
    a_mismatches: list

    @property
    def passed(self) -> bool:
        return self.conventions["appendix_k1"].violation_count == 0


def _evaluate_draw(params: SystemParams, index: int) -> DrawRecord:
    n_model = build_no_feedback_chain(params)
    f_k1 = build_feedback_chain(params, appendix_k1=True)
    f_strict = build_feedback_chain(params, appendix_k1=False)
    ec_n = effective_capacity(n_model).ec_normalized
    ec_f = {
        "appendix_k1": effective_capacity(f_k1).ec_normalized,
        "strict": effective_capacity(f_strict).ec_normalized,
    }
    return DrawRecord(
        index,
        params,
        ec_n,
        ec_f,
        appendix_quadratic_coefficients(n_model),
        appendix_quadratic_coefficients(f_k1),
    )


def _draw(index: int, seed: int, base, pinned) -> DrawRecord:
    rng = np.random.default_rng([seed, index])
    if pinned == "all":
        params = base
    else:
        params = random_system_params(rng, base, pinned)
    return _evaluate_draw(params, index)


def _draw_chunk(args) -> list:
    indices, seed, base, pinned = args
    return [_draw(i, seed, base, pinned) for i in indices]


def verify_theorem_1(
    params: SystemParams | None = None,
    trials: int = 10_000,
    rng_seed: int = 0,
    pinned=(),
    workers: int = 1,
    ec_tol: float = 1e-10,
) -> TheoremReport:
    """Check EC_F >= EC_N and b' >= b'' over randomized parameter draws.

    Draw ``i`` uses the generator ``default_rng([rng_seed, i])``, so results
    do not depend on ``workers``. With ``pinned="all"`` every trial evaluates
    ``params`` itself.

    Both MGF conventions for the feedback NACK slot are evaluated; only the
    ``appendix_k1`` one decides ``report.passed``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    indices = list(range(trials))
    if workers > 1:
        chunks = [(indices[k::workers], rng_seed, params, pinned) for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for chunk in pool.map(_draw_chunk, chunks) for r in chunk]
        records.sort(key=lambda r: r.index)
    else:
        records = _draw_chunk((indices, rng_seed, params, pinned))

    summaries = {c: ConventionSummary(c) for c in CONVENTIONS}
    b_violations = []
    a_mismatches = []
    for rec in records:
        for conv, summary in summaries.items():
            gap = rec.ec_feedback[conv] - rec.ec_no_feedback
            if gap < -ec_tol * max(1.0, abs(rec.ec_no_feedback)):
                summary.violations.append(rec)
            m = rec.margin(conv)
            if m < summary.worst_margin:
                summary.worst_margin = m
                summary.worst_index = rec.index
        qn, qf = rec.coefficients_no_feedback, rec.coefficients_feedback
        if qn.b < qf.b - 1e-12 * max(qn.b, qf.b):
            b_violations.append(rec)
        if abs(qn.a - qf.a) > 1e-12 * max(1.0, qn.a):
            a_mismatches.append(rec)
    return TheoremReport(trials, rng_seed, records, summaries, b_violations, a_mismatches)


# Rate search -----------------------------------------------------------------


@dataclass(frozen=True)
class RateSearchResult:
    r1_opt: float
    r2_opt: float
    ec_opt: float
    grid_spec: dict
    system: System
    evaluations: int


def _axis(lo: float, hi: float, points: int) -> np.ndarray:
    if hi < lo:
        raise ValueError(f"empty range ({lo}, {hi})")
    if points < 1:
        raise ValueError("resolution must be >= 1")
    if lo == hi or points == 1:
        return np.array([float(lo)])
    return np.linspace(lo, hi, points)


def _grid_best(params, system, theta, appendix_k1, r1s, r2s, best, seen):
    for r1 in r1s:
        for r2 in r2s:
            if not r1 < r2:
                continue
            key = (float(r1), float(r2))
            if key in seen:
                continue
            model = build_chain(params.replace(r1=key[0], r2=key[1]), system, appendix_k1)
            ec = effective_capacity(model, theta).ec_normalized
            seen[key] = ec
            if best is None or ec > best[2]:
                best = (key[0], key[1], ec)
    return best


def optimize_rates(
    params: SystemParams,
    theta: float | None = None,
    r1_range: tuple[float, float] = (100.0, 5000.0),
    r2_range: tuple[float, float] = (1000.0, 50000.0),
    resolution: int = 50,
    system: System | str = System.NO_FEEDBACK,
    appendix_k1: bool = False,
    refine: bool = True,
) -> RateSearchResult:
    """Grid search for the EC-maximizing ``(r1, r2)`` subject to ``r1 < r2``.

    A coarse ``resolution x resolution`` grid is followed by one pass on a
    grid ten times finer spanning one coarse step either side of the
    incumbent.

    Raises:
        ValueError: no grid point satisfies ``r1 < r2``.
    """
    system = System(system)
    theta = _check_theta(params.theta if theta is None else theta)
    r1s = _axis(*r1_range, resolution)
    r2s = _axis(*r2_range, resolution)
    seen: dict = {}
    best = _grid_best(params, system, theta, appendix_k1, r1s, r2s, None, seen)
    if best is None:
        raise ValueError("rate grid has no point with r1 < r2")
    if refine:
        step1 = r1s[1] - r1s[0] if len(r1s) > 1 else 0.0
        step2 = r2s[1] - r2s[0] if len(r2s) > 1 else 0.0
        f1 = _axis(max(r1_range[0], best[0] - step1), min(r1_range[1], best[0] + step1), 21 if step1 else 1)
        f2 = _axis(max(r2_range[0], best[1] - step2), min(r2_range[1], best[1] + step2), 21 if step2 else 1)
        best = _grid_best(params, system, theta, appendix_k1, f1, f2, best, seen)
    spec = {
        "r1_range": tuple(r1_range),
        "r2_range": tuple(r2_range),
        "resolution": resolution,
        "refine": refine,
        "theta": theta,
    }
    return RateSearchResult(best[0], best[1], best[2], spec, system, len(seen))


# Sweeps ------------------------------------------------------------------------

SWEEP_VARIABLES = ("theta", "rho", "n_fraction", "lambda")


@dataclass(frozen=True)
class SweepRow:
    x: float
    ec_no_feedback: float
    ec_feedback: float
    pavg_no_feedback: float
    pavg_feedback: float
    pf: float
    pd: float


def _point_params(params: SystemParams, variable: str, x: float, sensing: SensingConfig | None) -> SystemParams:
    if variable == "theta":
        return params.replace(theta=float(x))
    if variable == "rho":
        return params.replace(rho=float(x))
    if sensing is None:
        raise ValueError(f"sweeping {variable!r} needs a SensingConfig")
    if variable == "n_fraction":
        cfg = SensingConfig(
            sensing.threshold, float(x) * params.slot_duration, params.bandwidth,
            sensing.noise_var, sensing.interference_var,
        )
    else:
        cfg = SensingConfig(
            float(x), params.sensing_duration, params.bandwidth,
            sensing.noise_var, sensing.interference_var,
        )
    return params.with_sensing(cfg)


def sweep(
    params: SystemParams,
    variable: str,
    grid,
    sensing: SensingConfig | None = None,
    appendix_k1: bool = False,
) -> list[SweepRow]:
    """Both systems' EC and average power along one parameter.

    ``variable`` is one of ``theta``, ``rho``, ``n_fraction`` (sensing time
    as a fraction of the slot) or ``lambda`` (detector threshold). The last
    two recompute ``pf``/``pd`` from ``sensing`` at every grid point.
    """
    if variable not in SWEEP_VARIABLES:
        raise ValueError(f"variable must be one of {SWEEP_VARIABLES}, got {variable!r}")
    rows = []
    for x in grid:
        p = _point_params(params, variable, x, sensing)
        n, f = ec_pair(p, appendix_k1=appendix_k1)
        rows.append(SweepRow(float(x), n.ec_normalized, f.ec_normalized, n.avg_power, f.avg_power, p.pf, p.pd))
    return rows
