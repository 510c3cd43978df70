"""Markov chains of the secondary link, with and without primary feedback.

States 1-8 cover the four sensing outcomes (busy/busy, misdetection, false
alarm, idle/idle), each split into channel ON and OFF. The no-feedback chain
adds four primary-retransmission states (9-12: detected/undetected, ON/OFF);
the feedback-aided chain replaces them with two NACK-slot states (9, 10) in
which the secondary skips sensing and sends at the low power and rate for
the whole frame.

Only the transitions into states 1-3 and 9-12 are written out in the source
model. The remaining rows are completed by the same pattern: every
fresh-slot row carries the base probabilities ``p_1..p_8`` over columns 1-8,
scaled by ``1 - Pr(NACK)`` for the rows where the primary was transmitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .sensing import SensingConfig, detection_probability, false_alarm_probability

__all__ = [
    "System",
    "ExponentialFading",
    "SystemParams",
    "StateDescriptor",
    "MarkovModel",
    "on_threshold",
    "on_probability",
    "base_probabilities",
    "build_no_feedback_chain",
    "build_feedback_chain",
    "build_chain",
    "mgf_weighted_matrix",
]

_ROW_TOL = 1e-12


class System(str, Enum):
    NO_FEEDBACK = "no_feedback"
    FEEDBACK = "feedback"


@dataclass(frozen=True)
class ExponentialFading:
    """Power gain ``z = |h|**2`` exponentially distributed with the given mean."""

    mean: float = 1.0

    def tail(self, alpha: float) -> float:
        if alpha <= 0.0:
            return 1.0
        return math.exp(-alpha / self.mean)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.exponential(self.mean, size=size)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Scalar parameters of the two-link model.

    ``snr`` holds the four linear SNRs in the order busy/P1, busy/P2,
    idle/P1, idle/P2. ``threshold_mode="paper"`` uses ON thresholds
    ``2**(r/B) / SNR``; ``"exact"`` uses the Shannon-consistent
    ``(2**(r/B) - 1) / SNR``.
    """

    rho: float = 0.7
    theta: float = 0.02
    slot_duration: float = 0.1
    sensing_duration: float = 0.026
    bandwidth: float = 1000.0
    r1: float = 1000.0
    r2: float = 10000.0
    p1: float = 1.0
    p2: float = 2.0
    snr: tuple[float, float, float, float] = field(
        default=(db_to_linear(6.9), db_to_linear(10.0), db_to_linear(30.7), db_to_linear(40.0))
    )
    pr_nack_low: float = 0.3
    pr_nack_high: float = 0.9
    fading_mean: float = 1.0
    pf: float = 0.0012
    pd: float = 0.7705
    threshold_mode: str = "paper"

    def __post_init__(self):
        object.__setattr__(self, "snr", tuple(float(s) for s in self.snr))
        for name in ("rho", "pf", "pd", "pr_nack_low", "pr_nack_high"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.pr_nack_low > self.pr_nack_high:
            raise ValueError("pr_nack_low must not exceed pr_nack_high")
        if not 0.0 < self.sensing_duration < self.slot_duration:
            raise ValueError("need 0 < sensing_duration < slot_duration")
        if not self.bandwidth > 0.0:
            raise ValueError("bandwidth must be positive")
        if not 0.0 <= self.r1 <= self.r2:
            raise ValueError("need 0 <= r1 <= r2")
        if not 0.0 <= self.p1 <= self.p2:
            raise ValueError("need 0 <= p1 <= p2")
        if not self.theta >= 0.0:
            raise ValueError("theta must be nonnegative")
        if len(self.snr) != 4 or any(not s > 0.0 for s in self.snr):
            raise ValueError("snr must hold four positive linear ratios")
        if not self.fading_mean > 0.0:
            raise ValueError("fading_mean must be positive")
        if self.threshold_mode not in ("paper", "exact"):
            raise ValueError(f"threshold_mode must be 'paper' or 'exact', got {self.threshold_mode!r}")

    @property
    def fading(self) -> ExponentialFading:
        return ExponentialFading(self.fading_mean)

    @property
    def data_time(self) -> float:
        return self.slot_duration - self.sensing_duration

    @property
    def time_bandwidth(self) -> float:
        return self.slot_duration * self.bandwidth

    def replace(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def with_sensing(self, sensing: SensingConfig) -> "SystemParams":
        """Copy with ``sensing_duration``, ``pf`` and ``pd`` taken from a detector."""
        return replace(
            self,
            sensing_duration=sensing.sense_duration,
            pf=false_alarm_probability(sensing),
            pd=detection_probability(sensing),
        )


@dataclass(frozen=True)
class StateDescriptor:
    index: int
    sensing_outcome: str
    channel_on: bool
    power: float
    rate: float
    effective_bits: float


@dataclass(frozen=True)
class MarkovModel:
    """Transition matrix plus per-state service.

    ``R[i, j]`` is the probability of moving from state ``i + 1`` to
    ``j + 1``; ``states[i].effective_bits`` is what state ``i + 1`` delivers
    per frame.
    """

    tag: System
    states: tuple[StateDescriptor, ...]
    R: np.ndarray
    params: SystemParams
    appendix_k1: bool = False

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def effective_bits(self) -> np.ndarray:
        return np.array([s.effective_bits for s in self.states])

    @property
    def powers(self) -> np.ndarray:
        return np.array([s.power for s in self.states])

    def phi(self, theta: float | None = None) -> np.ndarray:
        """Per-state MGF values ``exp(-theta * effective_bits)``."""
        theta = self.params.theta if theta is None else theta
        return np.exp(-theta * self.effective_bits)


def on_threshold(level: int, params: SystemParams) -> float:
    """Fading threshold above which SNR level ``level`` supports its rate."""
    if level not in (1, 2, 3, 4):
        raise ValueError(f"level must be 1..4, got {level}")
    rate = params.r1 if level in (1, 3) else params.r2
    gain = 2.0 ** (rate / params.bandwidth)
    if params.threshold_mode == "exact":
        gain -= 1.0
    return gain / params.snr[level - 1]


def on_probability(level: int, params: SystemParams) -> float:
    """Pr(z > alpha_level)."""
    return params.fading.tail(on_threshold(level, params))


def base_probabilities(params: SystemParams) -> np.ndarray:
    """``p_1..p_8``: joint probability of sensing outcome and channel state."""
    rho, pd, pf = params.rho, params.pd, params.pf
    outcome = (rho * pd, rho * (1.0 - pd), (1.0 - rho) * pf, (1.0 - rho) * (1.0 - pf))
    p = np.empty(8)
    for l in range(4):
        q = on_probability(l + 1, params)
        p[2 * l] = outcome[l] * q
        p[2 * l + 1] = outcome[l] * (1.0 - q)
    return p


_FRESH_OUTCOMES = ("BB", "MD", "FA", "II")


def _fresh_states(params: SystemParams) -> list[StateDescriptor]:
    states = []
    t = params.data_time
    for l, outcome in enumerate(_FRESH_OUTCOMES):
        low = l in (0, 2)
        power = params.p1 if low else params.p2
        rate = params.r1 if low else params.r2
        states.append(StateDescriptor(2 * l + 1, outcome, True, power, rate, rate * t))
        states.append(StateDescriptor(2 * l + 2, outcome, False, power, rate, 0.0))
    return states


def _fresh_rows(R: np.ndarray, params: SystemParams, p: np.ndarray) -> None:
    R[:, :8] = p
    R[0:2, :8] *= 1.0 - params.pr_nack_low
    R[2:4, :8] *= 1.0 - params.pr_nack_high


def _check_stochastic(R: np.ndarray, tag: System) -> None:
    err = np.max(np.abs(R.sum(axis=1) - 1.0))
    if err > _ROW_TOL or np.any(R < 0.0) or np.any(R > 1.0):
        raise AssertionError(f"{tag.value} chain is not row-stochastic (row error {err:.3e})")


def build_no_feedback_chain(params: SystemParams) -> MarkovModel:
    """12-state chain of the baseline system."""
    p = base_probabilities(params)
    q_low, q_high = on_probability(1, params), on_probability(2, params)
    pd = params.pd
    R = np.zeros((12, 12))
    _fresh_rows(R, params, p)
    nack_cols = np.array([pd * q_low, pd * (1 - q_low), (1 - pd) * q_high, (1 - pd) * (1 - q_high)])
    R[0:2, 8:12] = params.pr_nack_low * nack_cols
    R[2:4, 8:12] = params.pr_nack_high * nack_cols
    _check_stochastic(R, System.NO_FEEDBACK)

    t = params.data_time
    states = _fresh_states(params) + [
        StateDescriptor(9, "RetxBB", True, params.p1, params.r1, params.r1 * t),
        StateDescriptor(10, "RetxBB", False, params.p1, params.r1, 0.0),
        StateDescriptor(11, "RetxMD", True, params.p2, params.r2, params.r2 * t),
        StateDescriptor(12, "RetxMD", False, params.p2, params.r2, 0.0),
    ]
    return MarkovModel(System.NO_FEEDBACK, tuple(states), R, params)


def build_feedback_chain(params: SystemParams, appendix_k1: bool = False) -> MarkovModel:
    """10-state chain of the feedback-aided system.

    After an overheard NACK the secondary skips sensing and uses the whole
    frame, so state 9 delivers ``r1 * T`` bits. ``appendix_k1=True`` instead
    credits ``r1 * (T - N)``, the convention under which the closed-form
    quadratic reduction is written.
    """
    p = base_probabilities(params)
    q_low = on_probability(1, params)
    R = np.zeros((10, 10))
    _fresh_rows(R, params, p)
    nack_cols = np.array([q_low, 1 - q_low])
    R[0:2, 8:10] = params.pr_nack_low * nack_cols
    R[2:4, 8:10] = params.pr_nack_high * nack_cols
    _check_stochastic(R, System.FEEDBACK)

    nack_time = params.data_time if appendix_k1 else params.slot_duration
    states = _fresh_states(params) + [
        StateDescriptor(9, "NackSlot", True, params.p1, params.r1, params.r1 * nack_time),
        StateDescriptor(10, "NackSlot", False, params.p1, params.r1, 0.0),
    ]
    return MarkovModel(System.FEEDBACK, tuple(states), R, params, appendix_k1=appendix_k1)


def build_chain(params: SystemParams, system: System | str, appendix_k1: bool = False) -> MarkovModel:
    if System(system) is System.NO_FEEDBACK:
        return build_no_feedback_chain(params)
    return build_feedback_chain(params, appendix_k1=appendix_k1)


def mgf_weighted_matrix(model: MarkovModel, theta: float | None = None) -> np.ndarray:
    """``Phi(-theta) R``: row ``i`` of ``R`` scaled by the MGF of state ``i``."""
    return model.phi(theta)[:, None] * model.R
