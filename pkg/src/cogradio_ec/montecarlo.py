"""Slot-level simulation of the secondary link.

Frames are generated in bulk with numpy. The only sequential coupling is the
primary retransmission: a NACK in a fresh busy slot forces the next slot busy,
and a retransmission slot never draws a NACK of its own. Within a run of
consecutive NACK candidates the retransmission flag therefore alternates,
which lets the whole trace be built without a Python-level loop.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .capacity import mean_service_bits
from .markov import System, SystemParams, build_chain, on_threshold
from .sensing import SensingConfig, simulate_detections

__all__ = [
    "SimEstimate",
    "SlotOutcome",
    "SlotTrace",
    "simulate_service",
    "simulate_batches",
    "occupancy_by_batch",
    "estimate_effective_capacity",
    "estimate_queue_tail_exponent",
    "queue_lengths",
]

PU_IDLE, PU_BUSY, PU_RETX = 0, 1, 2
SENSE_IDLE, SENSE_BUSY, SENSE_SKIPPED = 0, 1, 2
FB_NONE, FB_ACK, FB_NACK = 0, 1, 2

_PU_NAMES = ("idle", "busy", "retransmitting")
_SENSE_NAMES = ("idle", "busy", "skipped")
_FB_NAMES = ("none", "ack", "nack")

MIN_BATCHES = 30


@dataclass(frozen=True)
class SimEstimate:
    point: float
    half_width_95: float
    frames: int
    batches: int
    seed: int
    censored: bool = False
    degenerate_batches: int = 0

    @property
    def interval(self) -> tuple[float, float]:
        return self.point - self.half_width_95, self.point + self.half_width_95


@dataclass(frozen=True)
class SlotOutcome:
    pu_state: str
    sensing: str
    su_rate: float
    su_power: float
    channel_on: bool
    served_bits: float
    feedback: str


@dataclass(frozen=True)
class SlotTrace:
    """Per-frame arrays of one simulated run; ``state`` is the 1-based chain state."""

    system: System
    seed: object
    state: np.ndarray
    pu_state: np.ndarray
    sensing: np.ndarray
    channel_on: np.ndarray
    rate: np.ndarray
    power: np.ndarray
    served_bits: np.ndarray
    feedback: np.ndarray

    def __len__(self) -> int:
        return len(self.state)

    def outcome(self, i: int) -> SlotOutcome:
        return SlotOutcome(
            _PU_NAMES[self.pu_state[i]],
            _SENSE_NAMES[self.sensing[i]],
            float(self.rate[i]),
            float(self.power[i]),
            bool(self.channel_on[i]),
            float(self.served_bits[i]),
            _FB_NAMES[self.feedback[i]],
        )


def _retransmission_flags(candidate: np.ndarray) -> np.ndarray:
    # retx[t + 1] = candidate[t] and not retx[t], with retx[0] = False.
    n = len(candidate)
    idx = np.arange(n)
    run_start = np.maximum.accumulate(np.where(candidate, 0, idx + 1))
    fires = candidate & ((idx - run_start) % 2 == 0)
    retx = np.zeros(n, dtype=bool)
    retx[1:] = fires[:-1]
    return retx


def simulate_service(
    params: SystemParams,
    system: System | str,
    frames: int,
    seed,
    sensing: SensingConfig | None = None,
    appendix_k1: bool = False,
) -> SlotTrace:
    """Simulate ``frames`` consecutive slots of one system.

    Args:
        params: Model parameters; ``pf``/``pd`` drive Bernoulli sensing.
        system: ``"no_feedback"`` or ``"feedback"``.
        frames: Number of slots.
        seed: Anything ``np.random.default_rng`` accepts.
        sensing: If given, every sensing decision runs the sample-level
            energy detector instead of the Bernoulli draw.
        appendix_k1: Credit NACK slots with ``r1 * (T - N)`` bits instead of
            ``r1 * T``.
    """
    system = System(system)
    if frames < 1:
        raise ValueError("frames must be >= 1")
    rng = np.random.default_rng(seed)
    fresh_busy = rng.random(frames) < params.rho
    u_sense = rng.random(frames)
    z = params.fading.sample(rng, frames)
    u_nack = rng.random(frames)

    if sensing is None:
        sensed_fresh = u_sense < np.where(fresh_busy, params.pd, params.pf)
    else:
        sensed_fresh = np.empty(frames, dtype=bool)
        sensed_fresh[fresh_busy] = simulate_detections(sensing, True, int(fresh_busy.sum()), rng)
        sensed_fresh[~fresh_busy] = simulate_detections(sensing, False, int((~fresh_busy).sum()), rng)

    nack_prob = np.where(sensed_fresh, params.pr_nack_low, params.pr_nack_high)
    candidate = fresh_busy & (u_nack < nack_prob)
    retx = _retransmission_flags(candidate)
    pu_busy = fresh_busy | retx

    if sensing is None:
        sensed = u_sense < np.where(pu_busy, params.pd, params.pf)
    else:
        sensed = sensed_fresh.copy()
        extra = retx & ~fresh_busy
        sensed[extra] = simulate_detections(sensing, True, int(extra.sum()), rng)

    # ON-threshold level: 1 busy/detected, 2 busy/missed, 3 false alarm, 4 idle/idle
    level = np.where(pu_busy, np.where(sensed, 1, 2), np.where(sensed, 3, 4))
    nack_slot = retx if system is System.FEEDBACK else np.zeros(frames, dtype=bool)
    level = np.where(nack_slot, 1, level)

    alpha = np.array([on_threshold(l, params) for l in (1, 2, 3, 4)])
    on = z > alpha[level - 1]
    low = (level == 1) | (level == 3)
    rate = np.where(low, params.r1, params.r2)
    power = np.where(low, params.p1, params.p2)
    duration = np.full(frames, params.data_time)
    if not appendix_k1:
        duration[nack_slot] = params.slot_duration
    served = np.where(on, rate * duration, 0.0)

    state = 2 * level - 1 + (~on)
    retx_states = retx & ~nack_slot
    state = np.where(retx_states, np.where(level == 1, 9, 11) + (~on), state)
    state = np.where(nack_slot, 9 + (~on), state)

    pu_state = np.where(retx, PU_RETX, np.where(fresh_busy, PU_BUSY, PU_IDLE))
    sense_code = np.where(nack_slot, SENSE_SKIPPED, np.where(sensed, SENSE_BUSY, SENSE_IDLE))
    nack_now = candidate & ~retx
    feedback = np.where(pu_busy, np.where(nack_now, FB_NACK, FB_ACK), FB_NONE)

    return SlotTrace(
        system=system,
        seed=seed,
        state=state.astype(np.int8),
        pu_state=pu_state.astype(np.int8),
        sensing=sense_code.astype(np.int8),
        channel_on=on,
        rate=rate,
        power=power,
        served_bits=served,
        feedback=feedback.astype(np.int8),
    )


def simulate_batches(
    params: SystemParams,
    system: System | str,
    batches: int,
    batch_length: int,
    seed: int,
    sensing: SensingConfig | None = None,
    appendix_k1: bool = False,
) -> list[SlotTrace]:
    """Independent restarts; batch ``k`` runs on the ``k``-th spawned seed."""
    children = np.random.SeedSequence(seed).spawn(batches)
    return [
        simulate_service(params, system, batch_length, child, sensing, appendix_k1)
        for child in children
    ]


def occupancy_by_batch(traces: list[SlotTrace], states: int) -> np.ndarray:
    """Fraction of frames spent in each state, one row per batch."""
    out = np.empty((len(traces), states))
    for k, tr in enumerate(traces):
        counts = np.bincount(tr.state.astype(np.int64) - 1, minlength=states)
        out[k] = counts / len(tr)
    return out


def _as_batches(service, batch_length) -> np.ndarray:
    arr = np.asarray(service, dtype=float)
    if arr.ndim == 1:
        if batch_length is None:
            raise ValueError("a 1-D trace needs batch_length")
        k = len(arr) // int(batch_length)
        arr = arr[: k * int(batch_length)].reshape(k, int(batch_length))
    elif arr.ndim != 2:
        raise ValueError("service must be a 1-D trace or a 2-D (batch, frame) array")
    return arr


def _window_log_sums(batch: np.ndarray, theta: float, window: int) -> tuple[float, int]:
    c = np.concatenate(([0.0], np.cumsum(batch)))
    s = c[window:] - c[:-window]
    return float(logsumexp(-theta * s)), len(s)


def estimate_effective_capacity(
    service,
    theta: float,
    batch_length: int | None = None,
    time_bandwidth: float = 1.0,
    window: int = 6,
    burn_in: int = 10,
    bootstrap: int = 1000,
    seed: int = 0,
) -> SimEstimate:
    """Empirical effective capacity from served-bit batches.

    The log-MGF rate is estimated as the increment
    ``ln E[exp(-theta S_{w+1})] - ln E[exp(-theta S_w)]`` over sliding
    windows of ``w`` and ``w + 1`` frames, pooled across batches. For a
    Markov-modulated service the increment converges to the rate
    geometrically in ``w``, while the window expectations stay estimable;
    averaging ``exp(-theta S)`` over whole long batches does not, because it
    is dominated by events too rare to observe.

    Args:
        service: 2-D ``(batch, frame)`` array, or a 1-D trace cut into
            ``batch_length`` pieces.
        theta: QoS exponent per bit.
        time_bandwidth: Divisor turning bits per frame into bits/sec/Hz.
        window: Window length ``w`` in frames.
        burn_in: Frames dropped at the start of every batch.
        bootstrap: Resamples over batches for the 95% half-width.

    Raises:
        ValueError: ``theta <= 0`` or fewer than 30 batches.
    """
    if not theta > 0.0:
        raise ValueError("theta must be positive")
    arr = _as_batches(service, batch_length)
    k = arr.shape[0]
    if k < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches, got {k}")
    arr = arr[:, burn_in:]
    if arr.shape[1] < window + 2:
        raise ValueError("batches are too short for the window length")
    degenerate = int(np.sum(np.all(arr == 0.0, axis=1)))
    if degenerate:
        warnings.warn(f"{degenerate} batch(es) delivered no service", RuntimeWarning, stacklevel=2)

    lw = np.empty(k)
    lw1 = np.empty(k)
    nw = np.empty(k)
    nw1 = np.empty(k)
    for b in range(k):
        lw[b], nw[b] = _window_log_sums(arr[b], theta, window)
        lw1[b], nw1[b] = _window_log_sums(arr[b], theta, window + 1)

    def rate(idx):
        return (logsumexp(lw1[idx], axis=-1) - np.log(nw1[idx].sum(axis=-1))) - (
            logsumexp(lw[idx], axis=-1) - np.log(nw[idx].sum(axis=-1))
        )

    point = -float(rate(np.arange(k))) / theta / time_bandwidth
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, k, size=(bootstrap, k))
    boot = -rate(idx) / theta / time_bandwidth
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return SimEstimate(
        point=point,
        half_width_95=float(max(hi - lo, 0.0) / 2.0),
        frames=int(arr.size + k * burn_in),
        batches=k,
        seed=seed,
        degenerate_batches=degenerate,
    )


def queue_lengths(service: np.ndarray, arrival: float) -> np.ndarray:
    """Backlog after each frame for constant ``arrival`` bits/frame, starting empty."""
    w = np.cumsum(arrival - np.asarray(service, dtype=float))
    return w - np.minimum(np.minimum.accumulate(w), 0.0)


def _tail_slope(q: np.ndarray, grid: np.ndarray) -> float | None:
    qs = np.sort(q)
    ccdf = 1.0 - np.searchsorted(qs, grid, side="left") / len(qs)
    if np.any(ccdf <= 0.0):
        return None
    slope, _ = np.polyfit(grid, np.log(ccdf), 1)
    return -float(slope)


def estimate_queue_tail_exponent(
    params: SystemParams,
    system: System | str,
    arrival_rate: float,
    frames: int,
    seed: int,
    fit_range: tuple[float, float] = (1e-4, 1e-1),
    segments: int = 10,
    min_tail: int = 20,
    appendix_k1: bool = False,
) -> SimEstimate:
    """Decay rate of Pr(Q >= q) for a queue fed at ``arrival_rate`` bits/frame.

    The slope of ``ln Pr(Q >= q)`` is fitted between the backlog quantiles
    at tail probabilities ``fit_range[1]`` and ``fit_range[0]``. The
    half-width comes from refitting on ``segments`` contiguous pieces of the
    run over the same backlog range.

    If the queue is empty with probability above ``1 - fit_range[1]`` the
    tail is too light to fit; the result is ``censored`` with
    ``point = inf``.

    Raises:
        ValueError: arrival rate at or above the mean service rate, or too
            few samples beyond the deep end of the fit range.
    """
    system = System(system)
    model = build_chain(params, system, appendix_k1)
    mean_bits = mean_service_bits(model)
    if not arrival_rate < mean_bits:
        raise ValueError(f"queue unstable: arrival {arrival_rate} >= mean service {mean_bits}")
    trace = simulate_service(params, system, frames, seed, appendix_k1=appendix_k1)
    q = queue_lengths(trace.served_bits, arrival_rate)
    q = q[frames // 100 :]
    p_lo, p_hi = fit_range
    if np.mean(q > 0.0) < p_hi:
        return SimEstimate(math.inf, 0.0, frames, 1, seed, censored=True)
    q_start = float(np.quantile(q, 1.0 - p_hi))
    q_end = float(np.quantile(q, 1.0 - p_lo))
    if np.sum(q >= q_end) < min_tail or q_end <= q_start:
        raise ValueError("insufficient tail samples; increase frames")
    grid = np.linspace(q_start, q_end, 40)
    point = _tail_slope(q, grid)

    pieces = [s for s in (_tail_slope(part, grid) for part in np.array_split(q, segments)) if s is not None]
    if len(pieces) >= 2:
        half = float(stats.t.ppf(0.975, len(pieces) - 1) * np.std(pieces, ddof=1) / math.sqrt(len(pieces)))
    else:
        half = math.inf
    return SimEstimate(point, half, frames, max(len(pieces), 1), seed)
