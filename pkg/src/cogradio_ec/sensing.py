"""Energy-detector spectrum sensing.

Analytic false-alarm/detection probabilities for the averaged-energy test
statistic, inversion of a target operating point back to noise and primary
interference variances, and a sample-level detector for simulation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .numerics import regularized_lower_gamma

__all__ = [
    "SensingConfig",
    "SensingOperatingPoint",
    "sample_count",
    "false_alarm_probability",
    "detection_probability",
    "operating_point",
    "invert_operating_point",
    "simulate_detection",
    "simulate_detections",
]


@dataclass(frozen=True)
class SensingConfig:
    """Energy detector parameters.

    Attributes:
        threshold: Decision threshold on the averaged energy.
        sense_duration: Sensing time in seconds.
        bandwidth: Channel bandwidth in Hz.
        noise_var: Thermal noise variance per complex sample.
        interference_var: Primary-signal variance per complex sample.
    """

    threshold: float
    sense_duration: float
    bandwidth: float
    noise_var: float = 1.0
    interference_var: float = 1.0

    def __post_init__(self):
        if not self.threshold >= 0.0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if not self.sense_duration > 0.0:
            raise ValueError(f"sense_duration must be > 0, got {self.sense_duration}")
        if not self.bandwidth > 0.0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.noise_var > 0.0:
            raise ValueError(f"noise_var must be > 0, got {self.noise_var}")
        if not self.interference_var >= 0.0:
            raise ValueError(f"interference_var must be >= 0, got {self.interference_var}")
        # rounded (and warned about) once, here
        object.__setattr__(self, "_samples", sample_count(self.sense_duration, self.bandwidth))

    @property
    def samples(self) -> int:
        return self._samples


@dataclass(frozen=True)
class SensingOperatingPoint:
    p_f: float
    p_d: float

    def __post_init__(self):
        for name in ("p_f", "p_d"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


def sample_count(sense_duration: float, bandwidth: float) -> int:
    """Number of complex samples ``N*B`` in the sensing window, rounded."""
    nb = sense_duration * bandwidth
    count = max(1, int(round(nb)))
    if abs(nb - round(nb)) > 1e-9:
        warnings.warn(
            f"sensing window holds {nb:.6g} samples; rounded to {count}",
            RuntimeWarning,
            stacklevel=3,
        )
    return count


def _exceed_probability(threshold: float, variance: float, samples: int) -> float:
    if threshold == 0.0:
        return 1.0
    return 1.0 - regularized_lower_gamma(samples * threshold / variance, samples)


def false_alarm_probability(c: SensingConfig) -> float:
    """Pr(Y > threshold | channel idle)."""
    return _exceed_probability(c.threshold, c.noise_var, c.samples)


def detection_probability(c: SensingConfig) -> float:
    """Pr(Y > threshold | primary active)."""
    return _exceed_probability(c.threshold, c.noise_var + c.interference_var, c.samples)


def operating_point(c: SensingConfig) -> SensingOperatingPoint:
    return SensingOperatingPoint(false_alarm_probability(c), detection_probability(c))


def _variance_for(target: float, threshold: float, samples: int) -> float:
    # Exceedance probability is increasing in the variance; bracket then solve.
    def f(log_var: float) -> float:
        return _exceed_probability(threshold, math.exp(log_var), samples) - target

    lo, hi = math.log(threshold) - 1.0, math.log(threshold) + 1.0
    while f(lo) > 0.0:
        lo -= 2.0
    while f(hi) < 0.0:
        hi += 2.0
    return math.exp(brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def invert_operating_point(
    target: SensingOperatingPoint, threshold: float, sense_duration: float, bandwidth: float
) -> tuple[float, float]:
    """Recover ``(noise_var, interference_var)`` that produce ``target``.

    Both exceedance maps are monotone in the variance, so each variance is a
    one-dimensional root find: ``noise_var`` from ``p_f``, then the total
    variance from ``p_d``.

    Raises:
        ValueError: unless ``0 < p_f < p_d < 1`` and ``threshold > 0``.
    """
    p_f, p_d = target.p_f, target.p_d
    if not 0.0 < p_f < p_d < 1.0:
        raise ValueError(f"operating point unreachable: need 0 < p_f < p_d < 1, got ({p_f}, {p_d})")
    if not threshold > 0.0:
        raise ValueError("threshold must be positive to invert an operating point")
    samples = sample_count(sense_duration, bandwidth)
    noise = _variance_for(p_f, threshold, samples)
    total = _variance_for(p_d, threshold, samples)
    return noise, total - noise


def simulate_detections(
    c: SensingConfig,
    primary_active: bool,
    trials: int,
    rng: np.random.Generator,
    chunk: int = 100_000,
) -> np.ndarray:
    """Boolean busy decisions for ``trials`` independent sensing windows.

    Each window draws ``N*B`` circularly-symmetric complex Gaussian samples
    (real and imaginary parts of variance ``sigma**2 / 2`` each).
    """
    nb = c.samples
    var = c.noise_var + (c.interference_var if primary_active else 0.0)
    scale = math.sqrt(var / 2.0)
    out = np.empty(trials, dtype=bool)
    for start in range(0, trials, chunk):
        stop = min(trials, start + chunk)
        draws = rng.normal(0.0, scale, size=(stop - start, nb, 2))
        energy = np.einsum("ijk,ijk->i", draws, draws) / nb
        out[start:stop] = energy > c.threshold
    return out


def simulate_detection(c: SensingConfig, primary_active: bool, rng_seed) -> str:
    """One sensing decision, ``"busy"`` or ``"idle"``; deterministic in the seed."""
    rng = np.random.default_rng(rng_seed)
    busy = simulate_detections(c, primary_active, 1, rng)[0]
    return "busy" if busy else "idle"
