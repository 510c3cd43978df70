"""Experiment configuration: flat ``key = value`` files plus overrides.

SNRs are written in dB (``snr1_db`` .. ``snr4_db``) and converted to linear
scale here; nothing downstream sees dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .markov import SystemParams, db_to_linear
from .sensing import (
    SensingConfig,
    SensingOperatingPoint,
    detection_probability,
    false_alarm_probability,
    invert_operating_point,
)

__all__ = ["ConfigError", "ExperimentConfig", "KEYS", "parse_config_text", "load_config", "paper_config_path"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the file, line or field."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


# key -> (parser, default, help)
KEYS: dict[str, tuple] = {
    "rho": (float, 0.7, "prior probability the primary is busy"),
    "theta": (float, 0.02, "QoS exponent (1/bit)"),
    "slot_duration": (float, 0.1, "frame duration T (s)"),
    "sensing_duration": (float, 0.026, "sensing time N (s)"),
    "bandwidth": (float, 1000.0, "bandwidth B (Hz)"),
    "r1": (float, 1000.0, "rate when sensed busy (bit/s)"),
    "r2": (float, 10000.0, "rate when sensed idle (bit/s)"),
    "p1": (float, 1.0, "power when sensed busy"),
    "p2": (float, 2.0, "power when sensed idle"),
    "snr1_db": (float, 6.9, "SNR busy channel, power p1 (dB)"),
    "snr2_db": (float, 10.0, "SNR busy channel, power p2 (dB)"),
    "snr3_db": (float, 30.7, "SNR idle channel, power p1 (dB)"),
    "snr4_db": (float, 40.0, "SNR idle channel, power p2 (dB)"),
    "pr_nack_low": (float, 0.3, "primary NACK probability under p1"),
    "pr_nack_high": (float, 0.9, "primary NACK probability under p2"),
    "fading_mean": (float, 1.0, "mean fading power gain"),
    "pf": (float, 0.0012, "false-alarm probability"),
    "pd": (float, 0.7705, "detection probability"),
    "threshold_mode": (str, "paper", "ON threshold formula: paper | exact"),
    "threshold": (float, 1.7, "energy detector threshold lambda"),
    "noise_var": (float, None, "noise variance; inverted from pf/pd when unset"),
    "interference_var": (float, None, "primary interference variance; inverted from pf/pd when unset"),
    "sensing_mode": (str, "analytic", "simulated sensing: analytic | sample"),
    "appendix_k1": (_bool, False, "credit NACK slots with r1*(T-N) bits"),
    "variable": (str, "n_fraction", "sweep variable: theta | rho | n_fraction | lambda"),
    "x_min": (float, 0.01, "sweep start"),
    "x_max": (float, 0.9, "sweep end"),
    "points": (_int, 90, "sweep points"),
    "system": (str, "both", "simulated system: both | no_feedback | feedback"),
    "frames": (_int, 1_000_000, "total simulated frames per system"),
    "batch_length": (_int, 10_000, "frames per independent batch"),
    "window": (_int, 6, "EC estimator window length (frames)"),
    "queue_frames": (_int, 2_000_000, "frames for the queue-tail run"),
    "seed": (_int, 42, "master random seed"),
    "trials": (_int, 10_000, "theorem-check parameter draws"),
    "pinned": (str, "", "comma list of fields copied from the config into every draw, or 'all'"),
    "r1_min": (float, 100.0, "rate search r1 lower bound"),
    "r1_max": (float, 5000.0, "rate search r1 upper bound"),
    "r2_min": (float, 1000.0, "rate search r2 lower bound"),
    "r2_max": (float, 50000.0, "rate search r2 upper bound"),
    "resolution": (_int, 50, "rate search points per axis"),
    "out": (str, "", "output path (stdout when empty)"),
}


def paper_config_path() -> Path:
    return Path(str(resources.files("cogradio_ec").joinpath("data/paper.cfg")))


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: spec[1] for k, spec in KEYS.items()})

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def update(self, overrides: dict) -> None:
        for key, value in overrides.items():
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}")
            self.values[key] = value

    def system_params(self) -> SystemParams:
        v = self.values
        if not v["theta"] > 0.0:
            raise ConfigError(f"theta: must be positive, got {v['theta']}")
        pf, pd = v["pf"], v["pd"]
        if v["noise_var"] is not None and v["interference_var"] is not None:
            cfg = self._sensing_config()
            pf, pd = false_alarm_probability(cfg), detection_probability(cfg)
        try:
            return SystemParams(
                rho=v["rho"],
                theta=v["theta"],
                slot_duration=v["slot_duration"],
                sensing_duration=v["sensing_duration"],
                bandwidth=v["bandwidth"],
                r1=v["r1"],
                r2=v["r2"],
                p1=v["p1"],
                p2=v["p2"],
                snr=tuple(db_to_linear(v[f"snr{i}_db"]) for i in range(1, 5)),
                pr_nack_low=v["pr_nack_low"],
                pr_nack_high=v["pr_nack_high"],
                fading_mean=v["fading_mean"],
                pf=pf,
                pd=pd,
                threshold_mode=v["threshold_mode"],
            )
        except ValueError as exc:
            raise ConfigError(f"invalid system parameters: {exc}") from None

    def _sensing_config(self) -> SensingConfig:
        v = self.values
        try:
            return SensingConfig(
                v["threshold"], v["sensing_duration"], v["bandwidth"], v["noise_var"], v["interference_var"]
            )
        except ValueError as exc:
            raise ConfigError(f"invalid sensing parameters: {exc}") from None

    def sensing_config(self) -> SensingConfig:
        """Detector whose operating point matches the configured one.

        Variances come from the config when both are set, otherwise they are
        recovered from ``pf``/``pd`` at the configured threshold and window.
        """
        v = self.values
        if v["noise_var"] is not None and v["interference_var"] is not None:
            return self._sensing_config()
        try:
            noise, interference = invert_operating_point(
                SensingOperatingPoint(v["pf"], v["pd"]), v["threshold"], v["sensing_duration"], v["bandwidth"]
            )
        except ValueError as exc:
            raise ConfigError(f"cannot derive sensing variances: {exc}") from None
        return SensingConfig(v["threshold"], v["sensing_duration"], v["bandwidth"], noise, interference)

    def simulation_batches(self) -> int:
        batches = self.values["frames"] // max(1, self.values["batch_length"])
        if batches < 30:
            raise ConfigError(
                f"frames: {self.values['frames']} frames at batch_length {self.values['batch_length']} "
                f"give {batches} batches; at least 30 are needed"
            )
        return batches

    def sweep_grid(self) -> np.ndarray:
        lo, hi, n = self.values["x_min"], self.values["x_max"], self.values["points"]
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigError(f"x_min/x_max: need x_min < x_max, got {lo}, {hi}")
        if n < 2:
            raise ConfigError(f"points: need at least 2, got {n}")
        return np.linspace(lo, hi, n)

    def echo(self) -> list[str]:
        """Effective configuration as ``#``-prefixed comment lines."""
        lines = []
        for key in KEYS:
            value = self.values[key]
            if value is None:
                value = "unset"
            lines.append(f"# {key} = {value}")
        return lines


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{p}: cannot read config: {exc.strerror}") from None
        cfg.update(parse_config_text(text, str(p)))
    if overrides:
        cfg.update(overrides)
    return cfg
