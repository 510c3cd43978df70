"""Effective capacity of a cognitive-radio secondary link, with and without
overheard primary ARQ feedback."""

from .capacity import (
    ECResult,
    RateSearchResult,
    average_power,
    appendix_quadratic_coefficients,
    ec_pair,
    effective_capacity,
    mean_service_rate,
    optimize_rates,
    sweep,
    verify_theorem_1,
)
from .markov import (
    MarkovModel,
    System,
    SystemParams,
    build_feedback_chain,
    build_no_feedback_chain,
)
from .sensing import SensingConfig, SensingOperatingPoint, invert_operating_point

__version__ = "0.1.0"
