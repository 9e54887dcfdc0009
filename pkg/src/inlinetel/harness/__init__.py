"""Testbed orchestration, traffic, prediction and the experiment CLI."""

from .config import ConfigError, ProbeSettings, TopologyConfig
from .predict import (CorrelationReport, DegenerateDesign, PredictionRecord, RidgeModel, ServiceUnavailable,
                      correlation_rank, fit_baseline_predictor, prediction_loop)
from .topology import AttachFailed, Testbed
from .traffic import TokenBucket, TrafficReport, TrafficSpec, ar1_bitrates, make_spec, run_traffic

__all__ = [
    "AttachFailed", "ConfigError", "CorrelationReport", "DegenerateDesign", "PredictionRecord", "ProbeSettings",
    "RidgeModel", "ServiceUnavailable", "Testbed", "TokenBucket", "TopologyConfig", "TrafficReport",
    "TrafficSpec", "ar1_bitrates", "correlation_rank", "fit_baseline_predictor", "make_spec",
    "prediction_loop", "run_traffic",
]
