"""Covert channel between SDN switches via controller DPID admission."""

from .framing import Frame, decode_frames, encode_message
from .harness import Scenario, TrialResult, accuracy, levenshtein, run_once, run_trial, sweep
from .simnet import ClockModel, LatencyModel, Simulation
from .timing import ChannelConfig, TransitionDelays, estimate_transfer, validate

__all__ = [
    "ChannelConfig", "ClockModel", "Frame", "LatencyModel", "Scenario", "Simulation",
    "TransitionDelays", "TrialResult", "accuracy", "decode_frames", "encode_message",
    "estimate_transfer", "levenshtein", "run_once", "run_trial", "sweep", "validate",
]
