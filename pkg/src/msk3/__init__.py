"""3MSK modulation over DFT-s-OFDM: transmitter, impairments, receiver, metrics."""

__version__ = "0.1.0"

from .config import ConfigError, DetectionMode, DetectorConfig, Metric, WaveformConfig
from .mapping import MappingError, MappingKind, MappingTable, MskBlock, Transition, demap_transitions, map_bits
from .tx import FrameSamples, modulate_frame_stream, qpsk_reference_frame_stream
from .rx import bcjr_detect, derotate, rx_frontend, track_phase_update, viterbi_detect
from .impairments import PaModel, PnModel, TdlProfile, awgn_apply, pa_apply, pn_generate, tdl_apply
from .metrics import LinkStats, PaprBasis, RfLimits, ber_accumulate, normalized_obw, obo_search, papr_ccdf, psd_estimate, rf_checks
from .link import LinkConfig, simulate_link
from .harness import ExperimentSpec, ResultRecord, emit_report, run_experiment

__all__ = [
    "ConfigError",
    "DetectionMode",
    "DetectorConfig",
    "ExperimentSpec",
    "FrameSamples",
    "LinkConfig",
    "LinkStats",
    "MappingError",
    "MappingKind",
    "MappingTable",
    "Metric",
    "MskBlock",
    "PaModel",
    "PaprBasis",
    "PnModel",
    "ResultRecord",
    "RfLimits",
    "TdlProfile",
    "Transition",
    "WaveformConfig",
    "awgn_apply",
    "bcjr_detect",
    "ber_accumulate",
    "demap_transitions",
    "derotate",
    "emit_report",
    "map_bits",
    "modulate_frame_stream",
    "normalized_obw",
    "obo_search",
    "pa_apply",
    "papr_ccdf",
    "pn_generate",
    "psd_estimate",
    "qpsk_reference_frame_stream",
    "rf_checks",
    "run_experiment",
    "rx_frontend",
    "simulate_link",
    "tdl_apply",
    "track_phase_update",
    "viterbi_detect",
]
