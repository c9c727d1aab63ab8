"""Monte-Carlo link simulation: bits -> tx -> impairments -> rx -> LinkStats."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .config import DetectorConfig, WaveformConfig
from .impairments import PaModel, PnModel, TdlProfile, awgn_apply, inband_power, noise_variance, pa_apply, pn_apply_frames, tdl_apply
from .metrics import LinkStats, ber_accumulate
from .rx import bcjr_detect, derotate, hard_decisions, rx_frontend, viterbi_detect
from .tx import modulate_frame_stream, qpsk_config, qpsk_demap, qpsk_reference_frame_stream


class Stage(enum.IntEnum):
    """Independent random streams of one trial."""

    BITS = 0
    NOISE = 1
    PN_TX = 2
    PN_RX = 3
    FADING = 4
    OFFSET = 5


@dataclass(frozen=True)
class LinkConfig:
    """One link operating point.

    ``waveform`` is ``"3msk"`` or the ``"qpsk"`` reference on the same
    numerology. ``derotation`` is ``"genie"`` (the receiver knows the frame
    rotation and any injected offset) or ``"blind"``.
    """

    cfg: WaveformConfig = field(default_factory=WaveformConfig)
    det: DetectorConfig = field(default_factory=DetectorConfig)
    snr_db: float = 10.0
    n_frames: int = 1000
    waveform: str = "3msk"
    receiver: str = "viterbi"
    derotation: str = "genie"
    random_offset: bool = False
    pn_tx: PnModel | None = None
    pn_rx: PnModel | None = None
    tdl: TdlProfile | None = None
    block_fading: bool = True
    pa: PaModel | None = None
    ibo_db: float = 0.0

    def __post_init__(self):
        if self.waveform not in ("3msk", "qpsk"):
            raise ValueError(f"unknown waveform {self.waveform!r}")
        if self.receiver not in ("viterbi", "bcjr"):
            raise ValueError(f"unknown receiver {self.receiver!r}")
        if self.derotation not in ("genie", "blind"):
            raise ValueError(f"unknown derotation {self.derotation!r}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")


def stage_rngs(seed) -> Callable[[Stage], np.random.Generator]:
    """Per-stage generators from an int or a sequence of ints."""
    base = list(np.atleast_1d(seed).astype(np.int64).tolist()) if seed is not None else [0]
    return lambda stage: np.random.default_rng(np.random.SeedSequence(base + [int(stage)]))


def simulate_link(lc: LinkConfig, seed=0) -> LinkStats:
    """Run ``lc.n_frames`` frames and count bit and frame errors."""
    rng = stage_rngs(seed)
    qpsk = lc.waveform == "qpsk"
    cfg = qpsk_config(lc.cfg) if qpsk else lc.cfg
    per = 2 * cfg.K if qpsk else cfg.bits_per_frame
    bits = rng(Stage.BITS).integers(0, 2, lc.n_frames * per, dtype=np.uint8)
    frames = qpsk_reference_frame_stream(bits, lc.cfg) if qpsk else modulate_frame_stream(bits, cfg)
    x = frames.samples
    ref = inband_power(x, cfg)

    if lc.pa is not None:
        x = pa_apply(x, lc.pa, lc.ibo_db)
        ref = inband_power(x, cfg)
    if lc.pn_tx is not None:
        x = pn_apply_frames(x, lc.pn_tx, rng(Stage.PN_TX))
    channel = None
    if lc.tdl is not None:
        x, channel = tdl_apply(x, lc.tdl, cfg, lc.block_fading, rng(Stage.FADING))
    offset = np.zeros(lc.n_frames, dtype=np.int64)
    if lc.random_offset:
        offset = rng(Stage.OFFSET).integers(0, 4, lc.n_frames)
        x = x * (1j**offset)[:, None]
    x = awgn_apply(x, lc.snr_db, rng(Stage.NOISE), reference_power=ref)
    if lc.pn_rx is not None:
        x = pn_apply_frames(x, lc.pn_rx, rng(Stage.PN_RX))

    n0 = noise_variance(lc.snr_db, ref)
    y = rx_frontend(x, cfg, channel, n0 / ref if channel is not None else 0.0)
    if lc.pa is not None:
        y = y * math.sqrt(1.0 / np.mean(np.abs(y) ** 2))
    if lc.derotation == "genie":
        y = derotate(y, frames.u + offset)

    if qpsk:
        rx_bits = qpsk_demap(y)
    elif lc.receiver == "viterbi":
        rx_bits = viterbi_detect(y, lc.det, cfg.table(), cfg.cp_continuity).bits
    else:
        llr = bcjr_detect(y, lc.det, cfg.table(), max(n0 / ref, 1e-6), cfg.cp_continuity)
        rx_bits = hard_decisions(llr)
    return ber_accumulate(bits, rx_bits, block_size=per)


def ber_curve(lc: LinkConfig, snrs, seed=0) -> list[LinkStats]:
    """BER over an SNR list; every point reuses the same bits and noise shape."""
    return [simulate_link(replace(lc, snr_db=float(s)), seed) for s in snrs]
