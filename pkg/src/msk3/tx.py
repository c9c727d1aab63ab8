"""3MSK DFT-s-OFDM transmitter.

Every function accepts leading batch dimensions (frames) so Monte-Carlo runs
can push thousands of DFT-s-OFDM symbols through one FFT call.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, WaveformConfig
from .mapping import HALF_PI, map_transitions, quarter_phases


def wrap(x):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)


@dataclass(frozen=True)
class FrameSamples:
    """One DFT-s-OFDM symbol (CP + main part), or a stack of them.

    ``samples`` has shape (..., n_cp + N). ``u`` is the applied rotation in
    quarter turns. ``last_phase`` is the phase of the cyclic continuation of
    the main symbol (its first sample), i.e. the phase the waveform would
    take right after the frame's final sample.
    """

    samples: np.ndarray
    n_cp: int
    u: np.ndarray
    last_phase: np.ndarray
    exact: bool = True

    @property
    def first_phase(self) -> np.ndarray:
        return np.angle(self.samples[..., 0])

    @property
    def main(self) -> np.ndarray:
        return self.samples[..., self.n_cp :]

    @property
    def cp(self) -> np.ndarray:
        return self.samples[..., : self.n_cp]

    def __len__(self):
        return 1 if self.samples.ndim == 1 else self.samples.shape[0]

    def __getitem__(self, i) -> "FrameSamples":
        if self.samples.ndim == 1:
            raise TypeError("single frame is not indexable")
        return replace(self, samples=self.samples[i], u=self.u[i], last_phase=self.last_phase[i])

    def __iter__(self):
        if self.samples.ndim == 1:
            yield self
            return
        for i in range(len(self)):
            yield self[i]

    def stream(self) -> np.ndarray:
        """Frames concatenated into one continuous baseband stream."""
        return self.samples.reshape(-1)

    def to_iq_bytes(self) -> bytes:
        """Interleaved I/Q as little-endian float64."""
        s = self.stream()
        iq = np.empty(2 * s.size, dtype="<f8")
        iq[0::2], iq[1::2] = s.real, s.imag
        return iq.tobytes()

    def write_iq(self, path):
        Path(path).write_bytes(self.to_iq_bytes())

    def write_csv(self, path):
        s = self.stream()
        with open(path, "w") as fh:
            fh.write("index,I,Q\n")
            for i, v in enumerate(s):
                fh.write(f"{i},{float(v.real)!r},{float(v.imag)!r}\n")


def read_iq(path) -> np.ndarray:
    iq = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    return iq[0::2] + 1j * iq[1::2]


def cyclic_steps(phases) -> np.ndarray:
    """Wrapped phase step into each symbol, index 0 closing the cycle."""
    phases = np.asarray(phases, dtype=float)
    return wrap(phases - np.roll(phases, 1, axis=-1))


def interpolate_phases(phases, a: float = 0.0, transitions=None) -> np.ndarray:
    """Two-times oversampled phase trajectory of a block.

    Equivalent to zero-padding the phases and filtering with the 7-tap
    kernel [-a, 0, 0.5+a, 1, 0.5+a, 0, -a] applied circularly, but written
    with phase steps so 2*pi wrapping never enters. ``transitions[k]`` is the
    step into symbol k in radians (index 0 closes the cycle); by default the
    wrapped cyclic steps of ``phases`` are used.
    """
    phases = np.asarray(phases, dtype=float)
    d = cyclic_steps(phases) if transitions is None else np.asarray(transitions, dtype=float)
    out = np.empty(phases.shape[:-1] + (2 * phases.shape[-1],))
    out[..., 0::2] = phases
    out[..., 1::2] = phases + 0.5 * np.roll(d, -1, axis=-1) + a * (d - np.roll(d, -2, axis=-1))
    return out


def block_phases(bits, cfg: WaveformConfig, start_phase: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Transitions (quarter turns) and symbol-rate phases (rad) for bit blocks (..., B)."""
    trans = map_transitions(bits, cfg.table(), cfg.cp_continuity)
    phases = start_phase + quarter_phases(trans) * HALF_PI
    return trans, phases


def block_samples(bits, cfg: WaveformConfig, start_phase: float = 0.0) -> np.ndarray:
    """Unit-modulus DFT input (..., L*K) for bit blocks (..., B)."""
    _, phases = block_phases(bits, cfg, start_phase)
    if cfg.L == 2:
        phases = interpolate_phases(phases, cfg.a)
    return np.exp(1j * phases)


def dft_spread_and_map(block, cfg: WaveformConfig) -> np.ndarray:
    """Unitary L*K-point DFT, then copy the K + E active bins onto the N grid.

    Bins are taken by signed frequency: in-band bins are -K/2..K/2-1 of the
    DFT output and the excess band adds E/2 bins on each side, drawn from the
    oversampled spectrum. All other grid bins are zero.
    """
    block = np.asarray(block)
    if block.shape[-1] != cfg.K_prime:
        raise ConfigError(f"block length {block.shape[-1]} != L*K = {cfg.K_prime}")
    spec = np.fft.fft(block, axis=-1, norm="ortho")
    rel = np.arange(cfg.K + cfg.E) - (cfg.K + cfg.E) // 2
    grid = np.zeros(block.shape[:-1] + (cfg.N,), dtype=complex)
    grid[..., (rel + cfg.inband_first + cfg.K // 2) % cfg.N] = spec[..., rel % cfg.K_prime]
    return grid


def ofdm_modulate(grid, n_cp: int) -> FrameSamples:
    """Unitary N-point IFFT with the last ``n_cp`` samples prepended as CP."""
    grid = np.asarray(grid)
    n = grid.shape[-1]
    if n_cp > n:
        raise ConfigError("CP longer than the symbol")
    main = np.fft.ifft(grid, axis=-1, norm="ortho")
    samples = np.concatenate([main[..., n - n_cp :], main], axis=-1)
    lead = grid.shape[:-1]
    return FrameSamples(
        samples=samples,
        n_cp=n_cp,
        u=np.zeros(lead, dtype=np.int64),
        last_phase=np.angle(main[..., 0]),
    )


def rotation_index(phi_diff: float) -> int:
    """Integer u minimising |u*pi/2 - phi_diff| after wrapping phi_diff to (-pi, pi].

    Ties go to the smaller |u|, then to the positive one.
    """
    x = float(wrap(phi_diff)) / HALF_PI
    lo = np.floor(x)
    cands = sorted({int(lo), int(lo) + 1}, key=lambda u: (round(abs(u - x), 12), abs(u), -u))
    return cands[0]


def rotate_for_continuity(current: FrameSamples, prev_last_phase: float | None) -> FrameSamples:
    """Rotate a frame by u*pi/2 so its CP starts where the previous frame left off."""
    if prev_last_phase is None:
        return current
    u = rotation_index(prev_last_phase - float(current.first_phase))
    rot = 1j**u
    return replace(
        current,
        samples=current.samples * rot,
        u=np.asarray(int(current.u) + u),
        last_phase=np.asarray(float(wrap(current.last_phase + u * HALF_PI))),
    )


def apply_symbol_continuity(frames: FrameSamples, prev_last_phase: float | None = None) -> FrameSamples:
    """Sequential rotation rule over a stack of frames (F, n_cp + N)."""
    first = np.angle(frames.samples[:, 0])
    last = np.asarray(frames.last_phase, dtype=float)
    u = np.zeros(len(first), dtype=np.int64)
    prev = prev_last_phase
    for t in range(len(first)):
        if prev is not None:
            u[t] = rotation_index(prev - first[t])
        prev = last[t] + u[t] * HALF_PI
    rot = (1j ** (u % 4))[:, None]
    return replace(
        frames,
        samples=frames.samples * rot,
        u=frames.u + u,
        last_phase=wrap(last + u * HALF_PI),
    )


def modulate_blocks(block, cfg: WaveformConfig, prev_last_phase: float | None = None) -> FrameSamples:
    """DFT spreading, OFDM modulation and (optionally) inter-symbol rotation."""
    frames = ofdm_modulate(dft_spread_and_map(block, cfg), cfg.n_cp)
    frames = replace(frames, exact=cfg.exact_continuity)
    if cfg.symbol_continuity and frames.samples.ndim == 2 and len(frames):
        frames = apply_symbol_continuity(frames, prev_last_phase)
    return frames


def modulate_frame_stream(bits, cfg: WaveformConfig, prev_last_phase: float | None = None) -> FrameSamples:
    """Full 3MSK transmit chain for a bit stream (a whole number of frames).

    Returns a stack of frames with shape (n_frames, n_cp + N).
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    per = cfg.bits_per_frame
    if bits.size % per:
        raise ConfigError(f"bit count {bits.size} is not a multiple of {per} bits per frame")
    blocks = bits.reshape(-1, per)
    if blocks.shape[0] == 0:
        return _empty(cfg)
    return modulate_blocks(block_samples(blocks, cfg), cfg, prev_last_phase)


def _empty(cfg: WaveformConfig) -> FrameSamples:
    return FrameSamples(
        samples=np.zeros((0, cfg.frame_length), dtype=complex),
        n_cp=cfg.n_cp,
        u=np.zeros(0, dtype=np.int64),
        last_phase=np.zeros(0),
        exact=cfg.exact_continuity,
    )


def qpsk_symbols(bits) -> np.ndarray:
    """Gray-mapped unit-energy QPSK; bit pairs (b0, b1) -> ((1-2b0) + j(1-2b1))/sqrt(2)."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape[-1] % 2:
        raise ConfigError("QPSK needs an even number of bits")
    b = bits.reshape(*bits.shape[:-1], -1, 2)
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) / np.sqrt(2)


def qpsk_demap(symbols) -> np.ndarray:
    s = np.asarray(symbols)
    bits = np.stack([s.real < 0, s.imag < 0], axis=-1).astype(np.uint8)
    return bits.reshape(*s.shape[:-1], -1)


def qpsk_config(cfg: WaveformConfig) -> WaveformConfig:
    """Same numerology as ``cfg`` but plain DFT-s-OFDM (L=1, E=0, no continuity)."""
    return cfg.replace(L=1, E=0, a=0.0, cp_continuity=False, symbol_continuity=False)


def qpsk_reference_frame_stream(bits, cfg: WaveformConfig) -> FrameSamples:
    """Gray QPSK through the same DFT-s-OFDM chain (L=1, E=0, no rotation)."""
    qcfg = qpsk_config(cfg)
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    per = 2 * cfg.K
    if bits.size % per:
        raise ConfigError(f"bit count {bits.size} is not a multiple of {per} bits per frame")
    if bits.size == 0:
        return _empty(qcfg)
    syms = qpsk_symbols(bits.reshape(-1, per))
    return modulate_blocks(syms, qcfg)
