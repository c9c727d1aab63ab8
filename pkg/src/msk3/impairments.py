"""Channel and hardware impairments: AWGN, block-fading TDL, phase noise, PA."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, WaveformConfig
from .rx import inband_bins


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a SeedSequence, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex Gaussian with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


# AWGN


def inband_power(samples, cfg: WaveformConfig) -> float:
    """Mean power per in-band subcarrier (unitary FFT of the main symbols)."""
    return float(np.mean(np.abs(inband_bins(samples, cfg)) ** 2))


def noise_variance(snr_db: float, reference_power: float) -> float:
    """Per-sample noise variance giving Es/N0 = snr_db against ``reference_power``."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return reference_power / 10 ** (snr_db / 10)


def awgn_apply(samples, snr_db: float, rng=None, *, cfg: WaveformConfig | None = None, reference_power=None):
    """Add circular complex Gaussian noise at Es/N0 = ``snr_db``.

    The unitary transforms keep white noise white with the same variance per
    bin, so Es/N0 at symbol rate over the K in-band subcarriers is the mean
    in-band bin power over the per-sample noise variance. The reference is
    taken from ``reference_power`` if given, else from the in-band bins when
    ``cfg`` is given, else from the mean sample power. ``snr_db = inf``
    switches noise off and returns the input unchanged.
    """
    x = np.asarray(samples)
    if math.isinf(snr_db) and snr_db > 0:
        return x
    if reference_power is None:
        reference_power = inband_power(x, cfg) if cfg is not None else float(np.mean(np.abs(x) ** 2))
    n0 = noise_variance(snr_db, reference_power)
    return x + math.sqrt(n0) * complex_normal(as_generator(rng), x.shape)


# Tapped delay line


@dataclass(frozen=True)
class TdlProfile:
    """Tap delays in samples and tap powers in dB (linear powers sum to one)."""

    delays: tuple[int, ...]
    powers_db: tuple[float, ...]

    def __post_init__(self):
        d = tuple(int(v) for v in self.delays)
        p = tuple(float(v) for v in self.powers_db)
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "powers_db", p)
        if not d or len(d) != len(p):
            raise ConfigError("TDL profile needs matching, non-empty delay and power lists")
        if any(v < 0 for v in d):
            raise ConfigError("tap delays must be non-negative")
        if abs(sum(self.powers) - 1.0) > 1e-6:
            raise ConfigError("tap powers must sum to 1 (0 dB) in linear scale")

    @property
    def powers(self) -> np.ndarray:
        return 10 ** (np.asarray(self.powers_db) / 10)

    @property
    def max_delay(self) -> int:
        return max(self.delays)

    @classmethod
    def normalized(cls, delays, powers_db) -> "TdlProfile":
        p = 10 ** (np.asarray(powers_db, dtype=float) / 10)
        return cls(tuple(delays), tuple(10 * np.log10(p / p.sum())))

    @classmethod
    def flat(cls) -> "TdlProfile":
        return cls((0,), (0.0,))

    def to_dict(self) -> dict:
        return {"delays": list(self.delays), "powers_db": list(self.powers_db)}

    @classmethod
    def from_dict(cls, d: dict) -> "TdlProfile":
        if d.get("normalize", False):
            return cls.normalized(d["delays"], d["powers_db"])
        return cls(tuple(d["delays"]), tuple(d["powers_db"]))


# Illustrative only, not a normative 3GPP table: a strong first tap followed
# by a short exponentially decaying tail, delays in samples at N=1024.
EXAMPLE_TDL = TdlProfile.normalized(
    delays=(0, 1, 2, 3, 5, 7, 10),
    powers_db=(0.0, -9.0, -12.0, -15.0, -18.0, -21.0, -25.0),
)


def tdl_taps(profile: TdlProfile, n_draws: int, rng=None) -> np.ndarray:
    """Rayleigh tap weights (n_draws, n_taps) with E|h_i|^2 = tap power."""
    rng = as_generator(rng)
    return complex_normal(rng, (n_draws, len(profile.delays))) * np.sqrt(profile.powers)


def tdl_frequency_response(taps, profile: TdlProfile, n_fft: int) -> np.ndarray:
    """N-point FFT of the tap vector (..., n_fft)."""
    taps = np.asarray(taps)
    h = np.zeros(taps.shape[:-1] + (n_fft,), dtype=complex)
    for i, d in enumerate(profile.delays):
        h[..., d] += taps[..., i]
    return np.fft.fft(h, axis=-1)


def tdl_apply(frames, profile: TdlProfile, cfg: WaveformConfig, block_fading: bool = True, rng=None):
    """Convolve a frame stack (F, n_cp + N) with a Rayleigh TDL.

    Taps are drawn once per frame with ``block_fading``, otherwise once for
    the whole stack. The convolution runs over the continuous stream, so a
    frame's leading samples see the previous frame's tail through the CP.
    Returns (samples, frequency response (F, N)).
    """
    x = np.atleast_2d(np.asarray(frames))
    F, n = x.shape
    if profile.max_delay >= n:
        raise ConfigError("tap delay must be shorter than the frame")
    taps = tdl_taps(profile, F if block_fading else 1, rng)
    taps = np.broadcast_to(taps, (F, taps.shape[1]))
    stream = x.reshape(-1)
    out = np.zeros_like(x, dtype=complex)
    for i, d in enumerate(profile.delays):
        delayed = np.concatenate([np.zeros(d, dtype=complex), stream[: stream.size - d]]).reshape(F, n)
        out += taps[:, i : i + 1] * delayed
    return out, tdl_frequency_response(taps, profile, cfg.N)


# Phase noise


class PnKind(str, enum.Enum):
    WIENER = "wiener"
    SHAPED_PSD = "shaped_psd"


@dataclass(frozen=True)
class PnModel:
    """Oscillator phase-noise model.

    ``wiener`` uses ``linewidth`` (Hz, two-sided 3 dB Lorentzian width).
    ``shaped_psd`` uses ``breakpoints``, a list of (offset Hz, dBc/Hz) pairs
    with strictly increasing offsets, log-log interpolated and held flat
    beyond the ends.
    """

    kind: PnKind = PnKind.WIENER
    linewidth: float = 0.0
    breakpoints: tuple[tuple[float, float], ...] = field(default_factory=tuple)
    sample_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PnKind(self.kind))
        object.__setattr__(self, "breakpoints", tuple((float(f), float(p)) for f, p in self.breakpoints))
        if self.sample_rate <= 0:
            raise ConfigError("sample rate must be positive")
        if self.linewidth < 0:
            raise ConfigError("linewidth must be non-negative")
        if self.kind == PnKind.SHAPED_PSD:
            f = [b[0] for b in self.breakpoints]
            if not f:
                raise ConfigError("shaped PSD needs breakpoints")
            if f[0] <= 0 or any(b <= a for a, b in zip(f, f[1:])):
                raise ConfigError("PSD breakpoints must be positive and strictly increasing")

    @property
    def increment_variance(self) -> float:
        """Wiener step variance 2*pi*linewidth/sample_rate."""
        return 2 * math.pi * self.linewidth / self.sample_rate

    @classmethod
    def wiener_for_drift(cls, rms_drift: float, n_samples: int, sample_rate: float = 1.0) -> "PnModel":
        """Wiener model whose phase has RMS ``rms_drift`` rad after ``n_samples``."""
        lw = rms_drift**2 * sample_rate / (2 * math.pi * n_samples)
        return cls(PnKind.WIENER, linewidth=lw, sample_rate=sample_rate)

    def psd(self, f) -> np.ndarray:
        """Two-sided phase PSD in rad^2/Hz at offsets ``f`` (shaped kind)."""
        fb = np.log10([b[0] for b in self.breakpoints])
        pb = np.asarray([b[1] for b in self.breakpoints])
        af = np.abs(np.asarray(f, dtype=float))
        lf = np.log10(np.maximum(af, 10 ** fb[0]))
        return 10 ** (np.interp(lf, fb, pb) / 10)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "linewidth": self.linewidth,
            "breakpoints": [list(b) for b in self.breakpoints],
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PnModel":
        d = dict(d)
        d["breakpoints"] = tuple(tuple(b) for b in d.get("breakpoints", ()))
        return cls(**d)


def pn_generate(model: PnModel, n_samples: int, rng=None, n_traces: int | None = None) -> np.ndarray:
    """Phase trace in radians, shape (n_samples,) or (n_traces, n_samples).

    Wiener traces start at zero: phi[0] = 0, phi[n] = phi[n-1] + w[n].
    Shaped traces are white Gaussian noise coloured in the frequency domain
    so their periodogram follows ``model.psd``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = as_generator(rng)
    shape = (n_samples,) if n_traces is None else (n_traces, n_samples)
    if model.kind == PnKind.WIENER:
        if model.linewidth == 0:
            return np.zeros(shape)
        w = rng.standard_normal(shape) * math.sqrt(model.increment_variance)
        w[..., 0] = 0.0
        return np.cumsum(w, axis=-1)
    f = np.fft.fftfreq(n_samples, d=1 / model.sample_rate)
    gain = np.sqrt(model.psd(f) * model.sample_rate)
    white = np.fft.fft(rng.standard_normal(shape), axis=-1)
    return np.fft.ifft(white * gain, axis=-1).real


def pn_apply(samples, phase) -> np.ndarray:
    """Multiply sample n by exp(j*phase[n]); magnitudes are untouched."""
    return np.asarray(samples) * np.exp(1j * np.asarray(phase))


def pn_apply_frames(frames, model: PnModel, rng=None) -> np.ndarray:
    """Independent phase trace per frame, each starting from zero phase."""
    x = np.atleast_2d(np.asarray(frames))
    return pn_apply(x, pn_generate(model, x.shape[-1], rng, n_traces=x.shape[0]))


# Power amplifier


@dataclass(frozen=True)
class PaModel:
    """Memoryless modified Rapp PA.

    AM/AM: G*A / (1 + (G*A/v_sat)^(2p))^(1/(2p)).
    AM/PM (degrees): am_pm_a * A^q / (1 + (A/am_pm_b)^q).
    Defaults follow the 60 GHz modified Rapp parameter set commonly used for
    mmWave link studies. ``v_sat = inf`` gives a linear amplifier.
    """

    gain: float = 16.0
    v_sat: float = 1.9
    p: float = 1.1
    am_pm_a: float = -345.0
    am_pm_b: float = 0.17
    am_pm_q: float = 4.0

    def __post_init__(self):
        if self.gain <= 0 or self.p <= 0 or self.v_sat <= 0 or self.am_pm_b <= 0 or self.am_pm_q <= 0:
            raise ConfigError("PA gain, saturation, smoothness and AM/PM shape must be positive")

    @classmethod
    def linear(cls, gain: float = 1.0) -> "PaModel":
        return cls(gain=gain, v_sat=math.inf, am_pm_a=0.0)

    @property
    def is_linear(self) -> bool:
        return math.isinf(self.v_sat)

    @property
    def input_saturation(self) -> float:
        """Input amplitude at which the linear gain would reach v_sat; 1 for a linear PA."""
        return 1.0 if self.is_linear else self.v_sat / self.gain

    @property
    def saturation_power(self) -> float:
        return self.v_sat**2

    def am_am(self, amp) -> np.ndarray:
        amp = np.asarray(amp, dtype=float)
        if self.is_linear:
            return self.gain * amp
        r = self.gain * amp / self.v_sat
        return self.gain * amp / (1 + r ** (2 * self.p)) ** (1 / (2 * self.p))

    def am_pm(self, amp) -> np.ndarray:
        """Phase shift in radians."""
        amp = np.asarray(amp, dtype=float)
        deg = self.am_pm_a * amp**self.am_pm_q / (1 + (amp / self.am_pm_b) ** self.am_pm_q)
        return np.deg2rad(deg)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x)
        amp = np.abs(x)
        unit = np.exp(1j * np.angle(x))
        return self.am_am(amp) * np.exp(1j * self.am_pm(amp)) * unit

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "PaModel":
        if d.get("kind") == "linear":
            return cls.linear(d.get("gain", 1.0))
        return cls(**{k: v for k, v in d.items() if k != "kind"})


def drive_scale(samples, pa: PaModel, input_backoff_db: float) -> float:
    """Scale putting the mean input power ``input_backoff_db`` below input saturation."""
    p = float(np.mean(np.abs(np.asarray(samples)) ** 2))
    if p == 0:
        return 1.0
    target = pa.input_saturation**2 * 10 ** (-input_backoff_db / 10)
    return math.sqrt(target / p)


def pa_apply(samples, pa: PaModel, input_backoff_db: float) -> np.ndarray:
    """Scale to the requested input back-off, then apply the PA."""
    x = np.asarray(samples)
    return pa(x * drive_scale(x, pa, input_backoff_db))
