"""Transmitter and link metrics: PAPR, PSD, OBW, RF checks, OBO search, BER."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import signal, stats

from .config import WaveformConfig
from .impairments import PaModel
from .rx import rx_frontend

# PAPR


class PaprBasis(str, enum.Enum):
    PER_SAMPLE = "per_sample"
    PER_OFDM_SYMBOL = "per_ofdm_symbol"


@dataclass(frozen=True)
class PaprCcdf:
    """Sorted PAPR observations in dB and the basis they were taken on."""

    values_db: np.ndarray
    basis: PaprBasis

    def __len__(self):
        return self.values_db.size

    def ccdf(self, threshold_db) -> np.ndarray:
        """P(PAPR > threshold)."""
        idx = np.searchsorted(self.values_db, np.asarray(threshold_db), side="right")
        return 1.0 - idx / self.values_db.size

    def value_at(self, probability: float) -> float:
        """PAPR exceeded with the given probability.

        The empirical CCDF at the i-th order statistic (ascending, 0-based) is
        taken as (n - i - 0.5) / n; the readout interpolates threshold
        linearly against log10 probability between neighbouring points.
        """
        if not 0 < probability < 1:
            raise ValueError("probability must lie in (0, 1)")
        v = self.values_db
        n = v.size
        logp = np.log10((n - np.arange(n) - 0.5) / n)
        return float(np.interp(math.log10(probability), logp[::-1], v[::-1]))

    def curve(self, n_points: int = 200, min_probability: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(threshold_db, ccdf) on a grid with strictly decreasing ccdf."""
        p_min = min_probability or max(1.0 / self.values_db.size, 1e-12)
        probs = np.logspace(0, math.log10(p_min), n_points + 1)[1:]
        thr = np.array([self.value_at(p) for p in probs])
        keep = np.concatenate([[True], np.diff(thr) > 0])
        return thr[keep], probs[keep]

    def to_rows(self, n_points: int = 200) -> list[dict]:
        thr, p = self.curve(n_points)
        return [{"threshold_db": float(t), "ccdf": float(q)} for t, q in zip(thr, p)]


def papr_ccdf(samples, basis: PaprBasis | str = PaprBasis.PER_SAMPLE, n_cp: int = 0) -> PaprCcdf:
    """Instantaneous PAPR distribution.

    Per-sample: every |x(n)|^2 over the mean power of the whole signal.
    Per-OFDM-symbol: the peak of each row of ``samples`` (one frame per
    row, CP of length ``n_cp`` dropped) over that row's mean power.
    """
    basis = PaprBasis(basis)
    x = np.asarray(samples)
    if x.size == 0:
        raise ValueError("PAPR of an empty signal")
    if basis == PaprBasis.PER_SAMPLE:
        p = np.abs(x.ravel()) ** 2
        vals = p / p.mean()
    else:
        if x.ndim != 2:
            raise ValueError("per-symbol PAPR needs a (frames, samples) array")
        p = np.abs(x[:, n_cp:]) ** 2
        vals = p.max(axis=1) / p.mean(axis=1)
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(vals)
    return PaprCcdf(np.sort(db), basis)


# PSD and occupied bandwidth


@dataclass(frozen=True)
class PsdEstimate:
    """Peak-normalised PSD against frequency in allocation widths from the allocation centre."""

    freqs: np.ndarray
    density_db: np.ndarray
    segment: int
    overlap: float
    window: str

    @property
    def density(self) -> np.ndarray:
        return 10 ** (self.density_db / 10)

    def at(self, f) -> np.ndarray:
        """Density (dB) at normalised frequencies, linearly interpolated."""
        return np.interp(f, self.freqs, self.density_db)

    def metadata(self) -> dict:
        return {"segment": self.segment, "overlap": self.overlap, "window": self.window}

    def to_rows(self) -> list[dict]:
        return [{"freq": float(f), "psd_db": float(p)} for f, p in zip(self.freqs, self.density_db)]


def welch_density(samples, cfg: WaveformConfig, segment: int | None = None, overlap: float = 0.5, window: str = "hann"):
    """Raw two-sided Welch density of a stream against normalised frequency.

    Frequency is (f - centre) / K with f in subcarrier units, so the K
    in-band subcarriers span [-0.5, 0.5]. Densities from equal-length
    estimates can be averaged before :func:`psd_from_density`.
    """
    x = np.asarray(samples).ravel()
    seg = segment or 4 * cfg.N
    if x.size < seg:
        raise ValueError(f"need at least {seg} samples for the PSD, got {x.size}")
    f, p = signal.welch(
        x, fs=1.0, window=window, nperseg=seg, noverlap=int(seg * overlap), return_onesided=False, detrend=False
    )
    f = np.fft.fftshift(f) * cfg.N
    return (f - cfg.center) / cfg.K, np.fft.fftshift(p)


def psd_from_density(freqs, density, segment: int, overlap: float = 0.5, window: str = "hann") -> PsdEstimate:
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(density / density.max())
    return PsdEstimate(np.asarray(freqs), db, segment, overlap, window)


def psd_estimate(samples, cfg: WaveformConfig, segment: int | None = None, overlap: float = 0.5, window: str = "hann") -> PsdEstimate:
    """Peak-normalised Welch PSD; by default 4N segments, Hann, 50% overlap."""
    seg = segment or 4 * cfg.N
    f, p = welch_density(samples, cfg, seg, overlap, window)
    return psd_from_density(f, p, seg, overlap, window)


class Obw(NamedTuple):
    value: float
    is_lower_bound: bool


def normalized_obw(psd: PsdEstimate, oob_ratio_db: float, max_width: float | None = None) -> Obw:
    """Smallest symmetric width W (allocation widths) leaving at most the given power ratio outside.

    Bins are accumulated in order of distance from the allocation centre;
    the width is twice the distance of the bin at which the outside power
    first drops to the ratio, floored at the allocation width 1. If that
    width reaches ``max_width`` the ratio counts as unreachable within the
    span and ``max_width`` is returned as a lower bound.
    """
    p = psd.density
    total = p.sum()
    dist = np.abs(psd.freqs)
    order = np.argsort(dist, kind="stable")
    outside = total - np.cumsum(p[order])
    i = int(np.argmax(outside <= 10 ** (oob_ratio_db / 10) * total))
    width = max(1.0, 2 * float(dist[order][i]))
    span = 2 * float(dist.max()) if max_width is None else max_width
    if width >= span:
        return Obw(span, True)
    return Obw(width, False)


def occupied_bandwidth(freqs, power, fraction: float = 0.99) -> float:
    """Width of the band between the (1-fraction)/2 and (1+fraction)/2 power quantiles."""
    c = np.cumsum(power) / np.sum(power)
    lo = np.interp((1 - fraction) / 2, c, freqs)
    hi = np.interp((1 + fraction) / 2, c, freqs)
    return float(hi - lo)


# RF requirements


@dataclass(frozen=True)
class RfLimits:
    """Emission and quality limits and the channel geometry they are measured on.

    Widths are in subcarriers. The default channel is 833.33 subcarriers
    wide (100 MHz at 120 kHz spacing) with a 792-subcarrier ACLR measurement
    band, the full 66-RB allocation.
    """

    aclr_min: float = 31.0
    evm_max: float = 17.5
    obw_fraction: float = 0.99
    ibe_limit_db: float = -25.0
    channel_width: float = 2500 / 3
    meas_width: float = 792.0
    rb_size: int = 12

    def __post_init__(self):
        if min(self.aclr_min, self.evm_max, self.obw_fraction, self.channel_width, self.meas_width, self.rb_size) <= 0:
            raise ValueError("RF limits must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class RfCheck:
    name: str
    value: float
    limit: float
    passed: bool
    margin: float


@dataclass(frozen=True)
class RfReport:
    checks: tuple[RfCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> RfCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def binding(self) -> RfCheck:
        """Failing check with the worst margin, or the tightest one if all pass."""
        return min(self.checks, key=lambda c: c.margin)


def evm_percent(received, reference) -> float:
    """RMS error vector magnitude after a least-squares complex gain fit."""
    r = np.asarray(received).ravel()
    x = np.asarray(reference).ravel()
    den = np.vdot(x, x).real
    if den == 0:
        raise ValueError("reference has no power")
    g = np.vdot(x, r) / den
    err = r - g * x
    return 100 * math.sqrt(np.vdot(err, err).real / (abs(g) ** 2 * den))


def grid_power(frames, cfg: WaveformConfig) -> np.ndarray:
    """Mean per-bin power of the main symbols on the N grid, ordered by signed subcarrier."""
    x = np.atleast_2d(np.asarray(frames))[:, cfg.n_cp :]
    p = np.mean(np.abs(np.fft.fft(x, axis=-1)) ** 2, axis=0)
    return np.fft.fftshift(p)


def _band(freqs, power, centre, width) -> float:
    return float(power[np.abs(freqs - centre) <= width / 2].sum())


def rf_checks(tx, ideal, cfg: WaveformConfig, limits: RfLimits = RfLimits()) -> RfReport:
    """ACLR, EVM, OBW and flat in-band emission checks of PA output ``tx``.

    ``ideal`` is the aligned PA input. Spectra come from a Welch estimate of
    the stream with N-sample Hann segments, so bins sit on subcarriers. The
    channel is centred on the allocation centre of a DC-centred grid.
    """
    tx = np.atleast_2d(np.asarray(tx))
    ideal = np.atleast_2d(np.asarray(ideal))
    if tx.shape != ideal.shape:
        raise ValueError("tx and ideal signals are misaligned")
    f, p = signal.welch(
        tx.ravel(), fs=1.0, window="hann", nperseg=cfg.N, noverlap=cfg.N // 2, return_onesided=False, detrend=False
    )
    f = np.fft.fftshift(f) * cfg.N
    p = np.fft.fftshift(p)
    centre = -0.5
    own = _band(f, p, centre, limits.meas_width)
    adj = max(_band(f, p, centre + s * limits.channel_width, limits.meas_width) for s in (-1, 1))
    aclr = 10 * math.log10(own / adj) if adj > 0 else math.inf

    evm = evm_percent(rx_frontend(tx, cfg), rx_frontend(ideal, cfg))
    obw = occupied_bandwidth(f, p, limits.obw_fraction)
    ibe = in_band_emission(tx, cfg, limits)
    checks = (
        RfCheck("aclr", aclr, limits.aclr_min, aclr >= limits.aclr_min, aclr - limits.aclr_min),
        RfCheck("evm", evm, limits.evm_max, evm <= limits.evm_max, limits.evm_max - evm),
        RfCheck("obw", obw, limits.channel_width, obw <= limits.channel_width, limits.channel_width - obw),
        RfCheck("ibe", ibe, limits.ibe_limit_db, ibe <= limits.ibe_limit_db, limits.ibe_limit_db - ibe),
    )
    return RfReport(checks)


def in_band_emission(tx, cfg: WaveformConfig, limits: RfLimits) -> float:
    """Worst non-allocated RB power in the channel relative to the mean allocated RB (dB).

    Returns -inf when the allocation fills every RB of the channel.
    """
    p = grid_power(tx, cfg)
    half = int(limits.meas_width // 2)
    alloc = set(cfg.inband_freqs.tolist())
    n_rb = int(limits.meas_width // limits.rb_size)
    rb_power, in_alloc = [], []
    for rb in range(n_rb):
        s = np.arange(rb * limits.rb_size, (rb + 1) * limits.rb_size) - half
        rb_power.append(p[(s + cfg.N // 2) % cfg.N].sum())
        in_alloc.append(any(v in alloc for v in s.tolist()))
    rb_power = np.array(rb_power)
    in_alloc = np.array(in_alloc)
    if in_alloc.all() or not in_alloc.any():
        return -math.inf
    ref = rb_power[in_alloc].mean()
    worst = rb_power[~in_alloc].max()
    return 10 * math.log10(worst / ref) if worst > 0 else -math.inf


# OBO search


class OboError(RuntimeError):
    pass


@dataclass(frozen=True)
class OboResult:
    """Outcome of a PA drive scan.

    ``obo_db`` is saturation power over mean output power at the last
    passing drive; ``binding`` names the check that fails just above it,
    or None when the scan ran off the top of its drive grid
    (``grid_limited``).
    """

    obo_db: float
    ibo_db: float
    output_power: float
    binding: str | None
    grid_limited: bool
    report: RfReport = field(repr=False)


def output_reference_power(pa: PaModel) -> float:
    """Saturated output power, or G^2 (unit input saturation) for a linear PA."""
    return pa.gain**2 if pa.is_linear else pa.saturation_power


def obo_search(
    ideal,
    cfg: WaveformConfig,
    pa: PaModel,
    limits: RfLimits = RfLimits(),
    ibo_start: float = 20.0,
    ibo_stop: float = -20.0,
    coarse_step: float = 1.0,
    fine_step: float = 0.1,
    resolution: float = 0.01,
    check: Callable | None = None,
) -> OboResult:
    """Lowest input back-off (highest drive) whose PA output meets every limit.

    ``ideal`` is a frame stack. Drive is expressed as input back-off
    relative to the PA input saturation amplitude and scanned from
    ``ibo_start`` down to ``ibo_stop``: 1 dB steps, then 0.1 dB steps in the
    failing bracket, then bisection to ``resolution``.
    """
    x = np.atleast_2d(np.asarray(ideal))
    run = check or (lambda y: rf_checks(y, x, cfg, limits))
    p_in = float(np.mean(np.abs(x) ** 2))

    def evaluate(ibo):
        scale = math.sqrt(pa.input_saturation**2 * 10 ** (-ibo / 10) / p_in)
        y = pa(x * scale)
        return run(y), float(np.mean(np.abs(y) ** 2))

    rep, pout = evaluate(ibo_start)
    if not rep.passed:
        raise OboError(f"lowest drive (IBO {ibo_start} dB) already fails {rep.binding.name}")
    good = (ibo_start, rep, pout)
    bad = None
    for step in (coarse_step, fine_step):
        ibo = good[0]
        stop = ibo_stop if bad is None else bad[0]
        while ibo - step >= stop - 1e-9:
            ibo = round(ibo - step, 10)
            rep, pout = evaluate(ibo)
            if rep.passed:
                good = (ibo, rep, pout)
            else:
                bad = (ibo, rep)
                break
        if bad is None:
            break
    if bad is not None:
        lo, hi = bad[0], good[0]
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            rep, pout = evaluate(mid)
            if rep.passed:
                hi, good = mid, (mid, rep, pout)
            else:
                lo, bad = mid, (mid, rep)
    ibo, rep, pout = good
    obo = 10 * math.log10(output_reference_power(pa) / pout)
    binding = None
    if bad is not None:
        binding = min((c for c in bad[1].checks if not c.passed), key=lambda c: c.margin).name
    return OboResult(obo, ibo, pout, binding, bad is None, rep)


# BER accounting


@dataclass(frozen=True)
class LinkStats:
    """Error counts; merge partial results with ``+``."""

    errors: int = 0
    bits: int = 0
    block_errors: int = 0
    blocks: int = 0

    def __add__(self, other: "LinkStats") -> "LinkStats":
        return LinkStats(
            self.errors + other.errors,
            self.bits + other.bits,
            self.block_errors + other.block_errors,
            self.blocks + other.blocks,
        )

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else math.nan

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks if self.blocks else math.nan

    def wilson(self, confidence: float = 0.95) -> tuple[float, float]:
        if not self.bits:
            return (0.0, 1.0)
        ci = stats.binomtest(self.errors, self.bits).proportion_ci(confidence, method="wilson")
        return (float(ci.low), float(ci.high))

    def to_dict(self) -> dict:
        lo, hi = self.wilson()
        return {
            "errors": self.errors,
            "bits": self.bits,
            "ber": self.ber,
            "ber_low": lo,
            "ber_high": hi,
            "bler": self.bler,
            "block_errors": self.block_errors,
            "blocks": self.blocks,
        }


def ber_accumulate(tx_bits, rx_bits, block_size: int | None = None) -> LinkStats:
    """Count bit errors, and block errors when ``block_size`` splits the stream."""
    t = np.asarray(tx_bits).ravel()
    r = np.asarray(rx_bits).ravel()
    if t.shape != r.shape:
        raise ValueError(f"length mismatch: {t.size} transmitted vs {r.size} received bits")
    err = t != r
    blocks = block_errors = 0
    if block_size:
        if t.size % block_size:
            raise ValueError("bit count is not a whole number of blocks")
        per = err.reshape(-1, block_size).any(axis=1)
        blocks, block_errors = per.size, int(per.sum())
    return LinkStats(int(err.sum()), int(t.size), block_errors, blocks)


def snr_at_ber(snrs, bers, target: float) -> float:
    """SNR where a BER curve crosses ``target``, interpolating log10(BER) linearly.

    Returns nan if the curve never crosses.
    """
    s = np.asarray(snrs, dtype=float)
    b = np.asarray(bers, dtype=float)
    for i in range(len(s) - 1):
        if b[i] >= target > b[i + 1] and b[i + 1] > 0:
            y0, y1 = math.log10(b[i]), math.log10(b[i + 1])
            return float(s[i] + (math.log10(target) - y0) * (s[i + 1] - s[i]) / (y1 - y0))
        if b[i] >= target and b[i + 1] == 0:
            return float(s[i + 1])
    return math.nan
