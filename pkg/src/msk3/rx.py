"""3MSK DFT-s-OFDM receiver: front end and trellis detectors.

The trellis has four states, the symbol phases 0, pi/2, pi and -pi/2
(quarter turns 0..3). Detection runs over sections of two symbols, so each
branch is one row of the mapping table and the decoded transitions are
always demappable. Every survivor carries its own recursive phase-error
estimate, updated symbol by symbol inside a section.

All detector inputs are (n_blocks, K) arrays; blocks are processed together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, DetectionMode, DetectorConfig, Metric, WaveformConfig
from .mapping import HALF_PI, MappingTable, demap_transitions
from .tx import FrameSamples, wrap

STATE_PHASES = np.arange(4) * HALF_PI
STATE_SYMBOLS = np.exp(1j * STATE_PHASES)


def rx_frontend(frame, cfg: WaveformConfig, channel=None, noise_var: float = 0.0) -> np.ndarray:
    """CP removal, unitary FFT, K in-band bins, one-tap equalizer, K-point IDFT.

    ``frame`` is a :class:`FrameSamples` or a raw (..., n_cp + N) array.
    ``channel`` is the frequency response on the N-bin grid (or on the K
    in-band bins); ``noise_var`` is the per-bin noise-to-signal ratio used by
    the MMSE equalizer (0 gives zero forcing). The result is scaled by
    1/sqrt(L) so unit-modulus 3MSK input comes back near unit amplitude.
    """
    samples = frame.samples if isinstance(frame, FrameSamples) else np.asarray(frame)
    if samples.shape[-1] != cfg.frame_length:
        raise ConfigError(f"frame length {samples.shape[-1]} != n_cp + N = {cfg.frame_length}")
    bins = inband_bins(samples, cfg)
    if channel is not None:
        h = np.asarray(channel)
        if h.shape[-1] == cfg.N:
            h = h[..., cfg.inband_freqs % cfg.N]
        elif h.shape[-1] != cfg.K:
            raise ConfigError("channel response must cover N grid bins or the K in-band bins")
        bins = bins * np.conj(h) / (np.abs(h) ** 2 + noise_var)
    order = cfg.inband_freqs - cfg.inband_first - cfg.K // 2  # signed -K/2..K/2-1
    spec = np.zeros_like(bins)
    spec[..., order % cfg.K] = bins
    return np.fft.ifft(spec, axis=-1, norm="ortho") / np.sqrt(cfg.L)


def inband_bins(samples, cfg: WaveformConfig) -> np.ndarray:
    """Unitary FFT of the main symbol, restricted to the K in-band bins (ascending frequency)."""
    main = np.asarray(samples)[..., cfg.n_cp :]
    spec = np.fft.fft(main, axis=-1, norm="ortho")
    return spec[..., cfg.inband_freqs % cfg.N]


def derotate(symbols, u=None) -> np.ndarray:
    """Undo a known u*pi/2 frame rotation; ``u=None`` (blind) leaves the symbols alone."""
    symbols = np.asarray(symbols)
    if u is None:
        return symbols
    u = np.asarray(u) % 4
    rot = (1j ** (-u)).astype(complex)
    return symbols * (rot[..., None] if rot.ndim and symbols.ndim > rot.ndim else rot)


def track_phase_update(delta_prev, observed_phase, state_phase, lam: float):
    """(1 - lam) * delta_prev + lam * wrap(observed - state)."""
    return (1 - lam) * np.asarray(delta_prev) + lam * wrap(np.asarray(observed_phase) - state_phase)


@dataclass
class TrellisResult:
    """Viterbi output for a stack of blocks.

    ``phase_trace`` holds the tracked phase error along the winning path,
    one value per symbol; ``endpoint_violation`` marks blocks whose
    unconstrained terminal pair did not return to the start state.
    ``section_deltas`` (n, K/2, 4) is the per-state phase-error estimate after
    each section, taken from the winning start state, for diagnostics.
    """

    bits: np.ndarray
    transitions: np.ndarray
    states: np.ndarray
    start_state: np.ndarray
    phase_trace: np.ndarray
    metric: np.ndarray
    endpoint_violation: np.ndarray
    section_deltas: np.ndarray


ALL_PAIRS = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)], dtype=np.int64)
BLOCK_CHUNK = 4096


def _start_states(det: DetectorConfig) -> np.ndarray:
    return np.arange(4) if det.mode == DetectionMode.NON_COHERENT else np.array([0])


def _section_pairs(table: MappingTable, starts, n_sec, cp_continuous, constrained):
    """Branch pairs per section, each shaped (S, 4, B, 2)."""
    S = len(starts)
    main = np.broadcast_to(table.entries.astype(np.int64), (S, 4, 8, 2))
    out = [main] * n_sec
    if cp_continuous:
        if constrained:
            rel = (np.arange(4)[None, :] - starts[:, None]) % 4
            out[-1] = table.terminal.astype(np.int64)[rel]
        else:
            out[-1] = np.broadcast_to(ALL_PAIRS, (S, 4, 9, 2))
    return out


def _symbol_metric(r, delta, state, metric: Metric):
    if metric == Metric.EUCLIDEAN:
        return np.abs(r * np.exp(-1j * delta) - STATE_SYMBOLS[state]) ** 2
    return np.abs(wrap(np.angle(r) - delta - STATE_PHASES[state]))


def _section(r2, delta, pairs, det: DetectorConfig):
    """Metric and tracked phase for every (start, state, branch) of one 2-symbol section.

    ``r2`` is (n, 2), ``delta`` (n, S, 4), ``pairs`` (S, 4, B, 2).
    Returns metric, phase after each symbol and the end state, all (n, S, 4, B).
    """
    s = np.arange(4)[None, :, None]
    mid = (s + pairs[..., 0]) % 4
    end = (mid + pairs[..., 1]) % 4
    r0 = r2[:, 0, None, None, None]
    r1 = r2[:, 1, None, None, None]
    d0 = delta[..., None]
    g = _symbol_metric(r0, d0, mid, det.metric)
    d1 = track_phase_update(d0, np.angle(r0), STATE_PHASES[mid], det.lam)
    g = g + _symbol_metric(r1, d1, end, det.metric)
    d2 = track_phase_update(d1, np.angle(r1), STATE_PHASES[end], det.lam)
    shape = g.shape
    return g, np.broadcast_to(d1, shape), np.broadcast_to(d2, shape), np.broadcast_to(end, shape)


def _select_per_end(values, end, reduce_best):
    """For each end state n, pick over all (from-state, branch) with end == n.

    ``values`` and ``end`` are (n, S, 4, B); returns the reduced value and
    the flat (from * B + b) index of the best entry, both (n, S, 4).
    """
    n, S = values.shape[:2]
    flat_v = values.reshape(n, S, -1)
    flat_e = end.reshape(n, S, -1)
    red = np.empty((n, S, 4))
    arg = np.zeros((n, S, 4), dtype=np.int64)
    for st in range(4):
        masked = np.where(flat_e == st, flat_v, np.inf if reduce_best is np.argmin else -np.inf)
        k = reduce_best(masked, axis=-1)
        arg[..., st] = k
        red[..., st] = np.take_along_axis(masked, k[..., None], axis=-1)[..., 0]
    return red, arg, flat_v, flat_e


def viterbi_detect(
    symbols,
    det: DetectorConfig | None = None,
    table: MappingTable | None = None,
    cp_continuous: bool = False,
) -> TrellisResult:
    """Min-sum Viterbi detection of 3MSK blocks with per-survivor phase tracking.

    Coherent mode starts every block in state 0. Non-coherent mode runs the
    trellis from all four start states and keeps the best, which absorbs an
    unknown rotation by a multiple of pi/2. With ``cp_continuous`` and
    ``enforce_equal_endpoints`` the last section only uses terminal pairs,
    so the winning path ends in its start state; without the constraint the
    last section is free and violations are flagged.
    """
    det = det or DetectorConfig()
    table = table or MappingTable()
    r = np.atleast_2d(np.asarray(symbols, dtype=complex))
    if r.shape[-1] % 2:
        raise ConfigError("block length must be even")
    parts = [_viterbi(r[i : i + BLOCK_CHUNK], det, table, cp_continuous) for i in range(0, len(r), BLOCK_CHUNK)]
    if len(parts) == 1:
        return parts[0]
    return TrellisResult(*(np.concatenate([getattr(p, f) for p in parts]) for f in TrellisResult.__dataclass_fields__))


def _viterbi(r, det, table, cp_continuous) -> TrellisResult:
    n_blk, K = r.shape
    starts = _start_states(det)
    S = len(starts)
    n_sec = K // 2
    constrained = cp_continuous and det.enforce_equal_endpoints
    sec_pairs = _section_pairs(table, starts, n_sec, cp_continuous, constrained)

    alpha = np.full((n_blk, S, 4), np.inf)
    alpha[:, np.arange(S), starts] = 0.0
    delta = np.zeros((n_blk, S, 4))
    back = []
    for j in range(n_sec):
        pairs = sec_pairs[j]
        g, d1, d2, end = _section(r[:, 2 * j : 2 * j + 2], delta, pairs, det)
        cand = alpha[..., None] + g
        alpha, arg, _, _ = _select_per_end(cand, end, np.argmin)
        delta = np.take_along_axis(d2.reshape(n_blk, S, -1), arg, axis=-1)
        mid_delta = np.take_along_axis(d1.reshape(n_blk, S, -1), arg, axis=-1)
        B = pairs.shape[2]
        from_s, b = np.divmod(arg, B)
        pair = pairs[np.arange(S)[None, :, None], from_s, b]  # (n, S, 4, 2)
        back.append((from_s, pair, mid_delta, delta))

    if constrained:
        final = alpha[:, np.arange(S), starts]
        end_state = np.broadcast_to(starts, (n_blk, S))
    else:
        end_state = np.argmin(alpha, axis=-1)
        final = np.take_along_axis(alpha, end_state[..., None], axis=-1)[..., 0]
    rows = np.arange(n_blk)
    best = np.argmin(final, axis=-1)
    metric = final[rows, best]
    state = np.asarray(end_state)[rows, best]

    trans = np.zeros((n_blk, K), dtype=np.int8)
    states = np.zeros((n_blk, K), dtype=np.int8)
    trace = np.zeros((n_blk, K))
    for j in range(n_sec - 1, -1, -1):
        from_s, pair, mid_delta, end_delta = back[j]
        p = pair[rows, best, state]
        trans[:, 2 * j : 2 * j + 2] = p
        states[:, 2 * j + 1] = state
        states[:, 2 * j] = (state - p[:, 1]) % 4
        trace[:, 2 * j] = mid_delta[rows, best, state]
        trace[:, 2 * j + 1] = end_delta[rows, best, state]
        state = from_s[rows, best, state]

    violation = np.zeros(n_blk, dtype=bool)
    if cp_continuous and not constrained:
        prior = trans[:, :-2].astype(np.int64).sum(axis=-1) % 4
        inv = table.terminal_inverse
        code = 3 * (trans[:, -2].astype(np.int64) + 1) + trans[:, -1] + 1
        violation = inv[prior, code] < 0
        # demap a violating terminal pair as last bit 0
        trans[violation, -2:] = table.terminal[prior[violation], 0]
    bits = demap_transitions(trans, table, cp_continuous)
    return TrellisResult(
        bits=bits,
        transitions=trans,
        states=states,
        start_state=starts[best],
        phase_trace=trace,
        metric=metric,
        endpoint_violation=violation,
        section_deltas=np.stack([b[3][rows, best] for b in back], axis=1),
    )


def bcjr_detect(
    symbols,
    det: DetectorConfig | None = None,
    table: MappingTable | None = None,
    noise_variance: float = 1.0,
    cp_continuous: bool = False,
) -> np.ndarray:
    """Log-domain forward/backward detection giving per-bit LLRs, log P(b=0)/P(b=1).

    Sections span two symbols (three bits, or the single terminal bit with
    CP continuity). Branch log-likelihoods are -|r e^{-j delta} - s|^2 /
    noise_variance summed over the two symbols, where delta is the tracked
    phase error of the most likely forward path into the branch's start
    state. Non-coherent mode marginalises the start state uniformly.
    The distance is always Euclidean here.
    """
    det = det or DetectorConfig()
    table = table or MappingTable()
    if noise_variance <= 0:
        raise ValueError("noise variance must be positive")
    r = np.atleast_2d(np.asarray(symbols, dtype=complex))
    if r.shape[-1] % 2:
        raise ConfigError("block length must be even")
    parts = [_bcjr(r[i : i + BLOCK_CHUNK], det, table, noise_variance, cp_continuous) for i in range(0, len(r), BLOCK_CHUNK)]
    return np.concatenate(parts)


def _bcjr(r, det, table, noise_variance, cp_continuous):
    n_blk, K = r.shape
    det = DetectorConfig(lam=det.lam, metric=Metric.EUCLIDEAN, mode=det.mode)
    starts = _start_states(det)
    S = len(starts)
    n_sec = K // 2
    sec_pairs = _section_pairs(table, starts, n_sec, cp_continuous, constrained=True)

    log_a = np.full((n_blk, S, 4), -np.inf)
    log_a[:, np.arange(S), starts] = -np.log(S)
    delta = np.zeros((n_blk, S, 4))
    fwd = []
    for j in range(n_sec):
        g, _, d2, end = _section(r[:, 2 * j : 2 * j + 2], delta, sec_pairs[j], det)
        gamma = -g / noise_variance
        fwd.append((log_a, gamma, end))
        tot = log_a[..., None] + gamma
        flat_v = tot.reshape(n_blk, S, -1)
        flat_e = end.reshape(n_blk, S, -1)
        new = np.empty_like(log_a)
        for st in range(4):
            masked = np.where(flat_e == st, flat_v, -np.inf)
            new[..., st] = _logsumexp(masked, axis=-1)
            k = np.argmax(masked, axis=-1)
            delta[..., st] = np.take_along_axis(d2.reshape(n_blk, S, -1), k[..., None], axis=-1)[..., 0]
        log_a = new - np.max(new, axis=(-1, -2), keepdims=True)

    log_b = np.full((n_blk, S, 4), -np.inf)
    if cp_continuous:
        log_b[:, np.arange(S), starts] = 0.0
    else:
        log_b[:] = 0.0
    labels = (np.arange(8)[:, None] >> np.array([2, 1, 0])) & 1
    llrs = []
    for j in range(n_sec - 1, -1, -1):
        log_a, gamma, end = fwd[j]
        beta_end = np.take_along_axis(log_b, end.reshape(n_blk, S, -1), axis=-1).reshape(gamma.shape)
        joint = (log_a[..., None] + gamma + beta_end).reshape(n_blk, S * 4, -1)
        if j == n_sec - 1 and cp_continuous:
            llrs.append((_logsumexp(joint[..., 0], -1) - _logsumexp(joint[..., 1], -1))[:, None])
        else:
            sec = []
            for i in range(3):
                l0 = _logsumexp(np.where(labels[:, i] == 0, joint, -np.inf).reshape(n_blk, -1), -1)
                l1 = _logsumexp(np.where(labels[:, i] == 1, joint, -np.inf).reshape(n_blk, -1), -1)
                sec.append(l0 - l1)
            llrs.append(np.stack(sec, axis=-1))
        log_b = _logsumexp(gamma + beta_end, axis=-1)
        log_b = log_b - np.max(log_b, axis=(-1, -2), keepdims=True)
    return np.concatenate(llrs[::-1], axis=-1)


def _logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def hard_decisions(llr) -> np.ndarray:
    return (np.asarray(llr) < 0).astype(np.uint8)


def write_llr_csv(path, llr):
    llr = np.asarray(llr).ravel()
    with open(path, "w") as fh:
        fh.write("bit_index,llr\n")
        for i, v in enumerate(llr):
            fh.write(f"{i},{float(v)!r}\n")
