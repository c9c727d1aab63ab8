import itertools

import numpy as np
import pytest

from msk3.config import ConfigError, DetectionMode, DetectorConfig, Metric, WaveformConfig
from msk3.mapping import MappingKind, MappingTable
from msk3.rx import (
    bcjr_detect,
    derotate,
    hard_decisions,
    rx_frontend,
    track_phase_update,
    viterbi_detect,
    write_llr_csv,
)
from msk3.tx import block_samples, modulate_frame_stream

from oracles import NSM_ROWS, MAIN_ROWS, oracle_llr, oracle_ml_detect, oracle_symbols, oracle_tracking


def _noisy_block(rng, cp, rows, K, sigma):
    n_bits = 3 * K // 2 - (2 if cp else 0)
    bits = rng.integers(0, 2, n_bits)
    s = np.array(oracle_symbols(bits, cp, rows))
    return bits, s + sigma * (rng.standard_normal(K) + 1j * rng.standard_normal(K))


def test_frontend_identity_at_unit_oversampling():
    rng = np.random.default_rng(0)
    cfg = WaveformConfig(K=24, N=256, n_cp=32, cp_continuity=True)
    bits = rng.integers(0, 2, (20, cfg.bits_per_frame), dtype=np.uint8)
    fr = modulate_frame_stream(bits, cfg)
    np.testing.assert_allclose(rx_frontend(fr, cfg), block_samples(bits, cfg), atol=1e-12)


def test_frontend_two_times_oversampling_is_approximate():
    rng = np.random.default_rng(1)
    cfg = WaveformConfig(K=24, L=2, N=256, n_cp=32, cp_continuity=True)
    bits = rng.integers(0, 2, (50, cfg.bits_per_frame), dtype=np.uint8)
    y = rx_frontend(modulate_frame_stream(bits, cfg), cfg)
    ref = block_samples(bits, cfg.replace(L=1))
    err = np.mean(np.abs(y - ref) ** 2)
    assert 0 < err < 0.5
    assert np.mean(np.abs(y) ** 2) == pytest.approx(1.0, rel=0.15)


def test_frontend_zero_frame_and_length_check():
    cfg = WaveformConfig(K=12, N=64, n_cp=16)
    assert np.all(rx_frontend(np.zeros((2, 80), dtype=complex), cfg) == 0)
    with pytest.raises(ConfigError):
        rx_frontend(np.zeros(79, dtype=complex), cfg)


def test_frontend_equalizes_flat_channel():
    rng = np.random.default_rng(2)
    cfg = WaveformConfig(K=12, N=64, n_cp=16)
    fr = modulate_frame_stream(rng.integers(0, 2, 3 * cfg.bits_per_frame, dtype=np.uint8), cfg)
    h = 0.5 * np.exp(0.3j) * np.ones(cfg.N)
    np.testing.assert_allclose(rx_frontend(fr.samples * h[0], cfg, h), rx_frontend(fr, cfg), atol=1e-12)


def test_derotate():
    y = np.exp(1j * np.arange(8)).reshape(2, 4)
    np.testing.assert_array_equal(derotate(y, None), y)
    np.testing.assert_allclose(derotate(y, [0, 0]), y)
    np.testing.assert_allclose(derotate(y * np.array([1j, -1])[:, None], [1, 2]), y)
    np.testing.assert_allclose(derotate(y[0] * -1j, 3), y[0])


@pytest.mark.parametrize("cp", [False, True])
@pytest.mark.parametrize("rows, kind", [(MAIN_ROWS, MappingKind.SYMMETRIC), (NSM_ROWS, MappingKind.NON_SYMMETRIC)])
def test_viterbi_is_maximum_likelihood(cp, rows, kind):
    rng = np.random.default_rng(3)
    table = MappingTable.for_kind(kind)
    K = 6
    for _ in range(40):
        _, r = _noisy_block(rng, cp, rows, K, 0.6)
        got = viterbi_detect(r, DetectorConfig(), table, cp).bits[0]
        assert list(got) == oracle_ml_detect(r, cp, rows)


@pytest.mark.parametrize("cp", [False, True])
def test_bcjr_matches_exhaustive_llr(cp):
    rng = np.random.default_rng(4)
    K, n0 = 6, 0.5
    for _ in range(20):
        _, r = _noisy_block(rng, cp, MAIN_ROWS, K, np.sqrt(n0 / 2))
        got = bcjr_detect(r, DetectorConfig(), MappingTable(), n0, cp)[0]
        np.testing.assert_allclose(got, oracle_llr(r, cp, n0), atol=1e-9)


def test_bcjr_nsm_matches_exhaustive_llr():
    rng = np.random.default_rng(5)
    _, r = _noisy_block(rng, True, NSM_ROWS, 6, 0.4)
    got = bcjr_detect(r, DetectorConfig(), MappingTable.non_symmetric(), 0.3, True)[0]
    np.testing.assert_allclose(got, oracle_llr(r, True, 0.3, NSM_ROWS), atol=1e-9)


def test_viterbi_bcjr_agree_at_high_snr():
    rng = np.random.default_rng(6)
    K, n_blk, n0 = 12, 6250, 10 ** (-20 / 10)
    bits = rng.integers(0, 2, (n_blk, 16), dtype=np.uint8)
    cfg = WaveformConfig(K=K, N=64, n_cp=16, cp_continuity=True)
    s = block_samples(bits, cfg)
    r = s + np.sqrt(n0 / 2) * (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape))
    v = viterbi_detect(r, DetectorConfig(), cfg.table(), True).bits
    b = hard_decisions(bcjr_detect(r, DetectorConfig(), cfg.table(), n0, True))
    assert v.size >= 100_000
    assert np.mean(v == b) >= 0.999


def test_noiseless_loopback_all_flags():
    rng = np.random.default_rng(7)
    for L, cp, sc, kind in itertools.product((1, 2), (False, True), (False, True), MappingKind):
        cfg = WaveformConfig(K=12, L=L, N=64, n_cp=16, cp_continuity=cp, symbol_continuity=sc, mapping_kind=kind)
        bits = rng.integers(0, 2, 20 * cfg.bits_per_frame, dtype=np.uint8)
        fr = modulate_frame_stream(bits, cfg)
        y = derotate(rx_frontend(fr, cfg), fr.u)
        for det in (DetectorConfig(), DetectorConfig(metric=Metric.ANGULAR), DetectorConfig(lam=0.05)):
            assert np.array_equal(viterbi_detect(y, det, cfg.table(), cp).bits.ravel(), bits)
        llr = bcjr_detect(y, DetectorConfig(), cfg.table(), 0.1, cp)
        assert np.array_equal(hard_decisions(llr).ravel(), bits)


def test_non_coherent_absorbs_quarter_turn_offsets():
    rng = np.random.default_rng(8)
    cfg = WaveformConfig(K=12, N=64, n_cp=16, cp_continuity=True, symbol_continuity=True)
    bits = rng.integers(0, 2, 200 * cfg.bits_per_frame, dtype=np.uint8)
    fr = modulate_frame_stream(bits, cfg)
    y = rx_frontend(fr, cfg)  # rotation left in place
    det = DetectorConfig(mode=DetectionMode.NON_COHERENT)
    res = viterbi_detect(y, det, cfg.table(), True)
    assert np.array_equal(res.bits.ravel(), bits)
    assert np.array_equal(res.start_state, fr.u % 4)
    same = viterbi_detect(y * 1j, det, cfg.table(), True)
    assert np.array_equal(same.transitions, res.transitions)
    llr = bcjr_detect(y * -1, det, cfg.table(), 0.1, True)
    assert np.array_equal(hard_decisions(llr).ravel(), bits)


def test_tracking_update_rule():
    assert track_phase_update(0.3, 1.0, 0.5, 1.0) == pytest.approx(0.5)
    assert track_phase_update(0.3, 1.0, 0.5, 0.0) == pytest.approx(0.3)
    # wrap: observed just past -pi against state pi is a small positive error
    assert track_phase_update(0.0, -np.pi + 0.1, np.pi, 1.0) == pytest.approx(0.1)


@pytest.mark.parametrize("lam", [0.05, 0.2, 1.0])
def test_tracking_follows_closed_form(lam):
    rng = np.random.default_rng(9)
    cfg = WaveformConfig(K=24, N=256, n_cp=32, cp_continuity=True)
    s = block_samples(rng.integers(0, 2, (5, cfg.bits_per_frame), dtype=np.uint8), cfg)
    res = viterbi_detect(s * np.exp(0.2j), DetectorConfig(lam=lam), cfg.table(), True)
    n = np.arange(1, 25)
    np.testing.assert_allclose(res.phase_trace, np.broadcast_to(oracle_tracking(0.2, lam, n), (5, 24)), atol=1e-12)


def test_tracking_converges_to_constant_offset():
    rng = np.random.default_rng(10)
    cfg = WaveformConfig(K=120, N=1024, n_cp=72, cp_continuity=True)
    s = block_samples(rng.integers(0, 2, (20, cfg.bits_per_frame), dtype=np.uint8), cfg)
    r = s * np.exp(0.2j) + 0.05 * (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape))
    res = viterbi_detect(r, DetectorConfig(lam=0.05), cfg.table(), True)
    assert np.all(np.abs(res.phase_trace[:, -1] - 0.2) < 0.02)


def test_trellis_result_consistency():
    rng = np.random.default_rng(11)
    _, r = _noisy_block(rng, True, MAIN_ROWS, 12, 0.5)
    res = viterbi_detect(np.tile(r, (3, 1)), DetectorConfig(), MappingTable(), True)
    assert np.all(res.metric >= 0)
    np.testing.assert_array_equal(np.cumsum(res.transitions, axis=-1) % 4, res.states)
    assert np.all(res.states[:, -1] == 0)
    assert res.section_deltas.shape == (3, 6, 4)


def test_endpoint_enforcement_only_changes_violating_blocks():
    rng = np.random.default_rng(12)
    cfg = WaveformConfig(K=12, N=64, n_cp=16, cp_continuity=True)
    s = block_samples(rng.integers(0, 2, (3000, cfg.bits_per_frame), dtype=np.uint8), cfg)
    r = s + 0.45 * (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape))
    free = viterbi_detect(r, DetectorConfig(enforce_equal_endpoints=False), cfg.table(), True)
    held = viterbi_detect(r, DetectorConfig(), cfg.table(), True)
    v = free.endpoint_violation
    assert v.any() and not v.all()
    assert not held.endpoint_violation.any()
    np.testing.assert_array_equal(free.bits[~v], held.bits[~v])


def test_odd_block_length_rejected():
    with pytest.raises(ConfigError):
        viterbi_detect(np.ones(5, dtype=complex))
    with pytest.raises(ConfigError):
        bcjr_detect(np.ones(5, dtype=complex))
    with pytest.raises(ValueError):
        bcjr_detect(np.ones(4, dtype=complex), noise_variance=0.0)


def test_large_batches_are_chunked_consistently():
    rng = np.random.default_rng(13)
    cfg = WaveformConfig(K=4, N=16, n_cp=4)
    s = block_samples(rng.integers(0, 2, (5000, cfg.bits_per_frame), dtype=np.uint8), cfg)
    r = s + 0.3 * (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape))
    whole = viterbi_detect(r).bits
    np.testing.assert_array_equal(whole[4500:], viterbi_detect(r[4500:]).bits)


def test_llr_csv(tmp_path):
    write_llr_csv(tmp_path / "llr.csv", np.array([[1.5, -2.0]]))
    assert (tmp_path / "llr.csv").read_text().splitlines() == ["bit_index,llr", "0,1.5", "1,-2.0"]
