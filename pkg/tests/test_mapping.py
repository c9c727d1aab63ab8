import math

import numpy as np
import pytest

from msk3.mapping import (
    SYMMETRIC_PAIRS,
    MappingError,
    MappingKind,
    MappingTable,
    Transition,
    accumulate_phases,
    bits_per_block,
    demap_transitions,
    evaluate_mapping,
    map_bits,
    map_transitions,
)

from oracles import NSM_ROWS, oracle_mapping_distance, oracle_phases, oracle_transitions

Q = math.pi / 2


def test_transition_values():
    assert {t.radians for t in Transition} == {-Q, 0.0, Q}
    assert Transition.from_symbol("+") is Transition.PLUS_HALF_PI
    assert Transition.from_symbol("0") is Transition.ZERO
    assert Transition.from_symbol("-") is Transition.MINUS_HALF_PI


@pytest.mark.parametrize(
    "bits, expected",
    [((0, 0, 0), (-1, 1)), ((1, 1, 1), (1, 1)), ((0, 1, 0), (-1, 0)), ((1, 0, 0), (0, 1))],
)
def test_main_rows(bits, expected):
    assert tuple(map_bits(bits).transitions) == expected


def test_terminal_row_returns_to_zero_from_pi():
    # (+,+) then (-,+) leaves the phase at pi; last bit 0 must pick (-,-)
    blk = map_bits((1, 1, 1, 0, 0, 0, 0), cp_continuous=True)
    assert blk.transitions[:4].sum() % 4 == 2
    assert tuple(blk.transitions[-2:]) == (-1, -1)
    assert blk.phases[-1] == pytest.approx(0.0)


def test_all_zero_phases():
    blk = map_bits(np.zeros(6, dtype=np.uint8))
    np.testing.assert_allclose(blk.phases, [3 * Q, 0.0, 3 * Q, 0.0])


def test_block_invariants():
    rng = np.random.default_rng(0)
    for cp in (False, True):
        K = 16
        blk = map_bits(rng.integers(0, 2, bits_per_block(K, cp)), cp_continuous=cp, n_symbols=K)
        assert len(blk) == K
        assert np.array_equal(np.abs(blk.symbols), np.ones(K))
        steps = np.angle(blk.symbols / np.roll(blk.symbols, 1))
        assert np.all(np.abs(steps[1:]) <= Q + 1e-12)
        if cp:
            assert np.abs(steps[0]) <= Q + 1e-12
            assert blk.phases[-1] == pytest.approx(0.0, abs=1e-12)


def test_bit_budget():
    for K in range(4, 257, 2):
        assert bits_per_block(K, False) == 3 * K // 2
        assert bits_per_block(K, True) == 3 * K // 2 - 2


@pytest.mark.parametrize("n_bits, cp", [(5, False), (5, True), (3, True)])
def test_bad_bit_counts(n_bits, cp):
    with pytest.raises(MappingError):
        map_bits(np.zeros(n_bits, dtype=np.uint8), cp_continuous=cp)


def test_wrong_count_for_declared_length():
    with pytest.raises(MappingError):
        map_bits(np.zeros(9, dtype=np.uint8), n_symbols=8)


def test_demap_examples():
    assert list(demap_transitions([Transition.MINUS_HALF_PI, Transition.PLUS_HALF_PI])) == [0, 0, 0]
    with pytest.raises(MappingError):
        demap_transitions([0, 0], MappingTable.symmetric())
    assert list(demap_transitions([0, 0], MappingTable.non_symmetric())) == [0, 0, 1]


def test_demap_rejects_inconsistent_terminal():
    trans = map_transitions(np.zeros(7, dtype=np.uint8), MappingTable(), True).copy()
    trans[-2:] = (1, 1)
    with pytest.raises(MappingError):
        demap_transitions(trans, MappingTable(), True)


@pytest.mark.parametrize("kind", list(MappingKind))
@pytest.mark.parametrize("cp", [False, True])
def test_round_trip(kind, cp):
    table = MappingTable.for_kind(kind)
    rng = np.random.default_rng(1)
    bits = rng.integers(0, 2, (10_000, bits_per_block(12, cp)), dtype=np.uint8)
    assert np.array_equal(demap_transitions(map_transitions(bits, table, cp), table, cp), bits)


def test_symmetric_never_emits_zero_pair():
    rng = np.random.default_rng(2)
    trans = map_transitions(rng.integers(0, 2, (5000, 22), dtype=np.uint8), MappingTable(), True)
    pairs = trans.reshape(5000, -1, 2)
    assert not np.any((pairs[..., 0] == 0) & (pairs[..., 1] == 0))


def test_non_symmetric_discards_plus_minus():
    t = MappingTable.non_symmetric()
    rows = {tuple(r) for r in t.entries.tolist()}
    assert (1, -1) not in rows and (0, 0) in rows


def test_against_literal_tables():
    rng = np.random.default_rng(3)
    for cp in (False, True):
        for rows, table in ((None, MappingTable.symmetric()), (NSM_ROWS, MappingTable.non_symmetric())):
            for _ in range(200):
                bits = rng.integers(0, 2, bits_per_block(10, cp))
                ref = oracle_transitions(bits, cp, rows) if rows else oracle_transitions(bits, cp)
                blk = map_bits(bits, table, cp)
                np.testing.assert_allclose(blk.transitions * Q, ref)
                np.testing.assert_allclose(np.exp(1j * blk.phases), np.exp(1j * np.array(oracle_phases(ref))), atol=1e-12)


def test_table_validation():
    with pytest.raises(MappingError):
        MappingTable(entries=np.vstack([SYMMETRIC_PAIRS[:7], [[0, 0]]]))
    dup = SYMMETRIC_PAIRS.copy()
    dup[1] = dup[0]
    with pytest.raises(MappingError):
        MappingTable(entries=dup, kind=MappingKind.NON_SYMMETRIC)
    bad_terminal = MappingTable().terminal.copy()
    bad_terminal[0, 0] = (1, 1)
    with pytest.raises(MappingError):
        MappingTable(terminal=bad_terminal)


def test_text_round_trip(tmp_path):
    t = MappingTable.non_symmetric()
    path = tmp_path / "nsm.txt"
    path.write_text(t.to_text())
    loaded = MappingTable.load(path)
    assert np.array_equal(loaded.entries, t.entries)
    assert np.array_equal(loaded.terminal, t.terminal)
    assert loaded.kind == t.kind


def test_accumulate_phases_examples():
    np.testing.assert_allclose(accumulate_phases([Transition.PLUS_HALF_PI] * 2), [Q, math.pi])
    assert accumulate_phases([]).size == 0
    np.testing.assert_allclose(accumulate_phases([1, -1, 0], math.pi), [3 * Q, math.pi, math.pi])


def test_mapping_metric_matches_oracle():
    # frozen from the exhaustive oracle: d_min = sqrt(2), 80 pairs at d_min,
    # Hamming distance 1 at best and 1.3 on average there
    m = evaluate_mapping(MappingTable.symmetric())
    assert m.min_distance == pytest.approx(math.sqrt(2))
    assert (m.pairs_at_min, m.hamming_at_min) == (80, 1)
    assert m.mean_hamming_at_min == pytest.approx(1.3)
    d, n, h, mean = oracle_mapping_distance()
    assert (m.min_distance, m.pairs_at_min, m.hamming_at_min) == pytest.approx((d, n, h))
    assert m.mean_hamming_at_min == pytest.approx(mean)
    nsm = evaluate_mapping(MappingTable.non_symmetric())
    assert (nsm.pairs_at_min, nsm.mean_hamming_at_min) == (113, pytest.approx(oracle_mapping_distance(NSM_ROWS)[3]))


def test_mapping_metric_rotation_invariant():
    t = MappingTable()
    a, b = evaluate_mapping(t), evaluate_mapping(t, rotation=0.7)
    assert a.min_distance == pytest.approx(b.min_distance)
    assert a.pairs_at_min == b.pairs_at_min
    assert a.weighted_hamming == pytest.approx(b.weighted_hamming)


def test_table_beats_shuffled_labels():
    bad = SYMMETRIC_PAIRS.copy()
    bad[[1, 2]] = bad[[2, 1]]
    assert evaluate_mapping(MappingTable()).score >= evaluate_mapping(MappingTable(entries=bad)).score
    assert evaluate_mapping(MappingTable()).score > evaluate_mapping(MappingTable(entries=bad)).score
