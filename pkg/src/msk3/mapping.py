"""Bit-to-transition mapping for 3MSK blocks.

Phases are handled internally as integer quarter turns (phase = q * pi/2),
so accumulation and CP termination are exact. Transitions are the integers
-1, 0, +1 (quarter turns).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HALF_PI = np.pi / 2


class Transition(enum.IntEnum):
    """Phase step between consecutive symbols, in quarter turns."""

    MINUS_HALF_PI = -1
    ZERO = 0
    PLUS_HALF_PI = 1

    @property
    def radians(self) -> float:
        return int(self) * HALF_PI

    @classmethod
    def from_symbol(cls, s: str) -> "Transition":
        return _SYMBOLS[s.strip()]


_SYMBOLS = {
    "0": Transition.ZERO,
    "+": Transition.PLUS_HALF_PI,
    "-": Transition.MINUS_HALF_PI,
    "+pi/2": Transition.PLUS_HALF_PI,
    "-pi/2": Transition.MINUS_HALF_PI,
}


class MappingKind(str, enum.Enum):
    SYMMETRIC = "symmetric"
    NON_SYMMETRIC = "non_symmetric"


class MappingError(ValueError):
    """Raised on invalid bit counts or transition pairs outside a table."""


_P, _Z, _M = 1, 0, -1

# rows indexed by the integer value of (b2, b1, b0), b2 most significant
SYMMETRIC_PAIRS = np.array(
    [
        [_M, _P],  # 000
        [_P, _M],  # 001
        [_M, _Z],  # 010
        [_Z, _M],  # 011
        [_Z, _P],  # 100
        [_P, _Z],  # 101
        [_M, _M],  # 110
        [_P, _P],  # 111
    ],
    dtype=np.int8,
)

# terminal pairs returning the relative phase to 0; [prior quarter turns][last bit]
TERMINAL_PAIRS = np.array(
    [
        [[_M, _P], [_P, _M]],  # prior 0
        [[_M, _Z], [_Z, _M]],  # prior +pi/2
        [[_M, _M], [_P, _P]],  # prior pi
        [[_Z, _P], [_P, _Z]],  # prior -pi/2
    ],
    dtype=np.int8,
)


@dataclass(frozen=True)
class MappingTable:
    """Bit-triple to transition-pair table plus the CP-continuity terminal rows."""

    entries: np.ndarray = field(default_factory=lambda: SYMMETRIC_PAIRS.copy())
    kind: MappingKind = MappingKind.SYMMETRIC
    terminal: np.ndarray = field(default_factory=lambda: TERMINAL_PAIRS.copy())

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int8)
        terminal = np.asarray(self.terminal, dtype=np.int8)
        if entries.shape != (8, 2) or terminal.shape != (4, 2, 2):
            raise MappingError("table needs 8 main rows and 4x2 terminal rows")
        if not np.all(np.isin(entries, (-1, 0, 1))) or not np.all(np.isin(terminal, (-1, 0, 1))):
            raise MappingError("transitions must be 0, +pi/2 or -pi/2")
        codes = _pair_code(entries)
        if len(set(codes.tolist())) != 8:
            raise MappingError("main table pairs must be distinct")
        if self.kind == MappingKind.SYMMETRIC and _pair_code(np.array([[0, 0]]))[0] in codes:
            raise MappingError("symmetric mapping cannot contain the (0, 0) pair")
        for prior in range(4):
            rows = terminal[prior]
            if _pair_code(rows)[0] == _pair_code(rows)[1]:
                raise MappingError(f"terminal rows for prior state {prior} are not distinct")
            if np.any((prior + rows.sum(axis=1)) % 4 != 0):
                raise MappingError(f"terminal rows for prior state {prior} do not return to 0")
        entries.flags.writeable = False
        terminal.flags.writeable = False
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "terminal", terminal)
        object.__setattr__(self, "kind", MappingKind(self.kind))

    @property
    def inverse(self) -> np.ndarray:
        """Lookup from pair code (3*(t1+1) + (t2+1)) to bit value, -1 if absent."""
        inv = np.full(9, -1, dtype=np.int16)
        inv[_pair_code(self.entries)] = np.arange(8)
        return inv

    @property
    def terminal_inverse(self) -> np.ndarray:
        """Lookup [prior state, pair code] -> last bit, -1 if absent."""
        inv = np.full((4, 9), -1, dtype=np.int16)
        for prior in range(4):
            inv[prior, _pair_code(self.terminal[prior])] = (0, 1)
        return inv

    def pair(self, b2: int, b1: int, b0: int) -> tuple[Transition, Transition]:
        t1, t2 = self.entries[4 * b2 + 2 * b1 + b0]
        return Transition(int(t1)), Transition(int(t2))

    @classmethod
    def symmetric(cls) -> "MappingTable":
        return cls()

    @classmethod
    def non_symmetric(cls) -> "MappingTable":
        """Symmetric table with the (+pi/2, -pi/2) pair replaced by (0, 0)."""
        entries = SYMMETRIC_PAIRS.copy()
        entries[0b001] = (0, 0)
        return cls(entries=entries, kind=MappingKind.NON_SYMMETRIC)

    @classmethod
    def for_kind(cls, kind) -> "MappingTable":
        kind = MappingKind(kind)
        return cls.symmetric() if kind == MappingKind.SYMMETRIC else cls.non_symmetric()

    @classmethod
    def from_text(cls, text: str) -> "MappingTable":
        """Parse a table from text.

        Main rows are ``b2b1b0 t1 t2`` (e.g. ``000 - +``). Terminal rows are
        ``T prior bit t1 t2`` with ``prior`` in quarter turns 0..3. A line
        ``kind non_symmetric`` sets the kind. ``#`` starts a comment. Missing
        terminal rows fall back to the built-in ones.
        """
        entries = np.zeros((8, 2), dtype=np.int8)
        seen = set()
        terminal = TERMINAL_PAIRS.copy()
        kind = MappingKind.SYMMETRIC
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0].lower() == "kind":
                    kind = MappingKind(tok[1].lower())
                elif tok[0].upper() == "T":
                    prior, bit = int(tok[1]) % 4, int(tok[2])
                    terminal[prior, bit] = (Transition.from_symbol(tok[3]), Transition.from_symbol(tok[4]))
                else:
                    bits = tok[0]
                    if len(bits) != 3 or set(bits) - {"0", "1"}:
                        raise MappingError(f"bad bit label {bits!r}")
                    idx = int(bits, 2)
                    entries[idx] = (Transition.from_symbol(tok[1]), Transition.from_symbol(tok[2]))
                    seen.add(idx)
            except (IndexError, KeyError, ValueError) as exc:
                raise MappingError(f"line {lineno}: cannot parse {raw!r}") from exc
        if len(seen) != 8:
            raise MappingError("table text must define all 8 bit triples")
        return cls(entries=entries, kind=kind, terminal=terminal)

    @classmethod
    def load(cls, path) -> "MappingTable":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        sym = {-1: "-", 0: "0", 1: "+"}
        lines = [f"kind {self.kind.value}"]
        for idx, (t1, t2) in enumerate(self.entries):
            lines.append(f"{idx:03b} {sym[int(t1)]} {sym[int(t2)]}")
        for prior in range(4):
            for bit in range(2):
                t1, t2 = self.terminal[prior, bit]
                lines.append(f"T {prior} {bit} {sym[int(t1)]} {sym[int(t2)]}")
        return "\n".join(lines) + "\n"


def _pair_code(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64)
    return 3 * (pairs[..., 0] + 1) + (pairs[..., 1] + 1)


@dataclass(frozen=True)
class MskBlock:
    """One block of 3MSK symbols and the bits/transitions that produced it."""

    phases: np.ndarray
    symbols: np.ndarray
    transitions: np.ndarray
    bits: np.ndarray
    cp_continuous: bool

    def __len__(self):
        return len(self.phases)


def bits_per_block(n_symbols: int, cp_continuous: bool) -> int:
    _check_block_size(n_symbols, cp_continuous)
    return 3 * n_symbols // 2 - (2 if cp_continuous else 0)


def symbols_for_bits(n_bits: int, cp_continuous: bool) -> int:
    extra = 2 if cp_continuous else 0
    if (n_bits + extra) % 3:
        raise MappingError(f"{n_bits} bits do not fill a whole block")
    n_symbols = 2 * (n_bits + extra) // 3
    _check_block_size(n_symbols, cp_continuous)
    return n_symbols


def _check_block_size(n_symbols: int, cp_continuous: bool):
    if n_symbols % 2:
        raise MappingError(f"block length {n_symbols} is odd")
    if cp_continuous and n_symbols < 4:
        raise MappingError("CP continuity needs at least 4 symbols per block")
    if n_symbols < 2:
        raise MappingError("block needs at least 2 symbols")


def map_transitions(bits: np.ndarray, table: MappingTable, cp_continuous: bool) -> np.ndarray:
    """Vectorized mapping of bit blocks (..., B) to transitions (..., K) in quarter turns."""
    bits = np.asarray(bits)
    n_bits = bits.shape[-1]
    n_symbols = symbols_for_bits(n_bits, cp_continuous)
    lead = bits.shape[:-1]
    n_full = n_symbols // 2 - (1 if cp_continuous else 0)
    triples = bits[..., : 3 * n_full].reshape(*lead, n_full, 3).astype(np.int64)
    idx = 4 * triples[..., 0] + 2 * triples[..., 1] + triples[..., 2]
    trans = np.empty((*lead, n_symbols), dtype=np.int8)
    trans[..., : 2 * n_full] = table.entries[idx].reshape(*lead, 2 * n_full)
    if cp_continuous:
        prior = trans[..., : 2 * n_full].astype(np.int64).sum(axis=-1) % 4
        last = bits[..., -1].astype(np.int64)
        trans[..., -2:] = table.terminal[prior, last]
    return trans


def accumulate_phases(transitions, start_phase: float = 0.0) -> np.ndarray:
    """Cumulative phases in [0, 2pi) after each transition.

    ``transitions`` holds :class:`Transition` members or their quarter-turn
    integer values.
    """
    steps = np.asarray([int(t) for t in transitions], dtype=np.int64)
    if steps.size == 0:
        return np.zeros(0)
    return np.mod(start_phase + np.cumsum(steps) * HALF_PI, 2 * np.pi)


def quarter_phases(transitions: np.ndarray) -> np.ndarray:
    """Cumulative relative phase states (quarter turns, 0..3) for transitions (..., K)."""
    return np.cumsum(np.asarray(transitions, dtype=np.int64), axis=-1) % 4


def map_bits(
    bits,
    table: MappingTable | None = None,
    cp_continuous: bool = False,
    start_phase: float = 0.0,
    n_symbols: int | None = None,
) -> MskBlock:
    """Map one block of bits to 3MSK symbols.

    Three bits select a pair of transitions. With ``cp_continuous`` the last
    pair carries a single bit and is chosen from the terminal table so the
    final symbol returns to ``start_phase``; the block therefore repeats its
    start symbol at the end and the cyclic wrap is itself a legal transition.
    """
    table = table or MappingTable()
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if np.any(bits > 1):
        raise MappingError("bits must be 0 or 1")
    if n_symbols is not None:
        expected = bits_per_block(n_symbols, cp_continuous)
        if bits.size != expected:
            raise MappingError(f"expected {expected} bits for {n_symbols} symbols, got {bits.size}")
    trans = map_transitions(bits, table, cp_continuous)
    q = quarter_phases(trans)
    phases = np.mod(start_phase + q * HALF_PI, 2 * np.pi)
    return MskBlock(
        phases=phases,
        symbols=np.exp(1j * phases),
        transitions=trans,
        bits=bits.copy(),
        cp_continuous=cp_continuous,
    )


def demap_transitions(transitions, table: MappingTable | None = None, cp_continuous: bool = False) -> np.ndarray:
    """Invert :func:`map_transitions`; accepts (..., K) quarter-turn arrays."""
    table = table or MappingTable()
    trans = np.asarray([int(t) for t in transitions] if not isinstance(transitions, np.ndarray) else transitions)
    trans = trans.astype(np.int64)
    n_symbols = trans.shape[-1]
    _check_block_size(n_symbols, cp_continuous)
    if not np.all(np.isin(trans, (-1, 0, 1))):
        raise MappingError("transition values must be -1, 0 or +1 quarter turns")
    lead = trans.shape[:-1]
    n_full = n_symbols // 2 - (1 if cp_continuous else 0)
    pairs = trans[..., : 2 * n_full].reshape(*lead, n_full, 2)
    vals = table.inverse[_pair_code(pairs)]
    if np.any(vals < 0):
        raise MappingError("transition pair not present in mapping table")
    shifts = np.array([2, 1, 0])
    bits = ((vals[..., None] >> shifts) & 1).reshape(*lead, 3 * n_full)
    if cp_continuous:
        prior = trans[..., : 2 * n_full].sum(axis=-1) % 4
        last = table.terminal_inverse[prior, _pair_code(trans[..., -2:])]
        if np.any(last < 0):
            raise MappingError("terminal pair inconsistent with its prior phase")
        bits = np.concatenate([bits, last[..., None]], axis=-1)
    return bits.astype(np.uint8)


@dataclass(frozen=True)
class MappingMetric:
    """Distance profile of a mapping over all 4-symbol (6-bit) sequences.

    ``score`` orders mappings: larger minimum distance first, then fewer bit
    errors per nearest-neighbour pair.
    """

    min_distance: float
    pairs_at_min: int
    hamming_at_min: int
    mean_hamming_at_min: float
    weighted_hamming: float

    @property
    def score(self) -> tuple[float, float]:
        return (round(self.min_distance, 12), -self.mean_hamming_at_min)


def evaluate_mapping(table: MappingTable | None = None, rotation: float = 0.0) -> MappingMetric:
    """Brute-force distance/Hamming profile of ``table`` over all 6-bit inputs.

    ``weighted_hamming`` is the average bit-error count over all sequence
    pairs weighted by exp(-d^2), a smooth union-bound style figure (lower is
    better).
    """
    table = table or MappingTable()
    words = np.array(list(itertools.product((0, 1), repeat=6)), dtype=np.uint8)
    trans = map_transitions(words, table, cp_continuous=False)
    seqs = np.exp(1j * (rotation + quarter_phases(trans) * HALF_PI))
    d = np.linalg.norm(seqs[:, None, :] - seqs[None, :, :], axis=-1)
    ham = (words[:, None, :] != words[None, :, :]).sum(axis=-1)
    iu = np.triu_indices(len(words), k=1)
    d, ham = d[iu], ham[iu]
    dmin = d.min()
    at_min = np.isclose(d, dmin, atol=1e-9)
    w = np.exp(-(d**2))
    return MappingMetric(
        min_distance=float(dmin),
        pairs_at_min=int(at_min.sum()),
        hamming_at_min=int(ham[at_min].min()),
        mean_hamming_at_min=float(ham[at_min].mean()),
        weighted_hamming=float((w * ham).sum() / w.sum()),
    )
