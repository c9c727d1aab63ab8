"""Waveform and detector configuration records."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .mapping import MappingKind, MappingTable, bits_per_block


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WaveformConfig:
    """Parameters of the 3MSK DFT-s-OFDM chain.

    ``K`` in-band subcarriers (one 3MSK block of K symbols per OFDM symbol),
    oversampling ``L`` in {1, 2}, ``E`` excess-band bins split evenly on both
    sides, IFFT size ``N`` and CP length ``n_cp`` in IFFT-rate samples.
    ``allocation_offset`` is the signed subcarrier index (relative to DC) of
    the lowest in-band subcarrier; ``None`` centres the allocation on DC.
    """

    K: int = 24
    L: int = 1
    E: int = 0
    N: int = 1024
    n_cp: int = 128
    a: float = 0.0
    cp_continuity: bool = False
    symbol_continuity: bool = False
    mapping_kind: MappingKind = MappingKind.SYMMETRIC
    allocation_offset: int | None = None
    a_max: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "mapping_kind", MappingKind(self.mapping_kind))
        if self.K < 2 or self.K % 2:
            raise ConfigError("K must be a positive even number")
        if self.L not in (1, 2):
            raise ConfigError("oversampling factor L must be 1 or 2")
        if self.E < 0 or self.E % 2:
            raise ConfigError("excess band E must be a non-negative even number")
        if self.E > (self.L - 1) * self.K:
            raise ConfigError("excess band exceeds the oversampled spectrum (E <= L*K - K)")
        if self.N < self.K + self.E:
            raise ConfigError("IFFT size smaller than the active band")
        if not 0 <= self.n_cp <= self.N:
            raise ConfigError("CP length must lie in [0, N]")
        if self.L == 2 and not 0.0 <= self.a <= self.a_max:
            raise ConfigError(f"interpolation parameter a must lie in [0, {self.a_max}]")
        if self.cp_continuity and self.K < 4:
            raise ConfigError("CP continuity needs K >= 4")
        lo = self.active_first
        if lo < -(self.N // 2) or lo + self.K + self.E > self.N - self.N // 2:
            raise ConfigError("allocation exceeds the IFFT grid")

    @property
    def K_prime(self) -> int:
        return self.L * self.K

    @property
    def inband_first(self) -> int:
        return -(self.K // 2) if self.allocation_offset is None else self.allocation_offset

    @property
    def active_first(self) -> int:
        return self.inband_first - self.E // 2

    @property
    def active_freqs(self) -> np.ndarray:
        """Signed subcarrier indices of all K + E active bins, ascending."""
        return self.active_first + np.arange(self.K + self.E)

    @property
    def inband_freqs(self) -> np.ndarray:
        return self.inband_first + np.arange(self.K)

    @property
    def center(self) -> float:
        """Centre of the in-band allocation in subcarriers (DC-relative).

        Subcarrier f occupies [f - 1/2, f + 1/2], so a DC-centred even
        allocation -K/2..K/2-1 is centred at -1/2.
        """
        return self.inband_first + (self.K - 1) / 2

    @property
    def bits_per_frame(self) -> int:
        return bits_per_block(self.K, self.cp_continuity)

    @property
    def frame_length(self) -> int:
        return self.N + self.n_cp

    @property
    def exact_continuity(self) -> bool:
        """True when the CP spans an integer number of 3MSK symbols."""
        return (self.n_cp * self.K) % self.N == 0

    @property
    def ebw_percent(self) -> float:
        return 100.0 * self.E / self.K

    def table(self) -> MappingTable:
        return MappingTable.for_kind(self.mapping_kind)

    def replace(self, **changes) -> "WaveformConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mapping_kind"] = self.mapping_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WaveformConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown waveform keys: {sorted(unknown)}")
        return cls(**d)


class Metric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    ANGULAR = "angular"


class DetectionMode(str, enum.Enum):
    COHERENT = "coherent"
    NON_COHERENT = "non_coherent"


@dataclass(frozen=True)
class DetectorConfig:
    """Trellis detector settings; the 4 states are the phases 0, pi/2, pi, -pi/2."""

    lam: float = 0.0
    metric: Metric = Metric.EUCLIDEAN
    mode: DetectionMode = DetectionMode.COHERENT
    enforce_equal_endpoints: bool = True
    n_states: int = field(default=4, init=False)

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "mode", DetectionMode(self.mode))
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("tracking step lambda must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "metric": self.metric.value,
            "mode": self.mode.value,
            "enforce_equal_endpoints": self.enforce_equal_endpoints,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        return cls(**d)
