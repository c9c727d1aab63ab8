"""Experiment orchestration: config files, seeding, concurrent sweeps, reports.

A study is described by an :class:`ExperimentSpec` (normally loaded from a
YAML file). Every (sweep point, trial) pair draws its randomness from
``SeedSequence([seed, point, trial, stage])``, and partial results are
reduced in index order, so a spec and seed reproduce the same record
regardless of thread count or completion order.
"""

from __future__ import annotations

import copy
import csv
import enum
import hashlib
import json
import math
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, DetectorConfig, WaveformConfig
from .impairments import PaModel, PnModel, TdlProfile, pa_apply
from .link import LinkConfig, simulate_link
from .metrics import (
    PaprBasis,
    PaprCcdf,
    RfLimits,
    normalized_obw,
    obo_search,
    papr_ccdf,
    psd_from_density,
    welch_density,
)
from .tx import modulate_frame_stream, qpsk_config, qpsk_reference_frame_stream

THREADS_ENV = "MSK3_THREADS"


class ExperimentKind(str, enum.Enum):
    PAPR = "papr"
    PSD = "psd"
    OBW = "obw"
    OBO = "obo"
    LINK = "link"


DEFAULT_OPTIONS: dict[ExperimentKind, dict[str, Any]] = {
    ExperimentKind.PAPR: {
        "frames_per_trial": 5000,
        "basis": "per_ofdm_symbol",
        "probabilities": [0.01],
        "waveform": "3msk",
        "curve_points": 100,
    },
    ExperimentKind.PSD: {"frames_per_trial": 1000, "offsets": [1.0, 1.5, 2.0, 3.0], "segment": None, "waveform": "3msk"},
    ExperimentKind.OBW: {"frames_per_trial": 2000, "ratios_db": [-20.0, -30.0], "segment": None, "waveform": "3msk", "ibo_db": None},
    ExperimentKind.OBO: {"frames_per_trial": 50, "waveform": "3msk", "ibo_start": 20.0, "ibo_stop": -20.0},
    ExperimentKind.LINK: {
        "frames_per_trial": 1000,
        "waveform": "3msk",
        "receiver": "viterbi",
        "derotation": "genie",
        "random_offset": False,
        "snr_db": 10.0,
        "ibo_db": 0.0,
    },
}

COLUMNS: dict[ExperimentKind, list[str]] = {
    ExperimentKind.PAPR: ["point", "axis", "value", "n_observations"],
    ExperimentKind.PSD: ["point", "axis", "value"],
    ExperimentKind.OBW: ["point", "axis", "value"],
    ExperimentKind.OBO: ["point", "axis", "value", "obo_db", "ibo_db", "binding", "grid_limited"],
    ExperimentKind.LINK: ["point", "axis", "value", "ber", "ber_low", "ber_high", "errors", "bits", "bler", "block_errors", "blocks"],
}

WAVEFORM_AXES = set(WaveformConfig.__dataclass_fields__)
DETECTOR_AXES = {"lam", "metric", "mode", "enforce_equal_endpoints"}


# Config files


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path, overrides=(), _seen=None) -> dict:
    """Read a YAML config, resolving ``include`` lists and ``key.sub=value`` overrides.

    Included files (relative to the including file) are merged first, in
    order, and the including file's own keys win.
    """
    path = Path(path).resolve()
    seen = set() if _seen is None else _seen
    if path in seen:
        raise ConfigError(f"include cycle through {path}")
    seen = seen | {path}
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    includes = data.pop("include", []) or []
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = deep_merge(merged, load_config(path.parent / inc, (), seen))
    merged = deep_merge(merged, data)
    return apply_overrides(merged, overrides)


def apply_overrides(data: dict, overrides) -> dict:
    out = copy.deepcopy(data)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key.sub=value, got {item!r}")
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def _normalize(obj):
    if isinstance(obj, enum.Enum):
        return _normalize(obj.value)
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isfinite(f) and f.is_integer() and abs(f) < 2**53:
            return int(f)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, integral floats written as ints."""
    return json.dumps(_normalize(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def trial_rng(seed: int, point: int, trial: int, stage: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, point, trial, stage]))


def build_id() -> str:
    """Package version plus the git revision when run from a checkout."""
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# Spec


@dataclass(frozen=True)
class ExperimentSpec:
    kind: ExperimentKind
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    pn_tx: PnModel | None = None
    pn_rx: PnModel | None = None
    pa: PaModel | None = None
    tdl: TdlProfile | None = None
    limits: RfLimits = field(default_factory=RfLimits)
    axis: str = "snr_db"
    values: tuple = ()
    trials: int = 1
    seed: int = 0
    output: str | None = None
    name: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        object.__setattr__(self, "values", tuple(self.values))
        opts = dict(DEFAULT_OPTIONS[self.kind])
        unknown = set(self.options) - set(opts)
        if unknown:
            raise ConfigError(f"unknown {self.kind.value} options: {sorted(unknown)}")
        opts.update(self.options)
        object.__setattr__(self, "options", opts)
        if not self.values:
            raise ConfigError("sweep must have at least one value")
        if self.trials < 1:
            raise ConfigError("trial count must be at least 1")
        if self.axis not in self.allowed_axes():
            raise ConfigError(f"axis {self.axis!r} not valid for {self.kind.value}")
        for i in range(len(self.values)):
            self.point_config(i)

    def allowed_axes(self) -> set[str]:
        axes = WAVEFORM_AXES | {"variant", "n_rb"}
        if self.kind == ExperimentKind.LINK:
            axes |= {"snr_db", "ibo_db"} | DETECTOR_AXES
        if self.kind == ExperimentKind.OBW:
            axes |= {"ibo_db"}
        return axes

    def point_config(self, i: int) -> tuple[WaveformConfig, DetectorConfig, dict]:
        """Waveform, detector and option overrides for sweep point ``i``."""
        v = self.values[i]
        cfg, det, opts = self.waveform, self.detector, dict(self.options)
        if self.axis == "variant":
            if not isinstance(v, dict):
                raise ConfigError("variant sweep values must be mappings")
            v = dict(v)
            wf = {k: v.pop(k) for k in list(v) if k in WAVEFORM_AXES}
            dt = {k: v.pop(k) for k in list(v) if k in DETECTOR_AXES}
            cfg = cfg.replace(**wf)
            det = DetectorConfig.from_dict({**det.to_dict(), **dt})
            opts.update(v)
        elif self.axis == "n_rb":
            cfg = cfg.replace(K=12 * int(v), allocation_offset=None)
        elif self.axis in WAVEFORM_AXES:
            cfg = cfg.replace(**{self.axis: v})
        elif self.axis in DETECTOR_AXES:
            det = DetectorConfig.from_dict({**det.to_dict(), self.axis: v})
        else:
            opts[self.axis] = v
        return cfg, det, opts

    def to_dict(self) -> dict:
        return _normalize(
            {
                "kind": self.kind.value,
                "waveform": self.waveform.to_dict(),
                "detector": self.detector.to_dict(),
                "impairments": {
                    "pn_tx": self.pn_tx.to_dict() if self.pn_tx else None,
                    "pn_rx": self.pn_rx.to_dict() if self.pn_rx else None,
                    "pa": self.pa.to_dict() if self.pa else None,
                    "tdl": self.tdl.to_dict() if self.tdl else None,
                    "limits": self.limits.to_dict(),
                },
                "sweep": {"axis": self.axis, "values": list(self.values)},
                "trials": self.trials,
                "seed": self.seed,
                "output": self.output,
                "name": self.name,
                "options": self.options,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = {"kind", "waveform", "detector", "impairments", "sweep", "trials", "seed", "output", "name", "options"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("config needs an experiment kind")
        imp = d.get("impairments") or {}
        bad = set(imp) - {"pn_tx", "pn_rx", "pa", "tdl", "limits"}
        if bad:
            raise ConfigError(f"unknown impairments: {sorted(bad)}")
        sweep = d.get("sweep") or {}
        try:
            return cls(
                kind=d["kind"],
                waveform=WaveformConfig.from_dict(d.get("waveform") or {}),
                detector=DetectorConfig.from_dict(d.get("detector") or {}),
                pn_tx=PnModel.from_dict(imp["pn_tx"]) if imp.get("pn_tx") else None,
                pn_rx=PnModel.from_dict(imp["pn_rx"]) if imp.get("pn_rx") else None,
                pa=PaModel.from_dict(imp["pa"]) if imp.get("pa") else None,
                tdl=TdlProfile.from_dict(imp["tdl"]) if imp.get("tdl") else None,
                limits=RfLimits(**(imp.get("limits") or {})),
                axis=sweep.get("axis", "snr_db"),
                values=tuple(sweep.get("values", ())),
                trials=int(d.get("trials", 1)),
                seed=int(d.get("seed", 0)),
                output=d.get("output"),
                name=d.get("name"),
                options=d.get("options") or {},
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


# Records


@dataclass(eq=False)
class ResultRecord:
    """Outcome of a study. Equality ignores ``runtime``."""

    experiment_id: str
    config_hash: str
    build: str
    spec: dict
    columns: list[str]
    points: list[dict]
    curves: dict[str, list[dict]] = field(default_factory=dict)
    runtime: float = 0.0

    def _key(self):
        return canonical_json(
            {
                "id": self.experiment_id,
                "hash": self.config_hash,
                "build": self.build,
                "spec": self.spec,
                "columns": self.columns,
                "points": self.points,
                "curves": self.curves,
            }
        )

    def __eq__(self, other):
        return isinstance(other, ResultRecord) and self._key() == other._key()

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "config_hash": self.config_hash,
            "build": self.build,
            "spec": self.spec,
            "columns": self.columns,
            "points": self.points,
            "curves": self.curves,
            "runtime": self.runtime,
        }

    def to_json(self) -> str:
        return json.dumps(_normalize(self.to_dict()), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ResultRecord":
        return cls(**json.loads(text))


# Runners


def _frames(cfg: WaveformConfig, opts: dict, n: int, rng: np.random.Generator) -> tuple[np.ndarray, WaveformConfig]:
    if opts.get("waveform", "3msk") == "qpsk":
        bits = rng.integers(0, 2, n * 2 * cfg.K, dtype=np.uint8)
        return qpsk_reference_frame_stream(bits, cfg).samples, qpsk_config(cfg)
    bits = rng.integers(0, 2, n * cfg.bits_per_frame, dtype=np.uint8)
    return modulate_frame_stream(bits, cfg).samples, cfg


def _papr_trial(spec, i, t):
    cfg, _, opts = spec.point_config(i)
    x, c = _frames(cfg, opts, opts["frames_per_trial"], trial_rng(spec.seed, i, t))
    return papr_ccdf(x, opts["basis"], c.n_cp).values_db


def _papr_reduce(spec, i, parts):
    _, _, opts = spec.point_config(i)
    ccdf = PaprCcdf(np.sort(np.concatenate(parts)), PaprBasis(opts["basis"]))
    row = {"n_observations": len(ccdf)}
    for p in opts["probabilities"]:
        row[f"papr_db@{p:g}"] = ccdf.value_at(p)
    return row, ccdf.to_rows(opts["curve_points"])


def _spectrum_trial(spec, i, t):
    cfg, _, opts = spec.point_config(i)
    x, c = _frames(cfg, opts, opts["frames_per_trial"], trial_rng(spec.seed, i, t))
    if spec.kind == ExperimentKind.OBW and opts.get("ibo_db") is not None and spec.pa is not None:
        x = pa_apply(x, spec.pa, opts["ibo_db"])
    return welch_density(x, c, opts["segment"])


def _spectrum_reduce(spec, i, parts):
    cfg, _, opts = spec.point_config(i)
    f = parts[0][0]
    p = np.mean([q for _, q in parts], axis=0)
    psd = psd_from_density(f, p, opts["segment"] or 4 * cfg.N)
    row = {}
    if spec.kind == ExperimentKind.PSD:
        for off in opts["offsets"]:
            row[f"psd_db@{off:g}"] = float(np.mean(psd.at([-off, off])))
    else:
        for r in opts["ratios_db"]:
            w = normalized_obw(psd, r)
            row[f"obw@{r:g}dB"] = w.value
            row[f"obw@{r:g}dB_lower_bound"] = w.is_lower_bound
    curve = psd.to_rows() if spec.kind == ExperimentKind.PSD else []
    return row, curve


def _obo_point(spec, i):
    cfg, _, opts = spec.point_config(i)
    xs = [_frames(cfg, opts, opts["frames_per_trial"], trial_rng(spec.seed, i, t)) for t in range(spec.trials)]
    x = np.concatenate([a for a, _ in xs])
    c = xs[0][1]
    res = obo_search(x, c, spec.pa or PaModel(), spec.limits, opts["ibo_start"], opts["ibo_stop"])
    return {"obo_db": res.obo_db, "ibo_db": res.ibo_db, "binding": res.binding, "grid_limited": res.grid_limited}


def _link_trial(spec, i, t):
    cfg, det, opts = spec.point_config(i)
    lc = LinkConfig(
        cfg=cfg,
        det=det,
        snr_db=float(opts["snr_db"]),
        n_frames=int(opts["frames_per_trial"]),
        waveform=opts["waveform"],
        receiver=opts["receiver"],
        derotation=opts["derotation"],
        random_offset=bool(opts["random_offset"]),
        pn_tx=spec.pn_tx,
        pn_rx=spec.pn_rx,
        tdl=spec.tdl,
        pa=spec.pa,
        ibo_db=float(opts["ibo_db"]),
    )
    return simulate_link(lc, [spec.seed, i, t])


def _link_reduce(spec, i, parts):
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    d = total.to_dict()
    return {k: d[k] for k in ("ber", "ber_low", "ber_high", "errors", "bits", "bler", "block_errors", "blocks")}, []


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "")))
    except ValueError:
        return 1


def run_experiment(spec: ExperimentSpec, threads: int | None = None) -> ResultRecord:
    """Execute every (point, trial) task and reduce the results in index order."""
    t0 = time.perf_counter()
    threads = threads or default_threads()
    n_pts = len(spec.values)
    kind = spec.kind
    with ThreadPoolExecutor(max_workers=threads) as pool:
        if kind == ExperimentKind.OBO:
            futures = [pool.submit(_obo_point, spec, i) for i in range(n_pts)]
            reduced = [(f.result(), []) for f in futures]
        else:
            trial_fn, reduce_fn = {
                ExperimentKind.PAPR: (_papr_trial, _papr_reduce),
                ExperimentKind.PSD: (_spectrum_trial, _spectrum_reduce),
                ExperimentKind.OBW: (_spectrum_trial, _spectrum_reduce),
                ExperimentKind.LINK: (_link_trial, _link_reduce),
            }[kind]
            futures = [[pool.submit(trial_fn, spec, i, t) for t in range(spec.trials)] for i in range(n_pts)]
            reduced = [reduce_fn(spec, i, [f.result() for f in row]) for i, row in enumerate(futures)]

    points, curves = [], {}
    for i, (row, curve) in enumerate(reduced):
        value = spec.values[i]
        label = canonical_json(value) if isinstance(value, dict) else value
        points.append(_normalize({"point": i, "axis": spec.axis, "value": label, **row}))
        if curve:
            curves[f"point{i}"] = curve
    spec_dict = spec.to_dict()
    h = config_hash(spec_dict)
    columns = list(COLUMNS[kind])
    for p in points:
        columns += [k for k in p if k not in columns]
    return ResultRecord(
        experiment_id=spec.name or f"{kind.value}-{h[:12]}",
        config_hash=h,
        build=build_id(),
        spec=spec_dict,
        columns=columns,
        points=points,
        curves=curves,
        runtime=time.perf_counter() - t0,
    )


def emit_report(record: ResultRecord, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write ``<id>.csv`` (one row per sweep point), ``<id>.json`` and one CSV per curve.

    CCDF curves use columns threshold_db, ccdf; PSD curves freq, psd_db.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    if "csv" in formats:
        paths.append(_write_csv(out / f"{record.experiment_id}.csv", record.columns, record.points))
        for name, rows in record.curves.items():
            cols = list(rows[0]) if rows else []
            paths.append(_write_csv(out / f"{record.experiment_id}_{name}.csv", cols, rows))
    if "json" in formats:
        p = out / f"{record.experiment_id}.json"
        p.write_text(record.to_json())
        paths.append(p)
    return paths


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_value(r.get(k)) for k in columns})
    return path


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def spec_from_file(path, overrides=(), kind: str | None = None) -> ExperimentSpec:
    data = load_config(path, overrides)
    if kind is not None:
        if data.get("kind", kind) != kind:
            raise ConfigError(f"config is a {data['kind']} study, not {kind}")
        data["kind"] = kind
    return ExperimentSpec.from_dict(data)
