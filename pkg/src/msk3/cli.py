"""Command line entry point: ``msk3 {papr,psd,obw,obo,link,selftest}``."""

from __future__ import annotations

import argparse
import itertools
import sys

import numpy as np

from .config import ConfigError, DetectionMode, DetectorConfig, WaveformConfig
from .harness import ExperimentSpec, apply_overrides, default_threads, emit_report, run_experiment, spec_from_file

# Small studies used when no --config is given.
DEFAULT_SPECS = {
    "papr": {
        "kind": "papr",
        "waveform": {"K": 24, "N": 1024, "n_cp": 72, "cp_continuity": True, "symbol_continuity": True},
        "sweep": {"axis": "variant", "values": [{"L": 1}, {"L": 2}, {"L": 2, "E": 12}]},
        "trials": 4,
    },
    "psd": {
        "kind": "psd",
        "waveform": {"K": 120, "N": 1024, "n_cp": 72},
        "sweep": {
            "axis": "variant",
            "values": [
                {"cp_continuity": False, "symbol_continuity": False},
                {"cp_continuity": True, "symbol_continuity": True},
                {"cp_continuity": True, "symbol_continuity": True, "n_cp": 128},
            ],
        },
        "trials": 2,
    },
    "obw": {
        "kind": "obw",
        "waveform": {"K": 24, "N": 1024, "n_cp": 72, "cp_continuity": True, "symbol_continuity": True},
        "sweep": {"axis": "variant", "values": [{"L": 1}, {"L": 2}, {"L": 2, "E": 12}]},
        "trials": 2,
    },
    "obo": {
        "kind": "obo",
        "waveform": {"K": 12, "N": 4096, "n_cp": 288, "cp_continuity": True, "symbol_continuity": True},
        "sweep": {"axis": "n_rb", "values": [1, 2, 4, 8, 16, 32, 66]},
        "options": {"frames_per_trial": 20},
    },
    "link": {
        "kind": "link",
        "waveform": {"K": 12, "N": 64, "n_cp": 16, "cp_continuity": True, "symbol_continuity": True},
        "sweep": {"axis": "snr_db", "values": list(range(0, 17, 2))},
        "trials": 2,
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msk3", description="3MSK DFT-s-OFDM studies")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ("papr", "psd", "obw", "obo", "link"):
        p = sub.add_parser(kind, help=f"run a {kind} study")
        p.add_argument("--config", help="YAML experiment file (built-in default if omitted)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="directory for CSV/JSON reports")
        p.add_argument("--trials", type=int, help="trials per sweep point")
        p.add_argument("--threads", type=int, help="worker threads (default $MSK3_THREADS or 1)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. waveform.K=48")
    st = sub.add_parser("selftest", help="quick structural checks")
    st.add_argument("--seed", type=int, default=0)
    return parser


def load_spec(args) -> ExperimentSpec:
    if args.config:
        data = spec_from_file(args.config, args.set, kind=args.command).to_dict()
    else:
        data = apply_overrides(DEFAULT_SPECS[args.command], args.set)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.trials is not None:
        data["trials"] = args.trials
    if args.out is not None:
        data["output"] = args.out
    return ExperimentSpec.from_dict(data)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def print_table(record, out=None):
    out = out or sys.stdout
    cols = [c for c in record.columns if c != "axis"]
    rows = [[_fmt(p.get(c, "")) for c in cols] for p in record.points]
    widths = [max([len(c)] + [len(r[i]) for r in rows]) for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)), file=out)
    for r in rows:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)), file=out)
    print(f"# {record.experiment_id} hash={record.config_hash[:12]} build={record.build} runtime={record.runtime:.1f}s", file=out)


def selftest(seed: int = 0, out=None) -> bool:
    """Fast structural checks; prints one line per check."""
    out = out or sys.stdout
    from .mapping import MappingKind, MappingTable, demap_transitions, map_transitions
    from .metrics import PaprBasis, papr_ccdf
    from .rx import bcjr_detect, derotate, hard_decisions, rx_frontend, viterbi_detect
    from .tx import block_samples, modulate_frame_stream

    rng = np.random.default_rng(seed)
    results = []

    ok = True
    for L, cp, sc, kind in itertools.product((1, 2), (False, True), (False, True), MappingKind):
        cfg = WaveformConfig(K=12, L=L, N=64, n_cp=16, cp_continuity=cp, symbol_continuity=sc, mapping_kind=kind)
        bits = rng.integers(0, 2, 8 * cfg.bits_per_frame, dtype=np.uint8)
        fr = modulate_frame_stream(bits, cfg)
        y = derotate(rx_frontend(fr, cfg), fr.u)
        ok &= bool(np.array_equal(viterbi_detect(y, DetectorConfig(), cfg.table(), cp).bits.ravel(), bits))
    results.append(("noiseless loopback, 16 flag combinations", ok))

    ok = True
    for kind in MappingKind:
        t = MappingTable.for_kind(kind)
        b = rng.integers(0, 2, (50, 16), dtype=np.uint8)
        ok &= bool(np.array_equal(demap_transitions(map_transitions(b, t, True), t, True), b))
    results.append(("map/demap inversion", ok))

    cfg = WaveformConfig(K=24, L=2, N=256, n_cp=32)
    blk = block_samples(rng.integers(0, 2, (20, cfg.bits_per_frame), dtype=np.uint8), cfg)
    results.append(("unit envelope before the DFT", bool(np.allclose(np.abs(blk), 1.0, atol=1e-12))))

    results.append(("constant envelope PAPR is 0 dB", abs(papr_ccdf(np.ones(10_000), PaprBasis.PER_SAMPLE).value_at(0.01)) < 1e-9))

    cfg = WaveformConfig(K=12, N=64, n_cp=16, cp_continuity=True, symbol_continuity=True)
    bits = rng.integers(0, 2, 200 * cfg.bits_per_frame, dtype=np.uint8)
    fr = modulate_frame_stream(bits, cfg)
    y = derotate(rx_frontend(fr, cfg), fr.u)
    y = y + 0.1 * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    v = viterbi_detect(y, DetectorConfig(), cfg.table(), True).bits
    b = hard_decisions(bcjr_detect(y, DetectorConfig(), cfg.table(), 0.02, True))
    results.append(("Viterbi/BCJR agreement at high SNR", float(np.mean(v == b)) >= 0.999))

    rot = y * 1j
    det = DetectorConfig(mode=DetectionMode.NON_COHERENT)
    same = np.array_equal(viterbi_detect(y, det, cfg.table(), True).transitions, viterbi_detect(rot, det, cfg.table(), True).transitions)
    results.append(("non-coherent rotation invariance", bool(same)))

    for name, passed in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}", file=out)
    return all(p for _, p in results)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return 0 if selftest(args.seed) else 1
    try:
        spec = load_spec(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    record = run_experiment(spec, threads=args.threads or default_threads())
    print_table(record)
    if spec.output:
        for p in emit_report(record, spec.output):
            print(f"wrote {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
