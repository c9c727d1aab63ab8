import csv
import json
from pathlib import Path

import numpy as np
import pytest

from msk3 import cli
from msk3.config import ConfigError
from msk3.harness import (
    COLUMNS,
    ExperimentKind,
    ExperimentSpec,
    ResultRecord,
    apply_overrides,
    canonical_json,
    config_hash,
    emit_report,
    load_config,
    run_experiment,
    spec_from_file,
    trial_rng,
)

LINK = {
    "kind": "link",
    "waveform": {"K": 12, "N": 64, "n_cp": 16, "cp_continuity": True, "symbol_continuity": True},
    "sweep": {"axis": "snr_db", "values": list(range(0, 17, 2))},
    "trials": 2,
    "seed": 3,
    "options": {"frames_per_trial": 50},
}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_link_sweep_rows_and_determinism(tmp_path):
    spec = ExperimentSpec.from_dict(LINK)
    a = run_experiment(spec, threads=1)
    b = run_experiment(spec, threads=4)
    assert a == b
    pa = emit_report(a, tmp_path / "a")
    pb = emit_report(b, tmp_path / "b")
    assert pa[0].read_bytes() == pb[0].read_bytes()
    ja, jb = (json.loads(p.read_text()) for p in (pa[1], pb[1]))
    assert ja.pop("runtime") >= 0 and jb.pop("runtime") >= 0
    assert ja == jb
    rows = _read_csv(tmp_path / "a" / f"{a.experiment_id}.csv")
    assert len(rows) == 9
    assert list(rows[0])[: len(COLUMNS[ExperimentKind.LINK])] == COLUMNS[ExperimentKind.LINK]
    bers = [float(r["ber"]) for r in rows]
    assert bers[0] > bers[-1]
    assert all(float(r["ber_low"]) <= float(r["ber"]) <= float(r["ber_high"]) for r in rows)


def test_different_seed_changes_result():
    a = run_experiment(ExperimentSpec.from_dict({**LINK, "sweep": {"axis": "snr_db", "values": [2]}}))
    b = run_experiment(ExperimentSpec.from_dict({**LINK, "seed": 4, "sweep": {"axis": "snr_db", "values": [2]}}))
    assert a.points[0]["errors"] != b.points[0]["errors"]


def test_empty_record_writes_header_only(tmp_path):
    rec = ResultRecord("empty", "0" * 64, "test", {}, list(COLUMNS[ExperimentKind.LINK]), [])
    (path,) = emit_report(rec, tmp_path, formats=("csv",))
    assert path.read_text() == ",".join(COLUMNS[ExperimentKind.LINK]) + "\n"


def test_empty_sweep_rejected():
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({**LINK, "sweep": {"axis": "snr_db", "values": []}})


def test_json_round_trip(tmp_path):
    spec = ExperimentSpec.from_dict({**LINK, "sweep": {"axis": "snr_db", "values": [4, 8]}})
    rec = run_experiment(spec)
    paths = emit_report(rec, tmp_path, formats=("json",))
    back = ResultRecord.from_json(paths[0].read_text())
    assert back == rec
    assert ExperimentSpec.from_dict(rec.spec) == spec


def test_papr_ccdf_curves(tmp_path):
    spec = ExperimentSpec.from_dict(
        {
            "kind": "papr",
            "waveform": {"K": 24, "N": 256, "n_cp": 18, "cp_continuity": True, "symbol_continuity": True},
            "sweep": {"axis": "variant", "values": [{"L": 1}, {"L": 2}]},
            "trials": 2,
            "options": {"frames_per_trial": 200, "basis": "per_sample", "probabilities": [0.1, 0.01]},
        }
    )
    rec = run_experiment(spec)
    assert rec.points[0]["n_observations"] == 2 * 200 * 274
    assert rec.points[1]["papr_db@0.01"] < rec.points[0]["papr_db@0.01"]
    paths = emit_report(rec, tmp_path)
    curve = _read_csv(tmp_path / f"{rec.experiment_id}_point0.csv")
    thr = [float(r["threshold_db"]) for r in curve]
    p = [float(r["ccdf"]) for r in curve]
    assert thr == sorted(thr) and p == sorted(p, reverse=True)
    assert len(paths) == 4


def test_psd_and_obw_studies():
    wf = {"K": 24, "N": 256, "n_cp": 18, "cp_continuity": True, "symbol_continuity": True}
    psd = run_experiment(
        ExperimentSpec.from_dict(
            {"kind": "psd", "waveform": wf, "sweep": {"axis": "L", "values": [1, 2]}, "options": {"frames_per_trial": 200}}
        )
    )
    assert psd.points[0]["psd_db@2"] < psd.points[0]["psd_db@1"]
    assert set(psd.curves) == {"point0", "point1"}
    obw = run_experiment(
        ExperimentSpec.from_dict(
            {"kind": "obw", "waveform": wf, "sweep": {"axis": "L", "values": [1]}, "options": {"frames_per_trial": 200}}
        )
    )
    row = obw.points[0]
    assert 1.0 <= row["obw@-20dB"] <= row["obw@-30dB"]
    assert row["obw@-30dB_lower_bound"] is False


def test_include_and_override(tmp_path):
    (tmp_path / "base.yaml").write_text("kind: link\nwaveform:\n  K: 12\n  N: 64\n  n_cp: 16\ntrials: 1\n")
    (tmp_path / "study.yaml").write_text(
        "include: base.yaml\nsweep:\n  axis: snr_db\n  values: [0, 4]\nwaveform:\n  n_cp: 8\n"
    )
    data = load_config(tmp_path / "study.yaml", ["waveform.K=24", "options.frames_per_trial=10"])
    assert data["waveform"] == {"K": 24, "N": 64, "n_cp": 8}
    assert data["options"]["frames_per_trial"] == 10
    spec = spec_from_file(tmp_path / "study.yaml", ["waveform.K=24"], kind="link")
    assert spec.waveform.K == 24
    with pytest.raises(ConfigError):
        spec_from_file(tmp_path / "study.yaml", kind="papr")
    (tmp_path / "loop.yaml").write_text("include: loop.yaml\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "loop.yaml")
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({**LINK, "bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({**LINK, "waveform": {"K": 13}})
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({**LINK, "options": {"nope": 1}})
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({**LINK, "kind": "papr"})  # snr_db is a link-only axis
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({**LINK, "impairments": {"radar": {}}})


def test_hash_stability():
    assert canonical_json({"b": 1.0, "a": [2, 3.5]}) == '{"a":[2,3.5],"b":1}'
    assert config_hash({"a": 1}) == config_hash({"a": 1.0})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    h = ExperimentSpec.from_dict(LINK).hash
    assert h == ExperimentSpec.from_dict(json.loads(json.dumps(LINK))).hash
    assert len(h) == 64


def test_trial_rng_streams_are_independent():
    a = trial_rng(1, 0, 0).integers(0, 1 << 30, 4)
    assert np.array_equal(a, trial_rng(1, 0, 0).integers(0, 1 << 30, 4))
    for other in (trial_rng(1, 0, 1), trial_rng(1, 1, 0), trial_rng(1, 0, 0, 1), trial_rng(2, 0, 0)):
        assert not np.array_equal(a, other.integers(0, 1 << 30, 4))


@pytest.mark.slow
def test_obo_grows_with_allocation_at_two_times_oversampling():
    spec = ExperimentSpec.from_dict(
        {
            "kind": "obo",
            "waveform": {"K": 12, "L": 2, "N": 4096, "n_cp": 288, "cp_continuity": True, "symbol_continuity": True},
            "sweep": {"axis": "n_rb", "values": [1, 2, 4, 8, 16, 32]},
            "options": {"frames_per_trial": 20},
        }
    )
    rec = run_experiment(spec, threads=4)
    obo = [p["obo_db"] for p in rec.points]
    assert obo == sorted(obo)
    assert obo[-1] - obo[0] > 2.0
    assert rec.points[-1]["binding"] is not None


def test_cli_link(tmp_path, capsys):
    rc = cli.main(
        ["link", "--seed", "1", "--trials", "1", "--out", str(tmp_path), "--set", "options.frames_per_trial=20", "--set", "sweep.values=[0,8]"]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "ber" in out and "wrote" in out
    assert len(list(tmp_path.glob("*.csv"))) == 1


def test_cli_config_file_and_errors(tmp_path, capsys):
    cfg = tmp_path / "p.yaml"
    cfg.write_text(
        "kind: papr\nwaveform: {K: 12, N: 64, n_cp: 16}\nsweep: {axis: L, values: [1]}\noptions: {frames_per_trial: 50}\n"
    )
    assert cli.main(["papr", "--config", str(cfg)]) == 0
    assert "papr_db@0.01" in capsys.readouterr().out
    assert cli.main(["papr", "--config", str(cfg), "--set", "waveform.K=7"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_selftest(capsys):
    assert cli.main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 6 and all(line.startswith("PASS") for line in lines)


CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("path", sorted(p.name for p in CONFIG_DIR.glob("*.yaml") if p.name != "common.yaml"))
def test_shipped_configs_run(path):
    spec = spec_from_file(CONFIG_DIR / path, ["trials=1", "options.frames_per_trial=4"])
    small = ExperimentSpec.from_dict({**spec.to_dict(), "sweep": {"axis": spec.axis, "values": list(spec.values[:1])}})
    rec = run_experiment(small)
    assert len(rec.points) == 1 and rec.experiment_id == spec.name
