import json

import pytest

from specdapt.cli import main
from specdapt.models import default_spec, load_model
from specdapt.spectra import load_dataset
from specdapt.training import TrialRecord

TINY = {
    "scenario": {
        "isotopes": ["Cs137", "Co60", "Am241"],
        "grid": {"n_bins": 128, "e_min": 0.0, "e_max": 3000.0},
        "source_sizes": {"train": 24, "val": 8, "test": 8},
        "target_sizes": {"train": 16, "val": 8, "test": 12},
    },
    "architectures": [{"kind": "MLP", "hidden_units": [8]}],
    "sizes": [4, 8],
    "n_trials": 2,
    "search_budget": 2,
    "train": {
        "source": {"max_epochs": 3, "patience": 2},
        "target": {"max_epochs": 3, "patience": 2},
        "finetune": {"max_epochs": 3, "patience": 2},
    },
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return path


def test_synth_is_byte_identical(config, tmp_path):
    assert main(["synth", "--config", str(config), "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", str(config), "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("*.spda"))
    assert len(files) == 6
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / (name + ".json")).read_text() == (tmp_path / "b" / (name + ".json")).read_text()
    ds = load_dataset(tmp_path / "a" / "target_test.spda")
    assert len(ds) == 12 and ds.classes == ["Cs137", "Co60", "Am241"]


def test_train_finetune_explain(config, tmp_path, capsys):
    data = tmp_path / "data"
    main(["synth", "--config", str(config), "--out", str(data)])
    src = tmp_path / "src.spdw"
    assert main(["train", "--config", str(config), "--data", str(data), "--arch", "MLP",
                 "--protocol", "source_only", "--out", str(src)]) == 0
    assert (tmp_path / "src.spdw.history.jsonl").exists()
    da = tmp_path / "da.spdw"
    assert main(["finetune", "--config", str(config), "--data", str(data), "--model", str(src),
                 "--size", "8", "--freeze", "first:1", "--out", str(da)]) == 0
    model = load_model(da)
    assert model.meta["protocol"] == "domain_adapted" and model.meta["train_config"]["freeze"] == "first:1"
    out = tmp_path / "ex.json"
    assert main(["explain", "--config", str(config), "--data", str(data), "--model", str(src),
                 "--model-b", str(da), "--spectrum-index", "2", "--groups", "8", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["model_a"]["phi"]) == 8 and (tmp_path / "ex.svg").exists()
    assert main(["explain", "--config", str(config), "--data", str(data), "--model", str(src),
                 "--spectrum-index", "99", "--out", str(out)]) == 2


def test_search_writes_best_config(config, tmp_path):
    out = tmp_path / "best.json"
    assert main(["search", "--config", str(config), "--arch", "MLP", "--protocol", "target_only",
                 "--size", "8", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert len(res["trials"]) == 2 and "learning_rate" in res["train_config"]


def test_trials_and_report(config, tmp_path, capsys):
    results = tmp_path / "trials.jsonl"
    assert main(["trials", "--config", str(config), "--out", str(results)]) == 0
    recs = [TrialRecord.from_dict(json.loads(line)) for line in results.read_text().splitlines()]
    assert len(recs) == 3 * 2 * 2
    assert main(["report", "--results", str(results), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary.csv").exists() and (tmp_path / "rep" / "score_curves.svg").exists()


def _record(protocol, trial, score, h="abc"):
    return TrialRecord(protocol, "MLP", 64, trial, trial, {"score": score, "acc": score}, "fp", 256, h).to_json()


def test_report_prints_paper_floor(tmp_path, capsys):
    lines = []
    for t in range(10):
        lines.append(_record("source_only", t, 0.5 + 0.001 * t))
        lines.append(_record("target_only", t, 0.6 + 0.001 * t))
        lines.append(_record("domain_adapted", t, 0.9 + 0.002 * t))
    path = tmp_path / "r.jsonl"
    path.write_text("\n".join(lines) + "\n")
    assert main(["report", "--results", str(path), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    row = next(line for line in out.splitlines() if line.startswith("MLP   64"))
    assert row.split()[2:] == ["0.001", "0.001"]


def test_exit_codes(config, tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text(_record("source_only", 0, 0.5) + "\n" + _record("source_only", 1, 0.5, h="zzz") + "\n")
    assert main(["report", "--results", str(path)]) == 2  # mixed config hashes
    single = tmp_path / "s.jsonl"
    single.write_text(_record("source_only", 0, 0.5) + "\n")
    assert main(["report", "--results", str(single), "--out", str(tmp_path / "x")]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "sizes": [3]}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    data = tmp_path / "data"
    main(["synth", "--config", str(config), "--out", str(data)])
    blob = (data / "source_train.spda").read_bytes()
    (data / "source_train.spda").write_bytes(b"JUNK!" + blob[5:])
    assert main(["train", "--config", str(config), "--data", str(data), "--arch", "MLP",
                 "--protocol", "source_only", "--out", str(tmp_path / "m.spdw")]) == 3


def test_config_hash_mismatch(config, tmp_path):
    data = tmp_path / "data"
    main(["synth", "--config", str(config), "--out", str(data)])
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**TINY, "scenario": {**TINY["scenario"], "master_seed": 9}}))
    assert main(["train", "--config", str(other), "--data", str(data), "--arch", "MLP",
                 "--protocol", "source_only", "--out", str(tmp_path / "m.spdw")]) == 2


def test_desk_config_matches_acceptance_settings():
    from pathlib import Path

    from test_acceptance import DESK_ARCHS, DESK_TRAIN

    from specdapt.config import load_config

    cfg = load_config(Path(__file__).parent.parent / "configs" / "desk.json")
    for kind, phases in DESK_TRAIN.items():
        assert cfg.find_arch(kind) == default_spec(kind, 1024, 8).replace(**DESK_ARCHS[kind])
        for phase, tcfg in phases.items():
            assert cfg.train_config(phase, kind) == tcfg
