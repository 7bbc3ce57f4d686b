import json

import pytest
import yaml

from aec.cli import main
from aec.config import load_config
from aec.errors import ConfigError
from aec.synthetic import write_fixture

FAST = {"forest": {"k": 3, "grid": [{"n_trees": 10}]}}
ARTIFACTS = ["manifest.json", "prepared_eval.jsonl", "features.jsonl", "predictions.jsonl", "errorset.json",
             "split.json", "model.json", "rankings.csv", "rankings.jsonl", "candidates.json", "evaluation.json",
             "evaluation.md", "report.md", "report.json"]


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("fx")
    cfg = write_fixture(root, n=300, seed=2, config_overrides=FAST)
    assert main(["run", "--config", str(cfg)]) == 0
    return cfg, root / "out"


def _snapshot(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}


def test_full_run_artifacts(finished_run):
    _, out = finished_run
    for name in ARTIFACTS:
        assert (out / name).is_file(), name
    report = (out / "report.md").read_text()
    for k in (10, 20, 30, 40, 50):
        assert f"| {k} | " in report
    assert "## Highly ranked features" in report


def test_rerun_is_noop(finished_run, caplog):
    cfg, out = finished_run
    before = _snapshot(out)
    with caplog.at_level("INFO", logger="aec"):
        assert main(["-v", "run", "--config", str(cfg)]) == 0
    assert "none (all up to date)" in caplog.text
    assert _snapshot(out) == before


def test_report_regeneration_identical(finished_run):
    _, out = finished_run
    before = (out / "report.md").read_bytes()
    assert main(["report", "--dir", str(out)]) == 0
    assert (out / "report.md").read_bytes() == before


def test_missing_lexicon_exit_2(tmp_path, capsys):
    cfg = write_fixture(tmp_path, n=60, seed=0, config_overrides=FAST)
    raw = yaml.safe_load(cfg.read_text())
    raw["paths"]["lexicon"] = "missing-lexicon.txt"
    cfg.write_text(yaml.safe_dump(raw))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "missing-lexicon.txt" in capsys.readouterr().err


def test_stage_without_inputs_exit_2(tmp_path):
    cfg = write_fixture(tmp_path, n=60, seed=0, config_overrides=FAST)
    assert main(["run", "--config", str(cfg), "--stages", "train"]) == 2


def test_report_missing_artifacts_exit_2(tmp_path):
    assert main(["report", "--dir", str(tmp_path)]) == 2


def test_stage_failure_exit_1(tmp_path, capsys):
    cfg = write_fixture(tmp_path, n=60, seed=0, config_overrides=FAST)
    (tmp_path / "predictions.jsonl").write_text('{"id": "syn00", "probs": [0.4, 0.4, 0.4]}\n')
    assert main(["run", "--config", str(cfg)]) == 1
    assert "sum" in capsys.readouterr().err


def test_renormalize_flag(tmp_path):
    cfg = write_fixture(tmp_path, n=60, seed=0, config_overrides=FAST)
    lines = (tmp_path / "predictions.jsonl").read_text().splitlines()
    first = json.loads(lines[0])
    first["probs"] = [2 * p for p in first["probs"]]
    lines[0] = json.dumps(first)
    (tmp_path / "predictions.jsonl").write_text("\n".join(lines) + "\n")
    assert main(["run", "--config", str(cfg), "--renormalize", "--stages", "prepare,base"]) == 0


def test_output_dir_env_override(tmp_path, monkeypatch):
    cfg = write_fixture(tmp_path / "fx", n=60, seed=0, config_overrides=FAST)
    monkeypatch.setenv("AEC_OUT", str(tmp_path / "elsewhere"))
    assert load_config(cfg).output_dir == tmp_path / "elsewhere"


def test_empty_ranking_report(finished_run, tmp_path):
    _, out = finished_run
    copy = tmp_path / "copy"
    copy.mkdir()
    for p in out.iterdir():
        (copy / p.name).write_bytes(p.read_bytes())
    (copy / "rankings.jsonl").write_text("")
    assert main(["report", "--dir", str(copy)]) == 0
    assert "no samples ranked" in (copy / "report.md").read_text().lower()


def test_builtin_base_and_dedup(tmp_path):
    cfg = write_fixture(tmp_path, n=120, seed=1, builtin_base=True,
                        config_overrides={**FAST, "dedup": {"enabled": True, "jaccard_threshold": 0.95}})
    assert main(["run", "--config", str(cfg)]) == 0
    info = json.loads((tmp_path / "out" / "schema.json").read_text())
    assert info["schema"] == ["negative", "neutral", "positive"]
    assert (tmp_path / "out" / "base_model.json").is_file()


@pytest.mark.parametrize("patch, message", [
    ({"mystery": 1}, "mystery"),
    ({"ks": [20, 10]}, "ks"),
    ({"paths": {"predictions": None}}, "base_dataset"),
])
def test_config_errors(tmp_path, patch, message):
    cfg = write_fixture(tmp_path, n=30, seed=0, config_overrides=FAST)
    raw = yaml.safe_load(cfg.read_text())
    for key, value in patch.items():
        if isinstance(value, dict):
            raw[key].update(value)
            raw[key] = {k: v for k, v in raw[key].items() if v is not None}
        else:
            raw[key] = value
    cfg.write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError, match=message):
        load_config(cfg)


def test_report_numbers_rederivable(finished_run):
    _, out = finished_run
    es = json.loads((out / "errorset.json").read_text())
    errors = sum(r["is_error"] for r in es["records"])
    assert es["incorrect"] == errors
    assert es["accuracy"] == (len(es["records"]) - errors) / len(es["records"])
    truth = {r["id"]: r["is_error"] for r in es["records"]}
    aec = [json.loads(line)["id"] for line in (out / "rankings.jsonl").read_text().splitlines()]
    unc = [line.split(",")[1] for line in (out / "uncertainty.csv").read_text().splitlines()[1:]]
    assert set(aec) == set(unc) == set(es["test_ids"])
    ev = json.loads((out / "evaluation.json").read_text())
    for row in ev["rows"]:
        k = row["k"]
        assert row["aec"] == sum(truth[i] for i in aec[:k]) / k
        assert row["uncertainty"] == sum(truth[i] for i in unc[:k]) / k
    rep = json.loads((out / "report.json").read_text())
    assert rep["evaluation"] == ev
    assert rep["accuracy"]["accuracy"] == es["accuracy"]
