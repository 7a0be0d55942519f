import csv
import json

import numpy as np
import pytest

from coughband import cli
from coughband.audio import load_manifest
from coughband.pipeline import ConfigError, PipelineConfig, PipelineError, run_pipeline, stage_ingest
from coughband.report import box_summary, emit_boxplot_data
from coughband.stats import GroupComparisonResult
from coughband.synth import SynthParams, generate_synthetic_cohort

TINY = SynthParams(patients_per_cohort=3, coughs_per_patient=4, noncoughs_per_patient=4)


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic_cohort(root / "data", TINY, seed=3)
    return root


@pytest.fixture(scope="module")
def tiny_run(cohort):
    cfg = {"manifest": "data/manifest.json", "workdir": "work", "seed": 1,
           "confidence_cutoff": 0.5, "th_list": [50, 90],
           "train": {"epochs": 2, "batch_size": 4, "folds": 3},
           "mask": {"stride_k": 10, "stride_n": 20}}
    (cohort / "config.json").write_text(json.dumps(cfg))
    summary = run_pipeline(PipelineConfig.from_json(cohort / "config.json"))
    return cohort / "work", summary


def test_synthetic_manifest(cohort):
    m = load_manifest(cohort / "data" / "manifest.json")
    assert len(m.patients) == 6
    assert m.cohort_counts("G1") == {"C1": 3, "C2": 3, "excluded": 0}


def test_run_layout_and_summary(tiny_run):
    work, summary = tiny_run
    for rel in ("clips/index.json", "spectrograms/index.json", "models/fold0.bin", "models/folds.json",
                "explain/index.json", "features.csv", "results/results_long.csv",
                "results/best_thresholds.csv", "results/table_B3.csv", "results/boxplots.json",
                "summary.json"):
        assert (work / rel).is_file(), rel
    assert summary["th_list"] == [50, 90]
    assert summary["confidence_cutoff"] == 0.5
    assert summary["patients"] == 6
    on_disk = json.loads((work / "summary.json").read_text())
    assert on_disk["config_sha256"] == summary["config_sha256"]


def test_each_patient_explained_by_its_held_out_fold(tiny_run):
    work, _ = tiny_run
    folds = json.loads((work / "models" / "folds.json").read_text())["folds"]
    tested = sorted(p for f in folds for p in f["test_patients"])
    assert len(tested) == 6
    for f in folds:
        assert not set(f["train_patients"]) & set(f["test_patients"])


def test_weighted_sidecars(tiny_run):
    work, _ = tiny_run
    index = json.loads((work / "explain" / "index.json").read_text())
    weighted = [v for v in index.values() if v["kind"] == "weighted"]
    for v in weighted:
        assert v["Th"] in (50, 90) and v["confidence_cutoff"] == 0.5
        assert v["mask_cfg"]["patch_height"] == 5 and v["mask_cfg"]["patch_width"] == 10
        data = np.fromfile(work / "explain" / v["file"], dtype="<f4")
        assert data.shape == (4500,)


def test_cli_stages(cohort, tmp_path, capsys):
    data = cohort / "data"
    manifest = str(data / "manifest.json")
    clips, specs = tmp_path / "clips", tmp_path / "specs"
    assert cli.main(["ingest", "--manifest", manifest, "--out", str(clips)]) == 0
    assert cli.main(["spectrogram", "--clips", str(clips), "--out", str(specs)]) == 0
    assert cli.main(["train", "--specs", str(specs), "--manifest", manifest, "--fold", "0",
                     "--epochs", "1", "--batch-size", "4", "--out", str(tmp_path / "m.bin")]) == 0
    assert cli.main(["eval", "--model", str(tmp_path / "m.bin"), "--specs", str(specs),
                     "--out", str(tmp_path / "eval.csv")]) == 0
    with open(tmp_path / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 * 8
    assert all(abs(float(r["p_cough"]) + float(r["p_non_cough"]) - 1) < 1e-6 for r in rows)
    pid = rows[0]["patient_id"]
    explain = tmp_path / "explain"
    assert cli.main(["explain", "--model", str(tmp_path / "m.bin"), "--specs", str(specs),
                     "--patient", pid, "--th", "50,90", "--cutoff", "0.01",
                     "--stride-k", "10", "--stride-n", "20", "--out", str(explain)]) == 0
    feats = tmp_path / "features.csv"
    assert cli.main(["features", "--weighted", str(explain), "--out", str(feats)]) == 0
    results = tmp_path / "results"
    assert cli.main(["compare", "--features", str(feats), "--manifest", manifest,
                     "--th", "50,90", "--out", str(results)]) == 0
    assert cli.main(["report", "--results", str(results), "--features", str(feats),
                     "--manifest", manifest, "--all"]) == 0
    cells = json.loads((results / "boxplots.json").read_text())["cells"]
    assert len(cells) == 6 * 7 * 2
    out = capsys.readouterr().out
    assert "weighted spectrograms" in out


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["ingest", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["compare", "--features", "f", "--manifest", "m", "--th", "50,120", "--out", "o"])


def test_config_validation(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"manifest": "m", "workdir": "w", "bogus": 1}))
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(tmp_path / "c.json")
    (tmp_path / "c.json").write_text(json.dumps({"workdir": "w"}))
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        PipelineConfig("m", "w", confidence_cutoff=1.5)
    with pytest.raises(ConfigError):
        PipelineConfig("m", "w", th_list=[50, 101])
    with pytest.raises(ConfigError):
        PipelineConfig("m", "w", train={"epochs": 0})
    with pytest.raises(ConfigError):
        run_pipeline(PipelineConfig(str(tmp_path / "missing.json"), str(tmp_path / "w")))


def test_stage_failures_name_the_stage(tmp_path):
    m = tmp_path / "manifest.json"
    (tmp_path / "bad.wav").write_bytes(b"RIFF garbage")
    m.write_text(json.dumps([{"path": "bad.wav", "patient_id": "P", "groups": {"G1": "C1"}}]))
    with pytest.raises(PipelineError) as exc:
        run_pipeline(PipelineConfig(str(m), str(tmp_path / "w")))
    assert exc.value.stage == "ingest"
    with pytest.raises(Exception):
        stage_ingest(load_manifest(m), tmp_path / "clips")


def test_box_summary_quartiles():
    v = [1.0, 2.0, 3.0, 4.0, 100.0]
    s = box_summary(v)
    assert (s["q1"], s["median"], s["q3"]) == (2.0, 3.0, 4.0)
    assert s["outliers"] == [100.0] and s["whisker_high"] == 4.0
    with pytest.raises(ValueError):
        box_summary([])


def test_boxplot_data_only_for_significant_cells(cohort):
    m = load_manifest(cohort / "data" / "manifest.json")
    rows = [{"patient_id": p, "Th": 70.0, "band": "B3", "RP": float(i)} for i, p in enumerate(m.patients)]
    common = dict(study_group="G1", band="B3", Th=70.0, test_used="t_test", statistic=1.0,
                  direction=1, n1=3, n2=3)
    results = [GroupComparisonResult(feature="RP", p_value=0.01, significant=True, **common),
               GroupComparisonResult(feature="RP", p_value=0.5, significant=False, **common)]
    cells = emit_boxplot_data(results, rows, m)
    assert len(cells) == 1
    assert cells[0]["cohorts"]["C1"]["points"] == [0.0, 1.0, 2.0]
    assert emit_boxplot_data(results[1:], rows, m) == []


def test_pretrained_model_skips_training(cohort, tiny_run, tmp_path):
    work, _ = tiny_run
    cfg = PipelineConfig(str(cohort / "data" / "manifest.json"), str(tmp_path / "w"), confidence_cutoff=0.5,
                         th_list=[70], mask={"stride_k": 10, "stride_n": 20},
                         model=str(work / "models" / "fold0.bin"))
    summary = run_pipeline(cfg)
    assert summary["train_cfg"] is None
    assert not (tmp_path / "w" / "models" / "folds.json").exists()
    assert (tmp_path / "w" / "results" / "results_long.csv").is_file()


def test_synthetic_bursts_fit_their_slots(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic_cohort(tmp_path, SynthParams(onset_s=(0.2, 0.8)))
    generate_synthetic_cohort(tmp_path, TINY, seed=5)
    m = load_manifest(tmp_path / "manifest.json")
    for e in m.entries:
        for w in e.labels:
            assert 0.3 - 1e-9 <= w.end_s - w.start_s <= 0.3 + 1e-4
            assert 0.2 <= w.start_s % 1 <= 0.3 + 1e-4
