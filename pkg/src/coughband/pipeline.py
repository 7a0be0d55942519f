"""End-to-end orchestration: manifest -> clips -> spectrograms -> folds ->
occlusion -> weighted spectrograms -> features -> comparisons -> boxplots.

Every stage writes its artifacts under the working directory and can be
run on its own from the CLI.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .audio import DatasetManifest, ingest_manifest, load_manifest
from .cnn import CLASSES, TrainConfig, load_model, make_folds, save_model, train
from .features import feature_vector, read_feature_csv, write_feature_csv
from .occlusion import CONFIDENCE_CUTOFF, MaskConfig, explain_patient
from .report import emit_boxplot_data, render_svg, write_boxplots
from .spectrogram import SHAPE, compute_spectrogram
from .stats import DEFAULT_TH, best_thresholds, compare_groups, write_band_tables, write_results_csv
from .store import (load_clips, load_spectrograms, read_array, read_index, read_json, save_clips,
                    save_spectrograms, write_array, write_index, write_json)

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage, path, cause):
        super().__init__(f"stage '{stage}' failed at {path}: {cause}")
        self.stage = stage
        self.path = path


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    manifest: str
    workdir: str
    seed: int = 0
    confidence_cutoff: float = CONFIDENCE_CUTOFF
    th_list: list = field(default_factory=lambda: list(DEFAULT_TH))
    mask: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    study_groups: list = None
    boxplots_all: bool = False
    svg: bool = False
    # pre-trained classifier; when set, training is skipped and this model
    # explains every patient (it must not have seen these patients)
    model: str = None

    def __post_init__(self):
        if not 0 < self.confidence_cutoff < 1:
            raise ConfigError("confidence_cutoff must lie in (0, 1)")
        if not self.th_list or any(not 0 <= t <= 100 for t in self.th_list):
            raise ConfigError("every Th must lie in [0, 100]")
        try:
            self.mask_cfg
            self.train_cfg
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def mask_cfg(self) -> MaskConfig:
        return MaskConfig(**self.mask)

    @property
    def train_cfg(self) -> TrainConfig:
        return TrainConfig(**{"seed": self.seed, **self.train})

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        raw = read_json(path)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for key in ("manifest", "workdir", "model"):
            if key not in raw:
                if key == "model":
                    continue
                raise ConfigError(f"config lacks '{key}'")
            if not Path(raw[key]).is_absolute():
                raw[key] = str(path.parent / raw[key])
        return cls(**raw)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _run_stage(name, path, fn, *args, **kwargs):
    start = time.perf_counter()
    try:
        out = fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, path, exc) from exc
    logger.info("stage %s done in %.1fs", name, time.perf_counter() - start)
    return out


# ---------------------------------------------------------------- stages

def stage_ingest(manifest: DatasetManifest, clip_dir) -> dict:
    return save_clips(clip_dir, ingest_manifest(manifest))


def stage_spectrogram(clip_dir, spec_dir) -> dict:
    clips = load_clips(clip_dir)
    return save_spectrograms(
        spec_dir, ((c.clip_id, c.patient_id, c.label, compute_spectrogram(c)) for c in clips)
    )


def fold_plan(spec_dir, manifest, train_cfg: TrainConfig, seed):
    ids, pids, labels, _ = load_spectrograms(spec_dir)
    return make_folds(manifest, train_cfg.folds, seed, list(zip(ids, pids, labels)),
                      train_cfg.val_fraction)


def stage_train_fold(spec_dir, plan, fold: int, train_cfg: TrainConfig, model_path):
    ids, _, labels, values = load_spectrograms(spec_dir)
    pos = {cid: i for i, cid in enumerate(ids)}
    f = plan.folds[fold]
    tr = [pos[c] for c in f.train_clips]
    va = [pos[c] for c in f.val_clips]
    y = np.array([CLASSES.index(lbl) if lbl in CLASSES else -1 for lbl in labels])
    # every fold starts from the same weights and batch order, so fold models
    # differ only through their training patients
    model = train(values[tr], y[tr], train_cfg, val_specs=values[va], val_labels=y[va])
    save_model(model, model_path)
    return model


def _weighted_entry_name(patient_id, th):
    return f"{patient_id}_th{th:g}"


def stage_explain(model, spec_dir, patient_id, th_list, mask_cfg: MaskConfig, out_dir,
                  cutoff=CONFIDENCE_CUTOFF) -> dict:
    """Mean occlusion map and weighted spectrograms for one patient.

    Entries are merged into ``out_dir/index.json`` so several patients can
    share one directory.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids, pids, labels, values = load_spectrograms(spec_dir)
    sel = [i for i, (p, lbl) in enumerate(zip(pids, labels)) if p == patient_id and lbl == "cough"]
    mean_map, weighted, keep = explain_patient(model, values[sel], patient_id, th_list, mask_cfg, cutoff)

    index_path = out_dir / "index.json"
    index = read_index(out_dir) if index_path.is_file() else {}
    info = {"patient_id": patient_id, "n_cough": len(sel), "P": int(len(keep)),
            "confidence_cutoff": cutoff, "mask_cfg": mask_cfg.as_dict(),
            "kept_clips": [ids[sel[k]] for k in keep]}
    if mean_map is None:
        index[f"{patient_id}_skipped"] = {**info, "kind": "skipped"}
        write_index(out_dir, index)
        return index

    name = f"{patient_id}_mean_map"
    write_array(out_dir / f"{name}.f32", mean_map.values)
    sidecar = {**info, "kind": "mean_map", "file": f"{name}.f32"}
    write_json(out_dir / f"{name}.json", sidecar)
    index[name] = sidecar
    for th, ws in weighted.items():
        name = _weighted_entry_name(patient_id, th)
        write_array(out_dir / f"{name}.f32", ws.values)
        sidecar = {**info, "kind": "weighted", "Th": th, "alpha": ws.alpha, "file": f"{name}.f32"}
        write_json(out_dir / f"{name}.json", sidecar)
        index[name] = sidecar
    write_index(out_dir, index)
    return index


def stage_features(weighted_dir, out_csv):
    weighted_dir = Path(weighted_dir)
    index = read_index(weighted_dir)
    items = sorted((v["patient_id"], float(v["Th"]), k) for k, v in index.items()
                   if v.get("kind") == "weighted")
    vectors = [feature_vector(read_array(weighted_dir / index[k]["file"], SHAPE), th, pid)
               for pid, th, k in items]
    write_feature_csv(out_csv, vectors)
    return vectors


def stage_compare(features_csv, manifest, th_list, out_dir, study_groups=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_feature_csv(features_csv)
    results = compare_groups(rows, manifest, study_groups, th_list=th_list)
    write_results_csv(out_dir / "results_long.csv", results)
    write_results_csv(out_dir / "best_thresholds.csv", best_thresholds(results))
    write_band_tables(out_dir, results)
    return results


def stage_report(results, features_csv, manifest, out_dir, all_cells=False, svg=False):
    cells = emit_boxplot_data(results, read_feature_csv(features_csv), manifest, all_cells)
    write_boxplots(Path(out_dir) / "boxplots.json", cells)
    if svg:
        render_svg(cells, Path(out_dir) / "svg")
    return cells


def read_results_csv(path):
    from .stats import GroupComparisonResult

    out = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            out.append(GroupComparisonResult(
                study_group=raw["study_group"], band=raw["band"], feature=raw["feature"],
                Th=float(raw["Th"]), test_used=raw["test_used"],
                statistic=float(raw["statistic"] or "nan"), p_value=float(raw["p_value"] or "nan"),
                significant=raw["significant"] == "true", direction=int(raw["direction"]),
                n1=int(raw["n1"]), n2=int(raw["n2"]), excluded1=int(raw["excluded1"]),
                excluded2=int(raw["excluded2"]), note=raw["note"]))
    return out


def write_eval_csv(path_or_fh, model, spec_dir):
    ids, pids, labels, values = load_spectrograms(spec_dir)
    probs = model.predict_proba(values) if len(values) else np.zeros((0, 2))
    own = isinstance(path_or_fh, (str, Path))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "patient_id", "label", "p_non_cough", "p_cough"])
        for cid, pid, lbl, p in zip(ids, pids, labels, probs):
            w.writerow([cid, pid, lbl, repr(float(p[0])), repr(float(p[1]))])
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------- full run

def _versions():
    import scipy

    return {"coughband": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_pipeline(config: PipelineConfig) -> dict:
    """Run every stage; returns the summary also written to ``summary.json``."""
    work = Path(config.workdir)
    work.mkdir(parents=True, exist_ok=True)
    try:
        manifest = load_manifest(config.manifest)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"invalid manifest {config.manifest}: {exc}") from exc
    if not manifest.study_groups:
        raise ConfigError("manifest declares no study groups")
    groups = config.study_groups or manifest.study_groups
    missing = set(groups) - set(manifest.study_groups)
    if missing:
        raise ConfigError(f"study groups {sorted(missing)} absent from the manifest")

    clip_dir, spec_dir = work / "clips", work / "spectrograms"
    model_dir, explain_dir = work / "models", work / "explain"
    results_dir = work / "results"
    model_dir.mkdir(exist_ok=True)

    _run_stage("ingest", clip_dir, stage_ingest, manifest, clip_dir)
    _run_stage("spectrogram", spec_dir, stage_spectrogram, clip_dir, spec_dir)

    train_cfg = config.train_cfg
    if config.model:
        models = [_run_stage("load model", config.model, load_model, config.model)]
        model_of = {pid: models[0] for pid in manifest.patients}
    else:
        plan = _run_stage("folds", spec_dir, fold_plan, spec_dir, manifest, train_cfg, config.seed)
        write_json(model_dir / "folds.json",
                   {"seed": plan.seed, "folds": [asdict(f) for f in plan.folds]})
        models = []
        for f in plan.folds:
            path = model_dir / f"fold{f.index}.bin"
            models.append(_run_stage(f"train[fold {f.index}]", path, stage_train_fold,
                                     spec_dir, plan, f.index, train_cfg, path))
        write_json(model_dir / "history.json", {f"fold{i}": m.history for i, m in enumerate(models)})
        # each patient is explained by the model that never saw it
        model_of = {pid: models[plan.fold_of(pid)] for pid in manifest.patients}

    if explain_dir.exists():
        for p in explain_dir.iterdir():
            p.unlink()
    for pid in manifest.patients:
        _run_stage(f"explain[{pid}]", explain_dir, stage_explain, model_of[pid], spec_dir, pid,
                   config.th_list, config.mask_cfg, explain_dir, config.confidence_cutoff)

    features_csv = work / "features.csv"
    _run_stage("features", features_csv, stage_features, explain_dir, features_csv)
    results = _run_stage("compare", results_dir, stage_compare, features_csv, manifest,
                         config.th_list, results_dir, groups)
    cells = _run_stage("report", results_dir, stage_report, results, features_csv, manifest,
                       results_dir, config.boxplots_all, config.svg)

    index = read_index(explain_dir)
    summary = {
        "config": asdict(config),
        "config_sha256": config.digest(),
        "seed": config.seed,
        "versions": _versions(),
        "th_list": list(config.th_list),
        "confidence_cutoff": config.confidence_cutoff,
        "mask_cfg": config.mask_cfg.as_dict(),
        "train_cfg": None if config.model else asdict(train_cfg),
        "patients": len(manifest.patients),
        "skipped_patients": sorted(v["patient_id"] for v in index.values() if v["kind"] == "skipped"),
        "confident_coughs": {v["patient_id"]: v["P"] for v in index.values() if v["kind"] == "mean_map"},
        "fold_val_acc": [m.history[-1].get("val_acc") if m.history else None for m in models],
        "significant_cells": sum(r.significant for r in results),
        "tested_cells": sum(r.test_used != "untestable" for r in results),
        "boxplot_cells": len(cells),
        "artifacts": {"features": str(features_csv), "results": str(results_dir)},
    }
    write_json(work / "summary.json", summary)
    return summary
