"""On-disk layout shared by the clip, spectrogram, map and weighted-spectrogram stores.

Every array is a headerless little-endian float32 file in row-major order.
A directory-level ``index.json`` maps item ids to metadata and file names.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

INDEX_NAME = "index.json"
LE_F32 = np.dtype("<f4")


def write_array(path, values) -> None:
    arr = np.ascontiguousarray(values, dtype=LE_F32)
    Path(path).write_bytes(arr.tobytes(order="C"))


def read_array(path, shape) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype=LE_F32)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {np.prod(shape)} floats, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_index(directory, index: dict) -> None:
    write_json(Path(directory) / INDEX_NAME, index)


def read_index(directory) -> dict:
    path = Path(directory) / INDEX_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no {INDEX_NAME} in {directory}")
    return read_json(path)


def save_clips(directory, clips) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for c in clips:
        fname = f"{c.clip_id}.f32"
        write_array(directory / fname, c.samples)
        index[c.clip_id] = {
            "patient_id": c.patient_id,
            "label": c.label,
            "file": fname,
            "sample_rate": c.sample_rate,
        }
    write_index(directory, index)
    return index


def load_clips(directory):
    from .audio import Clip

    directory = Path(directory)
    index = read_index(directory)
    clips = []
    for cid in sorted(index):
        meta = index[cid]
        rate = int(meta.get("sample_rate", 8820))
        samples = read_array(directory / meta["file"], (rate,))
        clips.append(Clip(samples, meta["patient_id"], meta["label"], cid, rate))
    return clips


def save_spectrograms(directory, items) -> dict:
    """``items`` yields (clip_id, patient_id, label, 45x100 array)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for cid, pid, label, values in items:
        fname = f"{cid}.f32"
        write_array(directory / fname, values)
        index[cid] = {"patient_id": pid, "label": label, "file": fname}
    write_index(directory, index)
    return index


def load_spectrograms(directory, shape=(45, 100)):
    """Return (ids, patient_ids, labels, stacked float64 array) sorted by clip id."""
    directory = Path(directory)
    index = read_index(directory)
    ids = sorted(index)
    pids = [index[i]["patient_id"] for i in ids]
    labels = [index[i]["label"] for i in ids]
    if ids:
        values = np.stack([read_array(directory / index[i]["file"], shape) for i in ids])
    else:
        values = np.zeros((0,) + tuple(shape))
    return ids, pids, labels, values
