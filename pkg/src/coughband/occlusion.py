"""Occlusion maps, per-patient mean maps and thresholded weighted spectrograms.

Any object with ``predict_proba(batch) -> (B, 2)`` works as the model; column
1 is the cough probability.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

logger = logging.getLogger(__name__)

CONFIDENCE_CUTOFF = 0.90


class OcclusionError(ValueError):
    pass


@dataclass(frozen=True)
class MaskConfig:
    patch_height: int = 5
    patch_width: int = 10
    stride_k: int = 1
    stride_n: int = 1
    fill: float = 0.0

    def __post_init__(self):
        if min(self.patch_height, self.patch_width) < 1:
            raise OcclusionError("patch dimensions must be at least 1")
        if min(self.stride_k, self.stride_n) < 1:
            raise OcclusionError("strides must be at least 1")

    def positions(self, shape):
        h, w = shape
        if self.patch_height > h or self.patch_width > w:
            raise OcclusionError(f"patch {self.patch_height}x{self.patch_width} exceeds {shape}")
        rows = range(0, h - self.patch_height + 1, self.stride_k)
        cols = range(0, w - self.patch_width + 1, self.stride_n)
        return [(r, c) for r in rows for c in cols]

    def as_dict(self):
        return asdict(self)


@dataclass
class OcclusionMap:
    values: np.ndarray
    mask_cfg: MaskConfig


@dataclass
class MeanOcclusionMap:
    values: np.ndarray
    patient_id: str
    P: int


@dataclass
class WeightedSpectrogram:
    values: np.ndarray
    patient_id: str
    threshold_percentile: float
    alpha: float


def p_cough(model, specs, batch_size=256):
    return np.asarray(model.predict_proba(np.asarray(specs), batch_size=batch_size))[:, 1]


def select_confident(model, specs, cutoff=CONFIDENCE_CUTOFF):
    """Indices and cough probabilities of spectrograms with p_cough >= cutoff."""
    specs = np.asarray(specs)
    if len(specs) == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    probs = p_cough(model, specs)
    keep = np.flatnonzero(probs >= cutoff)
    if len(keep) == 0:
        warnings.warn(f"no spectrogram reached p_cough >= {cutoff}", RuntimeWarning, stacklevel=2)
    return keep, probs[keep]


def minmax(values):
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) / (hi - lo)


def occlusion_map(model, spec, cfg: MaskConfig = MaskConfig(), batch_size=256) -> OcclusionMap:
    """Importance of each pixel from the drop in p_cough when it is hidden.

    Each patch position contributes max(0, baseline - occluded probability)
    to every pixel it covers; a pixel keeps the mean contribution over the
    patches covering it. The result is min-max scaled to [0, 1].
    """
    spec = np.asarray(spec, dtype=np.float64)
    positions = cfg.positions(spec.shape)
    ph, pw = cfg.patch_height, cfg.patch_width
    baseline = p_cough(model, spec[None])[0]

    drops = np.empty(len(positions))
    for start in range(0, len(positions), batch_size):
        chunk = positions[start:start + batch_size]
        batch = np.repeat(spec[None], len(chunk), axis=0)
        for b, (r, c) in enumerate(chunk):
            batch[b, r:r + ph, c:c + pw] = cfg.fill
        drops[start:start + len(chunk)] = p_cough(model, batch, batch_size)
    drops = np.maximum(0.0, baseline - drops)

    return OcclusionMap(minmax(_coverage_mean(drops, positions, spec.shape, ph, pw)), cfg)


def _coverage_mean(contrib, positions, shape, ph, pw):
    total = np.zeros(shape)
    count = np.zeros(shape)
    for d, (r, c) in zip(contrib, positions):
        total[r:r + ph, c:c + pw] += d
        count[r:r + ph, c:c + pw] += 1
    out = np.zeros(shape)
    np.divide(total, count, out=out, where=count > 0)
    return out


def _ordered_mean(stack):
    # sorting each pixel's values first makes the sum independent of input order
    return np.sort(stack, axis=0).sum(axis=0) / len(stack)


def average_maps(maps, patient_id="") -> MeanOcclusionMap:
    arrays = [np.asarray(getattr(m, "values", m), dtype=np.float64) for m in maps]
    if not arrays:
        raise OcclusionError("no occlusion maps to average")
    if any(a.shape != arrays[0].shape for a in arrays):
        raise OcclusionError("occlusion maps differ in shape")
    return MeanOcclusionMap(_ordered_mean(np.stack(arrays)), patient_id, len(arrays))


def percentile_threshold(mean_map, th) -> float:
    """Linear-interpolation percentile (rank th/100 * (M - 1)) of all map values."""
    if not 0 <= th <= 100:
        raise OcclusionError(f"percentile {th} outside [0, 100]")
    v = np.sort(np.asarray(getattr(mean_map, "values", mean_map), dtype=np.float64).ravel())
    rank = th / 100.0 * (len(v) - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, len(v) - 1)
    return float(v[lo] + (rank - lo) * (v[hi] - v[lo]))


def mean_spectrogram(specs) -> np.ndarray:
    specs = [np.asarray(s, dtype=np.float64) for s in specs]
    if not specs:
        raise OcclusionError("no spectrograms to average")
    if any(s.shape != specs[0].shape for s in specs):
        raise OcclusionError("spectrograms differ in shape")
    return _ordered_mean(np.stack(specs))


def weighted_spectrogram(specs, mean_map, alpha, th=float("nan"), patient_id=None) -> WeightedSpectrogram:
    """Mean spectrogram kept where the mean map strictly exceeds ``alpha``."""
    avg = mean_spectrogram(specs)
    m = np.asarray(getattr(mean_map, "values", mean_map), dtype=np.float64)
    if m.shape != avg.shape:
        raise OcclusionError("map and spectrogram shapes differ")
    if patient_id is None:
        patient_id = getattr(mean_map, "patient_id", "")
    return WeightedSpectrogram(np.where(m > alpha, avg, 0.0), patient_id, th, float(alpha))


def explain_patient(model, cough_specs, patient_id, th_list, cfg: MaskConfig = MaskConfig(),
                    cutoff=CONFIDENCE_CUTOFF):
    """Full chain for one patient.

    Returns (mean_map or None, {th: WeightedSpectrogram}, kept indices).
    """
    keep, _ = select_confident(model, cough_specs, cutoff)
    if len(keep) == 0:
        logger.warning("patient %s: no confident cough spectrograms", patient_id)
        return None, {}, keep
    specs = np.asarray(cough_specs)[keep]
    maps = [occlusion_map(model, s, cfg) for s in specs]
    mean_map = average_maps(maps, patient_id)
    weighted = {}
    for th in th_list:
        alpha = percentile_threshold(mean_map, th)
        weighted[th] = weighted_spectrogram(specs, mean_map, alpha, th, patient_id)
    return mean_map, weighted, keep
