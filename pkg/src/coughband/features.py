"""Band-specific spectral features of weighted spectrograms.

Frames whose power in the relevant band is zero are left out of the time
averages of ratio-type features; a feature whose every frame is left out
is undefined (NaN). Spectral flux is a plain sum over all frames.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .spectrogram import EPS, FREQS, N_BINS

ROLLOFF_FRACTION = 0.85
RENYI_ORDER = 4
FEATURES = ("RP", "SpBW", "SpCF", "SpF", "SpFx", "SpRE", "SpR")
CSV_COLUMNS = ("patient_id", "Th", "band") + FEATURES
UNDEFINED = float("nan")


@dataclass(frozen=True)
class BandDefinition:
    id: str
    lo_hz: float
    hi_hz: float

    @property
    def bins(self) -> np.ndarray:
        return np.flatnonzero((FREQS >= self.lo_hz) & (FREQS < self.hi_hz))

    @property
    def is_global(self) -> bool:
        return self.id == "B"


BANDS = {
    "B1": BandDefinition("B1", 0.0, 500.0),
    "B2": BandDefinition("B2", 500.0, 1000.0),
    "B3": BandDefinition("B3", 1000.0, 1500.0),
    "B4": BandDefinition("B4", 1500.0, 2000.0),
    "B5": BandDefinition("B5", 2000.0, 4410.0),
    "B": BandDefinition("B", 0.0, 4410.0),
}
SUB_BANDS = ("B1", "B2", "B3", "B4", "B5")
BAND_IDS = SUB_BANDS + ("B",)


def _band(band) -> BandDefinition:
    return BANDS[band] if isinstance(band, str) else band


def _values(ws) -> np.ndarray:
    arr = np.asarray(getattr(ws, "values", ws), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != N_BINS:
        raise ValueError(f"expected a {N_BINS}-bin spectrogram, got {arr.shape}")
    return arr


def _frame_mean(per_frame) -> float:
    valid = per_frame[~np.isnan(per_frame)]
    return float(valid.mean()) if valid.size else UNDEFINED


def band_slice(ws, band) -> np.ndarray:
    s = _values(ws)
    out = np.zeros_like(s)
    idx = _band(band).bins
    out[idx] = s[idx]
    return out


def _band_rows(ws, band):
    """Band bins (rows), their frequencies, and the per-frame band power."""
    band = _band(band)
    s = _values(ws)[band.bins]
    return s, FREQS[band.bins], s.sum(axis=0)


def relative_power(ws, band) -> float:
    s = _values(ws)
    total = s.sum(axis=0)
    part = s[_band(band).bins].sum(axis=0)
    ok = total > 0
    return _frame_mean(np.where(ok, part / np.where(ok, total, 1), np.nan))


def ac_power(ws) -> float:
    s = _values(ws)
    total = s.sum(axis=0)
    ok = total > 0
    return _frame_mean(np.where(ok, s[1:].sum(axis=0) / np.where(ok, total, 1), np.nan))


def centroids(ws, band) -> np.ndarray:
    """Per-frame power-weighted mean frequency; NaN for zero-power frames."""
    s, f, power = _band_rows(ws, band)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(power > 0, (f[:, None] * s).sum(axis=0) / power, np.nan)


def spectral_centroid(sj, n: int, band=None) -> float:
    """Centroid of frame ``n`` of a band-restricted spectrogram."""
    s = _values(sj)[:, n]
    if band is not None:
        mask = np.zeros(N_BINS, bool)
        mask[_band(band).bins] = True
        s = np.where(mask, s, 0.0)
    total = s.sum()
    return float((FREQS * s).sum() / total) if total > 0 else UNDEFINED


def spectral_bandwidth(ws, band) -> float:
    s, f, power = _band_rows(ws, band)
    c = centroids(ws, band)
    with np.errstate(invalid="ignore", divide="ignore"):
        spread = ((f[:, None] - c) ** 2 * s).sum(axis=0) / power
    return _frame_mean(np.where(power > 0, spread, np.nan))


def crest_constant(band) -> float:
    f = FREQS[_band(band).bins]
    return 1.0 / (f.max() - f.min() + 1.0)


def spectral_crest(ws, band) -> float:
    s, _, power = _band_rows(ws, band)
    c = crest_constant(band)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = s.max(axis=0) / (c * power)
    return _frame_mean(np.where(power > 0, ratio, np.nan))


def spectral_flatness(ws, band) -> float:
    s, _, power = _band_rows(ws, band)
    floored = np.maximum(s, EPS)
    gm = np.exp(np.log(floored).mean(axis=0))
    ratio = np.minimum(gm / floored.mean(axis=0), 1.0)
    return _frame_mean(np.where(power > 0, ratio, np.nan))


def spectral_flux(ws, band) -> float:
    """Mean summed frame-to-frame difference (unsquared), over all frames.

    The sum telescopes to (last band power - first band power) / (N - 1).
    Undefined only when the band holds no power at all.
    """
    s, _, power = _band_rows(ws, band)
    if not np.any(power > 0):
        return UNDEFINED
    return float(np.diff(s, axis=1).sum() / (s.shape[1] - 1))


def renyi_entropy(ws, band, q=RENYI_ORDER) -> float:
    s, _, power = _band_rows(ws, band)
    ok = power > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        p = s / power
        h = np.log((p ** q).sum(axis=0)) / (1.0 - q)
    return _frame_mean(np.where(ok, h, np.nan))


def rolloff_bins(ws, band, fraction=ROLLOFF_FRACTION) -> np.ndarray:
    """Per-frame roll-off bin index k (absolute), -1 for zero-power frames."""
    band = _band(band)
    s, _, power = _band_rows(ws, band)
    reached = np.cumsum(s, axis=0) >= fraction * power
    first = reached.argmax(axis=0)
    return np.where(power > 0, band.bins[first], -1)


def spectral_rolloff(ws, band, fraction=ROLLOFF_FRACTION) -> float:
    k = rolloff_bins(ws, band, fraction)
    return _frame_mean(np.where(k >= 0, FREQS[np.maximum(k, 0)], np.nan))


@dataclass
class BandFeatureVector:
    """Feature values per band; band ``B`` stores AC under the ``RP`` key."""

    values: dict = field(default_factory=dict)
    patient_id: str = ""
    th: float = float("nan")

    def rows(self):
        for band in BAND_IDS:
            row = {"patient_id": self.patient_id, "Th": self.th, "band": band}
            row.update(self.values[band])
            yield row


def band_features(ws, band) -> dict:
    band = _band(band)
    return {
        "RP": ac_power(ws) if band.is_global else relative_power(ws, band),
        "SpBW": spectral_bandwidth(ws, band),
        "SpCF": spectral_crest(ws, band),
        "SpF": spectral_flatness(ws, band),
        "SpFx": spectral_flux(ws, band),
        "SpRE": renyi_entropy(ws, band),
        "SpR": spectral_rolloff(ws, band),
    }


def feature_vector(ws, th=None, patient_id=None) -> BandFeatureVector:
    if th is None:
        th = getattr(ws, "threshold_percentile", float("nan"))
    if patient_id is None:
        patient_id = getattr(ws, "patient_id", "")
    return BandFeatureVector({b: band_features(ws, b) for b in BAND_IDS}, patient_id, th)


def feature_name(feature: str, band: str) -> str:
    return "AC" if feature == "RP" and band == "B" else feature


def _fmt(v):
    if isinstance(v, float) and math.isnan(v):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_th(th):
    th = float(th)
    return str(int(th)) if th.is_integer() else repr(th)


def write_feature_csv(path, vectors) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for vec in vectors:
            for row in vec.rows():
                out = [row["patient_id"], format_th(row["Th"]), row["band"]]
                out += [_fmt(row[f]) for f in FEATURES]
                w.writerow(out)


def read_feature_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {"patient_id": raw["patient_id"], "Th": float(raw["Th"]), "band": raw["band"]}
            for f in FEATURES:
                row[f] = float(raw[f]) if raw[f] != "" else UNDEFINED
            rows.append(row)
    return rows
