"""Audio decoding, down-sampling, clip segmentation and dataset manifests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

logger = logging.getLogger(__name__)

WORKING_RATE = 8820
CLIP_SAMPLES = WORKING_RATE
FIR_TAPS = 127
CUTOFF_FRACTION = 0.9

STUDY_GROUPS = ("G1", "G2", "G3", "G4", "G5", "G6")
MEMBERSHIP_STATES = ("C1", "C2", "excluded")
CLIP_LABELS = ("cough", "non_cough", "unlabeled")


class AudioError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class PcmSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("signal contains non-finite samples")

    def __len__(self):
        return len(self.samples)


@dataclass
class Clip:
    samples: np.ndarray
    patient_id: str
    label: str = "unlabeled"
    clip_id: str = ""
    sample_rate: int = WORKING_RATE

    def __post_init__(self):
        if len(self.samples) != self.sample_rate:
            raise AudioError(f"clip must hold exactly one second, got {len(self.samples)} samples")
        if self.label not in CLIP_LABELS:
            raise AudioError(f"unknown clip label {self.label!r}")


@dataclass
class LabelWindow:
    start_s: float
    end_s: float
    label: str = "cough"


@dataclass
class ManifestEntry:
    path: Path
    patient_id: str
    groups: dict[str, str]
    labels: list[LabelWindow] = field(default_factory=list)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def patients(self) -> list[str]:
        """Patient ids in first-appearance order."""
        return list(dict.fromkeys(e.patient_id for e in self.entries))

    @property
    def study_groups(self) -> list[str]:
        keys = {g for e in self.entries for g in e.groups}
        return [g for g in STUDY_GROUPS if g in keys]

    def membership(self, group: str) -> dict[str, str]:
        out = {}
        for e in self.entries:
            out[e.patient_id] = e.groups[group]
        return out

    def cohort_counts(self, group: str) -> dict[str, int]:
        counts = {s: 0 for s in MEMBERSHIP_STATES}
        for state in self.membership(group).values():
            counts[state] += 1
        return counts


def decode_wav(path) -> PcmSignal:
    """Read a PCM or IEEE-float WAV file as a mono signal in [-1, 1].

    Multichannel audio is folded by averaging the channels.
    """
    path = Path(path)
    if not path.is_file():
        raise AudioError(f"no such audio file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioError(f"cannot decode {path}: {exc}") from exc

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # 24-bit samples arrive left-justified in int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported sample format {data.dtype} in {path}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"zero-length audio in {path}")
    return PcmSignal(x, int(rate))


def lowpass_fir(factor: int, taps: int = FIR_TAPS) -> np.ndarray:
    """Hamming-windowed sinc low-pass with cutoff at 0.9 of the decimated Nyquist."""
    fc = CUTOFF_FRACTION / (2.0 * factor)  # cycles per input sample
    n = np.arange(taps) - (taps - 1) / 2.0
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * np.hamming(taps)
    return h / h.sum()


def decimate(signal: PcmSignal, factor: int) -> PcmSignal:
    if factor < 1 or int(factor) != factor:
        raise AudioError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if len(signal) == 0:
        raise AudioError("cannot decimate an empty signal")
    if factor == 1:
        return PcmSignal(signal.samples.copy(), signal.sample_rate)
    if signal.sample_rate % factor:
        raise AudioError(f"rate {signal.sample_rate} Hz is not divisible by {factor}")

    h = lowpass_fir(factor)
    delay = (len(h) - 1) // 2
    filtered = np.convolve(signal.samples, h)[delay:delay + len(signal)]
    n_out = len(signal) // factor
    return PcmSignal(filtered[: n_out * factor : factor], signal.sample_rate // factor)


def to_working_rate(signal: PcmSignal) -> PcmSignal:
    if signal.sample_rate % WORKING_RATE:
        raise AudioError(
            f"{signal.sample_rate} Hz is not an integer multiple of {WORKING_RATE} Hz"
        )
    return decimate(signal, signal.sample_rate // WORKING_RATE)


def clip_label(index: int, windows: list[LabelWindow]) -> str:
    """Label of the clip covering seconds [index, index + 1).

    A clip is a cough clip when it contains at least half of a cough window
    (or half of the clip, for windows longer than a second).
    """
    if not windows:
        return "unlabeled"
    lo, hi = float(index), float(index + 1)
    for w in windows:
        if w.label != "cough":
            continue
        overlap = min(hi, w.end_s) - max(lo, w.start_s)
        needed = 0.5 * min(w.end_s - w.start_s, 1.0)
        if overlap > 0 and overlap >= needed:
            return "cough"
    return "non_cough"


def segment_clips(signal: PcmSignal, patient_id: str, labels=None, prefix: str = "") -> list[Clip]:
    """Cut consecutive one-second clips; the trailing remainder is dropped."""
    if signal.sample_rate != WORKING_RATE:
        raise AudioError(f"expected {WORKING_RATE} Hz, got {signal.sample_rate} Hz")
    windows = list(labels or [])
    n_clips = len(signal) // CLIP_SAMPLES
    stem = prefix or str(patient_id)
    clips = []
    for i in range(n_clips):
        chunk = signal.samples[i * CLIP_SAMPLES:(i + 1) * CLIP_SAMPLES]
        clips.append(Clip(chunk, str(patient_id), clip_label(i, windows), f"{stem}_{i:04d}"))
    return clips


def _parse_entry(raw: dict, base: Path, check_files: bool) -> ManifestEntry:
    try:
        path, pid, groups = raw["path"], raw["patient_id"], raw["groups"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"manifest entry missing field {exc}") from exc
    if not isinstance(groups, dict) or not groups:
        raise ManifestError(f"patient {pid}: no study-group memberships")
    for g, state in groups.items():
        if g not in STUDY_GROUPS:
            raise ManifestError(f"patient {pid}: unknown study group {g!r}")
        if state not in MEMBERSHIP_STATES:
            raise ManifestError(f"patient {pid}: invalid membership {state!r} for {g}")

    windows = []
    for lab in raw.get("labels", []):
        w = LabelWindow(float(lab["start_s"]), float(lab["end_s"]), lab.get("label", "cough"))
        if w.label not in ("cough", "non_cough"):
            raise ManifestError(f"patient {pid}: unknown window label {w.label!r}")
        if w.end_s <= w.start_s:
            raise ManifestError(f"patient {pid}: empty label window {lab}")
        windows.append(w)

    full = Path(path)
    if not full.is_absolute():
        full = base / full
    if check_files and not full.is_file():
        raise ManifestError(f"patient {pid}: missing audio file {full}")
    return ManifestEntry(full, str(pid), dict(groups), windows)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Load and validate a JSON manifest.

    A patient may own several recordings, but all of them must declare the
    same study-group memberships. Every patient must state a membership for
    every study group used anywhere in the manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"no such manifest: {path}")
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ManifestError("manifest must be a JSON list of entries")

    entries = [_parse_entry(r, path.parent, check_files) for r in raw]

    seen: dict[str, dict[str, str]] = {}
    for e in entries:
        prev = seen.setdefault(e.patient_id, e.groups)
        if prev != e.groups:
            raise ManifestError(f"duplicate patient {e.patient_id} with conflicting memberships")
    used = {g for e in entries for g in e.groups}
    for e in entries:
        missing = used - set(e.groups)
        if missing:
            raise ManifestError(f"patient {e.patient_id} lacks membership for {sorted(missing)}")
    return DatasetManifest(entries)


def ingest_entry(entry: ManifestEntry, index: int = 0) -> list[Clip]:
    signal = to_working_rate(decode_wav(entry.path))
    return segment_clips(signal, entry.patient_id, entry.labels, prefix=f"{entry.patient_id}_{index:02d}")


def ingest_manifest(manifest: DatasetManifest) -> list[Clip]:
    clips = []
    counter: dict[str, int] = {}
    for e in manifest.entries:
        i = counter.get(e.patient_id, 0)
        counter[e.patient_id] = i + 1
        clips.extend(ingest_entry(e, i))
    logger.info("ingested %d clips from %d recordings", len(clips), len(manifest.entries))
    return clips
