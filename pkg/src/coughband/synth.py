"""Synthetic cough cohorts for desk-scale end-to-end runs.

Each patient gets one 44.1 kHz WAV made of one-second slots. Cough slots
hold a band-shaped noise burst under a raised-cosine envelope. Non-cough
slots hold a wheeze-like harmonic burst of the same length, loudness and
spectral envelope, so neither burst presence nor band energy gives the
class away. A low noise floor and
a faint hum run under the whole recording. Cohort-specific dB offsets
raise or lower the cough energy inside chosen sub-bands.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .features import BANDS

ORIGINAL_RATE = 44100


@dataclass
class SynthParams:
    patients_per_cohort: int = 6
    coughs_per_patient: int = 12
    noncoughs_per_patient: int = 12
    # cohort -> band id -> offset in dB applied to cough bursts
    band_offsets_db: dict = field(default_factory=lambda: {"C1": {"B3": 6.0}})
    # about a third of a 16-bit step: silence normalizes close to 0
    noise_level: float = 1e-5
    burst_ms: float = 300.0
    # burst onset range inside its one-second slot, in seconds
    onset_s: tuple = (0.2, 0.3)
    burst_peak: float = 0.3
    patient_jitter_db: float = 1.0
    cough_jitter_db: float = 1.0
    study_group: str = "G1"
    sample_rate: int = ORIGINAL_RATE


def _burst_gain(freqs, band_db):
    """Amplitude gain per FFT bin: cough-like hump around 1.25 kHz scaled per band."""
    gain = np.exp(-((freqs - 1250.0) / 1000.0) ** 2) + 0.1
    gain[freqs < 80] *= 0.1
    for band_id, db in band_db.items():
        b = BANDS[band_id]
        gain[(freqs >= b.lo_hz) & (freqs < b.hi_hz)] *= 10 ** (db / 20.0)
    return gain


def _cough(rng, params, offsets_db, patient_db):
    n = int(round(params.burst_ms / 1000.0 * params.sample_rate))
    freqs = np.fft.rfftfreq(n, 1.0 / params.sample_rate)
    band_db = {b: patient_db[b] + rng.normal(0, params.cough_jitter_db) + offsets_db.get(b, 0.0)
               for b in patient_db}
    spec = np.fft.rfft(rng.standard_normal(n)) * _burst_gain(freqs, band_db)
    burst = np.fft.irfft(spec, n)
    burst *= _envelope(n)
    return params.burst_peak * burst / np.max(np.abs(burst))


def _envelope(n):
    return 0.5 * (1 - np.cos(2 * np.pi * np.arange(n) / (n - 1)))


def _hum(rng, params, n):
    """Mains-like hum under the whole recording, so neither class owns it."""
    t = np.arange(n) / params.sample_rate
    f0 = rng.uniform(100.0, 180.0)
    amp = rng.uniform(0.002, 0.01)
    return amp * (np.sin(2 * np.pi * f0 * t) + 0.3 * np.sin(2 * np.pi * 2 * f0 * t + rng.uniform(0, 6.28)))


def _tonal(rng, params):
    """Wheeze-like harmonic burst under the same spectral hump as a cough.

    The pitch is high enough that the harmonics sit several frequency bins
    apart, so the two classes differ in texture (comb vs. noise) across the
    whole burst rather than in where their energy lies.
    """
    n = int(round(params.burst_ms / 1000.0 * params.sample_rate))
    t = np.arange(n) / params.sample_rate
    f0 = rng.uniform(400.0, 700.0) * (1 + 0.02 * t / t[-1])
    phase = 2 * np.pi * np.cumsum(f0) / params.sample_rate
    out = np.zeros(n)
    for h in range(1, 11):
        # harmonics above 4 kHz would alias after decimation; drop them
        amp = _burst_gain(h * f0, {}) * (h * f0 < 4000)
        out += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    out *= _envelope(n)
    return params.burst_peak * rng.uniform(0.6, 1.0) * out / np.max(np.abs(out))


def synth_patient(rng, params, cohort):
    """Samples and cough label windows for one patient."""
    rate = params.sample_rate
    offsets = params.band_offsets_db.get(cohort, {})
    patient_db = {b: rng.normal(0, params.patient_jitter_db) for b in ("B1", "B2", "B3", "B4", "B5")}
    slots = ["cough"] * params.coughs_per_patient + ["non_cough"] * params.noncoughs_per_patient
    rng.shuffle(slots)

    audio = params.noise_level * rng.standard_normal(len(slots) * rate)
    audio += _hum(rng, params, len(audio))
    burst_len = int(round(params.burst_ms / 1000.0 * rate))
    labels = []
    for i, kind in enumerate(slots):
        start = i * rate
        onset = start + int(rng.uniform(*params.onset_s) * rate)
        if kind == "cough":
            audio[onset:onset + burst_len] += _cough(rng, params, offsets, patient_db)
            labels.append({"start_s": onset / rate, "end_s": (onset + burst_len) / rate,
                           "label": "cough"})
        else:
            audio[onset:onset + burst_len] += _tonal(rng, params)
    return np.clip(audio, -1.0, 1.0), labels


def generate_synthetic_cohort(out_dir, params: SynthParams = None, seed=0):
    """Write one WAV per patient plus ``manifest.json``; returns the manifest path."""
    params = params or SynthParams()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = params.onset_s
    if not 0 <= lo <= hi <= 1 - params.burst_ms / 1000.0:
        raise ValueError("burst must fit inside its one-second slot")
    rng = np.random.default_rng(seed)
    manifest = []
    for cohort in ("C1", "C2"):
        for j in range(params.patients_per_cohort):
            pid = f"{cohort}_P{j:02d}"
            audio, labels = synth_patient(rng, params, cohort)
            fname = f"{pid}.wav"
            wavfile.write(out / fname, params.sample_rate, np.round(audio * 32767).astype(np.int16))
            manifest.append({"path": fname, "patient_id": pid,
                             "groups": {params.study_group: cohort}, "labels": labels})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    with open(out / "synth_params.json", "w") as fh:
        json.dump({"seed": seed, **asdict(params)}, fh, indent=1, sort_keys=True)
    return out / "manifest.json"
