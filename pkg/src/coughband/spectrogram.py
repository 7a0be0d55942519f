"""45x100 log-normalized one-sided PSD spectrograms of one-second clips.

Frames are 88 samples (10 ms at 8820 Hz) with no overlap, Hanning windowed
and zero-padded to an 89-point DFT so that bin k sits at k * fs / 89 Hz.
100 frames consume 8800 samples; the last 20 samples of a clip are unused.
"""

from __future__ import annotations

import numpy as np

from .audio import CLIP_SAMPLES, WORKING_RATE

N_BINS = 45  # K + 1
N_FRAMES = 100
FRAME_LEN = 88
NFFT = 2 * (N_BINS - 1) + 1
EPS = 1e-10
SHAPE = (N_BINS, N_FRAMES)

FREQS = np.arange(N_BINS) * WORKING_RATE / NFFT
WINDOW = np.hanning(FRAME_LEN)


class SpectrogramError(ValueError):
    pass


def frames(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.shape != (CLIP_SAMPLES,):
        raise SpectrogramError(f"expected {CLIP_SAMPLES} samples, got shape {x.shape}")
    return x[: N_FRAMES * FRAME_LEN].reshape(N_FRAMES, FRAME_LEN)


def raw_psd(samples) -> np.ndarray:
    """Magnitude-squared one-sided periodogram, bins x frames (45 x 100)."""
    spec = np.fft.rfft(frames(samples) * WINDOW, n=NFFT, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def log_normalize(raw_psd) -> np.ndarray:
    raw = np.asarray(raw_psd, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise SpectrogramError("PSD contains non-finite values")
    if np.any(raw < 0):
        raise SpectrogramError("PSD contains negative values")
    log = np.log10(raw + EPS)
    lo, hi = log.min(), log.max()
    if hi == lo:
        return np.zeros_like(log)
    return (log - lo) / (hi - lo)


def compute_spectrogram(clip) -> np.ndarray:
    """Spectrogram of a ``Clip`` (or bare 8820-sample array)."""
    rate = getattr(clip, "sample_rate", WORKING_RATE)
    if rate != WORKING_RATE:
        raise SpectrogramError(f"expected {WORKING_RATE} Hz clip, got {rate} Hz")
    samples = getattr(clip, "samples", clip)
    return log_normalize(raw_psd(samples))


def check_spectrogram(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != SHAPE:
        raise SpectrogramError(f"spectrogram must be {SHAPE}, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise SpectrogramError("spectrogram values must be finite and within [0, 1]")
    return arr
