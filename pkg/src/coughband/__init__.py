"""Cough spectrogram analysis: CNN cough detection, occlusion maps and
band-specific spectral features compared across patient cohorts."""

__version__ = "0.1.0"
