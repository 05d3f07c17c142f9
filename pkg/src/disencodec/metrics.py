"""Objective quality metrics for decoded audio."""

from __future__ import annotations

import numpy as np

from . import dsp

SNR_CAP_DB = 99.0
_EPS = 1e-12


def snr_db(ref, decoded) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    decoded = np.asarray(decoded, dtype=np.float64)
    if ref.shape != decoded.shape:
        raise ValueError("length mismatch")
    signal = float(np.sum(ref * ref))
    noise = float(np.sum((ref - decoded) ** 2))
    if noise == 0.0:
        return SNR_CAP_DB
    value = 10.0 * np.log10((signal + _EPS) / noise)
    return float(min(value, SNR_CAP_DB))


def log_spectral_distance(ref, decoded) -> float:
    """Mean over frames of the rms log-power difference, in dB."""
    ref = np.asarray(ref, dtype=np.float64)
    decoded = np.asarray(decoded, dtype=np.float64)
    if ref.shape != decoded.shape:
        raise ValueError("length mismatch")
    a = dsp.stft(dsp.AudioBuffer(ref)).complex_view()
    b = dsp.stft(dsp.AudioBuffer(decoded)).complex_view()
    pa = np.abs(a) ** 2 + _EPS
    pb = np.abs(b) ** 2 + _EPS
    diff = 10.0 * np.log10(pa / pb)
    return float(np.mean(np.sqrt(np.mean(diff * diff, axis=1))))


def objective_metrics(ref, decoded) -> dict:
    ref = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    decoded = np.asarray(getattr(decoded, "samples", decoded), dtype=np.float64)
    return {"snr_db": snr_db(ref, decoded),
            "log_spectral_distance": log_spectral_distance(ref, decoded)}
