"""Deterministic synthetic speech for desk-scale experiments.

Eight voices with fixed pitch ranges and formant layouts speak nonsense
syllables: harmonic stacks shaped by the speaker's formants, broken up by
noise consonants and short silences. The point is not realism but speaker
separability and speech-like spectral structure at 16 kHz, reproducible
from a seed alone.
"""

from __future__ import annotations

import numpy as np

from .dsp import SAMPLE_RATE, AudioBuffer, write_wav

N_SPEAKERS = 8
_MAX_F = 7600.0  # keep harmonics clear of nyquist


def speaker_profile(idx: int) -> dict:
    rng = np.random.default_rng(1000 + idx)
    return {
        "f0": 95.0 * (1.19 ** idx),  # 95 Hz bass up to ~320 Hz
        "formants": np.sort(rng.uniform([280, 900, 2300], [820, 2100, 3400])),
        "bandwidths": rng.uniform(70, 150, size=3),
        "tilt": rng.uniform(0.8, 1.6),
        "breath": rng.uniform(0.01, 0.04),
    }


def _formant_gain(freqs: np.ndarray, profile: dict) -> np.ndarray:
    gain = np.zeros_like(freqs)
    for fc, bw in zip(profile["formants"], profile["bandwidths"]):
        gain += 1.0 / (1.0 + ((freqs - fc) / bw) ** 2)
    return gain / (freqs / 400.0 + 1.0) ** profile["tilt"]


def _voiced(profile: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    # slow pitch contour around the speaker's base f0
    drift = rng.standard_normal(4) * 0.05
    t = np.linspace(0, 1, n)
    contour = 1.0 + sum(d * np.sin(2 * np.pi * (i + 1) * t + rng.uniform(0, 6.28))
                        for i, d in enumerate(drift))
    f0_t = profile["f0"] * contour
    phase = 2 * np.pi * np.cumsum(f0_t) / SAMPLE_RATE
    out = np.zeros(n)
    k = 1
    while k * profile["f0"] * 1.2 < _MAX_F:
        amp = _formant_gain(np.array([k * profile["f0"]]), profile)[0]
        out += amp * np.sin(k * phase + rng.uniform(0, 6.28))
        k += 1
    out += profile["breath"] * rng.standard_normal(n)
    return out


def _consonant(n: int, rng: np.random.Generator) -> np.ndarray:
    """Band-limited noise burst, the stand-in for fricatives."""
    lo = rng.uniform(1500, 4000)
    hi = lo + rng.uniform(1000, 3000)
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0
    return np.fft.irfft(spec, n) * 2.0


def _envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        env[:r] = np.linspace(0, 1, r)
        env[-r:] = np.linspace(1, 0, r)
    return env


def utterance(speaker: int, duration_s: float,
              rng: np.random.Generator) -> np.ndarray:
    profile = speaker_profile(speaker)
    total = int(duration_s * SAMPLE_RATE)
    out = np.zeros(total)
    pos = 0
    while pos < total:
        kind = rng.random()
        n = int(rng.uniform(0.08, 0.22) * SAMPLE_RATE)
        n = min(n, total - pos)
        if kind < 0.6:
            seg = _voiced(profile, n, rng)
        elif kind < 0.85:
            seg = _consonant(n, rng) * 0.5
        else:
            seg = np.zeros(n)
        out[pos : pos + n] = seg * _envelope(n, int(0.01 * SAMPLE_RATE))
        pos += n
    peak = np.max(np.abs(out))
    return out * (0.5 / peak) if peak > 0 else out


def generate_corpus(root, speakers=N_SPEAKERS, clips_per_speaker=4,
                    duration_s=3.4, seed=0) -> list:
    """Write root/s<i>/u<j>.wav for every voice; returns the file paths."""
    import os

    paths = []
    for s in range(speakers):
        folder = os.path.join(str(root), f"s{s}")
        os.makedirs(folder, exist_ok=True)
        for j in range(clips_per_speaker):
            rng = np.random.default_rng(seed * 100003 + s * 1009 + j)
            wav = utterance(s, duration_s, rng)
            path = os.path.join(folder, f"u{j}.wav")
            write_wav(path, AudioBuffer(wav))
            paths.append(path)
    return paths
