"""Audio I/O and the STFT signal path.

Fixed operating point: 16 kHz mono, 40 ms periodic Hann window, 10 ms hop
(window 640 samples, hop 160, 321 one-sided bins, 100 frames/s). The hop is a
quarter window, so squared-window overlap-add sums to exactly 3/2 on interior
samples and analysis/synthesis round trips are exact there.

Everything here is pure numpy on plain arrays; nothing records gradients.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000
WINDOW = 640
HOP = 160
N_BINS = WINDOW // 2 + 1

POWER_EXP = 0.3
_TINY = 1e-12


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    data: np.ndarray  # (T, F, 2) real/imaginary planes
    frame_rate: float = SAMPLE_RATE / HOP
    fft_bins: int = N_BINS

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def complex_view(self) -> np.ndarray:
        return self.data[..., 0] + 1j * self.data[..., 1]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann; the periodic form keeps quarter-hop overlap-add exact."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def frame_count(n_samples: int, window_len=WINDOW, hop=HOP) -> int:
    return (n_samples - window_len) // hop + 1


def stft(audio: AudioBuffer, window_len=WINDOW, hop=HOP) -> Spectrogram:
    x = np.asarray(audio.samples, dtype=np.float64)
    if window_len < hop:
        raise ValueError("window must be at least one hop long")
    if len(x) < window_len:
        raise ValueError("insufficient samples")
    t = frame_count(len(x), window_len, hop)
    idx = np.arange(window_len)[None, :] + hop * np.arange(t)[:, None]
    frames = x[idx] * hann_window(window_len)
    spec = np.fft.rfft(frames, axis=1)
    return Spectrogram(
        np.stack([spec.real, spec.imag], axis=-1),
        frame_rate=audio.sample_rate / hop,
        fft_bins=window_len // 2 + 1,
    )


def istft(spec: Spectrogram, window_len=WINDOW, hop=HOP) -> AudioBuffer:
    if spec.data.shape[1] != window_len // 2 + 1:
        raise ValueError("spectrogram bins do not match window length")
    frames = np.fft.irfft(spec.complex_view(), n=window_len, axis=1)
    w = hann_window(window_len)
    frames *= w
    t = frames.shape[0]
    out_len = (t - 1) * hop + window_len
    acc = np.zeros(out_len)
    den = np.zeros(out_len)
    w2 = w * w
    for i in range(t):
        acc[i * hop : i * hop + window_len] += frames[i]
        den[i * hop : i * hop + window_len] += w2
    out = np.where(den > _TINY, acc / np.maximum(den, _TINY), 0.0)
    return AudioBuffer(out, int(round(spec.frame_rate * hop)))


def power_compress(data: np.ndarray, exponent=POWER_EXP) -> np.ndarray:
    """Magnitude power-law compression |X|^exponent, preserving phase.

    Operates on (..., 2) real/imag stacks: X * (|X|^2 + tiny)^((p-1)/2).
    """
    mag2 = data[..., 0] ** 2 + data[..., 1] ** 2
    return data * ((mag2 + _TINY) ** ((exponent - 1.0) / 2.0))[..., None]


def power_expand(data: np.ndarray, exponent=POWER_EXP) -> np.ndarray:
    mag2 = data[..., 0] ** 2 + data[..., 1] ** 2
    return data * ((mag2 + _TINY) ** ((1.0 / exponent - 1.0) / 2.0))[..., None]


def read_wav(path) -> AudioBuffer:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError("mono WAV required")
        if f.getsampwidth() != 2:
            raise ValueError("16-bit PCM WAV required")
        if f.getcomptype() != "NONE":
            raise ValueError("uncompressed PCM WAV required")
        n = f.getnframes()
        if n == 0:
            raise ValueError("WAV contains no samples")
        raw = f.readframes(n)
        rate = f.getframerate()
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(x, rate)


def write_wav(path, audio: AudioBuffer):
    pcm = np.clip(np.rint(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(audio.sample_rate)
        f.writeframes(pcm.tobytes())
