"""
The analysis/synthesis signal path
==================================

Everything the codec does happens on 100 Hz spectrogram frames: a 40 ms
Hann window sliding by 10 ms at 16 kHz. This walks the framing
arithmetic, the perfect-reconstruction property, and the power-law
compression the network actually sees.
"""

import numpy as np

from disencodec import dsp, synthspeech

# a couple of seconds of one of the built-in synthetic voices
wav = synthspeech.utterance(2, 2.0, np.random.default_rng(0))
audio = dsp.AudioBuffer(wav)
print(f"input: {audio.duration_s:.2f} s, {len(wav)} samples at {dsp.SAMPLE_RATE} Hz")

# frame count follows (N - window)//hop + 1; no padding anywhere
spec = dsp.stft(audio)
t, f, _ = spec.data.shape
print(f"spectrogram: {t} frames x {f} bins (window {dsp.WINDOW}, hop {dsp.HOP})")
assert t == (len(wav) - dsp.WINDOW) // dsp.HOP + 1

# frames are left-aligned: frame k covers samples [k*hop, k*hop + window),
# so the transform is causal and an impulse shows up exactly where expected
impulse = np.zeros(dsp.SAMPLE_RATE)
impulse[5 * dsp.HOP] = 1.0
ispec = dsp.stft(dsp.AudioBuffer(impulse))
energy = (ispec.data ** 2).sum(axis=(1, 2))
print("impulse at sample 800 lands in frames", np.nonzero(energy > 1e-20)[0])

# round trip: the Hann window at 4x overlap satisfies the constant
# overlap-add condition, so synthesis inverts analysis exactly (interior)
back = dsp.istft(spec).samples
err = np.max(np.abs(back[dsp.WINDOW:-dsp.WINDOW] - wav[dsp.WINDOW:-dsp.WINDOW]))
print(f"istft(stft(x)) interior error: {err:.2e}")

# the network never sees raw complex bins. Power-law compression with
# exponent 0.3 squashes the huge dynamic range of speech spectra
comp = dsp.power_compress(spec.data)
mag = np.sqrt((spec.data ** 2).sum(-1))
cmag = np.sqrt((comp ** 2).sum(-1))
print(f"dynamic range, raw magnitudes:        {mag.max() / max(mag.min(), 1e-12):.1e}")
print(f"dynamic range, compressed magnitudes: {cmag.max() / max(cmag.min(), 1e-12):.1e}")

# expansion undoes it
round_trip = dsp.power_expand(comp)
print(f"expand(compress(x)) error: {np.max(np.abs(round_trip - spec.data)):.2e}")

# WAV files are 16-bit PCM; writing and reading costs at most half an LSB
dsp.write_wav("/tmp/demo_signal.wav", audio)
again = dsp.read_wav("/tmp/demo_signal.wav")
print(f"wav round trip error: {np.max(np.abs(again.samples - wav)):.2e} "
      f"(1 LSB = {1/32767:.2e})")
