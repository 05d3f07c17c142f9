"""
Streaming, latency, and the local speaker path
==============================================

The encoder is causal by construction: pushing spectrogram frames one at
a time produces bit-identical latents to batch encoding, and nothing ever
reads a future frame. Local mode extends this to the speaker side, which
re-derives the voice from each past one-second window instead of an
enrollment profile.
"""

import time

import numpy as np

from disencodec import bitstream, dsp, synthspeech
from disencodec.dsp import AudioBuffer
from disencodec.model import CodecConfig, SpeechCodec

rng = np.random.default_rng(3)
cfg = CodecConfig(mode="local", channels=(8, 16, 32), d_c=32, d_s=32,
                  content_k=256, content_groups=2, speaker_k=64,
                  speaker_groups=2, window_frames=25, target_bps=1000)
codec = SpeechCodec(cfg, rng=rng)

wav = synthspeech.utterance(5, 3.0, np.random.default_rng(1))
spec = dsp.stft(AudioBuffer(wav))
print(f"{spec.n_frames} spectrogram frames -> "
      f"{-(-spec.n_frames // 4)} latent frames at 25 Hz")

# batch encode, then replay the same frames through the streaming session
batch = codec.encode_content(spec).features.data
session = codec.streaming_content_session()
latents, times = [], []
for frame in spec.data:
    t0 = time.perf_counter()
    out = session.push(frame)
    times.append(time.perf_counter() - t0)
    if out is not None:
        latents.append(out)
streamed = np.stack(latents)
print(f"streaming == batch: max abs diff {np.max(np.abs(streamed - batch)):.2e}")
print(f"per-frame compute: mean {np.mean(times)*1e3:.2f} ms, "
      f"worst {np.max(times)*1e3:.2f} ms (frame budget is 10 ms)")

# causality, the blunt way: corrupt the future, the past must not move
poked = wav.copy()
poked[2 * 16000:] += 0.1 * np.random.default_rng(2).normal(size=16000)
a = codec.encode_content(dsp.stft(AudioBuffer(wav))).features.data
b = codec.encode_content(dsp.stft(AudioBuffer(poked))).features.data
first = int(np.nonzero(np.any(a != b, axis=1))[0][0])
print(f"corrupting audio from 2.0 s changes latents from index {first} "
      f"({first / 25:.2f} s); everything earlier is bit-identical")

# local mode needs no profile: speaker packets ride along in the stream
stream = codec.encode_to_stream(AudioBuffer(wav))
parsed = codec.parse_stream(stream)
acct = bitstream.account(parsed)
print(f"local stream: {len(stream)} bytes, {len(parsed.speaker_packets)} "
      f"speaker packets, content {acct.content_bits} bits + "
      f"speaker {acct.speaker_bits} bits")
decoded = codec.decode_stream(stream)
print(f"decoded {decoded.duration_s:.2f} s vs input {len(wav)/16000:.2f} s")
