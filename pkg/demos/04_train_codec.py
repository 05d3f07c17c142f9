"""
Training a small codec end to end
=================================

Fits a reduced codec on the built-in synthetic voices, then measures what
actually matters: the bitrate it settled at and the quality of decoded
held-out speech. Artifacts land in demos/out/ and the voice-conversion
demo reuses them. Takes a couple of minutes on one core.
"""

import os
import time

import numpy as np

from disencodec import dsp, metrics, synthspeech, trainer
from disencodec.dsp import AudioBuffer
from disencodec.model import CodecConfig, SpeechCodec
from disencodec.profiles import save_profile

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# four voices, five clips each; the last clip of each voice is held out
corpus = os.path.join(OUT, "corpus")
synthspeech.generate_corpus(corpus, speakers=4, clips_per_speaker=5,
                            duration_s=6.0, seed=11)
clips = trainer.load_dataset(corpus)
train_set = [c for i, c in enumerate(clips) if i % 5 < 4]
hold_set = [c for i, c in enumerate(clips) if i % 5 == 4]
print(f"corpus: {sum(len(w) for _, w in clips) / 16000:.0f} s total, "
      f"{len(train_set)} train / {len(hold_set)} held-out clips")

# a slimmed architecture; 300 bps target sits comfortably inside the
# 2x256 content codebooks' 400 bps ceiling
cfg = CodecConfig(mode="global", channels=(8, 16, 32), d_c=32, d_s=32,
                  content_k=256, content_groups=2, speaker_k=64,
                  speaker_groups=2, target_bps=300)
codec = SpeechCodec(cfg, rng=np.random.default_rng(np.random.SeedSequence([4, 11])))
tc = trainer.TrainConfig(steps=120, batch=4, seed=4, target_bps=300,
                         crop_s=3.0, lr=1e-3, lambda_rate=0.05)

t0 = time.time()
def progress(r):
    if r["step"] % 20 == 0:
        print(f"  step {r['step']:3d}: recon "
              f"{r['recon_spectral'] + r['recon_magnitude']:.4f}, "
              f"content {r['entropy_bps_content']:6.1f} bps, tau {r['tau']:.2f}")

trainer.train(codec, tc, train_set, on_step=progress)
print(f"trained in {time.time() - t0:.0f} s")

digest = codec.save(os.path.join(OUT, "model.dtm"))
print(f"model {digest.hex()} -> demos/out/model.dtm")

# the measured rate: soft-entropy estimate vs what huffman actually spends
report, measured = trainer.measure_bitrate(codec, train_set)
print(f"entropy estimate {measured.entropy_bps_content:.1f} bps, "
      f"huffman content {measured.actual_bps_content:.1f} bps "
      f"(target {measured.target_bps})")

# enroll each voice on one of its training clips
profiles = {}
for speaker, wav in train_set:
    if speaker not in profiles:
        profiles[speaker] = codec.enroll(AudioBuffer(wav))
        save_profile(os.path.join(OUT, f"{speaker}.dtfp"), profiles[speaker])
print(f"enrolled {len(profiles)} voices -> demos/out/*.dtfp")

# decode held-out speech through the real wire path
for speaker, wav in hold_set:
    stream = codec.encode_to_stream(AudioBuffer(wav), profile=profiles[speaker])
    decoded = codec.decode_stream(stream)
    m = metrics.objective_metrics(wav[: len(decoded.samples)], decoded.samples)
    print(f"  {speaker}: {len(stream)} bytes, "
          f"LSD {m['log_spectral_distance']:.2f} dB, SNR {m['snr_db']:.1f} dB")

# keep one encoded stream around for the conversion demo
speaker, wav = hold_set[0]
stream = codec.encode_to_stream(AudioBuffer(wav), profile=profiles[speaker])
with open(os.path.join(OUT, "clip.dtfc"), "wb") as f:
    f.write(stream)
dsp.write_wav(os.path.join(OUT, "clip_ref.wav"), AudioBuffer(wav))
print(f"stream from voice {speaker} -> demos/out/clip.dtfc")
