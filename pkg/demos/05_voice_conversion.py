"""
Voice conversion in the compressed domain
=========================================

A stream carries content indices and a speaker block. Conversion swaps
the speaker conditioning while reusing the content indices untouched; no
re-encoding, no access to the source audio. Run the training demo first
(04_train_codec.py); this picks up its artifacts from demos/out/.
"""

import os

import numpy as np

from disencodec import dsp, metrics
from disencodec.model import SpeechCodec
from disencodec.profiles import load_profile

OUT = os.path.join(os.path.dirname(__file__), "out")
if not os.path.exists(os.path.join(OUT, "model.dtm")):
    raise SystemExit("run 04_train_codec.py first; demos/out/ is empty")

codec, _ = SpeechCodec.load(os.path.join(OUT, "model.dtm"))
with open(os.path.join(OUT, "clip.dtfc"), "rb") as f:
    stream = f.read()
profiles = {name.split(".")[0]: load_profile(os.path.join(OUT, name))
            for name in sorted(os.listdir(OUT)) if name.endswith(".dtfp")}
print(f"model {codec.hash().hex()}, stream {len(stream)} bytes, "
      f"{len(profiles)} enrolled voices")

# the stream's own speaker block gives the plain decode
plain = codec.decode_stream(stream)
dsp.write_wav(os.path.join(OUT, "decoded.wav"), plain)

# converting to the source's own profile must reproduce it exactly:
# both paths read the same transport-precision values
parsed = codec.parse_stream(stream)
source = [s for s, p in profiles.items()
          if p.embedding_q.values.tobytes()
          == parsed.enrollment.embedding_q.values.tobytes()][0]
identity = codec.convert(stream, profiles[source])
print(f"convert to source voice {source}: bit-identical to decode ->",
      np.array_equal(identity.samples, plain.samples))

# converting to the other voices changes the audio, not the stream
indices_before = parsed.frame_indices.copy()
for name, profile in profiles.items():
    if name == source:
        continue
    other = codec.convert(stream, profile)
    dsp.write_wav(os.path.join(OUT, f"as_{name}.wav"), other)
    m = metrics.objective_metrics(plain.samples, other.samples)
    print(f"convert to {name}: differs from decode by "
          f"{m['log_spectral_distance']:.2f} dB LSD -> demos/out/as_{name}.wav")
assert np.array_equal(codec.parse_stream(stream).frame_indices, indices_before)
print("content indices in the stream: untouched")
