"""The codec network.

Two causal encoder branches read the power-law-compressed complex spectrum:
the content branch yields one 64-d latent per 4 input frames (25 Hz) which is
group-VQ-coded, and the speaker branch pools its trunk output into a single
utterance embedding (global modes) or one embedding per L latent frames
(local mode, VQ-coded and transmitted periodically). The decoder mirrors the
content encoder and is conditioned on the speaker at four sites by
scale-and-bias modulation: out = gamma * content + beta, with gamma and beta
linearly projected from the decoded speaker embedding.

Modes:
    global     enrollment sends the embedding once; no normalization layers
    global_in  adds instance norm (after each encoder conv, before each
               decoder modulation site); enrollment freezes the statistics
               and the decoder statistics travel in the bitstream
    local      no enrollment; embeddings are pooled every L latent frames,
               and the row pooled from window j conditions window j+1
               (the first window uses a learned default row)

Everything runs on the autodiff tensors; inference entry points wrap
themselves in no_grad so nothing is recorded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bitstream, dsp, huffman, modelio
from . import tensor as T
from .dsp import AudioBuffer, Spectrogram
from .layers import (LEAKY_SLOPE, GRU, CausalConv2d, InstanceNorm, Linear,
                     ParamTable, StreamingConv2d, StreamingGRU, StreamingTCM,
                     TCMBlock, zero_stuff)
from .profiles import MODES, EnrollmentProfile, QuantizedVector
from .quantizer import GroupCodebook, vq_forward
from .tensor import Tensor

TEMPORAL_DOWN = 4  # product of encoder temporal strides (1, 2, 2)


def latent_frames(t: int) -> int:
    return -(-t // TEMPORAL_DOWN)


def _f_down(f: int) -> int:
    return (f - 1) // 2 + 1


@dataclass
class CodecConfig:
    mode: str = "global"
    target_bps: int = 1000
    channels: tuple = (16, 32, 64)
    d_c: int = 64
    d_s: int = 64
    enc_tcm_blocks: int = 2
    dec_tcm_blocks: int = 4
    content_groups: int = 2
    content_k: int = 1024
    speaker_groups: int = 2
    speaker_k: int = 256
    window_frames: int = 25  # L: local-mode pooling span, latent frames
    in_eps: float = 1e-5
    min_enroll_s: float = 2.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode: {self.mode}")
        if len(self.channels) != 3:
            raise ValueError("three encoder conv layers expected")
        if self.d_c % self.content_groups or self.d_s % self.speaker_groups:
            raise ValueError("embedding width must divide into VQ groups")
        if self.window_frames < 1:
            raise ValueError("window_frames must be >= 1")


_CONFIG_INTS = ("target_bps", "d_c", "d_s", "enc_tcm_blocks", "dec_tcm_blocks",
                "content_groups", "content_k", "speaker_groups", "speaker_k",
                "window_frames")


def config_entries(cfg: CodecConfig) -> dict:
    out = {"config.mode": np.array(float(MODES.index(cfg.mode))),
           "config.channels": np.array(cfg.channels, dtype=np.float64),
           "config.in_eps": np.array(cfg.in_eps),
           "config.min_enroll_s": np.array(cfg.min_enroll_s)}
    for name in _CONFIG_INTS:
        out[f"config.{name}"] = np.array(float(getattr(cfg, name)))
    return out


def config_from_entries(entries: dict) -> CodecConfig:
    def scalar(name):
        if f"config.{name}" not in entries:
            raise modelio.ModelFormatError(f"model file is missing config.{name}")
        return float(entries[f"config.{name}"])

    kwargs = {name: int(scalar(name)) for name in _CONFIG_INTS}
    return CodecConfig(mode=MODES[int(scalar("mode"))],
                       channels=tuple(entries["config.channels"].astype(int)),
                       in_eps=scalar("in_eps"),
                       min_enroll_s=scalar("min_enroll_s"),
                       **kwargs)


@dataclass
class ContentFeatures:
    features: Tensor  # (T', D_c)
    quantized: bool = False

    @property
    def n_frames(self) -> int:
        return self.features.data.shape[0]


@dataclass
class SpeakerEmbedding:
    mode: str  # "global" (1 row) or "local" (one row per complete window)
    values: Tensor

    @property
    def n_rows(self) -> int:
        return self.values.data.shape[0]


class SpeechCodec:
    def __init__(self, config: CodecConfig, params: ParamTable | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.params = params if params is not None else ParamTable()
        p, cfg = self.params, config
        c1, c2, c3 = cfg.channels
        self.f_latent = _f_down(_f_down(_f_down(dsp.N_BINS)))
        self.flat_dim = self.f_latent * c3
        self.inorm = InstanceNorm(cfg.in_eps)

        def convs(prefix, d_out):
            trunk = [
                CausalConv2d(p, f"{prefix}.conv1", 2, c1, 2, 3, 1, 2, rng=rng),
                CausalConv2d(p, f"{prefix}.conv2", c1, c2, 2, 3, 2, 2, rng=rng),
                CausalConv2d(p, f"{prefix}.conv3", c2, c3, 2, 3, 2, 2, rng=rng),
            ]
            proj = Linear(p, f"{prefix}.proj", self.flat_dim, d_out, rng=rng)
            tcms = [TCMBlock(p, f"{prefix}.tcm{i}", d_out, rng=rng)
                    for i in range(cfg.enc_tcm_blocks)]
            gru = GRU(p, f"{prefix}.gru", d_out, d_out, rng=rng)
            return trunk, proj, tcms, gru

        self.enc_convs, self.enc_proj, self.enc_tcms, self.enc_gru = convs("enc", cfg.d_c)
        self.spk_convs, self.spk_proj, self.spk_tcms, self.spk_gru = convs("spk", cfg.d_s)
        self.spk_fc1 = Linear(p, "spk.fc1", cfg.d_s, cfg.d_s, rng=rng)
        self.spk_fc2 = Linear(p, "spk.fc2", cfg.d_s, cfg.d_s, rng=rng)

        self.content_vq = GroupCodebook(p, "vq.content", cfg.d_c,
                                        cfg.content_groups, cfg.content_k, rng=rng)
        self.speaker_vq = None
        if cfg.mode == "local":
            self.spk_default = p.ensure("spk.default",
                                        lambda: np.zeros((1, cfg.d_s)))
            self.speaker_vq = GroupCodebook(p, "vq.speaker", cfg.d_s,
                                            cfg.speaker_groups, cfg.speaker_k, rng=rng)

        self.dec_gru = GRU(p, "dec.gru", cfg.d_c, cfg.d_c, rng=rng)
        self.dec_gamma = [Linear(p, f"dec.site{i}.gamma", cfg.d_s, cfg.d_c, rng=rng)
                          for i in range(cfg.dec_tcm_blocks)]
        self.dec_beta = [Linear(p, f"dec.site{i}.beta", cfg.d_s, cfg.d_c, rng=rng)
                         for i in range(cfg.dec_tcm_blocks)]
        self.dec_tcms = [TCMBlock(p, f"dec.tcm{i}", cfg.d_c, rng=rng)
                         for i in range(cfg.dec_tcm_blocks)]
        self.dec_proj = Linear(p, "dec.proj", cfg.d_c, self.flat_dim, rng=rng)
        self.dec_tconv3 = CausalConv2d(p, "dec.tconv3", c3, c2, 2, 3, 1, 1, rng=rng)
        self.dec_tconv2 = CausalConv2d(p, "dec.tconv2", c2, c1, 2, 3, 1, 1, rng=rng)
        self.dec_tconv1 = CausalConv2d(p, "dec.tconv1", c1, 2, 2, 3, 1, 1, rng=rng)

        # index usage counts live in the model file so huffman tables travel
        for g in range(cfg.content_groups):
            counts = p.ensure(f"huffman.content.g{g}.counts",
                              lambda: np.zeros(cfg.content_k), trainable=False)
            self.content_vq.counts[g] = counts.data.view()
        if self.speaker_vq is not None:
            for g in range(cfg.speaker_groups):
                counts = p.ensure(f"huffman.speaker.g{g}.counts",
                                  lambda: np.zeros(cfg.speaker_k), trainable=False)
                self.speaker_vq.counts[g] = counts.data.view()

    # -- persistence ----------------------------------------------------------

    def to_entries(self) -> dict:
        out = config_entries(self.config)
        for name, tensor in self.params.items():
            out[name] = tensor.data
        return out

    def hash(self) -> bytes:
        """Stream-compatibility tag; optimizer state never contributes."""
        return modelio.model_hash(modelio.serialize_entries(self.to_entries()))

    def save(self, path, opt_entries=None) -> bytes:
        return modelio.save_model(path, self.to_entries(), opt_entries)

    @classmethod
    def from_entries(cls, entries: dict) -> "SpeechCodec":
        config = config_from_entries(entries)
        params = ParamTable()
        for name, arr in entries.items():
            if name.startswith("config."):
                continue
            trainable = not name.startswith("huffman.")
            params.add(name, np.array(arr), trainable=trainable)
        params.strict = True
        try:
            return cls(config, params)
        except KeyError as e:
            raise modelio.ModelFormatError(str(e)) from None

    @classmethod
    def load(cls, path) -> tuple["SpeechCodec", dict]:
        entries, opt, _ = modelio.load_model(path)
        return cls.from_entries(entries), opt

    # -- content branch -------------------------------------------------------

    def featurize(self, spec: Spectrogram) -> np.ndarray:
        return dsp.power_compress(spec.data)

    def content_trunk(self, x: Tensor, enc_stats=None, collect=None) -> Tensor:
        """Compressed spectrum (T, F, 2) -> content latents (T', D_c).

        enc_stats freezes the encoder normalization (global_in inference);
        collect gathers adaptive statistics per site (enrollment).
        """
        h = x
        for i, conv in enumerate(self.enc_convs):
            h = conv(h)
            if self.config.mode == "global_in":
                if enc_stats is not None:
                    h = self.inorm.frozen(h, *enc_stats[i])
                else:
                    h, mu, var = self.inorm.adaptive(h)
                    if collect is not None:
                        collect.append((mu, var))
            h = T.leaky_relu(h, LEAKY_SLOPE)
        h = T.reshape(h, (h.data.shape[0], self.flat_dim))
        h = self.enc_proj(h)
        for tcm in self.enc_tcms:
            h = tcm(h)
        return self.enc_gru(h)

    def encode_content(self, spec: Spectrogram,
                       profile: EnrollmentProfile | None = None) -> ContentFeatures:
        enc_stats = None
        if self.config.mode == "global_in" and profile is not None:
            enc_stats = profile.enc_stats()
        with T.no_grad():
            feats = self.content_trunk(T.constant(self.featurize(spec)),
                                       enc_stats=enc_stats)
        return ContentFeatures(feats)

    def quantize_content(self, content: ContentFeatures, noise=None, hard=True):
        sa, q = vq_forward(content.features, self.content_vq, noise=noise, hard=hard)
        return sa, ContentFeatures(q, quantized=hard)

    # -- speaker branch -------------------------------------------------------

    def speaker_trunk(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.spk_convs:
            h = T.leaky_relu(conv(h), LEAKY_SLOPE)
        h = T.reshape(h, (h.data.shape[0], self.flat_dim))
        h = self.spk_proj(h)
        for tcm in self.spk_tcms:
            h = tcm(h)
        return self.spk_gru(h)

    def _speaker_head(self, pooled: Tensor) -> Tensor:
        return self.spk_fc2(T.leaky_relu(self.spk_fc1(pooled), LEAKY_SLOPE))

    def speaker_global_from_trunk(self, trunk: Tensor) -> Tensor:
        return self._speaker_head(T.mean_rows(trunk))

    def speaker_local_rows(self, trunk: Tensor, window_frames=None) -> Tensor:
        """One pooled row per complete window of L latent frames."""
        span = window_frames or self.config.window_frames
        n_rows = trunk.data.shape[0] // span
        d = trunk.data.shape[1]
        windows = T.reshape(trunk[: n_rows * span], (n_rows, span, d))
        return self._speaker_head(T.tmean(windows, axis=1))

    def encode_speaker_global(self, spec: Spectrogram) -> SpeakerEmbedding:
        min_frames = dsp.frame_count(int(self.config.min_enroll_s * dsp.SAMPLE_RATE))
        if spec.n_frames < min_frames:
            raise ValueError("enrollment too short")
        with T.no_grad():
            trunk = self.speaker_trunk(T.constant(self.featurize(spec)))
            emb = self.speaker_global_from_trunk(trunk)
        return SpeakerEmbedding("global", emb)

    def encode_speaker_local(self, spec: Spectrogram,
                             window_frames=None) -> SpeakerEmbedding:
        with T.no_grad():
            trunk = self.speaker_trunk(T.constant(self.featurize(spec)))
            rows = self.speaker_local_rows(trunk, window_frames)
        return SpeakerEmbedding("local", rows)

    def quantize_speaker(self, speaker: SpeakerEmbedding, noise=None, hard=True):
        if self.speaker_vq is None:
            raise ValueError("speaker quantizer exists only in local mode")
        sa, q = vq_forward(speaker.values, self.speaker_vq, noise=noise, hard=hard)
        return sa, SpeakerEmbedding("local", q)

    def speaker_frame_matrix(self, rows: Tensor, n_latent: int) -> Tensor:
        """Spread local rows over latent frames with the one-window delay.

        Frames of window 0 read the learned default row; frames of window
        w >= 1 read row w-1, and the last row persists past the final
        complete window.
        """
        span = self.config.window_frames
        ext = T.concat([self.spk_default, rows], axis=0)
        idx = np.minimum(np.arange(n_latent) // span, rows.data.shape[0])
        return T.take(ext, idx)

    # -- decoder --------------------------------------------------------------

    def crm(self, content: Tensor, speaker: Tensor, site: int) -> Tensor:
        """Scale-bias modulation: gamma * content + beta, broadcast over time
        when the speaker matrix has a single row."""
        rows = speaker.data.shape[0]
        if rows not in (1, content.data.shape[0]):
            raise ValueError("speaker rows must be 1 or one per latent frame")
        gamma = self.dec_gamma[site](speaker)
        beta = self.dec_beta[site](speaker)
        return T.add(T.mul(gamma, content), beta)

    def decode_trunk(self, content: Tensor, speaker: Tensor,
                     dec_stats=None, collect=None) -> Tensor:
        """Latents (T', D_c) + speaker (1 or T', D_s) -> compressed-domain
        spectrum (4 T', F, 2)."""
        cfg = self.config
        if cfg.mode == "global_in" and dec_stats is None and collect is None:
            raise ValueError("decoder normalization statistics required")
        h = self.dec_gru(content)
        for i in range(cfg.dec_tcm_blocks):
            if cfg.mode == "global_in":
                if dec_stats is not None:
                    h = self.inorm.frozen(h, *dec_stats[i])
                else:
                    h, mu, var = self.inorm.adaptive(h)
                    collect.append((mu, var))
            h = self.crm(h, speaker, i)
            h = self.dec_tcms[i](h)
        h = self.dec_proj(h)
        c3 = cfg.channels[2]
        h = T.reshape(h, (h.data.shape[0], self.f_latent, c3))
        h = T.leaky_relu(self.dec_tconv3(zero_stuff(h, 2, 2)), LEAKY_SLOPE)
        h = T.leaky_relu(self.dec_tconv2(zero_stuff(h, 2, 2)), LEAKY_SLOPE)
        return self.dec_tconv1(zero_stuff(h, 1, 2))

    def decode(self, content: ContentFeatures, speaker: SpeakerEmbedding,
               in_stats=None) -> Spectrogram:
        """Reconstruct the raw-domain spectrogram (4 T' frames)."""
        if speaker.mode == "local":
            speaker_mat = self.speaker_frame_matrix(speaker.values,
                                                    content.n_frames)
        else:
            speaker_mat = speaker.values
        with T.no_grad():
            comp = self.decode_trunk(content.features, speaker_mat,
                                     dec_stats=in_stats)
        return Spectrogram(dsp.power_expand(comp.data))

    # -- enrollment and streams ----------------------------------------------

    def enroll(self, audio: AudioBuffer) -> EnrollmentProfile:
        cfg = self.config
        if cfg.mode == "local":
            raise ValueError("enrollment applies to global modes only")
        if len(audio.samples) < int(cfg.min_enroll_s * dsp.SAMPLE_RATE):
            raise ValueError("enrollment too short")
        spec = dsp.stft(audio)
        with T.no_grad():
            comp = T.constant(self.featurize(spec))
            emb_raw = self.speaker_global_from_trunk(self.speaker_trunk(comp))
            emb_q = QuantizedVector.quantize(emb_raw.data[0])

            enc_raw, enc_q, dec_raw, dec_q = [], [], [], []
            if cfg.mode == "global_in":
                # the statistics the decoder will see at stream time must come
                # from the same transport-precision inputs, hence the frozen
                # re-encode and the quantized embedding below
                self.content_trunk(comp, collect=enc_raw)
                enc_q = [(QuantizedVector.quantize(m), QuantizedVector.quantize(v))
                         for m, v in enc_raw]
                enc_stats = [(m.dequantize(), v.dequantize()) for m, v in enc_q]
                feats = self.content_trunk(comp, enc_stats=enc_stats)
                _, qfeats = vq_forward(feats, self.content_vq)
                self.decode_trunk(qfeats, T.constant(emb_q.dequantize()[None, :]),
                                  collect=dec_raw)
                dec_q = [(QuantizedVector.quantize(m), QuantizedVector.quantize(v))
                         for m, v in dec_raw]
        return EnrollmentProfile(
            mode=cfg.mode, duration_s=audio.duration_s, model_hash=self.hash(),
            embedding_q=emb_q, enc_stats_q=enc_q, dec_stats_q=dec_q,
            embedding_raw=emb_raw.data.copy(), enc_stats_raw=enc_raw,
            dec_stats_raw=dec_raw)

    def content_tables(self):
        """Huffman tables from stored counts; uniform before training."""
        tables = []
        for counts in self.content_vq.counts:
            c = counts.astype(np.int64)
            tables.append(huffman.huffman_build(c if c.any() else np.ones_like(c)))
        return tables

    def encode_to_stream(self, audio: AudioBuffer,
                         profile: EnrollmentProfile | None = None) -> bytes:
        cfg = self.config
        spec = dsp.stft(audio)
        if cfg.mode == "local":
            content = self.encode_content(spec)
            sa_c, _ = self.quantize_content(content)
            speaker = self.encode_speaker_local(spec)
            sa_s, _ = self.quantize_speaker(speaker)
            # the last pooled row is dropped when no later frames consume it
            n_send = bitstream.expected_packet_count(sa_c.hard_index.shape[0],
                                                     cfg.window_frames)
            packets = [bitstream.SpeakerPacket(j, sa_s.hard_index[j])
                       for j in range(n_send)]
            header = self._header()
            return bitstream.write_stream(header, None, sa_c.hard_index,
                                          packets, self.content_tables(),
                                          spec_frames=spec.n_frames)
        if profile is None:
            raise ValueError("global modes require an enrollment profile")
        if profile.model_hash != self.hash():
            raise bitstream.HashMismatch("profile was produced by a different model")
        content = self.encode_content(spec, profile=profile)
        sa_c, _ = self.quantize_content(content)
        block = bitstream.EnrollmentBlock(
            profile.embedding_q,
            profile.dec_stats_q if cfg.mode == "global_in" else [])
        return bitstream.write_stream(self._header(), block, sa_c.hard_index,
                                      [], self.content_tables(),
                                      spec_frames=spec.n_frames)

    def _header(self) -> "bitstream.StreamHeader":
        return bitstream.StreamHeader(
            mode=self.config.mode, sample_rate=dsp.SAMPLE_RATE,
            target_bps=self.config.target_bps, model_hash=self.hash(),
            window_frames=self.config.window_frames
            if self.config.mode == "local" else 0)

    def parse_stream(self, data: bytes) -> "bitstream.ParsedStream":
        return bitstream.read_stream(data, self.content_tables(),
                                     expect_hash=self.hash(),
                                     speaker_groups=self.config.speaker_groups)

    def _speaker_from_stream(self, parsed) -> tuple[SpeakerEmbedding, list | None]:
        cfg = self.config
        if cfg.mode == "local":
            if parsed.speaker_packets:
                idx = np.stack([p.indices for p in parsed.speaker_packets])
                rows = T.constant(self.speaker_vq.rows(idx))
            else:
                rows = T.constant(np.zeros((0, cfg.d_s)))
            return SpeakerEmbedding("local", rows), None
        emb = T.constant(parsed.enrollment.embedding_q.dequantize()[None, :])
        stats = None
        if cfg.mode == "global_in":
            stats = [(m.dequantize(), v.dequantize())
                     for m, v in parsed.enrollment.dec_stats_q]
        return SpeakerEmbedding("global", emb), stats

    def decode_stream(self, data: bytes) -> AudioBuffer:
        parsed = self.parse_stream(data)
        content = ContentFeatures(
            T.constant(self.content_vq.rows(parsed.frame_indices)), quantized=True)
        speaker, stats = self._speaker_from_stream(parsed)
        spec = self.decode(content, speaker, in_stats=stats)
        # drop the padding frames past the encoder's input length
        return dsp.istft(Spectrogram(spec.data[: parsed.spec_frames]))

    def convert(self, data: bytes, target: EnrollmentProfile) -> AudioBuffer:
        """Re-voice a stream: decode its content indices under the target
        speaker's embedding (and normalization statistics), leaving the
        stream bytes untouched."""
        if self.config.mode == "local":
            raise ValueError("conversion requires a global-mode model")
        if target.model_hash != self.hash():
            raise bitstream.HashMismatch(
                "target profile was produced by a different model")
        parsed = self.parse_stream(data)
        content = ContentFeatures(
            T.constant(self.content_vq.rows(parsed.frame_indices)), quantized=True)
        speaker = SpeakerEmbedding("global", T.constant(target.embedding()))
        stats = target.dec_stats() if self.config.mode == "global_in" else None
        spec = self.decode(content, speaker, in_stats=stats)
        return dsp.istft(Spectrogram(spec.data[: parsed.spec_frames]))

    # -- streaming (frame-by-frame) content encoder ---------------------------

    def streaming_content_session(self, profile=None) -> "StreamingContentEncoder":
        return StreamingContentEncoder(self, profile)


class StreamingContentEncoder:
    """Push one spectral frame at a time; emits a latent every 4th frame.

    In global_in mode the session needs an enrollment profile for frozen
    encoder statistics (adaptive statistics would peek at future frames).
    """

    def __init__(self, codec: SpeechCodec, profile=None):
        cfg = codec.config
        if cfg.mode == "global_in":
            if profile is None:
                raise ValueError("streaming in this mode requires enrollment")
            self.enc_stats = profile.enc_stats()
        else:
            self.enc_stats = None
        self.codec = codec
        self.convs = [StreamingConv2d(c) for c in codec.enc_convs]
        self.tcms = [StreamingTCM(t) for t in codec.enc_tcms]
        self.gru = StreamingGRU(codec.enc_gru)
        self.eps = cfg.in_eps

    def push(self, frame: np.ndarray) -> np.ndarray | None:
        """frame: raw spectrogram row (F, 2); returns (D_c,) or None."""
        h = dsp.power_compress(frame)
        for i, conv in enumerate(self.convs):
            h = conv.push(h)
            if h is None:
                return None
            if self.enc_stats is not None:
                mean, var = self.enc_stats[i]
                h = (h - mean) / np.sqrt(np.asarray(var) + self.eps)
            h = np.where(h >= 0, h, LEAKY_SLOPE * h)
        flat = h.reshape(1, -1)
        proj = self.codec.enc_proj
        h = flat @ proj.w.data + proj.b.data
        for tcm in self.tcms:
            h = tcm.push(h[0])
        return self.gru.push(h[0])[0]
