"""Loss assembly, the desk-scale training loop, rate measurement, metrics
export. Everything is driven by one seed: parameter init, clip sampling,
crop offsets, and gumbel noise all come from generators derived from it.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from . import bitstream, dsp
from . import tensor as T
from .dsp import AudioBuffer, Spectrogram
from .model import SpeechCodec
from .optim import Adam
from .quantizer import (LATENT_RATE, RateReport, entropy_estimate,
                        gumbel_noise, rate_loss, temperature_at, vq_forward)
from .tensor import Tensor

_MAG_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    recon_spectral: float
    recon_magnitude: float
    rate_penalty: float
    weight_spectral: float = 1.0
    weight_magnitude: float = 1.0
    weight_rate: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.total):
            raise ValueError("non-finite loss")

    @property
    def total(self) -> float:
        return (self.weight_spectral * self.recon_spectral
                + self.weight_magnitude * self.recon_magnitude
                + self.weight_rate * self.rate_penalty)

    def as_dict(self) -> dict:
        return {"recon_spectral": self.recon_spectral,
                "recon_magnitude": self.recon_magnitude,
                "rate_penalty": self.rate_penalty,
                "weight_rate": self.weight_rate,
                "total": self.total}


@dataclass
class TrainConfig:
    target_bps: int = 1000
    steps: int = 200
    batch: int = 4
    lr: float = 4e-4
    seed: int = 0
    lambda_rate: float = 0.01
    warmup_frac: float = 0.1  # rate weight ramps in over this share of steps
    tau_start: float = 2.0
    tau_end: float = 0.5
    anneal_frac: float = 0.8
    noise_frac: float = 0.8  # gumbel amplitude ramps 1 -> 0 over this span
    crop_s: float = 3.0

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be positive")
        if self.lr <= 0 or self.target_bps <= 0 or self.crop_s <= 0:
            raise ValueError("lr, target_bps and crop_s must be positive")
        if not 0.0 <= self.noise_frac <= 1.0:
            raise ValueError("noise_frac must be in [0, 1]")


# -- reconstruction loss -------------------------------------------------------


def _np_magnitude(stack: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(stack[..., 0] ** 2 + stack[..., 1] ** 2,
                              _MAG_FLOOR))


def _magnitude(stack: Tensor) -> Tensor:
    re, im = stack[:, :, 0], stack[:, :, 1]
    sq = T.add(T.mul(re, re), T.mul(im, im))
    return T.tsqrt(T.clip_min(sq, _MAG_FLOOR))


def recon_terms(pred_comp: Tensor, ref_comp: np.ndarray):
    """Spectral and magnitude L2 terms in the compressed domain.

    Both are per-bin means (T*F bins), so values are comparable across
    clip lengths.
    """
    if pred_comp.data.shape != ref_comp.shape:
        raise ValueError("shape mismatch")
    t, f = ref_comp.shape[:2]
    diff = T.add(pred_comp, T.constant(-ref_comp))
    spectral = T.mul(T.tsum(T.mul(diff, diff)), 1.0 / (t * f))
    mdiff = T.add(_magnitude(pred_comp), T.constant(-_np_magnitude(ref_comp)))
    magnitude = T.mul(T.tsum(T.mul(mdiff, mdiff)), 1.0 / (t * f))
    return spectral, magnitude


def reconstruction_loss(pred: Spectrogram, ref: Spectrogram) -> float:
    """Mean of the two compressed-domain L2 terms on raw spectrograms."""
    if pred.data.shape != ref.data.shape:
        raise ValueError("shape mismatch")
    a = dsp.power_compress(pred.data)
    b = dsp.power_compress(ref.data)
    t, f = a.shape[:2]
    spectral = float(np.sum((a - b) ** 2)) / (t * f)
    magnitude = float(np.sum((_np_magnitude(a) - _np_magnitude(b)) ** 2)) / (t * f)
    return 0.5 * (spectral + magnitude)


# -- dataset -------------------------------------------------------------------


def load_dataset(root, min_s=3.0) -> list:
    """Folder of speaker-ID subfolders of 16 kHz mono WAVs ->
    [(speaker, samples)], sorted for determinism; clips shorter than min_s
    are skipped."""
    clips = []
    for speaker in sorted(os.listdir(root)):
        folder = os.path.join(str(root), speaker)
        if not os.path.isdir(folder):
            continue
        for name in sorted(os.listdir(folder)):
            if not name.lower().endswith(".wav"):
                continue
            audio = dsp.read_wav(os.path.join(folder, name))
            if audio.duration_s >= min_s:
                clips.append((speaker, audio.samples))
    if not clips:
        raise ValueError("empty dataset")
    return clips


# -- training ------------------------------------------------------------------


def _clip_terms(codec: SpeechCodec, comp: np.ndarray, rng, noise_amp=1.0):
    """One clip's traced forward pass; returns loss terms and assignments.

    noise_amp scales the gumbel samples. Annealing it to zero makes the
    entropy estimate converge to the noiseless selection statistics, which
    are what the deployed encoder produces; with full-amplitude noise the
    estimate stays inflated above the rate a real stream would measure.
    """
    cfg = codec.config
    x = T.constant(comp)
    feats = codec.content_trunk(x)
    n_lat = feats.data.shape[0]
    noise_c = [noise_amp * gumbel_noise(rng, (n_lat, cfg.content_k))
               for _ in range(cfg.content_groups)]
    sa_c, qc = vq_forward(feats, codec.content_vq, noise=noise_c)

    trunk_s = codec.speaker_trunk(x)
    sa_s = None
    if cfg.mode == "local":
        rows = codec.speaker_local_rows(trunk_s)
        noise_s = [noise_amp * gumbel_noise(rng, (rows.data.shape[0], cfg.speaker_k))
                   for _ in range(cfg.speaker_groups)]
        sa_s, qrows = vq_forward(rows, codec.speaker_vq, noise=noise_s)
        speaker = codec.speaker_frame_matrix(qrows, n_lat)
    else:
        speaker = codec.speaker_global_from_trunk(trunk_s)

    collect = [] if cfg.mode == "global_in" else None
    pred = codec.decode_trunk(qc, speaker, collect=collect)
    spectral, magnitude = recon_terms(pred[: comp.shape[0]], comp)
    return spectral, magnitude, sa_c, sa_s


def rate_report(codec: SpeechCodec, sas_content, sas_speaker,
                target_bps) -> RateReport:
    """Entropy-based bits per second from soft assignments."""
    h_c = entropy_estimate(sas_content)
    bps_c = T.mul(h_c, LATENT_RATE)
    h_s = bps_s = None
    if sas_speaker:
        h_s = entropy_estimate(sas_speaker)
        bps_s = T.mul(h_s, LATENT_RATE / codec.config.window_frames)
    return RateReport(h_s, h_c, bps_s, bps_c, target_bps)


def train(codec: SpeechCodec, config: TrainConfig, clips: list,
          on_step=None) -> list:
    """Optimize the codec in place; returns the per-step log records."""
    if not clips:
        raise ValueError("empty dataset")
    params = codec.params
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    crop_n = int(config.crop_s * dsp.SAMPLE_RATE)
    warmup = max(1, int(round(config.warmup_frac * config.steps)))
    records = []

    for step in range(config.steps):
        tau = temperature_at(step, config.steps, config.tau_start,
                             config.tau_end, config.anneal_frac)
        codec.content_vq.temperature = tau
        if codec.speaker_vq is not None:
            codec.speaker_vq.temperature = tau
        lam = config.lambda_rate * min(1.0, step / warmup)
        if config.noise_frac <= 0.0:
            noise_amp = 0.0
        else:
            noise_amp = max(0.0, 1.0 - step / max(1, round(
                config.noise_frac * config.steps)))

        spectrals, magnitudes, sas_c, sas_s = [], [], [], []
        for _ in range(config.batch):
            _, samples = clips[int(rng.integers(len(clips)))]
            if len(samples) < crop_n:
                raise ValueError("clip shorter than the training crop")
            start = int(rng.integers(len(samples) - crop_n + 1))
            spec = dsp.stft(AudioBuffer(samples[start : start + crop_n]))
            comp = codec.featurize(spec)
            spectral, magnitude, sa_c, sa_s = _clip_terms(
                codec, comp, rng, noise_amp=noise_amp)
            spectrals.append(spectral)
            magnitudes.append(magnitude)
            sas_c.append(sa_c)
            if sa_s is not None:
                sas_s.append(sa_s)

        scale = 1.0 / config.batch
        recon_s = T.mul(_tsum_list(spectrals), scale)
        recon_m = T.mul(_tsum_list(magnitudes), scale)
        report = rate_report(codec, sas_c, sas_s, config.target_bps)
        penalty = rate_loss(report)
        total = T.add(T.add(recon_s, recon_m), T.mul(penalty, lam))

        params.zero_grad()
        total.backward()
        opt.step()

        breakdown = LossBreakdown(float(recon_s.data), float(recon_m.data),
                                  float(penalty.data), weight_rate=lam)
        record = {"step": step, **breakdown.as_dict(),
                  "entropy_bps_content": float(report.bps_c.data),
                  "entropy_bps_speaker":
                      float(report.bps_s.data) if report.bps_s is not None else 0.0,
                  "tau": tau}
        records.append(record)
        if on_step is not None:
            on_step(record)

    collect_huffman_counts(codec, clips)
    return records


def _tsum_list(items):
    out = items[0]
    for item in items[1:]:
        out = T.add(out, item)
    return out


def collect_huffman_counts(codec: SpeechCodec, clips: list):
    """Refill codeword usage counts from hard encodings of the whole set."""
    codec.content_vq.reset_counts()
    if codec.speaker_vq is not None:
        codec.speaker_vq.reset_counts()
    with T.no_grad():
        for _, samples in clips:
            spec = dsp.stft(AudioBuffer(samples))
            x = T.constant(codec.featurize(spec))
            feats = codec.content_trunk(x)
            sa, _ = vq_forward(feats, codec.content_vq)
            codec.content_vq.accumulate_counts(sa.hard_index)
            if codec.speaker_vq is not None:
                rows = codec.speaker_local_rows(codec.speaker_trunk(x))
                if rows.data.shape[0]:
                    sa_s, _ = vq_forward(rows, codec.speaker_vq)
                    codec.speaker_vq.accumulate_counts(sa_s.hard_index)


# -- measurement ---------------------------------------------------------------


@dataclass
class MeasuredRate:
    entropy_bps_content: float
    entropy_bps_speaker: float
    actual_bps_content: float
    actual_bps_total: float
    target_bps: int


def _histogram_bits(counts_list) -> float:
    """Empirical entropy of hard index usage, in bits per vector."""
    bits = 0.0
    for counts in counts_list:
        total = counts.sum()
        if total == 0:
            continue
        p = counts[counts > 0] / total
        bits += float(-(p * np.log2(p)).sum())
    return bits


def measure_bitrate(codec: SpeechCodec, clips: list,
                    profile=None) -> tuple[RateReport, MeasuredRate]:
    """Entropy-estimate bps versus actual bps of real encoded streams.

    Global modes need an enrollment profile (one is made from the first
    clip when none is given).
    """
    cfg = codec.config
    if cfg.mode != "local" and profile is None:
        profile = codec.enroll(AudioBuffer(clips[0][1]))

    c_counts = [np.zeros(cfg.content_k) for _ in range(cfg.content_groups)]
    s_counts = [np.zeros(cfg.speaker_k) for _ in range(cfg.speaker_groups)]
    total_bits = content_bits = 0
    duration = 0.0
    for _, samples in clips:
        audio = AudioBuffer(samples)
        stream = codec.encode_to_stream(audio, profile=profile)
        parsed = codec.parse_stream(stream)
        acct = bitstream.account(parsed)
        total_bits += acct.total_bits
        content_bits += acct.content_bits
        duration += acct.duration_s
        for g in range(cfg.content_groups):
            c_counts[g] += np.bincount(parsed.frame_indices[:, g],
                                       minlength=cfg.content_k)
        for packet in parsed.speaker_packets:
            for g in range(cfg.speaker_groups):
                s_counts[g][packet.indices[g]] += 1

    h_c = _histogram_bits(c_counts)
    h_s = _histogram_bits(s_counts)
    bps_c = h_c * LATENT_RATE
    bps_s = h_s * LATENT_RATE / cfg.window_frames if cfg.mode == "local" else None
    report = RateReport(h_s if cfg.mode == "local" else None, h_c,
                        bps_s, bps_c, cfg.target_bps)
    measured = MeasuredRate(bps_c, bps_s or 0.0,
                            content_bits / duration, total_bits / duration,
                            cfg.target_bps)
    return report, measured


def export_embeddings(codec: SpeechCodec, clips: list, path):
    """CSV rows label,source,v0..vD for speaker embeddings, content latents,
    and their quantized forms."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        with T.no_grad():
            for speaker, samples in clips:
                spec = dsp.stft(AudioBuffer(samples))
                x = T.constant(codec.featurize(spec))
                if codec.config.mode == "local":
                    emb = codec.speaker_local_rows(codec.speaker_trunk(x)).data
                else:
                    emb = codec.speaker_global_from_trunk(
                        codec.speaker_trunk(x)).data
                feats = codec.content_trunk(x)
                _, q = vq_forward(feats, codec.content_vq)
                for label, rows in (("speaker", emb), ("content", feats.data),
                                    ("content_q", q.data)):
                    for row in rows:
                        # repr of a python float round-trips float64 exactly
                        writer.writerow([speaker, label,
                                         *(repr(v) for v in row.tolist())])


# -- flat key=value config files -----------------------------------------------


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


_TRAIN_KEYS = {"target_bps": int, "steps": int, "batch": int, "lr": float,
               "seed": int, "lambda_rate": float, "warmup_frac": float,
               "tau_start": float, "tau_end": float, "anneal_frac": float,
               "noise_frac": float, "crop_s": float}
_CODEC_KEYS = {"mode": str, "target_bps": int, "d_c": int, "d_s": int,
               "enc_tcm_blocks": int, "dec_tcm_blocks": int,
               "content_groups": int, "content_k": int, "speaker_groups": int,
               "speaker_k": int, "window_frames": int, "in_eps": float,
               "min_enroll_s": float}


def configs_from_dict(raw: dict):
    """Split a flat key=value dict into (CodecConfig, TrainConfig)."""
    from .model import CodecConfig

    codec_kw, train_kw = {}, {}
    for key, value in raw.items():
        if key == "channels":
            codec_kw[key] = tuple(int(v) for v in value.split(","))
        elif key in _CODEC_KEYS:
            codec_kw[key] = _CODEC_KEYS[key](value)
            if key in _TRAIN_KEYS:
                train_kw[key] = _TRAIN_KEYS[key](value)
        elif key in _TRAIN_KEYS:
            train_kw[key] = _TRAIN_KEYS[key](value)
        else:
            raise ValueError(f"unknown config key: {key}")
    return CodecConfig(**codec_kw), TrainConfig(**train_kw)
