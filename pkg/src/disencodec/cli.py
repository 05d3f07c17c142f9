"""Batch commands over the codec library.

Exit codes: 0 ok, 1 usage, 2 data or format error, 3 internal failure.
Every failure prints a one-line diagnostic to stderr. DISEN_LOG selects
the log level (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import bitstream, dsp, huffman, profiles, trainer
from . import tensor as T
from .dsp import AudioBuffer
from .model import CodecConfig, SpeechCodec
from .modelio import ModelFormatError
from .quantizer import vq_forward

log = logging.getLogger("disencodec")

_DATA_ERRORS = (ModelFormatError, bitstream.StreamError,
                profiles.ProfileError, huffman.TruncatedStream)


class UsageError(Exception):
    pass


class SelfTestFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # the contract reserves exit code 2 for data errors; argparse's
    # default usage exit would collide with it
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="disencodec",
                description="disentangled low-bitrate speech codec")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a codec on a folder of speakers")
    t.add_argument("--data", required=True, help="speaker-ID subfolders of 16 kHz WAVs")
    t.add_argument("--output", required=True, help="model file to write")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int)
    t.add_argument("--mode", choices=("global", "global_in", "local"))
    t.add_argument("--target-bps", type=int)
    t.add_argument("--log-file", help="per-step NDJSON records")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("enroll", help="build a speaker profile from clean audio")
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True, help="enrollment WAV")
    e.add_argument("--output", required=True, help="profile file to write")
    e.set_defaults(fn=cmd_enroll)

    c = sub.add_parser("encode", help="compress a WAV into a stream")
    c.add_argument("--model", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--mode", choices=("global", "global_in", "local"),
                   help="assert the model was trained in this mode")
    c.add_argument("--enroll-profile")
    c.add_argument("--report", help="write a JSON bit-accounting report here")
    c.set_defaults(fn=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct a WAV from a stream")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.set_defaults(fn=cmd_decode)

    v = sub.add_parser("convert", help="re-voice a stream with another speaker")
    v.add_argument("--model", required=True)
    v.add_argument("--input", required=True)
    v.add_argument("--target-profile", required=True)
    v.add_argument("--output", required=True)
    v.set_defaults(fn=cmd_convert)

    i = sub.add_parser("inspect", help="describe a model, stream, or profile")
    i.add_argument("--model")
    i.add_argument("--stream")
    i.add_argument("--profile")
    i.set_defaults(fn=cmd_inspect)

    x = sub.add_parser("export-embeddings",
                       help="dump speaker and content vectors to CSV")
    x.add_argument("--model", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--output", required=True)
    x.set_defaults(fn=cmd_export)

    s = sub.add_parser("selftest", help="run the built-in correctness suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_selftest)
    return p


def _load_codec(path) -> SpeechCodec:
    codec, _ = SpeechCodec.load(path)
    log.info("loaded model %s (%s)", codec.hash().hex(), codec.config.mode)
    return codec


def _load_profile_arg(path):
    return profiles.load_profile(path) if path else None


# -- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    raw = {}
    if args.config:
        with open(args.config) as f:
            raw = trainer.parse_config_text(f.read())
    for key, value in (("steps", args.steps), ("mode", args.mode),
                       ("target_bps", args.target_bps), ("seed", args.seed)):
        if value is not None:
            raw[key] = str(value)
    codec_cfg, train_cfg = trainer.configs_from_dict(raw)
    clips = trainer.load_dataset(args.data)
    codec = SpeechCodec(codec_cfg,
                        rng=np.random.default_rng(
                            np.random.SeedSequence([train_cfg.seed, 11])))

    sink = open(args.log_file, "w") if args.log_file else None
    try:
        def on_step(record):
            log.info("step %d total %.4f", record["step"], record["total"])
            if sink:
                sink.write(json.dumps(record) + "\n")

        records = trainer.train(codec, train_cfg, clips, on_step=on_step)
    finally:
        if sink:
            sink.close()
    digest = codec.save(args.output)
    last = records[-1]
    print(f"trained {train_cfg.steps} steps on {len(clips)} clips; "
          f"final loss {last['total']:.4f}, content {last['entropy_bps_content']:.1f} bps; "
          f"model {digest.hex()} -> {args.output}")
    return 0


def cmd_enroll(args) -> int:
    codec = _load_codec(args.model)
    audio = dsp.read_wav(args.input)
    profile = codec.enroll(audio)
    profiles.save_profile(args.output, profile)
    print(f"enrolled {audio.duration_s:.1f}s ({profile.mode}) -> {args.output}")
    return 0


def cmd_encode(args) -> int:
    codec = _load_codec(args.model)
    if args.mode and args.mode != codec.config.mode:
        raise UsageError(f"model was trained in mode {codec.config.mode}")
    if codec.config.mode != "local" and not args.enroll_profile:
        raise UsageError("this model needs --enroll-profile")
    audio = dsp.read_wav(args.input)
    profile = _load_profile_arg(args.enroll_profile)
    stream = codec.encode_to_stream(audio, profile=profile)
    with open(args.output, "wb") as f:
        f.write(stream)
    acct = bitstream.account(codec.parse_stream(stream))
    if args.report:
        with open(args.report, "w") as f:
            json.dump(acct.as_dict(), f, indent=2)
            f.write("\n")
    print(f"encoded {acct.duration_s:.2f}s at {acct.bps:.1f} bps "
          f"({len(stream)} bytes) -> {args.output}")
    return 0


def cmd_decode(args) -> int:
    codec = _load_codec(args.model)
    with open(args.input, "rb") as f:
        data = f.read()
    audio = codec.decode_stream(data)
    dsp.write_wav(args.output, audio)
    print(f"decoded {audio.duration_s:.2f}s -> {args.output}")
    return 0


def cmd_convert(args) -> int:
    codec = _load_codec(args.model)
    with open(args.input, "rb") as f:
        data = f.read()
    target = profiles.load_profile(args.target_profile)
    audio = codec.convert(data, target)
    dsp.write_wav(args.output, audio)
    print(f"converted {audio.duration_s:.2f}s -> {args.output}")
    return 0


def cmd_inspect(args) -> int:
    if not (args.model or args.stream or args.profile):
        raise UsageError("nothing to inspect; give --model, --stream or --profile")
    if args.stream and not args.model:
        raise UsageError("--stream needs --model to derive the code tables")
    out = {}
    codec = _load_codec(args.model) if args.model else None
    if codec:
        cfg = codec.config
        out["model"] = {
            "hash": codec.hash().hex(),
            "mode": cfg.mode,
            "target_bps": cfg.target_bps,
            "channels": list(cfg.channels),
            "content_dim": cfg.d_c,
            "speaker_dim": cfg.d_s,
            "content_codebooks": [cfg.content_groups, cfg.content_k],
            "speaker_codebooks": [cfg.speaker_groups, cfg.speaker_k],
            "window_frames": cfg.window_frames,
            "parameters": int(sum(t.data.size for _, t in codec.params.items())),
        }
    if args.stream:
        with open(args.stream, "rb") as f:
            parsed = codec.parse_stream(f.read())
        h = parsed.header
        out["stream"] = {
            "mode": h.mode,
            "sample_rate": h.sample_rate,
            "target_bps": h.target_bps,
            "model_hash": h.model_hash.hex(),
            "spec_frames": parsed.spec_frames,
            "latent_frames": parsed.frame_indices.shape[0],
            "speaker_packets": len(parsed.speaker_packets),
            "accounting": bitstream.account(parsed).as_dict(),
        }
    if args.profile:
        prof = profiles.load_profile(args.profile)
        out["profile"] = {
            "mode": prof.mode,
            "model_hash": prof.model_hash.hex(),
            "enroll_duration_s": prof.duration_s,
            "embedding_dim": int(prof.embedding_q.values.size),
            "encoder_stat_sites": len(prof.enc_stats_q),
            "decoder_stat_sites": len(prof.dec_stats_q),
        }
    print(json.dumps(out, indent=2))
    return 0


def cmd_export(args) -> int:
    codec = _load_codec(args.model)
    clips = trainer.load_dataset(args.data)
    trainer.export_embeddings(codec, clips, args.output)
    print(f"exported vectors for {len(clips)} clips -> {args.output}")
    return 0


# -- selftest ------------------------------------------------------------------


def _tiny_codec(seed=0) -> SpeechCodec:
    cfg = CodecConfig(channels=(2, 3, 4), d_c=8, d_s=8, content_k=4,
                      speaker_k=4, content_groups=2, speaker_groups=1)
    return SpeechCodec(cfg, rng=np.random.default_rng(seed))


def check_cola(rng) -> None:
    """Analysis-synthesis identity away from the edges."""
    x = rng.normal(size=dsp.SAMPLE_RATE)
    back = dsp.istft(dsp.stft(AudioBuffer(x))).samples
    n = min(len(back), len(x))
    err = np.max(np.abs(back[dsp.WINDOW : n - dsp.WINDOW]
                        - x[dsp.WINDOW : n - dsp.WINDOW]))
    if err > 1e-8:
        raise SelfTestFailure(f"reconstruction error {err:.2e}")


def check_huffman(rng) -> None:
    counts = rng.integers(0, 200, size=64)
    counts[rng.integers(64)] += 1  # never all zero
    table = huffman.huffman_build(counts)
    symbols = rng.integers(0, 64, size=400)
    bits = huffman.encode_bits(symbols, table)
    decoded, pos = huffman.decode_bits(bits, table, len(symbols))
    if pos != len(bits) or not np.array_equal(decoded, symbols):
        raise SelfTestFailure("round trip disagreed")
    again = huffman.parse_table(huffman.serialize_table(table))[0]
    if not np.array_equal(again.lengths, table.lengths):
        raise SelfTestFailure("table serialization disagreed")


def check_causality(rng, content_fn=None) -> None:
    """No latent may move when a later input frame is perturbed."""
    codec = _tiny_codec()
    if content_fn is None:
        def content_fn(comp):
            with T.no_grad():
                return codec.content_trunk(T.constant(comp)).data

    comp = rng.normal(size=(100, dsp.N_BINS, 2))
    base = content_fn(comp)
    poked = comp.copy()
    poked[60] += 1.0
    other = content_fn(poked)
    cut = 60 // 4
    if not np.array_equal(base[:cut], other[:cut]):
        raise SelfTestFailure("content encoder looked ahead")
    if np.array_equal(base[cut:], other[cut:]):
        raise SelfTestFailure("perturbation had no effect at all")

    # decoder side: a poked latent must not alter earlier output frames
    with T.no_grad():
        emb = T.constant(rng.normal(size=(1, codec.config.d_s)))
        lat = rng.normal(size=(25, codec.config.d_c))
        front = codec.decode_trunk(T.constant(lat), emb).data
        lat2 = lat.copy()
        lat2[10] += 1.0
        after = codec.decode_trunk(T.constant(lat2), emb).data
    if not np.array_equal(front[:40], after[:40]):
        raise SelfTestFailure("decoder looked ahead")


def check_gradients(rng) -> None:
    """Spot-check autodiff against central differences on a full forward."""
    codec = _tiny_codec()
    comp = rng.normal(size=(12, dsp.N_BINS, 2)) * 0.1
    w = rng.normal(size=(12, dsp.N_BINS, 2))

    def loss():
        x = T.constant(comp)
        feats = codec.content_trunk(x)
        _, q = vq_forward(feats, codec.content_vq, hard=False)
        emb = codec.speaker_global_from_trunk(codec.speaker_trunk(x))
        pred = codec.decode_trunk(q, emb)
        return T.tsum(T.mul(pred, T.constant(w)))

    for name in ("enc.conv1.w", "dec.tconv1.w", "vq.content.g0.codebook"):
        tensor = codec.params[name]
        codec.params.zero_grad()
        loss().backward()
        analytic = tensor.grad.copy().ravel()
        flat = tensor.data.ravel()
        for i in rng.choice(flat.size, size=3, replace=False):
            keep = flat[i]
            flat[i] = keep + 1e-5
            up = float(loss().data)
            flat[i] = keep - 1e-5
            down = float(loss().data)
            flat[i] = keep
            fd = (up - down) / 2e-5
            rel = abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-6)
            if rel > 2e-4:
                raise SelfTestFailure(
                    f"{name}[{i}]: analytic {analytic[i]:.6g} vs numeric {fd:.6g}")


SELFTEST_CHECKS = (("cola", check_cola),
                   ("huffman", check_huffman),
                   ("causality", check_causality),
                   ("gradients", check_gradients))


def cmd_selftest(args) -> int:
    failures = 0
    for name, fn in SELFTEST_CHECKS:
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 5]))
        try:
            fn(rng)
        except SelfTestFailure as exc:
            print(f"FAIL {name}: {exc}")
            failures += 1
        else:
            print(f"PASS {name}")
    if failures:
        print(f"{failures} of {len(SELFTEST_CHECKS)} checks failed")
        return 3
    print("all checks passed")
    return 0


# -- entry point ---------------------------------------------------------------


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("DISEN_LOG", "error"),
                                         logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"disencodec: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"disencodec: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"disencodec: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last resort
        print(f"disencodec: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
