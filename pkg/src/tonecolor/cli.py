"""Command-line surface.

Exit codes: 0 success, 2 validation error (bad inputs, files, formats),
3 numeric failure (non-finite values), 1 failed verification checks.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import pathlib
import sys

import numpy as np

from . import audio
from .align import dtw_align, pair_cost
from .codec import encode
from .corpus import make_toy_corpus, read_corpus, write_corpus
from .errors import NumericError, ValidationError
from .flow import flow_forward
from .model import ModelConfig, init_model, load_model, save_model
from .pipeline import convert, rtf_report, tone_of, tone_of_many
from .text import SymbolTable, encode_text, tokenize_ipa, toy_symbol_table
from .tone import extract_tone
from .training import BATCH_SIZE, LEARNING_RATE, train_toy
from .verify import run_verify


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    """Resolved inputs of a conversion run."""
    config: ModelConfig
    model_path: pathlib.Path
    reference_paths: tuple[pathlib.Path, ...]
    out_path: pathlib.Path

    def __post_init__(self):
        if not self.model_path.is_file():
            raise ValidationError(f"model file not found: {self.model_path}")
        for p in self.reference_paths:
            if not p.is_file():
                raise ValidationError(f"reference file not found: {p}")


def _model_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        return ModelConfig.from_file(args.config)
    return ModelConfig()


def _read_wav_checked(path, cfg: ModelConfig, label: str) -> audio.AudioBuffer:
    p = pathlib.Path(path)
    if not p.is_file():
        raise ValidationError(f"{label} file not found: {p}")
    buf = audio.wav_read(p)
    if buf.sample_rate != cfg.dsp.sample_rate:
        raise ValidationError(
            f"sample-rate mismatch: {p} is {buf.sample_rate} Hz, the model "
            f"expects {cfg.dsp.sample_rate} Hz")
    return buf


def cmd_convert(args) -> int:
    cfg = _model_config(args)
    plan = PipelineConfig(config=cfg, model_path=pathlib.Path(args.model),
                          reference_paths=tuple(pathlib.Path(p)
                                                for p in args.reference),
                          out_path=pathlib.Path(args.out))
    store = load_model(plan.model_path, cfg)
    base = _read_wav_checked(args.base, cfg, "base")
    refs = [_read_wav_checked(p, cfg, "reference")
            for p in plan.reference_paths]
    reference = refs[0] if len(refs) == 1 else tone_of_many(refs, store, cfg)
    out = convert(base, reference, store, cfg)
    audio.wav_write(plan.out_path, out)
    print(f"wrote {plan.out_path} ({out.duration:.2f} s)")
    return 0


def cmd_extract_tone(args) -> int:
    cfg = _model_config(args)
    store = load_model(args.model, cfg)
    buf = _read_wav_checked(args.input, cfg, "input")
    emb = tone_of(buf, store, cfg)
    pathlib.Path(args.out).write_text(
        json.dumps([float(x) for x in emb.vector]) + "\n", encoding="utf-8")
    print(f"wrote {args.out} ({len(emb.vector)} dims)")
    return 0


def cmd_train_toy(args) -> int:
    cfg = _model_config(args)
    corpus = None
    if args.corpus_dir:
        root = pathlib.Path(args.corpus_dir)
        if (root / "transcript.tsv").is_file():
            corpus = read_corpus(root)
        else:
            corpus = make_toy_corpus(args.seed, n_speakers=2,
                                     n_utts=args.utterances,
                                     sample_rate=cfg.dsp.sample_rate)
            write_corpus(corpus, root)
    else:
        corpus = make_toy_corpus(args.seed, n_speakers=2,
                                 n_utts=args.utterances,
                                 sample_rate=cfg.dsp.sample_rate)
    log_file = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        def emit(report):
            line = report.to_json()
            print(line)
            if log_file:
                log_file.write(line + "\n")
        result = train_toy(seed=args.seed, steps=args.steps, corpus=corpus,
                           cfg=cfg, batch_size=args.batch_size, lr=args.lr,
                           on_report=emit)
    finally:
        if log_file:
            log_file.close()
    save_model(args.out, result.store)
    first, last = result.reports[0], result.reports[-1]
    print(f"saved {args.out}; total {first.total:.3f} -> {last.total:.3f} "
          f"in {result.seconds:.0f} s", file=sys.stderr)
    return 0


def cmd_dtw_align(args) -> int:
    cfg = _model_config(args)
    store = load_model(args.model, cfg)
    table = (SymbolTable.from_file(args.symbols) if args.symbols
             else toy_symbol_table())
    buf = _read_wav_checked(args.audio, cfg, "audio")
    y = encode(audio.stft(buf, cfg.dsp.stft).magnitudes, store, cfg.codec)
    v = extract_tone(audio.mel_of_audio(buf, cfg.dsp), store, cfg.tone)
    z, _ = flow_forward(y, v, store, cfg.flow)
    feat = encode_text(tokenize_ipa(args.ipa, table), store, cfg.text)
    costs = pair_cost(feat, z.data)
    path = dtw_align(costs)
    total = float(costs[path.assign, np.arange(costs.shape[1])].sum())
    print("assign:", " ".join(str(int(i)) for i in path.assign))
    print(f"total cost: {total:.6f}")
    return 0


def cmd_rtf_report(args) -> int:
    cfg = _model_config(args)
    store = (load_model(args.model, cfg) if args.model
             else init_model(cfg, seed=0))
    durations = [float(d) for d in args.durations.split(",") if d]
    report = rtf_report(durations, store, cfg, repeats=args.repeats)
    print(report.format_table())
    return 0


def cmd_verify(args) -> int:
    results, grad_table = run_verify()
    print(grad_table)
    print()
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tonecolor",
        description="Tone color conversion: re-voice audio with a "
                    "reference speaker's timbre.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert base audio to the "
                                       "reference tone color")
    p.add_argument("--base", required=True)
    p.add_argument("--reference", action="append", required=True,
                   help="reference wav; repeat to average embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("extract-tone", help="write a tone embedding as a "
                                            "JSON array")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_extract_tone)

    p = sub.add_parser("train-toy", help="train on the synthetic two-"
                                         "speaker corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus-dir",
                   help="load the corpus from here, or synthesize into it")
    p.add_argument("--utterances", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=BATCH_SIZE)
    p.add_argument("--lr", type=float, default=LEARNING_RATE)
    p.add_argument("--log", help="also write the JSONL loss log here")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("dtw-align", help="print the transcript-to-frame "
                                         "alignment for an utterance")
    p.add_argument("--audio", required=True)
    p.add_argument("--ipa", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--symbols", help="symbol table file (default: the "
                                     "toy inventory)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_dtw_align)

    p = sub.add_parser("rtf-report", help="measure conversion cost per "
                                          "audio second")
    p.add_argument("--durations", default="1,2,5,10",
                   help="comma-separated seconds")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--model", help="weights file (default: seeded random "
                                   "init)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_rtf_report)

    p = sub.add_parser("verify", help="run the property suite and "
                                      "gradient audit")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
