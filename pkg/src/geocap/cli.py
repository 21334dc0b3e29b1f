"""Command-line surface: synth, train, eval, caption, verify.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 internal error or failed verification. Every command is
deterministic given its flags and seeds. A run directory always
receives the fully resolved configuration, so any run can be
reproduced from its outputs alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import verify as verify_mod
from .errors import GeocapError, ValidationError
from .model import ModelConfig, beam_decode, greedy_decode, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate_split, run_two_stage

_USAGE_EXIT = 1
_DATA_EXIT = 2
_INTERNAL_EXIT = 3

_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_EXTRA_KEYS = {"min_count": int, "dev_count": int}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; remap to the documented code.
    def error(self, message):
        raise _UsageError(message)


def _parse_value(raw: str, typ) -> object:
    if typ in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValidationError(f"expected a boolean, got {raw!r}")
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    return raw


def _load_config_file(path) -> dict:
    """Flat key=value lines; blank lines and # comments are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path} line {ln}: expected key=value")
            key, raw = line.split("=", 1)
            out[key.strip()] = raw.strip()
    return out


def _resolve_config(args) -> dict:
    """Merge defaults, config file, and --set overrides (strongest last)."""
    resolved = {k: getattr(ModelConfig(vocab_size=4, d_feat=8), k)
                for k in _MODEL_KEYS if k not in ("vocab_size", "d_feat")}
    resolved.update({k: getattr(TrainConfig(), k) for k in _TRAIN_KEYS})
    resolved.update({"min_count": 1, "dev_count": 0})
    raw: dict = {}
    if args.config:
        raw.update(_load_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise _UsageError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        raw[key.strip()] = val.strip()
    known = {**_MODEL_KEYS, **_TRAIN_KEYS, **_EXTRA_KEYS}
    for key, val in raw.items():
        if key in ("vocab_size", "d_feat"):
            raise ValidationError(f"{key} is derived from the data, not configurable")
        if key not in known:
            raise ValidationError(f"unknown config key {key!r}")
        resolved[key] = _parse_value(val, known[key])
    if args.aoa is not None:
        resolved["aoa_enabled"] = args.aoa
    if getattr(args, "seed", None) is not None:
        resolved["seed"] = args.seed
    return resolved


def _write_resolved(resolved: dict, out_dir) -> None:
    lines = [f"{k}={resolved[k]}" for k in sorted(resolved)]
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _split_configs(resolved: dict, vocab_size: int, d_feat: int):
    mcfg = ModelConfig(vocab_size=vocab_size, d_feat=d_feat,
                       **{k: resolved[k] for k in _MODEL_KEYS
                          if k not in ("vocab_size", "d_feat")})
    mcfg.validate()
    tcfg = TrainConfig(**{k: resolved[k] for k in _TRAIN_KEYS})
    tcfg.validate()
    return mcfg, tcfg


def cmd_synth(args) -> int:
    if args.images < 1:
        raise _UsageError("--images must be at least 1")
    if args.d_feat < 8:
        raise _UsageError("--d-feat must be at least 8")
    features, captions = data_mod.synth_generate(args.images, args.seed, args.d_feat)
    os.makedirs(args.out, exist_ok=True)
    data_mod.write_features(features, os.path.join(args.out, "features.jsonl"))
    data_mod.write_captions(captions, os.path.join(args.out, "captions.jsonl"))
    print(f"wrote {len(features)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    resolved = _resolve_config(args)
    features = data_mod.load_features(args.features)
    captions = data_mod.load_captions(args.captions)
    examples = data_mod.join_examples(features, captions)
    vocab = data_mod.build_vocab(captions, min_count=resolved["min_count"])
    d_feat = features[0].features.shape[1] if features else 0
    mcfg, tcfg = _split_configs(resolved, len(vocab), d_feat)
    resolved["vocab_size"] = len(vocab)
    resolved["d_feat"] = d_feat

    dev_count = resolved["dev_count"]
    if dev_count > 0:
        train_split, dev_split = data_mod.split_dataset(examples, tcfg.seed, dev_count)
    else:
        train_split, dev_split = list(examples), []

    start = load_checkpoint(args.ckpt) if args.ckpt else None
    stages = ("xe", "scst") if args.stage == "both" else (args.stage,)
    if stages == ("scst",) and start is None:
        raise ValidationError("self-critical stage needs --ckpt with a trained model")

    os.makedirs(args.out, exist_ok=True)
    _write_resolved(resolved, args.out)
    vocab.save(os.path.join(args.out, "vocab.txt"))
    best, log = run_two_stage(train_split, dev_split, mcfg, tcfg, vocab,
                              stages=stages, start=start)
    with open(os.path.join(args.out, "train.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(log) + "\n")
    save_checkpoint(best, os.path.join(args.out, "best.ckpt"))
    for line in log[-3:]:
        print(line)
    print(f"best checkpoint: {os.path.join(args.out, 'best.ckpt')}")
    return 0


def _load_eval_inputs(args):
    ckpt = load_checkpoint(args.ckpt)
    features = data_mod.load_features(args.features)
    vocab = data_mod.Vocabulary.load(args.vocab)
    if len(vocab) != ckpt.config.vocab_size:
        raise ValidationError(
            f"vocab size {len(vocab)} does not match checkpoint "
            f"({ckpt.config.vocab_size})")
    return ckpt, features, vocab


_REPORT_ORDER = ("bleu1", "bleu2", "bleu3", "bleu4", "bleu_avg4", "cider", "rouge_l")


def cmd_eval(args) -> int:
    if args.beam < 1:
        raise _UsageError("--beam must be at least 1")
    ckpt, features, vocab = _load_eval_inputs(args)
    captions = data_mod.load_captions(args.captions)
    examples = data_mod.join_examples(features, captions)
    scores = evaluate_split(ckpt, examples, vocab, beam_width=args.beam)
    for key in _REPORT_ORDER:
        print(f"{key:<10} {scores[key]:.4f}")
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump({k: scores[k] for k in _REPORT_ORDER}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_caption(args) -> int:
    if args.beam < 1:
        raise _UsageError("--beam must be at least 1")
    ckpt, features, vocab = _load_eval_inputs(args)
    for rec in features:
        ids = (greedy_decode(rec, ckpt) if args.beam == 1
               else beam_decode(rec, ckpt, args.beam))
        print(f"{rec.id}\t{' '.join(vocab.tokens_of(ids))}")
    return 0


def cmd_verify(args) -> int:
    results = verify_mod.run_suites(args.suite)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"check={res.name} max_err={res.max_err:.3e} tol={res.tol:.1e} {status}")
        failed += not res.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else _INTERNAL_EXIT


def _build_parser() -> _Parser:
    parser = _Parser(prog="geocap",
                     description="Geometry-aware gated-attention image captioner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-feat", dest="d_feat", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the two-stage training pipeline")
    p.add_argument("--config")
    p.add_argument("--features", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", help="checkpoint to continue from")
    p.add_argument("--stage", choices=("xe", "scst", "both"), default="both")
    p.add_argument("--aoa", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against references")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--report", default="eval_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("caption", help="caption every image in a features file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam", type=int, default=3)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("verify", help="run the verification suites")
    p.add_argument("--suite", choices=("gradcheck", "invariants", "metrics-oracle", "all"),
                   default="all")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return _USAGE_EXIT
    except GeocapError as err:
        print(f"error: {err}", file=sys.stderr)
        return _DATA_EXIT
    except (OSError, IndexError) as err:
        print(f"error: {err}", file=sys.stderr)
        return _DATA_EXIT
    except Exception as err:  # anything else is a bug in this package
        print(f"internal error: {err!r}", file=sys.stderr)
        return _INTERNAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
