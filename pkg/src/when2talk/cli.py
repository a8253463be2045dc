"""Command line surface: convert, stats, synth, train, eval, chat, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data/schema error,
3 check failure. Structured output is line-delimited json; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import corpus as C
from . import graph as G
from .chat import ChatSession
from .evaluation import evaluate
from .gradcheck import grad_check_groups
from .model import Config, forward_batch, init_params
from .training import (Checkpoint, CheckpointError, TrainConfig, joint_loss,
                       load_checkpoint, save_checkpoint, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class UsageError(ValueError):
    pass


_CONFIG_KEYS = {
    "gru_hidden": ("config", "d_hidden"),
    "d_word": ("config", "d_word"),
    "d_user": ("config", "d_user"),
    "d_pos": ("config", "d_pos"),
    "gnn_layers": ("config", "gnn_layers"),
    "encoder_mode": ("config", "encoder_mode"),
    "decision_enabled": ("config", "decision_enabled"),
    "dropout_ratio": ("config", "dropout"),
    "max_pos": ("config", "max_pos"),
    "max_decode_len": ("config", "max_decode_len"),
    "threshold": ("config", "threshold"),
    "decision_hidden": ("config", "decision_hidden"),
    "learning_rate": ("train", "lr"),
    "weight_decay": ("train", "weight_decay"),
    "epochs": ("train", "epochs"),
    "patience": ("train", "patience"),
    "batch_size": ("train", "batch_size"),
    "loss_lambda": ("train", "loss_lambda"),
    "seed": ("train", "seed"),
    "clip_norm": ("train", "clip_norm"),
    "min_freq": ("train", "min_freq"),
    "agent": ("train", "agent"),
    "select_by": ("train", "select_by"),
}


def load_config(path) -> tuple[Config, TrainConfig]:
    """Parse the json config file; unknown keys are an error."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    preset = raw.pop("preset", "desk")
    if preset == "paper":
        cfg_kwargs = {f.name: getattr(Config.paper_preset(), f.name) for f in fields(Config)}
    elif preset == "desk":
        cfg_kwargs = {}
    else:
        raise UsageError(f"unknown preset {preset!r} (expected 'desk' or 'paper')")
    tcfg_kwargs = {}
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        target, attr = _CONFIG_KEYS[key]
        (cfg_kwargs if target == "config" else tcfg_kwargs)[attr] = value
    try:
        return Config(**cfg_kwargs), TrainConfig(**tcfg_kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_convert(args) -> int:
    transcripts = C.load_transcripts(args.infile)
    samples = []
    for t in transcripts:
        samples.extend(C.extract_samples(t, args.agent))
    C.save_samples(samples, args.out)
    n_speak = sum(s.decision for s in samples)
    print(json.dumps({
        "samples": len(samples), "speak": n_speak, "silence": len(samples) - n_speak,
    }))
    return EXIT_OK


def cmd_stats(args) -> int:
    transcripts = C.load_transcripts(args.infile)
    print(json.dumps(G.graph_stats(transcripts)))
    if args.dot is not None:
        match = [t for t in transcripts if t.id == args.dot]
        if not match:
            raise C.CorpusError(f"no transcript with id {args.dot!r}")
        g = G.build_graph([u.speaker for u in match[0].turns])
        print(G.to_dot(g))
    return EXIT_OK


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    transcripts = C.gen_synthetic(args.dialogues, rng)
    order = rng.permutation(len(transcripts))
    n = len(transcripts)
    n_train = int(n * 0.8)
    n_dev = int(n * 0.1)
    splits = {
        "train": [transcripts[i] for i in order[:n_train]],
        "dev": [transcripts[i] for i in order[n_train : n_train + n_dev]],
        "test": [transcripts[i] for i in order[n_train + n_dev :]],
    }
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, part in splits.items():
        C.save_transcripts(part, outdir / f"{name}.jsonl")
    print(json.dumps({name: len(part) for name, part in splits.items()}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, tcfg = load_config(args.config)
    data_dir = Path(args.data_dir)
    train_path = data_dir / "train.jsonl"
    dev_path = data_dir / "dev.jsonl"
    for p in (train_path, dev_path):
        if not p.exists():
            raise C.CorpusError(f"missing split file {p}")
    train_ts = C.load_transcripts(train_path)
    dev_ts = C.load_transcripts(dev_path)
    vocab = C.build_vocab(train_ts, tcfg.min_freq)
    train_samples = [s for t in train_ts for s in C.extract_samples(t, tcfg.agent)]
    dev_samples = [s for t in dev_ts for s in C.extract_samples(t, tcfg.agent)]
    params = init_params(cfg, len(vocab), np.random.default_rng(tcfg.seed))
    _log(f"vocab={len(vocab)} train_samples={len(train_samples)} dev_samples={len(dev_samples)}")

    def log_epoch(row):
        acc = "-" if row.val_accuracy is None else f"{row.val_accuracy:.4f}"
        _log(f"epoch {row.epoch}: train_loss={row.train_loss:.4f} "
             f"val_loss={row.val_loss:.4f} val_acc={acc}")

    ckpt, _ = train(params, cfg, tcfg, train_samples, dev_samples, vocab, log_fn=log_epoch)
    save_checkpoint(ckpt, args.out)
    _log(f"checkpoint written to {args.out}")
    return EXIT_OK


def _load_eval_samples(path, ckpt: Checkpoint):
    """Accept either a sample file or a transcript file (converted on the fly)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first:
        raise C.CorpusError(f"{path}: empty data file")
    record = json.loads(first)
    if "turns" in record:
        transcripts = C.load_transcripts(path)
        return [s for t in transcripts
                for s in C.extract_samples(t, ckpt.train_config.agent)]
    return C.load_samples(path)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    samples = _load_eval_samples(args.data, ckpt)
    report = evaluate(ckpt, samples)
    line = json.dumps(report.to_dict())
    print(line)
    print(report.table(), file=sys.stderr)
    if args.report:
        Path(args.report).write_text(line + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_chat(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    session = ChatSession(ckpt, role=args.role, threshold=args.threshold,
                          seed=args.seed, max_consecutive=args.max_consecutive)
    _log(f"chatting as role {session.human_role}; the model plays {session.role}. "
         "/quit exits, /ctx dumps the context.")
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line == "/quit":
            return EXIT_OK
        if line == "/ctx":
            for u in session.context:
                print(f"{u.speaker}: {' '.join(u.tokens)}")
            continue
        tokens = C.tokenize(line)
        if not tokens:
            continue
        for event in session.user_turn(tokens):
            if event.kind == "speak":
                print(f"{session.role}: {event.text}  [p={event.prob:.3f}]"
                      if event.prob is not None else f"{session.role}: {event.text}")
            else:
                print(f"[silence p={event.prob:.3f}]")
    return EXIT_OK


def build_gradcheck_case(seed: int = 0):
    """Tiny 64-bit model plus a two-sample batch for finite differences."""
    rng = np.random.default_rng(seed)
    cfg = Config(d_word=4, d_hidden=4, d_user=2, d_pos=2, gnn_layers=2,
                 decision_hidden=(6, 5), max_pos=8, dropout=0.0)
    turns = (
        C.Utterance("A", ("hello", "there")),
        C.Utterance("B", ("hi", "again", "friend")),
        C.Utterance("A", ("how", "are", "you")),
        C.Utterance("A", ("really",)),
    )
    transcript = C.Transcript("toy", turns)
    vocab = C.build_vocab([transcript], 1)
    samples = C.extract_samples(transcript, "both")
    batch = C.encode_batch([samples[1], samples[4]], vocab)  # one speak, one silence
    params = init_params(cfg, len(vocab), rng, dtype=np.float64)
    # jitter zero-initialized biases: an exactly-zero relu pre-activation sits
    # on the kink and breaks central differences
    for _, t in params.named_tensors():
        if not t.data.any():
            t.data = rng.uniform(-0.1, 0.1, size=t.shape)

    def build():
        out = forward_batch(params, cfg, batch, mode="eval")
        total, _, _ = joint_loss(out, batch)
        return total

    return build, params, cfg


def cmd_gradcheck(args) -> int:
    build, params, _ = build_gradcheck_case(args.seed)
    errors = grad_check_groups(build, params.named_tensors(), eps=args.eps)
    worst = 0.0
    for group in sorted(errors):
        print(f"{group}: {errors[group]:.3e}")
        worst = max(worst, errors[group])
    if worst >= args.tol:
        _log(f"FAIL: max relative error {worst:.3e} >= tol {args.tol:g}")
        return EXIT_CHECK
    _log(f"OK: max relative error {worst:.3e} < tol {args.tol:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="when2talk")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="transcripts -> timing-labeled samples")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--agent", default="both")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("stats", help="conversation graph statistics")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--dot", default=None, help="emit DOT for this transcript id")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dialogues", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run the automatic metric suite")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("chat", help="interactive chat where the model decides when to talk")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--role", default="B", choices=("A", "B"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--max-consecutive", type=int, default=5)
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (C.CorpusError, CheckpointError, FileNotFoundError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA
    except json.JSONDecodeError as exc:
        _log(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
