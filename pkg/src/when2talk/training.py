"""Joint decision+generation objective, epoch loop with early stopping, and
the versioned binary checkpoint format."""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .corpus import DialogueSample, Vocab, make_batches
from .model import Config, ForwardOutput, ModelParams, forward_batch, init_params
from .optim import AdamState, adam_step, clip_grad_norm
from .tensor import Tape, Tensor, backward

CKPT_MAGIC = b"W2T1"


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 30
    patience: int = 5
    batch_size: int = 32
    loss_lambda: float = 1.0
    seed: int = 0
    clip_norm: float = 5.0
    min_freq: int = 1
    agent: str = "both"
    select_by: str = "loss"  # or "accuracy"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.loss_lambda < 0:
            raise ValueError("loss_lambda must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def joint_loss(out: ForwardOutput, batch, loss_lambda: float = 1.0):
    """Total = lambda * mean decision BCE + mean per-token reply cross-entropy.

    With the decision head disabled the total is the generation part only.
    Returns (total, decision_part, generation_part) as scalar tensors.
    """
    gen = T.scale(out.gen_loss_sum, 1.0 / max(out.token_count, 1))
    if out.speak_prob is None:
        zero = Tensor(np.asarray(0.0))
        return gen, zero, gen
    dec = T.scale(
        T.sum_all(T.bce(out.speak_prob, batch.decisions.reshape(-1, 1))),
        1.0 / len(batch),
    )
    total = T.scale(dec, loss_lambda) + gen
    return total, dec, gen


@dataclass
class Checkpoint:
    config: Config
    train_config: TrainConfig
    vocab: Vocab
    params: ModelParams


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float | None


def _eval_split(params, cfg, tcfg, batches):
    """Validation loss and decision accuracy; never mutates parameters."""
    total = 0.0
    n = 0
    correct = 0
    for batch in batches:
        out = forward_batch(params, cfg, batch, mode="eval")
        loss, _, _ = joint_loss(out, batch, tcfg.loss_lambda)
        total += loss.item() * len(batch)
        n += len(batch)
        if out.speak_prob is not None:
            preds = (out.speak_prob.data[:, 0] >= cfg.threshold).astype(int)
            correct += int((preds == batch.decisions).sum())
    acc = correct / n if cfg.decision_enabled else None
    return total / n, acc


def train(
    params: ModelParams,
    cfg: Config,
    tcfg: TrainConfig,
    train_samples: list[DialogueSample],
    dev_samples: list[DialogueSample],
    vocab: Vocab,
    log_fn=None,
) -> tuple[Checkpoint, list[EpochLog]]:
    """Epoch loop: shuffle, backprop, clip, Adam; early-stop on validation
    loss (or accuracy when configured) and return the best checkpoint."""
    if not train_samples or not dev_samples:
        raise ValueError("train() needs non-empty train and validation splits")
    named = list(params.named_tensors())
    state = AdamState.init(named)
    rng = np.random.default_rng(tcfg.seed)
    dev_batches = make_batches(dev_samples, vocab, tcfg.batch_size)
    best_score = None
    best_params = None
    bad_epochs = 0
    logs: list[EpochLog] = []
    for epoch in range(1, tcfg.epochs + 1):
        train_total = 0.0
        seen = 0
        for batch in make_batches(train_samples, vocab, tcfg.batch_size, rng):
            with Tape():
                out = forward_batch(params, cfg, batch, mode="train", rng=rng)
                loss, _, _ = joint_loss(out, batch, tcfg.loss_lambda)
                backward(loss)
            clip_grad_norm(named, tcfg.clip_norm)
            adam_step(named, state, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
            train_total += loss.item() * len(batch)
            seen += len(batch)
        val_loss, val_acc = _eval_split(params, cfg, tcfg, dev_batches)
        row = EpochLog(epoch, train_total / seen, val_loss, val_acc)
        logs.append(row)
        if log_fn is not None:
            log_fn(row)
        score = -val_loss if tcfg.select_by == "loss" else (val_acc or 0.0)
        if best_score is None or score > best_score:
            best_score = score
            best_params = copy.deepcopy(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                break
    return Checkpoint(cfg, tcfg, vocab, best_params), logs


# ---------------------------------------------------------------------------
# checkpoint persistence
#
# layout: b"W2T1" | u32 LE metadata length | utf-8 json metadata |
#         concatenated little-endian float32 tensor payloads in manifest order


def _vocab_hash(itos: list[str]) -> str:
    return hashlib.sha256("\x00".join(itos).encode("utf-8")).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    manifest = []
    payloads = []
    offset = 0
    for name, t in ckpt.params.named_tensors():
        raw = np.ascontiguousarray(t.data.astype("<f4")).tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    meta = {
        "format": 1,
        "config": ckpt.config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "vocab": ckpt.vocab.itos,
        "vocab_hash": _vocab_hash(ckpt.vocab.itos),
        "manifest": manifest,
    }
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad magic bytes, expected {CKPT_MAGIC!r}: wrong version or not a checkpoint")
    if len(data) < 8:
        raise CheckpointError("truncated header")
    (meta_len,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + meta_len:
        raise CheckpointError("truncated metadata")
    try:
        meta = json.loads(data[8 : 8 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata: {exc}") from exc
    if meta.get("format") != 1:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format')!r}")
    cfg = Config(**meta["config"])
    tcfg = TrainConfig(**meta["train_config"])
    vocab = Vocab(meta["vocab"])
    if meta.get("vocab_hash") != _vocab_hash(vocab.itos):
        raise CheckpointError("vocab hash mismatch: checkpoint is corrupt or tampered")
    # rebuild the parameter skeleton, then overwrite every tensor from payload
    params = init_params(cfg, len(vocab), np.random.default_rng(0), dtype=np.float32)
    payload = data[8 + meta_len :]
    by_name = {entry["name"]: entry for entry in meta["manifest"]}
    for name, t in params.named_tensors():
        entry = by_name.get(name)
        if entry is None:
            raise CheckpointError(f"manifest is missing tensor '{name}'")
        shape = tuple(entry["shape"])
        if shape != t.shape:
            raise CheckpointError(
                f"tensor '{name}' has manifest shape {list(shape)}, expected {list(t.shape)}"
            )
        size = int(np.prod(shape)) * 4
        start = entry["offset"]
        if start + size > len(payload):
            raise CheckpointError(f"truncated payload for tensor '{name}'")
        arr = np.frombuffer(payload[start : start + size], dtype="<f4").reshape(shape)
        t.data = arr.astype(np.float32).copy()
    return Checkpoint(cfg, tcfg, vocab, params)
