"""Automatic metrics: perplexity, BLEU-1..4, distinct-1/2, decision accuracy
and macro-F1, plus the consolidated evaluation report."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import DialogueSample, Vocab, encode_batch, make_batches
from .model import forward_batch, generate
from .training import Checkpoint, joint_loss


@dataclass
class EvalReport:
    ppl: float
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    distinct1: float
    distinct2: float
    accuracy: float | None
    macro_f1: float | None
    n_samples: int
    n_speak: int
    n_silence: int

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.4f}"

        rows = [
            ("PPL", fmt(self.ppl)),
            ("BLEU-1", fmt(self.bleu1)),
            ("BLEU-2", fmt(self.bleu2)),
            ("BLEU-3", fmt(self.bleu3)),
            ("BLEU-4", fmt(self.bleu4)),
            ("Distinct-1", fmt(self.distinct1)),
            ("Distinct-2", fmt(self.distinct2)),
            ("Accuracy", fmt(self.accuracy)),
            ("Macro-F1", fmt(self.macro_f1)),
            ("Samples", f"{self.n_samples} ({self.n_speak} speak / {self.n_silence} silence)"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu_n(candidate, reference, n: int) -> float:
    """Sentence BLEU: geometric mean of modified k-gram precisions (add-one
    smoothed for k >= 2) times the brevity penalty. Empty candidate scores 0."""
    if not 1 <= n <= 4:
        raise ValueError("bleu order must be in 1..4")
    cand = list(candidate)
    ref = list(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        cgrams = Counter(_ngrams(cand, k))
        rgrams = Counter(_ngrams(ref, k))
        matches = sum(min(c, rgrams[g]) for g, c in cgrams.items())
        total = max(sum(cgrams.values()), 0)
        if k >= 2:
            matches += 1
            total += 1
        if total == 0 or matches == 0:
            return 0.0
        log_sum += math.log(matches / total)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return bp * math.exp(log_sum / n)


def distinct_n(responses, n: int) -> float:
    """Distinct n-gram count over total n-gram count across all responses."""
    if n not in (1, 2):
        raise ValueError("distinct order must be 1 or 2")
    seen = set()
    total = 0
    for resp in responses:
        grams = _ngrams(list(resp), n)
        total += len(grams)
        seen.update(grams)
    return len(seen) / total if total else 0.0


def decision_metrics(predictions, labels) -> tuple[float, float]:
    """Accuracy and macro-F1 over the speak/silence classes.

    A class absent from both predictions and labels counts as F1 = 1; absent
    from only one side counts as 0.
    """
    preds = list(predictions)
    labs = list(labels)
    if len(preds) != len(labs):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labs)} labels")
    if not preds:
        raise ValueError("decision_metrics on empty inputs")
    accuracy = sum(p == y for p, y in zip(preds, labs)) / len(preds)
    f1s = []
    for cls in (0, 1):
        tp = sum(p == cls and y == cls for p, y in zip(preds, labs))
        pred_pos = sum(p == cls for p in preds)
        real_pos = sum(y == cls for y in labs)
        if pred_pos == 0 and real_pos == 0:
            f1s.append(1.0)
        elif tp == 0:
            f1s.append(0.0)
        else:
            precision = tp / pred_pos
            recall = tp / real_pos
            f1s.append(2 * precision * recall / (precision + recall))
    return accuracy, sum(f1s) / 2


def perplexity(ckpt: Checkpoint, samples, include_silence: bool = True) -> float:
    """exp(total teacher-forced cross-entropy / reply token count)."""
    use = samples if include_silence else [s for s in samples if s.decision == 1]
    if not use:
        raise ValueError("perplexity needs at least one sample")
    total = 0.0
    tokens = 0
    for batch in make_batches(use, ckpt.vocab, 32):
        out = forward_batch(ckpt.params, ckpt.config, batch, mode="eval")
        total += out.gen_loss_sum.item()
        tokens += out.token_count
    return math.exp(total / tokens)


def evaluate(ckpt: Checkpoint, samples: list[DialogueSample],
             include_silence_ppl: bool = True) -> EvalReport:
    """Full metric suite: greedy generation per sample for the quality metrics
    (speak-labeled samples only), batched scoring for decisions and PPL."""
    if not samples:
        raise ValueError("evaluate needs at least one sample")
    vocab = ckpt.vocab
    cfg = ckpt.config
    preds = []
    for batch in make_batches(samples, vocab, 32):
        if cfg.decision_enabled:
            out = forward_batch(ckpt.params, cfg, batch, mode="eval")
            preds.extend((out.speak_prob.data[:, 0] >= cfg.threshold).astype(int))
    speak_samples = [s for s in samples if s.decision == 1]
    bleu = [0.0, 0.0, 0.0, 0.0]
    responses = []
    for s in speak_samples:
        batch = encode_batch([s], vocab)
        _, reply_idx, _ = generate(ckpt.params, cfg, batch, mode="greedy")
        cand = vocab.decode(reply_idx)
        responses.append(cand)
        for n in range(1, 5):
            bleu[n - 1] += bleu_n(cand, list(s.reply), n)
    n_speak = len(speak_samples)
    bleu = [b / n_speak if n_speak else 0.0 for b in bleu]
    if cfg.decision_enabled:
        accuracy, macro_f1 = decision_metrics(preds, [s.decision for s in samples])
    else:
        accuracy = macro_f1 = None
    return EvalReport(
        ppl=perplexity(ckpt, samples, include_silence=include_silence_ppl),
        bleu1=bleu[0], bleu2=bleu[1], bleu3=bleu[2], bleu4=bleu[3],
        distinct1=distinct_n(responses, 1),
        distinct2=distinct_n(responses, 2),
        accuracy=accuracy,
        macro_f1=macro_f1,
        n_samples=len(samples),
        n_speak=n_speak,
        n_silence=len(samples) - n_speak,
    )
