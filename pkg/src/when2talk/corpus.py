"""Transcript ingestion, vocabulary, timing-labeled samples and batching.

A transcript is a two-speaker conversation in which the same speaker may
utter several turns in a row. For every context prefix we emit one sample
per agent role: the label says whether that agent speaks next, and the reply
is either the next turn's tokens or the single silence token.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, SOS, EOS, SILENCE = 0, 1, 2, 3, 4
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SOS_TOKEN = "<sos>"
EOS_TOKEN = "<eos>"
SILENCE_TOKEN = "<silence>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, SOS_TOKEN, EOS_TOKEN, SILENCE_TOKEN)


class CorpusError(ValueError):
    """Malformed transcript or sample data."""


class SchemaError(CorpusError):
    """Record violates the conversation schema (speakers, empty turns, ...)."""


@dataclass(frozen=True)
class Utterance:
    speaker: str
    tokens: tuple

    def __post_init__(self):
        if not self.tokens:
            raise SchemaError("utterance has no tokens")
        for tok in self.tokens:
            if tok in SPECIAL_TOKENS:
                raise SchemaError(f"utterance uses reserved token {tok!r}")
        object.__setattr__(self, "tokens", tuple(self.tokens))


@dataclass(frozen=True)
class Transcript:
    id: str
    turns: tuple

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if len(self.turns) < 2:
            raise SchemaError(f"transcript {self.id!r} has fewer than 2 turns")
        speakers = {u.speaker for u in self.turns}
        if len(speakers) != 2:
            raise SchemaError(
                f"transcript {self.id!r} has {len(speakers)} distinct speakers, expected 2"
            )

    @property
    def roles(self) -> tuple:
        return tuple(sorted({u.speaker for u in self.turns}))


@dataclass(frozen=True)
class DialogueSample:
    id: str
    agent: str
    context: tuple  # of Utterance
    decision: int  # 1 = speak, 0 = keep silence
    reply: tuple  # token strings; (SILENCE_TOKEN,) iff decision == 0

    def __post_init__(self):
        if len(self.context) < 1:
            raise SchemaError("sample context is empty")
        silent = tuple(self.reply) == (SILENCE_TOKEN,)
        if (self.decision == 0) != silent:
            raise SchemaError("decision=0 must pair with a bare silence reply")


_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace with punctuation as standalone tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token table with the five special tokens pinned at indices 0..4."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise CorpusError("vocab must start with the special tokens")
        self.itos = list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(tok, UNK) for tok in tokens]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in indices]


def build_vocab(transcripts: Sequence[Transcript], min_freq: int = 1) -> Vocab:
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    freq: dict[str, int] = {}
    for t in transcripts:
        for u in t.turns:
            for tok in u.tokens:
                freq[tok] = freq.get(tok, 0) + 1
    kept = sorted(
        (tok for tok, n in freq.items() if n >= min_freq),
        key=lambda tok: (-freq[tok], tok),
    )
    return Vocab(list(SPECIAL_TOKENS) + kept)


# ---------------------------------------------------------------------------
# transcript / sample files (one json record per line)


def _parse_transcript(record: dict) -> Transcript:
    turns = []
    for turn in record["turns"]:
        tokens = tokenize(turn["text"]) if "text" in turn else list(turn["tokens"])
        turns.append(Utterance(speaker=str(turn["speaker"]), tokens=tuple(tokens)))
    return Transcript(id=str(record["id"]), turns=tuple(turns))


def load_transcripts(path) -> list[Transcript]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: not valid json ({exc.msg})") from exc
            try:
                out.append(_parse_transcript(record))
            except (KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from exc
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def save_transcripts(transcripts: Sequence[Transcript], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            record = {
                "id": t.id,
                "turns": [{"speaker": u.speaker, "text": " ".join(u.tokens)} for u in t.turns],
            }
            fh.write(json.dumps(record) + "\n")


def save_samples(samples: Sequence[DialogueSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            record = {
                "id": s.id,
                "agent": s.agent,
                "context": [{"speaker": u.speaker, "tokens": list(u.tokens)} for u in s.context],
                "decision": s.decision,
                "reply": list(s.reply),
            }
            fh.write(json.dumps(record) + "\n")


def load_samples(path) -> list[DialogueSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                context = tuple(
                    Utterance(speaker=str(u["speaker"]), tokens=tuple(u["tokens"]))
                    for u in record["context"]
                )
                out.append(
                    DialogueSample(
                        id=str(record["id"]),
                        agent=str(record["agent"]),
                        context=context,
                        decision=int(record["decision"]),
                        reply=tuple(record["reply"]),
                    )
                )
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: not valid json ({exc.msg})") from exc
            except (KeyError, TypeError, SchemaError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed sample ({exc})") from exc
    return out


# ---------------------------------------------------------------------------
# sample extraction


def extract_samples(t: Transcript, agent: str = "both") -> list[DialogueSample]:
    """One sample per context prefix and selected agent role.

    The label is 1 iff the next turn belongs to the agent; silent samples get
    the bare silence-token reply.
    """
    roles = t.roles if agent == "both" else (agent,)
    for role in roles:
        if role not in t.roles:
            raise SchemaError(f"agent {role!r} does not appear in transcript {t.id!r}")
    out = []
    for role in roles:
        for i in range(1, len(t.turns)):
            speaks = t.turns[i].speaker == role
            out.append(
                DialogueSample(
                    id=f"{t.id}#{role}#{i}",
                    agent=role,
                    context=t.turns[:i],
                    decision=1 if speaks else 0,
                    reply=t.turns[i].tokens if speaks else (SILENCE_TOKEN,),
                )
            )
    return out


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Index-encoded samples, padded within the batch."""

    samples: list
    ctx_tokens: list  # per sample: (m_i, L) int array, PAD-padded
    ctx_lengths: list  # per sample: (m_i,) token counts, padding excluded
    speakers: list  # per sample: (m_i,) speaker indices in {0, 1}
    positions: list  # per sample: (m_i,) 1-based turn positions
    agents: np.ndarray  # (B,) agent speaker indices
    decisions: np.ndarray  # (B,) 0/1 labels
    replies: np.ndarray  # (B, R) reply indices with EOS appended, PAD-padded
    reply_lengths: np.ndarray  # (B,) including the EOS

    def __len__(self) -> int:
        return len(self.samples)


def _speaker_index(sample: DialogueSample) -> dict[str, int]:
    labels = sorted({u.speaker for u in sample.context} | {sample.agent})
    return {label: i for i, label in enumerate(labels)}


def encode_batch(samples: Sequence[DialogueSample], vocab: Vocab) -> Batch:
    max_tok = max(max(len(u.tokens) for u in s.context) for s in samples)
    max_rep = max(len(s.reply) for s in samples) + 1  # room for EOS
    ctx_tokens, ctx_lengths, speakers, positions = [], [], [], []
    agents = np.zeros(len(samples), dtype=np.int64)
    decisions = np.zeros(len(samples), dtype=np.int64)
    replies = np.full((len(samples), max_rep), PAD, dtype=np.int64)
    reply_lengths = np.zeros(len(samples), dtype=np.int64)
    for b, s in enumerate(samples):
        spk_map = _speaker_index(s)
        m = len(s.context)
        toks = np.full((m, max_tok), PAD, dtype=np.int64)
        lens = np.zeros(m, dtype=np.int64)
        spk = np.zeros(m, dtype=np.int64)
        for i, u in enumerate(s.context):
            ids = vocab.encode(u.tokens)
            toks[i, : len(ids)] = ids
            lens[i] = len(ids)
            spk[i] = spk_map[u.speaker]
        ctx_tokens.append(toks)
        ctx_lengths.append(lens)
        speakers.append(spk)
        positions.append(np.arange(1, m + 1, dtype=np.int64))
        agents[b] = spk_map[s.agent]
        decisions[b] = s.decision
        rep = vocab.encode(s.reply) + [EOS]
        replies[b, : len(rep)] = rep
        reply_lengths[b] = len(rep)
    return Batch(
        samples=list(samples),
        ctx_tokens=ctx_tokens,
        ctx_lengths=ctx_lengths,
        speakers=speakers,
        positions=positions,
        agents=agents,
        decisions=decisions,
        replies=replies,
        reply_lengths=reply_lengths,
    )


def make_batches(
    samples: Sequence[DialogueSample],
    vocab: Vocab,
    batch_size: int,
    rng: np.random.Generator | None = None,
) -> list[Batch]:
    """Shuffle (when an rng is given) and pad into fixed-size batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(samples)))
    if rng is not None:
        order = list(rng.permutation(len(samples)))
    out = []
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        out.append(encode_batch(chunk, vocab))
    return out


# ---------------------------------------------------------------------------
# synthetic corpus with a perfectly learnable turn-taking rule

CUE_TOKEN = "moreover"

_TEMPLATES = (
    "what do you think about the schedule",
    "i agree with the overall idea",
    "let us review the budget tomorrow",
    "the results look promising so far",
    "we should ask the team first",
    "that sounds reasonable to me",
    "i am not sure about the details",
    "can you share the report today",
    "the deadline is closer than expected",
    "maybe we can revisit this later",
)

_CUE_TAILS = (
    "moreover we need more time",
    "moreover the numbers look wrong",
    "moreover the client already agreed",
)


def gen_synthetic(n_dialogues: int, rng: np.random.Generator) -> list[Transcript]:
    """Two-speaker dialogues where a speaker keeps the floor iff their previous
    utterance contains the cue token; the cue fires with probability 0.4."""
    out = []
    for d in range(n_dialogues):
        m = int(rng.integers(4, 11))
        cues = rng.random(m) < 0.4
        cues[0] = False  # guarantees the second speaker appears
        speakers = ["A" if rng.random() < 0.5 else "B"]
        for i in range(1, m):
            prev = speakers[-1]
            speakers.append(prev if cues[i - 1] else ("B" if prev == "A" else "A"))
        turns = []
        for i in range(m):
            text = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
            if cues[i]:
                text += " " + _CUE_TAILS[int(rng.integers(len(_CUE_TAILS)))]
            turns.append(Utterance(speaker=speakers[i], tokens=tuple(text.split())))
        out.append(Transcript(id=f"syn-{d:05d}", turns=tuple(turns)))
    return out
