"""Interactive chat session: the model keeps deciding whether to speak after
every turn, including its own, so it can take multi-utterance turns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import (CUE_TOKEN, DialogueSample, SILENCE_TOKEN, Utterance,
                     encode_batch, gen_synthetic)
from .model import generate
from .training import Checkpoint


@dataclass
class ChatEvent:
    kind: str  # "speak" or "silence"
    prob: float | None
    text: str = ""


@dataclass
class ChatSession:
    """Rolling two-speaker conversation where one role is played by the model.

    After each human turn the model decides whether to speak; while the
    decision probability stays at or above the threshold it keeps talking,
    up to ``max_consecutive`` utterances in a row.
    """

    ckpt: Checkpoint
    role: str = "B"
    threshold: float | None = None
    seed: int = 0
    max_consecutive: int = 5
    decode_mode: str = "greedy"
    context: list = field(default_factory=list)
    turn_count: int = 0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        if self.threshold is None:
            self.threshold = self.ckpt.config.threshold
        self.human_role = "A" if self.role == "B" else "B"

    def _decide_and_reply(self) -> tuple[int, list[str], float | None]:
        sample = DialogueSample(
            id=f"chat-{self.turn_count}",
            agent=self.role,
            context=tuple(self.context),
            decision=1,
            reply=("placeholder",),
        )
        batch = encode_batch([sample], self.ckpt.vocab)
        decision, reply_idx, prob = generate(
            self.ckpt.params, self.ckpt.config, batch,
            mode=self.decode_mode, rng=self.rng, threshold=self.threshold,
        )
        if decision == 0:
            return 0, [], prob
        tokens = [t for t in self.ckpt.vocab.decode(reply_idx) if t != SILENCE_TOKEN]
        if not tokens:
            tokens = ["..."]
        return 1, tokens, prob

    def _model_turns(self) -> list[ChatEvent]:
        events = []
        for _ in range(self.max_consecutive):
            decision, tokens, prob = self._decide_and_reply()
            if decision == 0:
                events.append(ChatEvent("silence", prob))
                break
            self.context.append(Utterance(speaker=self.role, tokens=tuple(tokens)))
            self.turn_count += 1
            events.append(ChatEvent("speak", prob, " ".join(tokens)))
        return events

    def user_turn(self, tokens: list[str]) -> list[ChatEvent]:
        """Append a human utterance and let the model react (possibly with
        several utterances, possibly with silence)."""
        self.context.append(Utterance(speaker=self.human_role, tokens=tuple(tokens)))
        self.turn_count += 1
        return self._model_turns()


def probe_continuation(ckpt: Checkpoint, n_probes: int = 100, seed: int = 0) -> float:
    """Scripted probes of the floor-keeping rule the synthetic corpus encodes.

    Builds contexts whose last turn belongs to the model's role and checks the
    decision: speak when that turn carries the cue token, silence otherwise.
    Returns the fraction of probes where the decision matches.
    """
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    for transcript in gen_synthetic(10 * n_probes, rng):
        if done >= n_probes:
            break
        turns = transcript.turns
        # pick a prefix ending anywhere but the last turn
        i = int(rng.integers(1, len(turns)))
        prefix = turns[:i]
        agent = prefix[-1].speaker  # the model just spoke
        expect_speak = CUE_TOKEN in prefix[-1].tokens
        sample = DialogueSample(
            id=f"probe-{done}", agent=agent, context=prefix,
            decision=1, reply=("placeholder",),
        )
        batch = encode_batch([sample], ckpt.vocab)
        decision, _, _ = generate(ckpt.params, ckpt.config, batch, mode="greedy")
        hits += int(decision == int(expect_speak))
        done += 1
    if done == 0:
        raise ValueError("no probes generated")
    return hits / done
