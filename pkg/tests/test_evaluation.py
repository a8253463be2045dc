import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score

from when2talk.corpus import (EOS, SILENCE, SOS, SILENCE_TOKEN,
                              SPECIAL_TOKENS, DialogueSample, Utterance,
                              Vocab, build_vocab, extract_samples,
                              gen_synthetic)
from when2talk.evaluation import (EvalReport, bleu_n, decision_metrics,
                                  distinct_n, evaluate, perplexity)
from when2talk.model import Config, init_params
from when2talk.training import Checkpoint, TrainConfig


class TestBleu:
    def test_identical_sentence_scores_one(self):
        s = "the cat sat on the mat".split()
        for n in range(1, 5):
            assert bleu_n(s, s, n) == pytest.approx(1.0)

    def test_hand_computed_bleu2(self):
        cand = "the cat sat".split()
        ref = "the cat on the mat".split()
        # unigram precision 2/3; smoothed bigram (1+1)/(2+1); bp = e^(1-5/3)
        expected = math.exp(1 - 5 / 3) * math.sqrt((2 / 3) * (2 / 3))
        assert bleu_n(cand, ref, 2) == pytest.approx(expected, abs=1e-12)

    def test_empty_candidate(self):
        assert bleu_n([], ["a"], 1) == 0.0

    def test_disjoint_vocab(self):
        assert bleu_n(["a", "b"], ["c", "d"], 1) == 0.0

    def test_no_brevity_penalty_for_long_candidate(self):
        assert bleu_n(["a", "a", "a", "a"], ["a", "a"], 1) == pytest.approx(0.5)

    def test_order_validated(self):
        with pytest.raises(ValueError):
            bleu_n(["a"], ["a"], 5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from("abc"), min_size=1, max_size=8),
           st.lists(st.sampled_from("abc"), min_size=1, max_size=8),
           st.integers(1, 4))
    def test_bounded(self, cand, ref, n):
        assert 0.0 <= bleu_n(cand, ref, n) <= 1.0 + 1e-12


class TestDistinct:
    def test_repeated_token(self):
        assert distinct_n([["a", "a", "a"]], 1) == pytest.approx(1 / 3)

    def test_across_responses(self):
        assert distinct_n([["a", "b"], ["b", "c"]], 1) == pytest.approx(3 / 4)
        assert distinct_n([["a", "b"], ["a", "b"]], 2) == pytest.approx(1 / 2)

    def test_no_ngrams(self):
        assert distinct_n([], 1) == 0.0
        assert distinct_n([["a"]], 2) == 0.0

    def test_order_validated(self):
        with pytest.raises(ValueError):
            distinct_n([["a"]], 3)


class TestDecisionMetrics:
    def test_hand_case(self):
        acc, f1 = decision_metrics([1, 1, 0, 1, 0], [1, 0, 0, 1, 1])
        assert acc == pytest.approx(0.6)
        assert f1 == pytest.approx((2 / 3 + 1 / 2) / 2)

    def test_always_speak_on_balanced_labels(self):
        labels = [0, 1] * 10
        acc, f1 = decision_metrics([1] * 20, labels)
        assert acc == pytest.approx(0.5)
        assert f1 == pytest.approx(1 / 3)

    def test_class_absent_from_both_counts_as_one(self):
        acc, f1 = decision_metrics([1, 1], [1, 1])
        assert (acc, f1) == (1.0, 1.0)

    def test_class_absent_from_one_side_counts_as_zero(self):
        _, f1 = decision_metrics([1, 1], [1, 0])
        assert f1 == pytest.approx((2 / 3) / 2)

    def test_validation(self):
        with pytest.raises(ValueError):
            decision_metrics([1], [1, 0])
        with pytest.raises(ValueError):
            decision_metrics([], [])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)),
                    min_size=1, max_size=30))
    def test_matches_sklearn(self, pairs):
        preds = [p for p, _ in pairs]
        labels = [y for _, y in pairs]
        if set(preds) | set(labels) != {0, 1}:
            return  # sklearn scores an everywhere-absent class 0, we score it 1
        _, ours = decision_metrics(preds, labels)
        ref = f1_score(labels, preds, labels=[0, 1], average="macro",
                       zero_division=0.0)
        assert ours == pytest.approx(ref, abs=1e-12)


# ---------------------------------------------------------------------------
# perplexity oracles


def silence_samples(n=6):
    ts = gen_synthetic(4, np.random.default_rng(31))
    out = [s for t in ts for s in extract_samples(t) if s.decision == 0]
    return out[:n]


def zeroed_checkpoint(vocab, **cfg_kw):
    cfg = Config(**{**dict(d_word=4, d_hidden=4, d_user=2, d_pos=2,
                           gnn_layers=1, dropout=0.0, max_pos=8,
                           decision_hidden=(3,)), **cfg_kw})
    params = init_params(cfg, len(vocab), np.random.default_rng(0),
                         dtype=np.float64)
    for _, t in params.named_tensors():
        t.data[:] = 0.0
    return Checkpoint(cfg, TrainConfig(), vocab, params)


class TestPerplexity:
    def test_uniform_model_scores_vocab_size(self):
        vocab = Vocab(list(SPECIAL_TOKENS) + ["a", "b", "c", "d", "e"])
        ckpt = zeroed_checkpoint(vocab)
        ppl = perplexity(ckpt, silence_samples())
        assert ppl == pytest.approx(len(vocab), rel=1e-9)

    def test_near_perfect_model_scores_one(self):
        # hand-built decoder: the GRU copies a one-hot of the previous token
        # into its state and the output matrix hard-codes sos -> silence -> eos,
        # which is exactly the reply of every silence sample
        vocab = Vocab(list(SPECIAL_TOKENS))
        v = len(vocab)
        ckpt = zeroed_checkpoint(vocab, d_word=v, d_hidden=v)
        p = ckpt.params
        p.word_emb.data[:] = 10.0 * np.eye(v)
        p.dec_cell.b_z.data[:] = 20.0  # update gate ~1: state = candidate
        p.dec_cell.w_h.data[v:, :] = np.eye(v)  # candidate ~ one-hot(input)
        p.out_w.data[SOS, SILENCE] = 50.0
        p.out_w.data[SILENCE, EOS] = 50.0
        ppl = perplexity(ckpt, silence_samples())
        assert ppl == pytest.approx(1.0, abs=1e-6)

    def test_include_silence_filter(self):
        ts = gen_synthetic(3, np.random.default_rng(32))
        samples = [s for t in ts for s in extract_samples(t)]
        vocab = build_vocab(ts)
        ckpt = zeroed_checkpoint(vocab)
        full = perplexity(ckpt, samples, include_silence=True)
        speak = perplexity(ckpt, samples, include_silence=False)
        assert full == pytest.approx(speak, rel=1e-9)  # uniform either way
        silence_only = [s for s in samples if s.decision == 0]
        with pytest.raises(ValueError):
            perplexity(ckpt, silence_only, include_silence=False)
        with pytest.raises(ValueError):
            perplexity(ckpt, [])


@pytest.fixture(scope="module")
def report_world():
    ts = gen_synthetic(4, np.random.default_rng(33))
    vocab = build_vocab(ts)
    samples = [s for t in ts for s in extract_samples(t)][:12]
    cfg = Config(d_word=8, d_hidden=8, d_user=4, d_pos=4, gnn_layers=1,
                 dropout=0.0, max_pos=8, decision_hidden=(4,))
    params = init_params(cfg, len(vocab), np.random.default_rng(1))
    ckpt = Checkpoint(cfg, TrainConfig(), vocab, params)
    return ckpt, samples, evaluate(ckpt, samples)


class TestEvaluate:
    def test_counts_and_ranges(self, report_world):
        _, samples, rep = report_world
        assert rep.n_samples == len(samples)
        assert rep.n_speak + rep.n_silence == rep.n_samples
        assert rep.n_speak == sum(s.decision for s in samples)
        for b in (rep.bleu1, rep.bleu2, rep.bleu3, rep.bleu4):
            assert 0.0 <= b <= 1.0
        assert 0.0 <= rep.accuracy <= 1.0
        assert 0.0 <= rep.macro_f1 <= 1.0
        assert rep.ppl >= 1.0

    def test_serialization_and_table(self, report_world):
        _, _, rep = report_world
        d = rep.to_dict()
        assert d["n_samples"] == rep.n_samples
        assert EvalReport(**d) == rep
        table = rep.table()
        assert "PPL" in table and "Macro-F1" in table

    def test_disabled_decision_reports_none(self):
        ts = gen_synthetic(2, np.random.default_rng(34))
        vocab = build_vocab(ts)
        samples = [s for t in ts for s in extract_samples(t)][:6]
        ckpt = zeroed_checkpoint(vocab, decision_enabled=False)
        rep = evaluate(ckpt, samples)
        assert rep.accuracy is None and rep.macro_f1 is None
        assert "-" in rep.table()

    def test_empty_rejected(self, report_world):
        ckpt, _, _ = report_world
        with pytest.raises(ValueError):
            evaluate(ckpt, [])
