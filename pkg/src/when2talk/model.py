"""The four-part architecture: utterance encoder, sequential context encoder,
graph context encoder (double-gated, with GCN / gated-attention ablations),
and the generator (decision MLP + GRU decoder).

All forward code works on row-batched matrices so a whole batch of samples is
one pass: the utterance encoder runs over every context utterance of the batch
at once, and the per-sample conversation graphs are merged into one block
graph for the message-passing layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .corpus import EOS, PAD, SILENCE, SOS, Batch
from .graph import ConvGraph, build_graph
from .tensor import Tensor

ENCODER_MODES = ("none", "dggnn", "gcn", "ggat")


@dataclass
class Config:
    """Model hyperparameters. Defaults are the desk-scale preset; the paper
    preset (500-wide GRUs, 3 graph layers) is available via :meth:`paper_preset`."""

    d_word: int = 64
    d_hidden: int = 64
    d_user: int = 16
    d_pos: int = 16
    gnn_layers: int = 2
    encoder_mode: str = "dggnn"
    decision_enabled: bool = True
    dropout: float = 0.3
    max_pos: int = 64
    max_decode_len: int = 20
    threshold: float = 0.5
    decision_hidden: tuple = (128, 64, 32)

    def __post_init__(self):
        self.decision_hidden = tuple(self.decision_hidden)
        if self.gnn_layers < 0:
            raise ValueError("gnn_layers must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.encoder_mode not in ENCODER_MODES:
            raise ValueError(f"encoder_mode must be one of {ENCODER_MODES}")

    @classmethod
    def paper_preset(cls, **overrides) -> "Config":
        base = dict(
            d_word=300, d_hidden=500, d_user=64, d_pos=64, gnn_layers=3,
            decision_hidden=(500, 256, 128),
        )
        base.update(overrides)
        return cls(**base)

    @property
    def d_ctx(self) -> int:
        return 2 * self.d_hidden

    @property
    def d_aug(self) -> int:
        return self.d_ctx + self.d_user + self.d_pos

    @property
    def d_top(self) -> int:
        """Dimension of the features the generator consumes."""
        return self.d_ctx if self.encoder_mode == "none" else self.d_aug

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["decision_hidden"] = list(self.decision_hidden)
        return out


# ---------------------------------------------------------------------------
# parameters


@dataclass
class GruCellParams:
    """Update/reset/candidate weights acting on [hidden, input], plus biases.

    Weights are stored input-major, shape (hidden + input, hidden), so the
    cell computes right-products on row batches.
    """

    w_z: Tensor
    b_z: Tensor
    w_r: Tensor
    b_r: Tensor
    w_h: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng, dtype) -> "GruCellParams":
        def weight():
            return _uniform(rng, (hidden_dim + input_dim, hidden_dim), dtype)

        def bias():
            return Tensor(np.zeros(hidden_dim, dtype=dtype), requires_grad=True)

        return cls(w_z=weight(), b_z=bias(), w_r=weight(), b_r=bias(),
                   w_h=weight(), b_h=bias())

    def named(self, prefix: str):
        for f in fields(self):
            yield f"{prefix}.{f.name}", getattr(self, f.name)


def _uniform(rng, shape, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(shape[0])
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


@dataclass
class ModelParams:
    """Every trainable parameter group, in a fixed named order."""

    word_emb: Tensor
    utt_fwd: GruCellParams
    utt_bwd: GruCellParams
    ctx_fwd: GruCellParams
    ctx_bwd: GruCellParams
    user_emb: Tensor
    pos_emb: Tensor
    msg_cell: GruCellParams | None
    upd_cell: GruCellParams | None
    gcn_w_self: Tensor | None
    gcn_w_msg: Tensor | None
    gcn_bias: Tensor | None
    ggat_w_msg: Tensor | None
    ggat_attn: Tensor | None
    decision_layers: list  # of (w, b) pairs; empty when decision is disabled
    dec_init_w: Tensor = None
    dec_init_b: Tensor = None
    dec_cell: GruCellParams = None
    out_w: Tensor = None
    out_b: Tensor = None

    def named_tensors(self):
        yield "word_emb", self.word_emb
        yield from self.utt_fwd.named("utt_fwd")
        yield from self.utt_bwd.named("utt_bwd")
        yield from self.ctx_fwd.named("ctx_fwd")
        yield from self.ctx_bwd.named("ctx_bwd")
        yield "user_emb", self.user_emb
        yield "pos_emb", self.pos_emb
        if self.msg_cell is not None:
            yield from self.msg_cell.named("msg_cell")
        if self.upd_cell is not None:
            yield from self.upd_cell.named("upd_cell")
        if self.gcn_w_self is not None:
            yield "gcn.w_self", self.gcn_w_self
            yield "gcn.w_msg", self.gcn_w_msg
            yield "gcn.bias", self.gcn_bias
        if self.ggat_w_msg is not None:
            yield "ggat.w_msg", self.ggat_w_msg
            yield "ggat.attn", self.ggat_attn
        for i, (w, b) in enumerate(self.decision_layers):
            yield f"decision.{i}.w", w
            yield f"decision.{i}.b", b
        yield "decoder.init_w", self.dec_init_w
        yield "decoder.init_b", self.dec_init_b
        yield from self.dec_cell.named("decoder.cell")
        yield "out_proj.w", self.out_w
        yield "out_proj.b", self.out_b

    @property
    def dtype(self):
        return self.word_emb.dtype

    @property
    def vocab_size(self) -> int:
        return self.word_emb.shape[0]


def init_params(cfg: Config, vocab_size: int, rng: np.random.Generator,
                dtype=np.float32) -> ModelParams:
    h, dw = cfg.d_hidden, cfg.d_word
    d_aug, d_top = cfg.d_aug, cfg.d_top

    msg_cell = upd_cell = None
    gcn_w_self = gcn_w_msg = gcn_bias = None
    ggat_w_msg = ggat_attn = None
    if cfg.encoder_mode == "dggnn":
        msg_cell = GruCellParams.init(d_aug, d_aug, rng, dtype)
        upd_cell = GruCellParams.init(d_aug, d_aug, rng, dtype)
    elif cfg.encoder_mode == "gcn":
        gcn_w_self = _uniform(rng, (d_aug, d_aug), dtype)
        gcn_w_msg = _uniform(rng, (d_aug, d_aug), dtype)
        gcn_bias = Tensor(np.zeros(d_aug, dtype=dtype), requires_grad=True)
    elif cfg.encoder_mode == "ggat":
        ggat_w_msg = _uniform(rng, (d_aug, d_aug), dtype)
        ggat_attn = _uniform(rng, (2 * d_aug, 1), dtype)
        upd_cell = GruCellParams.init(d_aug, d_aug, rng, dtype)

    decision_layers = []
    if cfg.decision_enabled:
        dims = (d_top + cfg.d_user,) + cfg.decision_hidden + (1,)
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            decision_layers.append((
                _uniform(rng, (d_in, d_out), dtype),
                Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True),
            ))

    return ModelParams(
        word_emb=_uniform(rng, (vocab_size, dw), dtype),
        utt_fwd=GruCellParams.init(dw, h, rng, dtype),
        utt_bwd=GruCellParams.init(dw, h, rng, dtype),
        ctx_fwd=GruCellParams.init(cfg.d_ctx, h, rng, dtype),
        ctx_bwd=GruCellParams.init(cfg.d_ctx, h, rng, dtype),
        user_emb=_uniform(rng, (2, cfg.d_user), dtype),
        pos_emb=_uniform(rng, (cfg.max_pos, cfg.d_pos), dtype),
        msg_cell=msg_cell,
        upd_cell=upd_cell,
        gcn_w_self=gcn_w_self,
        gcn_w_msg=gcn_w_msg,
        gcn_bias=gcn_bias,
        ggat_w_msg=ggat_w_msg,
        ggat_attn=ggat_attn,
        decision_layers=decision_layers,
        dec_init_w=_uniform(rng, (1 + cfg.d_ctx + d_top, h), dtype),
        dec_init_b=Tensor(np.zeros(h, dtype=dtype), requires_grad=True),
        dec_cell=GruCellParams.init(dw, h, rng, dtype),
        out_w=_uniform(rng, (h, vocab_size), dtype),
        out_b=Tensor(np.zeros(vocab_size, dtype=dtype), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# recurrent cells and encoders


def gru_cell(p: GruCellParams, x: Tensor, h: Tensor) -> Tensor:
    """One GRU step on a row batch: z and r gate the blend of past state and
    the tanh candidate computed from [r * h, x]."""
    hx = T.concat([h, x], axis=-1)
    z = T.sigmoid(T.affine(hx, p.w_z, p.b_z))
    r = T.sigmoid(T.affine(hx, p.w_r, p.b_r))
    cand = T.tanh(T.affine(T.concat([r * h, x], axis=-1), p.w_h, p.b_h))
    return (1.0 - z) * h + z * cand


def _rows(x) -> Tensor:
    return x if x.ndim == 2 else T.reshape(x, (1, -1))


def message(params: ModelParams, h_i: Tensor, h_j: Tensor) -> Tensor:
    """First gate: the message GRU reads the receiving node as input and the
    neighbor as hidden state, so the reset gate filters the neighbor."""
    if h_i.shape != h_j.shape:
        raise T.ShapeError(f"message: feature shapes {h_i.shape} != {h_j.shape}")
    return gru_cell(params.msg_cell, _rows(h_i), _rows(h_j))


def encode_utterances(params: ModelParams, tokens: np.ndarray,
                      lengths: np.ndarray) -> Tensor:
    """Bidirectional word-level encoding of ``tokens`` (rows of token ids,
    PAD-padded); returns one sentence embedding row per utterance."""
    if tokens.ndim != 2:
        raise T.ShapeError("encode_utterances expects a (utts, tokens) matrix")
    if (lengths < 1).any():
        raise ValueError("every utterance needs at least one token")
    n, L = tokens.shape
    dtype = params.dtype
    h = params.utt_fwd.b_z.shape[0]
    # reversed copy: each row's valid prefix flipped, padding kept at the end
    rev = np.full_like(tokens, PAD)
    for i in range(n):
        rev[i, : lengths[i]] = tokens[i, : lengths[i]][::-1]
    masks = [Tensor((t < lengths).astype(dtype).reshape(n, 1)) for t in range(L)]
    h_f = T.zeros((n, h), dtype=dtype)
    h_b = T.zeros((n, h), dtype=dtype)
    for t in range(L):
        x_f = T.gather_rows(params.word_emb, tokens[:, t])
        x_b = T.gather_rows(params.word_emb, rev[:, t])
        h_f = masks[t] * gru_cell(params.utt_fwd, x_f, h_f) + (1.0 - masks[t]) * h_f
        h_b = masks[t] * gru_cell(params.utt_bwd, x_b, h_b) + (1.0 - masks[t]) * h_b
    return T.concat([h_f, h_b], axis=-1)


def encode_utterance(params: ModelParams, token_ids) -> Tensor:
    """Single-utterance convenience wrapper; returns a (2*d_hidden,) vector."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot encode an empty utterance")
    u = encode_utterances(params, ids.reshape(1, -1), np.array([ids.size]))
    return T.reshape(u, (-1,))


def encode_contexts(params: ModelParams, u: Tensor,
                    sample_sizes: list[int]) -> Tensor:
    """Bidirectional utterance-level encoding.

    ``u`` stacks the sentence embeddings of all samples' context utterances
    (sample-major); ``sample_sizes`` gives each sample's turn count. Returns
    contextual embeddings aligned with the rows of ``u``.
    """
    B = len(sample_sizes)
    sizes = np.asarray(sample_sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    m_max = int(sizes.max())
    dtype = params.dtype
    h = params.ctx_fwd.b_z.shape[0]
    # idx[b, p] = row of u for sample b, position p (0 for padding)
    idx = np.zeros((B, m_max), dtype=np.int64)
    for b in range(B):
        idx[b, : sizes[b]] = offsets[b] + np.arange(sizes[b])
    masks = [Tensor((p < sizes).astype(dtype).reshape(B, 1)) for p in range(m_max)]
    h_f = T.zeros((B, h), dtype=dtype)
    states_f = []
    for p in range(m_max):
        x = T.gather_rows(u, idx[:, p])
        h_f = masks[p] * gru_cell(params.ctx_fwd, x, h_f) + (1.0 - masks[p]) * h_f
        states_f.append(h_f)
    h_b = T.zeros((B, h), dtype=dtype)
    states_b = [None] * m_max
    for p in range(m_max - 1, -1, -1):
        # backward pass enters each sample at its own last turn
        active = Tensor((p < sizes).astype(dtype).reshape(B, 1))
        x = T.gather_rows(u, idx[:, p])
        h_b = active * gru_cell(params.ctx_bwd, x, h_b) + (1.0 - active) * h_b
        states_b[p] = h_b
    stacked_f = T.concat(states_f, axis=0)  # (m_max*B, h), step-major
    stacked_b = T.concat(states_b, axis=0)
    node_idx = np.concatenate(
        [np.arange(sizes[b]) * B + b for b in range(B)]
    )
    return T.concat(
        [T.gather_rows(stacked_f, node_idx), T.gather_rows(stacked_b, node_idx)],
        axis=-1,
    )


def encode_context(params: ModelParams, u: Tensor) -> Tensor:
    """Single-sample wrapper: (m, 2h) sentence embeddings -> (m, 2h) context."""
    return encode_contexts(params, u, [u.shape[0]])


def augment(params: ModelParams, cfg: Config, h0: Tensor,
            speakers: np.ndarray, positions: np.ndarray) -> Tensor:
    """Append user and position embeddings to each context row; positions are
    1-based and clamp to the last embedding row."""
    spk = np.asarray(speakers)
    if spk.size and (spk.min() < 0 or spk.max() >= params.user_emb.shape[0]):
        raise T.IndexRangeError("augment: speaker index out of range")
    pos = np.minimum(np.asarray(positions), cfg.max_pos - 1)
    return T.concat(
        [_rows(h0), T.gather_rows(params.user_emb, spk),
         T.gather_rows(params.pos_emb, pos)],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# graph layers (operate on one merged edge list; shared parameters across layers)


def _merge_graphs(graphs: list[ConvGraph]) -> tuple[np.ndarray, np.ndarray, int]:
    """Union the per-sample DAGs into one 0-based edge list with node offsets."""
    src, dst = [], []
    offset = 0
    for g in graphs:
        for s, d in sorted(g.edges):
            src.append(offset + s - 1)
            dst.append(offset + d - 1)
        offset += g.n
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64), offset


def _mean_agg_matrix(dst: np.ndarray, n_nodes: int, n_edges: int, dtype) -> Tensor:
    """Constant (nodes, edges) matrix whose product with the per-edge messages
    is the in-neighbor mean; neighborless nodes get the zero vector."""
    m = np.zeros((n_nodes, n_edges), dtype=dtype)
    indeg = np.bincount(dst, minlength=n_nodes)
    for e, d in enumerate(dst):
        m[d, e] = 1.0 / indeg[d]
    return Tensor(m)


def layer_dggnn(params: ModelParams, feats: Tensor, src: np.ndarray,
                dst: np.ndarray) -> Tensor:
    """Double-gated layer: message GRU per edge, mean over in-neighbors,
    update GRU blending the aggregate into the node state."""
    n = feats.shape[0]
    if len(src):
        h_i = T.gather_rows(feats, dst)
        h_j = T.gather_rows(feats, src)
        msgs = gru_cell(params.msg_cell, h_i, h_j)
        agg = T.matmul(_mean_agg_matrix(dst, n, len(src), feats.dtype), msgs)
    else:
        agg = T.zeros(feats.shape, dtype=feats.dtype)
    return gru_cell(params.upd_cell, feats, agg)


def layer_gcn(params: ModelParams, feats: Tensor, src: np.ndarray,
              dst: np.ndarray) -> Tensor:
    """Ablation: linear message, mean aggregate, linear update with relu."""
    n = feats.shape[0]
    self_part = T.matmul(feats, params.gcn_w_self)
    if len(src):
        msgs = T.gather_rows(T.matmul(feats, params.gcn_w_msg), src)
        agg = T.matmul(_mean_agg_matrix(dst, n, len(src), feats.dtype), msgs)
        pre = self_part + agg
    else:
        pre = self_part
    return T.relu(pre + params.gcn_bias)


def layer_ggat(params: ModelParams, feats: Tensor, src: np.ndarray,
               dst: np.ndarray) -> Tensor:
    """Ablation: attention-weighted linear messages, gated update kept."""
    n = feats.shape[0]
    if len(src):
        proj = T.matmul(feats, params.ggat_w_msg)
        p_i = T.gather_rows(proj, dst)
        p_j = T.gather_rows(proj, src)
        scores = T.leaky_relu(T.matmul(T.concat([p_i, p_j], axis=-1), params.ggat_attn))
        alpha = T.segment_softmax(T.reshape(scores, (-1,)), dst, n)
        weighted = p_j * T.reshape(alpha, (-1, 1))
        # 0/1 incidence matrix sums the weighted messages per target node
        inc = np.zeros((n, len(src)), dtype=feats.dtype)
        inc[dst, np.arange(len(src))] = 1.0
        agg = T.matmul(Tensor(inc), weighted)
    else:
        agg = T.zeros(feats.shape, dtype=feats.dtype)
    return gru_cell(params.upd_cell, feats, agg)


_LAYERS = {"dggnn": layer_dggnn, "gcn": layer_gcn, "ggat": layer_ggat}


def run_graph_encoder(params: ModelParams, cfg: Config, feats: Tensor,
                      src: np.ndarray, dst: np.ndarray) -> Tensor:
    layer = _LAYERS[cfg.encoder_mode]
    for _ in range(cfg.gnn_layers):
        feats = layer(params, feats, src, dst)
    return feats


def attention_weights(params: ModelParams, feats: Tensor, src: np.ndarray,
                      dst: np.ndarray) -> np.ndarray:
    """Per-edge attention coefficients of one ggat layer (diagnostics)."""
    proj = T.matmul(feats, params.ggat_w_msg)
    p_i = T.gather_rows(proj, dst)
    p_j = T.gather_rows(proj, src)
    scores = T.leaky_relu(T.matmul(T.concat([p_i, p_j], axis=-1), params.ggat_attn))
    return T.segment_softmax(T.reshape(scores, (-1,)), dst, feats.shape[0]).data


# ---------------------------------------------------------------------------
# generator


def decide(params: ModelParams, cfg: Config, h_last: Tensor, agent_idx,
           mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """Speak probability from the final-layer feature of the last turn plus
    the agent's user embedding. Raises when the decision head is disabled."""
    if not cfg.decision_enabled:
        raise RuntimeError("decide() called but decision_enabled is false")
    agents = np.atleast_1d(np.asarray(agent_idx))
    x = T.concat([_rows(h_last), T.gather_rows(params.user_emb, agents)], axis=-1)
    train = mode == "train"
    for w, b in params.decision_layers[:-1]:
        x = T.relu(T.affine(x, w, b))
        x = T.dropout(x, cfg.dropout, train, rng)
    w, b = params.decision_layers[-1]
    return T.sigmoid(T.affine(x, w, b))


def decode_init(params: ModelParams, t, h0_last: Tensor, hk_last: Tensor) -> Tensor:
    """Decoder start state: tanh of a linear map over [t; h^0_m; h^K_m]."""
    h0r, hkr = _rows(h0_last), _rows(hk_last)
    t_col = Tensor(np.asarray(t, dtype=h0r.dtype).reshape(-1, 1)) \
        if not isinstance(t, Tensor) else _rows(t)
    x = T.concat([t_col, h0r, hkr], axis=-1)
    return T.tanh(T.affine(x, params.dec_init_w, params.dec_init_b))


def decode_step(params: ModelParams, prev_tokens, hidden: Tensor):
    """One teacher-forcing/inference step: embed the previous token, advance
    the decoder GRU, project to vocabulary logits."""
    idx = np.atleast_1d(np.asarray(prev_tokens))
    x = T.gather_rows(params.word_emb, idx)
    h = gru_cell(params.dec_cell, x, _rows(hidden))
    logits = T.affine(h, params.out_w, params.out_b)
    return logits, h


# ---------------------------------------------------------------------------
# full forward pass


@dataclass
class ForwardOutput:
    """Everything downstream losses and metrics need from one batch pass."""

    speak_prob: Tensor | None  # (B, 1) or None when the decision head is off
    gen_loss_sum: Tensor  # scalar, sum of masked token cross-entropies
    token_count: int
    h0_last: Tensor  # (B, 2h)
    hk_last: Tensor  # (B, d_top)


def forward_batch(params: ModelParams, cfg: Config, batch: Batch,
                  mode: str = "eval",
                  rng: np.random.Generator | None = None) -> ForwardOutput:
    """Encode the whole batch, score the decision, and teacher-force the
    decoder against the gold replies (conditioned on the gold decision)."""
    dtype = params.dtype
    sizes = [tok.shape[0] for tok in batch.ctx_tokens]
    tokens = _pad_stack(batch.ctx_tokens)
    lengths = np.concatenate(batch.ctx_lengths)
    u = encode_utterances(params, tokens, lengths)
    h0 = encode_contexts(params, u, sizes)

    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    last_idx = offsets + np.asarray(sizes) - 1

    if cfg.encoder_mode == "none":
        hk = h0
    else:
        speakers = np.concatenate(batch.speakers)
        positions = np.concatenate(batch.positions)
        feats = augment(params, cfg, h0, speakers, positions)
        graphs = [build_graph([u_.speaker for u_ in s.context]) for s in batch.samples]
        src, dst, _ = _merge_graphs(graphs)
        hk = run_graph_encoder(params, cfg, feats, src, dst)

    h0_last = T.gather_rows(h0, last_idx)
    hk_last = T.gather_rows(hk, last_idx)

    speak_prob = None
    if cfg.decision_enabled:
        speak_prob = decide(params, cfg, hk_last, batch.agents, mode=mode, rng=rng)

    # teacher forcing, conditioned on the gold decision label
    B, R = batch.replies.shape
    t_cond = batch.decisions.astype(dtype).reshape(B, 1)
    h = decode_init(params, t_cond, h0_last, hk_last)
    inputs = np.concatenate(
        [np.full((B, 1), SOS, dtype=np.int64), batch.replies[:, :-1]], axis=1
    )
    gen_loss = None
    for j in range(R):
        logits, h = decode_step(params, inputs[:, j], h)
        step_mask = (j < batch.reply_lengths).astype(np.float64)
        step_loss = T.xent_rows(logits, batch.replies[:, j], step_mask)
        gen_loss = step_loss if gen_loss is None else gen_loss + step_loss
    return ForwardOutput(
        speak_prob=speak_prob,
        gen_loss_sum=gen_loss,
        token_count=int(batch.reply_lengths.sum()),
        h0_last=h0_last,
        hk_last=hk_last,
    )


def _pad_stack(mats: list[np.ndarray]) -> np.ndarray:
    width = max(m.shape[1] for m in mats)
    rows = sum(m.shape[0] for m in mats)
    out = np.full((rows, width), PAD, dtype=np.int64)
    at = 0
    for m in mats:
        out[at : at + m.shape[0], : m.shape[1]] = m
        at += m.shape[0]
    return out


def generate(params: ModelParams, cfg: Config, batch: Batch,
             mode: str = "greedy",
             rng: np.random.Generator | None = None,
             threshold: float | None = None):
    """Run the full pipeline for one sample and produce a reply.

    Returns (decision, token index list, speak probability). When the model
    keeps silence the reply is the bare silence token. Greedy decoding breaks
    argmax ties toward the lowest index; ``mode='sample'`` draws from the
    softmax using ``rng``.
    """
    if len(batch) != 1:
        raise ValueError("generate expects a single-sample batch")
    thr = cfg.threshold if threshold is None else threshold
    out = forward_batch(params, cfg, batch, mode="eval")
    if cfg.decision_enabled:
        prob = float(out.speak_prob.data[0, 0])
        decision = 1 if prob >= thr else 0
    else:
        prob, decision = None, 1
    if decision == 0:
        return 0, [SILENCE], prob
    h = decode_init(params, np.array([float(decision)]), out.h0_last, out.hk_last)
    prev = SOS
    reply: list[int] = []
    for _ in range(cfg.max_decode_len):
        logits, h = decode_step(params, prev, h)
        row = logits.data[0]
        if mode == "sample":
            if rng is None:
                raise ValueError("sampling mode needs an rng")
            e = np.exp(row - row.max())
            prev = int(rng.choice(len(row), p=e / e.sum()))
        else:
            prev = int(np.argmax(row))
        if prev == EOS:
            break
        reply.append(prev)
    return 1, reply, prob
