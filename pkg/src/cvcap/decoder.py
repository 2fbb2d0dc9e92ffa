"""LSTM caption decoder, teacher-forced loss, greedy and beam-search decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConfigurationError,
    Parameter,
    Tensor,
    concat,
    cross_entropy,
    dropout,
    hadamard,
    linear,
    matmul,
    no_grad,
    select,
    sigmoid,
    take_rows,
    tanh,
)


class CaptionError(ValueError):
    pass


@dataclass
class DecoderState:
    h: Tensor  # (B, hidden)
    c: Tensor  # (B, hidden)
    t: int = 0

    @classmethod
    def zeros(cls, batch, hidden_dim):
        return cls(Tensor(np.zeros((batch, hidden_dim))), Tensor(np.zeros((batch, hidden_dim))), 0)

    def take(self, idx):
        return DecoderState(Tensor(self.h.data[idx]), Tensor(self.c.data[idx]), self.t)


class LstmDecoder:
    """Single-layer LSTM over [visual representation ; word embedding]."""

    def __init__(self, vocab_size, embed_dim, hidden_dim, rep_dim, seed=0, dropout_rate=0.5):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.rep_dim = rep_dim
        self.dropout_rate = dropout_rate
        rng = np.random.default_rng(seed)
        d_in = rep_dim + embed_dim
        hb = 1.0 / np.sqrt(hidden_dim)
        self.embedding = Parameter(rng.normal(0.0, 0.1, size=(vocab_size, embed_dim)), "dec.embedding")
        self.w_x = Parameter(rng.uniform(-1, 1, size=(d_in, 4 * hidden_dim)) / np.sqrt(d_in), "dec.lstm.w_x")
        self.w_h = Parameter(rng.uniform(-hb, hb, size=(hidden_dim, 4 * hidden_dim)), "dec.lstm.w_h")
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate
        self.b = Parameter(bias, "dec.lstm.bias")
        self.w_out = Parameter(rng.uniform(-hb, hb, size=(hidden_dim, vocab_size)), "dec.out.weight")
        self.b_out = Parameter(np.zeros(vocab_size), "dec.out.bias")

    def parameters(self):
        return [self.embedding, self.w_x, self.w_h, self.b, self.w_out, self.b_out]


def lstm_step(f_g_att, x_prev, state, dec, training=False, rng=None):
    """One LSTM step. Gate layout in the fused matrices is (i, f, g, o)."""
    x_prev = np.atleast_1d(np.asarray(x_prev, dtype=np.int64))
    if x_prev.min() < 0 or x_prev.max() >= dec.vocab_size:
        raise CaptionError(f"token id out of range [0, {dec.vocab_size})")
    emb = take_rows(dec.embedding, x_prev)
    z = matmul(concat([f_g_att, emb], axis=1), dec.w_x) + matmul(state.h, dec.w_h) + dec.b
    hd = dec.hidden_dim
    i, f, g, o = (select(z, (slice(None), slice(k * hd, (k + 1) * hd))) for k in range(4))
    c = hadamard(sigmoid(f), state.c) + hadamard(sigmoid(i), tanh(g))
    h = hadamard(sigmoid(o), tanh(c))
    logits = linear(dropout(h, dec.dropout_rate, training, rng), dec.w_out, dec.b_out)
    return DecoderState(h, c, state.t + 1), logits


def _check_captions(tokens, bos, eos, pad):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.shape[1] < 2:
        raise CaptionError("caption needs at least BOS and one more token")
    if np.any(tokens[:, 0] != bos):
        raise CaptionError("caption must start with BOS")
    for row in tokens:
        pads = row == pad
        end = int(np.argmax(pads)) if pads.any() else row.size
        if not pads[end:].all():
            raise CaptionError("padding must be trailing")
        if row[end - 1] != eos:
            raise CaptionError("caption must end with EOS")
    return tokens


def teacher_forced_loss(model, fm, captions, training=False, rng=None, reduction="mean"):
    """Negative log-likelihood of ground-truth captions under teacher forcing.

    captions: (B, T) token ids, BOS first, trailing PAD allowed.
    reduction="sum": per-sequence sum averaged over the batch.
    reduction="mean": mean over every non-pad target token.
    """
    tokens = _check_captions(captions, model.bos_id, model.eos_id, model.pad_id)
    b, t_len = tokens.shape
    cache = model.prepare(fm)
    state = DecoderState.zeros(b, model.hidden_dim)
    total = None
    for t in range(t_len - 1):
        targets = tokens[:, t + 1]
        mask = (targets != model.pad_id).astype(np.float64)
        if not mask.any():
            break
        state, logits = model.step(cache, tokens[:, t], state, training, rng)
        step_loss = cross_entropy(logits, np.where(mask > 0, targets, 0), mask)
        total = step_loss if total is None else total + step_loss
    if reduction == "sum":
        return total / float(b)
    if reduction == "mean":
        return total / float((tokens[:, 1:] != model.pad_id).sum())
    raise ConfigurationError(f"unknown reduction {reduction!r}")


@dataclass
class CaptionHypothesis:
    tokens: tuple
    log_prob: float
    state: DecoderState = field(default=None, repr=False)
    finished: bool = False


def _log_softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def greedy_decode(model, fm, max_len):
    """Argmax decoding from BOS; ties go to the lowest token id."""
    with no_grad():
        cache = model.prepare(fm)
        state = DecoderState.zeros(1, model.hidden_dim)
        prev, tokens, lp = model.bos_id, [], 0.0
        for _ in range(max_len):
            state, logits = model.step(cache, [prev], state)
            logp = _log_softmax_rows(logits.data)[0]
            prev = int(np.argmax(logp))
            tokens.append(prev)
            lp += float(logp[prev])
            if prev == model.eos_id:
                break
        return CaptionHypothesis(tuple(tokens), lp, state, True)


def beam_search(model, fm, beam_size, max_len):
    """Beam search without length normalization.

    Each step keeps the ``beam_size`` best expansions of the live beams;
    expansions ending in EOS, or reaching ``max_len``, retire to the pool.
    Ties are broken by lexicographic token order.
    """
    if beam_size <= 0:
        raise ConfigurationError(f"beam_size must be positive, got {beam_size}")
    if max_len <= 0:
        raise ConfigurationError(f"max_len must be positive, got {max_len}")
    with no_grad():
        cache = model.prepare(fm)
        live = [CaptionHypothesis((), 0.0, DecoderState.zeros(1, model.hidden_dim))]
        done = []
        for step in range(max_len):
            k = len(live)
            idx = np.zeros(k, dtype=np.int64)
            tiled = model.take_cache(cache, idx)
            state = DecoderState(
                Tensor(np.concatenate([hyp.state.h.data for hyp in live])),
                Tensor(np.concatenate([hyp.state.c.data for hyp in live])),
                step,
            )
            prev = [hyp.tokens[-1] if hyp.tokens else model.bos_id for hyp in live]
            state, logits = model.step(tiled, prev, state)
            logp = _log_softmax_rows(logits.data)
            cands = []
            for r, hyp in enumerate(live):
                for v in range(logp.shape[1]):
                    cands.append((hyp.log_prob + float(logp[r, v]), hyp.tokens + (v,), r))
            cands.sort(key=lambda c: (-c[0], c[1]))
            live = []
            for score, toks, r in cands[:beam_size]:
                finished = toks[-1] == model.eos_id or len(toks) == max_len
                hyp = CaptionHypothesis(toks, score, state.take([r]), finished)
                (done if finished else live).append(hyp)
            if not live:
                break
            if len(done) >= beam_size:
                done.sort(key=lambda hyp: (-hyp.log_prob, hyp.tokens))
                # no live beam can climb above a completed one: log-probs only fall
                if done[beam_size - 1].log_prob >= max(h.log_prob for h in live):
                    break
    # the greedy path can fall off the beam; keeping it makes the top result
    # never worse than greedy decoding
    greedy = greedy_decode(model, fm, max_len)
    if all(h.tokens != greedy.tokens for h in done):
        done.append(greedy)
    done.sort(key=lambda hyp: (-hyp.log_prob, hyp.tokens))
    return done[:beam_size]
