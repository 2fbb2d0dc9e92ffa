"""Random encoder instantiations shared by the unit and acceptance tests."""

import numpy as np

from cvcap.features import FeatureMaps
from cvcap.rae import ResidualsAssistedEncoder, Variant
from cvcap.tensor import Tensor


def random_encoder(rng, variant=Variant.FULL, **overrides):
    dims = dict(
        d_i=int(rng.integers(1, 7)),
        d_r=int(rng.integers(1, 5)),
        grid=(int(rng.integers(1, 5)), int(rng.integers(1, 5))),
        hidden_dim=int(rng.integers(1, 7)),
        rep_dim=int(rng.integers(1, 5)),
        d_gate=int(rng.integers(1, 5)),
    )
    dims.update(overrides)
    enc = ResidualsAssistedEncoder(variant=variant, seed=int(rng.integers(2**31)), dropout_rate=0.0, **dims)
    scale = float(rng.choice([0.1, 1.0, 5.0]))
    for p in enc.parameters():
        p.data = rng.normal(0.0, scale, size=p.shape)
    return enc


def random_features(rng, enc, batch=None, n=None):
    batch = batch or int(rng.integers(1, 4))
    n = n or int(rng.integers(1, 4))
    h, w = enc.grid
    scale = float(rng.choice([0.1, 1.0, 10.0]))
    v_i = Tensor(rng.normal(0.0, scale, size=(batch, n, h, w, enc.d_i)))
    a_r = Tensor(rng.normal(0.0, scale, size=(batch, n, h, w, enc.d_r)))
    h_prev = Tensor(rng.normal(0.0, scale, size=(batch, enc.hidden_dim)))
    return FeatureMaps(v_i, a_r), h_prev


class ToyCaptioner:
    """A fixed visual vector feeding a real LSTM decoder; for search oracles."""

    bos_id, eos_id, pad_id = 0, 1, 2

    def __init__(self, seed, vocab_size=3, hidden=4, rep=3, scale=1.5):
        from cvcap.decoder import LstmDecoder

        rng = np.random.default_rng(seed)
        self.decoder = LstmDecoder(vocab_size, 2, hidden, rep, seed=seed, dropout_rate=0.0)
        for p in self.decoder.parameters():
            p.data = rng.normal(0.0, scale, size=p.shape)
        self.rep = rng.normal(size=(1, rep))
        self.hidden_dim = hidden

    def prepare(self, fm):
        return self.rep

    def take_cache(self, cache, idx):
        return cache[idx]

    def step(self, cache, prev_tokens, state, training=False, rng=None):
        from cvcap.decoder import lstm_step

        return lstm_step(Tensor(cache), prev_tokens, state, self.decoder, training, rng)


def sequence_log_prob(model, tokens):
    from cvcap.decoder import DecoderState

    state = DecoderState.zeros(1, model.hidden_dim)
    prev, total = model.bos_id, 0.0
    for tok in tokens:
        state, logits = model.step(model.rep, [prev], state)
        z = logits.data[0] - logits.data[0].max()
        total += float(z[tok] - np.log(np.exp(z).sum()))
        prev = tok
    return total


def brute_force_best(model, vocab_size, max_len):
    """Exhaustive maximum-likelihood sequence over every legal caption."""
    import itertools

    best = None
    for length in range(1, max_len + 1):
        for seq in itertools.product(range(vocab_size), repeat=length):
            if model.eos_id in seq[:-1]:
                continue
            if length < max_len and seq[-1] != model.eos_id:
                continue
            lp = sequence_log_prob(model, seq)
            if best is None or (lp, tuple(-t for t in seq)) > (best[0], tuple(-t for t in best[1])):
                best = (lp, seq)
    return best
