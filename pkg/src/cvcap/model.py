"""The full captioner: two extractors, the encoder and the LSTM decoder."""

from __future__ import annotations

import numpy as np

from .data import BOS_ID, EOS_ID, PAD_ID
from .decoder import LstmDecoder, lstm_step
from .features import ExtractorConfig, FeatureMaps, build_extractors
from .rae import ResidualsAssistedEncoder, take_cache
from .tensor import CheckpointError, Tensor, dump_parameters, load_parameters


class Captioner:
    bos_id = BOS_ID
    eos_id = EOS_ID
    pad_id = PAD_ID

    def __init__(self, cfg, vocab_size, in_channels=None, frame_size=None):
        self.cfg = cfg
        self.variant = cfg.variant
        self.vocab_size = vocab_size
        in_channels = in_channels or cfg.channels
        frame_size = frame_size or (cfg.height, cfg.width)
        s_ext, s_enc, s_dec = np.random.SeedSequence(cfg.seed).generate_state(3)
        self.ext_cfg = ExtractorConfig(cfg.d_i, cfg.d_r, frozen=cfg.frozen)
        self.cnn_i, cnn_r = build_extractors(self.ext_cfg, in_channels, int(s_ext))
        self.cnn_r = cnn_r if self.variant.uses_residuals else None
        grid = self.ext_cfg.output_grid(*frame_size)
        self.encoder = ResidualsAssistedEncoder(
            cfg.d_i, cfg.d_r, grid, cfg.hidden_dim, cfg.rep_dim, cfg.gate_dim, self.variant,
            seed=int(s_enc), dropout_rate=cfg.dropout, attention_norm=cfg.attention_norm,
        )
        self.decoder = LstmDecoder(vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.rep_dim, int(s_dec), cfg.dropout)

    @property
    def hidden_dim(self):
        return self.decoder.hidden_dim

    def extractor_parameters(self):
        out = self.cnn_i.parameters()
        if self.cnn_r is not None:
            out += self.cnn_r.parameters()
        return out

    def all_parameters(self):
        return self.extractor_parameters() + self.encoder.parameters() + self.decoder.parameters()

    def parameters(self):
        return [p for p in self.all_parameters() if p.requires_grad]

    # ------------------------------------------------------------ forward

    def extract(self, p_i, p_r=None):
        """Batched frame stacks (B, N, H, W, C) -> FeatureMaps."""
        v_i = self.cnn_i(p_i)
        a_r = self.cnn_r(p_r) if self.cnn_r is not None and p_r is not None else None
        return FeatureMaps(v_i, a_r)

    def prepare(self, fm):
        return self.encoder.prepare(fm)

    def take_cache(self, cache, idx):
        return take_cache(cache, idx)

    def step(self, cache, prev_tokens, state, training=False, rng=None):
        rep = self.encoder.step(cache, state.h, training, rng)
        return lstm_step(rep, prev_tokens, state, self.decoder, training, rng)

    def first_step_attention(self, fm):
        """A_R (B, N, H, W) at the first decoding step (h_0 = 0)."""
        if not self.variant.uses_attention:
            raise ValueError("the I-frame-only model has no spatial attention")
        cache = self.prepare(fm)
        h0 = Tensor(np.zeros((fm.v_i.shape[0], self.hidden_dim)))
        return self.encoder.attend(cache, h0).a_big_r.data

    # ------------------------------------------------------------ checkpoints

    def state_bytes(self):
        return dump_parameters(self.all_parameters())

    def load_state_bytes(self, blob):
        saved = load_parameters(blob)
        params = {p.name: p for p in self.all_parameters()}
        missing = sorted(set(params) - set(saved))
        extra = sorted(set(saved) - set(params))
        if missing or extra:
            raise CheckpointError(f"checkpoint parameters do not match model (missing {missing}, unexpected {extra})")
        for name, arr in saved.items():
            if arr.shape != params[name].shape:
                raise CheckpointError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {params[name].shape}")
            params[name].data = arr.copy()
