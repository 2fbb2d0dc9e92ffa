"""Residuals-assisted encoder: pooled views, spatial attention, temporal gate.

All tensors carry a leading batch axis: feature maps are (B, N, H, W, D)
and decoder hidden states are (B, hidden_dim).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .features import FeatureMaps
from .netpbm import upsample_nearest, write_netpbm
from .tensor import (
    ConfigurationError,
    Parameter,
    Tensor,
    conv2d,
    dropout,
    expand,
    hadamard,
    linear,
    matmul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax_over_axes,
    tanh,
)


class Variant(str, enum.Enum):
    IFRAME_ONLY = "IFRAME_ONLY"
    NO_GATE_NO_RESIDUALS = "NO_GATE_NO_RESIDUALS"
    NO_GATE = "NO_GATE"
    FULL = "FULL"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ConfigurationError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}") from None

    @property
    def uses_residuals(self):
        return self in (Variant.FULL, Variant.NO_GATE)

    @property
    def uses_attention(self):
        return self is not Variant.IFRAME_ONLY


# ablation table row labels, in table order
VARIANT_LABELS = {
    Variant.IFRAME_ONLY: "I-frame",
    Variant.NO_GATE_NO_RESIDUALS: "RAE w/o gate and residuals",
    Variant.NO_GATE: "RAE w/o gate",
    Variant.FULL: "RAE(full)",
}


@dataclass
class PooledViews:
    v_i_c: Tensor  # (B, N, D_I)
    a_r_c: Tensor  # (B, N, D_r) or None
    v_i_conv: Tensor  # (B, N, H, W, D_r)
    v_i_s: Tensor  # (B, N, H, W)
    a_r_s: Tensor  # (B, N, H, W) or None


@dataclass
class SamParams:
    w_t: Parameter  # (hidden, H*W)
    b_t: Parameter  # (H*W,)
    w_i: Parameter  # scalar
    w_r: Parameter  # scalar

    def parameters(self):
        return [self.w_t, self.b_t, self.w_i, self.w_r]


@dataclass
class TgmParams:
    w_g: Parameter  # (d_gate, 1)
    b_g: Parameter  # (1,)
    w_gt: Parameter  # (hidden, d_gate)
    b_gt: Parameter  # (d_gate,)
    w_gr: Parameter  # (D_r, d_gate)
    w_gi_gate: Parameter  # (D_I, d_gate)
    w_gi_fuse: Parameter  # (D_I, D_I)

    def parameters(self):
        return [self.w_g, self.b_g, self.w_gt, self.b_gt, self.w_gr, self.w_gi_gate, self.w_gi_fuse]


@dataclass
class AttentionState:
    alpha_r: Tensor  # (B, N, H, W), tanh range
    a_big_r: Tensor  # (B, N, H, W), sums to 1 per frame
    f_r_att: Tensor  # (B, N, D_r)


def pool_views(fm, reduce_kernel):
    """Spatial means, 1x1 channel reduction and channel means of the features.

    ``reduce_kernel`` is the (1, 1, D_I, D_r) kernel, or None when the
    caller only needs the spatial means (I-frame-only model).
    """
    v_i = fm.v_i
    b, n, h, w, d_i = v_i.shape
    v_i_c = reduce_mean(v_i, (2, 3))
    a_r_c = a_r_s = None
    if fm.a_r is not None:
        a_r_c = reduce_mean(fm.a_r, (2, 3))
        a_r_s = reduce_mean(fm.a_r, 4)
    v_i_conv = v_i_s = None
    if reduce_kernel is not None:
        flat = reshape(v_i, (b * n, h, w, d_i))
        v_i_conv = reshape(conv2d(flat, reduce_kernel), (b, n, h, w, reduce_kernel.shape[3]))
        v_i_s = reduce_mean(v_i_conv, 4)
    return PooledViews(v_i_c, a_r_c, v_i_conv, v_i_s, a_r_s)


def sam_static(pv, params, ablate_residuals):
    """The h-independent part of the attention logits."""
    s = pv.v_i_s * params.w_i
    if not ablate_residuals:
        if pv.a_r_s is None:
            raise ConfigurationError("residual features required unless residuals are ablated")
        s = s + pv.a_r_s * params.w_r
    return s


def sam_dynamic(static, pv, h_prev, params, attention_norm="literal"):
    b, n, h, w = static.shape
    ctx = reshape(linear(h_prev, params.w_t, params.b_t), (b, h, w))
    alpha = tanh(expand(ctx, (b, n, h, w), new_axes=(1,)) + static)
    att = softmax_over_axes(alpha, (2, 3))
    weighted = hadamard(expand(att, pv.v_i_conv.shape, new_axes=(4,)), pv.v_i_conv)
    if attention_norm == "literal":
        f_r = reduce_mean(weighted, (2, 3))
    elif attention_norm == "sum":
        f_r = reduce_sum(weighted, (2, 3))
    else:
        raise ConfigurationError(f"unknown attention_norm {attention_norm!r}")
    return AttentionState(alpha, att, f_r)


def sam_forward(pv, h_prev, params, ablate_residuals=False, attention_norm="literal"):
    return sam_dynamic(sam_static(pv, params, ablate_residuals), pv, h_prev, params, attention_norm)


def tgm_static(pv, params):
    gate_in = matmul(pv.v_i_c, params.w_gi_gate)
    if pv.a_r_c is not None:
        gate_in = gate_in + matmul(pv.a_r_c, params.w_gr)
    return gate_in, matmul(pv.v_i_c, params.w_gi_fuse)


def tgm_dynamic(gate_in, base_proj, att_proj, h_prev, params):
    b, n, dg = gate_in.shape
    ctx = expand(linear(h_prev, params.w_gt, params.b_gt), (b, n, dg), new_axes=(1,))
    gate = sigmoid(linear(ctx + gate_in, params.w_g, params.b_g))  # (B, N, 1)
    g = expand(gate, base_proj.shape)
    out = hadamard(g, att_proj) + hadamard(1.0 - g, base_proj)
    return out, reshape(gate, (b, n))


def tgm_forward(pv, att, h_prev, params, w_gr_fuse, return_gate=False):
    """Per-frame gated blend of the attended and the plain pooled feature."""
    gate_in, base_proj = tgm_static(pv, params)
    att_proj = matmul(att.f_r_att, w_gr_fuse)
    out, gate = tgm_dynamic(gate_in, base_proj, att_proj, h_prev, params)
    return (out, gate) if return_gate else out


# ---------------------------------------------------------------- encoder


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class EncoderCache:
    """Step-independent tensors for one batch of videos."""

    pv: PooledViews
    sam_static: Tensor = None
    gate_in: Tensor = None
    base_proj: Tensor = None
    pooled: Tensor = None  # IFRAME_ONLY representation before dropout


class ResidualsAssistedEncoder:
    def __init__(self, d_i, d_r, grid, hidden_dim, rep_dim, d_gate=None, variant=Variant.FULL, seed=0,
                 dropout_rate=0.5, attention_norm="literal"):
        self.variant = Variant.parse(variant)
        self.d_i, self.d_r = d_i, d_r
        self.grid = tuple(grid)
        self.hidden_dim = hidden_dim
        self.rep_dim = rep_dim
        self.d_gate = d_gate or hidden_dim
        self.dropout_rate = dropout_rate
        self.attention_norm = attention_norm
        rng = np.random.default_rng(seed)
        hw = self.grid[0] * self.grid[1]
        self.reduce = self.sam = self.tgm = self.w_gr_fuse = None
        if self.variant.uses_attention:
            self.reduce = Parameter(_uniform(rng, (1, 1, d_i, d_r), d_i), "rae.reduce.weight")
            self.sam = SamParams(
                w_t=Parameter(_uniform(rng, (hidden_dim, hw), hidden_dim), "rae.sam.w_t"),
                b_t=Parameter(np.zeros(hw), "rae.sam.b_t"),
                w_i=Parameter(np.array(1.0), "rae.sam.w_i"),
                w_r=Parameter(np.array(1.0), "rae.sam.w_r", requires_grad=self.variant.uses_residuals),
            )
            self.w_gr_fuse = Parameter(_uniform(rng, (d_r, d_i), d_r), "rae.tgm.w_gr_fuse")
        if self.variant is Variant.FULL:
            dg = self.d_gate
            self.tgm = TgmParams(
                w_g=Parameter(_uniform(rng, (dg, 1), dg), "rae.tgm.w_g"),
                b_g=Parameter(np.zeros(1), "rae.tgm.b_g"),
                w_gt=Parameter(_uniform(rng, (hidden_dim, dg), hidden_dim), "rae.tgm.w_gt"),
                b_gt=Parameter(np.zeros(dg), "rae.tgm.b_gt"),
                w_gr=Parameter(_uniform(rng, (d_r, dg), d_r), "rae.tgm.w_gr"),
                w_gi_gate=Parameter(_uniform(rng, (d_i, dg), d_i), "rae.tgm.w_gi_gate"),
                w_gi_fuse=Parameter(_uniform(rng, (d_i, d_i), d_i), "rae.tgm.w_gi_fuse"),
            )
        self.w_post = Parameter(_uniform(rng, (d_i, rep_dim), d_i), "rae.post.weight")
        self.b_post = Parameter(np.zeros(rep_dim), "rae.post.bias")

    def parameters(self):
        out = []
        if self.reduce is not None:
            out += [self.reduce] + [p for p in self.sam.parameters() if p.requires_grad] + [self.w_gr_fuse]
        if self.tgm is not None:
            out += self.tgm.parameters()
        return out + [self.w_post, self.b_post]

    @property
    def ablate_residuals(self):
        return self.variant is Variant.NO_GATE_NO_RESIDUALS

    def prepare(self, fm):
        if self.variant is Variant.IFRAME_ONLY:
            pv = pool_views(FeatureMaps(fm.v_i), None)
            return EncoderCache(pv, pooled=self._post(reduce_mean(pv.v_i_c, 1)))
        if fm.a_r is not None and not self.variant.uses_residuals:
            fm = FeatureMaps(fm.v_i)
        pv = pool_views(fm, self.reduce)
        cache = EncoderCache(pv, sam_static=sam_static(pv, self.sam, self.ablate_residuals))
        if self.tgm is not None:
            cache.gate_in, cache.base_proj = tgm_static(pv, self.tgm)
        return cache

    def _post(self, pooled_frames):
        return relu(linear(pooled_frames, self.w_post, self.b_post))

    def attend(self, cache, h_prev):
        return sam_dynamic(cache.sam_static, cache.pv, h_prev, self.sam, self.attention_norm)

    def frame_features(self, cache, h_prev):
        """Per-frame fused features (B, N, D_I), plus the attention state."""
        att = self.attend(cache, h_prev)
        att_proj = matmul(att.f_r_att, self.w_gr_fuse)
        if self.tgm is None:
            return att_proj, att, None
        out, gate = tgm_dynamic(cache.gate_in, cache.base_proj, att_proj, h_prev, self.tgm)
        return out, att, gate

    def step(self, cache, h_prev, training=False, rng=None):
        """Visual representation (B, rep_dim) for one decoding step."""
        if self.variant is Variant.IFRAME_ONLY:
            rep = cache.pooled
        else:
            frames, _, _ = self.frame_features(cache, h_prev)
            rep = self._post(reduce_mean(frames, 1))
        return dropout(rep, self.dropout_rate, training, rng)


def rae_step(fm, h_prev, encoder, training=False, rng=None):
    return encoder.step(encoder.prepare(fm), h_prev, training, rng)


def take_cache(cache, idx):
    """Row-select a cache (no gradient), e.g. to tile one video across beams."""

    def sel(t):
        return None if t is None else Tensor(t.data[idx])

    pv = cache.pv
    return EncoderCache(
        PooledViews(sel(pv.v_i_c), sel(pv.a_r_c), sel(pv.v_i_conv), sel(pv.v_i_s), sel(pv.a_r_s)),
        sel(cache.sam_static),
        sel(cache.gate_in),
        sel(cache.base_proj),
        sel(cache.pooled),
    )


# ---------------------------------------------------------------- heatmaps


def write_attention_pgm(path, att_map, height, width):
    """One frame's attention (H, W) as a nearest-upsampled grayscale PGM.

    Values are divided by the frame maximum so the peak is white.
    """
    att_map = np.asarray(att_map, dtype=np.float64)
    peak = att_map.max()
    img = att_map / peak if peak > 0 else att_map
    write_netpbm(path, upsample_nearest(img, height, width))
