"""Strided conv stacks standing in for the two pretrained backbones.

``ConvExtractor`` for I-frames produces ``V_I``; the residual extractor
produces the rough attention map ``A_r``. Both end on the same spatial grid.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ConfigurationError, Parameter, Tensor, conv2d, conv_output_size, no_grad, pointwise, reshape


@dataclass(frozen=True)
class ConvLayer:
    kernel: int
    stride: int
    out_channels: int
    activation: str = "relu"

    @property
    def padding(self):
        return (self.kernel - self.stride) // 2


def desk_stack(out_channels, widths=(8, 16)):
    """56x56 -> 7x7: three k4/s2 layers then a k3/s1 layer."""
    w1, w2 = widths
    return (
        ConvLayer(4, 2, w1),
        ConvLayer(4, 2, w2),
        ConvLayer(4, 2, max(w2, out_channels)),
        ConvLayer(3, 1, out_channels),
    )


@dataclass
class ExtractorConfig:
    d_i: int = 32
    d_r: int = 16
    conv_stack_i: tuple = None
    conv_stack_r: tuple = None
    frozen: bool = False
    # residual frames are centred so "no residual" (0.5) maps to zero input
    input_offset_i: float = 0.0
    input_offset_r: float = 0.5
    bias_i: bool = True
    bias_r: bool = True

    def __post_init__(self):
        if self.d_i < 1 or self.d_r < 1:
            raise ConfigurationError("d_i and d_r must be >= 1")
        if self.conv_stack_i is None:
            self.conv_stack_i = desk_stack(self.d_i)
        if self.conv_stack_r is None:
            self.conv_stack_r = desk_stack(self.d_r)
        self.conv_stack_i = tuple(ConvLayer(*l) if not isinstance(l, ConvLayer) else l for l in self.conv_stack_i)
        self.conv_stack_r = tuple(ConvLayer(*l) if not isinstance(l, ConvLayer) else l for l in self.conv_stack_r)
        if self.conv_stack_i[-1].out_channels != self.d_i or self.conv_stack_r[-1].out_channels != self.d_r:
            raise ConfigurationError("last conv layer must emit d_i / d_r channels")

    def output_grid(self, height, width, which="i"):
        stack = self.conv_stack_i if which == "i" else self.conv_stack_r
        for layer in stack:
            height = conv_output_size(height, layer.kernel, layer.stride, layer.padding)
            width = conv_output_size(width, layer.kernel, layer.stride, layer.padding)
        return height, width


@dataclass
class FeatureMaps:
    """v_i: (B, N, H, W, D_I); a_r: (B, N, H, W, D_r) or None when unused."""

    v_i: Tensor
    a_r: Tensor = None

    def __post_init__(self):
        if self.a_r is not None and self.a_r.shape[:-1] != self.v_i.shape[:-1]:
            raise ConfigurationError(f"feature grids differ: {self.v_i.shape} vs {self.a_r.shape}")

    @property
    def grid(self):
        return self.v_i.shape[2], self.v_i.shape[3]

    def detached(self):
        a_r = None if self.a_r is None else Tensor(self.a_r.data)
        return FeatureMaps(Tensor(self.v_i.data), a_r)

    def take(self, idx):
        a_r = None if self.a_r is None else Tensor(self.a_r.data[idx])
        return FeatureMaps(Tensor(self.v_i.data[idx]), a_r)


class ConvExtractor:
    def __init__(self, stack, in_channels, rng, name, input_offset=0.0, frozen=False, bias=True):
        self.stack = tuple(stack)
        self.name = name
        self.input_offset = input_offset
        self.frozen = frozen
        self.weights, self.biases = [], []
        cin = in_channels
        for k, layer in enumerate(self.stack):
            fan_in = layer.kernel * layer.kernel * cin
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(layer.kernel, layer.kernel, cin, layer.out_channels))
            self.weights.append(Parameter(w, f"{name}.conv{k}.weight", requires_grad=not frozen))
            if bias:
                self.biases.append(Parameter(np.zeros(layer.out_channels), f"{name}.conv{k}.bias", requires_grad=not frozen))
            else:
                self.biases.append(None)
            cin = layer.out_channels

    @property
    def out_channels(self):
        return self.stack[-1].out_channels

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w] if b is None else [w, b]
        return out

    def __call__(self, pixels):
        """pixels (..., H, W, C) in [0, 1] -> Tensor (..., H', W', D)."""
        arr = pixels.data if isinstance(pixels, Tensor) else np.asarray(pixels, dtype=np.float64)
        lead = arr.shape[:-3]
        x = Tensor(arr.reshape((-1,) + arr.shape[-3:]) - self.input_offset)
        if x.shape[0] == 0:
            raise ConfigurationError("no frames to extract")
        ctx = no_grad() if self.frozen else contextlib.nullcontext()
        with ctx:
            for layer, w, b in zip(self.stack, self.weights, self.biases):
                x = conv2d(x, w, layer.stride, layer.padding)
                if b is not None:
                    x = x + b
                if layer.activation != "none":
                    x = pointwise(x, layer.activation)
        return reshape(x, lead + x.shape[1:])


def cnn_i_forward(p_i, extractor):
    return extractor(p_i)


def cnn_r_forward(p_r, extractor):
    return extractor(p_r)


def build_extractors(cfg, in_channels, seed):
    """Seeded, independent initialisation for the I-frame and residual stacks."""
    ss = np.random.SeedSequence(seed)
    rng_i, rng_r = (np.random.default_rng(s) for s in ss.spawn(2))
    cnn_i = ConvExtractor(cfg.conv_stack_i, in_channels, rng_i, "cnn_i", cfg.input_offset_i, cfg.frozen, cfg.bias_i)
    cnn_r = ConvExtractor(cfg.conv_stack_r, in_channels, rng_r, "cnn_r", cfg.input_offset_r, cfg.frozen, cfg.bias_r)
    return cnn_i, cnn_r


# ---------------------------------------------------------------- feature cache


def save_feature_maps(directory, video_id, fm):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {"v_i": fm.v_i.data}
    if fm.a_r is not None:
        arrays["a_r"] = fm.a_r.data
    np.savez(directory / f"{video_id}.npz", **arrays)


def load_feature_maps(directory, video_id):
    with np.load(Path(directory) / f"{video_id}.npz") as z:
        a_r = Tensor(z["a_r"]) if "a_r" in z else None
        return FeatureMaps(Tensor(z["v_i"]), a_r)
