"""Flat ``key = value`` experiment configuration with a typed schema."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .rae import Variant


class ConfigError(ValueError):
    pass


def _seeds(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(s) for s in text)
    return tuple(int(s) for s in str(text).replace(",", " ").split())


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    # synthetic corpus
    n_train: int = 500
    n_test: int = 100
    frames: int = 16
    height: int = 56
    width: int = 56
    channels: int = 3
    shapes: str = "square,circle,triangle"
    min_count: int = 3
    max_len: int = 12
    # codec and sampling
    gop_size: int = 8
    block_size: int = 8
    search_range: int = 4
    n_samples: int = 2
    residual_mode: str = "first_pframe"
    # extractors
    d_i: int = 32
    d_r: int = 16
    frozen: bool = False
    # encoder / decoder
    hidden_dim: int = 512
    embed_dim: int = 500
    rep_dim: int = 64
    d_gate: int = 0  # 0: same as hidden_dim
    dropout: float = 0.5
    attention_norm: str = "literal"
    variant: Variant = Variant.FULL
    # optimisation and decoding
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    beam_size: int = 5
    ablation_seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.validate()

    def validate(self):
        positive = ("n_train", "n_test", "frames", "height", "width", "max_len", "gop_size", "block_size",
                    "n_samples", "d_i", "d_r", "hidden_dim", "embed_dim", "rep_dim", "batch_size", "beam_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.max_len < 3:
            raise ConfigError("max_len must be >= 3")
        if self.min_count < 1 or self.search_range < 0 or self.epochs < 0 or self.d_gate < 0:
            raise ConfigError("min_count >= 1, search_range >= 0, epochs >= 0, d_gate >= 0 required")
        if self.height % self.block_size or self.width % self.block_size:
            raise ConfigError("frame size must be divisible by block_size")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.residual_mode not in ("first_pframe", "gop_accumulated"):
            raise ConfigError(f"unknown residual_mode {self.residual_mode!r}")
        if self.attention_norm not in ("literal", "sum"):
            raise ConfigError(f"unknown attention_norm {self.attention_norm!r}")
        from .data import SHAPES

        bad = [s for s in self.shape_list if s not in SHAPES]
        if bad or not self.shape_list:
            raise ConfigError(f"unknown shapes {bad}; choose from {SHAPES}")
        if not self.ablation_seeds:
            raise ConfigError("ablation_seeds must not be empty")

    @property
    def shape_list(self):
        return tuple(s.strip() for s in self.shapes.split(",") if s.strip())

    @property
    def gate_dim(self):
        return self.d_gate or self.hidden_dim

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------ text form

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Variant):
                v = v.value
            elif isinstance(v, tuple):
                v = ",".join(str(s) for s in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text, base=None):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = val
        return cls.from_mapping(values, base)

    @classmethod
    def from_mapping(cls, values, base=None):
        schema = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {} if base is None else {f.name: getattr(base, f.name) for f in fields(cls)}
        for key, val in values.items():
            kwargs[key] = _coerce(schema[key], val)
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, base=None):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), base)


def _coerce(f, val):
    kind = {"int": int, "float": float, "bool": _bool, "str": str, "Variant": Variant.parse, "tuple": _seeds}
    name = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        return kind[name](val) if not isinstance(val, str) or name != "int" else int(val, 10)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {f.name}: {val!r} ({exc})") from None
