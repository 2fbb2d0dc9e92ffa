"""Synthetic moving-shape videos with template captions, and text preprocessing."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .codec import RawVideo, dequantize, quantize

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue")
MOTIONS = ("left", "right", "up", "down", "still")

RGB = {"red": (0.9, 0.1, 0.1), "green": (0.1, 0.85, 0.1), "blue": (0.1, 0.2, 0.95)}
# (dy, dx) per frame for unit speed
DIRECTION = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0), "still": (0, 0)}
PHRASE = {"left": "to the left", "right": "to the right", "up": "upwards", "down": "downwards", "still": ""}

BOS, EOS, UNK, PAD = "<BOS>", "<EOS>", "<UNK>", "<PAD>"
SPECIALS = (BOS, EOS, UNK, PAD)
BOS_ID, EOS_ID, UNK_ID, PAD_ID = 0, 1, 2, 3

MOVING_TEMPLATES = (
    "a {color} {shape} moves {motion}",
    "the {color} {shape} is moving {phrase}",
    "a {color} {shape} is sliding {motion}",
)
STILL_TEMPLATES = (
    "a {color} {shape} stays still",
    "the {color} {shape} is not moving",
    "a {color} {shape} sits in place",
)


class SceneError(ValueError):
    pass


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    motion: str
    speed: int = 2
    size: int = 12
    start: tuple = None  # top-left (y, x) of the object's bounding box in frame 0

    def validate(self, frames, dims):
        if self.shape not in SHAPES or self.color not in COLORS or self.motion not in MOTIONS:
            raise SceneError(f"unsupported scene {self}")
        if self.size < 3 or self.speed < 0:
            raise SceneError("size must be >= 3 and speed >= 0")
        for y, x in self.positions(frames, dims):
            if y < 0 or x < 0 or y + self.size > dims[0] or x + self.size > dims[1]:
                raise SceneError(f"object leaves the {dims[0]}x{dims[1]} frame at ({y}, {x})")

    def positions(self, frames, dims):
        start = self.start if self.start is not None else ((dims[0] - self.size) // 2, (dims[1] - self.size) // 2)
        dy, dx = DIRECTION[self.motion]
        step = 0 if self.motion == "still" else self.speed
        return [(start[0] + dy * step * t, start[1] + dx * step * t) for t in range(frames)]


def shape_mask(shape, size):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        r = size / 2.0
        return (yy - r) ** 2 + (xx - r) ** 2 <= r * r
    if shape == "triangle":
        # apex at top centre, base along the bottom row
        half = xx - size / 2.0
        return np.abs(half) <= yy / 2.0
    raise SceneError(f"unknown shape {shape!r}")


def background(dims, channels, rng):
    """Static per-pixel noise texture so block matching is well-posed."""
    h, w = dims
    base = rng.uniform(0.3, 0.7, size=(h, w, 1))
    tint = rng.uniform(-0.05, 0.05, size=(h, w, channels))
    return np.clip(base + tint, 0.0, 1.0)


def captions_for(spec, rng, count=None):
    templates = STILL_TEMPLATES if spec.motion == "still" else MOVING_TEMPLATES
    k = int(rng.integers(2, 4)) if count is None else count
    chosen = sorted(rng.choice(len(templates), size=k, replace=False).tolist())
    return [templates[i].format(color=spec.color, shape=spec.shape, motion=spec.motion, phrase=PHRASE[spec.motion]) for i in chosen]


def render(spec, frames, dims, rng, channels=3):
    spec.validate(frames, dims)
    bg = background(dims, channels, rng)
    mask = shape_mask(spec.shape, spec.size)
    color = np.asarray(RGB[spec.color][:channels] if channels == 3 else [np.mean(RGB[spec.color])])
    out = []
    for y, x in spec.positions(frames, dims):
        f = bg.copy()
        region = f[y : y + spec.size, x : x + spec.size]
        region[mask] = color
        out.append(dequantize(quantize(f)))
    return RawVideo(out)


def generate_scene(spec, frames, dims, rng, channels=3):
    """Render ``spec`` and emit 2-3 paraphrase captions."""
    video = render(spec, frames, dims, rng, channels)
    return video, captions_for(spec, rng)


def object_boxes(spec, frames, dims):
    """Per-frame (y0, x0, y1, x1) boxes, end-exclusive."""
    return [(y, x, y + spec.size, x + spec.size) for y, x in spec.positions(frames, dims)]


def union_box(boxes):
    boxes = np.asarray(boxes)
    return (int(boxes[:, 0].min()), int(boxes[:, 1].min()), int(boxes[:, 2].max()), int(boxes[:, 3].max()))


def random_spec(rng, frames, dims, speeds=(1, 2), sizes=(10, 12, 14), shapes=SHAPES):
    shape = shapes[rng.integers(len(shapes))]
    color = COLORS[rng.integers(len(COLORS))]
    motion = MOTIONS[rng.integers(len(MOTIONS))]
    speed = int(rng.choice(speeds))
    size = int(rng.choice(sizes))
    dy, dx = DIRECTION[motion]
    travel = 0 if motion == "still" else speed * (frames - 1)
    starts = []
    for d, extent in ((dy, dims[0]), (dx, dims[1])):
        lo = travel if d < 0 else 0
        hi = extent - size - (travel if d > 0 else 0)
        if hi < lo:
            raise SceneError("frame too small for the requested motion")
        starts.append(int(rng.integers(lo, hi + 1)))
    return SceneSpec(shape, color, motion, speed, size, tuple(starts))


@dataclass
class VideoItem:
    video_id: str
    spec: SceneSpec
    video: RawVideo
    captions: list


def corpus_specs(count, frames, dims, seed, shapes=SHAPES):
    """Deterministic (video_id, spec, rng) triples; one derived seed per video."""
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        out.append((f"vid{i:05d}", random_spec(rng, frames, dims, shapes=tuple(shapes)), rng))
    return out


def generate_corpus(count, frames, dims, seed, channels=3, shapes=SHAPES):
    items = []
    for vid, spec, rng in corpus_specs(count, frames, dims, seed, shapes):
        video, caps = generate_scene(spec, frames, dims, rng, channels)
        items.append(VideoItem(vid, spec, video, caps))
    return items


# ---------------------------------------------------------------- text

_PUNCT = re.compile(r"^[^\w<>]+|[^\w<>]+$")


def tokenize(text):
    """Lowercase, split on whitespace, strip leading/trailing punctuation."""
    toks = []
    for raw in text.lower().split():
        tok = _PUNCT.sub("", raw)
        if tok:
            toks.append(tok)
    return toks


@dataclass
class Vocabulary:
    tokens: list  # id -> token, specials first
    min_count: int = 3
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise CorpusError("vocabulary must start with the four special tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def id(self, tok):
        return self.index.get(tok, UNK_ID)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path, min_count=3):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens, min_count)


def build_vocabulary(corpus, min_count=3):
    """Frequency-filtered vocabulary; ids by (count desc, token asc) after specials."""
    corpus = list(corpus)
    if not corpus:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in corpus for tok in tokenize(text))
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS), key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIALS) + kept, min_count)


@dataclass
class CaptionRecord:
    video_id: str
    raw_text: str
    token_ids: list


def encode_caption(text, vocab, max_len, video_id=""):
    """BOS + ids + EOS, UNK for unseen words, cut to ``max_len`` keeping EOS."""
    if max_len < 2:
        raise CorpusError("max_len must leave room for BOS and EOS")
    body = [vocab.id(t) for t in tokenize(text)][: max_len - 2]
    return CaptionRecord(video_id, text, [BOS_ID] + body + [EOS_ID])


def decode_tokens(ids, vocab):
    """Token ids -> text, dropping specials and stopping at EOS."""
    words = []
    for i in ids:
        i = int(i)
        if i == EOS_ID:
            break
        if i in (BOS_ID, PAD_ID):
            continue
        words.append(vocab.tokens[i] if 0 <= i < len(vocab) else UNK)
    return " ".join(words)


def pad_batch(records, pad_id=PAD_ID):
    width = max(len(r) for r in records)
    out = np.full((len(records), width), pad_id, dtype=np.int64)
    for i, r in enumerate(records):
        out[i, : len(r)] = r
    return out
