"""On-disk synthetic dataset: bitstreams, manifests, vocabulary, scene table."""

from __future__ import annotations

import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec
from .data import SceneSpec, Vocabulary, build_vocabulary, encode_caption, generate_corpus

MANIFESTS = ("train.tsv", "test.tsv")


@dataclass
class VideoEntry:
    video_id: str
    bitstream: str  # relative to the dataset root
    captions: list = field(default_factory=list)
    spec: SceneSpec = None


@dataclass
class Dataset:
    root: Path
    vocab: Vocabulary
    train: list
    test: list
    header: codec.Header = None
    _stacks: dict = field(default_factory=dict, repr=False)

    def compressed(self, entry):
        return codec.read_bitstream(self.root / entry.bitstream)

    def frame_stack(self, entry, n, mode):
        key = (entry.video_id, n, mode)
        if key not in self._stacks:
            self._stacks[key] = codec.sample_frame_stack(self.compressed(entry), n, mode)
        return self._stacks[key]

    def arrays(self, entries, n, mode):
        stacks = [self.frame_stack(e, n, mode) for e in entries]
        return np.stack([s.p_i for s in stacks]), np.stack([s.p_r for s in stacks])

    def records(self, entry, max_len):
        return [encode_caption(c, self.vocab, max_len, entry.video_id).token_ids for c in entry.captions]


def _write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            for cap in e.captions:
                fh.write(f"{e.video_id}\t{e.bitstream}\t{cap}\n")


def read_manifest(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected video_id<TAB>bitstream<TAB>caption")
            vid, bits, cap = parts
            entry = entries.setdefault(vid, VideoEntry(vid, bits))
            entry.captions.append(cap)
    return list(entries.values())


def _write_scenes(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("video_id\tshape\tcolor\tmotion\tspeed\tsize\ty\tx\n")
        for it in items:
            s = it.spec
            fh.write(f"{it.video_id}\t{s.shape}\t{s.color}\t{s.motion}\t{s.speed}\t{s.size}\t{s.start[0]}\t{s.start[1]}\n")


def _read_scenes(path):
    out = {}
    if not path.exists():
        return out
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            vid, shape, color, motion, speed, size, y, x = line.rstrip("\n").split("\t")
            out[vid] = SceneSpec(shape, color, motion, int(speed), int(size), (int(y), int(x)))
    return out


def generate_dataset(cfg, out_dir):
    """Render, encode and index the corpus; the directory appears atomically."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise FileExistsError(f"{out_dir} exists and is not empty")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".gen-", dir=out_dir.parent))
    try:
        total = cfg.n_train + cfg.n_test
        items = generate_corpus(total, cfg.frames, (cfg.height, cfg.width), cfg.seed, cfg.channels, cfg.shape_list)
        (tmp / "videos").mkdir()
        entries = []
        for it in items:
            cv = codec.encode(it.video, cfg.gop_size, cfg.block_size, cfg.search_range)
            rel = f"videos/{it.video_id}.tgop"
            codec.write_bitstream(cv, tmp / rel)
            entries.append(VideoEntry(it.video_id, rel, list(it.captions), it.spec))
        train, test = entries[: cfg.n_train], entries[cfg.n_train :]
        _write_manifest(tmp / "train.tsv", train)
        _write_manifest(tmp / "test.tsv", test)
        _write_scenes(tmp / "scenes.tsv", items)
        build_vocabulary([c for e in train for c in e.captions], cfg.min_count).save(tmp / "vocab.txt")
        (tmp / "config.cfg").write_text(cfg.to_text())
        if out_dir.exists():
            out_dir.rmdir()
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir


def load_dataset(root, min_count=3):
    root = Path(root)
    for name in MANIFESTS + ("vocab.txt",):
        if not (root / name).exists():
            raise FileNotFoundError(f"dataset at {root} lacks {name}")
    train = read_manifest(root / "train.tsv")
    test = read_manifest(root / "test.tsv")
    clash = {e.video_id for e in train} & {e.video_id for e in test}
    if clash:
        raise ValueError(f"video ids in both splits: {sorted(clash)[:5]}")
    scenes = _read_scenes(root / "scenes.tsv")
    for e in train + test:
        e.spec = scenes.get(e.video_id)
    vocab = Vocabulary.load(root / "vocab.txt", min_count)
    ds = Dataset(root, vocab, train, test)
    if train:
        ds.header = ds.compressed(train[0]).header
    return ds
