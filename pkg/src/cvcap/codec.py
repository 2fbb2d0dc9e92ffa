"""Toy block-motion-compensated codec with I-frame / P-frame GOPs.

Pixels are handled in the 8-bit integer domain internally so that the
encode/decode round trip is exact. Float frames in [0, 1] are quantized to
``k / 255`` on entry.

Motion vectors give the displacement of content: a block at ``(y, x)`` in
the current frame is predicted from ``ref[y - dy, x - dx]``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TGOP"
VERSION = 1

DEFAULT_GOP_SIZE = 12
DEFAULT_BLOCK_SIZE = 8
DEFAULT_SEARCH_RANGE = 4


class CodecError(ValueError):
    pass


class CodecConfigError(CodecError):
    pass


class EmptyVideoError(CodecError):
    pass


class CorruptStreamError(CodecError):
    pass


class BitstreamError(CodecError):
    pass


class BadMagicError(BitstreamError):
    pass


class VersionMismatchError(BitstreamError):
    pass


class TruncatedStreamError(BitstreamError):
    pass


def quantize(frame):
    """Float pixels in [0, 1] -> uint8."""
    return np.clip(np.floor(np.asarray(frame, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def dequantize(pixels):
    return np.asarray(pixels, dtype=np.float64) / 255.0


@dataclass
class RawVideo:
    frames: list  # float arrays (H, W, C) in [0, 1]
    frame_rate: float = 25.0

    def __post_init__(self):
        self.frames = [np.asarray(f, dtype=np.float64) for f in self.frames]
        if self.frames:
            shape = self.frames[0].shape
            if len(shape) != 3 or shape[2] not in (1, 3):
                raise CodecConfigError(f"frames must be (H, W, C) with C in {{1, 3}}, got {shape}")
            if any(f.shape != shape for f in self.frames):
                raise CodecConfigError("all frames must share one shape")

    @property
    def shape(self):
        return self.frames[0].shape

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, RawVideo) or len(self) != len(other):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.frames, other.frames))


@dataclass
class PFrame:
    motion_vectors: np.ndarray  # int (H/bs, W/bs, 2), (dy, dx)
    residual_q: np.ndarray  # int16 (H, W, C), units of 1/255

    @property
    def residual(self):
        return self.residual_q.astype(np.float64) / 255.0

    def __eq__(self, other):
        return (
            isinstance(other, PFrame)
            and np.array_equal(self.motion_vectors, other.motion_vectors)
            and np.array_equal(self.residual_q, other.residual_q)
        )


@dataclass
class Gop:
    iframe_q: np.ndarray  # uint8 (H, W, C)
    pframes: list = field(default_factory=list)

    @property
    def iframe(self):
        return dequantize(self.iframe_q)

    def __len__(self):
        return 1 + len(self.pframes)

    def __eq__(self, other):
        return (
            isinstance(other, Gop)
            and np.array_equal(self.iframe_q, other.iframe_q)
            and self.pframes == other.pframes
        )


@dataclass(frozen=True)
class Header:
    height: int
    width: int
    channels: int
    block_size: int
    search_range: int
    gop_size: int


@dataclass
class CompressedVideo:
    header: Header
    gops: list

    def __eq__(self, other):
        return isinstance(other, CompressedVideo) and self.header == other.header and self.gops == other.gops

    @property
    def n_frames(self):
        return sum(len(g) for g in self.gops)


@dataclass
class FrameStack:
    p_i: np.ndarray  # (N, H, W, C) in [0, 1]
    p_r: np.ndarray  # (N, H, W, C) in [0, 1]; 0.5 means zero residual
    gop_indices: tuple = ()


# ---------------------------------------------------------------- motion search


def _candidate_offsets(search_range):
    offs = [(dy, dx) for dy in range(-search_range, search_range + 1) for dx in range(-search_range, search_range + 1)]
    # tie-break: smallest (|dy|, |dx|), then row-major
    offs.sort(key=lambda v: (abs(v[0]), abs(v[1]), v[0], v[1]))
    return offs


def _shifted(ref, dy, dx):
    """ref displaced by (dy, dx); uncovered pixels are zero, validity mask alongside."""
    h, w = ref.shape[:2]
    out = np.zeros_like(ref)
    valid = np.zeros((h, w), dtype=bool)
    ys, ye = max(dy, 0), min(h + dy, h)
    xs, xe = max(dx, 0), min(w + dx, w)
    if ys < ye and xs < xe:
        out[ys:ye, xs:xe] = ref[ys - dy : ye - dy, xs - dx : xe - dx]
        valid[ys:ye, xs:xe] = True
    return out, valid


def _block_sum(a, bs):
    h, w = a.shape[:2]
    a = a.reshape(h // bs, bs, w // bs, bs, -1)
    return a.sum(axis=(1, 3, 4))


def estimate_motion(cur, ref, block_size, search_range):
    """Exhaustive SAD block search. Returns int (bh, bw, 2) vectors."""
    cur = cur.astype(np.int32)
    ref = ref.astype(np.int32)
    h, w = cur.shape[:2]
    bh, bw = h // block_size, w // block_size
    best = np.full((bh, bw), np.iinfo(np.int64).max, dtype=np.int64)
    mvs = np.zeros((bh, bw, 2), dtype=np.int64)
    for dy, dx in _candidate_offsets(search_range):
        pred, valid = _shifted(ref, dy, dx)
        sad = _block_sum(np.abs(cur - pred), block_size).astype(np.int64)
        ok = _block_sum(valid[..., None].astype(np.int32), block_size) == block_size * block_size
        better = ok & (sad < best)
        best[better] = sad[better]
        mvs[better] = (dy, dx)
    return mvs


def predict(ref, mvs, block_size):
    """Motion-compensated prediction; raises on out-of-bounds vectors."""
    h, w = ref.shape[:2]
    pred = np.empty_like(ref)
    bh, bw = mvs.shape[:2]
    if (bh * block_size, bw * block_size) != (h, w):
        raise CorruptStreamError("motion-vector grid does not match frame size")
    for by in range(bh):
        for bx in range(bw):
            dy, dx = int(mvs[by, bx, 0]), int(mvs[by, bx, 1])
            y0, x0 = by * block_size - dy, bx * block_size - dx
            if y0 < 0 or x0 < 0 or y0 + block_size > h or x0 + block_size > w:
                raise CorruptStreamError(f"motion vector ({dy}, {dx}) at block ({by}, {bx}) leaves the frame")
            pred[by * block_size : (by + 1) * block_size, bx * block_size : (bx + 1) * block_size] = ref[
                y0 : y0 + block_size, x0 : x0 + block_size
            ]
    return pred


# ---------------------------------------------------------------- encode / decode


def encode(video, gop_size=DEFAULT_GOP_SIZE, block_size=DEFAULT_BLOCK_SIZE, search_range=DEFAULT_SEARCH_RANGE):
    if len(video) == 0:
        raise EmptyVideoError("cannot encode an empty video")
    if gop_size < 1 or block_size < 1 or search_range < 0:
        raise CodecConfigError("need gop_size >= 1, block_size >= 1, search_range >= 0")
    if search_range > 127:
        raise CodecConfigError("search_range must fit a signed byte")
    h, w, c = video.shape
    if h % block_size or w % block_size:
        raise CodecConfigError(f"frame size {h}x{w} not divisible by block size {block_size}")
    header = Header(h, w, c, block_size, search_range, gop_size)
    frames = [quantize(f) for f in video.frames]
    gops = []
    for start in range(0, len(frames), gop_size):
        chunk = frames[start : start + gop_size]
        gop = Gop(iframe_q=chunk[0].copy())
        recon = chunk[0].astype(np.int16)
        for frame in chunk[1:]:
            mvs = estimate_motion(frame, recon, block_size, search_range)
            pred = predict(recon, mvs, block_size)
            residual = frame.astype(np.int16) - pred
            gop.pframes.append(PFrame(mvs.astype(np.int8), residual.astype(np.int16)))
            recon = pred + residual
        gops.append(gop)
    return CompressedVideo(header, gops)


def decode_quantized(cv):
    frames = []
    bs = cv.header.block_size
    for gop in cv.gops:
        recon = gop.iframe_q.astype(np.int16)
        frames.append(recon)
        for pf in gop.pframes:
            recon = predict(recon, pf.motion_vectors, bs) + pf.residual_q
            if recon.min() < 0 or recon.max() > 255:
                raise CorruptStreamError("reconstructed pixel outside the 8-bit range")
            frames.append(recon)
    return [f.astype(np.uint8) for f in frames]


def decode(cv, frame_rate=25.0):
    return RawVideo([dequantize(f) for f in decode_quantized(cv)], frame_rate)


# ---------------------------------------------------------------- sampling


def sample_indices(n_gops, n):
    if n <= 0:
        raise CodecConfigError(f"sample count must be positive, got {n}")
    if n == 1:
        return [0]
    pos = np.linspace(0.0, n_gops - 1, n)
    return [int(np.floor(p + 0.5)) for p in pos]


def residual_image(gop, mode="first_pframe"):
    """Residual frame of a GOP mapped to [0, 1] by r -> (r + 1) / 2."""
    shape = gop.iframe_q.shape
    if not gop.pframes:
        return np.full(shape, 0.5)
    if mode == "first_pframe":
        r = gop.pframes[0].residual
    elif mode == "gop_accumulated":
        r = np.mean([np.abs(pf.residual) for pf in gop.pframes], axis=0)
    else:
        raise CodecConfigError(f"unknown residual mode {mode!r}")
    return (r + 1.0) / 2.0


def sample_frame_stack(cv, n, residual_mode="first_pframe"):
    if not cv.gops:
        raise CodecConfigError("compressed video has no GOPs")
    idx = sample_indices(len(cv.gops), n)
    p_i = np.stack([cv.gops[k].iframe for k in idx])
    p_r = np.stack([residual_image(cv.gops[k], residual_mode) for k in idx])
    return FrameStack(p_i, p_r, tuple(idx))


# ---------------------------------------------------------------- bitstream


def serialize(cv):
    hd = cv.header
    out = [MAGIC, struct.pack("<H", VERSION)]
    out.append(struct.pack("<6H", hd.height, hd.width, hd.channels, hd.block_size, hd.search_range, hd.gop_size))
    out.append(struct.pack("<I", len(cv.gops)))
    for gop in cv.gops:
        out.append(struct.pack("<H", len(gop.pframes)))
        out.append(np.ascontiguousarray(gop.iframe_q, dtype=np.uint8).tobytes())
        for pf in gop.pframes:
            out.append(np.ascontiguousarray(pf.motion_vectors, dtype=np.int8).tobytes())
            out.append(np.ascontiguousarray(pf.residual_q, dtype="<i2").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, blob):
        self.blob = memoryview(blob)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise TruncatedStreamError(f"stream truncated while reading {what} at byte {self.pos}")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def deserialize(blob):
    rd = _Reader(blob)
    if bytes(rd.take(4, "magic")) != MAGIC:
        raise BadMagicError("not a TGOP bitstream")
    (version,) = struct.unpack("<H", rd.take(2, "version"))
    if version != VERSION:
        raise VersionMismatchError(f"bitstream version {version}, expected {VERSION}")
    header = Header(*struct.unpack("<6H", rd.take(12, "header")))
    h, w, c, bs = header.height, header.width, header.channels, header.block_size
    if c not in (1, 3) or bs == 0 or h % bs or w % bs:
        raise CorruptStreamError(f"inconsistent header {header}")
    (n_gops,) = struct.unpack("<I", rd.take(4, "GOP count"))
    npix = h * w * c
    grid = (h // bs, w // bs, 2)
    gops = []
    for gi in range(n_gops):
        (n_p,) = struct.unpack("<H", rd.take(2, f"GOP {gi} P-frame count"))
        if n_p + 1 > header.gop_size:
            raise CorruptStreamError(f"GOP {gi} longer than gop_size")
        iframe = np.frombuffer(rd.take(npix, f"GOP {gi} I-frame"), dtype=np.uint8).reshape(h, w, c).copy()
        gop = Gop(iframe)
        for pi in range(n_p):
            mv = np.frombuffer(rd.take(int(np.prod(grid)), f"GOP {gi} P-frame {pi} vectors"), dtype=np.int8)
            res = np.frombuffer(rd.take(2 * npix, f"GOP {gi} P-frame {pi} residual"), dtype="<i2")
            gop.pframes.append(PFrame(mv.reshape(grid).copy(), res.reshape(h, w, c).astype(np.int16)))
        gops.append(gop)
    if rd.pos != len(rd.blob):
        raise CorruptStreamError("trailing bytes after last GOP")
    return CompressedVideo(header, gops)


def write_bitstream(cv, path):
    Path(path).write_bytes(serialize(cv))


def read_bitstream(path):
    return deserialize(Path(path).read_bytes())


# ---------------------------------------------------------------- raw input


def write_planar(video, path):
    """Planar u8 frames (C planes of H x W per frame) with a JSON sidecar."""
    path = Path(path)
    h, w, c = video.shape
    with open(path, "wb") as fh:
        for f in video.frames:
            fh.write(np.ascontiguousarray(quantize(f).transpose(2, 0, 1)).tobytes())
    meta = {"height": h, "width": w, "channels": c, "frames": len(video), "frame_rate": video.frame_rate}
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_planar(path):
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise CodecConfigError(f"missing sidecar header {sidecar}")
    meta = json.loads(sidecar.read_text())
    h, w, c, n = meta["height"], meta["width"], meta["channels"], meta["frames"]
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size != n * c * h * w:
        raise CorruptStreamError(f"planar file holds {raw.size} bytes, header implies {n * c * h * w}")
    planes = raw.reshape(n, c, h, w).transpose(0, 2, 3, 1)
    return RawVideo([dequantize(p) for p in planes], float(meta.get("frame_rate", 25.0)))


def write_frame_dir(video, directory):
    from .netpbm import write_netpbm

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if video.shape[2] == 1 else "ppm"
    for i, f in enumerate(video.frames):
        write_netpbm(directory / f"frame_{i:05d}.{ext}", f)


def read_frame_dir(directory, frame_rate=25.0):
    from .netpbm import read_netpbm

    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not files:
        raise EmptyVideoError(f"no PGM/PPM frames in {directory}")
    return RawVideo([read_netpbm(p) for p in files], frame_rate)
