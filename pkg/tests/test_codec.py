import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvcap import codec
from cvcap.codec import RawVideo


def random_video(rng, frames=8, h=16, w=16, c=3):
    return RawVideo([codec.dequantize(rng.integers(0, 256, size=(h, w, c))) for _ in range(frames)])


def translated_pair(rng, dy, dx, h=32, w=32):
    base = rng.integers(0, 256, size=(h + 20, w + 20, 1)).astype(np.uint8)
    f1 = base[10 : 10 + h, 10 : 10 + w]
    f2 = base[10 - dy : 10 - dy + h, 10 - dx : 10 - dx + w]
    return f1, f2


def test_quantize_round_trip():
    px = np.arange(256, dtype=np.uint8)
    assert np.array_equal(codec.quantize(codec.dequantize(px)), px)
    assert codec.quantize(np.array([-1.0, 2.0])).tolist() == [0, 255]


def test_static_video_zero_motion_and_residual():
    frame = codec.dequantize(np.random.default_rng(0).integers(0, 256, size=(16, 16, 3)))
    cv = codec.encode(RawVideo([frame] * 6), gop_size=6, block_size=8, search_range=2)
    for pf in cv.gops[0].pframes:
        assert not pf.motion_vectors.any()
        assert not pf.residual_q.any()


@pytest.mark.parametrize("dy,dx", [(2, 0), (0, -3), (-1, 2)])
def test_translation_recovers_vectors(dy, dx):
    f1, f2 = translated_pair(np.random.default_rng(1), dy, dx)
    mvs = codec.estimate_motion(f2, f1, 8, 4)
    interior = mvs[1:-1, 1:-1]
    assert (interior[..., 0] == dy).all() and (interior[..., 1] == dx).all()
    pred = codec.predict(f1.astype(np.int16), mvs, 8)
    res = f2.astype(np.int16) - pred
    assert not res[8:-8, 8:-8].any()


def test_translation_through_encoder():
    f1, f2 = translated_pair(np.random.default_rng(2), 2, 0)
    cv = codec.encode(RawVideo([codec.dequantize(f1), codec.dequantize(f2)]), 2, 8, 4)
    pf = cv.gops[0].pframes[0]
    assert (pf.motion_vectors[1:-1, 1:-1] == (2, 0)).all()
    assert not pf.residual_q[8:-8, 8:-8].any()


def test_vectors_never_leave_frame():
    rng = np.random.default_rng(3)
    cur, ref = rng.integers(0, 256, size=(2, 16, 16, 1))
    mvs = codec.estimate_motion(cur, ref, 8, 4)
    codec.predict(ref, mvs, 8)  # would raise when out of bounds
    with pytest.raises(codec.CorruptStreamError):
        codec.predict(ref, np.full((2, 2, 2), 3), 8)


def test_gop_partition():
    cv = codec.encode(random_video(np.random.default_rng(0), frames=10), gop_size=4)
    assert [len(g) for g in cv.gops] == [4, 4, 2]
    assert cv.n_frames == 10


def test_round_trip_random():
    v = random_video(np.random.default_rng(4))
    assert codec.decode(codec.encode(v, gop_size=3, block_size=8, search_range=2)) == v


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), frames=st.integers(1, 6), gop=st.integers(1, 4), c=st.sampled_from([1, 3]))
def test_round_trip_property(seed, frames, gop, c):
    v = random_video(np.random.default_rng(seed), frames=frames, c=c)
    cv = codec.encode(v, gop_size=gop, block_size=4, search_range=1)
    assert codec.decode(cv) == v
    assert codec.deserialize(codec.serialize(cv)) == cv


def test_single_gop_no_pframes():
    v = random_video(np.random.default_rng(5), frames=1)
    cv = codec.encode(v)
    assert len(cv.gops) == 1 and not cv.gops[0].pframes
    assert codec.decode(cv) == v


def test_zero_residual_zero_vectors_propagate_iframe():
    i = np.random.default_rng(6).integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
    pf = codec.PFrame(np.zeros((2, 2, 2), np.int8), np.zeros((16, 16, 3), np.int16))
    cv = codec.CompressedVideo(codec.Header(16, 16, 3, 8, 4, 4), [codec.Gop(i, [pf, pf, pf])])
    assert all(np.array_equal(f, i) for f in codec.decode_quantized(cv))


def test_encode_errors():
    with pytest.raises(codec.EmptyVideoError):
        codec.encode(RawVideo([]))
    with pytest.raises(codec.CodecConfigError):
        codec.encode(random_video(np.random.default_rng(0), h=12), block_size=8)
    with pytest.raises(codec.CodecConfigError):
        codec.encode(random_video(np.random.default_rng(0)), gop_size=0)


# ---------------------------------------------------------------- sampling


def test_sample_indices():
    assert codec.sample_indices(5, 5) == [0, 1, 2, 3, 4]
    assert codec.sample_indices(1, 4) == [0, 0, 0, 0]
    assert codec.sample_indices(2, 2) == [0, 1]
    assert codec.sample_indices(4, 1) == [0]
    with pytest.raises(codec.CodecConfigError):
        codec.sample_indices(3, 0)


def test_frame_stack_exact_cover_and_repetition():
    v = random_video(np.random.default_rng(7), frames=12)
    cv = codec.encode(v, gop_size=4, block_size=8, search_range=1)
    st_ = codec.sample_frame_stack(cv, 3)
    assert st_.gop_indices == (0, 1, 2)
    for k in range(3):
        assert np.array_equal(st_.p_i[k], v.frames[4 * k])
    one = codec.encode(v, gop_size=12, block_size=8, search_range=1)
    st_ = codec.sample_frame_stack(one, 4)
    assert all(np.array_equal(st_.p_i[k], v.frames[0]) for k in range(4))


def test_static_residual_maps_to_half():
    frame = codec.dequantize(np.random.default_rng(0).integers(0, 256, size=(16, 16, 3)))
    cv = codec.encode(RawVideo([frame] * 8), gop_size=4)
    for mode in ("first_pframe", "gop_accumulated"):
        assert (codec.sample_frame_stack(cv, 2, mode).p_r == 0.5).all()


def test_residual_mapping_range():
    v = random_video(np.random.default_rng(8), frames=4)
    cv = codec.encode(v, gop_size=4, block_size=8, search_range=1)
    p_r = codec.residual_image(cv.gops[0])
    assert p_r.min() >= 0.0 and p_r.max() <= 1.0
    assert np.allclose(p_r, (cv.gops[0].pframes[0].residual_q / 255.0 + 1) / 2)
    with pytest.raises(codec.CodecConfigError):
        codec.residual_image(cv.gops[0], "bogus")


# ---------------------------------------------------------------- bitstream


def test_bitstream_header_layout():
    cv = codec.encode(random_video(np.random.default_rng(9), frames=3), gop_size=2, block_size=8, search_range=3)
    blob = codec.serialize(cv)
    assert blob[:4] == b"TGOP"
    assert codec.deserialize(blob) == cv


def test_bitstream_errors():
    cv = codec.encode(random_video(np.random.default_rng(10), frames=3), gop_size=2)
    blob = codec.serialize(cv)
    with pytest.raises(codec.BadMagicError):
        codec.deserialize(b"JUNK" + blob[4:])
    for cut in (3, 10, len(blob) // 2, len(blob) - 1):
        with pytest.raises(codec.TruncatedStreamError):
            codec.deserialize(blob[:cut])
    with pytest.raises(codec.VersionMismatchError):
        codec.deserialize(blob[:4] + b"\x09\x00" + blob[6:])
    with pytest.raises(codec.CorruptStreamError):
        codec.deserialize(blob + b"\x00")


def test_bitstream_files(tmp_path):
    cv = codec.encode(random_video(np.random.default_rng(11), frames=4), gop_size=2)
    codec.write_bitstream(cv, tmp_path / "v.tgop")
    assert codec.read_bitstream(tmp_path / "v.tgop") == cv


def test_planar_and_frame_dir(tmp_path):
    v = random_video(np.random.default_rng(12), frames=3)
    codec.write_planar(v, tmp_path / "v.raw")
    assert codec.read_planar(tmp_path / "v.raw") == v
    codec.write_frame_dir(v, tmp_path / "frames")
    assert codec.read_frame_dir(tmp_path / "frames") == v
    g = random_video(np.random.default_rng(13), frames=2, c=1)
    codec.write_frame_dir(g, tmp_path / "gray")
    assert codec.read_frame_dir(tmp_path / "gray") == g
