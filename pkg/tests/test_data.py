import numpy as np
import pytest

from cvcap import data
from cvcap.data import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    SceneSpec,
    Vocabulary,
    build_vocabulary,
    decode_tokens,
    encode_caption,
    generate_corpus,
    render,
    tokenize,
)


def test_still_scene_identical_frames():
    spec = SceneSpec("circle", "blue", "still", start=(10, 10))
    v = render(spec, 6, (32, 32), np.random.default_rng(0))
    assert all(np.array_equal(v.frames[0], f) for f in v.frames)


def test_left_motion_kinematics():
    spec = SceneSpec("square", "red", "left", speed=2, size=8, start=(10, 30))
    v = render(spec, 8, (32, 48), np.random.default_rng(0))
    assert [x for _, x in spec.positions(8, (32, 48))] == [30 - 2 * t for t in range(8)]
    red = np.array(data.RGB["red"])
    for t, f in enumerate(v.frames):
        cols = np.where(np.all(np.abs(f - codec_round(red)) < 1e-9, axis=-1).any(axis=0))[0]
        assert cols.min() == 30 - 2 * t


def codec_round(rgb):
    from cvcap.codec import dequantize, quantize

    return dequantize(quantize(rgb))


def test_scene_validation():
    with pytest.raises(data.SceneError):
        render(SceneSpec("square", "red", "right", speed=4, size=12, start=(0, 20)), 8, (32, 32),
               np.random.default_rng(0))
    with pytest.raises(data.SceneError):
        SceneSpec("hexagon", "red", "up").validate(4, (32, 32))


def test_random_specs_stay_in_frame():
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec = data.random_spec(rng, 16, (56, 56))
        spec.validate(16, (56, 56))


def test_captions_describe_scene():
    rng = np.random.default_rng(1)
    spec = SceneSpec("triangle", "green", "up")
    caps = data.captions_for(spec, rng)
    assert 2 <= len(caps) <= 3
    for c in caps:
        assert "green" in c and "triangle" in c
        assert "up" in c or "upwards" in c


def test_corpus_regenerates_identically():
    a = generate_corpus(6, 8, (32, 32), seed=11)
    b = generate_corpus(6, 8, (32, 32), seed=11)
    c = generate_corpus(6, 8, (32, 32), seed=12)
    assert [x.video_id for x in a] == [f"vid{i:05d}" for i in range(6)]
    for x, y in zip(a, b):
        assert x.spec == y.spec and x.captions == y.captions and x.video == y.video
    assert any(x.spec != y.spec for x, y in zip(a, c))


def test_object_boxes_and_union():
    spec = SceneSpec("square", "red", "down", speed=1, size=5, start=(2, 3))
    boxes = data.object_boxes(spec, 3, (20, 20))
    assert boxes == [(2, 3, 7, 8), (3, 3, 8, 8), (4, 3, 9, 8)]
    assert data.union_box(boxes) == (2, 3, 9, 8)


# ---------------------------------------------------------------- text


def test_tokenize_casing_and_punctuation():
    assert tokenize("A Red Square.") == ["a", "red", "square"]
    assert tokenize("  moves,  left! ") == ["moves", "left"]


def test_vocabulary_threshold():
    v = build_vocabulary(["a a a", "b"], min_count=3)
    assert v.tokens == list(data.SPECIALS) + ["a"]
    assert v.id("b") == UNK_ID
    v1 = build_vocabulary(["a a a", "b"], min_count=1)
    assert v1.tokens[4:] == ["a", "b"]


def test_vocabulary_hand_count():
    # template words: a the is moving moves sliding to left right up down upwards
    # downwards stays still not sits in place + 3 colours + 3 shapes = 25
    caps = [c for it in generate_corpus(300, 16, (56, 56), seed=0) for c in it.captions]
    v = build_vocabulary(caps, min_count=1)
    assert len(v) == 25 + 4


def test_vocabulary_round_trip(tmp_path):
    v = build_vocabulary(["a red square moves left", "a blue circle"], min_count=1)
    v.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt").tokens == v.tokens
    with pytest.raises(data.CorpusError):
        Vocabulary(["a", "b"])


def test_encode_caption():
    v = build_vocabulary(["a red square"], min_count=1)
    rec = encode_caption("A Red Square", v, 50)
    assert rec.token_ids == [BOS_ID, v.id("a"), v.id("red"), v.id("square"), EOS_ID]
    assert encode_caption("a green square", v, 50).token_ids[2] == UNK_ID
    long = encode_caption(" ".join(["a"] * 60), v, 50).token_ids
    assert len(long) == 50 and long[0] == BOS_ID and long[-1] == EOS_ID
    assert decode_tokens(rec.token_ids, v) == "a red square"


def test_pad_batch():
    out = data.pad_batch([[0, 5, 1], [0, 1]])
    assert out.tolist() == [[0, 5, 1], [0, 1, 3]]
