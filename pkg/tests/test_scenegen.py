import collections

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinyvid import scenegen, vocab
from tinyvid.numerics import vtf


def spec_at(velocity, shape_kind="square", size=0.35, start=(0.5, 0.5), background="solid"):
    speed = "slow" if max(abs(v) for v in velocity) <= scenegen.SLOW_MAX else "fast"
    return scenegen.SceneSpec(0, shape_kind, vocab.COLORS["red"], size, start, velocity, speed, background)


def fg_centroid(frame, background):
    w = np.abs(frame - background).sum(axis=0)
    ys, xs = np.mgrid[0 : w.shape[0], 0 : w.shape[1]]
    return (w * xs).sum() / w.sum(), (w * ys).sum() / w.sum()


def test_unit_velocity_moves_centroid_one_pixel_per_frame():
    T, H, W = 6, 16, 16
    spec = spec_at((1.0, 0.0), start=(0.3, 0.5))
    video = scenegen.render(spec, T, H, W)
    bg = 2 * scenegen.background_image("solid", H, W) - 1
    xs = [fg_centroid(video.frames[t], bg)[0] for t in range(T)]
    assert np.allclose(np.diff(xs), 1.0, atol=1e-9)


def test_static_scene_has_identical_frames_and_zero_flow():
    video = scenegen.render(spec_at((0.0, 0.0)), 5, 12, 12)
    assert all(np.array_equal(video.frames[0], f) for f in video.frames)
    assert not video.flow.any()
    assert video.motion_caption == "still"


def test_render_is_bitwise_deterministic():
    spec = scenegen.sample_scene(np.random.default_rng(3), 8, 16, 16)
    a = vtf.to_bytes(scenegen.render(spec, 8, 16, 16).frames)
    b = vtf.to_bytes(scenegen.render(spec, 8, 16, 16).frames)
    assert a == b


def test_render_rejects_tiny_clips():
    with pytest.raises(scenegen.GenerationError):
        scenegen.render(spec_at((0.0, 0.0)), 1, 16, 16)
    with pytest.raises(scenegen.GenerationError):
        scenegen.render(spec_at((0.0, 0.0)), 4, 7, 16)


def test_impossible_trajectory_raises():
    with pytest.raises(scenegen.GenerationError):
        scenegen.sample_scene(np.random.default_rng(0), 40, 8, 8, direction="right", speed_class="fast")


@given(st.integers(0, 10_000), st.sampled_from([(8, 16, 16), (8, 24, 24), (4, 12, 20)]))
def test_scene_invariants(seed, shape):
    T, H, W = shape
    spec = scenegen.sample_scene(np.random.default_rng(seed), T, H, W)
    video = scenegen.render(spec, T, H, W)
    # stays in frame: full coverage mass is preserved in every frame
    masses = [scenegen.coverage(spec.shape_kind, *_center(spec, t, H, W), *scenegen.half_extents(
        spec.shape_kind, spec.size, H, W), H, W).sum() for t in range(T)]
    assert np.allclose(masses, masses[0])
    speed = max(abs(v) for v in spec.velocity)
    assert (spec.speed_class == "slow") == (speed <= scenegen.SLOW_MAX)
    # caption direction matches the velocity sign
    d = vocab.direction_word(video.motion_caption)
    ux, uy = vocab.DIRECTION_VECTORS[d]
    assert np.sign(spec.velocity[0]) == ux and np.sign(spec.velocity[1]) == uy
    assert video.frames.min() >= -1 and video.frames.max() <= 1
    assert np.array_equal(video.frames[0], scenegen.render(spec, T, H, W).frames[0])
    # flow is v on shape pixels of the earlier frame, zero elsewhere
    for t in range(T - 1):
        mask = scenegen.shape_mask(spec, t, H, W)
        assert np.all(video.flow[t, 0][mask] == spec.velocity[0])
        assert np.all(video.flow[t, 1][mask] == spec.velocity[1])
        assert not video.flow[t][:, ~mask].any()


def _center(spec, t, H, W):
    cx, cy = scenegen.centroid_px(spec, H, W)
    return cx + spec.velocity[0] * t, cy + spec.velocity[1] * t


@given(st.integers(0, 10_000))
def test_flow_warp_reproduces_next_frame(seed):
    T, H, W = 8, 16, 16
    spec = scenegen.sample_scene(np.random.default_rng(seed), T, H, W)
    video = scenegen.render(spec, T, H, W)
    for t in range(T - 1):
        full = scenegen.shape_mask(spec, t, H, W, full=True)
        ys, xs = np.nonzero(full)
        dx, dy = video.flow[t, 0, ys, xs], video.flow[t, 1, ys, xs]
        tx, ty = np.rint(xs + dx).astype(int), np.rint(ys + dy).astype(int)
        err = np.abs(video.frames[t + 1][:, ty, tx] - video.frames[t][:, ys, xs])
        assert err.max(initial=0.0) < 1e-6


def test_make_dataset_is_deterministic_and_balanced(tmp_path):
    scenegen.make_dataset(8, 7, 4, 12, 12, tmp_path / "a")
    scenegen.make_dataset(8, 7, 4, 12, 12, tmp_path / "b")
    assert (tmp_path / "a/manifest.tsv").read_bytes() == (tmp_path / "b/manifest.tsv").read_bytes()
    assert (tmp_path / "a/00003.vtf").read_bytes() == (tmp_path / "b/00003.vtf").read_bytes()

    scenegen.make_dataset(400, 1, 4, 16, 16, tmp_path / "big")
    entries = scenegen.read_manifest(tmp_path / "big")
    counts = collections.Counter(vocab.direction_word(e.motion_caption) for e in entries)
    assert set(counts) == set(vocab.DIRECTIONS)
    assert all(90 <= c <= 110 for c in counts.values())


def test_single_sample_dataset_round_trip(tmp_path):
    scenegen.make_dataset(1, 3, 5, 16, 16, tmp_path, dump_pgm=True)
    [sample] = scenegen.load_dataset(tmp_path)
    again = scenegen.render(sample.spec, 5, 16, 16)
    assert np.array_equal(sample.frames, again.frames)
    assert np.array_equal(sample.flow, again.flow)
    line = (tmp_path / "manifest.tsv").read_text().strip().split("\t")
    assert line[0] == "00000.vtf" and int(line[3]) == scenegen.hash64(3, 0)
    assert scenegen.dataset_shape(tmp_path) == (5, 16, 16)
    pgm = (tmp_path / "pgm/00000/frame_000.pgm").read_bytes()
    assert pgm.startswith(b"P5\n16 16\n255\n") and len(pgm) == len(b"P5\n16 16\n255\n") + 256


def test_make_dataset_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        scenegen.make_dataset(0, 1, 4, 16, 16, tmp_path)


def test_hash64_split_is_stable():
    assert scenegen.hash64(0, 0) == scenegen.hash64(0, 0)
    assert len({scenegen.hash64(5, i) for i in range(100)}) == 100


def test_vocabulary_is_frozen():
    assert len(vocab.WORDS) <= 64
    assert vocab.WORDS[:3] == ("<pad>", "<unk>", "<null>")
    assert vocab.tokenize("red square") == [vocab.TOKEN_ID["red"], vocab.TOKEN_ID["square"]]
    assert vocab.tokenize("zebra", warn=False) == [vocab.UNK]


def test_prompt_scene_honours_prompt_words():
    spec = scenegen.scene_from_prompt("blue circle small gradient", "moving up slow", 4, 8, 24, 24)
    assert spec.shape_kind == "circle" and spec.color_name == "blue"
    assert spec.size_name == "small" and spec.background == "gradient"
    assert spec.direction == "up"
