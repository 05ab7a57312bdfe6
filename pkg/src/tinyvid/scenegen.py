"""Procedural moving-shape videos with structured captions and analytic optical flow.

Pixel ``(i, j)`` covers ``[j - 0.5, j + 0.5] x [i - 0.5, i + 0.5]`` in pixel
coordinates. Shape centers live on the half-pixel grid and coverage is
4x4 supersampled, so integer velocities translate the rendering exactly.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import vocab
from .numerics import vtf

SUBSAMPLES = 4
MAX_RESAMPLES = 100
SLOW_MAX = 1.5

_BG_SOLID = np.array([0.05, 0.35, 0.75])
_BG_TOP = np.array([0.0, 0.1, 0.6])
_BG_BOTTOM = np.array([0.7, 0.35, 0.0])


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    shape_kind: str
    color: tuple
    size: float
    start_pos: tuple
    velocity: tuple
    speed_class: str
    background: str

    @property
    def color_name(self) -> str:
        for name, rgb in vocab.COLORS.items():
            if tuple(rgb) == tuple(self.color):
                return name
        return "white"

    @property
    def size_name(self) -> str:
        return min(vocab.SIZES, key=lambda k: abs(vocab.SIZES[k] - self.size))

    @property
    def direction(self) -> str | None:
        vx, vy = self.velocity
        if vx == 0 and vy == 0:
            return None
        if abs(vx) >= abs(vy):
            return "right" if vx > 0 else "left"
        return "down" if vy > 0 else "up"

    def spatial_caption(self) -> str:
        return f"{self.color_name} {self.shape_kind} {self.size_name} {self.background}"

    def motion_caption(self) -> str:
        if self.direction is None:
            return "still"
        return f"moving {self.direction} {self.speed_class}"


@dataclass
class VideoSample:
    frames: np.ndarray  # [T, 3, H, W] in [-1, 1]
    spatial_tokens: list
    motion_tokens: list
    flow: np.ndarray  # [T-1, 2, H, W], (dx, dy) in pixels
    spec: SceneSpec

    @property
    def spatial_caption(self) -> str:
        return vocab.detokenize(self.spatial_tokens)

    @property
    def motion_caption(self) -> str:
        return vocab.detokenize(self.motion_tokens)


def hash64(seed: int, i: int) -> int:
    """Per-sample seed split: first 8 bytes of BLAKE2b over (seed, i) as u64 LE."""
    digest = hashlib.blake2b(struct.pack("<qq", int(seed), int(i)), digest_size=8).digest()
    return struct.unpack("<Q", digest)[0]


def half_extents(shape_kind: str, size: float, H: int, W: int) -> tuple[float, float]:
    side = max(2, int(round(size * min(H, W))))
    if shape_kind == "bar":
        return side / 2.0, max(1, side // 2) / 2.0
    return side / 2.0, side / 2.0


def _pixel_center(start_pos, H: int, W: int) -> tuple[float, float]:
    cx = round((start_pos[0] * W - 0.5) * 2.0) / 2.0
    cy = round((start_pos[1] * H - 0.5) * 2.0) / 2.0
    return cx, cy


def _fits(cx, cy, hx, hy, vx, vy, T, H, W) -> bool:
    for t in (0, T - 1):
        x, y = cx + vx * t, cy + vy * t
        if x - hx < -0.5 or x + hx > W - 0.5 or y - hy < -0.5 or y + hy > H - 0.5:
            return False
    return True


def _neutral_band(feasible: np.ndarray, half: float, travel: float, extent: int) -> np.ndarray:
    """Starts from which the same travel fits both ways; else the feasible start nearest the center."""
    both = np.arange(-0.5 + half + travel, extent - 0.5 - half - travel + 1e-9, 0.5)
    if len(both):
        return both
    center = (extent - 1) / 2.0
    return feasible[[int(np.argmin(np.abs(feasible - center)))]]


def sample_scene(rng: np.random.Generator, frames: int = 8, height: int = 16, width: int = 16,
                 direction: str | None = None, speed_class: str | None = None, integer_velocity: bool = True,
                 neutral_start: bool = False, **fixed) -> SceneSpec:
    """Draw a scene whose trajectory stays inside a ``frames x height x width`` clip.

    Any SceneSpec field may be pinned through ``fixed`` (plus ``direction`` and
    ``speed_class``). ``neutral_start`` restricts the start so the shape could
    travel the same distance in every direction, decoupling position from motion;
    when the clip is too small for that it takes the most central feasible start.
    """
    T, H, W = frames, height, width
    seed = int(rng.integers(0, 2**31 - 1))
    for _ in range(MAX_RESAMPLES):
        shape_kind = fixed.get("shape_kind") or vocab.SHAPES[rng.integers(len(vocab.SHAPES))]
        color = fixed.get("color") or vocab.COLORS[list(vocab.COLORS)[rng.integers(len(vocab.COLORS))]]
        size = fixed.get("size") or vocab.SIZES[list(vocab.SIZES)[rng.integers(len(vocab.SIZES))]]
        background = fixed.get("background") or vocab.BACKGROUNDS[rng.integers(2)]
        d = direction or vocab.DIRECTIONS[rng.integers(4)]
        sc = speed_class or ("slow", "fast")[rng.integers(2)]
        if integer_velocity:
            speed = 1.0 if sc == "slow" else 2.0
        else:
            speed = rng.uniform(0.5, SLOW_MAX) if sc == "slow" else rng.uniform(SLOW_MAX + 1e-3, 2.5)
        ux, uy = vocab.DIRECTION_VECTORS[d]
        vx, vy = ux * speed, uy * speed
        hx, hy = half_extents(shape_kind, size, H, W)
        travel = speed * (T - 1)
        xs = np.arange(-0.5 + hx - min(vx, 0) * (T - 1), W - 0.5 - hx - max(vx, 0) * (T - 1) + 1e-9, 0.5)
        ys = np.arange(-0.5 + hy - min(vy, 0) * (T - 1), H - 0.5 - hy - max(vy, 0) * (T - 1) + 1e-9, 0.5)
        if len(xs) == 0 or len(ys) == 0:
            continue
        if neutral_start:
            xs = _neutral_band(xs, hx, travel, W)
            ys = _neutral_band(ys, hy, travel, H)
        cx, cy = float(xs[rng.integers(len(xs))]), float(ys[rng.integers(len(ys))])
        if not _fits(cx, cy, hx, hy, vx, vy, T, H, W):
            continue
        start = ((cx + 0.5) / W, (cy + 0.5) / H)
        return SceneSpec(seed, shape_kind, tuple(color), float(size), start, (float(vx), float(vy)), sc, background)
    raise GenerationError(f"no feasible trajectory for a {T}x{H}x{W} clip after {MAX_RESAMPLES} resamples")


def background_image(kind: str, H: int, W: int) -> np.ndarray:
    if kind == "solid":
        return np.broadcast_to(_BG_SOLID[:, None, None], (3, H, W)).copy()
    ramp = (np.arange(H) / max(H - 1, 1))[None, :, None]
    return np.broadcast_to(_BG_TOP[:, None, None] * (1 - ramp) + _BG_BOTTOM[:, None, None] * ramp, (3, H, W)).copy()


def coverage(shape_kind: str, cx: float, cy: float, hx: float, hy: float, H: int, W: int) -> np.ndarray:
    """Fraction of each pixel inside the shape, from a 4x4 subpixel grid."""
    offs = (np.arange(SUBSAMPLES) + 0.5) / SUBSAMPLES - 0.5
    xs = (np.arange(W)[:, None] + offs[None, :]).reshape(-1) - cx  # [W*S]
    ys = (np.arange(H)[:, None] + offs[None, :]).reshape(-1) - cy  # [H*S]
    dx, dy = xs[None, :], ys[:, None]
    if shape_kind == "circle":
        inside = dx * dx + dy * dy < hx * hx
    else:
        inside = (dx >= -hx) & (dx < hx) & (dy >= -hy) & (dy < hy)
    return inside.reshape(H, SUBSAMPLES, W, SUBSAMPLES).mean(axis=(1, 3))


def render(spec: SceneSpec, T: int, H: int, W: int) -> VideoSample:
    if T < 2 or H < 8 or W < 8:
        raise GenerationError(f"need T >= 2 and H, W >= 8; got {T}x{H}x{W}")
    hx, hy = half_extents(spec.shape_kind, spec.size, H, W)
    cx0, cy0 = _pixel_center(spec.start_pos, H, W)
    vx, vy = spec.velocity
    bg = background_image(spec.background, H, W)
    color = np.asarray(spec.color, dtype=np.float64)[:, None, None]
    frames = np.empty((T, 3, H, W), dtype=np.float32)
    flow = np.zeros((T - 1, 2, H, W), dtype=np.float32)
    for t in range(T):
        cov = coverage(spec.shape_kind, cx0 + vx * t, cy0 + vy * t, hx, hy, H, W)
        img = bg * (1.0 - cov) + color * cov
        frames[t] = (2.0 * img - 1.0).astype(np.float32)
        if t < T - 1:
            mask = cov > 0
            flow[t, 0][mask] = vx
            flow[t, 1][mask] = vy
    return VideoSample(
        frames=frames,
        spatial_tokens=vocab.tokenize(spec.spatial_caption()),
        motion_tokens=vocab.tokenize(spec.motion_caption()),
        flow=flow,
        spec=spec,
    )


def shape_mask(spec: SceneSpec, t: int, H: int, W: int, full: bool = False) -> np.ndarray:
    hx, hy = half_extents(spec.shape_kind, spec.size, H, W)
    cx0, cy0 = _pixel_center(spec.start_pos, H, W)
    cov = coverage(spec.shape_kind, cx0 + spec.velocity[0] * t, cy0 + spec.velocity[1] * t, hx, hy, H, W)
    return cov >= 1.0 if full else cov > 0


def pool_flow(flow: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool a flow field to a coarser latent grid."""
    if factor == 1:
        return flow
    n, c, h, w = flow.shape
    return flow.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


# ---------------------------------------------------------------------------
# datasets


def parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValueError(f"shape must look like TxHxW, got {text!r}")
    return tuple(int(p) for p in parts)


def make_dataset(n: int, seed: int, T: int, H: int, W: int, out_dir: str | os.PathLike,
                 dump_pgm: bool = False) -> list[str]:
    """Write ``n`` samples plus ``manifest.tsv``; directions cycle right/left/down/up."""
    if n < 1:
        raise ValueError("dataset needs n >= 1")
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    lines = []
    for i in range(n):
        sample_seed = hash64(seed, i)
        rng = np.random.default_rng(sample_seed)
        spec = sample_scene(rng, T, H, W, direction=vocab.DIRECTIONS[i % 4])
        video = render(spec, T, H, W)
        name = f"{i:05d}.vtf"
        vtf.save(os.path.join(out_dir, name), video.frames)
        vtf.save(os.path.join(out_dir, f"{i:05d}.flow.vtf"), video.flow)
        with open(os.path.join(out_dir, f"{i:05d}.scene.txt"), "w", encoding="utf-8") as fh:
            fh.write(scene_to_text(spec))
        if dump_pgm:
            dump_pgm_frames(video.frames, os.path.join(out_dir, "pgm", f"{i:05d}"))
        lines.append(f"{name}\t{spec.spatial_caption()}\t{spec.motion_caption()}\t{sample_seed}")
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "dataset.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"shape={T}x{H}x{W}\nn={n}\nseed={seed}\n")
    vocab.write_table(os.path.join(out_dir, "tokens.tsv"))
    return lines


def scene_to_text(spec: SceneSpec) -> str:
    return "\n".join([
        f"seed={spec.seed}",
        f"shape_kind={spec.shape_kind}",
        "color=" + ",".join(repr(c) for c in spec.color),
        f"size={spec.size!r}",
        "start_pos=" + ",".join(repr(c) for c in spec.start_pos),
        "velocity=" + ",".join(repr(c) for c in spec.velocity),
        f"speed_class={spec.speed_class}",
        f"background={spec.background}",
    ]) + "\n"


def scene_from_text(text: str) -> SceneSpec:
    kv = dict(line.split("=", 1) for line in text.strip().splitlines())
    floats = lambda s: tuple(float(v) for v in s.split(","))  # noqa: E731
    return SceneSpec(int(kv["seed"]), kv["shape_kind"], floats(kv["color"]), float(kv["size"]),
                     floats(kv["start_pos"]), floats(kv["velocity"]), kv["speed_class"], kv["background"])


@dataclass
class DatasetEntry:
    file: str
    spatial_caption: str
    motion_caption: str
    seed: int


def read_manifest(data_dir: str | os.PathLike) -> list[DatasetEntry]:
    path = os.path.join(data_dir, "manifest.tsv")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.tsv in {data_dir}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                f, sc, mc, s = line.rstrip("\n").split("\t")
                out.append(DatasetEntry(f, sc, mc, int(s)))
    return out


def dataset_shape(data_dir: str | os.PathLike) -> tuple[int, int, int]:
    with open(os.path.join(data_dir, "dataset.txt"), encoding="utf-8") as fh:
        meta = dict(line.strip().split("=", 1) for line in fh if "=" in line)
    return parse_shape(meta["shape"])


def load_sample(data_dir: str | os.PathLike, entry: DatasetEntry) -> VideoSample:
    frames = vtf.load(os.path.join(data_dir, entry.file))
    stem = entry.file[: -len(".vtf")]
    flow = vtf.load(os.path.join(data_dir, f"{stem}.flow.vtf"))
    with open(os.path.join(data_dir, f"{stem}.scene.txt"), encoding="utf-8") as fh:
        spec = scene_from_text(fh.read())
    return VideoSample(frames, vocab.tokenize(entry.spatial_caption), vocab.tokenize(entry.motion_caption), flow, spec)


def load_dataset(data_dir: str | os.PathLike) -> list[VideoSample]:
    return [load_sample(data_dir, e) for e in read_manifest(data_dir)]


def dump_pgm_frames(frames: np.ndarray, out_dir: str | os.PathLike) -> None:
    """One binary 8-bit PGM (luma) per frame."""
    os.makedirs(out_dir, exist_ok=True)
    rgb = np.clip((np.asarray(frames, dtype=np.float64) + 1.0) * 0.5, 0.0, 1.0)
    luma = 0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]
    pixels = np.round(luma * 255).astype(np.uint8)
    for t, img in enumerate(pixels):
        h, w = img.shape
        with open(os.path.join(out_dir, f"frame_{t:03d}.pgm"), "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def scene_from_prompt(spatial: str, motion: str, seed: int, T: int, H: int, W: int) -> SceneSpec:
    """A first-frame scene matching the prompt words, with a direction-neutral start.

    Attributes the prompt leaves open are drawn from ``seed``.
    """
    words = spatial.lower().split()
    fixed = {}
    for w in words:
        if w in vocab.COLORS:
            fixed["color"] = vocab.COLORS[w]
        elif w in vocab.SHAPES:
            fixed["shape_kind"] = w
        elif w in vocab.SIZES:
            fixed["size"] = vocab.SIZES[w]
        elif w in vocab.BACKGROUNDS:
            fixed["background"] = w
    mwords = motion.lower().split()
    speed = "fast" if "fast" in mwords else "slow"
    direction = vocab.direction_word(motion) or "right"
    try:
        return sample_scene(np.random.default_rng(seed), T, H, W, direction=direction, speed_class=speed,
                            neutral_start=True, **fixed)
    except GenerationError:
        return sample_scene(np.random.default_rng(seed), T, H, W, direction=direction, speed_class="slow",
                            neutral_start=True, **fixed)


def centroid_px(spec: SceneSpec, H: int, W: int) -> tuple[float, float]:
    return _pixel_center(spec.start_pos, H, W)

