"""Factorized spatiotemporal denoiser with adapter cross-attention and PACA.

Video activations are kept as ``[B, T, C, H, W]``. Spatial attention runs on
per-frame token grids ``[B, T, H*W, C]``; temporal blocks run on per-pixel
sequences ``[B, H*W, T, C]``.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from . import numerics as nx
from . import vocab
from .numerics import Tensor

_recorded_attention: list | None = None


@contextlib.contextmanager
def record_attention():
    """Collect every attention weight matrix computed inside the block."""
    global _recorded_attention
    prev, _recorded_attention = _recorded_attention, []
    try:
        yield _recorded_attention
    finally:
        _recorded_attention = prev


def attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Single-head scaled dot-product attention, batched over leading dims."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise nx.ShapeError(f"attention dims disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = nx.matmul(q, nx.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    weights = nx.softmax(scores * (1.0 / math.sqrt(q.shape[-1])), axis=-1)
    if _recorded_attention is not None:
        _recorded_attention.append(weights.data.copy())
    return nx.matmul(weights, v)


def _split_kv(kv: Tensor) -> tuple[Tensor, Tensor]:
    d = kv.shape[-1] // 2
    return kv[..., :d], kv[..., d:]


class CrossAttention(nn.Module):
    """``out(attn(to_q(x), to_kv(emb)))``."""

    def __init__(self, d: int, d_emb: int, d_attn: int, rng: np.random.Generator):
        self.to_q = nn.Linear(d, d_attn, rng, bias=False)
        self.to_kv = nn.Linear(d_emb, 2 * d_attn, rng, bias=False)
        self.out = nn.Linear(d_attn, d, rng)


def cross_attention(x: Tensor, emb: Tensor, params: CrossAttention) -> Tensor:
    """x: [..., n, d], emb: [..., L, d_e] -> [..., n, d]."""
    if x.shape[-1] != params.to_q.weight.shape[0] or emb.shape[-1] != params.to_kv.weight.shape[0]:
        raise nx.ShapeError(
            f"cross_attention: x {x.shape} / emb {emb.shape} do not match projections "
            f"{params.to_q.weight.shape} / {params.to_kv.weight.shape}"
        )
    k, v = _split_kv(params.to_kv(emb))
    return params.out(attend(params.to_q(x), k, v))


class AdapterCrossAttention(CrossAttention):
    """Text cross-attention plus a lambda-weighted image branch sharing to_q and out."""

    def __init__(self, d: int, d_emb: int, d_img: int, d_attn: int, rng: np.random.Generator, lam: float = 1.0):
        super().__init__(d, d_emb, d_attn, rng)
        self.to_kv_adp = nn.Linear(d_img, 2 * d_attn, rng, bias=False)
        self.lam = float(lam)


def adapter_cross_attention(x: Tensor, emb_txt: Tensor, emb_img: Tensor | None, lam: float,
                            params: AdapterCrossAttention) -> Tensor:
    """CA(to_q(x), to_kv(emb_txt)) + lam * CA(to_q(x), to_kv_adp(emb_img)).

    With ``lam == 0`` the image branch is skipped entirely, so the result is
    exactly the plain cross-attention.
    """
    if lam == 0:
        return cross_attention(x, emb_txt, params)
    if emb_img is None or getattr(params, "to_kv_adp", None) is None:
        raise ValueError("adapter branch needs emb_img and to_kv_adp when lam != 0")
    q = params.to_q(x)
    k, v = _split_kv(params.to_kv(emb_txt))
    ka, va = _split_kv(params.to_kv_adp(emb_img))
    return params.out(attend(q, k, v)) + params.out(attend(q, ka, va)) * lam


class PACA(nn.Module):
    """Pixel-aware cross attention: keys/values come from the first-frame pixel grid."""

    def __init__(self, d: int, d_y: int, d_pos: int, d_attn: int, rng: np.random.Generator):
        self.to_q = nn.Linear(d + d_pos, d_attn, rng, bias=False)
        self.to_kv = nn.Linear(d_y + d_pos, 2 * d_attn, rng, bias=False)
        self.out = nn.Linear(d_attn, d, rng)
        self.d_pos = d_pos


def position_grid(h: int, w: int, dim: int) -> np.ndarray:
    """2-D sinusoidal position codes, [h*w, dim] (half for rows, half for columns)."""
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    half = dim // 2
    return np.concatenate(
        [nn.sinusoidal(ys.reshape(-1), half, 64.0), nn.sinusoidal(xs.reshape(-1), dim - half, 64.0)], axis=-1
    )


def paca(x: Tensor, y_feat: Tensor, params: PACA, grid: tuple[int, int] | None = None) -> Tensor:
    """x: [..., n, d] tokens of an h x w grid; y_feat: [..., m, d_y] first-frame pixels.

    Both sides get the same 2-D position code, so attention can align query
    pixels with condition pixels; ``m`` must equal ``n`` unless ``m == 1``.
    """
    n, m = x.shape[-2], y_feat.shape[-2]
    if m not in (1, n):
        raise nx.ShapeError(f"paca: pooled condition has {m} pixels but the block grid has {n}")
    if grid is None:
        side = int(round(math.sqrt(n)))
        grid = (side, n // side)
    if grid[0] * grid[1] != n:
        raise nx.ShapeError(f"paca: grid {grid} does not hold {n} tokens")
    pe = position_grid(grid[0], grid[1], params.d_pos).astype(x.dtype)
    pe_x = nx.Tensor(np.broadcast_to(pe, x.shape[:-1] + (params.d_pos,)), dtype=x.dtype)
    pe_y = nx.Tensor(np.broadcast_to(pe[:m], y_feat.shape[:-1] + (params.d_pos,)), dtype=x.dtype)
    q = params.to_q(nx.concat([x, pe_x], axis=-1))
    k, v = _split_kv(params.to_kv(nx.concat([y_feat, pe_y], axis=-1)))
    return params.out(attend(q, k, v))


# ---------------------------------------------------------------------------
# architecture


@dataclass
class ArchConfig:
    channels: tuple = (32, 64)
    in_channels: int = 3
    emb_dim: int = 32
    temb_dim: int = 128
    groups: int = 8
    pos_dim: int = 16
    max_tokens: int = 16
    lam: float = 1.0
    use_temporal: bool = True
    use_adapter: bool = True
    use_paca: bool = True
    use_first_frame_concat: bool = True
    shared_text_encoder: bool = False

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchConfig":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)
        out = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            default = getattr(cls(), f.name)
            if isinstance(default, tuple):
                out[f.name] = tuple(int(v) for v in raw.split(","))
            elif isinstance(default, bool):
                out[f.name] = raw == "true"
            elif isinstance(default, float):
                out[f.name] = float(raw)
            else:
                out[f.name] = int(raw)
        return cls(**out)

    @property
    def factorized(self) -> bool:
        return self.use_adapter and self.use_paca and self.use_first_frame_concat


@dataclass
class EmbeddingSet:
    emb_txt: Tensor  # [B, L_s, d]
    emb_img: Tensor | None  # [B, 1, d]
    emb_motion: Tensor  # [B, L_m, d]
    y: Tensor  # [B, C, H, W] latent first frame
    extra: dict = field(default_factory=dict)


def _video_to_frames(x: Tensor) -> Tensor:
    b, t = x.shape[:2]
    return x.reshape((b * t,) + x.shape[2:])


def _frames_to_video(x: Tensor, b: int) -> Tensor:
    return x.reshape((b, x.shape[0] // b) + x.shape[1:])


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int, groups: int, rng: np.random.Generator):
        self.norm1 = nn.GroupNorm(min(groups, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng)
        self.temb = nn.Linear(temb_dim, c_out, rng)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng)
        self.skip = nn.Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        # x: [B, T, C, H, W]; temb: [B, temb_dim]
        b, t = x.shape[:2]
        f = _video_to_frames(x)
        h = self.conv1(nx.silu(self.norm1(f)))
        bias = self.temb(nx.silu(temb))  # [B, C]
        h = _frames_to_video(h, b) + bias.reshape(b, 1, -1, 1, 1)
        h = self.conv2(nx.silu(self.norm2(_video_to_frames(h))))
        skip = self.skip(f) if self.skip is not None else f
        return _frames_to_video(h + skip, b)


def _tokens(x: Tensor) -> Tensor:
    """[B, T, C, H, W] -> [B, T, H*W, C]."""
    b, t, c, h, w = x.shape
    return nx.transpose(x.reshape(b, t, c, h * w), (0, 1, 3, 2))


def _untokens(z: Tensor, h: int, w: int) -> Tensor:
    b, t, n, c = z.shape
    return nx.transpose(z, (0, 1, 3, 2)).reshape(b, t, c, h, w)


class SpatialBlock(nn.Module):
    """Per-frame adapter cross-attention to the spatial caption and image embedding."""

    def __init__(self, c: int, cfg: ArchConfig, rng: np.random.Generator):
        self.norm = nn.LayerNorm(c)
        if cfg.use_adapter:
            self.attn = AdapterCrossAttention(c, cfg.emb_dim, cfg.emb_dim, c, rng, lam=cfg.lam)
        else:
            self.attn = CrossAttention(c, cfg.emb_dim, c, rng)

    def __call__(self, x: Tensor, embs: EmbeddingSet) -> Tensor:
        b, t, c, h, w = x.shape
        tok = _tokens(x)
        emb = embs.emb_txt.reshape(b, 1, *embs.emb_txt.shape[1:])
        if isinstance(self.attn, AdapterCrossAttention):
            img = None if embs.emb_img is None else embs.emb_img.reshape(b, 1, *embs.emb_img.shape[1:])
            z = adapter_cross_attention(self.norm(tok), emb, img, self.attn.lam, self.attn)
        else:
            z = cross_attention(self.norm(tok), emb, self.attn)
        return x + _untokens(z, h, w)


class TemporalBlock(nn.Module):
    """Temporal conv + frame self-attention + cross-attention to the motion caption."""

    def __init__(self, c: int, cfg: ArchConfig, rng: np.random.Generator):
        self.norm_conv = nn.GroupNorm(cfg.groups, c)
        self.conv = nn.TemporalConv(c, c, 3, rng)
        self.norm_self = nn.LayerNorm(c)
        self.to_qkv = nn.Linear(c, 3 * c, rng, bias=False)
        self.self_out = nn.Linear(c, c, rng)
        self.norm_motion = nn.LayerNorm(c)
        self.motion = CrossAttention(c, cfg.emb_dim, c, rng)

    def __call__(self, x: Tensor, embs: EmbeddingSet) -> Tensor:
        b, t, c, h, w = x.shape
        # [B, T, C, H, W] -> [B, HW, C, T]
        seq = nx.transpose(x.reshape(b, t, c, h * w), (0, 3, 2, 1))
        flat = seq.reshape(b * h * w, c, t)
        flat = flat + self.conv(nx.silu(self.norm_conv(flat)))
        tok = nx.transpose(flat.reshape(b, h * w, c, t), (0, 1, 3, 2))  # [B, HW, T, C]
        pe = nx.Tensor(nn.sinusoidal(np.arange(t), c, 100.0).astype(x.dtype), dtype=x.dtype)
        qkv = self.to_qkv(self.norm_self(tok) + pe)
        q, k, v = qkv[..., :c], qkv[..., c : 2 * c], qkv[..., 2 * c :]
        tok = tok + self.self_out(attend(q, k, v))
        emb = embs.emb_motion.reshape(b, 1, *embs.emb_motion.shape[1:])
        tok = tok + cross_attention(self.norm_motion(tok), emb, self.motion)
        return nx.transpose(tok, (0, 3, 2, 1)).reshape(b, t, c, h, w)


class PACABlock(nn.Module):
    def __init__(self, c: int, cfg: ArchConfig, rng: np.random.Generator):
        self.norm = nn.LayerNorm(c)
        self.attn = PACA(c, cfg.in_channels, cfg.pos_dim, c, rng)
        self.enabled = True

    def __call__(self, x: Tensor, y_feat: Tensor) -> Tensor:
        if not self.enabled:
            return x
        b, t, c, h, w = x.shape
        z = paca(self.norm(_tokens(x)), y_feat.reshape(b, 1, *y_feat.shape[1:]), self.attn, grid=(h, w))
        return x + _untokens(z, h, w)


def pooled_first_frame(y: Tensor, factor: int) -> Tensor:
    """[B, C, H, W] -> [B, (H/f)*(W/f), C] pixel tokens at a block's resolution."""
    if factor > 1:
        y = nx.avg_pool2d(y, factor)
    b, c, h, w = y.shape
    return nx.transpose(y.reshape(b, c, h * w), (0, 2, 1))


class UpLevel(nn.Module):
    def __init__(self, c_in: int, c_skip: int, c: int, cfg: ArchConfig, rng: np.random.Generator):
        self.res = ResBlock(c_in + c_skip, c, cfg.temb_dim, cfg.groups, rng)
        self.spatial = SpatialBlock(c, cfg, rng)
        self.temporal = TemporalBlock(c, cfg, rng) if cfg.use_temporal else None
        self.paca = PACABlock(c, cfg, rng) if cfg.use_paca else None

    def __call__(self, h, skip, temb, embs, y_tokens, use_temporal=True):
        h = self.res(nx.concat([h, skip], axis=2), temb)
        h = self.spatial(h, embs)
        if self.temporal is not None and use_temporal:
            h = self.temporal(h, embs)
        if self.paca is not None:
            h = self.paca(h, y_tokens)
        return h


class DownLevel(nn.Module):
    def __init__(self, c_in: int, c: int, cfg: ArchConfig, rng: np.random.Generator):
        self.res = ResBlock(c_in, c, cfg.temb_dim, cfg.groups, rng)
        self.spatial = SpatialBlock(c, cfg, rng)
        self.temporal = TemporalBlock(c, cfg, rng) if cfg.use_temporal else None

    def __call__(self, h, temb, embs, use_temporal=True):
        h = self.spatial(self.res(h, temb), embs)
        if self.temporal is not None and use_temporal:
            h = self.temporal(h, embs)
        return h


def timestep_features(t, dim: int, dtype) -> np.ndarray:
    return nn.sinusoidal(np.atleast_1d(np.asarray(t, dtype=np.float64)), dim, 1000.0).astype(dtype)


class Denoiser(nn.Module):
    """UNet over ``[B, T, C, H, W]`` with two resolutions (full and /2)."""

    def __init__(self, cfg: ArchConfig, rng: np.random.Generator):
        self.cfg = cfg
        c0, c1 = cfg.channels
        c_in = cfg.in_channels * (2 if cfg.use_first_frame_concat else 1)
        self.conv_in = nn.Conv2d(c_in, c0, 3, rng)
        self.time1 = nn.Linear(c0, cfg.temb_dim, rng)
        self.time2 = nn.Linear(cfg.temb_dim, cfg.temb_dim, rng)
        self.down = [DownLevel(c0, c0, cfg, rng), DownLevel(c0, c1, cfg, rng)]
        self.mid = ResBlock(c1, c1, cfg.temb_dim, cfg.groups, rng)
        self.up = [UpLevel(c1, c1, c1, cfg, rng), UpLevel(c1, c0, c0, cfg, rng)]
        self.norm_out = nn.GroupNorm(cfg.groups, c0)
        self.conv_out = nn.Conv2d(c0, cfg.in_channels, 3, rng)
        self.temporal_enabled = True

    def time_embedding(self, t, b: int, dtype) -> Tensor:
        feats = timestep_features(t, self.cfg.channels[0], dtype)
        if feats.shape[0] == 1 and b > 1:
            feats = np.repeat(feats, b, axis=0)
        return self.time2(nx.silu(self.time1(nx.Tensor(feats, dtype=dtype))))

    def encode(self, x_t: Tensor, t, embs: EmbeddingSet) -> dict:
        """Down/mid pass; returns the activations the up-branches consume."""
        b, T, c, h, w = x_t.shape
        if c != self.cfg.in_channels or h % 2 or w % 2:
            raise nx.ShapeError(f"denoiser expects [B, T, {self.cfg.in_channels}, H, W] with even H, W; got {x_t.shape}")
        if embs.y.shape[-2:] != (h, w):
            raise nx.ShapeError(f"first frame {embs.y.shape} does not match latent grid {(h, w)}")
        temb = self.time_embedding(t, b, x_t.dtype)
        inp = x_t
        if self.cfg.use_first_frame_concat:
            y = nx.broadcast_to(embs.y.reshape(b, 1, c, h, w), (b, T, c, h, w))
            inp = nx.concat([x_t, y], axis=2)
        h0 = _frames_to_video(self.conv_in(_video_to_frames(inp)), b)
        s0 = self.down[0](h0, temb, embs, self.temporal_enabled)
        h1 = _frames_to_video(nx.avg_pool2d(_video_to_frames(s0), 2), b)
        s1 = self.down[1](h1, temb, embs, self.temporal_enabled)
        mid = self.mid(s1, temb)
        y_tokens = [pooled_first_frame(embs.y, 1), pooled_first_frame(embs.y, 2)] if self.cfg.use_paca else [None, None]
        return {"skips": [s0, s1], "mid": mid, "temb": temb, "y_tokens": y_tokens, "batch": b}

    def decode(self, feats: dict, embs: EmbeddingSet, up=None) -> Tensor:
        """Up-branch; ``up`` substitutes another pair of UpLevels (PredictNet's copy)."""
        up = up or self.up
        s0, s1 = feats["skips"]
        b = feats["batch"]
        temb, (y0, y1) = feats["temb"], feats["y_tokens"]
        h = up[0](feats["mid"], s1, temb, embs, y1, self.temporal_enabled)
        h = _frames_to_video(nx.upsample_nearest2d(_video_to_frames(h), 2), b)
        return up[1](h, s0, temb, embs, y0, self.temporal_enabled)

    def __call__(self, x_t: Tensor, t, embs: EmbeddingSet, return_features: bool = False):
        unbatched = x_t.ndim == 4
        if unbatched:
            x_t = x_t.reshape(1, *x_t.shape)
            embs = batch_embeddings(embs)
        feats = self.encode(x_t, t, embs)
        h = self.decode(feats, embs)
        b = feats["batch"]
        out = self.conv_out(nx.silu(self.norm_out(_video_to_frames(h))))
        out = _frames_to_video(out, b)
        if unbatched:
            out = out.reshape(out.shape[1:])
        return (out, feats) if return_features else out


def batch_embeddings(embs: EmbeddingSet) -> EmbeddingSet:
    """Add a leading batch axis to an unbatched EmbeddingSet."""
    def lift(t, rank):
        return None if t is None else (t if t.ndim == rank + 1 else t.reshape(1, *t.shape))
    return EmbeddingSet(lift(embs.emb_txt, 2), lift(embs.emb_img, 2), lift(embs.emb_motion, 2), lift(embs.y, 3),
                        embs.extra)


# ---------------------------------------------------------------------------
# condition encoders


class TextEncoder(nn.Module):
    """Token table + learned positions + one pre-norm self-attention layer."""

    def __init__(self, cfg: ArchConfig, rng: np.random.Generator):
        d = cfg.emb_dim
        self.tokens = nn.Embedding(vocab.VOCAB_SIZE, d, rng)
        self.positions = nn.param(rng.normal(0.0, 0.02, size=(cfg.max_tokens, d)))
        self.norm = nn.LayerNorm(d)
        self.to_qkv = nn.Linear(d, 3 * d, rng, bias=False)
        self.out = nn.Linear(d, d, rng)
        self.norm_out = nn.LayerNorm(d)

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        L, d = ids.shape[-1], self.tokens.weight.shape[1]
        if L > self.positions.shape[0]:
            raise nx.ShapeError(f"caption of {L} tokens exceeds the {self.positions.shape[0]}-token limit")
        x = self.tokens(ids) + self.positions[:L]
        qkv = self.to_qkv(self.norm(x))
        x = x + self.out(attend(qkv[..., :d], qkv[..., d : 2 * d], qkv[..., 2 * d :]))
        return self.norm_out(x)


class ImageEncoder(nn.Module):
    """Small conv stack + global average pool -> one global image token."""

    def __init__(self, cfg: ArchConfig, rng: np.random.Generator):
        self.conv1 = nn.Conv2d(cfg.in_channels, 16, 3, rng)
        self.conv2 = nn.Conv2d(16, 32, 3, rng)
        self.proj = nn.Linear(32, cfg.emb_dim, rng)

    def __call__(self, y: Tensor) -> Tensor:
        h = nx.silu(self.conv1(y))
        h = nx.silu(self.conv2(nx.avg_pool2d(h, 2)))
        pooled = nx.mean(h, axis=(2, 3))  # [B, 32]
        return self.proj(pooled).reshape(y.shape[0], 1, -1)


def pad_tokens(seqs, length: int | None = None) -> np.ndarray:
    length = length or max(len(s) for s in seqs)
    out = np.full((len(seqs), length), vocab.PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        s = list(s)[:length]
        out[i, : len(s)] = s
    return out


class Conditioner(nn.Module):
    """Spatial-caption, motion-caption and image encoders plus null-condition handling."""

    def __init__(self, cfg: ArchConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.spatial = TextEncoder(cfg, rng)
        self.motion = None if cfg.shared_text_encoder else TextEncoder(cfg, rng)
        self.image = ImageEncoder(cfg, rng) if cfg.use_adapter else None

    def __call__(self, spatial_ids, motion_ids, y: Tensor, drop=None) -> EmbeddingSet:
        """``drop``: per-sample bool mask; dropped samples get <null> captions and a zero image embedding."""
        spatial_ids = np.array(spatial_ids, dtype=np.int64)
        motion_ids = np.array(motion_ids, dtype=np.int64)
        if drop is not None:
            drop = np.asarray(drop, dtype=bool)
            spatial_ids[drop] = vocab.NULL
            motion_ids[drop] = vocab.NULL
        emb_txt = self.spatial(spatial_ids)
        emb_motion = (self.motion or self.spatial)(motion_ids)
        emb_img = None
        if self.image is not None:
            emb_img = self.image(y)
            if drop is not None and drop.any():
                keep = nx.Tensor((~drop).astype(y.dtype).reshape(-1, 1, 1), dtype=y.dtype)
                emb_img = emb_img * keep
        return EmbeddingSet(emb_txt, emb_img, emb_motion, y)


class VideoModel(nn.Module):
    """Conditioner + denoiser: everything that is needed at sampling time."""

    def __init__(self, cfg: ArchConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.cond = Conditioner(cfg, rng)
        self.unet = Denoiser(cfg, rng)

    def embed(self, spatial_tokens, motion_tokens, first_frames: Tensor, drop=None) -> EmbeddingSet:
        """Token lists/arrays per sample + first frames [B, C, H, W]."""
        L = self.cfg.max_tokens
        if not isinstance(spatial_tokens, np.ndarray):
            spatial_tokens = pad_tokens(spatial_tokens, min(L, max(len(s) for s in spatial_tokens)))
        if not isinstance(motion_tokens, np.ndarray):
            motion_tokens = pad_tokens(motion_tokens, min(L, max(len(s) for s in motion_tokens)))
        return self.cond(spatial_tokens, motion_tokens, first_frames, drop)

    def __call__(self, x_t: Tensor, t, embs: EmbeddingSet, return_features: bool = False):
        return self.unet(x_t, t, embs, return_features)
