"""Flow-prediction head built from a copy of the denoiser's up-branch."""

from __future__ import annotations

import numpy as np

from . import nn
from . import numerics as nx
from .denoiser import Denoiser, EmbeddingSet, UpLevel, _frames_to_video, _video_to_frames
from .numerics import Tensor


class FlowHead(nn.Module):
    """Per-frame norm, then a conv over concatenated (frame t, frame t+1) features -> (dx, dy)."""

    def __init__(self, c: int, groups: int):
        self.norm = nn.GroupNorm(groups, c)
        self.weight = nn.param(np.zeros((2, 2 * c, 3, 3)))
        self.bias = nn.param(np.zeros(2))

    def __call__(self, h: Tensor) -> Tensor:
        b, t = h.shape[:2]
        f = _frames_to_video(nx.silu(self.norm(_video_to_frames(h))), b)
        pairs = nx.concat([f[:, :-1], f[:, 1:]], axis=2)  # [B, T-1, 2C, H, W]
        flat = pairs.reshape((b * (t - 1),) + pairs.shape[2:])
        out = nx.conv2d(flat, self.weight, self.bias, padding=1)
        return out.reshape(b, t - 1, 2, *out.shape[-2:])


class PredictNet(nn.Module):
    def __init__(self, denoiser: Denoiser):
        cfg = denoiser.cfg
        c0, c1 = cfg.channels
        rng = np.random.default_rng(0)  # overwritten by the copy below
        self.up = [UpLevel(c1, c1, c1, cfg, rng), UpLevel(c1, c0, c0, cfg, rng)]
        self.head = FlowHead(c0, cfg.groups)
        self.arch = cfg.to_text()

    def up_state(self) -> dict:
        return {name: p for name, p in self.named_parameters() if name.startswith("up.")}

    def __call__(self, denoiser: Denoiser, feats: dict, embs: EmbeddingSet) -> Tensor:
        return predict_flow(self, denoiser, feats, embs)


def init_from_denoiser(denoiser: Denoiser) -> PredictNet:
    """Copy the denoiser's up-branch bitwise; the flow head starts at zero."""
    net = PredictNet(denoiser)
    src = {n: p for n, p in denoiser.named_parameters() if n.startswith("up.")}
    dst = net.up_state()
    if set(src) != set(dst):
        raise nx.ShapeError("predictnet: up-branch layout does not match the denoiser descriptor")
    for name, p in dst.items():
        if src[name].shape != p.shape:
            raise nx.ShapeError(f"predictnet: {name} shape {src[name].shape} != {p.shape}")
        p.data = src[name].data.copy()
    return net


def predict_flow(net: PredictNet, denoiser: Denoiser, feats: dict | None, embs: EmbeddingSet) -> Tensor:
    """Flow [B, T-1, 2, H, W] from the denoiser's down/mid activations for the same (x_t, t, embs)."""
    if not feats or "mid" not in feats or "skips" not in feats:
        raise ValueError("predict_flow needs the denoiser's mid and skip features")
    if net.arch != denoiser.cfg.to_text():
        raise nx.ShapeError("predictnet was built for a different denoiser descriptor")
    h = denoiser.decode(feats, embs, up=net.up)
    return net.head(h)


def flow_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every flow component."""
    target = target if isinstance(target, Tensor) else nx.Tensor(np.asarray(target, dtype=pred.dtype), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise nx.ShapeError(f"flow_loss: prediction {pred.shape} vs target {target.shape}")
    return nx.mse(pred, target)
