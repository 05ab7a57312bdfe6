"""Forward noising, the denoising + flow objective, staged training and sampling."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from . import predictnet as pn
from . import schedule as sch
from . import scenegen, vocab
from .config import RunConfig, Stage
from .denoiser import ArchConfig, VideoModel, pad_tokens
from .numerics import Tensor, vtf

log = logging.getLogger(__name__)

X0_FLOOR = 1e-4


class TrainingError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


def add_noise(x0, t, eps, sched: sch.NoiseSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` may be per-sample (leading axis)."""
    x0 = np.asarray(getattr(x0, "data", x0))
    eps = np.asarray(getattr(eps, "data", eps))
    if x0.shape != eps.shape:
        raise nx.ShapeError(f"add_noise: x0 {x0.shape} and eps {eps.shape} differ")
    ts = np.atleast_1d(np.asarray(t))
    if ts.min() < 1 or ts.max() > sched.N:
        raise sch.ScheduleError(f"timestep outside [1, {sched.N}]: {ts}")
    ab = sched.alpha_bar[ts - 1]
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    if np.ndim(t) > 0:
        shape = (-1,) + (1,) * (x0.ndim - 1)
        a, b = a.reshape(shape), b.reshape(shape)
    else:
        a, b = a[0], b[0]
    return (a * x0 + b * eps).astype(x0.dtype)


def velocity_target(x0: np.ndarray, eps: np.ndarray, t, sched: sch.NoiseSchedule) -> np.ndarray:
    ab = sched.alpha_bar[np.atleast_1d(t) - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    return (np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * x0).astype(x0.dtype)


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adaptive moments with decoupled weight decay. Parameters without a gradient are skipped."""

    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = dict(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def add_params(self, params: dict) -> None:
        self.params.update(params)

    def step(self) -> None:
        b1, b2 = self.betas
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            self.t[name] += 1
            k = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1**k)
            vhat = v / (1 - b2**k)
            p.data *= np.float32(1 - self.lr * self.weight_decay) if p.dtype == np.float32 else 1 - self.lr * self.weight_decay
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_grads(params, max_norm: float, norm: float) -> None:
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= np.asarray(scale, dtype=p.grad.dtype)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    step: int = 0
    stage: int = 0
    stage_step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def rng_state_json(self) -> str:
        return json.dumps(self.rng.bit_generator.state, sort_keys=True)


@dataclass
class StepResult:
    loss_df: float
    loss_flow: float | None
    total: float
    grad_norm: float
    t: np.ndarray


def collate(samples, direct_captions: bool = False):
    """Stack VideoSamples into arrays; ``direct_captions`` merges spatial + motion captions."""
    frames = np.stack([s.frames for s in samples]).astype(np.float32)
    flow = np.stack([s.flow for s in samples]).astype(np.float32)
    if direct_captions:
        merged = [list(s.spatial_tokens) + list(s.motion_tokens) for s in samples]
        spatial = motion = pad_tokens(merged)
    else:
        spatial = pad_tokens([s.spatial_tokens for s in samples])
        motion = pad_tokens([s.motion_tokens for s in samples])
    return frames, spatial, motion, flow


class Trainer:
    """Owns the model, the optional PredictNet, the optimizer and the RNG stream."""

    def __init__(self, config: RunConfig, model: VideoModel | None = None, state: TrainState | None = None):
        self.config = config
        self.model = model or VideoModel(config.arch(), seed=config["model.seed"])
        self.predictnet: pn.PredictNet | None = None
        self.state = state or TrainState(rng=np.random.default_rng(config["train.seed"]))
        self.optimizer = AdamW(
            self.model.state_dict(), lr=config["train.lr"], betas=(config["train.beta1"], config["train.beta2"]),
            eps=config["train.eps"], weight_decay=config["train.weight_decay"],
        )
        self.direct_captions = not config.arch().factorized

    def enable_predictnet(self) -> pn.PredictNet:
        if self.predictnet is None:
            self.predictnet = pn.init_from_denoiser(self.model.unet)
            self.optimizer.add_params({f"predictnet/{k}": v for k, v in self.predictnet.state_dict().items()})
        return self.predictnet

    def draw_batch(self, dataset: list) -> list:
        n, b = len(dataset), self.config["train.batch"]
        idx = self.state.rng.choice(n, size=min(b, n), replace=False)
        return [dataset[i] for i in idx]

    def training_step(self, batch, sched: sch.NoiseSchedule, use_predictnet: bool = False) -> StepResult:
        """One optimizer step on ``batch``; t, noise and dropout come from the state RNG."""
        cfg, rng = self.config, self.state.rng
        frames, spatial, motion, flow = collate(batch, self.direct_captions)
        B = frames.shape[0]
        t = rng.integers(1, sched.N, size=B)  # excludes t = N
        eps = rng.standard_normal(frames.shape).astype(np.float32)
        drop = rng.random(B) < cfg["train.cond_drop_prob"]
        x_t = add_noise(frames, t, eps, sched)
        y = nx.Tensor(frames[:, 0])
        embs = self.model.embed(spatial, motion, y, drop)
        pred, feats = self.model(nx.Tensor(x_t), t, embs, return_features=True)
        target = eps if cfg["diffusion.param"] == "epsilon" else velocity_target(frames, eps, t, sched)
        loss_df = nx.cast(nx.mse(pred, target), np.float64)
        total = loss_df
        loss_flow = None
        if use_predictnet:
            net = self.enable_predictnet()
            f_hat = pn.predict_flow(net, self.model.unet, feats, embs)
            loss_flow = nx.cast(pn.flow_loss(f_hat, flow), np.float64)
            total = loss_df + loss_flow * cfg["train.gamma"]
        total_value = total.item()
        if not math.isfinite(total_value):
            raise TrainingError(
                f"non-finite loss at step {self.state.step}: t={t.tolist()} loss_df={loss_df.item()} "
                f"loss_flow={None if loss_flow is None else loss_flow.item()}"
            )
        params = list(self.optimizer.params.values())
        total.backward()
        norm = grad_norm(params)
        if not math.isfinite(norm):
            raise TrainingError(f"non-finite gradient norm at step {self.state.step}: t={t.tolist()}")
        clip_grads(params, cfg["train.grad_clip"], norm)
        self.optimizer.step()
        self.optimizer.zero_grad()
        self.state.step += 1
        return StepResult(loss_df.item(), None if loss_flow is None else loss_flow.item(), total_value,
                          norm, t)

    # -- stages -----------------------------------------------------------
    def run_stages(self, data_dir: str, out_dir: str, datasets: dict | None = None,
                   stop_after: int | None = None) -> list[str]:
        """Run every configured stage in order, resuming from ``self.state``.

        Returns the checkpoint directories written. ``stop_after`` halts after
        that many global steps (used to emulate interruption).
        """
        cfg = self.config
        stages = cfg.stages()
        os.makedirs(out_dir, exist_ok=True)
        cfg.echo(out_dir)
        datasets = datasets if datasets is not None else {}
        for st in stages:
            if st.shape_text not in datasets:
                datasets[st.shape_text] = load_stage_dataset(data_dir, st)
        log_path = os.path.join(out_dir, "loss_log.csv")
        if self.state.step == 0 or not os.path.exists(log_path):
            with open(log_path, "w", encoding="utf-8") as fh:
                fh.write("step,stage,loss_df,loss_flow,grad_norm\n")
        written = []
        nx.set_check_finite(cfg["numerics.check_finite"])
        for si in range(self.state.stage, len(stages)):
            st = stages[si]
            sched = cfg.schedule_for(st.shape)
            data = datasets[st.shape_text]
            if st.use_predictnet:
                self.enable_predictnet()
            log.info("stage %s (%s) s=%s, %d steps", st.name, st.shape_text, sched.shift, st.steps)
            while self.state.stage_step < st.steps:
                if stop_after is not None and self.state.step >= stop_after:
                    return written
                res = self.training_step(self.draw_batch(data), sched, st.use_predictnet)
                self.state.stage_step += 1
                with open(log_path, "a", encoding="utf-8") as fh:
                    flow = "" if res.loss_flow is None else repr(res.loss_flow)
                    fh.write(f"{self.state.step},{st.name},{res.loss_df!r},{flow},{res.grad_norm!r}\n")
                every = cfg["train.ckpt_every"]
                if every and self.state.stage_step % every == 0 and self.state.stage_step < st.steps:
                    written.append(self.save(os.path.join(out_dir, f"step{self.state.step:06d}"), st))
            self.state.stage += 1
            self.state.stage_step = 0
            written.append(self.save(os.path.join(out_dir, f"stage{si + 1}_{st.name}"), st))
        return written

    # -- checkpoints ------------------------------------------------------
    def save(self, ckpt_dir: str, stage: Stage) -> str:
        save_checkpoint(ckpt_dir, self.model, self.predictnet, self.config, self.config.schedule_for(stage.shape),
                        stage)
        state_dir = os.path.join(ckpt_dir, "state")
        os.makedirs(state_dir, exist_ok=True)
        for name in self.optimizer.m:
            safe = name.replace("/", "__")
            vtf.save(os.path.join(state_dir, f"m.{safe}.vtf"), self.optimizer.m[name])
            vtf.save(os.path.join(state_dir, f"v.{safe}.vtf"), self.optimizer.v[name])
        with open(os.path.join(state_dir, "state.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"step={self.state.step}\nstage={self.state.stage}\nstage_step={self.state.stage_step}\n")
            fh.write("adam_t=" + json.dumps(self.optimizer.t, sort_keys=True) + "\n")
            fh.write("rng=" + self.state.rng_state_json() + "\n")
        return ckpt_dir

    @classmethod
    def resume(cls, ckpt_dir: str, config: RunConfig | None = None) -> "Trainer":
        config = config or load_checkpoint_config(ckpt_dir)
        model, net = load_checkpoint(ckpt_dir)
        meta = {}
        with open(os.path.join(ckpt_dir, "state", "state.txt"), encoding="utf-8") as fh:
            for line in fh:
                k, _, v = line.rstrip("\n").partition("=")
                meta[k] = v
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(meta["rng"])
        state = TrainState(int(meta["step"]), int(meta["stage"]), int(meta["stage_step"]), rng)
        tr = cls(config, model, state)
        if net is not None:
            tr.predictnet = net
            tr.optimizer.add_params({f"predictnet/{k}": v for k, v in net.state_dict().items()})
        tr.optimizer.t = {k: int(v) for k, v in json.loads(meta["adam_t"]).items()}
        for name in tr.optimizer.t:
            safe = name.replace("/", "__")
            tr.optimizer.m[name] = vtf.load(os.path.join(ckpt_dir, "state", f"m.{safe}.vtf"))
            tr.optimizer.v[name] = vtf.load(os.path.join(ckpt_dir, "state", f"v.{safe}.vtf"))
        return tr


def load_stage_dataset(data_dir: str, stage: Stage) -> list:
    """Samples for a stage: ``data_dir/TxHxW/`` or ``data_dir`` itself when its shape matches."""
    sub = os.path.join(data_dir, stage.shape_text)
    if os.path.exists(os.path.join(sub, "manifest.tsv")):
        return scenegen.load_dataset(sub)
    if os.path.exists(os.path.join(data_dir, "manifest.tsv")) and scenegen.dataset_shape(data_dir) == stage.shape:
        return scenegen.load_dataset(data_dir)
    raise FileNotFoundError(f"no dataset of shape {stage.shape_text} under {data_dir}")


def save_checkpoint(ckpt_dir: str, model: VideoModel, net: pn.PredictNet | None, config: RunConfig,
                    sched: sch.NoiseSchedule, stage: Stage | None = None) -> None:
    os.makedirs(ckpt_dir, exist_ok=True)
    for name, p in model.named_parameters():
        vtf.save(os.path.join(ckpt_dir, f"{name}.vtf"), p.data)
    with open(os.path.join(ckpt_dir, "arch.txt"), "w", encoding="utf-8") as fh:
        fh.write(model.cfg.to_text())
        if stage is not None:
            fh.write(f"frames={stage.frames}\nheight={stage.height}\nwidth={stage.width}\n")
    if net is not None:
        pdir = os.path.join(ckpt_dir, "predictnet")
        os.makedirs(pdir, exist_ok=True)
        for name, p in net.named_parameters():
            vtf.save(os.path.join(pdir, f"{name}.vtf"), p.data)
    sch.save(sched, ckpt_dir)
    config.echo(ckpt_dir)


def load_checkpoint_config(ckpt_dir: str) -> RunConfig:
    from .config import load

    return load(os.path.join(ckpt_dir, "config.resolved.txt"))


def _arch_meta(ckpt_dir: str) -> dict:
    with open(os.path.join(ckpt_dir, "arch.txt"), encoding="utf-8") as fh:
        return dict(line.strip().split("=", 1) for line in fh if "=" in line)


def checkpoint_frames(ckpt_dir: str) -> int:
    return int(_arch_meta(ckpt_dir).get("frames", 8))


def checkpoint_size(ckpt_dir: str) -> tuple[int, int]:
    meta = _arch_meta(ckpt_dir)
    return int(meta.get("height", 16)), int(meta.get("width", 16))


def load_checkpoint(ckpt_dir: str, with_predictnet: bool = True):
    with open(os.path.join(ckpt_dir, "arch.txt"), encoding="utf-8") as fh:
        arch = ArchConfig.from_text(fh.read())
    model = VideoModel(arch)
    state = {}
    for name, _ in model.named_parameters():
        path = os.path.join(ckpt_dir, f"{name}.vtf")
        if not os.path.exists(path):
            raise FileNotFoundError(f"checkpoint {ckpt_dir} lacks {name}")
        state[name] = vtf.load(path)
    model.load_state_dict(state)
    net = None
    pdir = os.path.join(ckpt_dir, "predictnet")
    if with_predictnet and os.path.isdir(pdir):
        net = pn.PredictNet(model.unet)
        net.load_state_dict({n: vtf.load(os.path.join(pdir, f"{n}.vtf")) for n, _ in net.named_parameters()})
    return model, net


# ---------------------------------------------------------------------------
# sampling


def sampling_timesteps(N: int, steps: int) -> np.ndarray:
    """Strided descending sub-sequence from N to 1."""
    steps = max(2, min(steps, N))
    return np.unique(np.round(np.linspace(1, N, steps)).astype(np.int64))[::-1]


def sample(model, first_frame, spatial_tokens, motion_tokens, sched: sch.NoiseSchedule, steps: int = 25,
           guidance_scale: float = 1.0, seed: int = 0, frames: int = 8, param: str = "epsilon",
           clip_x0: bool = True, strict: bool = True, direct_captions: bool = False) -> np.ndarray:
    """Deterministic (eta = 0) reverse process from pure noise at t = N; returns [T, 3, H, W]."""
    if strict and not (sched.rescaled and sched.alpha_bar[-1] == 0.0):
        raise SamplingError("sampling needs a zero-terminal-SNR schedule; rescale it first")
    y = np.asarray(getattr(first_frame, "data", first_frame), dtype=np.float32)
    if y.ndim != 3:
        raise nx.ShapeError(f"first frame must be [3, H, W], got {y.shape}")
    _, H, W = y.shape
    spatial_tokens, motion_tokens = list(spatial_tokens), list(motion_tokens)
    if direct_captions:
        spatial_tokens = motion_tokens = spatial_tokens + motion_tokens
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, frames, 3, H, W)).astype(np.float32)
    with nx.no_grad():
        y_t = nx.Tensor(y[None])
        cond = model.embed([spatial_tokens], [motion_tokens], y_t)
        uncond = model.embed([spatial_tokens], [motion_tokens], y_t, drop=[True]) if guidance_scale > 1 else None
        ts = sampling_timesteps(sched.N, steps)
        x0 = x
        for i, t in enumerate(ts):
            out = model(nx.Tensor(x), np.array([t]), cond).data
            if uncond is not None:
                out_u = model(nx.Tensor(x), np.array([t]), uncond).data
                out = out_u + guidance_scale * (out - out_u)
            ab = float(sched.alpha_bar[t - 1])
            a, b = math.sqrt(ab), math.sqrt(1.0 - ab)
            if param == "v":
                x0 = a * x - b * out
                eps = b * x + a * out
            else:
                eps = out
                x0 = (x - b * eps) / max(a, X0_FLOOR)
            if clip_x0:
                x0 = np.clip(x0, -1.0, 1.0)
                if b > 0:
                    eps = (x - a * x0) / b
            if i == len(ts) - 1:
                break
            ab_prev = float(sched.alpha_bar[ts[i + 1] - 1])
            x = (math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps).astype(np.float32)
    return np.asarray(x0[0], dtype=np.float32)


def first_frame_from_prompt(spatial: str, motion: str, seed: int, T: int, H: int, W: int):
    spec = scenegen.scene_from_prompt(spatial, motion, seed, T, H, W)
    return scenegen.render(spec, T, H, W).frames[0], spec


def prompt_tokens(spatial: str, motion: str) -> tuple[list, list]:
    return vocab.tokenize(spatial), vocab.tokenize(motion)
