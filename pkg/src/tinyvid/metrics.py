"""Desk-scale evaluation metrics and the ablation harness."""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import diffusion, scenegen, vocab
from . import schedule as sch
from .config import RunConfig

log = logging.getLogger(__name__)

VARIANTS = ("full", "no-shift", "no-rescale", "direct-t2v", "single-encoder", "no-predictnet")


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pure metrics


def _pair_correlation(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel().astype(np.float64)
    b = b.ravel().astype(np.float64)
    da, db = a - a.mean(), b - b.mean()
    na, nb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        # zero-variance frame: identical constants agree perfectly, anything else does not
        return 1.0 if na == nb == 0.0 and np.array_equal(a, b) else 0.0
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def frame_consistency(video) -> float:
    """Mean Pearson correlation of flattened adjacent frames of a [T, ...] video."""
    video = np.asarray(video)
    if video.ndim < 2 or video.shape[0] < 2:
        raise MetricError(f"frame_consistency needs T >= 2, got shape {video.shape}")
    return float(np.mean([_pair_correlation(video[t], video[t + 1]) for t in range(video.shape[0] - 1)]))


def centroids(video) -> np.ndarray:
    """Per-frame (x, y) centroid of |frame - per-pixel median frame|, summed over channels.

    Frames with no foreground get NaN.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim == 3:
        video = video[:, None]
    weight = np.abs(video - np.median(video, axis=0)).sum(axis=1)  # [T, H, W]
    T, H, W = weight.shape
    ys, xs = np.mgrid[0:H, 0:W]
    out = np.full((T, 2), np.nan)
    for t in range(T):
        total = weight[t].sum()
        if total > 0:
            out[t] = (float((weight[t] * xs).sum() / total), float((weight[t] * ys).sum() / total))
    return out


def displacement(video) -> np.ndarray:
    c = centroids(video)
    if np.isnan(c[0]).any() or np.isnan(c[-1]).any():
        return np.zeros(2)
    return c[-1] - c[0]


def agrees(video, direction: str) -> bool:
    if direction not in vocab.DIRECTION_VECTORS:
        raise MetricError(f"unknown direction {direction!r}")
    return float(np.dot(displacement(video), vocab.DIRECTION_VECTORS[direction])) > 0


def motion_agreement(videos, prompts) -> float:
    """Fraction of videos whose centroid displacement points along the prompt's direction word."""
    videos, prompts = list(videos), list(prompts)
    if len(videos) != len(prompts) or not videos:
        raise MetricError("motion_agreement needs one prompt per video and at least one video")
    hits = 0
    for v, p in zip(videos, prompts):
        d = vocab.direction_word(p)
        if d is None:
            raise MetricError(f"prompt {p!r} has no direction word")
        hits += agrees(v, d)
    return hits / len(videos)


def flow_epe(f_hat, f, mask=None) -> float:
    """Mean endpoint error over pixels selected by ``mask`` (all pixels when omitted).

    Flows are [..., 2, H, W]; ``mask`` broadcasts against [..., H, W].
    """
    f_hat, f = np.asarray(f_hat, dtype=np.float64), np.asarray(f, dtype=np.float64)
    if f_hat.shape != f.shape:
        raise MetricError(f"flow shapes differ: {f_hat.shape} vs {f.shape}")
    err = np.sqrt(((f_hat - f) ** 2).sum(axis=-3))
    if mask is None:
        return float(err.mean())
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), err.shape)
    if not mask.any():
        raise MetricError("flow_epe mask selects no pixels")
    return float(err[mask].mean())


def matched_flow(video, spec: scenegen.SceneSpec, radius: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Flow estimate by block matching the true shape's pixels into the next frame; returns (flow, mask).

    Each step picks the integer shift within ``radius`` that minimises the squared difference over the
    shape's pixels (ties go to the shorter shift) and paints it onto those pixels.
    """
    video = np.asarray(video, dtype=np.float64)
    T, _, H, W = video.shape
    mask = np.stack([scenegen.shape_mask(spec, t, H, W) for t in range(T - 1)])
    flow = np.zeros((T - 1, 2, H, W))
    shifts = sorted(((dx, dy) for dx in range(-radius, radius + 1) for dy in range(-radius, radius + 1)),
                    key=lambda d: (d[0] ** 2 + d[1] ** 2, d))
    for t in range(T - 1):
        ys, xs = np.nonzero(mask[t])
        if len(ys) == 0:
            continue
        src = video[t][:, ys, xs]
        best, best_cost = (0, 0), math.inf
        for dx, dy in shifts:
            ty, tx = ys + dy, xs + dx
            if ty.min() < 0 or tx.min() < 0 or ty.max() >= H or tx.max() >= W:
                continue
            cost = float(((video[t + 1][:, ty, tx] - src) ** 2).mean())
            if cost < best_cost:
                best, best_cost = (dx, dy), cost
        flow[t, 0][mask[t]] = best[0]
        flow[t, 1][mask[t]] = best[1]
    return flow, mask


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalRow:
    name: str
    prompt: str
    frame_consistency: float
    agrees: bool | None
    flow_epe: float


@dataclass
class EvalReport:
    frame_consistency: float
    motion_agreement: float
    flow_epe: float
    rows: list = field(default_factory=list)
    fingerprint: str = ""

    @classmethod
    def from_rows(cls, rows: list, fingerprint: str = "") -> "EvalReport":
        moving = [r for r in rows if r.agrees is not None]
        report = cls(
            float(np.mean([r.frame_consistency for r in rows])),
            float(np.mean([r.agrees for r in moving])) if moving else float("nan"),
            float(np.mean([r.flow_epe for r in rows])),
            rows, fingerprint,
        )
        if moving and not all(math.isfinite(v) for v in (report.frame_consistency, report.flow_epe)):
            raise MetricError("non-finite metric in report")
        return report

    def to_csv(self) -> str:
        fmt = sch.format_float
        lines = ["name,prompt,frame_consistency,agrees,flow_epe"]
        for r in self.rows:
            agree = "" if r.agrees is None else str(int(r.agrees))
            lines.append(f"{r.name},{r.prompt},{fmt(r.frame_consistency)},{agree},{fmt(r.flow_epe)}")
        lines.append(f"mean,,{fmt(self.frame_consistency)},{fmt(self.motion_agreement)},{fmt(self.flow_epe)}")
        lines.append(f"# fingerprint={self.fingerprint}")
        return "\n".join(lines) + "\n"


def prompt_spatial(seed: int) -> str:
    """A deterministic spatial caption for evaluation seed ``seed``."""
    rng = np.random.default_rng(scenegen.hash64(seed, 0xE7A1))
    colors = list(vocab.COLORS)
    return " ".join([
        colors[rng.integers(len(colors))],
        vocab.SHAPES[rng.integers(len(vocab.SHAPES))],
        list(vocab.SIZES)[rng.integers(len(vocab.SIZES))],
        vocab.BACKGROUNDS[rng.integers(len(vocab.BACKGROUNDS))],
    ])


def evaluate_prompts(model, sched, shape, seeds: int, directions=("right", "left"), steps: int = 25,
                     guidance: float = 1.0, param: str = "epsilon", clip_x0: bool = True, strict: bool = True,
                     speed: str = "slow", fingerprint: str = "") -> EvalReport:
    """Render a first frame per (direction, seed) prompt, animate it, and score the clip."""
    T, H, W = shape
    rows = []
    direct = not model.cfg.factorized
    for direction in directions:
        motion = f"moving {direction} {speed}"
        for seed in range(seeds):
            spatial = prompt_spatial(seed)
            spec = scenegen.scene_from_prompt(spatial, motion, seed, T, H, W)
            gt = scenegen.render(spec, T, H, W)
            video = diffusion.sample(
                model, gt.frames[0], vocab.tokenize(spatial), vocab.tokenize(motion), sched, steps=steps,
                guidance_scale=guidance, seed=seed, frames=T, param=param, clip_x0=clip_x0, strict=strict,
                direct_captions=direct,
            )
            est, mask = matched_flow(video, spec)
            rows.append(EvalRow(f"{direction}-{seed}", f"{spatial} / {motion}", frame_consistency(video),
                                agrees(video, direction), flow_epe(est, gt.flow, mask)))
    return EvalReport.from_rows(rows, fingerprint)


def evaluate_dataset(model, sched, samples, steps: int = 25, guidance: float = 1.0, param: str = "epsilon",
                     clip_x0: bool = True, strict: bool = True, fingerprint: str = "") -> EvalReport:
    """Animate each sample's first frame under its own captions and compare with the ground truth."""
    rows = []
    direct = not model.cfg.factorized
    for i, s in enumerate(samples):
        T = s.frames.shape[0]
        video = diffusion.sample(model, s.frames[0], s.spatial_tokens, s.motion_tokens, sched, steps=steps,
                                 guidance_scale=guidance, seed=i, frames=T, param=param, clip_x0=clip_x0,
                                 strict=strict, direct_captions=direct)
        est, mask = matched_flow(video, s.spec)
        d = s.spec.direction
        rows.append(EvalRow(f"{i:05d}", f"{s.spatial_caption} / {s.motion_caption}", frame_consistency(video),
                            None if d is None else agrees(video, d), flow_epe(est, s.flow, mask)))
    return EvalReport.from_rows(rows, fingerprint)


# ---------------------------------------------------------------------------
# ablation


def variant_config(base: RunConfig, variant: str) -> RunConfig:
    if variant not in VARIANTS:
        raise MetricError(f"unknown ablation variant {variant!r}; choose from {', '.join(VARIANTS)}")
    steps, flow_steps = base["ablate.steps"], base["ablate.flow_steps"]
    shape = base["ablate.shape"]
    if variant == "no-predictnet" or flow_steps <= 0:
        plan = f"main:{shape}:{steps}"
    elif flow_steps >= steps:
        plan = f"flow:{shape}:{steps}:predictnet"
    else:
        plan = f"main:{shape}:{steps - flow_steps},flow:{shape}:{flow_steps}:predictnet"
    values = {"train.stages": plan}
    if variant == "no-shift":
        values["schedule.shift"] = "false"
    elif variant == "no-rescale":
        values["schedule.rescale"] = "false"
    elif variant == "direct-t2v":
        values.update({"model.adapter": "false", "model.paca": "false", "model.first_frame_concat": "false"})
    elif variant == "single-encoder":
        values["model.shared_text_encoder"] = "true"
    return base.with_values(values)


def mid_timestep(N: int) -> int:
    return N // 2


def schedule_columns(cfg: RunConfig, full: RunConfig, shape) -> dict:
    """Deterministic schedule read-outs: terminal alpha-bar, mid-t log-SNR, pre-rescale mid-t SNR ratio."""
    sched = cfg.schedule_for(shape)
    t = mid_timestep(sched.N)

    def pre_rescale_snr(c: RunConfig) -> float:
        s = c.with_values({"schedule.rescale": "false"}).schedule_for(shape)
        return float(s.snr()[t - 1])

    return {
        "terminal_alpha_bar": float(sched.alpha_bar[-1]),
        "terminal_positive": bool(sched.alpha_bar[-1] > 0),
        "mid_t": t,
        "mid_log_snr": float(sched.log_snr()[t - 1]),
        "mid_snr_ratio": pre_rescale_snr(cfg) / pre_rescale_snr(full),
        "s": sched.shift,
    }


@dataclass
class AblationRow:
    variant: str
    columns: dict
    report: EvalReport
    final_loss_df: float


REPORT_FIELDS = ("variant", "terminal_alpha_bar", "terminal_positive", "mid_t", "mid_log_snr", "mid_snr_ratio",
                 "frame_consistency", "motion_agreement", "flow_epe", "final_loss_df", "fingerprint")


def ablation_csv(rows: list) -> str:
    fmt = sch.format_float
    lines = [",".join(REPORT_FIELDS)]
    for r in rows:
        c = r.columns
        lines.append(",".join([
            r.variant, fmt(c["terminal_alpha_bar"]), str(c["terminal_positive"]).lower(), str(c["mid_t"]),
            fmt(c["mid_log_snr"]), fmt(c["mid_snr_ratio"]), fmt(r.report.frame_consistency),
            fmt(r.report.motion_agreement), fmt(r.report.flow_epe), fmt(r.final_loss_df), r.report.fingerprint,
        ]))
    return "\n".join(lines) + "\n"


def ablation_table(rows: list, checks: list) -> str:
    head = f"{'variant':<15}{'term_abar':>12}{'snr_ratio':>12}{'FC':>9}{'motion':>9}{'EPE':>9}{'loss':>10}"
    out = [head, "-" * len(head)]
    for r in rows:
        c = r.columns
        out.append(f"{r.variant:<15}{c['terminal_alpha_bar']:>12.4g}{c['mid_snr_ratio']:>12.6g}"
                   f"{r.report.frame_consistency:>9.4f}{r.report.motion_agreement:>9.3f}{r.report.flow_epe:>9.3f}"
                   f"{r.final_loss_df:>10.4f}")
    out.append("")
    out.extend(checks)
    return "\n".join(out) + "\n"


def soft_checks(rows: list) -> list[str]:
    """Directional expectations; logged, never asserted."""
    by = {r.variant: r for r in rows}
    checks = []

    def check(label, a, b, metric):
        if a in by and b in by:
            va, vb = getattr(by[a].report, metric), getattr(by[b].report, metric)
            ok = va >= vb
            line = f"soft-check {label}: {a} {metric}={va:.4f} vs {b} {vb:.4f} -> {'held' if ok else 'did not hold'}"
            (log.info if ok else log.warning)(line)
            checks.append(line)

    check("flow supervision", "full", "no-predictnet", "motion_agreement")
    check("factorized generation", "full", "direct-t2v", "frame_consistency")
    return checks


def run_ablation(variants, config: RunConfig, out_dir: str) -> list[AblationRow]:
    """Train every variant on one shared dataset with the same budget; write report.csv and report.txt."""
    variants = list(variants)
    for v in variants:
        if v not in VARIANTS:
            raise MetricError(f"unknown ablation variant {v!r}; choose from {', '.join(VARIANTS)}")
    os.makedirs(out_dir, exist_ok=True)
    config.echo(out_dir)
    T, H, W = scenegen.parse_shape(config["ablate.shape"])
    data_dir = os.path.join(out_dir, "data", f"{T}x{H}x{W}")
    if not os.path.exists(os.path.join(data_dir, "manifest.tsv")):
        scenegen.make_dataset(config["ablate.n_data"], config["ablate.data_seed"], T, H, W, data_dir)
    dataset = scenegen.load_dataset(data_dir)
    full = variant_config(config, "full")
    rows = []
    for v in variants:
        cfg = variant_config(config, v)
        log.info("ablation variant %s: %s", v, cfg["train.stages"])
        trainer = diffusion.Trainer(cfg)
        vdir = os.path.join(out_dir, v)
        trainer.run_stages(os.path.join(out_dir, "data"), vdir, datasets={f"{T}x{H}x{W}": dataset})
        losses = read_loss_log(os.path.join(vdir, "loss_log.csv"))
        tail = losses[-min(100, len(losses)):]
        sched = cfg.schedule_for((T, H, W))
        report = evaluate_prompts(
            trainer.model, sched, (T, H, W), cfg["eval.seeds"], steps=cfg["sample.steps"],
            guidance=cfg["sample.guidance"], param=cfg["diffusion.param"], clip_x0=cfg["sample.clip_x0"],
            strict=cfg["schedule.rescale"], fingerprint=cfg.fingerprint(),
        )
        rows.append(AblationRow(v, schedule_columns(cfg, full, (T, H, W)), report, float(np.mean(tail))))
    checks = soft_checks(rows)
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(ablation_csv(rows))
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(ablation_table(rows, checks))
    return rows


def read_loss_log(path: str, column: str = "loss_df") -> list[float]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        idx = header.index(column)
        return [float(line.split(",")[idx]) for line in fh if line.strip() and line.split(",")[idx]]


def file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
