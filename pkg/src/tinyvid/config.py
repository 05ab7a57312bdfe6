"""Flat ``key=value`` run configuration with typed, documented keys.

Unknown keys are a hard error. ``preset`` selects a block of defaults
(``toy`` or ``paper``) before file values and CLI overrides are applied.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from . import schedule
from .denoiser import ArchConfig
from .scenegen import parse_shape


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _choice(*options):
    def conv(v):
        if v not in options:
            raise ConfigError(f"{v!r} is not one of {options}")
        return v
    return conv


# key -> (type, default, help)
KEYS: dict[str, tuple] = {
    "preset": (_choice("toy", "paper"), "toy", "default block: toy (desk scale) or paper (published hyper-parameters)"),
    "numerics.check_finite": (_bool, True, "raise on NaN/Inf after every op"),
    "schedule.N": (int, 100, "number of diffusion timesteps"),
    "schedule.family": (_choice(*schedule.FAMILIES), "scaled-linear", "base beta family"),
    "schedule.beta_lo": (float, 0.00085, "first beta"),
    "schedule.beta_hi": (float, 0.012, "last beta"),
    "schedule.reference_D": (int, 16, "reference extent D of the SNR shift"),
    "schedule.shift": (_bool, True, "apply the resolution-dependent SNR shift"),
    "schedule.rescale": (_bool, True, "rescale to zero terminal SNR"),
    "schedule.rescale_form": (_choice(*schedule.RESCALE_FORMS), "paper", "terminal rescale formula"),
    "model.channels": (str, "32,64", "channel widths at full and half resolution"),
    "model.emb_dim": (int, 32, "caption/image embedding width"),
    "model.lam": (float, 1.0, "weight of the image branch in adapter cross-attention"),
    "model.temporal": (_bool, True, "enable temporal blocks"),
    "model.adapter": (_bool, True, "image-embedding adapter branch in spatial cross-attention"),
    "model.paca": (_bool, True, "pixel-aware cross-attention in up-blocks"),
    "model.first_frame_concat": (_bool, True, "concatenate the first frame to the noisy input"),
    "model.shared_text_encoder": (_bool, False, "motion captions reuse the spatial-caption encoder"),
    "model.seed": (int, 0, "parameter initialization seed"),
    "diffusion.param": (_choice("epsilon", "v"), "epsilon", "network prediction target"),
    "train.stages": (str, "lr:8x16x16:1500,hr:8x24x24:1000,flow:8x24x24:500:predictnet",
                     "comma list of name:TxHxW:steps[:predictnet]"),
    "train.lr": (float, 1e-3, "AdamW learning rate"),
    "train.beta1": (float, 0.9, "AdamW first-moment decay"),
    "train.beta2": (float, 0.999, "AdamW second-moment decay"),
    "train.eps": (float, 1e-8, "AdamW epsilon"),
    "train.weight_decay": (float, 1e-4, "decoupled weight decay"),
    "train.batch": (int, 2, "videos per optimizer step"),
    "train.gamma": (float, 1.0, "flow-loss weight"),
    "train.cond_drop_prob": (float, 0.1, "probability of the null condition per sample"),
    "train.grad_clip": (float, 1.0, "global gradient-norm clip (0 disables)"),
    "train.seed": (int, 0, "training RNG seed (t, noise, batches, dropout)"),
    "train.ckpt_every": (int, 0, "extra mid-stage checkpoint interval in steps (0 = stage ends only)"),
    "sample.steps": (int, 25, "reverse-process steps"),
    "sample.guidance": (float, 1.0, "classifier-free guidance scale"),
    "sample.clip_x0": (_bool, True, "clip reconstructed clean video to [-1, 1]"),
    "eval.seeds": (int, 20, "sampling seeds per direction in motion evaluation"),
    "ablate.variants": (str, "full,no-shift,no-rescale,direct-t2v,single-encoder,no-predictnet", "variants to run"),
    "ablate.shape": (str, "8x16x16", "clip shape for ablation training"),
    "ablate.steps": (int, 1500, "training steps per variant"),
    "ablate.flow_steps": (int, 500, "of which the final steps train PredictNet jointly"),
    "ablate.n_data": (int, 512, "synthetic training videos"),
    "ablate.data_seed": (int, 1, "seed of the ablation dataset"),
    "threads": (int, 1, "BLAS threads; 1 keeps results bitwise reproducible"),
}

PRESETS = {
    "toy": {},
    "paper": {
        "schedule.N": 1000,
        "schedule.beta_lo": 0.00085,
        "schedule.beta_hi": 0.012,
        "schedule.reference_D": 256,
        "train.lr": 5e-5,
        "train.gamma": 1.0,
    },
}


class RunConfig:
    def __init__(self, values: dict | None = None):
        self._values = {k: spec[1] for k, spec in KEYS.items()}
        if values:
            self.update(values)

    def update(self, values: dict) -> "RunConfig":
        values = dict(values)
        if "preset" in values:
            preset = KEYS["preset"][0](values["preset"])
            self._values["preset"] = preset
            for k, v in PRESETS[preset].items():
                self._values[k] = v
            values.pop("preset")
        for k, v in values.items():
            if k not in KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            conv = KEYS[k][0]
            try:
                self._values[k] = conv(v)
            except (ValueError, ConfigError) as err:
                raise ConfigError(f"bad value for {k}: {err}") from None
        return self

    def __getitem__(self, key: str):
        if key not in self._values:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def with_values(self, values: dict) -> "RunConfig":
        out = RunConfig()
        out._values = dict(self._values)
        return out.update(values)

    def to_text(self) -> str:
        lines = ["# fully resolved tinyvid run configuration"]
        for k in KEYS:
            v = self._values[k]
            if isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def echo(self, out_dir: str | os.PathLike, name: str = "config.resolved.txt") -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        return path

    # -- derived views ----------------------------------------------------
    def arch(self) -> ArchConfig:
        return ArchConfig(
            channels=tuple(int(c) for c in self["model.channels"].split(",")),
            emb_dim=self["model.emb_dim"],
            lam=self["model.lam"],
            use_temporal=self["model.temporal"],
            use_adapter=self["model.adapter"],
            use_paca=self["model.paca"],
            use_first_frame_concat=self["model.first_frame_concat"],
            shared_text_encoder=self["model.shared_text_encoder"],
        )

    def schedule_for(self, shape: tuple | None) -> schedule.NoiseSchedule:
        return schedule.build(
            self["schedule.N"], self["schedule.family"], self["schedule.beta_lo"], self["schedule.beta_hi"],
            shape, self["schedule.reference_D"], shift=self["schedule.shift"], rescale=self["schedule.rescale"],
            rescale_form=self["schedule.rescale_form"],
        )

    def stages(self) -> list["Stage"]:
        return parse_stages(self["train.stages"])


@dataclass(frozen=True)
class Stage:
    name: str
    frames: int
    height: int
    width: int
    steps: int
    use_predictnet: bool = False

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    @property
    def shape_text(self) -> str:
        return f"{self.frames}x{self.height}x{self.width}"


def parse_stages(text: str) -> list[Stage]:
    stages = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "predictnet"):
            raise ConfigError(f"bad stage {item!r}; expected name:TxHxW:steps[:predictnet]")
        T, H, W = parse_shape(parts[1])
        stages.append(Stage(parts[0], T, H, W, int(parts[2]), len(parts) == 4))
    if not stages:
        raise ConfigError("train.stages is empty")
    return stages


def parse_text(text: str) -> dict:
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def load(path: str | os.PathLike | None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path, encoding="utf-8") as fh:
            values = parse_text(fh.read())
        if "preset" in values:
            cfg.update({"preset": values.pop("preset")})
        cfg.update(values)
    if overrides:
        cfg.update(overrides)
    return cfg
