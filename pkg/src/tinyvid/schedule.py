"""Diffusion noise schedules: base tables, resolution shift, zero-terminal-SNR rescale.

Timesteps are 1-indexed (``t`` in ``1..N``); ``alpha_bar[t - 1]`` holds the
cumulative signal power at step ``t``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import vtf

FAMILIES = ("linear", "scaled-linear")
RESCALE_FORMS = ("paper", "reference")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray = field(repr=False)
    base_family: str = "scaled-linear"
    shift_shape: tuple | None = None
    shift: float | None = None
    rescaled: bool = False
    rescale_form: str | None = None
    reference_D: int = 256

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def N(self) -> int:
        return len(self.alpha_bar)

    def at(self, t: int) -> float:
        check_timestep(self, t)
        return float(self.alpha_bar[t - 1])

    def snr(self) -> np.ndarray:
        ab = self.alpha_bar
        with np.errstate(divide="ignore"):
            return ab / (1.0 - ab)

    def log_snr(self) -> np.ndarray:
        """ln SNR per timestep; -inf where alpha_bar is 0, +inf where it is 1."""
        ab = self.alpha_bar
        with np.errstate(divide="ignore"):
            return np.log(ab) - np.log1p(-ab)

    def header(self) -> dict:
        return {
            "family": self.base_family,
            "N": self.N,
            "s": "none" if self.shift is None else repr(self.shift),
            "shift_shape": "none" if self.shift_shape is None else "x".join(map(str, self.shift_shape)),
            "rescaled": str(self.rescaled).lower(),
            "rescale_form": self.rescale_form or "none",
            "reference_D": self.reference_D,
        }


def check_timestep(sched: NoiseSchedule, t: int) -> None:
    if not 1 <= int(t) <= sched.N:
        raise ScheduleError(f"timestep {t} outside [1, {sched.N}]")


def make_base(N: int = 1000, family: str = "scaled-linear", beta_lo: float = 0.00085, beta_hi: float = 0.012,
              reference_D: int = 256) -> NoiseSchedule:
    """Cumulative-product schedule from linearly (or sqrt-linearly) spaced betas."""
    if N < 2:
        raise ScheduleError(f"need N >= 2, got {N}")
    if not 0.0 < beta_lo < beta_hi < 1.0:
        raise ScheduleError(f"invalid beta range ({beta_lo}, {beta_hi}); need 0 < lo < hi < 1")
    if family == "linear":
        betas = np.linspace(beta_lo, beta_hi, N, dtype=np.float64)
    elif family == "scaled-linear":
        betas = np.linspace(math.sqrt(beta_lo), math.sqrt(beta_hi), N, dtype=np.float64) ** 2
    else:
        raise ScheduleError(f"unknown family {family!r}; choose from {FAMILIES}")
    return NoiseSchedule(np.cumprod(1.0 - betas), base_family=family, reference_D=reference_D)


def from_betas(betas, family: str = "linear") -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if len(betas) < 2 or np.any(betas <= 0) or np.any(betas >= 1):
        raise ScheduleError("betas must have length >= 2 and lie in (0, 1)")
    return NoiseSchedule(np.cumprod(1.0 - betas), base_family=family)


def shift_factor(T: int, H: int, W: int, D: int = 256) -> float:
    """sqrt(D^2 / (T H W)): how much a T x H x W input outgrows a D x D image."""
    if min(T, H, W, D) <= 0:
        raise ScheduleError(f"extents must be positive, got T={T} H={H} W={W} D={D}")
    return math.sqrt(D * D / (T * H * W))


def apply_shift(sched: NoiseSchedule, s: float, shape: tuple | None = None) -> NoiseSchedule:
    """Scale SNR(t) by s^2 at every step."""
    if sched.shift is not None:
        raise ScheduleError("schedule is already shifted")
    if sched.rescaled:
        raise ScheduleError("shift must be applied before the terminal rescale")
    if not s > 0:
        raise ScheduleError(f"shift factor must be positive, got {s}")
    ab = sched.alpha_bar
    s2 = s * s
    shifted = s2 * ab / (1.0 - ab + s2 * ab)
    return replace(sched, alpha_bar=shifted, shift=float(s), shift_shape=tuple(shape) if shape else None)


def apply_rescale(sched: NoiseSchedule, form: str = "paper") -> NoiseSchedule:
    """Force zero terminal SNR.

    ``paper``: alpha'_t = (alpha_t - alpha_N) / (alpha_1 - alpha_N), so the
    endpoints become exactly 1 and 0.
    ``reference``: sqrt(alpha) is shifted and scaled linearly so the last step
    hits 0 while step 1 keeps its original value.
    """
    if sched.rescaled:
        raise ScheduleError("schedule is already rescaled")
    ab = sched.alpha_bar
    first, last = ab[0], ab[-1]
    if not first > last:
        raise ScheduleError("degenerate schedule: alpha_bar_1 == alpha_bar_N")
    if form == "paper":
        out = (ab - last) / (first - last)
        out[0], out[-1] = 1.0, 0.0
    elif form == "reference":
        r = np.sqrt(ab)
        r0, rn = r[0], r[-1]
        r = (r - rn) * (r0 / (r0 - rn))
        out = r * r
        out[-1] = 0.0
    else:
        raise ScheduleError(f"unknown rescale form {form!r}; choose from {RESCALE_FORMS}")
    return replace(sched, alpha_bar=out, rescaled=True, rescale_form=form)


def build(N: int, family: str, beta_lo: float, beta_hi: float, shape: tuple | None, reference_D: int,
          shift: bool = True, rescale: bool = True, rescale_form: str = "paper") -> NoiseSchedule:
    """Base -> shift (for a T x H x W latent) -> rescale, in that order."""
    sched = make_base(N, family, beta_lo, beta_hi, reference_D=reference_D)
    if shift and shape is not None:
        sched = apply_shift(sched, shift_factor(*shape, D=reference_D), shape)
    if rescale:
        sched = apply_rescale(sched, rescale_form)
    return sched


def noising_coeffs(sched: NoiseSchedule, t: int) -> tuple[float, float]:
    """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))."""
    ab = sched.at(t)
    return math.sqrt(ab), math.sqrt(1.0 - ab)


def format_float(x: float) -> str:
    """Shared float formatting for every CSV that carries schedule numbers."""
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return repr(float(x))


def logsnr_csv(sched: NoiseSchedule) -> str:
    lines = [f"# {k}={v}" for k, v in sched.header().items()]
    lines.append("t,log_snr")
    for t, v in enumerate(sched.log_snr(), start=1):
        lines.append(f"{t},{format_float(v)}")
    return "\n".join(lines) + "\n"


def export_logsnr_csv(sched: NoiseSchedule, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(logsnr_csv(sched))


def read_logsnr_csv(path: str | os.PathLike) -> tuple[dict, np.ndarray]:
    header, values = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                header[key] = val
            elif line and not line.startswith("t,"):
                values.append(float(line.split(",")[1]))
    return header, np.array(values)


def save(sched: NoiseSchedule, directory: str | os.PathLike) -> None:
    vtf.save(os.path.join(directory, "schedule.vtf"), sched.alpha_bar)
    with open(os.path.join(directory, "schedule.txt"), "w", encoding="utf-8") as fh:
        for k, v in sched.header().items():
            fh.write(f"{k}={v}\n")
        # the VTF copy is f32; keep exact values alongside for lossless reload
        fh.write("alpha_bar=" + " ".join(repr(float(a)) for a in sched.alpha_bar) + "\n")


def load(directory: str | os.PathLike) -> NoiseSchedule:
    meta = {}
    with open(os.path.join(directory, "schedule.txt"), encoding="utf-8") as fh:
        for line in fh:
            key, _, val = line.rstrip("\n").partition("=")
            meta[key] = val
    ab = np.array([float(v) for v in meta["alpha_bar"].split()])
    return NoiseSchedule(
        ab,
        base_family=meta["family"],
        shift=None if meta["s"] == "none" else float(meta["s"]),
        shift_shape=None if meta["shift_shape"] == "none" else tuple(int(v) for v in meta["shift_shape"].split("x")),
        rescaled=meta["rescaled"] == "true",
        rescale_form=None if meta["rescale_form"] == "none" else meta["rescale_form"],
        reference_D=int(meta["reference_D"]),
    )
