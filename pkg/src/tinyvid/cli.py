"""Command-line entry point: ``tinyvid <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import diffusion, metrics, scenegen, vocab
from . import numerics as nx
from . import schedule as sch

log = logging.getLogger("tinyvid")

USAGE_ERRORS = (cfgmod.ConfigError,)
DATA_ERRORS = (
    OSError, nx.vtf.VTFError, nx.ShapeError, nx.NonFiniteError, sch.ScheduleError, scenegen.GenerationError,
    diffusion.TrainingError, diffusion.SamplingError, metrics.MetricError, ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _shape(text: str) -> tuple[int, int, int]:
    try:
        shape = scenegen.parse_shape(text)
    except ValueError as err:
        raise UsageError(str(err)) from None
    if min(shape) < 1:
        raise UsageError(f"shape extents must be positive: {text}")
    return shape


def _size(text: str) -> tuple[int, int]:
    try:
        H, W = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"expected HxW, got {text!r}") from None
    if min(H, W) < 1:
        raise UsageError(f"size extents must be positive: {text}")
    return H, W


def _echo(args, out_dir: str, name: str, config: cfgmod.RunConfig | None = None) -> None:
    """Write the resolved config plus this invocation's arguments next to the outputs."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [config.to_text().rstrip("\n")] if config is not None else []
    lines.append(f"# invocation: {args.command}")
    for k, v in sorted(vars(args).items()):
        if k not in ("command", "verbose"):
            lines.append(f"# arg.{k}={v}")
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tinyvid", description="Desk-scale factorized text/image-to-video diffusion.")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps results bitwise reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic moving-shape dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--shape", default="8x16x16", help="TxHxW")
    g.add_argument("--out", required=True)
    g.add_argument("--dump-pgm", action="store_true", help="also write per-frame PGM previews")

    t = sub.add_parser("train", help="run the configured training stages")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="directory holding one TxHxW/ dataset per stage shape")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")

    s = sub.add_parser("sample", help="generate a clip from prompts (and optionally a first frame)")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--prompt-spatial", required=True)
    s.add_argument("--prompt-motion", required=True)
    s.add_argument("--first-frame", help="[3,H,W] VTF; rendered from the spatial prompt when absent")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int)
    s.add_argument("--guidance", type=float)
    s.add_argument("--frames", type=int, help="clip length (defaults to the checkpoint's)")
    s.add_argument("--size", help="HxW of a rendered first frame (defaults to the checkpoint's)")
    s.add_argument("--out", required=True)
    s.add_argument("--dump-pgm", metavar="DIR")

    c = sub.add_parser("schedule", help="export a log-SNR table")
    c.add_argument("--shape", required=True, help="TxHxW")
    c.add_argument("--config")
    c.add_argument("--preset", default="paper", choices=sorted(cfgmod.PRESETS),
                   help="defaults block when no config file is given")
    c.add_argument("--no-shift", action="store_true")
    c.add_argument("--no-rescale", action="store_true")
    c.add_argument("--set", action="append", metavar="KEY=VALUE")
    c.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score a checkpoint against a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--limit", type=int, default=32, help="number of dataset clips to animate")
    e.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="train and score every ablation variant")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--variants", help="comma list (defaults to ablate.variants)")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    T, H, W = _shape(args.shape)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    scenegen.make_dataset(args.n, args.seed, T, H, W, args.out, dump_pgm=args.dump_pgm)
    _echo(args, args.out, "gen-data.config.txt")
    print(f"wrote {args.n} clips of shape {T}x{H}x{W} to {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = _overrides(args.set)
    if args.resume:
        base = diffusion.load_checkpoint_config(args.resume)
        config = base.with_values(overrides) if overrides else base
        if args.config:
            config = cfgmod.load(args.config, overrides)
        trainer = diffusion.Trainer.resume(args.resume, config)
    else:
        config = cfgmod.load(args.config, overrides)
        trainer = diffusion.Trainer(config)
    written = trainer.run_stages(args.data, args.out)
    _echo(args, args.out, "train.invocation.txt")
    for path in written:
        print(path)
    return 0


def _resolve_sample_config(ckpt: str):
    path = os.path.join(ckpt, "config.resolved.txt")
    return cfgmod.load(path) if os.path.exists(path) else cfgmod.RunConfig()


def cmd_sample(args) -> int:
    config = _resolve_sample_config(args.ckpt)
    model, _ = diffusion.load_checkpoint(args.ckpt, with_predictnet=False)
    T = args.frames or diffusion.checkpoint_frames(args.ckpt)
    if args.first_frame:
        y = nx.vtf.load(args.first_frame)
        if y.ndim != 3 or y.shape[0] != 3:
            raise nx.ShapeError(f"first frame must be [3,H,W], got {y.shape}")
        H, W = y.shape[1:]
    else:
        if args.size:
            H, W = _size(args.size)
        else:
            H, W = diffusion.checkpoint_size(args.ckpt)
        spec = scenegen.scene_from_prompt(args.prompt_spatial, args.prompt_motion, args.seed, T, H, W)
        y = scenegen.render(spec, T, H, W).frames[0]
    sched = config.schedule_for((T, H, W))
    spatial, motion = vocab.tokenize(args.prompt_spatial), vocab.tokenize(args.prompt_motion)
    video = diffusion.sample(
        model, y, spatial, motion, sched, steps=args.steps or config["sample.steps"],
        guidance_scale=config["sample.guidance"] if args.guidance is None else args.guidance, seed=args.seed,
        frames=T, param=config["diffusion.param"], clip_x0=config["sample.clip_x0"],
        direct_captions=not model.cfg.factorized,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    nx.vtf.save(args.out, video)
    _echo(args, out_dir, os.path.basename(args.out) + ".config.txt", config)
    if args.dump_pgm:
        scenegen.dump_pgm_frames(video, args.dump_pgm)
    print(args.out)
    return 0


def cmd_schedule(args) -> int:
    shape = _shape(args.shape)
    overrides = _overrides(args.set)
    if args.no_shift:
        overrides["schedule.shift"] = "false"
    if args.no_rescale:
        overrides["schedule.rescale"] = "false"
    if args.config:
        config = cfgmod.load(args.config, overrides)
    else:
        config = cfgmod.RunConfig({"preset": args.preset}).with_values(overrides)
    sched = config.schedule_for(shape)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    sch.export_logsnr_csv(sched, args.out)
    _echo(args, out_dir, os.path.basename(args.out) + ".config.txt", config)
    print(args.out)
    return 0


def cmd_eval(args) -> int:
    config = _resolve_sample_config(args.ckpt)
    model, _ = diffusion.load_checkpoint(args.ckpt, with_predictnet=False)
    samples = scenegen.load_dataset(args.data)[: max(1, args.limit)]
    T, H, W = samples[0].frames.shape[0], *samples[0].frames.shape[2:]
    sched = config.schedule_for((T, H, W))
    report = metrics.evaluate_dataset(
        model, sched, samples, steps=config["sample.steps"], guidance=config["sample.guidance"],
        param=config["diffusion.param"], clip_x0=config["sample.clip_x0"], fingerprint=config.fingerprint(),
    )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    _echo(args, out_dir, os.path.basename(args.out) + ".config.txt", config)
    print(f"frame_consistency={report.frame_consistency:.4f} motion_agreement={report.motion_agreement:.4f} "
          f"flow_epe={report.flow_epe:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = cfgmod.load(args.config, _overrides(args.set))
    variants = (args.variants or config["ablate.variants"]).split(",")
    rows = metrics.run_ablation([v.strip() for v in variants if v.strip()], config, args.out)
    with open(os.path.join(args.out, "report.txt"), encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0 if rows else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "schedule": cmd_schedule,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"tinyvid: usage error: {err}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("tinyvid: usage error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (UsageError, *USAGE_ERRORS) as err:
        print(f"tinyvid: usage error: {err}", file=sys.stderr)
        return 1
    except DATA_ERRORS as err:
        print(f"tinyvid: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
