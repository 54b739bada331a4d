"""Command-line entry point: ``transhuman <subcommand> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=d, help="root seed (overrides the config)")
    p.add_argument("--threads", type=int, default=d, help="worker threads; 1 is fully deterministic")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transhuman", description="Desk-scale generalizable human radiance fields.")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = add("gen-data", "generate a synthetic multi-view dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--cameras", type=int, default=6)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--vertices", type=int, default=1500)
    p.add_argument("--test-cameras", default="5", help="comma-separated held-out camera indices")

    p = add("train", "train on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--name", default="default", help="run name under --runs")
    p.add_argument("--runs", default="runs")
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--quiet", action="store_true")

    p = add("render", "render views with a trained checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("full", "progressive"), default="progressive")
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = add("eval", "PSNR/SSIM of renders against ground truth, or of a checkpoint on a split")
    p.add_argument("--pred", help="image or directory of .ppm renders")
    p.add_argument("--truth", help="image or directory of .ppm ground truth")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = add("ablate", "run an ablation axis and print its metrics table")
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True, help="nt, nk, grouping, pe, fdi, coordinate, lambda or all")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--runs", default="runs/ablate")
    p.add_argument("--table", help="also write the table here")

    p = add("selftest", "run the invariant suite")
    p.add_argument("--quick", action="store_true", help="fewer seeds and samples")
    return ap


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.threads is not None:
        cfg = cfg.replace(threads=args.threads)
    return cfg


def set_threads(n: int) -> None:
    from threadpoolctl import threadpool_limits

    from . import _kernels
    threadpool_limits(n)
    _kernels.set_threads(n)


def _images(path: Path) -> dict[str, Path]:
    if path.is_dir():
        return {str(p.relative_to(path)): p for p in sorted(path.rglob("*.ppm"))}
    return {path.name: path}


def cmd_gen_data(args, cfg: RunConfig) -> int:
    from .data import DataConfig, gen_data
    dc = DataConfig(args.subjects, args.frames, args.cameras, args.size, args.vertices,
                    [int(c) for c in args.test_cameras.split(",") if c != ""])
    out = gen_data(args.out, dc, cfg.seed)
    print(f"wrote dataset to {out} (seed {cfg.seed})")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .training import Trainer
    run_dir = Path(args.runs) / args.name
    cfg = cfg.replace(dataset=args.data, run_dir=str(run_dir))
    if args.eval_every is not None:
        cfg = cfg.replace(eval_every=args.eval_every)
    tr = Trainer(args.data, cfg, run_dir)
    if args.resume:
        tr.resume(args.resume)
        print(f"resumed at step {tr.state.step}")
    steps = cfg.steps - tr.state.step if args.steps is None else args.steps
    tr.train(steps, verbose=not args.quiet)
    path = tr.save(tr.checkpoint_path(tr.state.step))
    print(f"checkpoint {path}")
    return 0


def _trainer_from_checkpoint(args, cfg: RunConfig):
    from .training import Trainer
    ckpt = Path(args.checkpoint)
    run_cfg = ckpt.parent.parent / "config.json"
    if not args.config and run_cfg.exists():
        cfg = RunConfig.load(run_cfg)
    tr = Trainer(args.data, cfg, ckpt.parent.parent, log=False)
    tr.resume(ckpt)
    return tr


def cmd_render(args, cfg: RunConfig) -> int:
    from .imageio import write_float_map, write_ppm
    from .renderer import EvalCounter
    tr = _trainer_from_checkpoint(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    total = EvalCounter()
    for s, f, refs, target in tr.eval_views(args.split):
        counter = EvalCounter()
        rgb, acc, depth = tr.render_view(s, f, refs, target, args.mode, counter)
        stem = f"{s.name}_{Path(f.entry['pose']).parent.name}_cam_{target}"
        write_ppm(out / f"{stem}.ppm", rgb)
        write_float_map(out / f"{stem}.opacity", acc)
        write_float_map(out / f"{stem}.depth", depth)
        total += counter
    print(f"mode={args.mode} density_evals={total.density_evals} color_evals={total.color_evals} "
          f"points_sampled={total.points_sampled}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .imageio import read_ppm
    from .training import evaluate
    if args.pred and args.truth:
        pred, truth = _images(Path(args.pred)), _images(Path(args.truth))
        if Path(args.pred).is_file() and Path(args.truth).is_file():
            pairs = [(next(iter(pred.values())), next(iter(truth.values())))]
        else:
            common = sorted(set(pred) & set(truth))
            if not common:
                print("no matching images", file=sys.stderr)
                return 1
            pairs = [(pred[k], truth[k]) for k in common]
        m = evaluate([read_ppm(a) for a, _ in pairs], [read_ppm(b) for _, b in pairs])
        print(f"images={len(pairs)} psnr={m['psnr']:.4f} ssim={m['ssim']:.5f}")
        return 0
    if args.data and args.checkpoint:
        tr = _trainer_from_checkpoint(args, cfg)
        m = tr.evaluate(args.split)
        print(f"split={args.split} step={tr.state.step} psnr={m['psnr']:.4f} ssim={m['ssim']:.5f}")
        return 0
    print("eval needs --pred/--truth or --data/--checkpoint", file=sys.stderr)
    return 2


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .ablation import AXES, COLUMNS, run_axis
    axes = sorted(AXES) if args.axis == "all" else [args.axis]
    if any(a not in AXES for a in axes):
        print(f"unknown axis {args.axis!r}; choose from {sorted(AXES)} or all", file=sys.stderr)
        return 2
    print("\t".join(COLUMNS), flush=True)
    rows = []
    for axis in axes:
        print(f"# {axis}: expected direction {AXES[axis][2]} (logged, not asserted)", file=sys.stderr)
        rows += run_axis(args.data, cfg, axis, args.steps, args.runs, echo=lambda s: print(s, flush=True))
    if args.table:
        from .ablation import format_table
        Path(args.table).write_text(format_table(rows), encoding="utf-8")
    return 0


def cmd_selftest(args, cfg: RunConfig) -> int:
    from .checks import run_all
    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "render": cmd_render, "eval": cmd_eval,
            "ablate": cmd_ablate, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    set_threads(cfg.threads)
    try:
        return COMMANDS[args.command](args, cfg)
    except (FileNotFoundError, FileExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
