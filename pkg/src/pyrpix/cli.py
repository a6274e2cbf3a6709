"""pyrpix: train | sample | eval | verify | bench.

Exit codes: 0 ok, 1 verification failure, 2 usage error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import statistics
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- train ---------------------------------------------------------------------


def cmd_train(args) -> int:
    from pyrpix.config import RunConfig
    from pyrpix.train import CHECKPOINT, train

    cfg = RunConfig.load(args.config)
    if args.steps is not None:
        cfg.train.steps = args.steps
    res = train(cfg, args.out, resume=args.resume, log=sys.stdout)
    print(f"checkpoint={Path(args.out) / CHECKPOINT}")
    print(f"step={res.step}")
    if res.halted:
        print(f"halted: {res.halted}; last good checkpoint retained", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- sample ----------------------------------------------------------------------


def _ext(channels: int) -> str:
    return "pgm" if channels == 1 else "ppm"


def cmd_sample(args) -> int:
    from pyrpix.data import read_image, write_image
    from pyrpix.pyramid import GeometryError, pyramid
    from pyrpix.sampler import sample_batch, superresolve
    from pyrpix.train import load_checkpoint

    if args.temperature <= 0:
        raise UsageError("--temperature must be positive")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    model, _, _, _ = load_checkpoint(args.checkpoint)
    C, K = model.config.channels, model.config.levels
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = _ext(C)
    seeds = [args.seed + i for i in range(args.count)]
    if args.from_lowres:
        low = read_image(args.from_lowres, K)
        if low.shape[0] != C:
            raise UsageError(f"{args.from_lowres}: {low.shape[0]} channels, model has {C}")
        try:
            model.schedule.scale_of_size(low.shape[1:])
        except GeometryError as e:
            raise UsageError(f"{args.from_lowres}: {e}") from None
        images, traces = [], []
        for s in seeds:
            img, tr = superresolve(model, low, seed=s, temperature=args.temperature, argmax=args.argmax, return_trace=True)
            images.append(img)
            traces.append(tr)
        levels = [pyramid(img, model.num_scales) for img in images] if args.pyramid else None
    else:
        images, traces, lv = sample_batch(
            model, seeds, temperature=args.temperature, argmax=args.argmax, batch_size=args.batch_size, return_pyramid=True
        )
        levels = [[lv[s][i] for s in range(len(lv))] for i in range(len(seeds))] if args.pyramid else None
    for i, (img, tr) in enumerate(zip(images, traces)):
        stem = f"sample{i:04d}"
        write_image(out / f"{stem}.{ext}", img, K)
        (out / f"{stem}.trace.txt").write_text(tr.to_text())
        if levels is not None:
            for s, im in enumerate(levels[i]):
                write_image(out / f"{stem}_scale{s}.{ext}", im, K)
        print(f"{out / f'{stem}.{ext}'} steps={tr.sequential_steps} log_prob={tr.log_prob:.6f}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    from pyrpix.data import load_directory, read_image
    from pyrpix.likelihood import dataset_nll, joint_nll
    from pyrpix.train import load_checkpoint, load_dataset

    model, cfg, _, _ = load_checkpoint(args.checkpoint)
    K = model.config.levels
    if args.image:
        imgs = [read_image(p, K) for p in args.image]
        report = joint_nll(model, imgs[0]) if len(imgs) == 1 else dataset_nll(model, imgs)
    else:
        ds = load_directory(args.data_dir, K) if args.data_dir else load_dataset(cfg)
        part = ds.split(args.split)
        if len(part) == 0:
            print(f"error: split {args.split!r} is empty", file=sys.stderr)
            return EXIT_RUNTIME
        report = dataset_nll(model, part)
    sys.stdout.write(report.to_text())
    return EXIT_OK


# -- verify ---------------------------------------------------------------------------


def _verify_model(args):
    from pyrpix.config import RunConfig
    from pyrpix.network import MultiscaleModel, make_config
    from pyrpix.train import load_checkpoint

    if args.checkpoint:
        model, _, _, _ = load_checkpoint(args.checkpoint)
        return model
    if args.config:
        return MultiscaleModel(RunConfig.load(args.config).model_config(), args.random)
    cfg = make_config((4, 4), (8, 8), 3, 4, kind=args.kind, patch=2, base_hidden=12, up_hidden=12, shallow_hidden=12)
    return MultiscaleModel(cfg, args.random)


def cmd_verify(args) -> int:
    from pyrpix import oracle
    from pyrpix.network import MultiscaleModel, make_config

    if args.checkpoint is None and args.random is None:
        raise UsageError("verify needs a checkpoint or --random SEED")
    model = _verify_model(args)
    if args.inject_mask_fault:
        layer = oracle.inject_mask_fault(model)
        print(f"note: injected mask fault in {layer}")
    rows: list[tuple[str, bool, str]] = []

    # normalization: on the model itself when enumerable, else on a small
    # model of the same architecture whose space is enumerable
    cfg = model.config
    try:
        spec = oracle.EnumSpec(cfg.channels, *model.schedule.target_size, cfg.levels, model.schedule.base_size)
        target, where = model, "model"
    except oracle.EnumerationError:
        small = make_config(
            (1, 1), (2, 2), 1, 2, kind=cfg.upscaler.kind, patch=1, base_hidden=cfg.base.hidden,
            up_hidden=cfg.upscaler.hidden, shallow_hidden=cfg.upscaler.shallow_hidden,
        )
        target, where = MultiscaleModel(small, args.random or 0), "2x2 K=2 surrogate"
        spec = oracle.EnumSpec(1, 2, 2, 2)
    total, _ = oracle.enumerate_mass(target, spec)
    rows.append(("enumerate_mass", abs(total - 1) <= 1e-6, f"total={total!r} on {where}"))

    n = cfg.channels * model.schedule.target_size[0] * model.schedule.target_size[1]
    if n <= args.probe_limit:
        rep = oracle.causality_probe(model, seed=args.random or 0)
        detail = f"violations={len(rep.violations)} pairs={rep.pairs_checked} allowed_nonzero={rep.allowed_nonzero}"
        if rep.violations:
            detail += f" first: {rep.violations[0]}"
        rows.append(("causality_probe", rep.ok, detail))
    else:
        rows.append(("causality_probe", True, f"skipped: {n} sub-pixels exceeds --probe-limit {args.probe_limit}"))

    checks = [
        ("gradcheck linear", oracle.linear_factory, 1e-9),
        ("gradcheck masked stack", oracle.masked_stack_factory, 1e-6),
        ("gradcheck residual block", oracle.residual_factory, 1e-6),
        ("gradcheck upscaler loss", lambda s: oracle.upscaler_loss_factory(s, cfg.upscaler.kind), 1e-4),
    ]
    for name, factory, tol in checks:
        r = oracle.gradcheck(factory, args.random or 0)
        rows.append((name, r.max_rel_error < tol, f"max_rel_error={r.max_rel_error:.3e} tol={tol:g}"))

    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    ok = all(r[1] for r in rows)
    print("verify: PASS" if ok else "verify: FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


# -- bench -----------------------------------------------------------------------------


def _random_pair(resolution: int, channels: int, seed: int, hidden: int):
    from pyrpix.network import MultiscaleModel, make_config

    multi = make_config((4, 4), (resolution, resolution), channels, 4, base_hidden=hidden, up_hidden=hidden)
    flat = make_config((resolution, resolution), (resolution, resolution), channels, 4, base_hidden=hidden)
    return MultiscaleModel(multi, seed), MultiscaleModel(flat, seed)


def run_bench(multi, flat, repetitions: int, seed: int = 0) -> dict:
    from pyrpix.sampler import flat_sample, sample

    if multi.schedule.target_size != flat.schedule.target_size or multi.config.channels != flat.config.channels:
        raise UsageError(
            f"resolution mismatch: {multi.schedule.target_size} vs {flat.schedule.target_size}"
        )
    out = {}
    for arm, model, fn in (("multiscale", multi, sample), ("flat", flat, flat_sample)):
        times, steps = [], None
        for r in range(repetitions):
            t0 = time.perf_counter()
            _, tr = fn(model, None, seed + r)
            times.append(time.perf_counter() - t0)
            steps = tr.sequential_steps
        out[arm] = {"steps": steps, "median_s": statistics.median(times), "times": times}
    out["speedup"] = out["flat"]["median_s"] / out["multiscale"]["median_s"]
    return out


def cmd_bench(args) -> int:
    from pyrpix.train import load_checkpoint

    if args.repetitions < 1:
        raise UsageError("--repetitions must be at least 1")
    if args.repetitions == 1:
        print("warning: repetitions=1, the median is a single observation", file=sys.stderr)
    if args.checkpoints:
        if len(args.checkpoints) != 2:
            raise UsageError("bench takes two checkpoints: MULTISCALE FLAT")
        multi = load_checkpoint(args.checkpoints[0])[0]
        flat = load_checkpoint(args.checkpoints[1])[0]
        if flat.num_scales != 0:
            raise UsageError("the second checkpoint must be a flat model (base resolution = target)")
    else:
        multi, flat = _random_pair(args.resolution, args.channels, args.seed, args.hidden)
    res = run_bench(multi, flat, args.repetitions, args.seed)
    H, W = multi.schedule.target_size
    print(f"resolution={H}x{W} channels={multi.config.channels} repetitions={args.repetitions}")
    print(f"{'arm':<12}{'steps':>8}{'median_s':>12}")
    for arm in ("multiscale", "flat"):
        print(f"{arm:<12}{res[arm]['steps']:>8}{res[arm]['median_s']:>12.5f}")
    print(f"speedup={res['speedup']:.2f}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pyrpix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from an INI run config")
    t.add_argument("config")
    t.add_argument("--out", required=True, help="output directory for checkpoint and metrics")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int, help="override [train] steps")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="draw images from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--argmax", action="store_true", help="take the most likely level instead of sampling")
    s.add_argument("--from-lowres", help="PGM/PPM at some scale of the schedule to upscale")
    s.add_argument("--pyramid", action="store_true", help="also write every intermediate scale")
    s.add_argument("--batch-size", type=int, default=None)
    s.set_defaults(fn=cmd_sample)

    e = sub.add_parser("eval", help="NLL of a dataset split or image files")
    e.add_argument("checkpoint")
    e.add_argument("--data-dir", help="dataset directory with manifest.txt (default: the run config's data)")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--image", nargs="+", help="evaluate these image files instead")
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("verify", help="run the normalization, causality and gradient oracles")
    v.add_argument("checkpoint", nargs="?")
    v.add_argument("--random", type=int, metavar="SEED", help="verify a freshly initialised model")
    v.add_argument("--config", help="run config giving the random model's architecture")
    v.add_argument("--kind", choices=("A", "B"), default="A")
    v.add_argument("--inject-mask-fault", action="store_true", help="open one mask bit first (must fail)")
    v.add_argument("--probe-limit", type=int, default=768, help="max sub-pixels for the causality probe")
    v.set_defaults(fn=cmd_verify)

    b = sub.add_parser("bench", help="sampling steps and wall-clock: multiscale vs flat")
    b.add_argument("checkpoints", nargs="*", metavar="CHECKPOINT")
    b.add_argument("--resolution", type=int, default=32)
    b.add_argument("--channels", type=int, default=1)
    b.add_argument("--hidden", type=int, default=16)
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    from pyrpix.data import NetpbmError
    from pyrpix.network.checkpoint import CheckpointError
    from pyrpix.pyramid import GeometryError

    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError, NetpbmError, GeometryError, ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
