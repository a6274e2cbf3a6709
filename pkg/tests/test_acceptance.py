"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Lines are also collected into the terminal summary (see conftest.py).
"""
import math
import time

import numpy as np

from conftest import ACCEPTANCE
from pyrpix.cli import _random_pair, main, run_bench
from pyrpix.config import RunConfig, preset
from pyrpix.data import read_image
from pyrpix.data.netpbm import decode, encode
from pyrpix.likelihood import dataset_nll, joint_nll_batch
from pyrpix.network import Conditioning, MultiscaleModel, checkpoint, make_config
from pyrpix.oracle import (
    EnumSpec,
    causality_probe,
    enumerate_mass,
    gradcheck,
    inject_mask_fault,
    linear_factory,
    masked_stack_factory,
    residual_factory,
    upscaler_loss_factory,
)
from pyrpix.pyramid import pyramid, subsample
from pyrpix.sampler import flat_sample, sample, sample_batch, superresolve
from pyrpix.train import IndependentBaseline, load_checkpoint, load_dataset, save_checkpoint, train


def report(n: int, title: str, ok: bool, detail: str, elapsed: float) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} | {detail} | {elapsed:.1f}s"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _enum_config(space: str, kind: str) -> RunConfig:
    cfg = RunConfig()
    m = cfg.model
    if space == "2x2":
        m.base_height = m.base_width = 1
        m.target_height = m.target_width = 2
    else:
        m.base_height = m.base_width = 2
        m.target_height = m.target_width = 4
    m.levels, m.kind, m.patch = 2, kind, 1
    m.base_hidden = m.up_hidden = m.shallow_hidden = 8
    m.first_kernel = 3
    return cfg


# -- 1 ---------------------------------------------------------------------------


def test_criterion_1_normalization(tmp_path):
    t0 = time.perf_counter()
    worst, runs = 0.0, 0
    for seed in range(20):
        kind = "AB"[seed % 2]
        for space, spec in (("2x2", EnumSpec(1, 2, 2, 2, (1, 1))), ("4x4", EnumSpec(1, 4, 4, 2, (2, 2)))):
            model = MultiscaleModel(_enum_config(space, kind).model_config(), seed)
            total, _ = enumerate_mass(model, spec)
            worst = max(worst, abs(total - 1.0))
            runs += 1
    # trained checkpoints, one per space, reloaded from disk
    for space, spec in (("2x2", EnumSpec(1, 2, 2, 2, (1, 1))), ("4x4", EnumSpec(1, 4, 4, 2, (2, 2)))):
        cfg = _enum_config(space, "B")
        cfg.data.count, cfg.data.noise = 400, 0.1
        cfg.train.steps, cfg.train.batch_size, cfg.train.lr = 150, 16, 3e-3
        cfg.train.eval_every = cfg.train.checkpoint_every = 150
        train(cfg, tmp_path / space)
        model = load_checkpoint(tmp_path / space / "checkpoint.pyrx")[0]
        total, _ = enumerate_mass(model, spec)
        worst = max(worst, abs(total - 1.0))
        runs += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed <= 600
    report(1, "normalization oracle", ok, f"{runs} models, max |mass-1| = {worst:.2e} (tol 1e-6)", elapsed)


# -- 2 ---------------------------------------------------------------------------


def test_criterion_2_causality():
    t0 = time.perf_counter()
    details, ok = [], True
    for kind in "AB":
        cfg = make_config((4, 4), (8, 8), 3, 4, kind=kind, patch=2, base_hidden=12, up_hidden=12, shallow_hidden=12)
        model = MultiscaleModel(cfg, 7)
        rep = causality_probe(model, seed=1)
        forbidden_grad = rep.gradient[rep.forbidden]
        exact_zero = bool(np.all(forbidden_grad == 0.0))
        ok &= rep.ok and exact_zero and rep.agree and rep.allowed_nonzero > 0
        details.append(f"{kind}: {len(rep.violations)} violations over {rep.pairs_checked} pairs, forbidden grads all 0.0={exact_zero}")
        layers = ["base/l0"] + (["up1/shallow/l0"] if kind == "B" else [])
        for layer in layers:
            faulty = MultiscaleModel(cfg, 7)
            inject_mask_fault(faulty, layer)
            caught = not causality_probe(faulty, seed=1).ok
            ok &= caught
            details.append(f"{kind} fault in {layer} caught={caught}")
    elapsed = time.perf_counter() - t0
    report(2, "causality", ok and elapsed <= 300, "; ".join(details), elapsed)


# -- 3 ---------------------------------------------------------------------------


def test_criterion_3_gradients():
    t0 = time.perf_counter()
    blocks = {
        "linear": gradcheck(linear_factory),
        "masked stack": gradcheck(masked_stack_factory),
        "residual": gradcheck(residual_factory),
    }
    full = {kind: gradcheck(lambda s, k=kind: upscaler_loss_factory(s, k, channels=3)) for kind in "AB"}
    ok = all(r.max_rel_error < 1e-6 for r in blocks.values()) and all(r.max_rel_error < 1e-4 for r in full.values())
    detail = ", ".join(f"{k} {r.max_rel_error:.1e}" for k, r in blocks.items())
    detail += " (tol 1e-6); " + ", ".join(f"upscaler {k} {r.max_rel_error:.1e}" for k, r in full.items()) + " (tol 1e-4)"
    report(3, "gradient correctness", ok, detail, time.perf_counter() - t0)


# -- 4 ---------------------------------------------------------------------------


def _tiny(base, target, channels, **kw):
    kw = {"base_layers": 1, "base_hidden": 3, "up_hidden": 3, "resnet_layers": 0, "first_kernel": 3, **kw}
    return MultiscaleModel(make_config(base, target, channels, 4, **kw), 0)


def test_criterion_4_complexity():
    t0 = time.perf_counter()
    ok, parts = True, []
    for C, expect in ((1, 3), (3, 9)):
        steps = [sample(_tiny((4, 4), (n, n), C))[1].sequential_steps for n in (4, 8, 16, 32, 64)]
        diffs = np.diff(steps).tolist()
        ok &= set(diffs) == {expect}
        parts.append(f"C={C} steps {steps}")
    for n, C in ((2, 1), (8, 1), (4, 3), (16, 3)):
        s = flat_sample(_tiny((n, n), (n, n), C))[1].sequential_steps
        ok &= s == n * n * C
    parts.append("flat = H*W*C")
    multi, flat = _random_pair(32, 1, 0, 16)
    res = run_bench(multi, flat, repetitions=5)
    ok &= res["multiscale"]["steps"] == 25 and res["flat"]["steps"] == 1024 and res["speedup"] >= 10
    parts.append(f"32x32 bench {res['multiscale']['steps']} vs {res['flat']['steps']} steps, speedup {res['speedup']:.0f}x (need 10x)")
    report(4, "complexity law", ok, "; ".join(parts), time.perf_counter() - t0)


# -- 5 ---------------------------------------------------------------------------


def test_criterion_5_consistency():
    t0 = time.perf_counter()
    worst = 0.0
    for kind, C in (("A", 3), ("B", 3), ("A", 1), ("B", 1)):
        cfg = make_config((2, 2), (8, 8), C, 8, kind=kind, patch=2, base_hidden=8, up_hidden=8, shallow_hidden=8)
        model = MultiscaleModel(cfg, 3)
        imgs, traces = sample_batch(model, range(25), temperature=1.0)
        per = joint_nll_batch(model, imgs)
        for row, tr in zip(per, traces):
            worst = max(worst, abs(-tr.log_prob - math.fsum(row)))
    model = MultiscaleModel(_enum_config("2x2", "A").model_config(), 11)
    for p in model.parameters().values():  # sharpen the distribution so TV is informative
        p.data *= 3.0
    _, exact = enumerate_mass(model, EnumSpec(1, 2, 2, 2))
    imgs, _ = sample_batch(model, range(100_000))
    codes = imgs.reshape(len(imgs), 4) @ np.array([8, 4, 2, 1])
    freq = np.bincount(codes, minlength=16) / len(imgs)
    tv = 0.5 * float(np.abs(freq - exact).sum())
    ok = worst <= 1e-12 and tv < 0.02
    report(5, "sampler/likelihood consistency", ok,
           f"100 samples max |trace + nll| = {worst:.1e} (tol 1e-12); TV over 1e5 samples = {tv:.4f} (tol 0.02)",
           time.perf_counter() - t0)


# -- 6 ---------------------------------------------------------------------------


def _learning_config(noise: float, steps: int) -> RunConfig:
    cfg = RunConfig()
    m = cfg.model
    m.target_height = m.target_width = 8
    m.base_height = m.base_width = 4
    m.levels = 2
    m.kind, m.patch = "B", 4
    m.base_layers, m.base_hidden, m.first_kernel = 3, 24, 7
    m.resnet_layers, m.up_hidden, m.shallow_hidden = 2, 24, 24
    cfg.data.family = "checkerboard_noise"
    cfg.data.noise = noise
    cfg.data.count = 6000
    if noise == 0:
        cfg.data.cell_size, cfg.data.phase = 2, "0,0"
    t = cfg.train
    t.steps, t.batch_size, t.lr = steps, 32, 3e-3
    t.lr_decay_steps = [int(0.7 * steps)]
    t.eval_every, t.checkpoint_every = steps, steps
    return cfg


def test_criterion_6_learning_signal(tmp_path):
    t0 = time.perf_counter()
    cfg = _learning_config(0.1, 1500)
    res = train(cfg, tmp_path / "noisy")
    ds = load_dataset(cfg)
    test = ds.split("test")
    nll = dataset_nll(res.model, test).nats_per_subpixel
    H = cfg.synthetic_spec().entropy_per_subpixel
    base = IndependentBaseline.fit(ds.split("train").images, 2).nll(test.images)
    gap = nll / H - 1
    gain = 1 - nll / base

    cfg0 = _learning_config(0.0, 500)
    res0 = train(cfg0, tmp_path / "clean")
    nll0 = dataset_nll(res0.model, load_dataset(cfg0).split("test")).nats_per_subpixel
    elapsed = time.perf_counter() - t0
    ok = gap <= 0.05 and gain >= 0.20 and nll0 < 0.05 and elapsed <= 1800
    report(6, "learning signal", ok,
           f"eps=0.1 test {nll:.4f} vs H {H:.4f} ({100 * gap:+.1f}%, tol 5%), independent {base:.4f} "
           f"(beaten by {100 * gain:.0f}%, need 20%); eps=0 test {nll0:.2e} (tol 0.05)", elapsed)


# -- 7 ---------------------------------------------------------------------------


def test_criterion_7_superresolution(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    checked, ok = 0, True
    for kind, C, K in (("A", 1, 4), ("B", 3, 16), ("A", 3, 256), ("B", 1, 2)):
        cfg = make_config((2, 2), (16, 16), C, K, kind=kind, patch=2, base_hidden=6, up_hidden=6, shallow_hidden=6)
        model = MultiscaleModel(cfg, 5)
        for trial in range(3):
            img = rng.integers(0, K, (C, 16, 16))
            for s, low in enumerate(pyramid(img, 3)):
                out = superresolve(model, low, seed=trial, argmax=trial == 2)
                x = out
                for _ in range(3 - s):
                    x = subsample(x)
                ok &= np.array_equal(x, low)
                checked += 1
    # the CLI writes S+1 pyramid images per sample
    cfg = RunConfig()
    m = cfg.model
    m.base_height = m.base_width = 4
    m.target_height = m.target_width = 32
    m.base_hidden = m.up_hidden = 6
    path = tmp_path / "m.pyrx"
    save_checkpoint(path, MultiscaleModel(cfg.model_config(), 0), cfg, 0)
    code = main(["sample", str(path), "--count", "3", "--pyramid", "--out", str(tmp_path / "out")])
    counts = [len(list((tmp_path / "out").glob(f"sample{i:04d}_scale*.pgm"))) for i in range(3)]
    sizes = sorted(read_image(p).shape[1] for p in (tmp_path / "out").glob("sample0000_scale*.pgm"))
    ok &= code == 0 and counts == [4, 4, 4] and sizes == [4, 8, 16, 32]
    report(7, "superresolution consistency", ok,
           f"{checked} superresolve inputs bit-exact; --pyramid wrote {counts} images (S+1 = 4)",
           time.perf_counter() - t0)


# -- 8 ---------------------------------------------------------------------------


def test_criterion_8_persistence(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    ok = True
    for kind in "AB":
        cfg = RunConfig()
        cfg.model.kind, cfg.model.patch, cfg.model.channels, cfg.model.num_classes = kind, 2, 3, 2
        model = MultiscaleModel(cfg.model_config(), 4)
        for p in model.parameters().values():
            p.data += 0.01 * rng.standard_normal(p.shape)
        save_checkpoint(tmp_path / f"{kind}.pyrx", model, cfg, 17)
        back, bcfg, step, _ = load_checkpoint(tmp_path / f"{kind}.pyrx")
        imgs = rng.integers(0, 4, (4, 3, 8, 8))
        cond = Conditioning(np.array([0, 1, 0, 1]))
        a, b = joint_nll_batch(model, imgs, cond), joint_nll_batch(back, imgs, cond)
        ok &= np.array_equal(a.view(np.uint64), b.view(np.uint64)) and step == 17 and bcfg == cfg
        blob = checkpoint.encode(model.state_dict())
        ok &= checkpoint.decode(blob)[0].keys() == model.state_dict().keys()
    fixed = 0
    for name in ("desk", "paper"):
        text = preset(name).to_text()
        fixed += RunConfig.from_text(text).to_text() == text
    ok &= fixed == 2
    pnm = 0
    for K in (2, 4, 16, 256):
        for C in (1, 3):
            img = rng.integers(0, K, (C, 7, 5))
            same = np.array_equal(decode(encode(img, K), K), img)
            ok &= same
            pnm += same
    report(8, "persistence", ok,
           f"checkpoint forward passes bit-identical (A, B); config fixed point {fixed}/2; PGM/PPM round trips {pnm}/8",
           time.perf_counter() - t0)
