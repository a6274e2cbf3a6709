import math
import os

import numpy as np
import pytest

from pyrpix.config import RunConfig, RunConfigError, preset
from pyrpix.network import checkpoint
from pyrpix.train import CHECKPOINT, METRICS, IndependentBaseline, load_checkpoint, save_checkpoint, train


def _cfg(steps=6, **train_kw):
    cfg = RunConfig()
    m = cfg.model
    m.base_height = m.base_width = 2
    m.target_height = m.target_width = 4
    m.levels = 2
    m.base_hidden = m.up_hidden = m.shallow_hidden = 6
    m.first_kernel = 3
    m.resnet_layers = 1
    cfg.data.count = 40
    cfg.data.noise = 0.1
    cfg.train.steps = steps
    cfg.train.batch_size = 4
    cfg.train.eval_every = 2
    cfg.train.checkpoint_every = 3
    cfg.train.lr_decay_steps = [4]
    for k, v in train_kw.items():
        setattr(cfg.train, k, v)
    return cfg


# -- config -------------------------------------------------------------------


@pytest.mark.parametrize("name", ["desk", "paper"])
def test_text_fixed_point(name):
    cfg = preset(name)
    text = cfg.to_text()
    again = RunConfig.from_text(text)
    assert again == cfg
    assert again.to_text() == text


def test_paper_preset_shape():
    cfg = preset("paper")
    mc = cfg.model_config()
    assert mc.target_size == (32, 32) and mc.channels == 3 and mc.levels == 256
    assert mc.schedule.num_scales == 3 and mc.upscaler.kind == "B"
    with pytest.raises(RunConfigError):
        preset("huge")


def test_unknown_keys_and_sections():
    with pytest.raises(RunConfigError, match="unknown key"):
        RunConfig.from_text("[train]\nlearning_rate = 0.1\n")
    with pytest.raises(RunConfigError, match="sections"):
        RunConfig.from_text("[optim]\nlr = 0.1\n")
    with pytest.raises(RunConfigError, match="cannot parse"):
        RunConfig.from_text("[train]\nsteps = many\n")
    with pytest.raises(RunConfigError, match="directory"):
        RunConfig.from_text("[data]\nsource = directory\n")


def test_partial_text_keeps_defaults(tmp_path):
    cfg = RunConfig.from_text("[model]\nkind = B\npatch = 2\n[train]\nlr_decay_steps = 10,20\n")
    assert cfg.model.kind == "B" and cfg.train.batch_size == 16
    assert cfg.lr_at(9) == cfg.train.lr
    assert cfg.lr_at(10) == pytest.approx(cfg.train.lr * 0.1)
    assert cfg.lr_at(25) == pytest.approx(cfg.train.lr * 0.01)
    cfg.save(tmp_path / "c.ini")
    assert RunConfig.load(tmp_path / "c.ini") == cfg


# -- training loop --------------------------------------------------------------


def test_metrics_and_schedule(tmp_path):
    cfg = _cfg()
    res = train(cfg, tmp_path)
    assert res.step == 6 and res.halted is None
    lines = (tmp_path / METRICS).read_text().splitlines()
    assert [ln.split()[0] for ln in lines] == ["step=2", "step=4", "step=6"]
    assert [r["lr"] for r in res.metrics] == [cfg.train.lr, cfg.train.lr, cfg.train.lr * 0.1]
    assert all(math.isfinite(r["val_nats"]) for r in res.metrics)
    assert res.metrics[0]["val_bits"] == pytest.approx(res.metrics[0]["val_nats"] / math.log(2))
    assert (tmp_path / CHECKPOINT).exists()


def test_loss_decreases(tmp_path):
    res = train(_cfg(steps=60, lr=1e-2, eval_every=60, lr_decay_steps=[]), tmp_path)
    rep = res.metrics[-1]
    assert rep["val_nats"] < math.log(2)


def test_resume_is_bit_exact(tmp_path):
    cfg = _cfg()
    full = train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b", stop_after=3)
    resumed = train(cfg, tmp_path / "b", resume=tmp_path / "b" / CHECKPOINT)
    assert resumed.step == 6
    sa, sb = full.model.state_dict(), resumed.model.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    _, _, step, opt = load_checkpoint(tmp_path / "b" / CHECKPOINT)
    assert step == 6 and set(opt) == set(sa)


def test_resume_rejects_other_model(tmp_path):
    cfg = _cfg()
    train(cfg, tmp_path, stop_after=1)
    other = _cfg()
    other.model.kind = "B"
    other.model.patch = 1
    with pytest.raises(ValueError, match="different model"):
        train(other, tmp_path / "x", resume=tmp_path / CHECKPOINT)


def test_non_finite_halts_without_checkpoint(tmp_path, monkeypatch):
    import pyrpix.train as tr

    built = []
    orig = tr.MultiscaleModel
    monkeypatch.setattr(tr, "MultiscaleModel", lambda *a, **kw: built.append(orig(*a, **kw)) or built[-1])

    def poison(step, value):
        if step == 2:
            built[0].parameters()["base/head/b"].data[:] = np.nan

    res = train(_cfg(steps=10, checkpoint_every=100), tmp_path, on_step=poison)
    assert res.halted is not None and res.step == 2
    assert "halt=non_finite_loss" in (tmp_path / METRICS).read_text()
    assert not (tmp_path / CHECKPOINT).exists()


def test_atomic_checkpoint_write(tmp_path, monkeypatch):
    cfg = _cfg()
    res = train(cfg, tmp_path, stop_after=2)
    path = tmp_path / CHECKPOINT
    before = path.read_bytes()

    def boom(*a):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        save_checkpoint(path, res.model, cfg, 99)
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == [CHECKPOINT, METRICS]


def test_checkpoint_without_step_is_rejected(tmp_path):
    checkpoint.save(tmp_path / "c", {"a": np.zeros(1)}, "hello")
    with pytest.raises(checkpoint.CheckpointError, match="step"):
        load_checkpoint(tmp_path / "c")


def test_independent_baseline():
    imgs = np.array([[[[0, 1]]], [[[0, 0]]]])
    b = IndependentBaseline.fit(imgs, 2, alpha=0.0)
    # first position is always 0 (0 nats), second is a fair coin (ln 2)
    assert b.nll(imgs) == pytest.approx(math.log(2) / 2)
    smooth = IndependentBaseline.fit(imgs, 2)
    assert np.allclose(np.exp(smooth.log_probs).sum(-1), 1.0)
