"""Teacher-forced maximum-likelihood training with RMSprop and resumable checkpoints."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, TextIO

import numpy as np

from pyrpix.config import RunConfig
from pyrpix.data import Dataset, generate, load_directory
from pyrpix.likelihood import LN2, dataset_nll, nll_loss
from pyrpix.network import checkpoint
from pyrpix.network.model import MultiscaleModel
from pyrpix.tensor import NonFiniteGradient, RMSprop

CHECKPOINT = "checkpoint.pyrx"
METRICS = "metrics.log"
_OPT = "opt/"


class TrainingHalted(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data.source == "directory":
        ds = load_directory(cfg.data.directory, cfg.model.levels)
        want = (cfg.model.channels, cfg.model.target_height, cfg.model.target_width)
        if ds.shape != want:
            raise ValueError(f"dataset images are {ds.shape}, model expects {want}")
        return ds
    return generate(cfg.synthetic_spec(), cfg.data.count)


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, model: MultiscaleModel, cfg: RunConfig, step: int, opt_state=None) -> None:
    arrays = model.state_dict()
    for k, v in (opt_state or {}).items():
        arrays[_OPT + k] = v
    checkpoint.save(path, arrays, f"step={step}\n{cfg.to_text()}")


def load_checkpoint(path) -> tuple[MultiscaleModel, RunConfig, int, dict[str, np.ndarray]]:
    """(model, run config, step, optimizer state) from a checkpoint file."""
    arrays, meta = checkpoint.load(path)
    head, _, text = meta.partition("\n")
    if not head.startswith("step="):
        raise checkpoint.CheckpointError(f"{path}: metadata lacks a step counter")
    cfg = RunConfig.from_text(text)
    model = MultiscaleModel(cfg.model_config(), cfg.seed)
    opt = {k[len(_OPT) :]: v for k, v in arrays.items() if k.startswith(_OPT)}
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith(_OPT)})
    return model, cfg, int(head[5:]), opt


# -- baseline ---------------------------------------------------------------------


@dataclass
class IndependentBaseline:
    """Each sub-pixel position gets its own categorical, fitted by smoothed counts."""

    log_probs: np.ndarray  # [C, H, W, K]

    @classmethod
    def fit(cls, images: np.ndarray, levels: int, alpha: float = 0.5) -> "IndependentBaseline":
        onehot = np.eye(levels)[np.asarray(images)]  # [N, C, H, W, K]
        counts = onehot.sum(axis=0) + alpha
        with np.errstate(divide="ignore"):  # alpha=0 leaves unseen levels at -inf
            return cls(np.log(counts / counts.sum(axis=-1, keepdims=True)))

    def nll(self, images: np.ndarray) -> float:
        """Mean nats per sub-pixel."""
        imgs = np.asarray(images)
        lp = np.take_along_axis(self.log_probs[None], imgs[..., None], axis=-1)[..., 0]
        return float(-lp.mean())


# -- loop ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: MultiscaleModel
    step: int
    metrics: list[dict] = field(default_factory=list)
    halted: Optional[str] = None


def _batch_indices(seed: int, step: int, pool: np.ndarray, size: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, step, 0xBA7C]))
    return pool[rng.choice(len(pool), size=min(size, len(pool)), replace=False)]


def format_metrics(rec: dict) -> str:
    return " ".join(f"{k}={v:.10g}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items())


def train(
    cfg: RunConfig,
    out_dir,
    resume=None,
    *,
    dataset: Optional[Dataset] = None,
    log: Optional[TextIO] = None,
    stop_after: Optional[int] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Run (or continue) training to ``cfg.train.steps``.

    ``stop_after`` ends the run early at that step (the checkpoint is still
    written), which is how resume equivalence is exercised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = cfg.train
    if resume is not None:
        model, saved_cfg, step, opt_state = load_checkpoint(resume)
        if saved_cfg.model_config() != cfg.model_config():
            raise ValueError("resume checkpoint was written for a different model config")
    else:
        model, step, opt_state = MultiscaleModel(cfg.model_config(), cfg.seed), 0, {}
    ds = dataset if dataset is not None else load_dataset(cfg)
    pool = ds.split_indices("train")
    if len(pool) == 0:
        raise ValueError("training split is empty")
    val = ds.split("val")
    opt = RMSprop(model.parameters(), t.lr, t.rms_decay, t.rms_epsilon)
    opt.state.update({k: v.copy() for k, v in opt_state.items()})
    ckpt = out / CHECKPOINT
    metrics_path = out / METRICS
    result = TrainResult(model, step)
    end = t.steps if stop_after is None else min(stop_after, t.steps)
    window: list[float] = []
    t0 = time.perf_counter()

    def emit(rec: dict):
        line = format_metrics(rec)
        with metrics_path.open("a") as fh:
            fh.write(line + "\n")
        if log is not None:
            print(line, file=log, flush=True)
        result.metrics.append(rec)

    def evaluate(step: int):
        rec = {"step": step, "lr": cfg.lr_at(max(step - 1, 0))}
        rec["train_nats"] = float(np.mean(window)) if window else float("nan")
        if len(val):
            v = dataset_nll(model, val).nats_per_subpixel
            rec["val_nats"], rec["val_bits"] = v, v / LN2
        rec["elapsed"] = time.perf_counter() - t0
        window.clear()
        emit(rec)

    while step < end:
        idx = _batch_indices(cfg.seed, step, pool, t.batch_size)
        imgs, cond = ds.batch(idx)
        crop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, step, 0xC20F])) if t.crop else None
        loss, _ = nll_loss(model, imgs, cond, t.crop or None, crop_rng)
        value = float(loss.data)
        if not math.isfinite(value):
            result.halted = f"non-finite loss at step {step}"
            emit({"step": step, "halt": "non_finite_loss"})
            break
        opt.zero_grad()
        loss.backward()
        opt.lr = cfg.lr_at(step)
        try:
            opt.step(batch=step)
        except NonFiniteGradient as e:
            result.halted = str(e)
            emit({"step": step, "halt": "non_finite_gradient", "param": e.name})
            break
        step += 1
        window.append(value)
        if on_step is not None:
            on_step(step, value)
        if step % t.eval_every == 0 or step == end:
            evaluate(step)
        if step % t.checkpoint_every == 0 or step == end:
            save_checkpoint(ckpt, model, cfg, step, opt.state)
    if result.halted is None and not ckpt.exists():
        save_checkpoint(ckpt, model, cfg, step, opt.state)
    result.step = step
    return result
