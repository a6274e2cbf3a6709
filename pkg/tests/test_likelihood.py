import math

import numpy as np
import pytest

from pyrpix.likelihood import (
    IntensityError,
    NLLReport,
    dataset_nll,
    joint_nll,
    joint_nll_batch,
    nll_loss,
)
from pyrpix.network import base_logits, upscaler_logits
from pyrpix.pyramid import Corner, GeometryError, split_all, subsample


def _nats(logits, target):
    lse = np.log(np.exp(logits - logits.max(-1, keepdims=True)).sum(-1)) + logits.max(-1)
    return float(np.sum(lse - np.take_along_axis(logits, target[..., None], -1)[..., 0]))


def test_zero_model_is_two_bits(small_model, rng):
    m = small_model(levels=4).zero_()
    rep = joint_nll(m, rng.integers(0, 4, (1, 8, 8)))
    assert rep.bits_per_subpixel == 2.0
    assert rep.subpixel_count == 64


def test_additivity_over_groups(small_model, rng):
    m = small_model(base=(2, 2), target=(4, 4), levels=2)
    img = rng.integers(0, 2, (1, 4, 4))
    rep = joint_nll(m, img)
    low = subsample(img)
    base = _nats(base_logits(m, low)[:, :, 0], low[0])
    parts = split_all(img)
    corners = 0.0
    for c in (Corner.UR, Corner.LL, Corner.LR):
        known = {q: parts[q] for q in Corner if q < c}
        corners += _nats(upscaler_logits(m, 1, c, known), parts[c][0])
    assert abs(rep.total_nats - (base + corners)) < 1e-12
    assert abs(rep.total_nats - math.fsum(v for _, v in rep.per_group)) < 1e-12


def test_tiny_model_mass(small_model):
    m = small_model(base=(1, 1), target=(2, 2), levels=2)
    imgs = np.array([[(i >> (3 - b)) & 1 for b in range(4)] for i in range(16)]).reshape(16, 1, 2, 2)
    total = np.exp(-joint_nll_batch(m, imgs).sum(axis=1)).sum()
    assert abs(total - 1.0) < 1e-9


def test_dataset_single_and_duplicate(small_model, rng):
    m = small_model()
    img = rng.integers(0, 4, (1, 8, 8))
    one = joint_nll(m, img)
    d1 = dataset_nll(m, [img])
    d2 = dataset_nll(m, [img, img])
    assert d1.total_nats == pytest.approx(one.total_nats, abs=1e-12)
    assert d2.nats_per_subpixel == pytest.approx(one.nats_per_subpixel, abs=1e-12)


def test_dataset_streams_in_batches(small_model, rng):
    m = small_model()
    imgs = rng.integers(0, 4, (7, 1, 8, 8))
    a = dataset_nll(m, iter(imgs), batch_size=3)
    b = dataset_nll(m, list(imgs), batch_size=64)
    assert a.total_nats == pytest.approx(b.total_nats, abs=1e-12)
    assert a.total_nats == pytest.approx(joint_nll_batch(m, imgs).sum(axis=1).mean(), abs=1e-12)


def test_errors(small_model, rng):
    m = small_model(levels=4)
    with pytest.raises(GeometryError):
        joint_nll(m, np.zeros((1, 4, 4), dtype=int))
    with pytest.raises(IntensityError):
        joint_nll(m, np.full((1, 8, 8), 4))
    with pytest.raises(IntensityError):
        joint_nll(m, np.full((1, 8, 8), 0.5))
    with pytest.raises(GeometryError):
        dataset_nll(m, [np.zeros((1, 8, 8), int), np.zeros((1, 4, 4), int)])
    with pytest.raises(ValueError, match="empty"):
        dataset_nll(m, [])


def test_loss_is_mean_of_report(small_model, rng):
    m = small_model()
    imgs = rng.integers(0, 4, (3, 1, 8, 8))
    loss, per = nll_loss(m, imgs)
    assert float(loss.data) == pytest.approx(per.sum() / imgs.size, abs=1e-12)


def test_report_text_round_trip(small_model, rng):
    rep = joint_nll(small_model(), rng.integers(0, 4, (1, 8, 8)))
    back = NLLReport.from_text(rep.to_text())
    assert [str(g) for g, _ in back.per_group] == [str(g) for g, _ in rep.per_group]
    assert back.total_nats == pytest.approx(rep.total_nats, rel=1e-11)
    assert back.subpixel_count == rep.subpixel_count
