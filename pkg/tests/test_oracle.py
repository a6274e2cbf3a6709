import numpy as np
import pytest

from pyrpix.network import MultiscaleModel, make_config
from pyrpix.oracle import (
    EnumerationError,
    EnumSpec,
    causality_probe,
    dependency_order,
    enumerate_mass,
    forbidden_pairs,
    gradcheck,
    inject_mask_fault,
    linear_factory,
    masked_stack_factory,
    residual_factory,
    upscaler_loss_factory,
)
from pyrpix.pyramid import GeometryError
from pyrpix.tensor import Tensor, mul, relu, sum_all


def _model(kind="A", channels=1, levels=2, base=(1, 1), target=(2, 2), seed=0, patch=1):
    cfg = make_config(base, target, channels, levels, base_hidden=6, up_hidden=6, shallow_hidden=6, kind=kind,
                      patch=patch, first_kernel=3)
    return MultiscaleModel(cfg, seed)


def test_enum_spec_order_and_bound():
    spec = EnumSpec(1, 2, 2, 2)
    imgs = spec.images()
    assert imgs.shape == (16, 1, 2, 2)
    assert imgs[1].ravel().tolist() == [0, 0, 0, 1]
    assert imgs[8].ravel().tolist() == [1, 0, 0, 0]
    assert len({x.tobytes() for x in imgs}) == 16
    EnumSpec(1, 4, 4, 2)
    with pytest.raises(EnumerationError):
        EnumSpec(1, 4, 5, 2)


@pytest.mark.parametrize("kind", ["A", "B"])
def test_mass_is_one(kind):
    total, probs = enumerate_mass(_model(kind), EnumSpec(1, 2, 2, 2))
    assert abs(total - 1.0) < 1e-9
    assert np.all(probs > 0)


def test_mass_spec_mismatch():
    with pytest.raises(GeometryError):
        enumerate_mass(_model(), EnumSpec(1, 2, 2, 3))


def test_dependency_order_base_raster():
    m = _model(base=(2, 2), target=(2, 2), channels=3, levels=2)
    g, unit, sec = dependency_order(m)
    assert np.all(g == 0) and np.all(unit == 0)
    # raster position outer, colour inner
    assert sec[:, 0, 0].tolist() == [0, 1, 2]
    assert sec[:, 1, 1].tolist() == [9, 10, 11]


def test_typeB_units_are_patches():
    m = _model("B", base=(4, 4), target=(8, 8), patch=2)
    g, unit, sec = dependency_order(m)
    # UR pixels of the first patch sit at even rows, odd columns 1 and 3
    assert unit[0, 0, 1] == unit[0, 2, 3] != unit[0, 0, 5]
    assert sec[0, 0, 1] == 0 and sec[0, 0, 3] == 1 and sec[0, 2, 1] == 2
    f = forbidden_pairs(m)
    n = 64
    assert f.shape == (n, n) and np.all(np.diag(f))


@pytest.mark.parametrize("kind", ["A", "B"])
def test_probe_clean_and_fault_caught(kind):
    m = _model(kind, channels=3, levels=4, base=(2, 2), target=(4, 4), patch=1)
    rep = causality_probe(m)
    assert rep.ok and rep.agree
    assert np.all(rep.gradient[rep.forbidden] == 0.0)
    assert rep.allowed_nonzero > 0
    assert "violations=0" in rep.to_text()
    layer = inject_mask_fault(m)
    assert layer == "base/l0"
    bad = causality_probe(m)
    assert not bad.ok
    # the opened centre tap lets a base sub-pixel see itself
    assert any(v.source == v.target for v in bad.violations)


def test_probe_depends_helper():
    m = _model("A", base=(2, 2), target=(4, 4), levels=4)
    rep = causality_probe(m)
    # LR of scale 1 sees its UL neighbour; UL never sees LR
    assert rep.depends((0, 1, 1), (0, 0, 0))
    assert not rep.depends((0, 0, 0), (0, 1, 1))


@pytest.mark.parametrize(
    "factory,bound",
    [(linear_factory, 1e-9), (masked_stack_factory, 1e-6), (residual_factory, 1e-6)],
)
def test_block_gradients(factory, bound):
    res = gradcheck(factory)
    assert res.checked > 0
    assert res.max_rel_error < bound, res.to_text()


def test_full_upscaler_loss_gradient():
    for kind in "AB":
        res = gradcheck(lambda s: upscaler_loss_factory(s, kind))
        assert res.max_rel_error < 1e-4, res.to_text()


def test_gradcheck_skips_kinks():
    # relu exactly at its kink: the +-h probes straddle it
    w = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    res = gradcheck(lambda s: ({"w": w}, lambda: sum_all(relu(w))))
    assert res.skipped == 1 and res.checked == 1
    assert res.max_rel_error < 1e-9


def test_gradcheck_detects_a_wrong_gradient(monkeypatch):
    w = Tensor(np.array([3.0]), requires_grad=True)
    factory = lambda s: ({"w": w}, lambda: sum_all(mul(w, w)))  # noqa: E731
    assert gradcheck(factory).max_rel_error < 1e-9
    orig = Tensor.backward

    def stale(self, grad=None):
        orig(self, grad)
        w.grad = np.array([4.0])  # d/dw w^2 at w=2, not 3

    monkeypatch.setattr(Tensor, "backward", stale)
    assert gradcheck(factory).max_rel_error > 0.3
