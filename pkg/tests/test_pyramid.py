import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pyrpix.pyramid import (
    BASE,
    Corner,
    GeometryError,
    GroupId,
    build_schedule,
    merge,
    pyramid,
    split,
    split_all,
    subsample,
)


def test_six_upscalings_to_256():
    s = build_schedule((4, 4), (256, 256))
    assert s.num_scales == 6
    assert len(s.steps) == 19


def test_no_upscaling():
    assert build_schedule((4, 4), (4, 4)).steps == (BASE,)


def test_one_to_four_corner_sets():
    s = build_schedule((1, 1), (4, 4))
    assert [str(g) for g in s.steps] == ["base", "1:UR", "1:LL", "1:LR", "2:UR", "2:LL", "2:LR"]
    # hand enumeration of the scale-2 parity classes
    expected = {
        Corner.UL: {(0, 0), (0, 2), (2, 0), (2, 2)},
        Corner.UR: {(0, 1), (0, 3), (2, 1), (2, 3)},
        Corner.LL: {(1, 0), (1, 2), (3, 0), (3, 2)},
        Corner.LR: {(1, 1), (1, 3), (3, 1), (3, 3)},
    }
    for c in (Corner.UR, Corner.LL, Corner.LR):
        assert set(s.group_coords(GroupId(2, c))) == expected[c]
    # UL at scale 2 is everything introduced at scales 0 and 1
    earlier = set()
    for g in s.steps[:4]:
        earlier |= set(s.group_coords(g))
    assert earlier == expected[Corner.UL]


def test_split_ur_row_major():
    img = np.arange(16).reshape(4, 4)
    got = split(img, Corner.UR)
    assert got.tolist() == [[img[0, 1], img[0, 3]], [img[2, 1], img[2, 3]]]


@pytest.mark.parametrize(
    "base,target",
    [((3, 4), (6, 4)), ((4, 4), (12, 12)), ((4, 4), (2, 2)), ((2, 2), (8, 4)), ((0, 1), (0, 2))],
)
def test_bad_ratios(base, target):
    with pytest.raises(GeometryError):
        build_schedule(base, target)


def test_group_id_rules():
    with pytest.raises(GeometryError):
        GroupId(1, Corner.UL)
    with pytest.raises(GeometryError):
        GroupId(0, Corner.UR)
    with pytest.raises(GeometryError):
        GroupId(-1)
    assert GroupId.parse("3:LL") == GroupId(3, Corner.LL)
    assert GroupId.parse("base") == BASE


@pytest.mark.parametrize("S", range(7))
@pytest.mark.parametrize("base", [(1, 1), (2, 3), (4, 4)])
def test_partition(base, S):
    target = (base[0] << S, base[1] << S)
    s = build_schedule(base, target)
    assert len(s.steps) == 1 + 3 * S
    gm = s.group_map()  # raises on overlap
    assert np.all(gm >= 0)
    assert sum(len(s.group_coords(g)) for g in s.steps) == target[0] * target[1]


@pytest.mark.parametrize("S", range(1, 7))
def test_adjacent_pixels_differ_in_corner(S):
    n = 1 << S
    for size in (n, 2 * n):
        r, c = np.indices((size, size))
        label = (r % 2) * 2 + (c % 2)
        assert np.all(label[:, 1:] != label[:, :-1])
        assert np.all(label[1:, :] != label[:-1, :])


@pytest.mark.parametrize("m,h", [(1, 2), (2, 4), (2, 8), (4, 8)])
@pytest.mark.parametrize("corner", list(Corner))
def test_patches_never_touch(m, h, corner):
    dr, dc = corner.offset
    # full-image coordinates of each M x M patch of the h x h corner tensor
    owner = {}
    for r in range(h):
        for c in range(h):
            owner[(2 * r + dr, 2 * c + dc)] = (r // m, c // m)
    for (r, c), p in owner.items():
        for q in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if q in owner:
                assert owner[q] == p


def test_subsample_examples():
    assert subsample(np.array([[1, 2], [3, 4]])).tolist() == [[1]]
    assert np.all(subsample(np.full((3, 6, 4), 7)) == 7)
    with pytest.raises(GeometryError):
        subsample(np.zeros((3, 4)))


def test_pyramid_matches_schedule_coordinates(rng):
    img = rng.integers(0, 256, (16, 16))
    sched = build_schedule((2, 2), (16, 16))
    levels = pyramid(img, sched.num_scales)
    assert [lv.shape for lv in levels] == [sched.scale_size(s) for s in range(4)]
    for s in range(1, 4):
        stride = 1 << (sched.num_scales - s)
        known = set()
        for g in sched.steps[: 1 + 3 * (s - 1)]:
            known |= set(sched.group_coords(g))
        # the UL class at scale s is the scale s-1 image
        ul = split(levels[s], Corner.UL)
        assert np.array_equal(ul, levels[s - 1])
        assert known == {(r * 2 * stride, c * 2 * stride) for r in range(ul.shape[0]) for c in range(ul.shape[1])}


def test_merge_horizontal_half():
    assert merge({Corner.UL: np.array([[1]]), Corner.UR: np.array([[2]])}).tolist() == [[1, 2]]
    assert merge({Corner.UL: np.array([[1]]), Corner.LL: np.array([[2]])}).tolist() == [[1], [2]]


def test_merge_errors():
    with pytest.raises(GeometryError, match="missing"):
        merge({Corner.UL: np.zeros((2, 2)), Corner.LR: np.zeros((2, 2))})
    parts = split_all(np.zeros((4, 4)))
    parts[Corner.LL] = np.zeros((2, 3))
    with pytest.raises(GeometryError, match="shapes"):
        merge(parts)


@given(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_split_merge_round_trip(C, h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (C, 2 * h, 2 * w))
    parts = split_all(img)
    assert np.array_equal(merge(parts), img)
    assert np.array_equal(subsample(merge(parts)), parts[Corner.UL])
