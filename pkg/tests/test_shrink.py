import numpy as np
import pytest
from scipy import ndimage

from weakseg.raster import component_count, dilate
from weakseg.shrink import (
    ShrinkConfig, nearest_skeleton, refine_annotation, shrink_component, walk_and_stop, walk_line,
)
from weakseg.weaksynth import SynthConfig, ToyConfig, gen_toy_sample, synthesize_weak

EIGHT = np.ones((3, 3), bool)


def contour_band(L, width=2):
    """Pixels of L within ``width`` 8-steps of the background."""
    inner = ndimage.binary_erosion(L.astype(bool), EIGHT, iterations=width, border_value=0)
    return L.astype(bool) & ~inner


def row_map(values, width=None):
    width = width or len(values)
    M = np.zeros((3, width))
    M[1, :len(values)] = values
    return M


def test_nearest_skeleton_cases():
    assert nearest_skeleton((2, 5), [(1, 1), (2, 5)]) == (2, 5)
    assert nearest_skeleton((0, 0), [(3, 0), (0, 4)]) == (3, 0)
    # equal distance 5: the smaller y wins, points are (x, y)
    assert nearest_skeleton((0, 0), [(3, 4), (4, 3)]) == (4, 3)
    assert nearest_skeleton((0, 0), [(4, 3), (3, 4)]) == (4, 3)
    # same y, the smaller x wins
    assert nearest_skeleton((5, 0), [(8, 4), (2, 4)]) == (2, 4)
    with pytest.raises(ValueError):
        nearest_skeleton((0, 0), [])


def test_walk_uniform_returns_p():
    M = np.full((3, 8), 0.6)
    assert walk_and_stop((0, 1), (7, 1), M, ShrinkConfig()) == (0, 1)


def test_walk_first_of_pair():
    M = row_map([0.1, 0.1, 0.4, 0.5, 0.6, 0.6])
    assert walk_and_stop((0, 1), (5, 1), M, ShrinkConfig(delta=0.2)) == (2, 1)


def test_walk_alternating_never_stops():
    M = row_map([0.1, 0.4, 0.1, 0.4, 0.1, 0.4, 0.1])
    assert walk_and_stop((0, 1), (6, 1), M, ShrinkConfig(delta=0.2)) == (0, 1)


def test_walk_hit_must_be_strict():
    M = row_map([0.1, 0.3, 0.3, 0.3])  # equal to M(p)+delta is not a hit
    assert walk_and_stop((0, 1), (3, 1), M, ShrinkConfig(delta=0.2)) == (0, 1)


def test_walk_respects_max_steps():
    M = row_map([0.1, 0.1, 0.1, 0.9, 0.9])
    assert walk_and_stop((0, 1), (4, 1), M, ShrinkConfig(max_steps=2)) == (0, 1)
    assert walk_and_stop((0, 1), (4, 1), M, ShrinkConfig(max_steps=4)) == (3, 1)


def test_walk_line_past_target_stays_in_region():
    region = np.zeros((3, 10), np.uint8); region[1, :7] = 1
    line = walk_line((0, 1), (3, 1), region)
    assert line == [(x, 1) for x in range(1, 7)]
    assert walk_line((0, 1), (3, 1)) == [(1, 1), (2, 1), (3, 1)]


def test_config_validation():
    with pytest.raises(ValueError):
        ShrinkConfig(delta=1.5)
    with pytest.raises(ValueError):
        ShrinkConfig(consecutive_hits=3)


def test_bar_fixture_recovers_true_bar():
    true = np.zeros((15, 15), np.uint8); true[:, 6:9] = 1
    lq = np.zeros((15, 15), np.uint8); lq[:, 4:11] = 1
    M = np.where(true == 1, 0.9, 0.1)
    out = shrink_component(lq, M)
    assert (out & true).sum() == true.sum()
    assert np.all(out <= dilate(true, 1))
    assert component_count(out) == 1


def test_component_valued_map_keeps_component():
    lq = np.zeros((9, 24), np.uint8); lq[2:7, 2:22] = 1
    out = shrink_component(lq, lq.astype(float))
    assert np.all(out <= lq)
    assert not ((lq == 1) & (out == 0) & ~contour_band(lq)).any()


def test_zero_map_keeps_component():
    # no pixel can rise above 0 + delta, so every contour point stays put
    lq = np.zeros((9, 24), np.uint8); lq[2:7, 2:22] = 1
    out = shrink_component(lq, np.zeros(lq.shape))
    assert np.array_equal(out, lq)


def test_tiny_component_unchanged():
    m = np.zeros((5, 5), np.uint8); m[2, 2] = 1
    assert np.array_equal(shrink_component(m, np.ones((5, 5))), m)


def test_refine_empty_and_mismatch():
    assert not refine_annotation(np.zeros((6, 6), np.uint8), np.zeros((6, 6))).any()
    with pytest.raises(ValueError):
        refine_annotation(np.zeros((6, 6), np.uint8), np.zeros((6, 7)))


def test_refine_two_bars_independent():
    L = np.zeros((20, 20), np.uint8); L[2:18, 2:7] = 1; L[2:18, 12:17] = 1
    M = np.full(L.shape, 0.1); M[:, 4] = 0.9; M[:, 14] = 0.9
    out = refine_annotation(L, M)
    assert component_count(out) == 2
    for sl in (np.s_[:, :10], np.s_[:, 10:]):
        solo = np.zeros_like(L); solo[sl] = L[sl]
        assert np.array_equal(refine_annotation(solo, M)[sl], out[sl])


def test_refine_invariants_on_toy_instances():
    rng = np.random.default_rng(0)
    for i in range(12):
        img, precise = gen_toy_sample(ToyConfig(image_size=64), i)
        L = synthesize_weak(precise, SynthConfig(n_dil=int(rng.integers(1, 5)), seed=i)).weak_mask
        M = np.clip(0.7 * precise + 0.3 * rng.random(L.shape), 0, 1)
        out = refine_annotation(L, M)
        assert np.all(out <= L)
        assert component_count(out) == component_count(L)
        lab, n = ndimage.label(L, EIGHT)
        for k in range(1, n + 1):
            piece = out & (lab == k)
            assert piece.any() and component_count(piece) == 1
        full = refine_annotation(L, L.astype(float))
        assert not ((L == 1) & (full == 0) & ~contour_band(L)).any()


def test_refine_deterministic():
    img, precise = gen_toy_sample(ToyConfig(image_size=64), 3)
    L = dilate(precise, 3)
    M = np.clip(precise + 0.1, 0, 1)
    assert refine_annotation(L, M).tobytes() == refine_annotation(L, M).tobytes()
