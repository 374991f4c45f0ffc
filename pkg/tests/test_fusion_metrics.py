import numpy as np
import pytest

from weakseg.fusion import DarknessConfig, binarize, darkness_map, fuse
from weakseg.metrics import default_grid, ods, ods_exact, pr_at_threshold, sens_spec


def f1_oracle(prob, gt, t):
    tp = fp = fn = 0
    for p, g in zip(prob.ravel(), gt.ravel()):
        if p > t and g:
            tp += 1
        elif p > t:
            fp += 1
        elif g:
            fn += 1
    P = tp / (tp + fp) if tp + fp else 1.0
    R = tp / (tp + fn) if tp + fn else 1.0
    return 2 * P * R / (P + R) if P + R else 0.0


def exhaustive_ods(probs, gts):
    # every distinct binarization is reached by some t in {0} ∪ data values
    cands = sorted({0.0} | {float(v) for p in probs for v in p.ravel() if v < 1})
    return max(np.mean([f1_oracle(p, g, t) for p, g in zip(probs, gts)]) for t in cands)


def two_image_fixture():
    """Image A peaks (F1 0.9) on t in [0.2, 0.4); image B on [0.6, 0.8)."""
    out = []
    for a, b in [(0.2, 0.4), (0.6, 0.8)]:
        vals = [1.0] * 11 + [b] * 16 + [0.0] * 6 + [a] * 48
        gt = [1] * 33 + [0] * 48
        out.append((np.array(vals).reshape(9, 9), np.array(gt, np.uint8).reshape(9, 9)))
    return [o[0] for o in out], [o[1] for o in out]


def test_darkness_minmax():
    cfg = DarknessConfig(normalization="minmax")
    assert np.array_equal(darkness_map(np.array([[0.0, 1.0]]), cfg), [[1.0, 0.0]])
    d = darkness_map(np.array([[0.2, 0.5, 0.8]]), cfg)
    assert np.allclose(d, [[1.0, 0.5, 0.0]])
    img = np.random.default_rng(0).random((5, 5))
    assert darkness_map(img, cfg)[np.unravel_index(img.argmin(), img.shape)] == 1.0


@pytest.mark.parametrize("mode", ["minmax", "percentile-clip", "global"])
def test_darkness_in_unit_range(mode):
    d = darkness_map(np.random.default_rng(1).random((9, 9)), DarknessConfig(normalization=mode))
    assert d.min() >= 0 and d.max() <= 1


def test_fuse_and_binarize():
    m = np.random.default_rng(2).random((4, 4))
    assert np.array_equal(fuse(m, np.ones_like(m)), m)
    assert not fuse(np.zeros_like(m), m).any()
    assert fuse(np.array([[0.8]]), np.array([[0.5]]))[0, 0] == pytest.approx(0.4)
    assert not binarize(m, 1.0).any()
    assert np.array_equal(binarize(m, 0.0), (m > 0).astype(np.uint8))
    assert np.array_equal(binarize(np.array([[0.3, 0.7]]), 0.5), [[0, 1]])


def test_pr_cases():
    gt = np.array([[1, 0], [0, 1]], np.uint8)
    pt = pr_at_threshold(gt.astype(float), gt, 0.5)
    assert (pt.precision, pt.recall, pt.f1) == (1, 1, 1)
    assert pr_at_threshold(np.zeros((2, 2)), np.zeros((2, 2), np.uint8), 0.5).f1 == 1.0
    gt = np.array([1, 1, 1, 1, 0, 0, 0, 0], np.uint8).reshape(2, 4)
    pred = np.array([1, 1, 0, 0, 1, 1, 0, 0], float).reshape(2, 4)
    pt = pr_at_threshold(pred, gt, 0.5)
    assert (pt.precision, pt.recall, pt.f1) == (0.5, 0.5, 0.5)


def test_sens_spec_cases():
    gt = np.array([[1, 0], [0, 1]], np.uint8)
    assert sens_spec(gt.astype(float), gt)[:2] == (1.0, 1.0)
    assert sens_spec(np.zeros((2, 2)), gt)[:2] == (0.0, 1.0)
    assert sens_spec(np.array([[1.0, 1.0], [0.0, 0.0]]), gt)[:2] == (0.5, 0.5)


def test_ods_perfect():
    gts = [(np.random.default_rng(i).random((5, 5)) > 0.5).astype(np.uint8) for i in range(3)]
    rep = ods([g.astype(float) for g in gts], gts)
    assert rep.ods == 1.0 and 0 < rep.best_t < 1


def test_ods_single_image_fixture():
    rep = ods([np.array([[0.9, 0.6], [0.2, 0.1]])], [np.array([[1, 0], [0, 0]], np.uint8)],
              default_grid(0.01))
    assert rep.ods == 1.0 and 0.60 <= rep.best_t <= 0.89


def test_ods_two_image_compromise():
    probs, gts = two_image_fixture()
    for p, g, lo in zip(probs, gts, (0.2, 0.6)):
        assert f1_oracle(p, g, lo + 0.05) == pytest.approx(0.9)
        assert f1_oracle(p, g, 0.1) == pytest.approx(0.5) or lo == 0.2
    rep = ods(probs, gts)
    assert rep.ods == pytest.approx(0.7, abs=1e-12)
    assert rep.ods == pytest.approx(exhaustive_ods(probs, gts), abs=1e-12)


def test_grid_matches_exact_on_grid_aligned_values():
    rng = np.random.default_rng(3)
    for _ in range(100):
        probs = [0.005 + 0.01 * rng.integers(1, 99, (4, 4)) for _ in range(2)]
        gts = [(rng.random((4, 4)) > 0.6).astype(np.uint8) for _ in range(2)]
        g, e = ods(probs, gts).ods, ods_exact(probs, gts).ods
        assert abs(g - e) < 1e-12
        assert abs(e - exhaustive_ods(probs, gts)) < 1e-12


def test_report_shape():
    probs, gts = two_image_fixture()
    rep = ods(probs, gts)
    d = rep.to_dict()
    assert d["N"] == 2 and len(d["per_image_f1_at_best_t"]) == 2
    assert len(d["mean_f1_curve"]) == len(d["threshold_grid"]) == 99


def test_ods_validation():
    with pytest.raises(ValueError):
        ods([], [])


def test_fusion_upper_bound_and_monotonicity():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a, img = rng.random((6, 6)), rng.random((6, 6))
        d = darkness_map(img)
        f = fuse(a, d)
        assert np.all(f <= np.minimum(a, d) + 1e-15)
        t = rng.random()
        assert np.all(binarize(f, t) <= binarize(a, t))
        order = np.argsort(img.ravel())
        assert np.all(np.diff(d.ravel()[order]) <= 1e-15)
        t1, t2 = np.sort(rng.random(2))
        assert np.all(binarize(a, t2) <= binarize(a, t1))


def test_ods_properties():
    rng = np.random.default_rng(5)
    for _ in range(50):
        probs = [rng.random((5, 5)) for _ in range(3)]
        gts = [(rng.random((5, 5)) > 0.6).astype(np.uint8) for _ in range(3)]
        rep = ods(probs, gts)
        assert rep.ods >= max(rep.mean_f1_curve) - 1e-15
        assert ods(probs, gts, default_grid(0.005)).ods >= ods(probs, gts, default_grid(0.01)).ods
        rs = [pr_at_threshold(probs[0], gts[0], t).recall for t in default_grid(0.05)]
        assert all(b <= a for a, b in zip(rs, rs[1:]))
