import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gazemap.metrics import (NormalizationError, all_metrics, cc, fixations_from_map, kld, nss,
                             read_fixations_csv, sim)

from oracles import naive_cc, naive_kld, naive_nss, naive_sim


def random_pair(rng):
    h, w = rng.integers(8, 65, size=2)
    pred = rng.random((h, w)) ** 3
    gt = rng.random((h, w)) ** 3
    fix = [(int(rng.integers(h)), int(rng.integers(w))) for _ in range(int(rng.integers(1, 10)))]
    return pred, gt, fix


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_naive_reference(seed):
    pred, gt, fix = random_pair(np.random.default_rng(seed))
    assert abs(kld(pred, gt) - naive_kld(pred, gt)) <= 1e-9
    assert abs(cc(pred, gt) - naive_cc(pred, gt)) <= 1e-9
    assert abs(nss(pred, fix) - naive_nss(pred, fix)) <= 1e-9
    assert abs(sim(pred, gt) - naive_sim(pred, gt)) <= 1e-9


maps = arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(2, 12)),
              elements=st.floats(0.0, 1.0, allow_subnormal=False))


@given(maps)
def test_self_comparison_identities(p):
    if p.sum() == 0:
        return
    assert kld(p, p) <= 1e-6
    assert sim(p, p) == pytest.approx(1.0, abs=1e-9)
    if p.std() > 1e-6:
        assert cc(p, p) == pytest.approx(1.0, abs=1e-9)


@given(maps, maps)
def test_metric_ranges(a, b):
    if a.shape != b.shape or a.sum() == 0 or b.sum() == 0:
        return
    assert kld(a, b) >= -1e-9
    assert -1e-12 <= sim(a, b) <= 1.0 + 1e-9
    c = cc(a, b)
    assert math.isnan(c) or -1.0 - 1e-9 <= c <= 1.0 + 1e-9


def test_uniform_prediction_has_zero_nss():
    assert nss(np.full((10, 10), 0.3), [(0, 0), (5, 5)]) == 0.0


def test_constant_map_cc_is_nan():
    assert math.isnan(cc(np.ones((4, 4)), np.random.default_rng(0).random((4, 4))))


def test_one_hot_against_two_cell_uniform():
    gt = np.array([[1.0, 0.0], [0.0, 0.0]])
    pred = np.array([[0.5, 0.5], [0.0, 0.0]])
    assert kld(pred, gt) == pytest.approx(math.log(2), abs=1e-4)


def test_scale_invariance():
    rng = np.random.default_rng(4)
    p, g = rng.random((9, 9)), rng.random((9, 9))
    assert kld(3 * p, 7 * g) == pytest.approx(kld(p, g), rel=1e-12)
    assert sim(3 * p, 7 * g) == pytest.approx(sim(p, g), rel=1e-12)
    assert cc(3 * p + 1, g) == pytest.approx(cc(p, g), rel=1e-12)
    assert nss(5 * p + 2, [(1, 1)]) == pytest.approx(nss(p, [(1, 1)]), rel=1e-12)


def test_invalid_maps():
    with pytest.raises(NormalizationError):
        kld(np.zeros((3, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        sim(-np.ones((3, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        nss(np.ones((3, 3)), [(3, 0)])
    with pytest.raises(ValueError):
        nss(np.ones((3, 3)), [])


def test_fixations_from_map_take_the_peak():
    g = np.zeros((20, 20))
    g[4, 7] = 1.0
    g[5, 7] = 0.5
    # 0.5 % of 400 cells keeps the top two; zero cells never count
    assert fixations_from_map(g) == [(4, 7), (5, 7)]
    assert fixations_from_map(g, 99.9) == [(4, 7)]
    g2 = np.random.default_rng(0).random((40, 50))
    fx = fixations_from_map(g2, 99.5)
    assert len(fx) == math.ceil(40 * 50 * 0.005)
    thr = min(g2[r, c] for r, c in fx)
    assert all(g2[r, c] < thr for r in range(40) for c in range(50) if (r, c) not in set(fx))


def test_fixations_csv(tmp_path):
    (tmp_path / "f.csv").write_text("row,col\n1,2\n3,4\n")
    assert read_fixations_csv(tmp_path / "f.csv") == [(1, 2), (3, 4)]


def test_all_metrics_keys():
    g = np.random.default_rng(1).random((8, 8))
    assert set(all_metrics(g, g)) == {"KLD", "CC", "NSS", "SIM"}
