import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from goldisim.compositor import BoundingBox
from goldisim.errors import MetricUndefinedError
from goldisim.metrics import (CPM_FPI, FP, IGNORED, TP, FrocCurve, Prediction, classify, cpm, dice, fauc, froc,
                              froc_svg, interpolate_tpr, read_froc_csv, summary, tpr_at_fpi, write_froc_csv)

import oracles


def B(x, y, w, h, ev=True):
    return BoundingBox(x, y, w, h, ev)


def P(x, y, w, h, c):
    return Prediction(BoundingBox(x, y, w, h), c)


def to_pkg(preds, gts):
    return ([[P(*b, c) for b, c in ps] for ps in preds], [[B(*b, ev) for b, ev in gs] for gs in gts])


def test_dice_examples():
    assert dice(B(0, 0, 10, 10), B(5, 0, 10, 10)) == 0.5
    assert dice(B(0, 0, 10, 10), B(0, 0, 10, 10)) == 1.0
    assert dice(B(0, 0, 2, 2), B(5, 5, 2, 2)) == 0.0


@given(*[st.integers(0, 30)] * 2, *[st.integers(1, 10)] * 2, *[st.integers(0, 30)] * 2, *[st.integers(1, 10)] * 2)
def test_dice_symmetric_and_bounded(ax, ay, aw, ah, bx, by, bw, bh):
    a, b = B(ax, ay, aw, ah), B(bx, by, bw, bh)
    d = dice(a, b)
    assert d == dice(b, a) and 0.0 <= d <= 1.0
    assert d == oracles.box_dice((ax, ay, aw, ah), (bx, by, bw, bh))


def test_classify_rules():
    gts = [B(0, 0, 10, 10), B(0, 0, 10, 10, ev=False)]
    preds = [P(0, 0, 10, 10, 0.9), P(1, 1, 10, 10, 0.8), P(50, 50, 5, 5, 0.7)]
    assert classify(preds, gts) == [TP, IGNORED, FP]
    # only a non-evaluable match: ignored, not a false positive
    assert classify([P(0, 0, 10, 10, 0.5)], [B(0, 0, 10, 10, ev=False)]) == [IGNORED]


def test_classify_best_dice_wins():
    gts = [B(0, 0, 10, 10), B(2, 0, 10, 10)]
    assert classify([P(2, 0, 10, 10, 1.0), P(0, 0, 10, 10, 0.5)], gts) == [TP, TP]


def test_froc_simple():
    preds = [[P(0, 0, 10, 10, 0.9), P(40, 40, 5, 5, 0.5)], [P(0, 0, 3, 3, 0.7)]]
    gts = [[B(0, 0, 10, 10)], [B(20, 20, 5, 5)]]
    c = froc(preds, gts)
    assert [(x, y) for _, x, y in c.points] == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (1.0, 0.5)]
    assert fauc(c) == 0.5
    assert fauc(c) == oracles.exact_area(c.points)


def test_froc_undefined():
    with pytest.raises(MetricUndefinedError):
        froc([[P(0, 0, 1, 1, 1.0)]], [[B(0, 0, 1, 1, ev=False)]])
    with pytest.raises(MetricUndefinedError):
        froc([], [], 0)


def test_no_predictions_curve():
    c = froc([[]], [[B(0, 0, 5, 5)]])
    assert c.points == [(math.inf, 0.0, 0.0)]
    assert fauc(c) == 0.0 and cpm(c) == 0.0


def test_fauc_example():
    c = FrocCurve.from_xy([0, 0.5, 1], [0, 0.4, 0.8])
    assert fauc(c) == pytest.approx(0.4, abs=1e-15)


def test_fauc_flat_extension_and_clip():
    assert fauc(FrocCurve.from_xy([0, 0.5], [0, 1])) == pytest.approx(0.75)
    assert fauc(FrocCurve.from_xy([0, 2], [0, 1])) == pytest.approx(0.25)


def test_interpolation_and_cpm():
    c = FrocCurve.from_xy([0, 1, 4], [0, 0.5, 0.8])
    assert interpolate_tpr(c, 0.5) == 0.25
    assert interpolate_tpr(c, 2.0) == pytest.approx(0.6)
    assert interpolate_tpr(c, 8.0) == 0.8
    assert tpr_at_fpi(c) == pytest.approx(0.1)
    want = np.mean([oracles.interp(c.points, f) for f in (1 / 8, 1 / 4, 1 / 2, 1, 2, 4, 8)])
    assert cpm(c) == pytest.approx(want, abs=1e-15)
    assert CPM_FPI == (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)


def test_perfect_detector():
    gts = [[B(5, 5, 10, 10)], [B(0, 0, 4, 4), B(20, 20, 6, 6)]]
    preds = [[P(g.x, g.y, g.w, g.h, 1.0) for g in gs] for gs in gts]
    s = summary(froc(preds, gts))
    assert s["fauc"] == 1.0 and s["cpm"] == 1.0 and s["n_gt"] == 3


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_froc_matches_brute_force(seed):
    preds, gts = oracles.random_froc_instance(np.random.default_rng(seed))
    c = froc(*to_pkg(preds, gts))
    want = oracles.froc_points(preds, gts)
    assert c.points == want
    assert abs(fauc(c) - oracles.exact_area(want)) <= 1e-12
    ys = c.tpr
    xs = c.fp_per_image
    assert np.all(np.diff(xs) >= 0) and np.all(np.diff(ys) >= 0)
    assert 0.0 <= fauc(c) <= 1.0


def test_csv_roundtrip(tmp_path):
    preds, gts = oracles.random_froc_instance(np.random.default_rng(4))
    c = froc(*to_pkg(preds, gts))
    write_froc_csv(tmp_path / "f.csv", c)
    assert read_froc_csv(tmp_path / "f.csv").points == c.points


def test_svg_is_wellformed():
    import xml.etree.ElementTree as ET

    root = ET.fromstring(froc_svg(FrocCurve.from_xy([0, 1, 3], [0, 0.5, 0.9])))
    assert root.tag.endswith("svg")
