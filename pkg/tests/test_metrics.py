import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import msd_bruteforce
from tonguetrack.contour import Contour
from tonguetrack.metrics import (EvalReport, agreement_matrix, evaluate_contours, msd, summarize,
                                 write_report)

coords = st.floats(-200, 200, allow_nan=False)
point_lists = st.lists(st.tuples(coords, coords), min_size=1, max_size=25)


class TestMsd:
    def test_identical(self):
        c = np.random.default_rng(0).uniform(0, 100, (30, 2))
        assert msd(c, c) == 0.0

    def test_single_pair(self):
        assert msd([[0, 0]], [[3, 4]]) == 5.0

    def test_vertical_offset(self):
        x = np.arange(5.0)
        assert msd(np.column_stack([x, np.zeros(5)]), np.column_stack([x, np.full(5, 2.0)])) == 2.0

    def test_bruteforce_exact(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            u = np.cumsum(rng.normal(size=(100, 2)), axis=0)
            v = np.cumsum(rng.normal(size=(100, 2)), axis=0)
            assert msd(u, v) == msd_bruteforce(u, v)

    def test_unequal_lengths(self):
        u, v = [[0, 0], [10, 0]], [[0, 1]]
        assert msd(u, v) == pytest.approx((1 + 1 + math.hypot(10, 1)) / 3)

    @settings(max_examples=60, deadline=None)
    @given(point_lists, point_lists)
    def test_symmetric_nonnegative(self, u, v):
        d = msd(u, v)
        assert d >= 0 and d == msd(v, u)
        assert d == msd_bruteforce(u, v)

    @settings(max_examples=60, deadline=None)
    @given(point_lists, point_lists, coords, coords)
    def test_translation_invariant(self, u, v, tx, ty):
        t = np.array([tx, ty])
        moved = msd(np.array(u) + t, np.array(v) + t)
        assert moved == pytest.approx(msd(u, v), rel=1e-9, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(point_lists, point_lists, st.integers(-4, 4))
    def test_power_of_two_scaling_exact(self, u, v, e):
        k = 2.0 ** e
        assert msd(np.array(u) * k, np.array(v) * k) == k * msd(u, v)

    @settings(max_examples=40, deadline=None)
    @given(point_lists, point_lists, st.floats(0.1, 10))
    def test_scaling(self, u, v, k):
        assert msd(np.array(u) * k, np.array(v) * k) == pytest.approx(k * msd(u, v), rel=1e-9, abs=1e-9)

    def test_accepts_contours(self):
        assert msd(Contour([[0, 0]]), Contour([[0, 2]])) == 2.0


def streaming_exact(values):
    """One-pass exact accumulation in rationals."""
    n, s, s2 = 0, Fraction(0), Fraction(0)
    for v in values:
        f = Fraction(v)
        n, s, s2 = n + 1, s + f, s2 + f * f
    mean = s / n
    return float(mean), math.sqrt(float(s2 / n - mean * mean))


class TestSummarize:
    def test_constant(self):
        s = summarize([5, 5, 5])
        assert (s.mean, s.std) == (5, 0)

    def test_two_point(self):
        s = summarize([0, 10])
        assert (s.mean, s.std, s.median, s.max) == (5, 5, 5, 10)

    def test_matches_streaming(self):
        x = np.random.default_rng(99).gamma(2.0, 1.5, size=1000)
        s = summarize(x)
        mean, std = streaming_exact(x)
        assert s.mean == mean and s.std == std
        r = summarize(x[::-1])
        assert (r.mean, r.std) == (s.mean, s.std)

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize([])


def horizontal(y, n=100, fid=None):
    return Contour(np.column_stack([np.linspace(0, 99, n), np.full(n, float(y))]), fid)


class TestAgreement:
    def test_shifted_annotator(self):
        a = [horizontal(40 + i, fid=f"f{i}") for i in range(5)]
        b = [horizontal(43 + i, fid=f"f{i}") for i in range(5)]
        m = agreement_matrix({"A": a, "B": b})
        assert m["mean"][0, 1] == 3.0 and m["std"][0, 1] == 0.0
        assert m["mean"][1, 0] == 3.0

    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(4)
        ann = {k: [Contour(rng.uniform(0, 50, (20, 2)), f"f{i}") for i in range(4)] for k in "ABC"}
        m = agreement_matrix(ann)
        np.testing.assert_array_equal(m["mean"], m["mean"].T)
        np.testing.assert_array_equal(np.diag(m["mean"]), 0)
        np.testing.assert_array_equal(np.diag(m["std"]), 0)

    def test_frame_mismatch(self):
        with pytest.raises(ValueError):
            agreement_matrix({"A": [horizontal(1, fid="x")], "B": [horizontal(1, fid="y")]})


class TestEvaluate:
    def test_failures_excluded(self):
        gold = {"a": horizontal(10), "b": horizontal(20), "c": horizontal(30)}
        pred = {"a": horizontal(12), "b": None}
        rep = evaluate_contours(pred, gold, px_per_mm=4)
        assert rep.n_failed == 2 and rep.failed == ["b", "c"]
        assert rep.aggregate.mean == 2.0 and rep.per_frame[0][2] == 0.5

    def test_empty_report(self):
        rep = EvalReport([], ["a"])
        assert rep.aggregate is None and rep.to_dict()["n_failed"] == 1

    def test_write_report(self, tmp_path):
        gold = {"a": horizontal(10), "b": horizontal(20)}
        pred = {"a": horizontal(11), "b": horizontal(23)}
        out = write_report(evaluate_contours(pred, gold), tmp_path / "r", plot=True)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["msd_px"]["mean"] == 2.0 and summary["msd_mm"]["mean"] == 0.5
        assert (out / "per_frame.csv").read_text().count("\n") == 3
        assert (out / "msd_boxplot.png").exists()
