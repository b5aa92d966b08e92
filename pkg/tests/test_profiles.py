import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthtrials.benchmarks import exponential_dataset
from growthtrials.inference import Dataset, Objective, fit
from growthtrials.profiles import (DELTA_CANTELLI, DELTA_CHI1SQ, IDENTIFIABLE, PRACTICAL,
                                   STRUCTURAL, ConfidenceRegion, ProfileCurve, ScanPolicy,
                                   classify_identifiability, confidence_region, curves_to_csv,
                                   parse_region, profile, profile_parameters, threshold)


def curve_from(q, pl, log_scale=False, mle=None):
    q, pl = np.asarray(q, float), np.asarray(pl, float)
    i = int(np.argmax(pl))
    return ProfileCurve("p", q, pl, q[i] if mle is None else mle, float(pl.max()), log_scale)


@pytest.fixture(scope="module")
def design_fit():
    d = exponential_dataset(0.1, 0.2, 10, 10, 0.2, np.random.default_rng([0, 0]))
    obj = Objective("exp", d, l2_weight=1e-3)
    return obj, fit(obj, seed=0)


class TestThresholds:
    def test_constants(self):
        assert threshold("chi1sq", 0.05) == DELTA_CHI1SQ == 3.84
        assert threshold("cantelli", 0.05) == DELTA_CANTELLI == 7.16

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            threshold("gauss")


class TestRegionFromCurve:
    def test_quadratic_interval(self):
        q = np.linspace(-5, 5, 2001)
        c = curve_from(q, -0.5 * q ** 2)
        r = confidence_region(c, DELTA_CHI1SQ)
        assert r.pieces[0] == pytest.approx((-math.sqrt(3.84), math.sqrt(3.84)), abs=1e-5)
        assert r.threshold_kind == "chi1sq" and r.bounded

    def test_disjoint_union(self):
        # two wells: deviance below the threshold around -3 and +2 only
        q = np.linspace(-6, 6, 1201)
        dev = np.minimum((q + 3) ** 2, 0.5 + (q - 2) ** 2)
        c = curve_from(q, -0.5 * dev, mle=-3.0)
        r = confidence_region(c, 3.84)
        assert len(r.pieces) == 2
        assert r.contains(-3) and r.contains(2) and not r.contains(-0.5)

    def test_open_end_extends_to_infinity(self):
        q = np.linspace(-4, 10, 141)
        c = curve_from(q, np.where(q < 0, -0.5 * q ** 2, -0.05 * q))  # never crosses on the right
        r = confidence_region(c, 3.84)
        assert math.isinf(r.upper) and r.lower == pytest.approx(-math.sqrt(3.84), abs=1e-2)

    def test_log_scale_lower_end_is_zero(self):
        q = np.exp(np.linspace(-3, 1, 41))
        c = curve_from(q, -0.5 * (np.log(q) - 1) ** 2 * 0.01, log_scale=True)
        r = confidence_region(c, 3.84)
        assert r.lower == 0.0 and r.domain == "positive" and not r.bounded

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 20), min_size=3, max_size=30))
    def test_nesting(self, devs):
        devs = np.array(devs)
        devs[len(devs) // 2] = 0.0
        q = np.arange(devs.size, dtype=float)
        c = curve_from(q, -0.5 * devs)
        small = confidence_region(c, DELTA_CHI1SQ)
        large = confidence_region(c, DELTA_CANTELLI)
        assert small.issubset(large)


class TestRegionObject:
    def test_union_notation(self):
        r = parse_region("(−∞, −0.286] ∪ [−0.007, ∞)")
        assert r.pieces == ((-math.inf, -0.286), (-0.007, math.inf))
        assert r.contains(0.0) and not r.contains(-0.1)

    def test_starred_interval(self):
        r = parse_region("[0.004, 0.054]*")
        assert r.excludes_zero and r.positive and r.bounded

    def test_negative_interval(self):
        r = parse_region("[-0.009, -0.005]")
        assert r.negative and not r.positive

    def test_csv_round_trip(self):
        r = parse_region("(-inf, -0.286] U [-0.007, inf)")
        back = ConfidenceRegion.from_csv(r.to_csv("theta1"))["theta1"]
        assert back == r
        assert str(back) == "(-inf, -0.286] U [-0.007, inf)"

    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            ConfidenceRegion(((0.0, 2.0), (1.0, 3.0)))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=8, unique=True))
    def test_round_trip_property(self, ends):
        ends = sorted(ends)
        pieces = tuple((ends[i], ends[i + 1]) for i in range(0, len(ends) - 1, 2))
        r = ConfidenceRegion(pieces, "chi1sq", 3.84)
        assert ConfidenceRegion.from_csv(r.to_csv("x"))["x"] == r
        assert parse_region(str(r), "chi1sq", 3.84).pieces == r.pieces


class TestClassification:
    def test_structural(self):
        c = curve_from(np.linspace(-5, 5, 11), np.full(11, -3.0) + 1e-5 * np.arange(11) % 2)
        v = classify_identifiability(c, confidence_region(c))
        assert v.kind == STRUCTURAL

    def test_practical(self):
        r = parse_region("(-inf, inf)")
        c = curve_from(np.linspace(-5, 5, 11), -0.01 * np.linspace(-5, 5, 11) ** 2)
        assert classify_identifiability(c, r).kind == PRACTICAL

    def test_identifiable(self):
        q = np.linspace(-5, 5, 101)
        c = curve_from(q, -0.5 * q ** 2)
        assert classify_identifiability(c, confidence_region(c)).kind == IDENTIFIABLE


class TestProfileScan:
    def test_centre_matches_fit(self, design_fit):
        obj, res = design_fit
        c = profile("theta1", res, obj)
        i = int(np.argmin(np.abs(c.grid - c.mle_value)))
        assert c.profile_loglik[i] == pytest.approx(c.mle_loglik, abs=1e-8)
        assert c.mle_loglik == pytest.approx(obj.with_penalty(0).loglik(res.z), abs=1e-4)

    def test_reparametrised_identifiable(self, design_fit):
        obj, res = design_fit
        results = profile_parameters(res, obj, delta=DELTA_CHI1SQ)
        assert {k: v.verdict.kind for k, v in results.items()} == dict.fromkeys(
            ("theta1", "theta2", "theta3"), IDENTIFIABLE)
        for r in results.values():
            assert r.region.issubset(confidence_region(r.curve, DELTA_CANTELLI))

    def test_raw_model_flat(self):
        d = exponential_dataset(0.1, 0.2, 10, 10, 0.2, np.random.default_rng([0, 0]))
        obj = Objective("exp_raw", d, l2_weight=1e-3)
        res = fit(obj, seed=0)
        results = profile_parameters(res, obj, ["beta1", "x2_0", "sigma"])
        assert results["beta1"].curve.flatness < 1e-3
        assert results["x2_0"].verdict.kind == STRUCTURAL
        assert results["sigma"].verdict.kind == IDENTIFIABLE

    def test_unknown_parameter(self, design_fit):
        obj, res = design_fit
        with pytest.raises(ValueError):
            profile("beta1", res, obj)

    def test_curves_csv(self, design_fit):
        obj, res = design_fit
        c = profile("theta2", res, obj)
        lines = curves_to_csv([c]).splitlines()
        assert lines[0] == "parameter,q,profile_loglik"
        assert len(lines) == c.grid.size + 1
