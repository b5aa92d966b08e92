import math

import numpy as np
import pytest
from scipy import stats

from growthtrials.bootstrap import BootstrapPlan
from growthtrials.evaluation import (EFFECT, ENHANCING, INHIBITING, METHODS, NO_EFFECT,
                                     NOT_APPLICABLE, EvaluationConfig, LabelError,
                                     chi1sq_from_cantelli, decide_pvalue, decide_region,
                                     evaluate_dataset, evaluate_pdx, load_pdx_fixtures,
                                     paired_t_test, pdx_summary, score_study, split_by_sgrna)
from growthtrials.inference import Dataset
from growthtrials.profiles import parse_region
from growthtrials.simulation import StudyArchive


def paired_data(y0, y1, day=40.0):
    n = len(y0)
    mice = [f"m{i}" for i in range(n)]
    return Dataset([0.0] * n + [day] * n, list(y0) + list(y1), mice + mice)


class TestPairedT:
    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        y0 = rng.uniform(0.3, 0.6, 6)
        y1 = y0 * rng.uniform(0.5, 1.1, 6)
        o = paired_t_test(paired_data(y0, y1), 40.0)
        assert o.evidence == pytest.approx(stats.ttest_rel(y0, y1).pvalue, rel=1e-8)

    def test_textbook_formula(self):
        y0 = np.array([0.50, 0.48, 0.52, 0.47])
        y1 = np.array([0.30, 0.41, 0.35, 0.33])
        d = y0 - y1
        t = d.mean() / (d.std(ddof=1) / 2.0)
        p = 2 * stats.t.sf(abs(t), 3)
        o = paired_t_test(paired_data(y0, y1), 40.0)
        assert o.evidence == pytest.approx(p, rel=1e-8)
        assert o.decision == EFFECT and o.direction == INHIBITING

    def test_zero_variance_not_applicable(self):
        o = paired_t_test(paired_data([0.5, 0.6], [0.4, 0.5]), 40.0)
        assert o.decision == NOT_APPLICABLE

    def test_antisymmetric_differences(self):
        o = paired_t_test(paired_data([0.5, 0.5], [0.4, 0.6]), 40.0)
        assert o.evidence == pytest.approx(1.0) and o.decision == NO_EFFECT

    def test_single_pair(self):
        assert paired_t_test(paired_data([0.5], [0.4]), 40.0).decision == NOT_APPLICABLE


class TestDecisionRules:
    @pytest.mark.parametrize("text,decision,direction", [
        ("[0.004, 0.054]", EFFECT, INHIBITING),
        ("[-0.009, -0.005]", EFFECT, ENHANCING),
        ("[-0.004, 0.005]", NO_EFFECT, "none"),
        ("(-inf, -0.286] U [-0.007, inf)", NO_EFFECT, "none"),
        ("(-inf, -0.3] U [0.1, inf)", EFFECT, "none"),
    ])
    def test_region(self, text, decision, direction):
        o = decide_region(parse_region(text), "exp_cantelli")
        assert (o.decision, o.direction) == (decision, direction)

    def test_pvalue_boundary(self):
        assert decide_pvalue(0.05, "t14").decision == NO_EFFECT
        assert decide_pvalue(0.049, "t14", mean_difference=-0.1).direction == ENHANCING

    def test_codes(self):
        assert decide_region(parse_region("[1, 2]"), "m").code == 1
        assert decide_region(parse_region("[-2, -1]"), "m").code == 2
        assert decide_region(parse_region("[-1, 2]"), "m").code == 0


class TestEvaluateDataset:
    def test_day0_only_all_not_applicable(self):
        d = Dataset(np.zeros(4), [0.5, 0.5, 0.4, 0.6], ["a", "b", "c", "d"])
        outs = evaluate_dataset(d)
        assert [o.method for o in outs] == list(METHODS)
        assert all(o.decision == NOT_APPLICABLE for o in outs)

    def test_strong_effect_detected(self):
        rng = np.random.default_rng(1)
        mice = [f"m{i}" for i in range(8)]
        times = np.r_[np.zeros(8), np.full(4, 14.0), np.full(4, 40.0)]
        eta = 1 / (1 + np.exp(0.1 * times))
        d = Dataset(times, eta * np.exp(rng.normal(-0.0005, 0.03, 16)), mice + mice)
        cfg = EvaluationConfig()
        cfg.bootstrap = BootstrapPlan(n_resamples=99, n_starts=5)
        outs = {o.method: o for o in evaluate_dataset(d, config=cfg, seed=3)}
        for m in METHODS:
            assert outs[m].decision == EFFECT, (m, outs[m])
            assert outs[m].direction == INHIBITING
        assert outs["exp_chi1sq"].evidence.issubset(parse_region("(0, inf)"))

    def test_small_sample_skips_bootstrap(self):
        d = paired_data([0.5, 0.52, 0.49], [0.3, 0.31, 0.35])
        outs = {o.method: o for o in evaluate_dataset(d, methods=("logistic_boot", "t_end"))}
        assert outs["logistic_boot"].decision == NOT_APPLICABLE
        assert "n=6" in outs["logistic_boot"].note

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            evaluate_dataset(paired_data([0.5, 0.4], [0.3, 0.2]), methods=("anova",))


class TestPDX:
    def test_fixture_size(self):
        exps = load_pdx_fixtures()
        assert len(exps) == 44 and len({x.key for x in exps}) == 44

    def test_known_directions(self):
        dec = evaluate_pdx()
        assert dec["ALL-1034 1"]["exp_cantelli"].direction == INHIBITING
        assert dec["AML-388 6"]["exp_cantelli"].direction == ENHANCING

    def test_considered_counts(self):
        rows = {r["method"]: r for r in pdx_summary(evaluate_pdx())}
        assert [rows[m]["considered"] for m in METHODS] == [38, 44, 44, 44, 38]

    def test_chi1sq_shrinks_finite_ends(self):
        r = chi1sq_from_cantelli(parse_region("[0.004, 0.054]"), 0.027)
        f = math.sqrt(3.84 / 7.16)
        assert r.pieces[0] == pytest.approx((0.027 - f * 0.023, 0.027 + f * 0.027))
        assert r.issubset(parse_region("[0.004, 0.054]"))

    def test_chi1sq_keeps_infinite_end(self):
        r = chi1sq_from_cantelli(parse_region("[0.023, inf)"), 0.072)
        assert math.isinf(r.upper) and r.lower > 0.023

    def test_estimate_outside(self):
        with pytest.raises(ValueError):
            chi1sq_from_cantelli(parse_region("[1, 2]"), 0.0)


class TestSgrnaSplit:
    def test_split_and_single_mouse_flag(self):
        d = Dataset([0, 0, 0, 14, 14, 14], [0.5, 0.5, 0.5, 0.3, 0.3, 0.4],
                    ["a", "b", "c", "a", "b", "c"], ["g1", "g1", "g2", "g1", "g1", "g2"],
                    name="x")
        parts = split_by_sgrna(d)
        assert [p.name for p in parts] == ["x:g1", "x:g2"]
        assert "single-mouse" in parts[1].flags and "single-mouse" not in parts[0].flags

    def test_single_label_unchanged(self):
        d = Dataset([0, 14], [0.5, 0.3], sgrna_ids=["g", "g"])
        assert split_by_sgrna(d) == [d]

    def test_missing_labels(self):
        with pytest.raises(LabelError):
            split_by_sgrna(Dataset([0, 14], [0.5, 0.3]))


def test_empty_archive_scoreboard():
    board = score_study(StudyArchive([]))
    assert board.aggregate == [] and board.matrix == []
    assert board.aggregate_csv().strip() == "scenario,n,method,detected,enhancing,total"
