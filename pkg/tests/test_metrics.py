import numpy as np
import pytest

from lesionattn.metrics import (
    FairnessReport,
    GroupedPredictions,
    UndefinedRateError,
    auprc,
    auroc,
    bootstrap_interval,
    confidence_interval,
    equalized_odds,
    fairness_report,
    group_rates,
    pr_points,
    roc_points,
)
from oracles import auroc_pair_oracle


def preds(scores, labels, groups, **kw):
    return GroupedPredictions(np.array(scores), np.array(labels), np.array(groups), **kw)


def random_preds(rng, n=None):
    n = n or int(rng.integers(4, 13))
    while True:
        labels = rng.integers(0, 2, size=n)
        groups = np.where(rng.integers(0, 2, size=n) == 1, "male", "female")
        ok = all(
            ((labels == y) & (groups == g)).any()
            for y in (0, 1)
            for g in ("male", "female")
        )
        if ok:
            break
    scores = np.round(rng.uniform(0, 1, size=n), 2)  # rounding forces ties
    return preds(scores, labels, groups)


class TestGroupedPredictions:
    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            preds([], [], [])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            preds([0.5, 0.5], [1], ["male", "female"])

    def test_rejects_out_of_range_scores(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            preds([1.5, 0.5], [1, 0], ["male", "female"])

    def test_rejects_nonbinary_labels(self):
        with pytest.raises(ValueError, match="binary"):
            preds([0.5, 0.5], [1, 2], ["male", "female"])

    def test_canonical_order_for_male_female(self):
        p = preds([0.5, 0.5], [1, 0], ["female", "male"])
        assert p.group_order == ("male", "female")

    def test_relabeled_groups_sorted_order(self):
        p = preds([0.5, 0.5], [1, 0], ["b", "a"])
        assert p.group_order == ("a", "b")


class TestGroupRates:
    def test_perfectly_separated(self):
        r = group_rates(
            preds([0.9, 0.2, 0.8, 0.1], [1, 0, 1, 0], ["male", "male", "female", "female"]),
            threshold=0.5,
        )
        assert r.tpr == {"male": 1.0, "female": 1.0}
        assert r.fpr == {"male": 0.0, "female": 0.0}

    @pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
    def test_scores_equal_labels_identity(self, t):
        y = np.array([1, 0, 1, 0, 1, 0])
        g = np.array(["male", "male", "male", "female", "female", "female"])
        r = group_rates(preds(y.astype(float), y, g), threshold=t)
        assert r.tpr == {"male": 1.0, "female": 1.0}
        assert r.fpr == {"male": 0.0, "female": 0.0}

    def test_hand_counted_confusion_cells(self):
        # male: (0.6,y=1)->TP, (0.6,y=0)->FP; female: (0.4,y=1)->FN, (0.6,y=0)->FP
        r = group_rates(
            preds([0.6, 0.6, 0.4, 0.6], [1, 0, 1, 0], ["male", "male", "female", "female"]),
            threshold=0.5,
        )
        assert r.tpr == {"male": 1.0, "female": 0.0}
        assert r.fpr == {"male": 1.0, "female": 1.0}

    def test_undefined_rate_is_flagged_not_zero(self):
        # female group has no negatives -> FPR undefined
        r = group_rates(
            preds([0.9, 0.1, 0.8, 0.7], [1, 0, 1, 1], ["male", "male", "female", "female"])
        )
        assert r.fpr["female"] is None
        assert r.tpr["female"] == 1.0

    def test_missing_group_level_errors_with_name(self):
        with pytest.raises(ValueError, match="female"):
            group_rates(preds([0.9, 0.1], [1, 0], ["male", "male"]))

    def test_bad_threshold(self):
        p = preds([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0], ["male", "male", "female", "female"])
        with pytest.raises(ValueError, match="threshold"):
            group_rates(p, threshold=1.5)


class TestEqualizedOdds:
    def mk(self, tpr_m, tpr_f, fpr_m, fpr_f):
        from lesionattn.metrics import GroupRates

        return GroupRates(
            tpr={"male": tpr_m, "female": tpr_f},
            fpr={"male": fpr_m, "female": fpr_f},
            threshold=0.5,
        )

    def test_equal_rates_zero(self):
        assert equalized_odds(self.mk(1, 1, 0, 0)) == (0.0, 0.0, 0.0)

    def test_tp_gap_dominates(self):
        eo, eo_tp, eo_fp = equalized_odds(self.mk(0.9, 0.7, 0.2, 0.1))
        assert (eo, eo_tp, eo_fp) == pytest.approx((0.2, 0.2, 0.1))

    def test_fp_gap_dominates_with_sign(self):
        eo, eo_tp, eo_fp = equalized_odds(self.mk(0.5, 0.5, 0.1, 0.4))
        assert (eo, eo_tp, eo_fp) == pytest.approx((0.3, 0.0, -0.3))

    def test_undefined_rate_propagates_group_and_rate(self):
        rates = self.mk(0.9, None, 0.2, 0.1)
        with pytest.raises(UndefinedRateError) as err:
            equalized_odds(rates)
        assert err.value.group == "female"
        assert err.value.rate == "TPR"


class TestAuroc:
    def test_perfect_ranking(self):
        assert auroc(scores=[0.9, 0.8, 0.2, 0.1], labels=[1, 1, 0, 0]) == 1.0

    def test_inverted_ranking(self):
        assert auroc(scores=[0.1, 0.2, 0.8, 0.9], labels=[1, 1, 0, 0]) == 0.0

    def test_all_tied(self):
        assert auroc(scores=[0.5, 0.5, 0.5, 0.5], labels=[1, 0, 1, 0]) == 0.5

    def test_two_by_two_pairs(self):
        assert auroc(scores=[0.9, 0.4, 0.6, 0.3], labels=[1, 0, 1, 0]) == 1.0

    def test_single_class_errors(self):
        with pytest.raises(ValueError, match="positive"):
            auroc(scores=[0.9, 0.8], labels=[1, 1])

    def test_matches_pair_oracle_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = random_preds(rng)
            assert auroc(p) == pytest.approx(auroc_pair_oracle(p.scores, p.labels), abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = random_preds(rng)
            transformed = 1 / (1 + np.exp(-(3 * p.scores - 1)))  # strictly increasing
            assert auroc(scores=transformed, labels=p.labels) == pytest.approx(
                auroc(p), abs=1e-12
            )

    def test_label_inversion_sums_to_one(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            p = random_preds(rng)
            assert auroc(p) + auroc(scores=p.scores, labels=1 - p.labels) == pytest.approx(
                1.0, abs=1e-12
            )


class TestAuprc:
    def test_perfect_ranking(self):
        assert auprc(scores=[0.9, 0.8, 0.2, 0.1], labels=[1, 1, 0, 0]) == 1.0

    def test_all_tied_equals_prevalence(self):
        assert auprc(scores=[0.4] * 5, labels=[1, 0, 0, 0, 1]) == pytest.approx(0.4)

    def test_three_point_sweep(self):
        # thresholds 0.9/0.8/0.7 -> (P,R) = (1,1/2),(1/2,1/2),(2/3,1)
        # area = 1/2*1 + 0 + 1/2*2/3 = 5/6
        assert auprc(scores=[0.9, 0.8, 0.7], labels=[1, 0, 1]) == pytest.approx(5 / 6)

    def test_no_positive_errors(self):
        with pytest.raises(ValueError, match="positive"):
            auprc(scores=[0.9, 0.8], labels=[0, 0])

    def test_in_unit_interval(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            p = random_preds(rng)
            v = auprc(p)
            assert 0.0 < v <= 1.0


class TestConfidenceInterval:
    def test_zero_variance(self):
        assert confidence_interval([0.5, 0.5, 0.5]) == (0.5, 0.5)

    def test_two_values_hand_arithmetic(self):
        low, high = confidence_interval([0.0, 1.0])
        # sd = sqrt(0.5), half-width = 1.96 * sqrt(0.5)/sqrt(2) = 0.98
        assert low == pytest.approx(-0.48)
        assert high == pytest.approx(1.48)

    def test_contains_mean(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            vals = rng.uniform(0, 1, size=5)
            low, high = confidence_interval(vals)
            assert low <= vals.mean() <= high

    def test_too_few_values(self):
        with pytest.raises(ValueError, match="at least 2"):
            confidence_interval([0.5])


class TestFairnessReport:
    def separable(self):
        return preds(
            [0.9, 0.8, 0.1, 0.2, 0.95, 0.85, 0.15, 0.05],
            [1, 1, 0, 0, 1, 1, 0, 0],
            ["male"] * 4 + ["female"] * 4,
        )

    def test_perfectly_separable(self):
        rep = fairness_report(self.separable())
        assert rep.eo == 0.0
        assert rep.auroc == 1.0
        assert rep.auprc == 1.0

    def test_eo_is_max_of_abs_gaps(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            p = random_preds(rng, n=int(rng.integers(8, 30)))
            rep = fairness_report(p)
            assert rep.eo == pytest.approx(max(abs(rep.eo_tp), abs(rep.eo_fp)), abs=1e-15)
            assert 0.0 <= rep.eo <= 1.0

    def test_group_relabel_antisymmetry(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            p = random_preds(rng, n=int(rng.integers(8, 30)))
            rep = fairness_report(p)
            flipped = fairness_report(
                GroupedPredictions(
                    p.scores, p.labels, p.groups, group_order=("female", "male")
                )
            )
            assert flipped.eo_tp == pytest.approx(-rep.eo_tp, abs=1e-15)
            assert flipped.eo_fp == pytest.approx(-rep.eo_fp, abs=1e-15)
            assert flipped.eo == pytest.approx(rep.eo, abs=1e-15)

    def test_eo_zero_iff_rates_equal(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            p = random_preds(rng, n=int(rng.integers(8, 24)))
            rep = fairness_report(p)
            r = rep.group_rates
            equal = r.tpr["male"] == r.tpr["female"] and r.fpr["male"] == r.fpr["female"]
            assert (rep.eo == 0.0) == equal

    def test_misranked_male_group_shows_signed_gap(self):
        # male positives score below male negatives; female perfectly ranked
        p = preds(
            [0.3, 0.4, 0.7, 0.6, 0.9, 0.8, 0.1, 0.2],
            [1, 1, 0, 0, 1, 1, 0, 0],
            ["male"] * 4 + ["female"] * 4,
        )
        r = group_rates(p, 0.5)
        assert r.tpr == {"male": 0.0, "female": 1.0}
        assert r.fpr == {"male": 1.0, "female": 0.0}
        rep = fairness_report(p)
        assert rep.eo_tp == -1.0
        assert rep.eo > 0

    def test_single_group_errors(self):
        p = preds([0.9, 0.2, 0.8, 0.1], [1, 0, 1, 0], ["male"] * 4)
        with pytest.raises(ValueError, match="female"):
            fairness_report(p)

    def test_json_round_trip_with_fixed_field_names(self):
        rep = fairness_report(self.separable())
        d = rep.to_dict()
        assert set(d) == {
            "eo", "eo_tp", "eo_fp", "auroc", "auprc", "ci", "n_per_group", "threshold",
        }
        assert d["n_per_group"] == {"male": 4, "female": 4}
        back = FairnessReport.from_dict(d)
        assert back.to_dict() == d

    def test_ci_contains_point_estimates(self):
        rng = np.random.default_rng(41)
        p = random_preds(rng, n=40)
        rep = fairness_report(p, ci="bootstrap", n_boot=200, seed=3)
        for m in ("eo", "eo_tp", "eo_fp", "auroc", "auprc"):
            low, high = rep.ci[m]
            assert low <= getattr(rep, m) <= high

    def test_unknown_ci_mode(self):
        with pytest.raises(ValueError, match="ci mode"):
            fairness_report(self.separable(), ci="jackknife")


class TestCurvePoints:
    def test_perfect_roc_passes_through_corner(self):
        fpr, tpr = roc_points([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert any(f == 0.0 and t == 1.0 for f, t in zip(fpr, tpr))

    def test_point_count_is_distinct_thresholds_plus_endpoint(self):
        scores = [0.9, 0.8, 0.8, 0.3]
        fpr, tpr = roc_points(scores, [1, 0, 1, 0])
        assert len(fpr) == 3 + 1  # 3 distinct scores + (0,0)
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0

    def test_pr_starts_at_full_precision(self):
        recall, precision = pr_points([0.9, 0.1], [1, 0])
        assert recall[0] == 0.0 and precision[0] == 1.0
        assert recall[-1] == 1.0

    def test_single_class_errors(self):
        with pytest.raises(ValueError):
            roc_points([0.9, 0.8], [1, 1])
        with pytest.raises(ValueError):
            pr_points([0.9, 0.8], [0, 0])


def test_bootstrap_interval_is_deterministic_per_seed():
    rng = np.random.default_rng(43)
    p = random_preds(rng, n=30)
    a = bootstrap_interval(p, "auroc", n_boot=100, seed=5)
    b = bootstrap_interval(p, "auroc", n_boot=100, seed=5)
    assert a == b
