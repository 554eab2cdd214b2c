import numpy as np
import pytest

from lesionattn.pareto import (
    ModelCandidate,
    ParetoSet,
    dominates,
    pareto_frontier,
    read_candidates_csv,
    select_final,
    write_candidates_csv,
)
from oracles import pareto_frontier_oracle


def cand(p_pred, p_fair, id=None, **hp):
    return ModelCandidate(
        id=id or f"c-{p_pred}-{p_fair}", p_pred=p_pred, p_fair=p_fair,
        hyperparams=tuple(sorted(hp.items())),
    )


def points(cands):
    return sorted((c.p_pred, c.p_fair, c.id) for c in cands)


class TestDominates:
    def test_strict_in_both(self):
        assert dominates(cand(0.9, 0.9), cand(0.8, 0.8))

    def test_equal_points_do_not_dominate(self):
        assert not dominates(cand(0.9, 0.9), cand(0.9, 0.9))

    def test_incomparable(self):
        assert not dominates(cand(0.9, 0.7), cand(0.8, 0.8))
        assert not dominates(cand(0.8, 0.8), cand(0.9, 0.7))

    def test_weak_in_one_strict_in_other(self):
        assert dominates(cand(0.9, 0.8), cand(0.9, 0.7))
        assert dominates(cand(0.9, 0.8), cand(0.8, 0.8))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="p_pred"):
            cand(1.2, 0.5)


class TestParetoFrontier:
    def test_three_candidate_fixture(self):
        a, b, c = cand(0.9, 0.9), cand(0.8, 0.95), cand(0.85, 0.85)
        front = pareto_frontier([a, b, c])
        assert points(front) == points([a, b])

    def test_single_candidate(self):
        a = cand(0.5, 0.5)
        assert points(pareto_frontier([a])) == points([a])

    def test_identical_candidates_all_retained(self):
        cs = [cand(0.7, 0.7, id=f"dup{i}") for i in range(3)]
        assert len(pareto_frontier(cs)) == 3

    def test_empty_errors(self):
        with pytest.raises(ValueError, match="empty"):
            pareto_frontier([])

    def test_sorted_by_descending_p_pred(self):
        front = pareto_frontier([cand(0.8, 0.95), cand(0.9, 0.9), cand(0.85, 0.92)])
        preds = [c.p_pred for c in front]
        assert preds == sorted(preds, reverse=True)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(101)
        for _ in range(500):
            n = int(rng.integers(1, 13))
            # quantized coordinates force plenty of ties
            pts = np.round(rng.uniform(0, 1, size=(n, 2)), 1)
            cs = [cand(p, f, id=f"c{i}") for i, (p, f) in enumerate(pts)]
            got = {c.id for c in pareto_frontier(cs)}
            expected = {cs[i].id for i in pareto_frontier_oracle(pts.tolist())}
            assert got == expected

    def test_permutation_invariance(self):
        rng = np.random.default_rng(103)
        pts = np.round(rng.uniform(0, 1, size=(10, 2)), 2)
        cs = [cand(p, f, id=f"c{i}") for i, (p, f) in enumerate(pts)]
        base = points(pareto_frontier(cs))
        for _ in range(10):
            perm = list(rng.permutation(len(cs)))
            assert points(pareto_frontier([cs[i] for i in perm])) == base

    def test_dominated_addition_never_changes_frontier(self):
        rng = np.random.default_rng(107)
        for _ in range(50):
            pts = rng.uniform(0.2, 1, size=(8, 2))
            cs = [cand(p, f, id=f"c{i}") for i, (p, f) in enumerate(pts)]
            front = pareto_frontier(cs)
            anchor = front.members[0]
            dominated = cand(anchor.p_pred - 0.1, anchor.p_fair - 0.1, id="weak")
            assert points(pareto_frontier(cs + [dominated])) == points(front)

    def test_dominating_addition_evicts_exactly_newly_dominated(self):
        cs = [cand(0.9, 0.6, id="a"), cand(0.6, 0.9, id="b"), cand(0.7, 0.7, id="c")]
        front = pareto_frontier(cs)
        assert {c.id for c in front} == {"a", "b", "c"}
        boss = cand(0.95, 0.75, id="boss")  # dominates a and c, not b
        new_front = pareto_frontier(cs + [boss])
        assert {c.id for c in new_front} == {"boss", "b"}

    def test_monotone_transform_leaves_membership_unchanged(self):
        rng = np.random.default_rng(109)
        for _ in range(50):
            pts = np.round(rng.uniform(0, 1, size=(10, 2)), 1)
            cs = [cand(p, f, id=f"c{i}") for i, (p, f) in enumerate(pts)]
            base = {c.id for c in pareto_frontier(cs)}
            squeeze = lambda v: v**2  # strictly increasing on [0, 1]
            mapped = [
                cand(squeeze(c.p_pred), squeeze(c.p_fair), id=c.id) for c in cs
            ]
            assert {c.id for c in pareto_frontier(mapped)} == base


class TestSelectFinal:
    def test_knee_prefers_larger_sum(self):
        front = pareto_frontier([cand(0.9, 0.9, id="hi"), cand(0.8, 0.95, id="lo")])
        assert select_final(front, "knee").id == "hi"  # 1.8 > 1.75

    def test_singleton_under_every_policy(self):
        front = pareto_frontier([cand(0.6, 0.6, id="only")])
        for policy in ("knee", "max_pred", "max_fair"):
            assert select_final(front, policy).id == "only"

    def test_knee_sum_tie_broken_by_fairness(self):
        front = pareto_frontier([cand(0.9, 0.8, id="p"), cand(0.8, 0.9, id="f")])
        assert select_final(front, "knee").id == "f"

    def test_full_tie_broken_by_id(self):
        front = ParetoSet((cand(0.8, 0.8, id="zeta"), cand(0.8, 0.8, id="alpha")))
        assert select_final(front, "knee").id == "alpha"

    def test_max_pred_and_max_fair(self):
        front = pareto_frontier([cand(0.9, 0.8, id="p"), cand(0.8, 0.9, id="f")])
        assert select_final(front, "max_pred").id == "p"
        assert select_final(front, "max_fair").id == "f"

    def test_unknown_policy(self):
        front = pareto_frontier([cand(0.5, 0.5)])
        with pytest.raises(ValueError, match="unknown policy"):
            select_final(front, "coin_flip")


class TestCandidatesCsv:
    def test_round_trip_with_hyperparams_and_flag(self, tmp_path):
        cs = [
            cand(0.9, 0.9, id="a", lr=1e-3, lambda_attn=0.5),
            cand(0.8, 0.95, id="b", lr=1e-4, lambda_attn=0.5),
            cand(0.85, 0.85, id="c", lr=1e-5, lambda_attn=0.0),
        ]
        front = pareto_frontier(cs)
        path = write_candidates_csv(tmp_path / "cands.csv", cs, frontier=front)
        text = path.read_text()
        header = text.splitlines()[0].split(",")
        assert header[:3] == ["id", "p_pred", "p_fair"]
        assert "on_frontier" in header
        flags = {
            row.split(",")[0]: row.split(",")[-1] for row in text.splitlines()[1:]
        }
        assert flags == {"a": "1", "b": "1", "c": "0"}

        back = read_candidates_csv(path)
        assert points(back) == points(cs)
        assert back[0].hyperparams_dict["lr"] == "0.001"

    def test_missing_columns_error(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,p_pred\nx,0.5\n")
        with pytest.raises(ValueError, match="p_fair"):
            read_candidates_csv(p)

    def test_empty_file_error(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("id,p_pred,p_fair\n")
        with pytest.raises(ValueError, match="no candidate rows"):
            read_candidates_csv(p)
