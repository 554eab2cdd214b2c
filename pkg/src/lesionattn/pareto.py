"""Fairness-aware model selection over the (P_pred, P_fair) plane.

Candidates carry a predictive score (validation AUROC) and a fairness score
(1 - validation EO). The frontier keeps exactly the non-dominated candidates;
``select_final`` reduces a frontier to one deployable model under a named
policy. Pure functions over immutable candidate lists.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ModelCandidate",
    "ParetoSet",
    "dominates",
    "pareto_frontier",
    "select_final",
    "read_candidates_csv",
    "write_candidates_csv",
    "SELECTION_POLICIES",
]


@dataclass(frozen=True)
class ModelCandidate:
    id: str
    p_pred: float
    p_fair: float
    hyperparams: tuple[tuple[str, object], ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name, v in (("p_pred", self.p_pred), ("p_fair", self.p_fair)):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if isinstance(self.hyperparams, dict):
            object.__setattr__(
                self, "hyperparams", tuple(sorted(self.hyperparams.items()))
            )

    @property
    def hyperparams_dict(self) -> dict:
        return dict(self.hyperparams)


@dataclass(frozen=True)
class ParetoSet:
    """Non-dominated candidates, sorted by descending p_pred."""

    members: tuple[ModelCandidate, ...]

    def __post_init__(self):
        ordered = tuple(
            sorted(self.members, key=lambda c: (-c.p_pred, -c.p_fair, c.id))
        )
        object.__setattr__(self, "members", ordered)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def dominates(a: ModelCandidate, b: ModelCandidate) -> bool:
    """True iff a is at least as good as b in both objectives and strictly
    better in at least one."""
    at_least = a.p_pred >= b.p_pred and a.p_fair >= b.p_fair
    strict = a.p_pred > b.p_pred or a.p_fair > b.p_fair
    return at_least and strict


def pareto_frontier(candidates: list[ModelCandidate]) -> ParetoSet:
    """Exactly the non-dominated candidates.

    Duplicates on identical (p_pred, p_fair) points never dominate each
    other, so they are all retained.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate list is empty")
    # Sweep in descending p_pred; a candidate is dominated iff some earlier
    # candidate with strictly better (p_pred, p_fair) in one coordinate
    # covers it. Tracking the best p_fair seen at strictly higher p_pred
    # plus the best at equal p_pred handles ties correctly.
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].p_pred)
    keep = []
    best_fair_above = float("-inf")  # over strictly higher p_pred
    i = 0
    while i < len(order):
        j = i
        tier_pred = candidates[order[i]].p_pred
        while j < len(order) and candidates[order[j]].p_pred == tier_pred:
            j += 1
        tier = [candidates[order[k]] for k in range(i, j)]
        tier_best_fair = max(c.p_fair for c in tier)
        for c in tier:
            if c.p_fair > best_fair_above and not any(
                d.p_fair > c.p_fair for d in tier if d.p_pred == c.p_pred
            ):
                keep.append(c)
        best_fair_above = max(best_fair_above, tier_best_fair)
        i = j
    return ParetoSet(tuple(keep))


def _pick(frontier: ParetoSet, objectives) -> ModelCandidate:
    # maximize the objective tuple; final tie-break is lexicographic id
    return min(frontier, key=lambda c: tuple(-v for v in objectives(c)) + (c.id,))


SELECTION_POLICIES = {
    "knee": lambda f: _pick(f, lambda c: (c.p_pred + c.p_fair, c.p_fair)),
    "max_pred": lambda f: _pick(f, lambda c: (c.p_pred, c.p_fair)),
    "max_fair": lambda f: _pick(f, lambda c: (c.p_fair, c.p_pred)),
}


def select_final(frontier: ParetoSet, policy: str = "knee") -> ModelCandidate:
    """Pick one frontier member.

    "knee" maximizes p_pred + p_fair, ties broken by higher p_fair then
    lexicographically smaller id; "max_pred" / "max_fair" maximize a single
    objective with the other as tie-break.
    """
    if policy not in SELECTION_POLICIES:
        raise ValueError(
            f"unknown policy {policy!r}; expected one of {sorted(SELECTION_POLICIES)}"
        )
    if len(frontier) == 0:
        raise ValueError("frontier is empty")
    return SELECTION_POLICIES[policy](frontier)


_RESERVED_COLUMNS = ("id", "p_pred", "p_fair", "on_frontier")


def read_candidates_csv(path) -> list[ModelCandidate]:
    """Load candidates from a CSV with columns id, p_pred, p_fair plus any
    number of flattened hyperparameter columns."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty candidates file")
        missing = {"id", "p_pred", "p_fair"} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for row in reader:
            hp = {
                k: v
                for k, v in row.items()
                if k not in _RESERVED_COLUMNS and v not in (None, "")
            }
            out.append(
                ModelCandidate(
                    id=row["id"],
                    p_pred=float(row["p_pred"]),
                    p_fair=float(row["p_fair"]),
                    hyperparams=tuple(sorted(hp.items())),
                )
            )
    if not out:
        raise ValueError(f"{path}: no candidate rows")
    return out


def write_candidates_csv(path, candidates: list[ModelCandidate], frontier: ParetoSet | None = None):
    """Write candidates (and, when a frontier is given, an on_frontier flag)."""
    path = Path(path)
    hp_cols = sorted({k for c in candidates for k, _ in c.hyperparams})
    cols = ["id", "p_pred", "p_fair"] + hp_cols
    on = None
    if frontier is not None:
        on = {id(c) for c in frontier.members}
        member_keys = {(c.id, c.p_pred, c.p_fair) for c in frontier.members}
        cols.append("on_frontier")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for c in candidates:
            row = [c.id, repr(c.p_pred), repr(c.p_fair)]
            hp = c.hyperparams_dict
            row += [hp.get(k, "") for k in hp_cols]
            if on is not None:
                row.append(int((c.id, c.p_pred, c.p_fair) in member_keys))
            writer.writerow(row)
    return path
