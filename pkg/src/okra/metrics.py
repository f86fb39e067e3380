"""Ranking accuracy (nDCG@k) and the two regional fairness metrics.

Performance disparity compares mean nDCG@10 between the protected and
unprotected candidate groups; disparate visibility compares the protected
share of recommended vacancies against its share of the catalog.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

PROTECTED = "rural"
UNPROTECTED = "urban"


class MissingGroup(ValueError):
    pass


class UnknownVacancy(KeyError):
    pass


class EmptyTestSet(ValueError):
    pass


def gain(label: int | float) -> float:
    """Negative labels are rejections and carry zero gain."""
    return 2.0 ** max(float(label), 0.0) - 1.0


def dcg_at_k(labels_in_order, k: int) -> float:
    return sum(
        gain(l) / math.log2(p + 2) for p, l in enumerate(labels_in_order[:k])
    )


def ndcg_at_k(labels_in_predicted_order, all_labels, k: int) -> float:
    """0 when the ideal DCG is 0 (no positively gained label anywhere)."""
    ideal = sorted(all_labels, reverse=True)
    idcg = dcg_at_k(ideal, k)
    if idcg == 0.0:
        return 0.0
    return dcg_at_k(list(labels_in_predicted_order), k) / idcg


def rank_by_score(scores, labels):
    """Labels reordered by descending score; ties keep original order."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [labels[i] for i in order], order


@dataclass
class RankedList:
    candidate_key: str
    vacancy_keys: list[str]  # ordered by descending predicted score
    scores: list[float]
    labels: list[int]  # aligned with vacancy_keys
    group: str  # candidate's region attribute

    def ndcg(self, k: int) -> float:
        return ndcg_at_k(self.labels, self.labels, k)


def performance_disparity(per_group_ndcg10: dict[str, list[float]],
                          protected: str = PROTECTED,
                          unprotected: str = UNPROTECTED) -> float:
    for name in (protected, unprotected):
        if not per_group_ndcg10.get(name):
            raise MissingGroup(f"no candidates in group {name!r}")
    mean = lambda xs: sum(xs) / len(xs)
    return mean(per_group_ndcg10[protected]) - mean(per_group_ndcg10[unprotected])


def disparate_visibility(ranked_lists: list[RankedList],
                         vacancy_regions: dict[str, str],
                         top_k: int = 10,
                         protected: str = PROTECTED) -> tuple[float, float]:
    """Returns (delta_v, catalog_fraction)."""
    recommended = 0
    protected_recommended = 0
    for rl in ranked_lists:
        for key in rl.vacancy_keys[:top_k]:
            if key not in vacancy_regions:
                raise UnknownVacancy(key)
            recommended += 1
            protected_recommended += vacancy_regions[key] == protected
    catalog_fraction = (
        sum(1 for r in vacancy_regions.values() if r == protected) / len(vacancy_regions)
        if vacancy_regions else 0.0
    )
    if recommended == 0:
        raise EmptyTestSet("no recommendations to audit")
    return protected_recommended / recommended - catalog_fraction, catalog_fraction


@dataclass
class EvalReport:
    model: str
    ndcg: dict[str, float]  # e.g. {"ndcg@10": ...}
    ndcg_by_group: dict[str, dict[str, float]]
    delta_p: float | None
    delta_v: float | None
    catalog_protected_fraction: float | None
    group_counts: dict[str, int]
    per_candidate: list[dict] = field(default_factory=list)
    config_digest: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate(ranked_lists: list[RankedList],
             vacancy_regions: dict[str, str] | None,
             ks=(3, 5, 10),
             model: str = "model",
             config_digest: str = "") -> EvalReport:
    """Aggregate metrics over per-candidate ranked lists.

    Fairness metrics are skipped (None) when region data is absent, the
    same way datasets without location detail are handled.
    """
    if not ranked_lists:
        raise EmptyTestSet("no ranked lists")

    per_candidate = []
    by_group: dict[str, list[dict]] = {}
    for rl in ranked_lists:
        entry = {
            "candidate": rl.candidate_key,
            "group": rl.group,
            **{f"ndcg@{k}": rl.ndcg(k) for k in ks},
        }
        per_candidate.append(entry)
        by_group.setdefault(rl.group, []).append(entry)

    mean = lambda xs: sum(xs) / len(xs)
    overall = {f"ndcg@{k}": mean([e[f"ndcg@{k}"] for e in per_candidate]) for k in ks}
    ndcg_by_group = {
        g: {f"ndcg@{k}": mean([e[f"ndcg@{k}"] for e in entries]) for k in ks}
        for g, entries in by_group.items()
    }

    delta_p = delta_v = catalog_fraction = None
    if vacancy_regions is not None and PROTECTED in by_group and UNPROTECTED in by_group:
        delta_p = performance_disparity(
            {g: [e["ndcg@10"] for e in entries] for g, entries in by_group.items()}
        )
        delta_v, catalog_fraction = disparate_visibility(ranked_lists, vacancy_regions)

    return EvalReport(
        model=model,
        ndcg=overall,
        ndcg_by_group=ndcg_by_group,
        delta_p=delta_p,
        delta_v=delta_v,
        catalog_protected_fraction=catalog_fraction,
        group_counts={g: len(v) for g, v in by_group.items()},
        per_candidate=per_candidate,
        config_digest=config_digest,
    )


def write_plot_data(reports: list[EvalReport], path) -> None:
    """Flat (model, metric, value) CSV for external charting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "metric", "value"])
        for rep in reports:
            for name, value in sorted(rep.ndcg.items()):
                writer.writerow([rep.model, name, f"{value:.6f}"])
            if rep.delta_p is not None:
                writer.writerow([rep.model, "delta_p", f"{rep.delta_p:.6f}"])
            if rep.delta_v is not None:
                writer.writerow([rep.model, "delta_v", f"{rep.delta_v:.6f}"])
