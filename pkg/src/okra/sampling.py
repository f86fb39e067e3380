"""Per-pair subgraph extraction, reversal, local relabeling, and splits.

Each candidate-vacancy pair gets its own RNG stream derived from the
global seed and the pair's external keys, so corpus generation is
schedule independent.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .kg import EntityKind, KnowledgeGraph

CAND_TO_VAC = "candidate_to_vacancy"
VAC_TO_CAND = "vacancy_to_candidate"


class MissingAnchor(KeyError):
    pass


class ExhaustedSpace(ValueError):
    pass


@dataclass
class PairSubGraph:
    nodes: list[tuple[int, str, str]]  # (node_id, kind value, feature_ref)
    edges: list[tuple[int, int, int]]  # (src, dst, relation_id)
    main_candidate: int
    main_vacancy: int
    label: int = 0
    direction: str = CAND_TO_VAC
    origin: tuple[str, str] = ("", "")

    def node_ids(self) -> list[int]:
        return [n[0] for n in self.nodes]


@dataclass
class SplitAssignment:
    train: list[str]
    validation: list[str]
    test: list[str]

    def split_of(self, key: str) -> str:
        for name in ("train", "validation", "test"):
            if key in getattr(self, name):
                return name
        raise KeyError(key)


def pair_rng(global_seed: int, candidate_key: str, vacancy_key: str) -> np.random.Generator:
    """Stable per-pair stream; hashes keys so results never depend on schedule."""
    digest = hashlib.blake2b(
        f"{candidate_key}\x00{vacancy_key}".encode(), digest_size=8
    ).digest()
    return np.random.default_rng(
        np.random.SeedSequence([global_seed, int.from_bytes(digest, "little")])
    )


def sample_pair_subgraph(
    graph: KnowledgeGraph,
    candidate_key: str,
    vacancy_key: str,
    k: int = 7,
    walks_per_anchor: int = 32,
    rng_seed: int = 0,
    label: int = 0,
) -> PairSubGraph:
    """Union of bounded random walks from both anchors.

    Walks traverse edges ignoring direction; stored edges keep their
    original direction. Every included node therefore lies within k hops
    of an anchor.
    """
    try:
        cand = graph.entity_id(EntityKind.Candidate, candidate_key)
        vac = graph.entity_id(EntityKind.Vacancy, vacancy_key)
    except KeyError as err:
        raise MissingAnchor(str(err)) from None

    rng = pair_rng(rng_seed, candidate_key, vacancy_key)
    visited: set[int] = {cand, vac}
    edges: set[tuple[int, int, int]] = set()

    for anchor in (cand, vac):
        for _ in range(walks_per_anchor):
            node = anchor
            for _ in range(k):
                nbrs = [(node, rel, obj) for rel, obj in graph.out_adj[node]]
                nbrs += [(subj, rel, node) for rel, subj in graph.in_adj[node]]
                if not nbrs:
                    break
                src, rel, dst = nbrs[rng.integers(len(nbrs))]
                edges.add((src, dst, rel))
                node = dst if node == src else src
                visited.add(node)

    order = sorted(visited)
    nodes = [
        (gid, graph.entities[gid].kind.value, f"{graph.entities[gid].kind.value}:{graph.entities[gid].key}")
        for gid in order
    ]
    sub = PairSubGraph(
        nodes=nodes,
        edges=sorted(edges),
        main_candidate=cand,
        main_vacancy=vac,
        label=label,
        direction=CAND_TO_VAC,
        origin=(candidate_key, vacancy_key),
    )
    return relabel_local(sub)


def reverse(sub: PairSubGraph) -> PairSubGraph:
    """Flip every edge and the stored direction flag; all else unchanged."""
    return replace(
        sub,
        edges=[(d, s, r) for s, d, r in sub.edges],
        direction=VAC_TO_CAND if sub.direction == CAND_TO_VAC else CAND_TO_VAC,
    )


def relabel_local(sub: PairSubGraph) -> PairSubGraph:
    """Remap node ids to dense 0..n-1; feature_ref keeps the lookup key."""
    mapping = {nid: i for i, (nid, _, _) in enumerate(sub.nodes)}
    return replace(
        sub,
        nodes=[(mapping[nid], kind, ref) for nid, kind, ref in sub.nodes],
        edges=[(mapping[s], mapping[d], r) for s, d, r in sub.edges],
        main_candidate=mapping[sub.main_candidate],
        main_vacancy=mapping[sub.main_vacancy],
    )


def negative_sample(
    graph: KnowledgeGraph,
    labeled_pairs: set[tuple[str, str]],
    count: int,
    rng_seed: int = 0,
) -> list[tuple[str, str]]:
    """Uniform pairs absent from labeled_pairs."""
    cands = sorted(e.key for e in graph.entities_of_kind(EntityKind.Candidate))
    vacs = sorted(e.key for e in graph.entities_of_kind(EntityKind.Vacancy))
    free = len(cands) * len(vacs) - len(labeled_pairs)
    if count > free:
        raise ExhaustedSpace(f"requested {count} negatives, only {free} pairs free")
    if count == 0:
        return []
    pool = [(c, v) for c in cands for v in vacs if (c, v) not in labeled_pairs]
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(idx)]


def split_by_candidate(
    candidates: Iterable[str],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    rng_seed: int = 0,
) -> SplitAssignment:
    """Shuffle candidate keys, then cut by largest-remainder rounded sizes."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    keys = sorted(set(candidates))
    rng = np.random.default_rng(rng_seed)
    rng.shuffle(keys)
    n = len(keys)
    raw = [n * r for r in ratios]
    sizes = [int(x) for x in raw]
    remainders = sorted(
        range(3), key=lambda i: (-(raw[i] - sizes[i]), i)
    )
    for i in range(n - sum(sizes)):
        sizes[remainders[i % 3]] += 1
    a, b = sizes[0], sizes[0] + sizes[1]
    return SplitAssignment(train=keys[:a], validation=keys[a:b], test=keys[b:])


# ---------------------------------------------------------------------------
# corpus serialization (JSON lines + feature sidecar)
# ---------------------------------------------------------------------------

def subgraph_to_json(sub: PairSubGraph) -> dict:
    return {
        "nodes": [[nid, kind, ref] for nid, kind, ref in sub.nodes],
        "edges": [[s, d, r] for s, d, r in sub.edges],
        "main_candidate": sub.main_candidate,
        "main_vacancy": sub.main_vacancy,
        "label": sub.label,
        "direction": sub.direction,
        "origin": list(sub.origin),
    }


def subgraph_from_json(obj: dict) -> PairSubGraph:
    return PairSubGraph(
        nodes=[(int(n[0]), n[1], n[2]) for n in obj["nodes"]],
        edges=[(int(e[0]), int(e[1]), int(e[2])) for e in obj["edges"]],
        main_candidate=int(obj["main_candidate"]),
        main_vacancy=int(obj["main_vacancy"]),
        label=int(obj["label"]),
        direction=obj["direction"],
        origin=(obj["origin"][0], obj["origin"][1]),
    )


def write_corpus(subs: Iterable[PairSubGraph], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sub in subs:
            fh.write(json.dumps(subgraph_to_json(sub), sort_keys=True) + "\n")


def read_corpus(path) -> list[PairSubGraph]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(subgraph_from_json(json.loads(line)))
    return out


def write_features(graph: KnowledgeGraph, path) -> None:
    """Sidecar: feature_ref -> kind, payload, attrs, for embedding lookup."""
    table = {
        f"{e.kind.value}:{e.key}": {
            "kind": e.kind.value,
            "payload": e.payload or "",
            "attrs": e.attrs,
        }
        for e in graph.entities
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table, fh, sort_keys=True, indent=0)


def read_features(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
