"""Comparison rankers: random, TF-IDF cosine, and transformer-only graph
models (the two-layer one doubles as the ablation of the full network).
"""
from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import (
    ModelConfig,
    ModelParams,
    _param,
    canonical_orientation,
    graph_transformer_layer,
    init_node_embeddings,
    pool_subgraph,
)
from .sampling import PairSubGraph

TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# random baseline
# ---------------------------------------------------------------------------

def random_ranker(candidate_key: str, vacancy_keys: list[str], seed: int = 0):
    """Uniform scores, deterministic per (seed, candidate)."""
    digest = hashlib.blake2b(candidate_key.encode(), digest_size=8).digest()
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest, "little")]))
    scores = rng.random(len(vacancy_keys))
    order = sorted(range(len(vacancy_keys)), key=lambda i: (-scores[i], i))
    return [(vacancy_keys[i], float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# TF-IDF cosine baseline
# ---------------------------------------------------------------------------

@dataclass
class TfIdfIndex:
    doc_freq: Counter = field(default_factory=Counter)
    n_docs: int = 0

    def fit(self, documents: list[str]) -> "TfIdfIndex":
        self.n_docs = len(documents)
        self.doc_freq = Counter()
        for doc in documents:
            self.doc_freq.update(set(tokenize(doc)))
        return self

    def idf(self, term: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.doc_freq[term])) + 1.0

    def vector(self, text: str) -> dict[str, float]:
        """L2-normalized tf-idf; out-of-vocabulary terms are dropped."""
        tf = Counter(t for t in tokenize(text) if t in self.doc_freq)
        weights = {t: count * self.idf(t) for t, count in tf.items()}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        if norm == 0.0:
            return {}
        return {t: w / norm for t, w in weights.items()}


def cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    return sum(w * b.get(t, 0.0) for t, w in a.items())


def tfidf_rank(index: TfIdfIndex, cv_text: str, vacancy_texts: list[tuple[str, str]]):
    """Ranked (key, cosine) list; ties keep input order."""
    cv_vec = index.vector(cv_text)
    scored = [(key, cosine(cv_vec, index.vector(text))) for key, text in vacancy_texts]
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][1], i))
    return [scored[i] for i in order]


# ---------------------------------------------------------------------------
# transformer-only graph rankers (depth 2 == the ablation)
# ---------------------------------------------------------------------------

def init_gt_params(config: ModelConfig, num_relations: int, depth: int = 2,
                   seed: int = 0) -> ModelParams:
    if depth not in (1, 2):
        raise ValueError("depth must be 1 or 2")
    rng = np.random.default_rng(seed)
    m, t = config.node_dim, config.text_dim
    p: dict[str, Tensor] = {}
    p["text_proj_w"] = _param(rng, (config.hash_buckets, t))
    p["text_proj_b"] = Tensor(np.zeros((1, t)), requires_grad=True)
    p["text_to_node_w"] = _param(rng, (t, m))
    p["text_to_node_b"] = Tensor(np.zeros((1, m)), requires_grad=True)
    p["kind_embed"] = _param(rng, (10, m), scale=0.5)
    p["anchor_embed"] = _param(rng, (2, m), scale=1.0)
    for layer in range(depth):
        for name in ("wq", "wk", "wv", "wskip"):
            p[f"layer{layer}_{name}"] = _param(rng, (m, m))
        p[f"layer{layer}_edge"] = _param(rng, (max(1, num_relations), m), scale=0.1)
    p["gt_head_w"] = _param(rng, (3 * m, 1))
    p["gt_head_b"] = Tensor(np.zeros((1, 1)), requires_grad=True)
    return ModelParams(p)


@dataclass
class GtOutput:
    fused: Tensor  # single score; named for train-loop compatibility


def make_gt_forward(depth: int):
    """Forward closure: init embeddings, `depth` layers on the forward
    orientation only, mean pooling with main-node concat, one bounded head."""

    def gt_forward(sub: PairSubGraph, params: ModelParams, config: ModelConfig,
                   features: dict) -> GtOutput:
        edges = canonical_orientation(sub)
        h = init_node_embeddings(sub, params, config, features)
        for layer in range(depth):
            h = graph_transformer_layer(h, edges, params, layer, config)
        emb = pool_subgraph(h, sub.main_candidate, sub.main_vacancy, "mean")
        pre = ad.add(ad.matmul(emb, params["gt_head_w"]), params["gt_head_b"])
        return GtOutput(fused=ad.affine(ad.tanh(pre), config.score_bound))

    return gt_forward
