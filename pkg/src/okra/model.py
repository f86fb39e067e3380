"""The dual-stakeholder ranking network and its explanation channels.

Pipeline per subgraph: initial node embeddings (hashed bag of tokens for
text nodes, trainable kind embeddings elsewhere), two edge-typed graph
transformer layers on the candidate-to-vacancy orientation, four
attention channels per stakeholder side (candidate side on the forward
orientation, company side on the reversed one), pooling with main-node
concatenation, two bounded score heads, and harmonic fusion where the
lower side dominates.
"""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kg import EntityKind
from .sampling import CAND_TO_VAC, PairSubGraph

KINDS = [k.value for k in EntityKind]
KIND_INDEX = {k: i for i, k in enumerate(KINDS)}
SIDES = ("candidate", "company")
POLARITY = ("positive", "negative")


class MissingFeature(KeyError):
    pass


@dataclass
class ModelConfig:
    text_dim: int = 128  # T
    node_dim: int = 32  # M
    channels: int = 4  # H, fixed
    pooling: str = "mean"
    hash_buckets: int = 512
    token_limit: int = 96
    leaky_slope: float = 0.2
    score_bound: float = 100.0
    fuse_epsilon: float = 1.0

    def __post_init__(self):
        if self.channels != 4:
            raise ValueError("explanation channel count is fixed at 4")
        if self.pooling not in ("mean", "max", "sum"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.text_dim <= 0 or self.node_dim <= 0:
            raise ValueError("embedding sizes must be positive")
        if self.token_limit != 96:
            raise ValueError("token limit is fixed at 96")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class ModelParams:
    """Named parameter tensors in a stable declaration order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors)

    def zero_grads(self):
        for t in self._tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams({
            n: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)
            for n, t in self._tensors.items()
        })

    def count(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self._tensors.values())


def _param(rng, shape, scale=None):
    if scale is None:
        scale = 1.0 / np.sqrt(shape[0])
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def init_params(config: ModelConfig, num_relations: int, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    m, t, h = config.node_dim, config.text_dim, config.channels
    p: dict[str, Tensor] = {}
    p["text_proj_w"] = _param(rng, (config.hash_buckets, t))
    p["text_proj_b"] = Tensor(np.zeros((1, t)), requires_grad=True)
    p["text_to_node_w"] = _param(rng, (t, m))
    p["text_to_node_b"] = Tensor(np.zeros((1, m)), requires_grad=True)
    p["kind_embed"] = _param(rng, (len(KINDS), m), scale=0.5)
    p["anchor_embed"] = _param(rng, (2, m), scale=1.0)
    for layer in range(2):
        for name in ("wq", "wk", "wv", "wskip"):
            p[f"layer{layer}_{name}"] = _param(rng, (m, m))
        p[f"layer{layer}_edge"] = _param(rng, (max(1, num_relations), m), scale=0.1)
    for side in SIDES:
        for c in range(h):
            p[f"{side}_ch{c}_wl"] = _param(rng, (m, m))
            p[f"{side}_ch{c}_wr"] = _param(rng, (m, m))
            p[f"{side}_ch{c}_attn"] = _param(rng, (m, 1))
    for side in SIDES:
        p[f"head_{side}_w"] = _param(rng, (3 * m * h, 1))
        p[f"head_{side}_b"] = Tensor(np.zeros((1, 1)), requires_grad=True)
    return ModelParams(p)


# ---------------------------------------------------------------------------
# initial node embeddings
# ---------------------------------------------------------------------------

def hash_tokens(text: str, buckets: int, limit: int = 96) -> np.ndarray:
    """Counts of the first `limit` whitespace tokens, hashed into buckets."""
    counts = np.zeros(buckets)
    for token in text.split()[:limit]:
        counts[zlib.crc32(token.encode("utf-8")) % buckets] += 1.0
    return counts


_OFFSET_CACHE: dict[tuple[str, int], np.ndarray] = {}


def _node_offset(feature_ref: str, dim: int) -> np.ndarray:
    """Fixed per-node jitter so equal-kind nodes start distinguishable."""
    key = (feature_ref, dim)
    cached = _OFFSET_CACHE.get(key)
    if cached is None:
        digest = hashlib.blake2b(feature_ref.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        cached = _OFFSET_CACHE[key] = rng.normal(0.0, 0.1, size=dim)
    return cached


def init_node_embeddings(sub: PairSubGraph, params: ModelParams,
                         config: ModelConfig, features: dict) -> Tensor:
    """Initial embeddings: hashed-token projection for text nodes, per-kind
    vectors with a fixed per-node jitter elsewhere, and a trainable role
    marker on the two main nodes so the pair being scored is identifiable
    inside its own subgraph."""
    n = len(sub.nodes)
    counts = np.zeros((n, config.hash_buckets))
    text_mask = np.zeros((n, 1))
    kind_idx = np.zeros(n, dtype=np.int64)
    offsets = np.zeros((n, config.node_dim))
    for nid, kind, ref in sub.nodes:
        feat = features.get(ref)
        if feat is None:
            raise MissingFeature(ref)
        kind_idx[nid] = KIND_INDEX[kind]
        if kind == EntityKind.TextDoc.value:
            counts[nid] = hash_tokens(feat.get("payload", ""), config.hash_buckets,
                                      config.token_limit)
            text_mask[nid, 0] = 1.0
        else:
            offsets[nid] = _node_offset(ref, config.node_dim)

    ones = Tensor(np.ones((n, 1)))
    text_t = ad.add(ad.matmul(Tensor(counts), params["text_proj_w"]),
                    ad.matmul(ones, params["text_proj_b"]))
    text_m = ad.add(ad.matmul(text_t, params["text_to_node_w"]),
                    ad.matmul(ones, params["text_to_node_b"]))
    text_part = ad.scale_rows(text_m, Tensor(text_mask))
    kind_part = ad.scale_rows(ad.gather_rows(params["kind_embed"], kind_idx),
                              Tensor(1.0 - text_mask))
    anchor_select = np.zeros((n, 2))
    anchor_select[sub.main_candidate, 0] = 1.0
    anchor_select[sub.main_vacancy, 1] = 1.0
    anchor_part = ad.matmul(Tensor(anchor_select), params["anchor_embed"])
    base = ad.add(ad.add(text_part, kind_part), Tensor(offsets))
    return ad.add(base, anchor_part)


# ---------------------------------------------------------------------------
# message passing layers
# ---------------------------------------------------------------------------

class EdgeArrays:
    """Edges presorted by destination for the segment operations."""

    __slots__ = ("src", "dst", "rel", "order", "count")

    def __init__(self, edges):
        order = sorted(range(len(edges)),
                       key=lambda i: (edges[i][1], edges[i][0], edges[i][2]))
        self.src = np.array([edges[i][0] for i in order], dtype=np.int64)
        self.dst = np.array([edges[i][1] for i in order], dtype=np.int64)
        self.rel = np.array([edges[i][2] for i in order], dtype=np.int64)
        self.order = order
        self.count = len(edges)


def _as_edge_arrays(edges) -> EdgeArrays:
    return edges if isinstance(edges, EdgeArrays) else EdgeArrays(edges)


def graph_transformer_layer(h: Tensor, edges, params: ModelParams, layer: int,
                            config: ModelConfig) -> Tensor:
    """Edge-typed masked-attention convolution with a skip term."""
    n = h.shape[0]
    skip = ad.matmul(h, params[f"layer{layer}_wskip"])
    arrays = _as_edge_arrays(edges)
    if not arrays.count:
        return ad.leaky_relu(skip, config.leaky_slope)
    src, dst, rel = arrays.src, arrays.dst, arrays.rel
    q = ad.matmul(h, params[f"layer{layer}_wq"])
    k = ad.matmul(h, params[f"layer{layer}_wk"])
    v = ad.matmul(h, params[f"layer{layer}_wv"])
    edge_emb = ad.gather_rows(params[f"layer{layer}_edge"], rel)
    key = ad.add(ad.gather_rows(k, src), edge_emb)
    query = ad.gather_rows(q, dst)
    logits = ad.affine(
        ad.matmul(ad.mul(query, key), Tensor(np.ones((h.shape[1], 1)))),
        1.0 / np.sqrt(h.shape[1]),
    )
    alpha = ad.segment_softmax(logits, dst, n)
    msg = ad.scale_rows(ad.add(ad.gather_rows(v, src), edge_emb), alpha)
    agg = ad.segment_reduce(msg, dst, n, mode="sum")
    return ad.leaky_relu(ad.add(skip, agg), config.leaky_slope)


def attention_channel(h: Tensor, edges, params: ModelParams, side: str, channel: int,
                      config: ModelConfig):
    """One explanation channel: importance-weighted copy of the embeddings.

    Node importance is the softmax (over the subgraph's nodes) of each
    node's total incoming attention score, so it is uniform under zero
    parameters and always sums to one.
    """
    n = h.shape[0]
    prefix = f"{side}_ch{channel}"
    arrays = _as_edge_arrays(edges)
    if arrays.count:
        src, dst = arrays.src, arrays.dst
        left = ad.gather_rows(ad.matmul(h, params[f"{prefix}_wl"]), dst)
        right = ad.gather_rows(ad.matmul(h, params[f"{prefix}_wr"]), src)
        scores = ad.matmul(ad.leaky_relu(ad.add(left, right), config.leaky_slope),
                           params[f"{prefix}_attn"])
        mass = ad.segment_reduce(scores, dst, n, mode="sum")
        edge_soft = ad.segment_softmax(scores, np.zeros(arrays.count, dtype=np.int64), 1)
        edge_importance = np.zeros(arrays.count)
        edge_importance[np.array(arrays.order)] = edge_soft.data[:, 0]
    else:
        mass = Tensor(np.zeros((n, 1)))
        edge_importance = np.zeros(0)
    rho = ad.segment_softmax(mass, np.zeros(n, dtype=np.int64), 1)
    weighted = ad.scale_rows(h, rho)
    return weighted, rho, edge_importance


def stakeholder_channels(h: Tensor, edges, params: ModelParams, config: ModelConfig):
    """Per-side concatenated channel embeddings plus their importances.

    The candidate side attends over the forward orientation, the company
    side over the reversed one.
    """
    forward_view = EdgeArrays(edges)
    reverse_view = EdgeArrays([(d, s, r) for s, d, r in edges])
    outputs, importances = {}, {}
    for side, oriented in (("candidate", forward_view), ("company", reverse_view)):
        chans, rhos, edge_imps = [], [], []
        for c in range(config.channels):
            weighted, rho, edge_imp = attention_channel(
                h, oriented, params, side, c, config)
            chans.append(weighted)
            rhos.append(rho)
            edge_imps.append(edge_imp)
        outputs[side] = ad.concat(chans, axis=1)
        importances[side] = {"node": rhos, "edge": edge_imps}
    return outputs, importances


def pool_subgraph(h_side: Tensor, main_candidate: int, main_vacancy: int,
                  pooling: str) -> Tensor:
    n = h_side.shape[0]
    pooled = ad.segment_reduce(h_side, np.zeros(n, dtype=np.int64), 1, mode=pooling)
    cand = ad.gather_rows(h_side, [main_candidate])
    vac = ad.gather_rows(h_side, [main_vacancy])
    return ad.concat([pooled, cand, vac], axis=1)


def predict_score(embedding: Tensor, params: ModelParams, side: str,
                  config: ModelConfig) -> Tensor:
    pre = ad.add(ad.matmul(embedding, params[f"head_{side}_w"]),
                 params[f"head_{side}_b"])
    return ad.affine(ad.tanh(pre), config.score_bound)


def fuse_harmonic(s_cand: float, s_comp: float, score_bound: float = 100.0,
                  shift_epsilon: float = 1.0) -> float:
    """Harmonic mean on shifted-positive scores, mapped back to score range.

    Equal inputs return themselves; the result always lies between the two
    inputs and leans toward the lower one.
    """
    shift = score_bound + shift_epsilon
    a, b = s_cand + shift, s_comp + shift
    return 2.0 * a * b / (a + b) - shift


def _fuse_tensor(s_cand: Tensor, s_comp: Tensor, config: ModelConfig) -> Tensor:
    shift = config.score_bound + config.fuse_epsilon
    a = ad.affine(s_cand, 1.0, shift)
    b = ad.affine(s_comp, 1.0, shift)
    h = ad.div(ad.affine(ad.mul(a, b), 2.0), ad.add(a, b))
    return ad.affine(h, 1.0, -shift)


# ---------------------------------------------------------------------------
# full forward pass and explanations
# ---------------------------------------------------------------------------

@dataclass
class ExplanationReport:
    channels: list[dict]  # side, polarity, node_importances, edge_importances
    scores: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(
            {"channels": self.channels, "scores": self.scores}, sort_keys=True)


@dataclass
class GraphOutput:
    fused: Tensor
    side_scores: dict[str, Tensor]
    report: ExplanationReport


def canonical_orientation(sub: PairSubGraph):
    """Edges in candidate-to-vacancy direction regardless of storage."""
    if sub.direction == CAND_TO_VAC:
        return list(sub.edges)
    return [(d, s, r) for s, d, r in sub.edges]


def symmetrized(edges):
    """Both directions of every edge; the relational stage is orientation
    blind so that only the stakeholder channels carry direction."""
    return sorted({(s, d, r) for s, d, r in edges}
                  | {(d, s, r) for s, d, r in edges})


def _canonical_node_order(sub: PairSubGraph):
    """Model-internal node order keyed by feature_ref, so any permutation
    of the input produces bit-identical arithmetic."""
    order = sorted(range(len(sub.nodes)), key=lambda i: sub.nodes[i][2])
    to_canon = {sub.nodes[i][0]: pos for pos, i in enumerate(order)}
    return order, to_canon


def forward_one(sub: PairSubGraph, params: ModelParams, config: ModelConfig,
                features: dict) -> GraphOutput:
    order, to_canon = _canonical_node_order(sub)
    canon_sub = PairSubGraph(
        nodes=[(to_canon[sub.nodes[i][0]],) + sub.nodes[i][1:] for i in order],
        edges=[(to_canon[s], to_canon[d], r) for s, d, r in canonical_orientation(sub)],
        main_candidate=to_canon[sub.main_candidate],
        main_vacancy=to_canon[sub.main_vacancy],
        label=sub.label,
        direction=CAND_TO_VAC,
        origin=sub.origin,
    )
    h = init_node_embeddings(canon_sub, params, config, features)
    both_ways = EdgeArrays(symmetrized(canon_sub.edges))
    h = graph_transformer_layer(h, both_ways, params, 0, config)
    h = graph_transformer_layer(h, both_ways, params, 1, config)
    sides, importances = stakeholder_channels(h, canon_sub.edges, params, config)

    side_scores = {}
    for side in SIDES:
        emb = pool_subgraph(sides[side], canon_sub.main_candidate,
                            canon_sub.main_vacancy, config.pooling)
        side_scores[side] = predict_score(emb, params, side, config)
    fused = _fuse_tensor(side_scores["candidate"], side_scores["company"], config)

    # report indexes follow the caller's node order, not the canonical one
    inverse = np.empty(len(order), dtype=np.int64)
    for input_pos, i in enumerate(order):
        inverse[to_canon[sub.nodes[i][0]]] = i
    channels = []
    for side in SIDES:
        for c, polarity in enumerate(POLARITY):
            rho = importances[side]["node"][c].data[:, 0]
            node_imp = np.zeros(len(rho))
            node_imp[inverse] = rho
            channels.append({
                "side": side,
                "polarity": polarity,
                "node_importances": [float(x) for x in node_imp],
                "edge_importances": [float(x) for x in importances[side]["edge"][c]],
            })
    report = ExplanationReport(
        channels=channels,
        scores={
            "candidate": side_scores["candidate"].item(),
            "company": side_scores["company"].item(),
            "fused": fused.item(),
        },
    )
    return GraphOutput(fused=fused, side_scores=side_scores, report=report)


def forward(batch: list[PairSubGraph], params: ModelParams, config: ModelConfig,
            features: dict) -> list[GraphOutput]:
    if not batch:
        raise ValueError("empty batch")
    return [forward_one(sub, params, config, features) for sub in batch]


def extract_explanation(sub: PairSubGraph, params: ModelParams, config: ModelConfig,
                        features: dict) -> ExplanationReport:
    return forward_one(sub, params, config, features).report
