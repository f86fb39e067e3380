"""Listwise-group training with pair-swap weighted gradients and ADAM.

Groups are all labeled subgraphs of one candidate. Each pair with
different labels contributes a gradient scaled by how much swapping the
two items would move nDCG at the configured cutoff, which lets the
optimizer work on the ranking metric directly.
"""
from __future__ import annotations

import csv
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .metrics import dcg_at_k, gain, ndcg_at_k, rank_by_score
from .model import ModelConfig, ModelParams, forward_one, init_params
from .sampling import PairSubGraph


class NonFiniteGradient(RuntimeError):
    pass


class DegenerateGroup(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class DigestMismatch(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5.283e-5
    epochs: int = 3
    sigma: float = 1.0
    ndcg_cutoff: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    groups_per_step: int = 1  # gradient accumulation across groups
    lr_decay: float = 0.3  # late-phase learning-rate factor
    lr_decay_after: float = 0.7  # fraction of epochs at full rate
    max_group_size: int | None = None
    group_by: str = "candidate"  # "vacancy" flips the grouping side
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.group_by not in ("candidate", "vacancy"):
            raise ValueError(f"unknown grouping {self.group_by!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)

    def record(self, epoch, split, ndcg10, loss, seconds):
        self.rows.append({"epoch": epoch, "split": split, "ndcg10": ndcg10,
                          "loss": loss, "seconds": seconds})

    def ndcg(self, epoch, split):
        for row in self.rows:
            if row["epoch"] == epoch and row["split"] == split:
                return row["ndcg10"]
        raise KeyError((epoch, split))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "split", "ndcg10", "loss", "seconds"])
            for r in self.rows:
                writer.writerow([r["epoch"], r["split"], f"{r['ndcg10']:.6f}",
                                 f"{r['loss']:.6f}", f"{r['seconds']:.3f}"])


# ---------------------------------------------------------------------------
# pairwise ranking gradients
# ---------------------------------------------------------------------------

def lambdarank_grads(scores, labels, cutoff: int = 10, sigma: float = 1.0):
    """Per-item gradients of the pairwise ranking cost.

    A descent step (score minus learning rate times gradient) raises the
    score of the better-labeled item of each pair. All-equal labels are
    the degenerate group: the gradient is identically zero.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    if len(scores) < 2:
        raise DegenerateGroup("need at least two items to rank")
    n = len(scores)
    grads = [0.0] * n
    if len(set(labels)) < 2:
        return grads
    idcg = dcg_at_k(sorted(labels, reverse=True), cutoff)
    if idcg == 0.0:
        return grads

    _, order = rank_by_score(scores, labels)
    position = [0] * n  # 1-based rank of each item
    for rank, item in enumerate(order):
        position[item] = rank + 1
    discount = [
        1.0 / math.log2(position[i] + 1) if position[i] <= cutoff else 0.0
        for i in range(n)
    ]

    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] == labels[j]:
                continue
            hi, lo = (i, j) if labels[i] > labels[j] else (j, i)
            delta = abs(gain(labels[hi]) - gain(labels[lo])) \
                * abs(discount[hi] - discount[lo]) / idcg
            lam = -sigma * delta / (1.0 + math.exp(sigma * (scores[hi] - scores[lo])))
            grads[hi] += lam
            grads[lo] -= lam
    return grads


def pairwise_surrogate(scores, labels, cutoff: int = 10, sigma: float = 1.0) -> float:
    """Swap-weighted logistic cost; a printable progress number."""
    if len(set(labels)) < 2:
        return 0.0
    idcg = dcg_at_k(sorted(labels, reverse=True), cutoff)
    if idcg == 0.0:
        return 0.0
    _, order = rank_by_score(scores, labels)
    position = [0] * len(scores)
    for rank, item in enumerate(order):
        position[item] = rank + 1
    discount = [1.0 / math.log2(p + 1) if p <= cutoff else 0.0 for p in position]
    total = 0.0
    for i in range(len(scores)):
        for j in range(i + 1, len(scores)):
            if labels[i] == labels[j]:
                continue
            hi, lo = (i, j) if labels[i] > labels[j] else (j, i)
            delta = abs(gain(labels[hi]) - gain(labels[lo])) \
                * abs(discount[hi] - discount[lo]) / idcg
            margin = sigma * (scores[hi] - scores[lo])
            # log1p(exp(-x)) without overflow for very negative margins
            total += delta * (math.log1p(math.exp(-abs(margin)))
                              + max(0.0, -margin))
    return total


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------

class AdamState:
    def __init__(self, params: ModelParams):
        self.step = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}


def adam_step(params: ModelParams, state: AdamState, config: TrainConfig,
              lr: float | None = None) -> None:
    lr = config.learning_rate if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, tensor in params.items():
        g = tensor.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def group_corpus(subs: list[PairSubGraph], group_by: str = "candidate"):
    key_index = 0 if group_by == "candidate" else 1
    groups: dict[str, list[PairSubGraph]] = {}
    for sub in subs:
        groups.setdefault(sub.origin[key_index], []).append(sub)
    return groups


def corpus_scores(subs, params, config: ModelConfig, features,
                  forward_fn=forward_one) -> list[float]:
    return [forward_fn(s, params, config, features).fused.item() for s in subs]


def mean_group_ndcg(groups, params, config, features, cutoff=10, forward_fn=forward_one):
    vals = []
    for subs in groups.values():
        labels = [s.label for s in subs]
        scores = corpus_scores(subs, params, config, features, forward_fn)
        in_order, _ = rank_by_score(scores, labels)
        vals.append(ndcg_at_k(in_order, labels, cutoff))
    return sum(vals) / len(vals) if vals else 0.0


def train(
    train_subs: list[PairSubGraph],
    val_subs: list[PairSubGraph],
    model_config: ModelConfig,
    train_config: TrainConfig,
    features: dict,
    num_relations: int,
    params: ModelParams | None = None,
    forward_fn=forward_one,
    init_fn=init_params,
):
    """Optimize and return (best-validation params, final params, history)."""
    train_groups = group_corpus(train_subs, train_config.group_by)
    train_groups = {k: v for k, v in train_groups.items() if len(v) >= 2}
    if not train_groups:
        raise EmptyCorpus("no trainable groups (need >= 2 labeled pairs each)")
    val_groups = group_corpus(val_subs, train_config.group_by)

    if params is None:
        params = init_fn(model_config, num_relations, seed=train_config.seed)
    state = AdamState(params)
    history = TrainHistory()
    rng = np.random.default_rng(train_config.seed)

    def surrogate_of(groups):
        total = 0.0
        for subs in groups.values():
            scores = corpus_scores(subs, params, model_config, features, forward_fn)
            total += pairwise_surrogate(scores, [s.label for s in subs],
                                        train_config.ndcg_cutoff, train_config.sigma)
        return total / max(1, len(groups))

    def record_epoch(epoch, train_ndcg, train_loss, seconds):
        history.record(epoch, "train", train_ndcg, train_loss, seconds)
        if val_groups:
            history.record(epoch, "validation",
                           mean_group_ndcg(val_groups, params, model_config, features,
                                           train_config.ndcg_cutoff, forward_fn),
                           surrogate_of(val_groups), seconds)

    record_epoch(0,
                 mean_group_ndcg(train_groups, params, model_config, features,
                                 train_config.ndcg_cutoff, forward_fn),
                 surrogate_of(train_groups), 0.0)
    best = (history.rows[-1]["ndcg10"] if val_groups else -1.0, params.copy())

    keys = sorted(train_groups)
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.monotonic()
        rng.shuffle(keys)
        lr = train_config.learning_rate
        if epoch > train_config.lr_decay_after * train_config.epochs:
            lr *= train_config.lr_decay
        epoch_loss = 0.0
        epoch_ndcg = []
        pending = 0
        params.zero_grads()
        for key in keys:
            subs = train_groups[key]
            if train_config.max_group_size:
                subs = subs[: train_config.max_group_size]
            labels = [s.label for s in subs]
            if len(set(labels)) < 2:
                continue
            outputs = [forward_fn(s, params, model_config, features) for s in subs]
            scores = [o.fused.item() for o in outputs]
            in_order, _ = rank_by_score(scores, labels)
            epoch_ndcg.append(ndcg_at_k(in_order, labels, train_config.ndcg_cutoff))
            grads = lambdarank_grads(scores, labels, train_config.ndcg_cutoff,
                                     train_config.sigma)
            epoch_loss += pairwise_surrogate(scores, labels, train_config.ndcg_cutoff,
                                             train_config.sigma)
            if not any(grads):
                continue
            terms = [ad.affine(o.fused, g) for o, g in zip(outputs, grads) if g]
            loss = terms[0]
            for term in terms[1:]:
                loss = ad.add(loss, term)
            ad.backward(loss)
            pending += 1
            if pending >= train_config.groups_per_step:
                adam_step(params, state, train_config, lr)
                params.zero_grads()
                pending = 0
        if pending:
            adam_step(params, state, train_config, lr)
            params.zero_grads()
        # train-split metric comes from the scores seen during the epoch,
        # so reporting does not cost a second pass over the corpus
        record_epoch(epoch,
                     sum(epoch_ndcg) / len(epoch_ndcg) if epoch_ndcg else 0.0,
                     epoch_loss / len(keys), time.monotonic() - t0)
        if val_groups and history.rows[-1]["ndcg10"] > best[0]:
            best = (history.rows[-1]["ndcg10"], params.copy())

    best_params = best[1] if val_groups else params
    return best_params, params, history


# ---------------------------------------------------------------------------
# seeded random hyperparameter search
# ---------------------------------------------------------------------------

DEFAULT_SEARCH_SPACE = {
    "text_dim": [64, 128],
    "node_dim": [16, 32],
    "pooling": ["mean", "max", "sum"],
    "learning_rate": (1e-5, 1e-3),  # log-uniform
}


def random_search(
    train_subs,
    val_subs,
    features,
    num_relations,
    trials: int = 8,
    seed: int = 0,
    space: dict | None = None,
    base_model: ModelConfig | None = None,
    base_train: TrainConfig | None = None,
):
    """Best (model_config, train_config, val ndcg) over seeded random draws."""
    if trials < 1:
        raise ValueError("need at least one trial")
    space = space or DEFAULT_SEARCH_SPACE
    base_model = base_model or ModelConfig()
    base_train = base_train or TrainConfig()
    rng = np.random.default_rng(seed)

    results = []
    for trial in range(trials):
        lo, hi = space["learning_rate"]
        model_cfg = ModelConfig(**{
            **base_model.to_dict(),
            "text_dim": int(rng.choice(space["text_dim"])),
            "node_dim": int(rng.choice(space["node_dim"])),
            "pooling": str(rng.choice(space["pooling"])),
        })
        train_cfg = TrainConfig(**{
            **base_train.to_dict(),
            "learning_rate": float(np.exp(rng.uniform(np.log(lo), np.log(hi)))),
            "seed": base_train.seed + trial,
        })
        _, _, history = train(train_subs, val_subs, model_cfg, train_cfg,
                              features, num_relations)
        val = history.ndcg(train_cfg.epochs, "validation")
        results.append((val, model_cfg, train_cfg))
    results.sort(key=lambda r: -r[0])
    return results[0], results


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"OKRA"
VERSION = 1


def save_checkpoint(params: ModelParams, config_digest: str, path) -> None:
    """Header (magic, version, digest) then float64 blobs in declaration order."""
    digest_bytes = config_digest.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(digest_bytes)))
        fh.write(digest_bytes)
        fh.write(struct.pack("<Q", params.count()))
        for _, tensor in params.items():
            fh.write(tensor.data.astype("<f8").tobytes())


def load_checkpoint(path, template: ModelParams, expected_digest: str) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DigestMismatch("not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise DigestMismatch(f"unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<I", fh.read(4))
        digest = fh.read(dlen).decode("ascii")
        if digest != expected_digest:
            raise DigestMismatch(
                f"checkpoint digest {digest[:12]}... does not match "
                f"config digest {expected_digest[:12]}...")
        (count,) = struct.unpack("<Q", fh.read(8))
        if count != template.count():
            raise DigestMismatch("parameter count mismatch")
        params = template.copy()
        for _, tensor in params.items():
            raw = fh.read(tensor.data.size * 8)
            tensor.data[:] = np.frombuffer(raw, dtype="<f8").reshape(tensor.data.shape)
    return params
