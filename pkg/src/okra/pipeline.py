"""File-based pipeline stages behind the command line.

Every stage reads its inputs from the run directory and writes artifacts
tagged with the digest of the resolved configuration, so artifacts from
different configurations cannot be mixed silently.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import kg
from .baselines import TfIdfIndex, init_gt_params, make_gt_forward, random_ranker, tfidf_rank
from .kg import Column, EntityKind, InversePair, SubclassPropagate, Table, Transitive
from .metrics import EvalReport, RankedList, evaluate, rank_by_score, write_plot_data
from .model import ModelConfig, extract_explanation, forward_one, init_params
from .sampling import (
    read_corpus,
    read_features,
    sample_pair_subgraph,
    split_by_candidate,
    subgraph_to_json,
    write_corpus,
    write_features,
)
from .synth import LABEL_SCHEMES, SynthConfig, generate, world_to_tables
from .training import (
    TrainConfig,
    group_corpus,
    load_checkpoint,
    save_checkpoint,
    train,
)


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


class ArtifactMismatch(RuntimeError):
    pass


BASELINE_NAMES = ("random", "tfidf", "gtrans1", "gtrans2", "ablation")

# (type, default) per key; None default means "required only if section used"
CONFIG_SCHEMA: dict[str, dict[str, tuple]] = {
    "data": {
        "n_candidates": (int, 100),
        "n_vacancies": (int, 200),
        "n_skills": (int, 56),
        "n_experience_areas": (int, 40),
        "n_locations": (int, 40),
        "n_languages": (int, 3),
        "n_licenses": (int, 2),
        "n_job_types": (int, 12),
        "rural_vacancy_fraction": (float, 0.6582),
        "rural_candidate_fraction": (float, 0.6),
        "latent_dim": (int, 6),
        "label_scheme": (str, "proprietary"),
        "stakeholder_divergence": (float, 0.6),
        "fairness_bias": (float, 0.0),
        "pairs_per_candidate": (int, 14),
        "negative_per_candidate": (int, 4),
        "skills_per_candidate": (int, 6),
        "skills_per_vacancy": (int, 5),
        "areas_per_candidate": (int, 5),
        "areas_per_vacancy": (int, 4),
        "filler_tokens_per_doc": (int, 16),
        "text_feature_fraction": (float, 0.5),
        "text_noise_mentions": (int, 3),
        "seed": (int, 0),
    },
    "graph": {
        "rules": (str, "inverse:has_skill:skill_held_by,"
                       "inverse:requires_skill:skill_required_by,"
                       "inverse:has_experience:experience_held_by,"
                       "inverse:requires_experience:experience_required_by,"
                       "transitive:subclass_of,"
                       "subclass:subclass_of:has_job_type"),
    },
    "sampler": {
        "k": (int, 7),
        "walks_per_anchor": (int, 4),
        "train_ratio": (float, 0.8),
        "validation_ratio": (float, 0.1),
        "test_ratio": (float, 0.1),
    },
    "model": {
        "text_dim": (int, 16),
        "node_dim": (int, 16),
        "channels": (int, 4),
        "pooling": (str, "sum"),
        "hash_buckets": (int, 256),
        "token_limit": (int, 96),
        "leaky_slope": (float, 0.2),
        "score_bound": (float, 100.0),
        "fuse_epsilon": (float, 1.0),
    },
    "train": {
        "learning_rate": (float, 0.006),
        "epochs": (int, 12),
        "sigma": (float, 1.0),
        "ndcg_cutoff": (int, 10),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "groups_per_step": (int, 8),
        "group_by": (str, "candidate"),
    },
    "eval": {
        "ks": (str, "3,5,10"),
        "top_k": (int, 10),
    },
}

TABLE_SCHEMAS: dict[str, list[Column]] = {
    "candidates": [Column("candidate", EntityKind.Candidate, declares=True),
                   Column("region", attr=True)],
    "vacancies": [Column("vacancy", EntityKind.Vacancy, declares=True),
                  Column("region", attr=True)],
    "skills": [Column("skill", EntityKind.Skill, declares=True)],
    "experience_areas": [Column("area", EntityKind.WorkExperience, declares=True)],
    "locations": [Column("location", EntityKind.Location, declares=True),
                  Column("region", attr=True)],
    "languages": [Column("language", EntityKind.Language, declares=True)],
    "licenses": [Column("license", EntityKind.License, declares=True)],
    "job_types": [Column("job_type", EntityKind.JobType, declares=True)],
    "cv_texts": [Column("textdoc", EntityKind.TextDoc, declares=True),
                 Column("body", payload=True)],
    "vacancy_texts": [Column("textdoc", EntityKind.TextDoc, declares=True),
                      Column("body", payload=True)],
    "job_type_hierarchy": [Column("child", EntityKind.JobType),
                           Column("parent", EntityKind.JobType)],
    "candidate_skills": [Column("candidate", EntityKind.Candidate),
                         Column("skill", EntityKind.Skill)],
    "vacancy_skills": [Column("vacancy", EntityKind.Vacancy),
                       Column("skill", EntityKind.Skill)],
    "candidate_experience": [Column("candidate", EntityKind.Candidate),
                             Column("area", EntityKind.WorkExperience)],
    "vacancy_experience": [Column("vacancy", EntityKind.Vacancy),
                           Column("area", EntityKind.WorkExperience)],
    "candidate_languages": [Column("candidate", EntityKind.Candidate),
                            Column("language", EntityKind.Language)],
    "candidate_licenses": [Column("candidate", EntityKind.Candidate),
                           Column("license", EntityKind.License)],
    "candidate_locations": [Column("candidate", EntityKind.Candidate),
                            Column("location", EntityKind.Location)],
    "vacancy_locations": [Column("vacancy", EntityKind.Vacancy),
                          Column("location", EntityKind.Location)],
    "vacancy_job_types": [Column("vacancy", EntityKind.Vacancy),
                          Column("job_type", EntityKind.JobType)],
    "candidate_cvs": [Column("candidate", EntityKind.Candidate),
                      Column("textdoc", EntityKind.TextDoc)],
    "vacancy_text_links": [Column("vacancy", EntityKind.Vacancy),
                           Column("textdoc", EntityKind.TextDoc)],
}

TABLE_RELATIONS = {
    "job_type_hierarchy": "subclass_of",
    "candidate_skills": "has_skill",
    "vacancy_skills": "requires_skill",
    "candidate_experience": "has_experience",
    "vacancy_experience": "requires_experience",
    "candidate_languages": "speaks",
    "candidate_licenses": "has_license",
    "candidate_locations": "located_in",
    "vacancy_locations": "located_in",
    "vacancy_job_types": "has_job_type",
    "candidate_cvs": "has_cv",
    "vacancy_text_links": "has_text",
}


@dataclass
class RunConfig:
    values: dict[str, dict]
    digest: str
    base_dir: Path

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**self.values["data"])

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.values["model"])

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**self.values["train"], seed=seed)

    def seed_for(self, purpose: str) -> int:
        digest = hashlib.blake2b(
            f"{self.values['data']['seed']}:{purpose}".encode(), digest_size=8
        ).digest()
        return int.from_bytes(digest, "little") % (2**31)

    def rules(self) -> list:
        rules = []
        spec = self.values["graph"]["rules"]
        for item in filter(None, (s.strip() for s in spec.split(","))):
            parts = item.split(":")
            if parts[0] == "transitive" and len(parts) == 2:
                rules.append(Transitive(parts[1]))
            elif parts[0] == "inverse" and len(parts) == 3:
                rules.append(InversePair(parts[1], parts[2]))
            elif parts[0] == "subclass" and len(parts) == 3:
                rules.append(SubclassPropagate(parts[1], parts[2]))
            else:
                raise ConfigError(f"unparseable inference rule {item!r}")
        return rules

    def eval_ks(self) -> list[int]:
        return [int(k) for k in self.values["eval"]["ks"].split(",")]


def _coerce(section: str, key: str, raw: str):
    typ, _ = CONFIG_SCHEMA[section][key]
    try:
        if typ is bool:
            return raw.lower() in ("1", "true", "yes")
        return typ(raw)
    except ValueError as err:
        raise ConfigError(f"[{section}] {key}: {err}") from None


def load_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as err:
        raise ConfigError(str(err)) from None

    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in CONFIG_SCHEMA.items()}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigError(f"unknown config key [{section}] {key}")
            values[section][key] = _coerce(section, key, raw)
    if seed_override is not None:
        values["data"]["seed"] = seed_override

    canonical = json.dumps(values, sort_keys=True)
    digest = hashlib.sha256(canonical.encode()).hexdigest()
    return RunConfig(values=values, digest=digest, base_dir=path.parent.resolve())


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("OKRA_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# artifact bookkeeping
# ---------------------------------------------------------------------------

def _write_manifest(out: Path, config: RunConfig, stage: str) -> None:
    manifest = {"digest": config.digest, "seed": config["data"]["seed"], "stage": stage}
    (out / f"manifest_{stage}.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")


def _check_manifest(out: Path, config: RunConfig, stage: str) -> None:
    path = out / f"manifest_{stage}.json"
    if not path.is_file():
        raise MissingArtifact(f"stage {stage!r} has not produced {path.name}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("digest") != config.digest:
        raise ArtifactMismatch(
            f"artifacts in {out} were produced under a different configuration")


def _require(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise MissingArtifact(f"{path.name} missing; run the {producer!r} stage first")
    return path


# ---------------------------------------------------------------------------
# stage: generate
# ---------------------------------------------------------------------------

def _write_table_tsv(table: Table, path: Path) -> None:
    lines = ["\t".join(c.name for c in table.columns)]
    for row in table.rows:
        lines.append("\t".join(kg._escape(str(cell)) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_table_tsv(name: str, path: Path) -> Table:
    columns = TABLE_SCHEMAS[name]
    rows = []
    with open(path, encoding="utf-8") as fh:
        next(fh)  # header
        for line in fh:
            line = line.rstrip("\n")
            if line:
                rows.append(tuple(kg._unescape(cell) for cell in line.split("\t")))
    return Table(name, columns, rows, relation=TABLE_RELATIONS.get(name))


def cmd_generate(config: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    world = generate(config.synth_config())
    tables = world_to_tables(world)
    for table in tables:
        _write_table_tsv(table, out / f"{table.name}.tsv")
    label_lines = [f"{c}\t{v}\t{l}" for c, v, l in world.labels]
    (out / "labels.tsv").write_text("\n".join(label_lines) + "\n", encoding="utf-8")
    _write_manifest(out, config, "generate")
    return {"tables": [t.name for t in tables], "labels": len(world.labels)}


# ---------------------------------------------------------------------------
# stage: build-kg
# ---------------------------------------------------------------------------

def cmd_build_kg(config: RunConfig, out: Path) -> dict:
    _check_manifest(out, config, "generate")
    tables = []
    for name in TABLE_SCHEMAS:
        path = out / f"{name}.tsv"
        if path.is_file():
            tables.append(_read_table_tsv(name, path))
    graph = kg.build_graph(tables)
    closed = kg.apply_inference(graph, config.rules())
    kg.dump_entities(closed, out / "entities.tsv")
    kg.dump_triples(closed, out / "triples.tsv")
    _write_manifest(out, config, "build-kg")
    return {"entities": len(closed.entities), "triples": len(closed.triples)}


# ---------------------------------------------------------------------------
# stage: sample
# ---------------------------------------------------------------------------

def _load_labels(out: Path) -> list[tuple[str, str, int]]:
    path = _require(out / "labels.tsv", "generate")
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line:
            c, v, l = line.split("\t")
            rows.append((c, v, int(l)))
    return rows


def _load_graph(out: Path):
    return kg.load_graph(
        _require(out / "entities.tsv", "build-kg"),
        _require(out / "triples.tsv", "build-kg"),
    )


def cmd_sample(config: RunConfig, out: Path) -> dict:
    _check_manifest(out, config, "build-kg")
    graph = _load_graph(out)
    labels = _load_labels(out)
    sampler_cfg = config["sampler"]
    ratios = (sampler_cfg["train_ratio"], sampler_cfg["validation_ratio"],
              sampler_cfg["test_ratio"])
    candidates = sorted({c for c, _, _ in labels})
    splits = split_by_candidate(candidates, ratios, config.seed_for("split"))

    seed = config.seed_for("walks")

    def sample_one(row):
        c, v, label = row
        return sample_pair_subgraph(
            graph, c, v, k=sampler_cfg["k"],
            walks_per_anchor=sampler_cfg["walks_per_anchor"],
            rng_seed=seed, label=label)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            subs = list(pool.map(sample_one, labels))
    else:
        subs = [sample_one(row) for row in labels]

    write_corpus(subs, out / "subgraphs.jsonl")
    write_features(graph, out / "features.json")
    (out / "splits.json").write_text(json.dumps(
        {"train": splits.train, "validation": splits.validation,
         "test": splits.test}, sort_keys=True, indent=2), encoding="utf-8")
    (out / "corpus_meta.json").write_text(json.dumps({
        "relations": [r.name for r in graph.relations],
        "digest": config.digest,
        "subgraphs": len(subs),
    }, sort_keys=True, indent=2), encoding="utf-8")
    _write_manifest(out, config, "sample")
    return {"subgraphs": len(subs), "splits": {
        "train": len(splits.train), "validation": len(splits.validation),
        "test": len(splits.test)}}


# ---------------------------------------------------------------------------
# corpus loading shared by train / evaluate / explain / baselines
# ---------------------------------------------------------------------------

@dataclass
class Corpus:
    subs_by_split: dict[str, list]
    features: dict
    relations: list[str]
    splits: dict[str, list[str]]


def load_corpus(config: RunConfig, out: Path) -> Corpus:
    _check_manifest(out, config, "sample")
    subs = read_corpus(_require(out / "subgraphs.jsonl", "sample"))
    features = read_features(_require(out / "features.json", "sample"))
    splits = json.loads(_require(out / "splits.json", "sample").read_text())
    meta = json.loads(_require(out / "corpus_meta.json", "sample").read_text())
    split_of = {}
    for name, keys in splits.items():
        for key in keys:
            split_of[key] = name
    by_split = {"train": [], "validation": [], "test": []}
    for sub in subs:
        by_split[split_of[sub.origin[0]]].append(sub)
    return Corpus(subs_by_split=by_split, features=features,
                  relations=meta["relations"], splits=splits)


def _ranked_lists(groups, scorer, features) -> list[RankedList]:
    lists = []
    for cand_key, subs in sorted(groups.items()):
        scores = [scorer(sub) for sub in subs]
        labels = [sub.label for sub in subs]
        in_order, order = rank_by_score(scores, labels)
        region = features.get(f"candidate:{cand_key}", {}).get("attrs", {}).get(
            "region", "unknown")
        lists.append(RankedList(
            candidate_key=cand_key,
            vacancy_keys=[subs[i].origin[1] for i in order],
            scores=sorted(scores, reverse=True),
            labels=in_order,
            group=region,
        ))
    return lists


def vacancy_regions(features: dict) -> dict[str, str]:
    return {
        ref.split(":", 1)[1]: info.get("attrs", {}).get("region", "unknown")
        for ref, info in features.items() if ref.startswith("vacancy:")
    }


# ---------------------------------------------------------------------------
# stage: train
# ---------------------------------------------------------------------------

def cmd_train(config: RunConfig, out: Path) -> dict:
    corpus = load_corpus(config, out)
    model_cfg = config.model_config()
    train_cfg = config.train_config(config.seed_for("train"))
    best, _, history = train(
        corpus.subs_by_split["train"], corpus.subs_by_split["validation"],
        model_cfg, train_cfg, corpus.features, len(corpus.relations))
    save_checkpoint(best, config.digest, out / "checkpoint.okra")
    history.write_csv(out / "history.csv")
    _write_manifest(out, config, "train")
    final_val = max((r["ndcg10"] for r in history.rows if r["split"] == "validation"),
                    default=0.0)
    return {"best_validation_ndcg10": final_val, "epochs": train_cfg.epochs}


def _load_model(config: RunConfig, out: Path, corpus: Corpus):
    model_cfg = config.model_config()
    template = init_params(model_cfg, len(corpus.relations), seed=0)
    params = load_checkpoint(_require(out / "checkpoint.okra", "train"),
                             template, config.digest)
    return model_cfg, params


# ---------------------------------------------------------------------------
# stage: evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(config: RunConfig, out: Path) -> dict:
    corpus = load_corpus(config, out)
    model_cfg, params = _load_model(config, out, corpus)
    groups = group_corpus(corpus.subs_by_split["test"])
    scorer = lambda sub: forward_one(sub, params, model_cfg, corpus.features).fused.item()
    lists = _ranked_lists(groups, scorer, corpus.features)
    report = evaluate(lists, vacancy_regions(corpus.features),
                      ks=config.eval_ks(), model="okra",
                      config_digest=config.digest)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_plot_data([report], out / "plotdata.csv")
    _write_manifest(out, config, "evaluate")
    return {"ndcg": report.ndcg, "delta_p": report.delta_p, "delta_v": report.delta_v}


# ---------------------------------------------------------------------------
# stage: explain
# ---------------------------------------------------------------------------

def cmd_explain(config: RunConfig, out: Path) -> dict:
    corpus = load_corpus(config, out)
    model_cfg, params = _load_model(config, out, corpus)
    test_subs = corpus.subs_by_split["test"]
    with open(out / "explanations.jsonl", "w", encoding="utf-8") as fh:
        for sub in test_subs:
            report = extract_explanation(sub, params, model_cfg, corpus.features)
            fh.write(json.dumps({
                "origin": list(sub.origin),
                "label": sub.label,
                "channels": report.channels,
                "scores": report.scores,
            }, sort_keys=True) + "\n")
    _write_manifest(out, config, "explain")
    return {"pairs": len(test_subs)}


# ---------------------------------------------------------------------------
# stage: baseline
# ---------------------------------------------------------------------------

def _baseline_report(config, corpus, name, scorer) -> EvalReport:
    groups = group_corpus(corpus.subs_by_split["test"])
    lists = _ranked_lists(groups, scorer, corpus.features)
    return evaluate(lists, vacancy_regions(corpus.features), ks=config.eval_ks(),
                    model=name, config_digest=config.digest)


def _text_of(features, ref) -> str:
    return features.get(ref, {}).get("payload", "")


def cmd_baseline(config: RunConfig, out: Path, name: str) -> dict:
    if name not in BASELINE_NAMES:
        raise ConfigError(f"unknown baseline {name!r}; pick from {BASELINE_NAMES}")
    corpus = load_corpus(config, out)
    features = corpus.features

    if name == "random":
        seed = config.seed_for("baseline_random")
        test_groups = group_corpus(corpus.subs_by_split["test"])
        score_by_pair = {}
        for cand, subs in test_groups.items():
            ranked = random_ranker(cand, [s.origin[1] for s in subs], seed)
            score_by_pair.update({(cand, vac): score for vac, score in ranked})

        def scorer(sub):
            return score_by_pair[sub.origin]

    elif name == "tfidf":
        train_subs = corpus.subs_by_split["train"]
        docs = []
        seen = set()
        for sub in train_subs:
            for ref in (f"text_doc:cv_{sub.origin[0]}", f"text_doc:text_{sub.origin[1]}"):
                if ref not in seen:
                    seen.add(ref)
                    docs.append(_text_of(features, ref))
        index = TfIdfIndex().fit(docs)
        cv_vecs = {}

        def scorer(sub):
            cand, vac = sub.origin
            if cand not in cv_vecs:
                cv_vecs[cand] = index.vector(_text_of(features, f"text_doc:cv_{cand}"))
            vac_vec = index.vector(_text_of(features, f"text_doc:text_{vac}"))
            from .baselines import cosine
            return cosine(cv_vecs[cand], vac_vec)

    else:  # gtrans1 / gtrans2 / ablation share one code path
        depth = 1 if name == "gtrans1" else 2
        forward_fn = make_gt_forward(depth)
        model_cfg = config.model_config()
        train_cfg = config.train_config(config.seed_for("train"))
        best, _, _ = train(
            corpus.subs_by_split["train"], corpus.subs_by_split["validation"],
            model_cfg, train_cfg, features, len(corpus.relations),
            forward_fn=forward_fn,
            init_fn=lambda cfg, nrel, seed: init_gt_params(cfg, nrel, depth, seed))

        def scorer(sub):
            return forward_fn(sub, best, model_cfg, features).fused.item()

    report = _baseline_report(config, corpus, name, scorer)
    (out / f"report_{name}.json").write_text(report.to_json(), encoding="utf-8")
    return {"name": name, "ndcg": report.ndcg}


STAGES = {
    "build-kg": cmd_build_kg,
    "sample": cmd_sample,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
}
