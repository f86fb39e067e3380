"""Synthetic recruitment data with planted two-sided match structure.

Candidates and vacancies get latent vectors on the unit sphere. The
candidate-side affinity is u.v; the company side sees the vacancy latent
through a rotation controlled by the divergence knob, so the two sides
agree at divergence 0 and drift apart as it grows. Labels discretize the
harmonic combination of both sides, making the lower side dominate.
Observable features (skills, experience areas, texts, locations) are
derived from the same latents so learners can recover the signal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kg import Column, EntityKind, Table

# quantile cuts of combined affinity -> labels, bottom mass is rejections
LABEL_SCHEMES = {
    "proprietary": {
        "labels": [0, 1, 2, 3, 4, 5],
        "cuts": [0.30, 0.60, 0.80, 0.90, 0.98],
        "negative_label": -1,
        "range": (-1, 5),
    },
    "zhaopin": {
        "labels": [0, 1, 2, 3],
        "cuts": [0.50, 0.80, 0.95],
        "negative_label": 0,
        "range": (0, 3),
    },
}


@dataclass
class SynthConfig:
    n_candidates: int = 100
    n_vacancies: int = 200
    n_skills: int = 56
    n_experience_areas: int = 40
    n_locations: int = 40
    n_languages: int = 3
    n_licenses: int = 2
    n_job_types: int = 12
    rural_vacancy_fraction: float = 0.6582
    rural_candidate_fraction: float = 0.6
    latent_dim: int = 6
    label_scheme: str = "proprietary"
    stakeholder_divergence: float = 0.6
    fairness_bias: float = 0.0
    pairs_per_candidate: int = 14
    negative_per_candidate: int = 4
    skills_per_candidate: int = 6
    skills_per_vacancy: int = 5
    areas_per_candidate: int = 5
    areas_per_vacancy: int = 4
    filler_tokens_per_doc: int = 16
    text_feature_fraction: float = 0.5  # share of skills/areas mentioned in texts
    text_noise_mentions: int = 3  # aspirational skill/area tokens per document
    seed: int = 0

    def __post_init__(self):
        if self.label_scheme not in LABEL_SCHEMES:
            raise ValueError(f"unknown label scheme {self.label_scheme!r}")
        if not (0.0 <= self.rural_vacancy_fraction <= 1.0
                and 0.0 <= self.rural_candidate_fraction <= 1.0):
            raise ValueError("rural fractions must lie in [0, 1]")
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be at least 2")


@dataclass
class SynthWorld:
    config: SynthConfig
    candidates: list[dict]  # key, region, location, skills, areas, languages, licenses, cv
    vacancies: list[dict]  # key, region, location, skills, areas, job_type, text
    skills: list[str]
    areas: list[str]
    locations: list[dict]  # key, region
    languages: list[str]
    licenses: list[str]
    job_types: list[tuple[str, str | None]]  # (key, parent key)
    labels: list[tuple[str, str, int]]  # includes negative samples
    cand_latent: np.ndarray
    vac_latent: np.ndarray
    cand_affinity: dict[tuple[str, str], float] = field(default_factory=dict)
    comp_affinity: dict[tuple[str, str], float] = field(default_factory=dict)
    combined_affinity: dict[tuple[str, str], float] = field(default_factory=dict)
    skill_affinity_correlation: float = 0.0


def _unit_rows(rng, n, dim):
    x = rng.normal(size=(n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _pairwise_rotation(dim, angle):
    """Block rotation by `angle` in each consecutive coordinate plane."""
    rot = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, dim - 1, 2):
        rot[i, i] = c
        rot[i, i + 1] = -s
        rot[i + 1, i] = s
        rot[i + 1, i + 1] = c
    return rot


def _harmonic_combine(a, b):
    """Harmonic mean of affinities shifted to (0, 2]; lower side dominates."""
    ap, bp = a + 1.0, b + 1.0
    denom = np.maximum(ap + bp, 1e-12)
    return 2.0 * ap * bp / denom - 1.0


def _top_indices(scores, count):
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:count])


def _regions(rng, n, rural_fraction):
    n_rural = int(round(n * rural_fraction))
    regions = np.array(["rural"] * n_rural + ["urban"] * (n - n_rural))
    rng.shuffle(regions)
    return list(regions)


def _document(rng, lead, skills, areas, place, extras, n_filler, coverage=1.0,
              noise_pool=(), n_noise=0):
    """Templated token text; mentions only part of the structured features
    (documents stay incomplete) plus a few aspirational mentions that are
    not backed by the structured data."""
    keep_s = max(1, int(round(coverage * len(skills)))) if skills else 0
    keep_a = max(1, int(round(coverage * len(areas)))) if areas else 0
    tokens = list(lead)
    tokens += skills[:keep_s] + areas[:keep_a] + [place] + extras
    if n_noise and len(noise_pool):
        tokens += [noise_pool[int(i)] for i in rng.integers(0, len(noise_pool), n_noise)]
    tokens += [f"filler{int(rng.integers(200))}" for _ in range(n_filler)]
    return " ".join(tokens)


def generate(config: SynthConfig) -> SynthWorld:
    rng = np.random.default_rng(config.seed)
    scheme = LABEL_SCHEMES[config.label_scheme]

    cand_latent = _unit_rows(rng, config.n_candidates, config.latent_dim)
    vac_latent = _unit_rows(rng, config.n_vacancies, config.latent_dim)
    rotation = _pairwise_rotation(
        config.latent_dim, config.stakeholder_divergence * np.pi / 2.0
    )
    vac_rotated = vac_latent @ rotation.T

    skill_dirs = _unit_rows(rng, config.n_skills, config.latent_dim)
    area_dirs = _unit_rows(rng, config.n_experience_areas, config.latent_dim)

    skills = [f"skill{i}" for i in range(config.n_skills)]
    areas = [f"area{i}" for i in range(config.n_experience_areas)]
    languages = [f"lang{i}" for i in range(config.n_languages)]
    licenses = [f"license{i}" for i in range(config.n_licenses)]

    loc_regions = _regions(rng, config.n_locations, 0.5)
    locations = [{"key": f"place{i}", "region": loc_regions[i]}
                 for i in range(config.n_locations)]
    loc_by_region = {
        "rural": [l["key"] for l in locations if l["region"] == "rural"],
        "urban": [l["key"] for l in locations if l["region"] == "urban"],
    }
    for region, pool in loc_by_region.items():
        if not pool:  # degenerate location split still needs a home per region
            loc_by_region[region] = [locations[0]["key"]]

    # shallow two-level job type tree
    n_roots = max(1, config.n_job_types // 4)
    job_types: list[tuple[str, str | None]] = []
    for i in range(config.n_job_types):
        if i < n_roots:
            job_types.append((f"jobtype{i}", None))
        else:
            job_types.append((f"jobtype{i}", f"jobtype{int(rng.integers(n_roots))}"))
    leaf_types = [k for k, parent in job_types if parent is not None] or [job_types[0][0]]

    cand_regions = _regions(rng, config.n_candidates, config.rural_candidate_fraction)
    vac_regions = _regions(rng, config.n_vacancies, config.rural_vacancy_fraction)

    candidates = []
    for i in range(config.n_candidates):
        key = f"cand{i}"
        my_skills = [skills[j] for j in
                     _top_indices(skill_dirs @ cand_latent[i], config.skills_per_candidate)]
        my_areas = [areas[j] for j in
                    _top_indices(area_dirs @ cand_latent[i], config.areas_per_candidate)]
        my_langs = sorted(rng.choice(languages, size=int(rng.integers(1, 3)),
                                     replace=False).tolist())
        my_lics = sorted(rng.choice(licenses, size=int(rng.integers(0, 2)),
                                    replace=False).tolist())
        place = loc_by_region[cand_regions[i]][
            int(rng.integers(len(loc_by_region[cand_regions[i]])))]
        cv = _document(
            rng, ["seasoned", "professional", "seeking", "work"],
            my_skills, my_areas, place, my_langs, config.filler_tokens_per_doc,
            coverage=config.text_feature_fraction,
            noise_pool=skills + areas, n_noise=config.text_noise_mentions,
        )
        candidates.append({
            "key": key, "region": cand_regions[i], "location": place,
            "skills": my_skills, "areas": my_areas, "languages": my_langs,
            "licenses": my_lics, "cv": cv,
        })

    vacancies = []
    for j in range(config.n_vacancies):
        key = f"vac{j}"
        req_skills = [skills[s] for s in
                      _top_indices(skill_dirs @ vac_latent[j], config.skills_per_vacancy)]
        req_areas = [areas[a] for a in
                     _top_indices(area_dirs @ vac_rotated[j], config.areas_per_vacancy)]
        place = loc_by_region[vac_regions[j]][
            int(rng.integers(len(loc_by_region[vac_regions[j]])))]
        job_type = leaf_types[int(rng.integers(len(leaf_types)))]
        text = _document(
            rng, ["open", "position", "candidates", "needed"],
            req_skills, req_areas, place, [job_type], config.filler_tokens_per_doc,
            coverage=config.text_feature_fraction,
            noise_pool=skills + areas, n_noise=config.text_noise_mentions,
        )
        vacancies.append({
            "key": key, "region": vac_regions[j], "location": place,
            "skills": req_skills, "areas": req_areas, "job_type": job_type,
            "text": text,
        })

    # labeled pairs: uniform vacancies per candidate, labels from global quantiles
    cand_aff = cand_latent @ vac_latent.T
    comp_aff = cand_latent @ vac_rotated.T
    combined = _harmonic_combine(cand_aff, comp_aff)
    if config.fairness_bias:
        urban_cols = np.array([r == "urban" for r in vac_regions])
        combined = combined + config.fairness_bias * urban_cols[None, :]

    pair_index: list[tuple[int, int]] = []
    for i in range(config.n_candidates):
        chosen = rng.choice(config.n_vacancies,
                            size=min(config.pairs_per_candidate, config.n_vacancies),
                            replace=False)
        pair_index.extend((i, int(j)) for j in sorted(chosen))
    pair_scores = np.array([combined[i, j] for i, j in pair_index])
    thresholds = np.quantile(pair_scores, scheme["cuts"])

    labels: list[tuple[str, str, int]] = []
    labeled_set = set()
    for (i, j), score in zip(pair_index, pair_scores):
        label = scheme["labels"][int(np.searchsorted(thresholds, score, side="right"))]
        labels.append((f"cand{i}", f"vac{j}", int(label)))
        labeled_set.add((i, j))

    # negatives: uniform among pairs below the positive-label cutoff, so the
    # planted affinity ordering stays consistent with zero-gain rejections
    positive_floor = thresholds[0]
    for i in range(config.n_candidates):
        eligible = [j for j in range(config.n_vacancies)
                    if (i, j) not in labeled_set and combined[i, j] < positive_floor]
        take = min(config.negative_per_candidate, len(eligible))
        if take:
            chosen = rng.choice(len(eligible), size=take, replace=False)
            for idx in sorted(chosen):
                j = eligible[int(idx)]
                labels.append((f"cand{i}", f"vac{j}", scheme["negative_label"]))
                labeled_set.add((i, j))

    shared = np.array([
        len(set(candidates[i]["skills"]) & set(vacancies[j]["skills"]))
        for i, j in pair_index
    ], dtype=float)
    cand_side = np.array([cand_aff[i, j] for i, j in pair_index])
    corr = float(np.corrcoef(shared, cand_side)[0, 1]) if len(pair_index) > 2 else 0.0

    world = SynthWorld(
        config=config,
        candidates=candidates,
        vacancies=vacancies,
        skills=skills,
        areas=areas,
        locations=locations,
        languages=languages,
        licenses=licenses,
        job_types=job_types,
        labels=labels,
        cand_latent=cand_latent,
        vac_latent=vac_latent,
        skill_affinity_correlation=corr,
    )
    for i, j in pair_index:
        pair = (f"cand{i}", f"vac{j}")
        world.cand_affinity[pair] = float(cand_aff[i, j])
        world.comp_affinity[pair] = float(comp_aff[i, j])
        world.combined_affinity[pair] = float(combined[i, j])
    if len(pair_index) >= 200 and corr < 0.5:
        raise AssertionError(
            f"shared-skill/affinity correlation {corr:.3f} below planted floor"
        )
    return world


def world_to_tables(world: SynthWorld) -> list[Table]:
    """Tables in the shape build_graph consumes; lossless for graph fields."""
    c = EntityKind.Candidate
    v = EntityKind.Vacancy

    def link(name, kind_a, col_a, kind_b, col_b, rows, relation):
        return Table(name, [Column(col_a, kind_a), Column(col_b, kind_b)],
                     rows, relation=relation)

    tables = [
        Table("candidates",
              [Column("candidate", c, declares=True), Column("region", attr=True)],
              [(cand["key"], cand["region"]) for cand in world.candidates]),
        Table("vacancies",
              [Column("vacancy", v, declares=True), Column("region", attr=True)],
              [(vac["key"], vac["region"]) for vac in world.vacancies]),
        Table("skills", [Column("skill", EntityKind.Skill, declares=True)],
              [(s,) for s in world.skills]),
        Table("experience_areas",
              [Column("area", EntityKind.WorkExperience, declares=True)],
              [(a,) for a in world.areas]),
        Table("locations",
              [Column("location", EntityKind.Location, declares=True),
               Column("region", attr=True)],
              [(l["key"], l["region"]) for l in world.locations]),
        Table("languages", [Column("language", EntityKind.Language, declares=True)],
              [(l,) for l in world.languages]),
        Table("licenses", [Column("license", EntityKind.License, declares=True)],
              [(l,) for l in world.licenses]),
        Table("job_types", [Column("job_type", EntityKind.JobType, declares=True)],
              [(k,) for k, _ in world.job_types]),
        Table("cv_texts",
              [Column("textdoc", EntityKind.TextDoc, declares=True),
               Column("body", payload=True)],
              [(f"cv_{cand['key']}", cand["cv"]) for cand in world.candidates]),
        Table("vacancy_texts",
              [Column("textdoc", EntityKind.TextDoc, declares=True),
               Column("body", payload=True)],
              [(f"text_{vac['key']}", vac["text"]) for vac in world.vacancies]),
    ]

    hierarchy_rows = [(child, parent) for child, parent in world.job_types if parent]
    if hierarchy_rows:
        tables.append(link("job_type_hierarchy", EntityKind.JobType, "child",
                           EntityKind.JobType, "parent", hierarchy_rows,
                           relation="subclass_of"))

    def rows(entries, field_name):
        return [(e["key"], item) for e in entries for item in e[field_name]]

    tables += [
        link("candidate_skills", c, "candidate", EntityKind.Skill, "skill",
             rows(world.candidates, "skills"), "has_skill"),
        link("vacancy_skills", v, "vacancy", EntityKind.Skill, "skill",
             rows(world.vacancies, "skills"), "requires_skill"),
        link("candidate_experience", c, "candidate", EntityKind.WorkExperience, "area",
             rows(world.candidates, "areas"), "has_experience"),
        link("vacancy_experience", v, "vacancy", EntityKind.WorkExperience, "area",
             rows(world.vacancies, "areas"), "requires_experience"),
        link("candidate_languages", c, "candidate", EntityKind.Language, "language",
             rows(world.candidates, "languages"), "speaks"),
        link("candidate_licenses", c, "candidate", EntityKind.License, "license",
             rows(world.candidates, "licenses"), "has_license"),
        link("candidate_locations", c, "candidate", EntityKind.Location, "location",
             [(cand["key"], cand["location"]) for cand in world.candidates],
             "located_in"),
        link("vacancy_locations", v, "vacancy", EntityKind.Location, "location",
             [(vac["key"], vac["location"]) for vac in world.vacancies],
             "located_in"),
        link("vacancy_job_types", v, "vacancy", EntityKind.JobType, "job_type",
             [(vac["key"], vac["job_type"]) for vac in world.vacancies],
             "has_job_type"),
        link("candidate_cvs", c, "candidate", EntityKind.TextDoc, "textdoc",
             [(cand["key"], f"cv_{cand['key']}") for cand in world.candidates],
             "has_cv"),
        link("vacancy_text_links", v, "vacancy", EntityKind.TextDoc, "textdoc",
             [(vac["key"], f"text_{vac['key']}") for vac in world.vacancies],
             "has_text"),
    ]
    return tables
