import numpy as np
import pytest

from okra.kg import EntityKind, build_graph
from okra.metrics import RankedList, evaluate, ndcg_at_k, rank_by_score
from okra.synth import LABEL_SCHEMES, SynthConfig, SynthWorld, generate, world_to_tables


def small_config(**kw):
    base = dict(n_candidates=20, n_vacancies=40, pairs_per_candidate=10,
                negative_per_candidate=3, seed=0)
    base.update(kw)
    return SynthConfig(**base)


def oracle_ranked_lists(world: SynthWorld):
    """Rank each candidate's labeled pairs by the planted combined affinity."""
    by_cand = {}
    for ck, vk, label in world.labels:
        by_cand.setdefault(ck, []).append((vk, label))
    lists = []
    region = {c["key"]: c["region"] for c in world.candidates}
    for ck, items in by_cand.items():
        scores = [world.combined_affinity.get((ck, vk), -2.0) for vk, _ in items]
        labels = [l for _, l in items]
        in_order, order = rank_by_score(scores, labels)
        lists.append(RankedList(
            candidate_key=ck,
            vacancy_keys=[items[i][0] for i in order],
            scores=sorted(scores, reverse=True),
            labels=in_order,
            group=region[ck],
        ))
    return lists


class TestGenerate:
    def test_rural_vacancy_count_rounds(self):
        w = generate(SynthConfig(n_candidates=100, n_vacancies=200,
                                 rural_vacancy_fraction=0.6582, seed=3))
        rural = sum(1 for v in w.vacancies if v["region"] == "rural")
        assert rural in (131, 132)

    def test_zero_divergence_sides_agree(self):
        w = generate(small_config(stakeholder_divergence=0.0))
        for pair, cand in w.cand_affinity.items():
            assert w.comp_affinity[pair] == pytest.approx(cand, abs=1e-9)

    def test_same_seed_identical(self):
        a, b = generate(small_config()), generate(small_config())
        assert a.labels == b.labels
        assert [c["cv"] for c in a.candidates] == [c["cv"] for c in b.candidates]
        assert np.array_equal(a.cand_latent, b.cand_latent)

    def test_labels_within_scheme_range(self):
        for scheme in ("proprietary", "zhaopin"):
            w = generate(small_config(label_scheme=scheme))
            lo, hi = LABEL_SCHEMES[scheme]["range"]
            assert all(lo <= l <= hi for _, _, l in w.labels)

    def test_label_row_count(self):
        w = generate(small_config())
        negative = LABEL_SCHEMES["proprietary"]["negative_label"]
        n_neg = sum(1 for _, _, l in w.labels if l == negative)
        assert len(w.labels) == 20 * 10 + n_neg
        assert n_neg <= 20 * 3

    def test_skill_overlap_correlates_with_affinity(self):
        w = generate(SynthConfig(seed=1))
        assert w.skill_affinity_correlation >= 0.5

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(label_scheme="imaginary")
        with pytest.raises(ValueError):
            SynthConfig(rural_vacancy_fraction=1.5)
        with pytest.raises(ValueError):
            SynthConfig(latent_dim=1)


class TestTables:
    def test_round_trip_entity_count(self):
        cfg = small_config()
        w = generate(cfg)
        g = build_graph(world_to_tables(w))
        expected = (cfg.n_candidates * 2 + cfg.n_vacancies * 2 + cfg.n_skills
                    + cfg.n_experience_areas + cfg.n_locations + cfg.n_languages
                    + cfg.n_licenses + cfg.n_job_types)
        assert len(g.entities) == expected

    def test_no_license_table_when_empty(self):
        w = generate(small_config(n_licenses=1, seed=2))
        for c in w.candidates:
            c["licenses"] = []
        g = build_graph(world_to_tables(w))
        assert all(r.name != "has_license" for r in g.relations)

    def test_text_payloads_attached(self):
        w = generate(small_config())
        g = build_graph(world_to_tables(w))
        doc = g.entities[g.entity_id(EntityKind.TextDoc, f"cv_{w.candidates[0]['key']}")]
        assert doc.payload == w.candidates[0]["cv"]

    def test_region_attrs_attached(self):
        w = generate(small_config())
        g = build_graph(world_to_tables(w))
        vac = g.entities[g.entity_id(EntityKind.Vacancy, w.vacancies[0]["key"])]
        assert vac.attrs["region"] in ("rural", "urban")


class TestPlantedStructure:
    def test_oracle_ranking_achieves_perfect_ndcg(self):
        for seed in range(3):
            w = generate(small_config(seed=seed))
            rep = evaluate(oracle_ranked_lists(w), None)
            assert rep.ndcg["ndcg@10"] == pytest.approx(1.0)

    def test_oracle_delta_v_near_zero_without_bias(self):
        deltas = []
        for seed in range(5):
            w = generate(SynthConfig(seed=seed, fairness_bias=0.0))
            regions = {v["key"]: v["region"] for v in w.vacancies}
            rep = evaluate(oracle_ranked_lists(w), regions)
            deltas.append(rep.delta_v)
        assert abs(float(np.mean(deltas))) < 0.02

    def test_divergence_pulls_sides_apart(self):
        # with high divergence, candidate-only scores rank the combined labels
        # worse than the true combined scorer, on average over seeds
        gap_combined, gap_candonly = [], []
        for seed in range(20):
            w = generate(small_config(seed=seed, stakeholder_divergence=0.7))
            by_cand = {}
            for ck, vk, label in w.labels:
                by_cand.setdefault(ck, []).append((vk, label))
            comb_vals, cand_vals = [], []
            for ck, items in by_cand.items():
                labels = [l for _, l in items]
                comb = [w.combined_affinity.get((ck, vk), -2.0) for vk, _ in items]
                cand = [w.cand_affinity.get((ck, vk), -2.0) for vk, _ in items]
                comb_vals.append(ndcg_at_k(rank_by_score(comb, labels)[0], labels, 10))
                cand_vals.append(ndcg_at_k(rank_by_score(cand, labels)[0], labels, 10))
            gap_combined.append(np.mean(comb_vals))
            gap_candonly.append(np.mean(cand_vals))
        assert np.mean(gap_combined) > np.mean(gap_candonly)

    def test_fairness_bias_skews_labels_urban(self):
        plain = generate(SynthConfig(seed=7, fairness_bias=0.0))
        biased = generate(SynthConfig(seed=7, fairness_bias=0.6))

        def urban_share_of_positives(world):
            region = {v["key"]: v["region"] for v in world.vacancies}
            pos = [(vk) for _, vk, l in world.labels if l >= 3]
            return sum(1 for vk in pos if region[vk] == "urban") / len(pos)

        assert urban_share_of_positives(biased) > urban_share_of_positives(plain) + 0.1
