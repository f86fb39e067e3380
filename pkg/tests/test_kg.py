import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from okra.kg import (
    Column,
    CycleBudgetExceeded,
    EntityKind,
    InversePair,
    KnowledgeGraph,
    SubclassPropagate,
    Table,
    Transitive,
    Triple,
    UnknownEntityRef,
    apply_inference,
    build_graph,
    dump_entities,
    dump_triples,
    load_graph,
)


def brute_force_closure(triples, rules, n_entities, rel_ids):
    """Naive fixpoint: re-derive from the full set until stable."""
    closed = set(triples)
    while True:
        new = set()
        for rule_kind, a, b in rules:
            if rule_kind == "trans":
                rid = rel_ids[a]
                for t1 in closed:
                    for t2 in closed:
                        if t1[1] == rid and t2[1] == rid and t1[2] == t2[0]:
                            new.add((t1[0], rid, t2[2]))
            elif rule_kind == "inv":
                fwd, inv = rel_ids[a], rel_ids[b]
                for t in closed:
                    if t[1] == fwd:
                        new.add((t[2], inv, t[0]))
                    elif t[1] == inv:
                        new.add((t[2], fwd, t[0]))
            else:  # subclass
                hier, targ = rel_ids[a], rel_ids[b]
                for t1 in closed:
                    for t2 in closed:
                        if t1[1] == targ and t2[1] == hier and t1[2] == t2[0]:
                            new.add((t1[0], targ, t2[2]))
        if new <= closed:
            return closed
        closed |= new


def make_graph(n_entities, triples, relation_names):
    g = KnowledgeGraph()
    for i in range(n_entities):
        g.add_entity(EntityKind.Skill, f"s{i}")
    for name in relation_names:
        g.register_relation(name)
    for s, r, o in triples:
        g.add_triple(s, r, o)
    return g


class TestRelations:
    def test_register_idempotent(self):
        g = KnowledgeGraph()
        r1 = g.register_relation("has_skill")
        r2 = g.register_relation("has_skill")
        assert r1 is r2 and r1.id == 0

    def test_dense_ids(self):
        g = KnowledgeGraph()
        assert g.register_relation("a").id == 0
        assert g.register_relation("b").id == 1


class TestBuildGraph:
    def link_table(self, rows):
        return Table(
            "candidate_skills",
            [Column("candidate", EntityKind.Candidate), Column("skill", EntityKind.Skill)],
            rows,
            relation="has_skill",
        )

    def entity_tables(self, cands, skills):
        return [
            Table("candidates", [Column("candidate", EntityKind.Candidate, declares=True)],
                  [(c,) for c in cands]),
            Table("skills", [Column("skill", EntityKind.Skill, declares=True)],
                  [(s,) for s in skills]),
        ]

    def test_candidate_skills_rows_become_has_skill_triples(self):
        tables = self.entity_tables(["c1"], ["s1", "s2"]) + [
            self.link_table([("c1", "s1"), ("c1", "s2")])
        ]
        g = build_graph(tables)
        rel = g.relation("has_skill")
        assert sum(1 for t in g.triples if t.predicate == rel.id) == 2

    def test_empty_tables(self):
        g = build_graph([])
        assert len(g.triples) == 0 and len(g.entities) == 0

    def test_duplicate_rows_collapse(self):
        tables = self.entity_tables(["c1"], ["s1"]) + [
            self.link_table([("c1", "s1"), ("c1", "s1")])
        ]
        g = build_graph(tables)
        assert len(g.triples) == 1

    def test_unknown_ref_raises(self):
        tables = self.entity_tables(["c1"], ["s1"]) + [self.link_table([("c1", "s9")])]
        with pytest.raises(UnknownEntityRef):
            build_graph(tables)

    def test_entity_count_is_distinct_kind_key_pairs(self):
        tables = self.entity_tables(["c1", "c2", "c1"], ["s1"]) + [
            self.link_table([("c1", "s1"), ("c2", "s1")])
        ]
        g = build_graph(tables)
        assert len(g.entities) == 3  # c1, c2, s1

    def test_wide_table_uses_column_relations(self):
        tables = [
            Table("vacancies", [Column("vacancy", EntityKind.Vacancy, declares=True)],
                  [("v1",)]),
            Table("locations", [Column("location", EntityKind.Location, declares=True)],
                  [("l1",)]),
            Table(
                "vacancy_details",
                [
                    Column("vacancy", EntityKind.Vacancy),
                    Column("located_in", EntityKind.Location),
                    Column("salary", EntityKind.WorkExperience, bins=[1000.0, 2000.0]),
                ],
                [("v1", "l1", 1500)],
            ),
        ]
        g = build_graph(tables)
        assert {r.name for r in g.relations} == {"located_in", "salary"}
        # literal promoted into a bucketed value entity
        assert g.has_entity(EntityKind.WorkExperience, "salary_bin1")


class TestInference:
    def test_two_step_transitive_chain(self):
        g = make_graph(3, [(0, 0, 1), (1, 0, 2)], ["subclass_of"])
        out = apply_inference(g, [Transitive("subclass_of")])
        assert Triple(0, 0, 2) in out.triples

    def test_inverse_pair(self):
        g = make_graph(2, [(0, 0, 1)], ["has_skill"])
        out = apply_inference(g, [InversePair("has_skill", "skill_held_by")])
        inv = out.relation("skill_held_by")
        assert Triple(1, inv.id, 0) in out.triples

    def test_five_node_chain_closure_count(self):
        # chain of 5 nodes: closure has C(5,2)=10 pairs, 4 originals, 6 derived
        g = make_graph(5, [(i, 0, i + 1) for i in range(4)], ["subclass_of"])
        out = apply_inference(g, [Transitive("subclass_of")])
        reachable = brute_force_closure(
            {tuple(t) for t in g.triples}, [("trans", "subclass_of", None)], 5,
            {"subclass_of": 0},
        )
        assert {tuple(t) for t in out.triples} == reachable
        assert len(out.triples) == 10

    def test_subclass_propagate(self):
        g = make_graph(3, [(0, 0, 1), (1, 1, 2)], ["has_job_type", "subclass_of"])
        out = apply_inference(
            g, [SubclassPropagate("subclass_of", "has_job_type")]
        )
        assert Triple(0, 0, 2) in out.triples

    def test_idempotent(self):
        g = make_graph(4, [(0, 0, 1), (1, 0, 2), (2, 1, 3)], ["r0", "r1"])
        rules = [Transitive("r0"), InversePair("r1", "r1_inv")]
        once = apply_inference(g, rules)
        twice = apply_inference(once, rules)
        assert once.triples == twice.triples

    def test_output_superset_of_input(self):
        g = make_graph(4, [(0, 0, 1), (1, 0, 2)], ["r0"])
        out = apply_inference(g, [Transitive("r0")])
        assert g.triples <= out.triples

    def test_budget_guard(self):
        g = make_graph(6, [(i, 0, i + 1) for i in range(5)], ["r0"])
        with pytest.raises(CycleBudgetExceeded):
            apply_inference(g, [Transitive("r0")], budget=1)

    @settings(max_examples=150, deadline=None)
    @given(st.data())
    def test_closure_matches_brute_force(self, data):
        n = data.draw(st.integers(min_value=1, max_value=8))
        n_rels = data.draw(st.integers(min_value=1, max_value=3))
        triples = data.draw(
            st.sets(
                st.tuples(
                    st.integers(0, n - 1),
                    st.integers(0, n_rels - 1),
                    st.integers(0, n - 1),
                ),
                max_size=10,
            )
        )
        rel_names = [f"r{i}" for i in range(n_rels)]
        rule_pool = (
            [("trans", name, None) for name in rel_names]
            + [("inv", rel_names[0], "r_inv")]
            + ([("sub", rel_names[0], rel_names[1])] if n_rels >= 2 else [])
        )
        rules_raw = data.draw(
            st.lists(st.sampled_from(rule_pool), min_size=1, max_size=3, unique=True)
        )

        g = make_graph(n, list(triples), rel_names + ["r_inv"])
        rules = []
        for kind, a, b in rules_raw:
            if kind == "trans":
                rules.append(Transitive(a))
            elif kind == "inv":
                rules.append(InversePair(a, b))
            else:
                rules.append(SubclassPropagate(a, b))
        out = apply_inference(g, rules)
        rel_ids = {r.name: r.id for r in out.relations}
        expected = brute_force_closure({tuple(t) for t in g.triples}, rules_raw, n, rel_ids)
        assert {tuple(t) for t in out.triples} == expected


class TestTsvRoundTrip:
    def test_dump_load(self, tmp_path):
        g = KnowledgeGraph()
        c = g.add_entity(EntityKind.Candidate, "c1", attrs={"region": "rural"})
        s = g.add_entity(EntityKind.Skill, "s1")
        d = g.add_entity(EntityKind.TextDoc, "cv_c1", payload="line one\nwith\ttab")
        g.add_triple(c, g.register_relation("has_skill"), s)
        g.add_triple(c, g.register_relation("has_cv"), d)

        dump_triples(g, tmp_path / "triples.tsv")
        dump_entities(g, tmp_path / "entities.tsv")
        loaded = load_graph(tmp_path / "entities.tsv", tmp_path / "triples.tsv")

        assert len(loaded.entities) == 3
        assert len(loaded.triples) == 2
        cid = loaded.entity_id(EntityKind.Candidate, "c1")
        assert loaded.entities[cid].attrs == {"region": "rural"}
        did = loaded.entity_id(EntityKind.TextDoc, "cv_c1")
        assert loaded.entities[did].payload == "line one\nwith\ttab"

    def test_dump_is_sorted_and_stable(self, tmp_path):
        g = KnowledgeGraph()
        ids = [g.add_entity(EntityKind.Skill, f"s{i}") for i in range(5)]
        r = g.register_relation("related_to")
        for a, b in itertools.combinations(ids, 2):
            g.add_triple(a, r, b)
        dump_triples(g, tmp_path / "a.tsv")
        dump_triples(g, tmp_path / "b.tsv")
        a = (tmp_path / "a.tsv").read_bytes()
        assert a == (tmp_path / "b.tsv").read_bytes()
        lines = a.decode().splitlines()
        assert lines == sorted(lines)
