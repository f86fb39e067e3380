"""Typed knowledge graph built from tabular sources, with rule-based closure.

Tables declare entities and link them; column and table names become
relation types. A finished graph is immutable by convention and safe to
share across threads for read-only sampling.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple


class UnknownEntityRef(KeyError):
    pass


class CycleBudgetExceeded(RuntimeError):
    pass


class EntityKind(enum.Enum):
    Candidate = "candidate"
    Vacancy = "vacancy"
    Skill = "skill"
    Language = "language"
    License = "license"
    Location = "location"
    EducationLevel = "education_level"
    JobType = "job_type"
    WorkExperience = "work_experience"
    TextDoc = "text_doc"


@dataclass(frozen=True)
class RelationType:
    name: str
    id: int


@dataclass
class Entity:
    id: int
    kind: EntityKind
    key: str  # external key, unique within the kind
    payload: str | None = None
    attrs: dict[str, str] = field(default_factory=dict)


class Triple(NamedTuple):
    subject: int
    predicate: int  # relation id
    object: int


@dataclass(frozen=True)
class Transitive:
    relation: str


@dataclass(frozen=True)
class InversePair:
    relation: str
    inverse: str


@dataclass(frozen=True)
class SubclassPropagate:
    hierarchy: str
    target: str


InferenceRule = Transitive | InversePair | SubclassPropagate


class KnowledgeGraph:
    def __init__(self):
        self.entities: list[Entity] = []
        self.triples: set[Triple] = set()
        self.relations: list[RelationType] = []
        self._rel_by_name: dict[str, RelationType] = {}
        self._id_by_key: dict[tuple[EntityKind, str], int] = {}
        self.out_adj: dict[int, list[tuple[int, int]]] = {}  # subj -> [(rel, obj)]
        self.in_adj: dict[int, list[tuple[int, int]]] = {}  # obj -> [(rel, subj)]

    # -- construction -------------------------------------------------------

    def register_relation(self, name: str) -> RelationType:
        if not name:
            raise ValueError("relation name must be non-empty")
        rel = self._rel_by_name.get(name)
        if rel is None:
            rel = RelationType(name, len(self.relations))
            self.relations.append(rel)
            self._rel_by_name[name] = rel
        return rel

    def relation(self, name: str) -> RelationType:
        try:
            return self._rel_by_name[name]
        except KeyError:
            raise UnknownEntityRef(f"relation {name!r} not registered") from None

    def add_entity(self, kind: EntityKind, key: str, payload=None, attrs=None) -> int:
        eid = self._id_by_key.get((kind, key))
        if eid is not None:
            ent = self.entities[eid]
            if payload is not None:
                ent.payload = payload
            if attrs:
                ent.attrs.update(attrs)
            return eid
        eid = len(self.entities)
        self.entities.append(Entity(eid, kind, key, payload, dict(attrs or {})))
        self._id_by_key[(kind, key)] = eid
        self.out_adj[eid] = []
        self.in_adj[eid] = []
        return eid

    def entity_id(self, kind: EntityKind, key: str) -> int:
        try:
            return self._id_by_key[(kind, key)]
        except KeyError:
            raise UnknownEntityRef(f"no {kind.value} entity with key {key!r}") from None

    def has_entity(self, kind: EntityKind, key: str) -> bool:
        return (kind, key) in self._id_by_key

    def add_triple(self, subject: int, relation: RelationType | int, obj: int) -> bool:
        rel_id = relation.id if isinstance(relation, RelationType) else relation
        n = len(self.entities)
        if not (0 <= subject < n and 0 <= obj < n):
            raise UnknownEntityRef(f"dangling entity id in ({subject}, {rel_id}, {obj})")
        t = Triple(subject, rel_id, obj)
        if t in self.triples:
            return False
        self.triples.add(t)
        self.out_adj[subject].append((rel_id, obj))
        self.in_adj[obj].append((rel_id, subject))
        return True

    def copy(self) -> "KnowledgeGraph":
        g = KnowledgeGraph()
        g.entities = [Entity(e.id, e.kind, e.key, e.payload, dict(e.attrs)) for e in self.entities]
        g.relations = list(self.relations)
        g._rel_by_name = dict(self._rel_by_name)
        g._id_by_key = dict(self._id_by_key)
        g.out_adj = {k: list(v) for k, v in self.out_adj.items()}
        g.in_adj = {k: list(v) for k, v in self.in_adj.items()}
        g.triples = set(self.triples)
        return g

    def entities_of_kind(self, kind: EntityKind) -> list[Entity]:
        return [e for e in self.entities if e.kind == kind]


# ---------------------------------------------------------------------------
# tabular input
# ---------------------------------------------------------------------------

@dataclass
class Column:
    """One table column.

    kind None marks the column as metadata (attribute or payload on the
    row's key entity) rather than an entity reference. Literal-valued
    columns set ``bins`` to promote numbers into bucketed value entities.
    """

    name: str
    kind: EntityKind | None = None
    declares: bool = False
    relation: str | None = None
    bins: list[float] | None = None
    payload: bool = False  # metadata column carrying entity text
    attr: bool = False  # metadata column carrying a key=value attribute


@dataclass
class Table:
    name: str
    columns: list[Column]
    rows: list[tuple]
    relation: str | None = None  # override for two-column link tables


def _bucket_label(column: Column, value) -> str:
    v = float(value)
    for i, edge in enumerate(column.bins):
        if v < edge:
            return f"{column.name}_bin{i}"
    return f"{column.name}_bin{len(column.bins)}"


def _relation_name(table: Table, column: Column) -> str:
    if column.relation:
        return column.relation
    entity_cols = [c for c in table.columns if c.kind is not None]
    if len(entity_cols) == 2 and len(table.columns) == 2:
        return table.relation or table.name
    return column.name


def build_graph(tables: Iterable[Table]) -> KnowledgeGraph:
    """Convert tables to triples: one per (row, non-key entity column).

    Entities are deduplicated by (kind, external key). A reference to a
    key never declared by any declaring column raises UnknownEntityRef.
    """
    graph = KnowledgeGraph()
    tables = list(tables)

    # pass 1: declare entities so that link tables can reference any order
    for table in tables:
        key_col = table.columns[0]
        for row in table.rows:
            for col, cell in zip(table.columns, row):
                if col.kind is None or cell is None:
                    continue
                if col.declares or col.bins is not None:
                    key = _bucket_label(col, cell) if col.bins is not None else str(cell)
                    graph.add_entity(col.kind, key)
        # metadata columns attach to the key entity
        if key_col.kind is not None and key_col.declares:
            for row in table.rows:
                eid = graph.entity_id(key_col.kind, str(row[0]))
                ent = graph.entities[eid]
                for col, cell in zip(table.columns[1:], row[1:]):
                    if col.payload and cell is not None:
                        ent.payload = str(cell)
                    elif col.attr and cell is not None:
                        ent.attrs[col.name] = str(cell)

    # pass 2: emit triples
    for table in tables:
        key_col = table.columns[0]
        if key_col.kind is None:
            continue
        for row in table.rows:
            subject = graph.entity_id(key_col.kind, str(row[0]))
            for col, cell in zip(table.columns[1:], row[1:]):
                if col.kind is None or cell is None:
                    continue
                key = _bucket_label(col, cell) if col.bins is not None else str(cell)
                if not graph.has_entity(col.kind, key):
                    raise UnknownEntityRef(
                        f"table {table.name!r} references undeclared {col.kind.value} {key!r}"
                    )
                obj = graph.entity_id(col.kind, key)
                rel = graph.register_relation(_relation_name(table, col))
                graph.add_triple(subject, rel, obj)
    return graph


# ---------------------------------------------------------------------------
# inference closure
# ---------------------------------------------------------------------------

def apply_inference(
    graph: KnowledgeGraph,
    rules: Iterable[InferenceRule],
    budget: int | None = None,
) -> KnowledgeGraph:
    """Least fixpoint of the rule set over the graph's triples.

    Semi-naive: each round joins only the newly derived triples against
    the accumulated set. The budget (default entity_count^2 * relation
    count, the number of distinct triples possible per relation) guards
    against a non-terminating rule implementation.
    """
    rules = list(rules)
    out = graph.copy()
    for rule in rules:
        names = (
            (rule.relation,) if isinstance(rule, Transitive)
            else (rule.relation, rule.inverse) if isinstance(rule, InversePair)
            else (rule.hierarchy, rule.target)
        )
        for name in names:
            out.register_relation(name)

    n = len(out.entities)
    if budget is None:
        budget = max(1, n * n) * max(1, len(out.relations))

    frontier = set(out.triples)
    added_total = 0
    while frontier:
        derived: set[Triple] = set()

        def emit(s, rel_name, o):
            t = Triple(s, out.relation(rel_name).id, o)
            if t not in out.triples and t not in derived:
                derived.add(t)

        for rule in rules:
            if isinstance(rule, Transitive):
                rid = out.relation(rule.relation).id
                for t in frontier:
                    if t.predicate != rid:
                        continue
                    # new (a,b) joins all (b,c) and all (c,a)
                    for r2, c in out.out_adj[t.object]:
                        if r2 == rid:
                            emit(t.subject, rule.relation, c)
                    for r2, c in out.in_adj[t.subject]:
                        if r2 == rid:
                            emit(c, rule.relation, t.object)
            elif isinstance(rule, InversePair):
                fwd = out.relation(rule.relation).id
                inv = out.relation(rule.inverse).id
                for t in frontier:
                    if t.predicate == fwd:
                        emit(t.object, rule.inverse, t.subject)
                    elif t.predicate == inv:
                        emit(t.object, rule.relation, t.subject)
            else:
                hier = out.relation(rule.hierarchy).id
                targ = out.relation(rule.target).id
                for t in frontier:
                    if t.predicate == targ:
                        for r2, sup in out.out_adj[t.object]:
                            if r2 == hier:
                                emit(t.subject, rule.target, sup)
                    elif t.predicate == hier:
                        for r2, x in out.in_adj[t.subject]:
                            if r2 == targ:
                                emit(x, rule.target, t.object)

        added_total += len(derived)
        if added_total > budget:
            raise CycleBudgetExceeded(
                f"inference produced more than {budget} new triples"
            )
        for t in derived:
            out.add_triple(t.subject, t.predicate, t.object)
        frontier = derived
    return out


# ---------------------------------------------------------------------------
# TSV dump / load
# ---------------------------------------------------------------------------

_KIND_BY_VALUE = {k.value: k for k in EntityKind}


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def dump_triples(graph: KnowledgeGraph, path) -> None:
    lines = []
    for t in graph.triples:
        s = graph.entities[t.subject]
        o = graph.entities[t.object]
        rel = graph.relations[t.predicate]
        lines.append(
            f"{s.kind.value}:{s.key}\t{rel.name}\t{o.kind.value}:{o.key}"
        )
    lines.sort()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def dump_entities(graph: KnowledgeGraph, path) -> None:
    lines = []
    for e in graph.entities:
        attrs = ";".join(f"{k}={v}" for k, v in sorted(e.attrs.items()))
        payload = _escape(e.payload) if e.payload else ""
        lines.append(f"{e.key}\t{e.kind.value}\t{attrs}\t{payload}")
    lines.sort()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_graph(entities_path, triples_path) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    with open(entities_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, kind, attrs, payload = line.split("\t", 3)
            attr_map = dict(a.split("=", 1) for a in attrs.split(";") if a)
            graph.add_entity(
                _KIND_BY_VALUE[kind], key,
                payload=_unescape(payload) if payload else None,
                attrs=attr_map,
            )
    with open(triples_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            skey, rel, okey = line.split("\t")
            s_kind, s_id = skey.split(":", 1)
            o_kind, o_id = okey.split(":", 1)
            graph.add_triple(
                graph.entity_id(_KIND_BY_VALUE[s_kind], s_id),
                graph.register_relation(rel),
                graph.entity_id(_KIND_BY_VALUE[o_kind], o_id),
            )
    return graph
