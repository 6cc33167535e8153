"""Urban knowledge graph: schema, parsing, subgraph split, adjacency.

The graph links POIs to six other entity classes through 16 typed relations.
Five relations describe where things are (geographical kind), eleven describe
what things are (functional kind).  Splitting the triplets by relation kind
yields the two subgraphs the embedding model propagates over; POIs keep the
same ids on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field


GEO = "Geographical"
FUNC = "Functional"

ENTITY_CLASSES = ("POI", "BusinessArea", "Region", "Brand", "Cate1", "Cate2", "Cate3")

# Non-POI classes that can appear in each subgraph, in the order their id
# blocks are laid out inside the entity embedding table (alphabetical).
GEO_ENTITY_CLASSES = ("BusinessArea", "Region")
FUNC_ENTITY_CLASSES = ("Brand", "Cate1", "Cate2", "Cate3")


@dataclass(frozen=True)
class RelationType:
    name: str
    kind: str
    head_class: str
    tail_class: str
    local_id: int  # position within its kind, used to index relation embeddings


def _make_relations() -> dict[str, RelationType]:
    rows = [
        # name, kind, head, tail  (alphabetical within kind; local ids follow)
        ("BaServe", GEO, "BusinessArea", "Region"),
        ("BelongTo", GEO, "POI", "BusinessArea"),
        ("BorderBy", GEO, "Region", "Region"),
        ("LocateAt", GEO, "POI", "Region"),
        ("NearBy", GEO, "Region", "Region"),
        ("Brand2Cate1", FUNC, "Brand", "Cate1"),
        ("Brand2Cate2", FUNC, "Brand", "Cate2"),
        ("Brand2Cate3", FUNC, "Brand", "Cate3"),
        ("BrandOf", FUNC, "POI", "Brand"),
        ("Cate1Of", FUNC, "POI", "Cate1"),
        ("Cate2Of", FUNC, "POI", "Cate2"),
        ("Cate3Of", FUNC, "POI", "Cate3"),
        ("RelatedBrand", FUNC, "Brand", "Brand"),
        ("SubCate_2to1", FUNC, "Cate2", "Cate1"),
        ("SubCate_3to1", FUNC, "Cate3", "Cate1"),
        ("SubCate_3to2", FUNC, "Cate3", "Cate2"),
    ]
    out: dict[str, RelationType] = {}
    counters = {GEO: 0, FUNC: 0}
    for name, kind, head, tail in rows:
        out[name] = RelationType(name, kind, head, tail, counters[kind])
        counters[kind] += 1
    return out


RELATIONS: dict[str, RelationType] = _make_relations()
GEO_RELATIONS = tuple(r.name for r in RELATIONS.values() if r.kind == GEO)
FUNC_RELATIONS = tuple(r.name for r in RELATIONS.values() if r.kind == FUNC)
N_GEO_RELATIONS = len(GEO_RELATIONS)    # 5
N_FUNC_RELATIONS = len(FUNC_RELATIONS)  # 11


class UnknownRelation(ValueError):
    pass


class ClassMismatch(ValueError):
    pass


class MalformedLine(ValueError):
    pass


class DuplicateTriplet(ValueError):
    pass


@dataclass(frozen=True, order=True)
class EntityRef:
    cls: str
    index: int


@dataclass(frozen=True)
class Triplet:
    head: EntityRef
    relation: str
    tail: EntityRef

    def __post_init__(self):
        rel = RELATIONS.get(self.relation)
        if rel is None:
            raise UnknownRelation(self.relation)
        if self.head.cls != rel.head_class or self.tail.cls != rel.tail_class:
            raise ClassMismatch(
                f"{self.relation} expects ({rel.head_class}, {rel.tail_class}), "
                f"got ({self.head.cls}, {self.tail.cls})"
            )

    def key(self) -> tuple:
        return (self.head.cls, self.head.index, self.relation,
                self.tail.cls, self.tail.index)


@dataclass
class UrbanKG:
    triplets: list[Triplet]
    populations: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        observed = {c: 0 for c in ENTITY_CLASSES}
        seen: set[tuple] = set()
        for t in self.triplets:
            k = t.key()
            if k in seen:
                raise DuplicateTriplet(str(k))
            seen.add(k)
            for ref in (t.head, t.tail):
                observed[ref.cls] = max(observed[ref.cls], ref.index + 1)
        if not self.populations:
            self.populations = observed
        else:
            for cls in ENTITY_CLASSES:
                stated = self.populations.get(cls, 0)
                if stated < observed[cls]:
                    raise ValueError(
                        f"stated population {cls}={stated} but ids require "
                        f">= {observed[cls]}"
                    )
            self.populations = {c: self.populations.get(c, 0) for c in ENTITY_CLASSES}

    @property
    def n_pois(self) -> int:
        return self.populations.get("POI", 0)


@dataclass
class SubGraph:
    """All triplets of one relation kind, plus that side's entity id layout.

    Non-POI entities get a dense local id: entity classes are laid out in
    alphabetical blocks after the POIs, and ``entity_count`` is the total
    non-POI population on this side (W for geographical, Q for functional).
    """

    kind: str
    triplets: list[Triplet]
    n_pois: int
    class_offsets: dict[str, int]
    entity_count: int

    def local_id(self, ref: EntityRef) -> int:
        """Map an entity to the propagation id space: POIs first, then blocks."""
        if ref.cls == "POI":
            return ref.index
        return self.n_pois + self.class_offsets[ref.cls] + ref.index

    @property
    def n_relations(self) -> int:
        return N_GEO_RELATIONS if self.kind == GEO else N_FUNC_RELATIONS


def split_subgraphs(kg: UrbanKG) -> tuple[SubGraph, SubGraph]:
    """Partition triplets by relation kind into (geographical, functional)."""
    sides = {GEO: [], FUNC: []}
    for t in kg.triplets:
        sides[RELATIONS[t.relation].kind].append(t)
    out = []
    for kind, classes in ((GEO, GEO_ENTITY_CLASSES), (FUNC, FUNC_ENTITY_CLASSES)):
        offsets: dict[str, int] = {}
        total = 0
        for cls in classes:
            offsets[cls] = total
            total += kg.populations.get(cls, 0)
        out.append(SubGraph(kind, sides[kind], kg.n_pois, offsets, total))
    return out[0], out[1]


def blended_subgraph(kg: UrbanKG) -> SubGraph:
    """All 16 relations in one graph; used by the no-disentanglement ablation.

    Relation local ids are re-assigned over the full alphabetical relation
    list so the single relation table has 16 rows.
    """
    classes = GEO_ENTITY_CLASSES + FUNC_ENTITY_CLASSES
    offsets: dict[str, int] = {}
    total = 0
    for cls in classes:
        offsets[cls] = total
        total += kg.populations.get(cls, 0)
    return SubGraph("Blended", list(kg.triplets), kg.n_pois, offsets, total)


def blended_relation_id(name: str) -> int:
    """Local id of a relation inside the blended 16-row table."""
    rel = RELATIONS[name]
    return rel.local_id if rel.kind == GEO else N_GEO_RELATIONS + rel.local_id


@dataclass
class AdjacencyIndex:
    """Per-node sorted neighbor lists over a subgraph's local id space.

    Each triplet contributes one forward entry at its head and one inverse
    entry at its tail, so every entity can both send and receive messages.
    Entries are (relation_local_id, neighbor_local_id, is_inverse).
    """

    n_nodes: int
    neighbors: list[list[tuple[int, int, bool]]]

    def degree(self, node: int) -> int:
        return len(self.neighbors[node])


def build_adjacency(sub: SubGraph, relation_id=None) -> AdjacencyIndex:
    """Index a subgraph for propagation.

    ``relation_id`` maps a relation name to its local embedding row; it
    defaults to the subgraph kind's own table but the blended ablation
    passes the 16-row mapping.
    """
    if relation_id is None:
        if sub.kind == "Blended":
            relation_id = blended_relation_id
        else:
            relation_id = lambda name: RELATIONS[name].local_id
    n_nodes = sub.n_pois + sub.entity_count
    neighbors: list[list[tuple[int, int, bool]]] = [[] for _ in range(n_nodes)]
    for t in sub.triplets:
        rid = relation_id(t.relation)
        h = sub.local_id(t.head)
        tl = sub.local_id(t.tail)
        neighbors[h].append((rid, tl, False))
        neighbors[tl].append((rid, h, True))
    for lst in neighbors:
        lst.sort()
    return AdjacencyIndex(n_nodes, neighbors)


# -- text format ------------------------------------------------------------------
#
# One triplet per line: "HeadClass:head_id<TAB>Relation<TAB>TailClass:tail_id".
# Lines starting with # are comments, except an optional header of the form
# "#counts POI=<n> Region=<n> ..." which states class populations explicitly
# (needed when a class has entities no triplet references).


def _parse_ref(token: str, lineno: int) -> EntityRef:
    cls, sep, idx = token.partition(":")
    if not sep or cls not in ENTITY_CLASSES:
        raise MalformedLine(f"line {lineno}: bad entity reference {token!r}")
    try:
        index = int(idx)
    except ValueError:
        raise MalformedLine(f"line {lineno}: bad entity id {idx!r}") from None
    if index < 0:
        raise MalformedLine(f"line {lineno}: negative entity id {index}")
    return EntityRef(cls, index)


def _parse_counts_header(line: str, lineno: int) -> dict[str, int]:
    counts: dict[str, int] = {}
    for part in line[len("#counts"):].split():
        cls, sep, val = part.partition("=")
        if not sep or cls not in ENTITY_CLASSES:
            raise MalformedLine(f"line {lineno}: bad counts entry {part!r}")
        try:
            counts[cls] = int(val)
        except ValueError:
            raise MalformedLine(f"line {lineno}: bad count {val!r}") from None
    return counts


def parse_triplets(text: str) -> UrbanKG:
    """Parse the triplet TSV format into a validated graph."""
    triplets: list[Triplet] = []
    seen: set[tuple] = set()
    populations: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#counts"):
                populations = _parse_counts_header(line, lineno)
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLine(f"line {lineno}: expected 3 tab-separated fields")
        head = _parse_ref(parts[0], lineno)
        rel_name = parts[1]
        if rel_name not in RELATIONS:
            raise UnknownRelation(f"line {lineno}: {rel_name!r}")
        tail = _parse_ref(parts[2], lineno)
        try:
            t = Triplet(head, rel_name, tail)
        except ClassMismatch as e:
            raise ClassMismatch(f"line {lineno}: {e}") from None
        k = t.key()
        if k in seen:
            raise DuplicateTriplet(f"line {lineno}: {line!r}")
        seen.add(k)
        triplets.append(t)
    return UrbanKG(triplets, populations)


def serialize_triplets(kg: UrbanKG) -> str:
    """Inverse of parse_triplets; always emits the counts header."""
    lines = ["#counts " + " ".join(f"{c}={kg.populations.get(c, 0)}"
                                   for c in ENTITY_CLASSES)]
    for t in kg.triplets:
        lines.append(f"{t.head.cls}:{t.head.index}\t{t.relation}\t"
                     f"{t.tail.cls}:{t.tail.index}")
    return "\n".join(lines) + "\n"
