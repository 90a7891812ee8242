"""Event knowledge base: JSONL ingestion and hierarchy forest construction.

Events carry per-language titles and descriptions.  Typed property edges
between events come in two flavours: hierarchical (has-part / part-of),
which define the child-to-parent forest, and temporal (follows /
followed-by), which only participate in zero-shot split construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    CycleDetected,
    HeightExceeded,
    MissingLabel,
    MultipleParents,
    ParseError,
    UnknownEvent,
)

DEFAULT_MAX_HEIGHT = 3
FALLBACK_LANGUAGE = "en"


class RelationProperty(str, Enum):
    """Wikidata-style property codes for the four supported edge types."""

    HAS_PART = "P527"
    PART_OF = "P361"
    FOLLOWS = "P155"
    FOLLOWED_BY = "P156"


HIERARCHICAL_PROPERTIES = frozenset(
    {RelationProperty.HAS_PART, RelationProperty.PART_OF}
)
TEMPORAL_PROPERTIES = frozenset(
    {RelationProperty.FOLLOWS, RelationProperty.FOLLOWED_BY}
)


@dataclass
class Label:
    title: str
    description: str = ""


@dataclass
class Event:
    """A knowledge-base event with per-language labels.

    ``in_hierarchy`` is set by :func:`build_forest`: true exactly when the
    event appears in at least one child-parent edge.
    """

    id: str
    labels: dict[str, Label] = field(default_factory=dict)
    in_hierarchy: bool = False

    def __post_init__(self):
        if not self.id:
            raise ValueError("event id must be non-empty")
        if not self.labels:
            raise ValueError(f"event {self.id!r} needs at least one language label")

    def label_for(self, language: str, fallback: str = FALLBACK_LANGUAGE) -> Label:
        """The label in ``language``, falling back to ``fallback``."""
        label = self.labels.get(language) or self.labels.get(fallback)
        if label is None:
            raise MissingLabel(self.id, language, fallback)
        return label


@dataclass(frozen=True)
class RelationEdge:
    """A typed property edge between two distinct events."""

    subject: str
    property: RelationProperty
    object: str

    def __post_init__(self):
        if self.subject == self.object:
            raise ValueError(f"self edge on {self.subject!r} is not allowed")


@dataclass
class HierarchyForest:
    """Validated child-to-parent structure over the knowledge base.

    ``parent`` maps each non-root node to its unique parent, ``children``
    maps each internal node to its children sorted by id, ``roots`` holds
    every parentless node (singleton events are roots of height-0 trees).
    ``nodes`` is the full set of known event ids, hierarchical or not.
    """

    parent: dict[str, str]
    children: dict[str, list[str]]
    roots: frozenset[str]
    nodes: frozenset[str]
    max_height: int

    def in_hierarchy(self, event_id: str) -> bool:
        return event_id in self.parent or event_id in self.children

    def hierarchy_ids(self) -> set[str]:
        """Ids of all events that appear in at least one forest edge."""
        return set(self.parent) | set(self.children)

    def tree_roots(self) -> list[str]:
        """Roots of trees with height >= 1, sorted by id."""
        return sorted(r for r in self.roots if r in self.children)

    def depth(self, event_id: str) -> int:
        """Number of edges from ``event_id`` up to its root."""
        return len(ancestor_chain(self, event_id)) - 1

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "max_height": self.max_height,
            "nodes": sorted(self.nodes),
            "parent": {c: self.parent[c] for c in sorted(self.parent)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HierarchyForest":
        parent = dict(data["parent"])
        nodes = frozenset(data["nodes"])
        children: dict[str, list[str]] = {}
        for child, par in parent.items():
            children.setdefault(par, []).append(child)
        for par in children:
            children[par].sort()
        roots = frozenset(n for n in nodes if n not in parent)
        return cls(
            parent=parent,
            children=children,
            roots=roots,
            nodes=nodes,
            max_height=int(data["max_height"]),
        )


def build_forest(
    events: list[Event],
    edges: list[RelationEdge],
    max_height: int = DEFAULT_MAX_HEIGHT,
) -> HierarchyForest:
    """Normalize hierarchical edges into a validated child-to-parent forest.

    ``e1 HAS_PART e2`` and ``e2 PART_OF e1`` both become the child edge
    e2 -> e1 and are deduplicated.  Temporal edges are ignored here (they
    only matter for split construction).  Each event's ``in_hierarchy``
    flag is set to whether it appears in a forest edge.

    Raises UnknownEvent, MultipleParents, CycleDetected or HeightExceeded
    when the edge set violates the forest invariants.
    """
    if max_height < 1:
        raise ValueError("max_height must be >= 1")
    known: set[str] = set()
    for event in events:
        if event.id in known:
            raise ValueError(f"duplicate event id {event.id!r}")
        known.add(event.id)

    child_parent: set[tuple[str, str]] = set()
    for edge in edges:
        if edge.subject not in known:
            raise UnknownEvent(edge.subject, "edge subject")
        if edge.object not in known:
            raise UnknownEvent(edge.object, "edge object")
        if edge.property == RelationProperty.HAS_PART:
            child_parent.add((edge.object, edge.subject))
        elif edge.property == RelationProperty.PART_OF:
            child_parent.add((edge.subject, edge.object))

    parent: dict[str, str] = {}
    for child, par in sorted(child_parent):
        if child in parent and parent[child] != par:
            raise MultipleParents(child, [parent[child], par])
        parent[child] = par

    _check_acyclic(parent)

    children: dict[str, list[str]] = {}
    for child, par in parent.items():
        children.setdefault(par, []).append(child)
    for par in children:
        children[par].sort()

    forest = HierarchyForest(
        parent=parent,
        children=children,
        roots=frozenset(n for n in known if n not in parent),
        nodes=frozenset(known),
        max_height=max_height,
    )

    for node in sorted(parent):
        chain = ancestor_chain(forest, node)
        if len(chain) - 1 > max_height:
            raise HeightExceeded(chain, max_height)

    hier_ids = forest.hierarchy_ids()
    for event in events:
        event.in_hierarchy = event.id in hier_ids
    return forest


def _check_acyclic(parent: dict[str, str]) -> None:
    """Walk every parent chain; report the first cycle found (sorted order)."""
    cleared: set[str] = set()
    for start in sorted(parent):
        if start in cleared:
            continue
        path: list[str] = []
        seen_at: dict[str, int] = {}
        node = start
        while node in parent and node not in cleared:
            if node in seen_at:
                raise CycleDetected(path[seen_at[node] :] + [node])
            seen_at[node] = len(path)
            path.append(node)
            node = parent[node]
        cleared.update(path)


def ancestor_chain(forest: HierarchyForest, event_id: str) -> list[str]:
    """The path ``[event_id, parent, ..., root]``; a root returns itself."""
    if event_id not in forest.nodes:
        raise UnknownEvent(event_id)
    chain = [event_id]
    node = event_id
    while node in forest.parent:
        node = forest.parent[node]
        chain.append(node)
    return chain


def save_forest(forest: HierarchyForest, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(forest.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_forest(path: str | Path) -> HierarchyForest:
    return HierarchyForest.from_dict(json.loads(Path(path).read_text("utf-8")))


def load_events(path: str | Path) -> list[Event]:
    """Read events.jsonl: one ``{"id", "labels": {lang: {...}}}`` per line."""
    events: list[Event] = []
    seen: set[str] = set()
    for line_no, obj in _iter_jsonl(path):
        try:
            event_id = obj["id"]
            raw_labels = obj["labels"]
        except (KeyError, TypeError) as exc:
            raise ParseError(str(path), line_no, f"missing field: {exc}") from exc
        if not isinstance(event_id, str) or not event_id:
            raise ParseError(str(path), line_no, "id must be a non-empty string")
        if event_id in seen:
            raise ParseError(str(path), line_no, f"duplicate event id {event_id!r}")
        if not isinstance(raw_labels, dict) or not raw_labels:
            raise ParseError(str(path), line_no, "labels must be a non-empty object")
        labels = {}
        for lang, lab in raw_labels.items():
            if not isinstance(lab, dict) or "title" not in lab:
                raise ParseError(
                    str(path), line_no, f"label for {lang!r} needs a title"
                )
            labels[lang] = Label(
                title=str(lab["title"]), description=str(lab.get("description", ""))
            )
        seen.add(event_id)
        events.append(Event(id=event_id, labels=labels))
    return events


def load_relations(path: str | Path) -> list[RelationEdge]:
    """Read relations.jsonl: ``{"subject", "property", "object"}`` per line."""
    edges: list[RelationEdge] = []
    codes = {p.value: p for p in RelationProperty}
    for line_no, obj in _iter_jsonl(path):
        try:
            subject, prop, object_ = obj["subject"], obj["property"], obj["object"]
        except (KeyError, TypeError) as exc:
            raise ParseError(str(path), line_no, f"missing field: {exc}") from exc
        if prop not in codes:
            raise ParseError(str(path), line_no, f"unknown property {prop!r}")
        if subject == object_:
            raise ParseError(str(path), line_no, f"self edge on {subject!r}")
        edges.append(RelationEdge(subject=subject, property=codes[prop], object=object_))
    return edges


def write_events(events: list[Event], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            record = {
                "id": event.id,
                "labels": {
                    lang: {"title": lab.title, "description": lab.description}
                    for lang, lab in event.labels.items()
                },
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_relations(edges: list[RelationEdge], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for edge in edges:
            record = {
                "subject": edge.subject,
                "property": edge.property.value,
                "object": edge.object,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _iter_jsonl(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), line_no, f"bad JSON: {exc.msg}") from exc
