"""Regex-like typed path patterns over web subgraphs.

Grammar::

    pattern  := atom (edge atom)*
    atom     := TYPEEXPR ('(' '$' IDENT ')')? QUANT?
    TYPEEXPR := IDENT ('|' IDENT)*
    edge     := '-[' TYPEEXPR ']->'
    QUANT    := '?' | '*' | '+' | '{' INT (',' INT)? '}'

A quantifier repeats the unit made of the atom and the edge leading into it. The
first atom has no incoming edge, so its extra repetitions may follow any edge.
"""

from __future__ import annotations

import json
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import PatternSyntaxError
from .graph import EDGE_KINDS, ELEMENT_KINDS, NODE_CATEGORIES, Graph, Node, normalize_type_name
from .sampler import Subgraph

MAX_PATH_NODES = 16
TIERS = ("business", "general", "basic")

_NODE_KEYS = {normalize_type_name(n) for n in NODE_CATEGORIES + ELEMENT_KINDS}
_EDGE_KEYS = {normalize_type_name(k): k for k in EDGE_KINDS}


@dataclass(frozen=True)
class Quantifier:
    min: int = 1
    max: int | None = 1  # None = unbounded
    text: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.min < 0 or (self.max is not None and self.max < self.min):
            raise ValueError(f"invalid quantifier bounds {{{self.min},{self.max}}}")

    def allows(self, count: int) -> bool:
        return count >= self.min and (self.max is None or count <= self.max)


ONE = Quantifier(1, 1, "")


@dataclass(frozen=True)
class NodeMatcher:
    alternatives: tuple[str, ...]

    @property
    def keys(self) -> frozenset[str]:
        return frozenset(normalize_type_name(a) for a in self.alternatives)

    def matches(self, node: Node) -> bool:
        return any(node.kind.matches(a) for a in self.alternatives)

    def __str__(self) -> str:
        return "|".join(self.alternatives)


@dataclass(frozen=True)
class EdgeMatcher:
    alternatives: tuple[str, ...]

    @property
    def kinds(self) -> frozenset[str]:
        return frozenset(_EDGE_KEYS[normalize_type_name(a)] for a in self.alternatives)

    def matches(self, kind: str) -> bool:
        return kind in self.kinds

    def __str__(self) -> str:
        return "|".join(self.alternatives)


@dataclass(frozen=True)
class Atom:
    matcher: NodeMatcher
    slot: str | None = None
    quantifier: Quantifier = ONE

    def __str__(self) -> str:
        slot = f"(${self.slot})" if self.slot else ""
        return f"{self.matcher}{slot}{self.quantifier.text}"


@dataclass(frozen=True)
class MetapathPattern:
    id: str
    name: str
    tier: str
    atoms: tuple[Atom, ...]
    edges: tuple[EdgeMatcher, ...]  # edges[i] leads into atoms[i + 1]
    source_text: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.tier not in TIERS:
            raise ValueError(f"tier must be one of {TIERS}")
        if len(self.edges) != len(self.atoms) - 1:
            raise ValueError("a pattern needs exactly one edge matcher between consecutive atoms")

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(a.slot for a in self.atoms if a.slot)

    def serialize(self) -> str:
        parts = [str(self.atoms[0])]
        for edge, atom in zip(self.edges, self.atoms[1:]):
            parts.append(f"-[{edge}]->")
            parts.append(str(atom))
        return " ".join(parts)


@dataclass(frozen=True)
class MetapathInstance:
    pattern_id: str
    bindings: tuple[tuple[str, str], ...]  # (slot, node id), in pattern slot order
    nodes: tuple[str, ...]
    edge_ids: tuple[int, ...]
    units: tuple[int, ...] = field(default=(), compare=False)  # atom index each node matched

    @property
    def binding_map(self) -> dict[str, str]:
        return dict(self.bindings)

    @property
    def path(self) -> tuple[str | int, ...]:
        """Alternating node id / edge index sequence."""
        out: list[str | int] = [self.nodes[0]]
        for edge, node in zip(self.edge_ids, self.nodes[1:]):
            out += [edge, node]
        return tuple(out)

    def sort_key(self) -> tuple:
        return (self.nodes[0], len(self.nodes), self.nodes, self.edge_ids, self.bindings)


# -- parsing -------------------------------------------------------------------


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, token: str) -> bool:
        self.skip()
        return self.text.startswith(token, self.pos)

    def expect(self, token: str) -> None:
        if not self.peek(token):
            found = self.text[self.pos : self.pos + len(token)] or "end of input"
            raise PatternSyntaxError(f"expected {token!r}, found {found!r}", self.pos)
        self.pos += len(token)

    def ident(self) -> tuple[str, int]:
        self.skip()
        start = self.pos
        if self.pos < len(self.text) and (self.text[self.pos].isascii() and (self.text[self.pos].isalpha() or self.text[self.pos] == "_")):
            self.pos += 1
            while self.pos < len(self.text) and self.text[self.pos].isascii() and (
                self.text[self.pos].isalnum() or self.text[self.pos] == "_"
            ):
                self.pos += 1
            return self.text[start : self.pos], start
        found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
        raise PatternSyntaxError(f"expected a name, found {found!r}", self.pos)

    def integer(self) -> int:
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in "0123456789":
            self.pos += 1
        if start == self.pos:
            raise PatternSyntaxError("expected an integer", start)
        return int(self.text[start : self.pos])

    def at_end(self) -> bool:
        self.skip()
        return self.pos >= len(self.text)


def _type_expr(scanner: _Scanner, known: set[str] | dict[str, str], what: str) -> tuple[str, ...]:
    names = []
    while True:
        name, at = scanner.ident()
        if normalize_type_name(name) not in known:
            raise PatternSyntaxError(f"unknown {what} type {name!r}", at)
        names.append(name)
        if not scanner.peek("|"):
            return tuple(names)
        scanner.expect("|")


def _quantifier(scanner: _Scanner) -> Quantifier:
    for symbol, lo, hi in (("?", 0, 1), ("*", 0, None), ("+", 1, None)):
        if scanner.peek(symbol):
            scanner.expect(symbol)
            return Quantifier(lo, hi, symbol)
    if not scanner.peek("{"):
        return ONE
    start = scanner.pos
    scanner.expect("{")
    lo = scanner.integer()
    hi = lo
    ranged = scanner.peek(",")
    if ranged:
        scanner.expect(",")
        hi = scanner.integer()
    scanner.expect("}")
    if hi < lo:
        raise PatternSyntaxError(f"quantifier upper bound {hi} below lower bound {lo}", start)
    return Quantifier(lo, hi, f"{{{lo},{hi}}}" if ranged else f"{{{lo}}}")


def _atom(scanner: _Scanner, slots: set[str]) -> Atom:
    matcher = NodeMatcher(_type_expr(scanner, _NODE_KEYS, "node"))
    slot = None
    if scanner.peek("("):
        scanner.expect("(")
        scanner.expect("$")
        slot, at = scanner.ident()
        if slot in slots:
            raise PatternSyntaxError(f"duplicate slot ${slot}", at)
        slots.add(slot)
        scanner.expect(")")
    return Atom(matcher, slot, _quantifier(scanner))


def parse_pattern(text: str, *, pattern_id: str = "", name: str = "", tier: str = "basic") -> MetapathPattern:
    scanner = _Scanner(text)
    slots: set[str] = set()
    atoms = [_atom(scanner, slots)]
    edges = []
    while not scanner.at_end():
        scanner.expect("-[")
        edges.append(EdgeMatcher(_type_expr(scanner, _EDGE_KEYS, "edge")))
        scanner.expect("]->")
        atoms.append(_atom(scanner, slots))
    return MetapathPattern(pattern_id, name, tier, tuple(atoms), tuple(edges), text)


def load_library(path: str | Path | None = None) -> list[MetapathPattern]:
    """Read a pattern library (JSON list of {id, name, tier, pattern}); default is the bundled one."""
    if path is None:
        raw = resources.files("kgtaskgen").joinpath("data/patterns.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    entries = json.loads(raw)
    library = []
    for entry in entries:
        if set(entry) != {"id", "name", "tier", "pattern"}:
            raise ValueError(f"pattern entry needs exactly id/name/tier/pattern, got {sorted(entry)}")
        library.append(parse_pattern(entry["pattern"], pattern_id=entry["id"], name=entry["name"], tier=entry["tier"]))
    ids = [p.id for p in library]
    if len(set(ids)) != len(ids):
        raise ValueError("pattern ids must be unique")
    return library


# -- matching ------------------------------------------------------------------


class _View:
    """Adjacency restricted to a subgraph, iterated in deterministic order."""

    def __init__(self, graph: Graph, subgraph: Subgraph | None):
        self.graph = graph
        if subgraph is None:
            self.nodes = sorted(graph.nodes)
            edge_ids = range(len(graph.edges))
        else:
            self.nodes = sorted(subgraph.node_ids)
            edge_ids = subgraph.edge_ids
        members = set(self.nodes)
        self.out: dict[str, list[int]] = {n: [] for n in self.nodes}
        for i in sorted(edge_ids):
            e = graph.edges[i]
            if e.src in members and e.dst in members:
                self.out[e.src].append(i)


def _search(pattern: MetapathPattern, view: _View) -> Iterator[tuple[list[str], list[int], list[int]]]:
    atoms = pattern.atoms
    graph = view.graph
    nodes: list[str] = []
    edges: list[int] = []
    units: list[int] = []

    def extend(unit: int, reps: int) -> Iterator[tuple[list[str], list[int], list[int]]]:
        if unit == len(atoms):
            if nodes:
                yield list(nodes), list(edges), list(units)
            return
        atom = atoms[unit]
        if atom.quantifier.allows(reps):
            yield from extend(unit + 1, 0)
        if atom.quantifier.max is not None and reps >= atom.quantifier.max:
            return
        if len(nodes) >= MAX_PATH_NODES:
            return
        if not nodes:
            steps = [(None, n) for n in view.nodes]
        else:
            edge_matcher = pattern.edges[unit - 1] if unit > 0 else None
            steps = [
                (i, graph.edges[i].dst)
                for i in view.out[nodes[-1]]
                if edge_matcher is None or edge_matcher.matches(graph.edges[i].kind)
            ]
        for edge_id, nxt in steps:
            if nxt in nodes or not atom.matcher.matches(graph.node(nxt)):
                continue
            nodes.append(nxt)
            units.append(unit)
            if edge_id is not None:
                edges.append(edge_id)
            yield from extend(unit, reps + 1)
            nodes.pop()
            units.pop()
            if edge_id is not None:
                edges.pop()

    yield from extend(0, 0)


def _bindings(pattern: MetapathPattern, nodes: Sequence[str], units: Sequence[int]) -> tuple[tuple[str, str], ...]:
    first: dict[int, str] = {}
    for node, unit in zip(nodes, units):
        first.setdefault(unit, node)
    return tuple((a.slot, first[i]) for i, a in enumerate(pattern.atoms) if a.slot and i in first)


def match_pattern(pattern: MetapathPattern, graph: Graph, subgraph: Subgraph | None = None) -> list[MetapathInstance]:
    """Every simple directed path in the subgraph matching the whole pattern.

    Instances are deduplicated by (pattern id, bindings, path) and sorted by
    (first node id, path length).
    """
    view = _View(graph, subgraph)
    found: dict[tuple, MetapathInstance] = {}
    for nodes, edges, units in _search(pattern, view):
        inst = MetapathInstance(pattern.id, _bindings(pattern, nodes, units), tuple(nodes), tuple(edges), tuple(units))
        found.setdefault((inst.bindings, inst.nodes, inst.edge_ids), inst)
    return sorted(found.values(), key=MetapathInstance.sort_key)


def validate_instance(pattern: MetapathPattern, instance: MetapathInstance, graph: Graph) -> bool:
    """Re-check an instance node by node and edge by edge against its pattern."""
    nodes, edges, units = instance.nodes, instance.edge_ids, instance.units
    if not nodes or len(edges) != len(nodes) - 1 or len(units) != len(nodes) or len(set(nodes)) != len(nodes):
        return False
    if list(units) != sorted(units):
        return False
    for i, atom in enumerate(pattern.atoms):
        if not atom.quantifier.allows(units.count(i)):
            return False
    for k, (node, unit) in enumerate(zip(nodes, units)):
        if not pattern.atoms[unit].matcher.matches(graph.node(node)):
            return False
        if k:
            e = graph.edges[edges[k - 1]]
            if (e.src, e.dst) != (nodes[k - 1], node):
                return False
            if unit > 0 and not pattern.edges[unit - 1].matches(e.kind):
                return False
    return instance.bindings == _bindings(pattern, nodes, units)


def _present_keys(graph: Graph, subgraph: Subgraph | None) -> set[str]:
    ids = graph.nodes if subgraph is None else subgraph.node_ids
    keys = set()
    for nid in ids:
        kind = graph.node(nid).kind
        keys.add(normalize_type_name(kind.category))
        if kind.element_kind:
            keys.add(normalize_type_name(kind.element_kind))
    return keys


def select_patterns(
    library: Sequence[MetapathPattern], graph: Graph, subgraph: Subgraph | None = None
) -> list[MetapathPattern]:
    """Order candidate patterns: business tier (when data is present), applicable general, then basic."""
    present = _present_keys(graph, subgraph)

    def applicable(p: MetapathPattern) -> bool:
        return all(a.quantifier.min == 0 or a.matcher.keys & present for a in p.atoms)

    business = [p for p in library if p.tier == "business"] if "businessdata" in present else []
    general = [p for p in library if p.tier == "general" and applicable(p)]
    basic = [p for p in library if p.tier == "basic"]
    return business + general + basic
