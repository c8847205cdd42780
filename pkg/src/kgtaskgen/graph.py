"""Heterogeneous knowledge graph: typed nodes and edges, embeddings, exact vector index."""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputWarning,
    GraphError,
    DimensionMismatchError,
    DuplicateEdgeError,
    DuplicateNodeError,
    FrozenGraphError,
    GraphFormatError,
    GraphVersionError,
    UnknownNodeError,
)

FORMAT_VERSION = 1
DEFAULT_DIMENSION = 384

NODE_CATEGORIES = (
    "Paragraph",
    "Heading",
    "Table",
    "Figure",
    "SemanticChunk",
    "Entity",
    "Document",
    "WebPage",
    "WebElement",
)
ELEMENT_KINDS = (
    "button",
    "input",
    "form",
    "link",
    "navigation",
    "modal",
    "toast",
    "search_box",
    "filter",
    "result_item",
    "business_data",
)
ENTITY_CLASSES = ("person", "location", "organization", "other")
ROOT_CATEGORIES = frozenset({"Document", "WebPage"})

TEXT_EDGE_KINDS = (
    "sequence",
    "contains",
    "entity_relation",
    "semantic_similarity",
    "figure_context",
    "table_context",
    "co_reference",
    "cross_doc_link",
)
WEB_EDGE_KINDS = (
    "nav_to",
    "form_submit",
    "click_trigger",
    "fills",
    "controls",
    "layout",
    "data_flow",
)
EDGE_KINDS = TEXT_EDGE_KINDS + WEB_EDGE_KINDS


def normalize_type_name(name: str) -> str:
    """Case- and underscore-insensitive key: ``SearchBox``, ``search_box`` -> ``searchbox``."""
    return name.replace("_", "").lower()


@dataclass(frozen=True)
class NodeKind:
    category: str
    element_kind: str | None = None
    entity_class: str | None = None

    def __post_init__(self) -> None:
        if self.category not in NODE_CATEGORIES:
            raise ValueError(f"unknown node category {self.category!r}")
        if (self.category == "WebElement") != (self.element_kind is not None):
            raise ValueError("element_kind is required for, and only for, WebElement nodes")
        if self.element_kind is not None and self.element_kind not in ELEMENT_KINDS:
            raise ValueError(f"unknown element kind {self.element_kind!r}")
        if self.category == "Entity":
            if self.entity_class not in ENTITY_CLASSES:
                raise ValueError(f"Entity nodes need entity_class in {ENTITY_CLASSES}")
        elif self.entity_class is not None:
            raise ValueError("entity_class only applies to Entity nodes")

    @classmethod
    def element(cls, element_kind: str) -> NodeKind:
        return cls("WebElement", element_kind=element_kind)

    @classmethod
    def entity(cls, entity_class: str = "other") -> NodeKind:
        return cls("Entity", entity_class=entity_class)

    @property
    def name(self) -> str:
        """Most specific type name: the element kind for web elements, else the category."""
        return self.element_kind or self.category

    def matches(self, type_name: str) -> bool:
        key = normalize_type_name(type_name)
        return key == normalize_type_name(self.category) or (
            self.element_kind is not None and key == normalize_type_name(self.element_kind)
        )


@dataclass(eq=False)
class Node:
    id: str
    kind: NodeKind
    text: str
    embedding: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)
    source_path: str = ""
    contextual_path: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        emb = np.array(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise DimensionMismatchError("embedding must be a 1-D vector")
        emb.setflags(write=False)
        self.embedding = emb
        self.contextual_path = tuple(self.contextual_path)
        for key, value in self.metadata.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise TypeError("node metadata must map str to str")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Node):
            return NotImplemented
        return (
            self.id == other.id
            and self.kind == other.kind
            and self.text == other.text
            and np.array_equal(self.embedding, other.embedding)
            and self.metadata == other.metadata
            and self.source_path == other.source_path
            and self.contextual_path == other.contextual_path
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"edge weight {self.weight} outside [0, 1]")

    @property
    def is_web(self) -> bool:
        return self.kind in WEB_EDGE_KINDS


def cosine_similarity(a, b, *, return_flag: bool = False):
    """Cosine of two vectors, clamped to [-1, 1].

    A zero vector on either side yields 0.0; with ``return_flag=True`` the
    result is ``(value, degenerate)`` so callers can tell that case apart.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return (0.0, True) if return_flag else 0.0
    value = float(np.dot(a, b)) / (na * nb)
    value = min(1.0, max(-1.0, value))
    return (value, False) if return_flag else value


class VectorIndex:
    """Exact (linear-scan) cosine index over node embeddings."""

    def __init__(self, dimension: int):
        self.dimension = dimension
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._unit: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._ids

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def add(self, node_id: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"vector has {vector.size} components, index dimension is {self.dimension}"
            )
        self._ids.append(node_id)
        self._rows.append(vector)
        self._matrix = self._unit = None

    def _normalized(self) -> np.ndarray:
        if self._unit is None:
            self._matrix = (
                np.vstack(self._rows) if self._rows else np.zeros((0, self.dimension))
            )
            norms = np.linalg.norm(self._matrix, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            self._unit = self._matrix / norms
        return self._unit

    def similarities(self, query: np.ndarray) -> dict[str, float]:
        """Cosine of ``query`` against every entry (zero vectors score 0)."""
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query has {query.size} components, index dimension is {self.dimension}"
            )
        qn = float(np.linalg.norm(query))
        if qn == 0.0 or not self._ids:
            return {i: 0.0 for i in self._ids}
        sims = np.clip(self._normalized() @ (query / qn), -1.0, 1.0)
        return dict(zip(self._ids, (float(s) for s in sims)))

    def query(self, query_vector: np.ndarray, top_k: int) -> list[tuple[str, float]]:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        sims = self.similarities(query_vector)
        ranked = sorted(sims.items(), key=lambda item: (-item[1], item[0]))
        return ranked[:top_k]


def knn_query(index: VectorIndex, query_vector, top_k: int) -> list[tuple[str, float]]:
    """Top-``top_k`` entries by cosine, ties broken by ascending node id."""
    return index.query(query_vector, top_k)


class Graph:
    """G = (V, E, R) with adjacency lists and a vector index.

    Construction is single-writer; :meth:`freeze` makes the graph read-only so
    it can be shared between worker threads.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.nodes: dict[str, Node] = {}
        self.edges: list[Edge] = []
        self._out: dict[str, list[int]] = {}
        self._in: dict[str, list[int]] = {}
        self._edge_keys: set[tuple[str, str, str]] = set()
        self._relations: set[str] = set()
        self.index = VectorIndex(dimension)
        self.frozen = False

    def __repr__(self) -> str:
        return f"Graph(|V|={len(self.nodes)}, |E|={len(self.edges)}, d={self.dimension})"

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and list(self.nodes) == list(other.nodes)
            and all(self.nodes[k] == other.nodes[k] for k in self.nodes)
            and self.edges == other.edges
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def relation_set(self) -> frozenset[str]:
        return frozenset(self._relations)

    def freeze(self) -> Graph:
        self.frozen = True
        self.index._normalized()
        return self

    def _check_writable(self) -> None:
        if self.frozen:
            raise FrozenGraphError("graph is frozen")

    def add_node(self, node: Node) -> str:
        self._check_writable()
        if node.id in self.nodes:
            raise DuplicateNodeError(f"node {node.id!r} already present")
        if node.embedding.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"node {node.id!r} embedding has {node.embedding.size} components, "
                f"graph dimension is {self.dimension}"
            )
        if node.kind.category not in ROOT_CATEGORIES and not node.contextual_path:
            raise ValueError(f"non-root node {node.id!r} needs a contextual path")
        self.nodes[node.id] = node
        self._out[node.id] = []
        self._in[node.id] = []
        self.index.add(node.id, node.embedding)
        return node.id

    def add_edge(self, src: str, dst: str, kind: str, weight: float = 1.0) -> int:
        self._check_writable()
        for endpoint in (src, dst):
            if endpoint not in self.nodes:
                raise UnknownNodeError(f"unknown endpoint {endpoint!r}")
        key = (src, dst, kind)
        if key in self._edge_keys:
            raise DuplicateEdgeError(f"edge {src!r} -[{kind}]-> {dst!r} already present")
        edge = Edge(src, dst, kind, weight)
        idx = len(self.edges)
        self.edges.append(edge)
        self._edge_keys.add(key)
        self._out[src].append(idx)
        self._in[dst].append(idx)
        self._relations.add(kind)
        return idx

    def has_edge(self, src: str, dst: str, kind: str) -> bool:
        return (src, dst, kind) in self._edge_keys

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node {node_id!r}") from None

    def out_edges(self, node_id: str) -> list[int]:
        self.node(node_id)
        return list(self._out[node_id])

    def in_edges(self, node_id: str) -> list[int]:
        self.node(node_id)
        return list(self._in[node_id])

    def neighbors(self, node_id: str) -> set[str]:
        """Undirected one-hop neighbourhood."""
        self.node(node_id)
        out = {self.edges[i].dst for i in self._out[node_id]}
        out |= {self.edges[i].src for i in self._in[node_id]}
        out.discard(node_id)
        return out

    def k_hop_neighbors(self, node_id: str, k: int) -> set[str]:
        return k_hop_neighbors(self, node_id, k)

    def nodes_of(self, category: str | None = None, element_kind: str | None = None) -> list[Node]:
        return [
            n
            for n in self.nodes.values()
            if (category is None or n.kind.category == category)
            and (element_kind is None or n.kind.element_kind == element_kind)
        ]

    def iter_edges(self, indices: Iterable[int] | None = None) -> Iterator[tuple[int, Edge]]:
        if indices is None:
            yield from enumerate(self.edges)
        else:
            for i in indices:
                yield i, self.edges[i]

    def induced_edges(self, node_ids: Iterable[str]) -> list[int]:
        """Indices of edges with both endpoints in ``node_ids``, in graph order."""
        members = set(node_ids)
        return [i for i, e in enumerate(self.edges) if e.src in members and e.dst in members]

    def check_consistency(self) -> None:
        """Assert the adjacency lists mirror the edge list exactly."""
        out_pairs = sorted((nid, i) for nid, lst in self._out.items() for i in lst)
        in_pairs = sorted((nid, i) for nid, lst in self._in.items() for i in lst)
        assert out_pairs == sorted((e.src, i) for i, e in enumerate(self.edges))
        assert in_pairs == sorted((e.dst, i) for i, e in enumerate(self.edges))
        assert self._relations == {e.kind for e in self.edges}
        assert len(self.index) == len(self.nodes)


def k_hop_neighbors(graph: Graph, node_id: str, k: int) -> set[str]:
    """Nodes at undirected hop distance 1..k from ``node_id`` (source excluded)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    graph.node(node_id)
    seen = {node_id}
    frontier = deque([(node_id, 0)])
    while frontier:
        current, dist = frontier.popleft()
        if dist == k:
            continue
        for nxt in graph.neighbors(current):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, dist + 1))
    seen.discard(node_id)
    return seen


def undirected_distances(
    graph: Graph, source: str, members: set[str] | None = None, edge_ids: Sequence[int] | None = None
) -> dict[str, int]:
    """BFS hop distances from ``source``, optionally restricted to a node/edge subset."""
    if edge_ids is None:
        adj = None
    else:
        adj: dict[str, set[str]] = {}
        for i in edge_ids:
            e = graph.edges[i]
            adj.setdefault(e.src, set()).add(e.dst)
            adj.setdefault(e.dst, set()).add(e.src)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        cur = queue.popleft()
        nbrs = graph.neighbors(cur) if adj is None else adj.get(cur, set())
        for nxt in nbrs:
            if members is not None and nxt not in members:
                continue
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


# -- persistence ---------------------------------------------------------------

_NODE_REQUIRED = {"id", "kind", "text", "embedding", "metadata", "source_path", "contextual_path"}
_NODE_ALLOWED = _NODE_REQUIRED | {"element_kind", "entity_class"}
_EDGE_FIELDS = {"src", "dst", "kind", "weight"}
_TOP_FIELDS = {"version", "dimension", "nodes", "edges"}


def graph_to_dict(graph: Graph) -> dict:
    nodes = []
    for n in graph.nodes.values():
        rec = {
            "id": n.id,
            "kind": n.kind.category,
            "text": n.text,
            "embedding": [float(x) for x in n.embedding],
            "metadata": dict(n.metadata),
            "source_path": n.source_path,
            "contextual_path": list(n.contextual_path),
        }
        if n.kind.element_kind is not None:
            rec["element_kind"] = n.kind.element_kind
        if n.kind.entity_class is not None:
            rec["entity_class"] = n.kind.entity_class
        nodes.append(rec)
    edges = [{"src": e.src, "dst": e.dst, "kind": e.kind, "weight": e.weight} for e in graph.edges]
    return {"version": FORMAT_VERSION, "dimension": graph.dimension, "nodes": nodes, "edges": edges}


def serialize_graph(graph: Graph) -> bytes:
    """Versioned JSON encoding; byte-stable for equal graphs."""
    payload = graph_to_dict(graph)
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode(
        "utf-8"
    )


def _require_keys(record: dict, required: set[str], allowed: set[str], what: str) -> None:
    if not isinstance(record, dict):
        raise GraphFormatError(f"{what} must be a JSON object")
    missing = required - record.keys()
    unknown = record.keys() - allowed
    if missing:
        raise GraphFormatError(f"{what} missing fields {sorted(missing)}")
    if unknown:
        raise GraphFormatError(f"{what} has unknown fields {sorted(unknown)}")


def graph_from_dict(payload: dict) -> Graph:
    _require_keys(payload, _TOP_FIELDS, _TOP_FIELDS, "graph")
    if payload["version"] != FORMAT_VERSION:
        raise GraphVersionError(
            f"graph format version {payload['version']!r}, expected {FORMAT_VERSION}"
        )
    dimension = payload["dimension"]
    if not isinstance(dimension, int) or isinstance(dimension, bool):
        raise GraphFormatError("dimension must be an integer")
    graph = Graph(dimension)
    try:
        for rec in payload["nodes"]:
            _require_keys(rec, _NODE_REQUIRED, _NODE_ALLOWED, "node")
            kind = NodeKind(rec["kind"], rec.get("element_kind"), rec.get("entity_class"))
            graph.add_node(
                Node(
                    id=rec["id"],
                    kind=kind,
                    text=rec["text"],
                    embedding=np.array(rec["embedding"], dtype=np.float64),
                    metadata=dict(rec["metadata"]),
                    source_path=rec["source_path"],
                    contextual_path=tuple(rec["contextual_path"]),
                )
            )
        for rec in payload["edges"]:
            _require_keys(rec, _EDGE_FIELDS, _EDGE_FIELDS, "edge")
            graph.add_edge(rec["src"], rec["dst"], rec["kind"], float(rec["weight"]))
    except GraphFormatError:
        raise
    except (TypeError, ValueError, KeyError, GraphError) as exc:
        raise GraphFormatError(f"invalid graph payload: {exc}") from exc
    return graph


def load_graph(data: bytes | str) -> Graph:
    try:
        payload = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GraphFormatError(f"malformed graph payload: {exc}") from exc
    return graph_from_dict(payload)


def warn_degenerate(message: str) -> None:
    warnings.warn(message, DegenerateInputWarning, stacklevel=3)
