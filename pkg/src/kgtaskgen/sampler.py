"""Objective-driven subgraph sampling over the knowledge graph.

Document mode keeps nodes whose embedding is close to the goal or that match the
goal structurally; web mode grows k-hop neighbourhoods around interactive seeds.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError
from .graph import Edge, Graph, Node, cosine_similarity, k_hop_neighbors

DOCUMENT_NODE_SET = frozenset({"Paragraph", "Heading", "Table", "Figure", "SemanticChunk", "Entity"})
WEB_NODE_SET = frozenset({"WebPage", "WebElement"})
SEED_KINDS = frozenset({"button", "input", "search_box", "form", "link", "navigation", "filter"})
MODES = ("document", "web")


@dataclass(frozen=True)
class SeedSelector:
    """Restricts web seeds to some element kinds and/or one page url."""

    kinds: frozenset[str] = SEED_KINDS
    page_url: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kinds", frozenset(self.kinds))
        unknown = self.kinds - SEED_KINDS
        if unknown:
            raise ValueError(f"seed kinds must be interactive element kinds, got {sorted(unknown)}")

    def accepts(self, node: Node) -> bool:
        if node.kind.element_kind not in self.kinds:
            return False
        return self.page_url is None or node.metadata.get("url") == self.page_url


@dataclass(frozen=True)
class TaskObjective:
    goal_text: str
    goal_embedding: np.ndarray = field(compare=False)
    mode: str = "document"
    required_node_kinds: frozenset[str] = frozenset()
    required_edge_kinds: frozenset[str] = frozenset()
    required_context: str | None = None  # label that must appear on the node's contextual path
    seed_selector: SeedSelector | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        emb = np.array(self.goal_embedding, dtype=np.float64)
        emb.setflags(write=False)
        object.__setattr__(self, "goal_embedding", emb)
        object.__setattr__(self, "required_node_kinds", frozenset(self.required_node_kinds))
        object.__setattr__(self, "required_edge_kinds", frozenset(self.required_edge_kinds))
        if self.mode == "document" and self.seed_selector is not None:
            raise ValueError("seed_selector only applies to web objectives")

    @classmethod
    def from_text(cls, goal_text: str, embedder, **kwargs) -> TaskObjective:
        return cls(goal_text, embedder.embed(goal_text), **kwargs)


@dataclass(frozen=True)
class SamplerConfig:
    tau: float = 0.5
    k: int = 2

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Subgraph:
    node_ids: frozenset[str]
    edge_ids: tuple[int, ...]
    seed_ids: frozenset[str] = frozenset()
    objective_ref: str = ""
    diagnostics: tuple[str, ...] = ()

    @classmethod
    def induced(cls, graph: Graph, node_ids: Iterable[str], **kwargs) -> Subgraph:
        members = frozenset(node_ids)
        return cls(members, tuple(graph.induced_edges(members)), **kwargs)

    def edges(self, graph: Graph) -> list[Edge]:
        return [graph.edges[i] for i in self.edge_ids]

    def nodes(self, graph: Graph) -> list[Node]:
        return [graph.node(n) for n in sorted(self.node_ids)]

    def __len__(self) -> int:
        return len(self.node_ids)


def relevance(node: Node, objective: TaskObjective) -> float:
    if node.embedding.shape != objective.goal_embedding.shape:
        raise DimensionMismatchError(
            f"node {node.id} has dimension {node.embedding.shape[0]}, goal {objective.goal_embedding.shape[0]}"
        )
    return cosine_similarity(node.embedding, objective.goal_embedding)


def struct_match(node: Node, objective: TaskObjective) -> bool:
    if not any(node.kind.matches(k) for k in objective.required_node_kinds):
        return False
    if objective.required_context:
        wanted = objective.required_context.lower()
        return any(wanted in label.lower() for label in node.contextual_path)
    return True


def sample_document_subgraph(graph: Graph, objective: TaskObjective, config: SamplerConfig) -> Subgraph:
    if objective.mode != "document":
        raise ValueError("document sampling needs a document-mode objective")
    if objective.goal_embedding.shape != (graph.dimension,):
        raise DimensionMismatchError("goal embedding dimension differs from the graph's")
    chosen = [
        node.id
        for node in graph.nodes.values()
        if node.kind.category in DOCUMENT_NODE_SET
        and (relevance(node, objective) > config.tau or struct_match(node, objective))
    ]
    return Subgraph.induced(graph, chosen, objective_ref=objective.goal_text)


def identify_seeds(graph: Graph, objective: TaskObjective) -> set[str]:
    selector = objective.seed_selector or SeedSelector()
    return {n.id for n in graph.nodes.values() if n.kind.category == "WebElement" and selector.accepts(n)}


def sample_web_subgraph(graph: Graph, objective: TaskObjective, config: SamplerConfig) -> Subgraph:
    if objective.mode != "web":
        raise ValueError("web sampling needs a web-mode objective")
    seeds = identify_seeds(graph, objective)
    if not seeds:
        return Subgraph(frozenset(), (), objective_ref=objective.goal_text, diagnostics=("no seed nodes matched",))
    chosen = set(seeds)
    for seed in sorted(seeds):
        chosen.update(n for n in k_hop_neighbors(graph, seed, config.k) if graph.node(n).kind.category in WEB_NODE_SET)
    return Subgraph.induced(graph, chosen, seed_ids=frozenset(seeds), objective_ref=objective.goal_text)


def sample_subgraph(graph: Graph, objective: TaskObjective, config: SamplerConfig | None = None) -> Subgraph:
    config = config or SamplerConfig()
    if objective.mode == "document":
        return sample_document_subgraph(graph, objective, config)
    return sample_web_subgraph(graph, objective, config)
