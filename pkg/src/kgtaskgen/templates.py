"""Document task templates: structural requirements, variable extraction and rendering."""

from __future__ import annotations

import json
import re
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import RenderError, RequirementError, TemplateError
from .graph import Graph, Node, undirected_distances
from .sampler import Subgraph

TASK_TYPES = (
    "information_extraction",
    "comprehension",
    "summarization",
    "question_answering",
    "multi_hop_reasoning",
    "comparison",
    "analysis",
    "reasoning",
    "fact_verification",
    "figure_interpretation",
    "table_qa",
    "cross_reference",
)
DIFFICULTIES = ("Easy", "Medium", "Hard", "Expert")

# category -> per-kind list variable name
KIND_LISTS = {
    "Paragraph": "paragraphs",
    "Heading": "headings",
    "Table": "tables",
    "Figure": "figures",
    "SemanticChunk": "chunks",
    "Entity": "entities",
}
ITEM_LISTS = ("items", "comparison_items")
SCALAR_VARIABLES = ("title", "author", "source_path", "node_count")

_PLACEHOLDER = re.compile(r"\{\{(.*?)\}\}", re.DOTALL)
_PATH = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*|\[\d+\])*$")
_PATH_PART = re.compile(r"\.?([A-Za-z_][A-Za-z0-9_]*)|\[(\d+)\]")


@dataclass(frozen=True)
class GraphRequirements:
    required_node_kinds: tuple[str, ...] = ()
    required_edge_kinds: tuple[str, ...] = ()
    min_nodes: int = 1
    max_nodes: int = 12
    max_hops: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "required_node_kinds", tuple(self.required_node_kinds))
        object.__setattr__(self, "required_edge_kinds", tuple(self.required_edge_kinds))
        if not 1 <= self.min_nodes <= self.max_nodes:
            raise ValueError("requirements need 1 <= min_nodes <= max_nodes")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        unknown = [k for k in self.required_node_kinds if k not in KIND_LISTS]
        if unknown:
            raise ValueError(f"templates can only require document node kinds, got {unknown}")


@dataclass(frozen=True)
class EvaluationSpec:
    metrics: tuple[str, ...] = ("token_f1", "rouge_l")
    exact_match: bool = False
    require_citations: bool = True
    require_reasoning_path: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "metrics", tuple(self.metrics))


@dataclass(frozen=True)
class TaskTemplate:
    template_id: str
    name: str
    description: str
    task_type: str
    difficulty: str
    prompt_template: str
    gold_template: str
    requirements: GraphRequirements
    evaluation: EvaluationSpec = EvaluationSpec()
    version: str = "1.0"
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", tuple(self.tags))
        if self.task_type not in TASK_TYPES:
            raise TemplateError(f"{self.template_id}: unknown task type {self.task_type!r}")
        if self.difficulty not in DIFFICULTIES:
            raise TemplateError(f"{self.template_id}: difficulty must be one of {DIFFICULTIES}")
        allowed = extractable_variables(self.requirements)
        for text in (self.prompt_template, self.gold_template):
            for path in placeholder_paths(text):
                root = _split_path(path)[0]
                if root not in allowed:
                    raise TemplateError(f"{self.template_id}: placeholder {path!r} is not extractable")

    def variable_names(self) -> tuple[str, ...]:
        names = {_split_path(p)[0] for t in (self.prompt_template, self.gold_template) for p in placeholder_paths(t)}
        return tuple(sorted(names))

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["tags"] = list(data["tags"])
        data["requirements"] = {k: list(v) if isinstance(v, tuple) else v for k, v in data["requirements"].items()}
        data["evaluation"] = {k: list(v) if isinstance(v, tuple) else v for k, v in data["evaluation"].items()}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TaskTemplate:
        fields_ = set(cls.__dataclass_fields__)
        unknown = set(data) - fields_
        missing = {"template_id", "name", "description", "task_type", "difficulty", "prompt_template", "gold_template", "requirements"} - set(data)
        if unknown or missing:
            raise TemplateError(f"template record: unknown fields {sorted(unknown)}, missing {sorted(missing)}")
        values = dict(data)
        try:
            values["requirements"] = GraphRequirements(**data["requirements"])
            values["evaluation"] = EvaluationSpec(**data.get("evaluation", {}))
        except TypeError as exc:
            raise TemplateError(f"template {data.get('template_id')}: {exc}") from exc
        return cls(**values)


def extractable_variables(requirements: GraphRequirements) -> set[str]:
    names = set(SCALAR_VARIABLES) | set(ITEM_LISTS)
    names |= {KIND_LISTS[k] for k in requirements.required_node_kinds}
    if requirements.required_edge_kinds:
        names.add("relations")
    return names


def load_templates(path: str | Path | None = None) -> list[TaskTemplate]:
    if path is None:
        raw = resources.files("kgtaskgen").joinpath("data/templates.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    library = [TaskTemplate.from_dict(entry) for entry in json.loads(raw)]
    ids = [t.template_id for t in library]
    if len(set(ids)) != len(ids):
        raise TemplateError("template ids must be unique")
    return library


def dump_templates(templates: Sequence[TaskTemplate]) -> str:
    return json.dumps([t.to_dict() for t in templates], indent=2, ensure_ascii=False) + "\n"


# -- placeholders ---------------------------------------------------------------


def placeholder_paths(text: str) -> list[str]:
    return [m.group(1).strip() for m in _PLACEHOLDER.finditer(text)]


def _split_path(path: str) -> list[str | int]:
    if not _PATH.match(path):
        raise RenderError(f"malformed placeholder path {path!r}")
    return [int(index) if index else name for name, index in _PATH_PART.findall(path)]


def _index_demands(template: TaskTemplate) -> dict[str, int]:
    """Minimum list lengths implied by indexed placeholders (``items[1]`` needs 2 items)."""
    need: dict[str, int] = {}
    for text in (template.prompt_template, template.gold_template):
        for path in placeholder_paths(text):
            parts = _split_path(path)
            if len(parts) > 1 and isinstance(parts[1], int):
                need[parts[0]] = max(need.get(parts[0], 0), parts[1] + 1)
    return need


def render(template_text: str, variables: Mapping[str, Any]) -> str:
    """Substitute every ``{{ path }}`` with a scalar from ``variables``.

    Substituted values have their own brace pairs broken up so the output never
    contains ``{{``.
    """
    out = []
    last = 0
    for match in _PLACEHOLDER.finditer(template_text):
        literal = template_text[last : match.start()]
        if "{{" in literal or "}}" in literal:
            raise TemplateError("unbalanced placeholder braces in template")
        out.append(literal)
        out.append(_sanitize(_resolve(variables, match.group(1).strip())))
        last = match.end()
    tail = template_text[last:]
    if "{{" in tail or "}}" in tail:
        raise TemplateError("unbalanced placeholder braces in template")
    out.append(tail)
    # a literal brace next to a substituted one could still form a pair
    return _sanitize("".join(out))


def _resolve(variables: Mapping[str, Any], path: str) -> str:
    value: Any = variables
    for part in _split_path(path):
        if isinstance(part, int):
            if not isinstance(value, (list, tuple)):
                raise RenderError(f"cannot index a non-list while resolving {path!r}")
            if part >= len(value):
                raise RenderError(f"index {part} out of range while resolving {path!r}")
            value = value[part]
        else:
            if not isinstance(value, Mapping):
                raise RenderError(f"cannot read field {part!r} of a non-map while resolving {path!r}")
            if part not in value:
                raise RenderError(f"unknown placeholder path {path!r}")
            value = value[part]
    if isinstance(value, bool) or not isinstance(value, (str, int, float)):
        raise RenderError(f"placeholder {path!r} does not resolve to a scalar")
    return str(value)


def _sanitize(text: str) -> str:
    while "{{" in text or "}}" in text:
        text = text.replace("{{", "{ {").replace("}}", "} }")
    return text


# -- matching and extraction --------------------------------------------------


def _order_key(node: Node) -> tuple:
    order = node.metadata.get("order", "")
    return (node.source_path, int(order) if order.isdigit() else 1 << 30, node.id)


def _nodes_by_kind(graph: Graph, subgraph: Subgraph) -> dict[str, list[Node]]:
    grouped: dict[str, list[Node]] = {}
    for nid in subgraph.node_ids:
        node = graph.node(nid)
        grouped.setdefault(node.kind.category, []).append(node)
    return {k: sorted(v, key=_order_key) for k, v in grouped.items()}


def subgraph_diameter(graph: Graph, subgraph: Subgraph) -> int | None:
    """Undirected hop diameter over E_g; None when the subgraph is disconnected or empty."""
    members = set(subgraph.node_ids)
    if not members:
        return None
    diameter = 0
    for source in sorted(members):
        dist = undirected_distances(graph, source, members, subgraph.edge_ids)
        if len(dist) != len(members):
            return None
        diameter = max(diameter, max(dist.values()))
    return diameter


def template_matches(template: TaskTemplate, graph: Graph, subgraph: Subgraph) -> bool:
    req = template.requirements
    if not req.min_nodes <= len(subgraph.node_ids) <= req.max_nodes:
        return False
    by_kind = _nodes_by_kind(graph, subgraph)
    if any(not by_kind.get(k) for k in req.required_node_kinds):
        return False
    edge_kinds = {graph.edges[i].kind for i in subgraph.edge_ids}
    if any(k not in edge_kinds for k in req.required_edge_kinds):
        return False
    counts = {KIND_LISTS[k]: len(v) for k, v in by_kind.items() if k in KIND_LISTS}
    counts["items"] = counts["comparison_items"] = sum(len(by_kind.get(k, [])) for k in req.required_node_kinds)
    counts["relations"] = len(_relations(graph, subgraph, req))
    for name, needed in _index_demands(template).items():
        if counts.get(name, 0) < needed:
            return False
    diameter = subgraph_diameter(graph, subgraph)
    return diameter is not None and diameter <= req.max_hops


def _item(node: Node) -> dict[str, Any]:
    return {
        "content": node.text,
        "node_id": node.id,
        "kind": node.kind.name,
        "metadata": dict(node.metadata),
        "section": node.contextual_path[-1] if node.contextual_path else "",
    }


def _relations(graph: Graph, subgraph: Subgraph, req: GraphRequirements) -> list[dict[str, str]]:
    wanted = set(req.required_edge_kinds)
    rows = []
    for i in subgraph.edge_ids:
        edge = graph.edges[i]
        if edge.kind in wanted:
            rows.append(
                {
                    "src": graph.node(edge.src).text,
                    "kind": edge.kind,
                    "dst": graph.node(edge.dst).text,
                    "src_id": edge.src,
                    "dst_id": edge.dst,
                }
            )
    return rows


def extract_variables(template: TaskTemplate, graph: Graph, subgraph: Subgraph) -> dict[str, Any]:
    req = template.requirements
    by_kind = _nodes_by_kind(graph, subgraph)
    for kind in req.required_node_kinds:
        if not by_kind.get(kind):
            raise RequirementError(f"required kind {kind} absent")
    edge_kinds = {graph.edges[i].kind for i in subgraph.edge_ids}
    for kind in req.required_edge_kinds:
        if kind not in edge_kinds:
            raise RequirementError(f"required edge kind {kind} absent")
    variables: dict[str, Any] = {
        name: [_item(n) for n in by_kind.get(kind, [])] for kind, name in KIND_LISTS.items()
    }
    items = sorted((n for k in req.required_node_kinds for n in by_kind.get(k, [])), key=_order_key)
    variables["items"] = [_item(n) for n in items]
    variables["comparison_items"] = variables["items"]
    variables["relations"] = _relations(graph, subgraph, req)
    anchor = items[0] if items else min((graph.node(n) for n in subgraph.node_ids), key=_order_key)
    variables["title"] = anchor.metadata.get("title", "")
    variables["author"] = anchor.metadata.get("author", "")
    variables["source_path"] = anchor.source_path
    variables["node_count"] = len(subgraph.node_ids)
    return variables


def cited_node_ids(template: TaskTemplate, variables: Mapping[str, Any]) -> list[str]:
    """Node ids referenced by the template's placeholders, in first-use order."""
    out: list[str] = []
    for text in (template.prompt_template, template.gold_template):
        for path in placeholder_paths(text):
            parts = _split_path(path)
            value: Any = variables
            node_ids: list[str] = []
            for part in parts:
                value = value[part]
                if isinstance(value, Mapping) and "node_id" in value:
                    node_ids = [value["node_id"]]
                elif isinstance(value, Mapping) and "src_id" in value:
                    node_ids = [value["src_id"], value["dst_id"]]
            for nid in node_ids:
                if nid not in out:
                    out.append(nid)
    return out


def matching_templates(templates: Sequence[TaskTemplate], graph: Graph, subgraph: Subgraph) -> list[TaskTemplate]:
    return [t for t in templates if template_matches(t, graph, subgraph)]


__all__ = [
    "DIFFICULTIES",
    "EvaluationSpec",
    "GraphRequirements",
    "TASK_TYPES",
    "TaskTemplate",
    "cited_node_ids",
    "dump_templates",
    "extract_variables",
    "load_templates",
    "matching_templates",
    "placeholder_paths",
    "render",
    "subgraph_diameter",
    "template_matches",
]
