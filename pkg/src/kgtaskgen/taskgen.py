"""Turn (template, subgraph) pairs and meta-path instances into task records."""

from __future__ import annotations

import json
import logging
import random
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from .errors import GatewayError, StepSynthesisError, TaskValidationError
from .gateway import DRAFT_MARKER, ChatRequest
from .graph import Graph, Node
from .jsonutil import canonical_json, digest, parse_json_object
from .metapath import MetapathInstance
from .sampler import Subgraph
from .templates import DIFFICULTIES, TASK_TYPES, TaskTemplate, cited_node_ids, extract_variables, render

logger = logging.getLogger(__name__)

ACTIONS = ("navigate", "click", "input", "select", "wait", "assert_visible", "extract")
CAPABILITIES = ("Search", "Filter", "Detail", "Navigate", "Form", "Modal", "Toast")
WEB_TASK_TYPES = (
    "web_search",
    "web_filter",
    "web_detail",
    "web_navigation",
    "web_form",
    "web_modal",
    "web_toast",
    "web_click",
)
_SELECTOR_LIKE = re.compile(r"#[A-Za-z][\w-]*|\b[a-z][a-z0-9]*:nth-of-type\(\d+\)")

# deterministic fallback queries, keyed by a page topic word
QUERY_LEXICON = {
    "shop": ("wireless headphones", "running shoes", "coffee grinder"),
    "library": ("graph databases", "python programming", "climate history"),
    "news": ("election results", "weather forecast", "technology"),
    "travel": ("lisbon hotels", "train to vienna", "weekend flights"),
    "default": ("getting started", "pricing", "contact"),
}


@dataclass(frozen=True)
class WebStep:
    index: int
    action: str
    target_selector: str
    value: str | None = None

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ValueError(f"unknown step action {self.action!r}")
        if self.action in ("input", "select") and self.value is None:
            raise ValueError(f"{self.action} steps need a value")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"index": self.index, "action": self.action, "target_selector": self.target_selector}
        if self.value is not None:
            out["value"] = self.value
        return out


@dataclass(frozen=True)
class PageContext:
    url: str
    title: str
    marked_elements: tuple[tuple[int, str, str, str], ...]  # (mark id, selector, kind, text)
    screenshot_ref: str | None = None

    def __post_init__(self) -> None:
        marks = [m[0] for m in self.marked_elements]
        if len(set(marks)) != len(marks):
            raise ValueError("mark ids must be unique per page")

    def render(self) -> str:
        lines = [f"[{mark}] {kind} {selector} {text[:60]!r}" for mark, selector, kind, text in self.marked_elements]
        return "\n".join(lines)


@dataclass
class Task:
    task_id: str
    kind: str  # document | web
    task_type: str
    difficulty: str
    prompt: str
    citations: list[str]
    provenance: dict[str, Any]
    gold_answer: str | None = None
    web_steps: list[WebStep] | None = None
    chain_name: str | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def content_dict(self) -> dict[str, Any]:
        """The part of the record the task id is derived from."""
        body: dict[str, Any] = {"provenance": self.provenance, "prompt": self.prompt}
        if self.kind == "web":
            body["web_steps"] = [s.to_dict() for s in self.web_steps or []]
        else:
            body["gold_answer"] = self.gold_answer
        return body

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "task_id": self.task_id,
            "kind": self.kind,
            "task_type": self.task_type,
            "difficulty": self.difficulty,
            "prompt": self.prompt,
            "citations": list(self.citations),
            "provenance": self.provenance,
            "metadata": self.metadata,
        }
        if self.gold_answer is not None:
            out["gold_answer"] = self.gold_answer
        if self.web_steps is not None:
            out["web_steps"] = [s.to_dict() for s in self.web_steps]
        if self.chain_name is not None:
            out["chain_name"] = self.chain_name
        return out

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> Task:
        validate_record(record)
        steps = record.get("web_steps")
        return cls(
            task_id=record["task_id"],
            kind=record["kind"],
            task_type=record["task_type"],
            difficulty=record["difficulty"],
            prompt=record["prompt"],
            citations=list(record["citations"]),
            provenance=dict(record["provenance"]),
            gold_answer=record.get("gold_answer"),
            web_steps=[WebStep(**s) for s in steps] if steps is not None else None,
            chain_name=record.get("chain_name"),
            metadata=dict(record["metadata"]),
        )

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def subgraph_ids(self) -> list[str]:
        return list(self.provenance.get("subgraph", []))

    @property
    def source_id(self) -> str:
        return self.provenance.get("template_id") or self.provenance.get("pattern_id", "")


def compute_task_id(task: Task) -> str:
    prefix = "doc" if task.kind == "document" else "web"
    return f"{prefix}-{digest(task.content_dict())}"


_SCALAR = {"type": ["string", "number", "integer", "boolean", "null"]}
TASK_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["task_id", "kind", "task_type", "difficulty", "prompt", "citations", "provenance", "metadata"],
    "properties": {
        "task_id": {"type": "string", "pattern": "^(doc|web)-[0-9a-f]{16}$"},
        "kind": {"enum": ["document", "web"]},
        "task_type": {"enum": list(TASK_TYPES + WEB_TASK_TYPES)},
        "difficulty": {"enum": list(DIFFICULTIES)},
        "prompt": {"type": "string"},
        "gold_answer": {"type": "string"},
        "citations": {"type": "array", "items": {"type": "string"}},
        "web_steps": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["index", "action", "target_selector"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "action": {"enum": list(ACTIONS)},
                    "target_selector": {"type": "string", "minLength": 1},
                    "value": {"type": "string"},
                },
            },
        },
        "chain_name": {"type": "string"},
        "provenance": {
            "type": "object",
            "additionalProperties": False,
            "required": ["subgraph", "generator"],
            "properties": {
                "template_id": {"type": "string"},
                "pattern_id": {"type": "string"},
                "subgraph": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "generator": {"enum": ["template", "llm"]},
            },
            "oneOf": [{"required": ["template_id"]}, {"required": ["pattern_id"]}],
        },
        "metadata": {"type": "object", "additionalProperties": _SCALAR},
    },
    "allOf": [
        {
            "if": {"properties": {"kind": {"const": "document"}}},
            "then": {"required": ["gold_answer"], "not": {"required": ["web_steps"]}},
        },
        {
            "if": {"properties": {"kind": {"const": "web"}}},
            "then": {"required": ["web_steps"], "properties": {"web_steps": {"minItems": 1}}},
        },
    ],
}
_VALIDATOR = jsonschema.Draft202012Validator(TASK_SCHEMA)


def validate_record(record: Mapping[str, Any]) -> None:
    """Schema check plus the cross-field invariants the schema cannot express."""
    errors = sorted(_VALIDATOR.iter_errors(record), key=lambda e: list(e.path))
    if errors:
        where = "/".join(str(p) for p in errors[0].path) or "<record>"
        raise TaskValidationError(f"task record invalid at {where}: {errors[0].message}")
    steps = record.get("web_steps") or []
    if [s["index"] for s in steps] != list(range(len(steps))):
        raise TaskValidationError("web step indexes must be contiguous from 0")
    members = set(record["provenance"]["subgraph"])
    stray = [c for c in record["citations"] if c not in members]
    if stray:
        raise TaskValidationError(f"citations outside the subgraph: {stray}")


# -- document tasks --------------------------------------------------------------


def _doc_refine_request(draft: Mapping[str, str], template: TaskTemplate) -> ChatRequest:
    text = (
        f"You are writing a {template.task_type.replace('_', ' ')} task ({template.difficulty}). "
        "Polish the wording of the draft task prompt so it reads naturally. Keep every quoted passage, "
        "keep the gold answer grounded in the passages, and do not add facts.\n"
        'Respond with JSON only: {"prompt": <text>, "gold_answer": <text>}\n'
        f"{DRAFT_MARKER}\n{json.dumps(draft, ensure_ascii=False)}"
    )
    return ChatRequest.user(text)


def _usable_text(value: Any) -> bool:
    return isinstance(value, str) and bool(value.strip()) and "{{" not in value and "}}" not in value


def generate_doc_task(template: TaskTemplate, graph: Graph, subgraph: Subgraph, gateway=None) -> Task:
    variables = extract_variables(template, graph, subgraph)
    prompt = render(template.prompt_template, variables)
    gold = render(template.gold_template, variables)
    citations = cited_node_ids(template, variables)
    if template.evaluation.require_citations and not citations:
        citations = [item["node_id"] for item in variables["items"]]
    generator = "template"
    if gateway is not None:
        draft = {"prompt": prompt, "gold_answer": gold}
        try:
            reply = parse_json_object(gateway.complete(_doc_refine_request(draft, template), "doc_task").text)
            if _usable_text(reply.get("prompt")) and _usable_text(reply.get("gold_answer")):
                prompt, gold, generator = reply["prompt"].strip(), reply["gold_answer"].strip(), "llm"
            else:
                logger.info("refinement for %s rejected, keeping the rendered draft", template.template_id)
        except (GatewayError, ValueError) as exc:
            logger.warning("refinement for %s failed, keeping the rendered draft: %s", template.template_id, exc)
    task = Task(
        task_id="",
        kind="document",
        task_type=template.task_type,
        difficulty=template.difficulty,
        prompt=prompt,
        citations=citations,
        provenance={"template_id": template.template_id, "subgraph": sorted(subgraph.node_ids), "generator": generator},
        gold_answer=gold,
        metadata={
            "template_name": template.name,
            "title": variables["title"],
            "source_path": variables["source_path"],
            "variables": ",".join(template.variable_names()),
            "require_citations": template.evaluation.require_citations,
        },
    )
    task.task_id = compute_task_id(task)
    return task


# -- web tasks -----------------------------------------------------------------


def difficulty_for_steps(count: int) -> str:
    if count <= 2:
        return "Easy"
    if count <= 4:
        return "Medium"
    if count <= 6:
        return "Hard"
    return "Expert"


def _has_out_edge(graph: Graph, node_id: str, kinds: tuple[str, ...]) -> bool:
    return any(graph.edges[i].kind in kinds for i in graph.out_edges(node_id))


def _page_of(graph: Graph, node: Node) -> Node | None:
    if node.kind.category == "WebPage":
        return node
    for i in graph.in_edges(node.id):
        edge = graph.edges[i]
        if edge.kind == "contains" and graph.node(edge.src).kind.category == "WebPage":
            return graph.node(edge.src)
    return None


def _leading_words(text: str, limit: int = 4) -> str:
    return " ".join(text.split()[:limit])


def query_value(graph: Graph, instance: MetapathInstance, seed: int = 0) -> str:
    """Text typed into search/input fields: bound data text, else a lexicon pick."""
    for node_id in instance.nodes:
        node = graph.node(node_id)
        if node.kind.element_kind in ("business_data", "result_item") and node.text.strip():
            return _leading_words(node.text)
    page = _page_of(graph, graph.node(instance.nodes[0]))
    topic_words = " ".join(
        [page.metadata.get("website_type", ""), page.metadata.get("title", "")] if page else []
    ).lower()
    topic = next((t for t in QUERY_LEXICON if t != "default" and t in topic_words), "default")
    rng = random.Random(f"{seed}:{instance.pattern_id}:{','.join(instance.nodes)}")
    return rng.choice(QUERY_LEXICON[topic])


def _select_value(node: Node) -> str:
    try:
        options = json.loads(node.metadata.get("options", "[]"))
    except ValueError:
        options = []
    options = [o for o in options if isinstance(o, str) and o.strip()]
    for option in options:
        if option.lower().split()[0] not in ("all", "any", "select", "choose", "--"):
            return option
    return options[0] if options else (node.text or "on")


def synthesize_steps(instance: MetapathInstance, graph: Graph, seed: int = 0) -> list[WebStep]:
    """Map each node on the instance path to steps via the action table."""
    raw: list[tuple[str, str, str | None]] = []
    data_node: Node | None = None
    value = None
    for node_id in instance.nodes:
        node = graph.node(node_id)
        kind = node.kind.element_kind or node.kind.category
        selector = node.metadata.get("selector", "")
        if kind == "WebPage":
            raw.append(("navigate", node.metadata.get("url", ""), None))
            raw.append(("wait", "body", None))
        elif kind in ("search_box", "input"):
            if value is None:
                value = query_value(graph, instance, seed)
            raw.append(("input", selector, value))
        elif kind in ("button", "link"):
            raw.append(("click", selector, None))
            if _has_out_edge(graph, node_id, ("nav_to", "click_trigger")):
                raw.append(("wait", selector, None))
        elif kind == "filter":
            raw.append(("select", selector, _select_value(node)))
        elif kind in ("modal", "toast"):
            raw.append(("assert_visible", selector, None))
        elif kind in ("business_data", "result_item"):
            data_node = node
        else:
            raise StepSynthesisError(f"no action is defined for node kind {kind!r}")
    if data_node is not None:
        raw.append(("extract", data_node.metadata.get("selector", ""), None))
    return [WebStep(i, action, target, val) for i, (action, target, val) in enumerate(raw)]


def capabilities(instances: Sequence[MetapathInstance], graph: Graph) -> list[str]:
    found: set[str] = set()
    for inst in instances:
        for node_id in inst.nodes:
            node = graph.node(node_id)
            kind = node.kind.element_kind or node.kind.category
            if kind == "search_box":
                found.add("Search")
            elif kind == "filter":
                found.add("Filter")
            elif kind in ("business_data", "result_item"):
                found.add("Detail")
            elif kind == "WebPage" or (kind == "link" and _has_out_edge(graph, node_id, ("nav_to",))):
                found.add("Navigate")
            elif kind == "input":
                found.add("Form")
            elif kind in ("modal", "toast"):
                found.add(kind.capitalize())
            elif kind == "button":
                for i in graph.out_edges(node_id):
                    edge = graph.edges[i]
                    if edge.kind == "click_trigger":
                        found.add(graph.node(edge.dst).kind.element_kind.capitalize())
    return [c for c in CAPABILITIES if c in found]


def compose_chain(instances: Sequence[MetapathInstance], graph: Graph) -> str:
    """"+"-joined capability names in canonical order ("" when none is detected)."""
    pages = {(_page_of(graph, graph.node(i.nodes[0])) or graph.node(i.nodes[0])).id for i in instances}
    if len(pages) > 1:
        raise ValueError("instances of one chain must share a page")
    return " + ".join(capabilities(instances, graph))


def build_page_context(graph: Graph, page_id: str) -> PageContext:
    page = graph.node(page_id)
    elements = sorted(
        (graph.node(graph.edges[i].dst) for i in graph.out_edges(page_id) if graph.edges[i].kind == "contains"),
        key=lambda n: n.id,
    )
    marks = tuple(
        (mark, n.metadata.get("selector", ""), n.kind.element_kind or "", n.text)
        for mark, n in enumerate(elements, start=1)
    )
    return PageContext(page.metadata.get("url", ""), page.metadata.get("title", ""), marks, page.metadata.get("screenshot"))


def _step_phrase(step: WebStep, graph_labels: Mapping[str, str]) -> str:
    label = graph_labels.get(step.target_selector, "")
    named = f' "{label}"' if label else ""
    if step.action == "navigate":
        return f"open {step.target_selector}"
    if step.action == "input":
        return f'type "{step.value}" into the{named} field'
    if step.action == "select":
        return f'choose "{step.value}" in the{named} filter'
    if step.action == "click":
        return f"click{named or ' the control'}"
    if step.action == "assert_visible":
        return "confirm that the dialog appears"
    if step.action == "extract":
        return "report the results that are shown"
    return ""


def describe_steps(steps: Sequence[WebStep], graph_labels: Mapping[str, str], page_title: str) -> str:
    phrases = [p for p in (_step_phrase(s, graph_labels) for s in steps if s.action != "wait") if p]
    body = ", then ".join(phrases)
    return f'On the page "{page_title}", {body}.' if page_title else body[:1].upper() + body[1:] + "."


def _web_task_type(caps: Sequence[str]) -> str:
    mapping = {
        "Search": "web_search",
        "Filter": "web_filter",
        "Detail": "web_detail",
        "Navigate": "web_navigation",
        "Form": "web_form",
        "Modal": "web_modal",
        "Toast": "web_toast",
    }
    return mapping[caps[0]] if caps else "web_click"


def _instruction_ok(text: Any, context: PageContext) -> bool:
    if not _usable_text(text):
        return False
    known = " ".join(m[1] for m in context.marked_elements)
    return all(token in known for token in _SELECTOR_LIKE.findall(text))


def generate_web_task(
    instances: MetapathInstance | Sequence[MetapathInstance],
    graph: Graph,
    page_context: PageContext,
    gateway=None,
    *,
    seed: int = 0,
    pattern_names: Mapping[str, str] | None = None,
) -> Task:
    if isinstance(instances, MetapathInstance):
        instances = [instances]
    if not instances:
        raise ValueError("at least one meta-path instance is required")
    if not page_context.marked_elements:
        raise ValueError(f"page {page_context.url} has no marked elements to ground a task")
    steps: list[WebStep] = []
    for inst in instances:
        for step in synthesize_steps(inst, graph, seed):
            if steps and (steps[-1].action, steps[-1].target_selector, steps[-1].value) == (
                step.action,
                step.target_selector,
                step.value,
            ):
                continue
            steps.append(WebStep(len(steps), step.action, step.target_selector, step.value))
    caps = capabilities(instances, graph)
    pattern_id = "+".join(i.pattern_id for i in instances)
    chain = " + ".join(caps) or " + ".join((pattern_names or {}).get(i.pattern_id, i.pattern_id) for i in instances)
    labels = {m[1]: m[3][:40] for m in page_context.marked_elements}
    prompt = describe_steps(steps, labels, page_context.title)
    generator = "template"
    if gateway is not None:
        request = ChatRequest.user(
            "Write one natural instruction for a web agent that performs exactly these steps. "
            "Refer to elements by their visible text, not by selector.\n"
            f"Pattern: {pattern_id}\nChain: {chain}\n"
            f"Steps: {json.dumps([s.to_dict() for s in steps], ensure_ascii=False)}\n"
            f"Marked elements:\n{page_context.render()}\n"
            'Respond with JSON only: {"instruction": <text>}\n'
            f"{DRAFT_MARKER}\n{json.dumps({'instruction': prompt}, ensure_ascii=False)}",
            images=(page_context.screenshot_ref,) if page_context.screenshot_ref else (),
        )
        try:
            reply = parse_json_object(gateway.complete(request, "web_task").text)
            if _instruction_ok(reply.get("instruction"), page_context):
                prompt, generator = reply["instruction"].strip(), "llm"
            else:
                logger.info("instruction for %s rejected, using the phrase table", pattern_id)
        except (GatewayError, ValueError) as exc:
            logger.warning("instruction for %s failed, using the phrase table: %s", pattern_id, exc)
    nodes = sorted({n for inst in instances for n in inst.nodes})
    page = _page_of(graph, graph.node(instances[0].nodes[0]))
    subgraph = sorted(set(nodes) | ({page.id} if page else set()))
    task = Task(
        task_id="",
        kind="web",
        task_type=_web_task_type(caps),
        difficulty=difficulty_for_steps(len(steps)),
        prompt=prompt,
        citations=nodes,
        provenance={"pattern_id": pattern_id, "subgraph": subgraph, "generator": generator},
        web_steps=steps,
        chain_name=chain,
        metadata={
            "page_url": page_context.url,
            "page_title": page_context.title,
            "website_type": page.metadata.get("website_type", "") if page else "",
            "marked_elements": len(page_context.marked_elements),
        },
    )
    task.task_id = compute_task_id(task)
    return task
