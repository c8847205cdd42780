from __future__ import annotations

import json

import pytest

from builders import add, chain
from kgtaskgen.embed import HashingEmbedder
from kgtaskgen.errors import StepSynthesisError, TaskValidationError
from kgtaskgen.gateway import MockGateway
from kgtaskgen.graph import Graph
from kgtaskgen.ingest.web import PageSnapshot, build_web_graph, parse_html, resolve_selector
from kgtaskgen.metapath import MetapathInstance, load_library, match_pattern, parse_pattern
from kgtaskgen.sampler import Subgraph
from kgtaskgen.taskgen import (
    PageContext,
    Task,
    build_page_context,
    compose_chain,
    difficulty_for_steps,
    generate_doc_task,
    generate_web_task,
    synthesize_steps,
    validate_record,
)
from kgtaskgen.templates import GraphRequirements, TaskTemplate, extract_variables, render

COMPARE = TaskTemplate(
    template_id="t.compare",
    name="Compare",
    description="compare two paragraphs",
    task_type="comparison",
    difficulty="Medium",
    prompt_template="Compare: {{ items[0].content }} | {{ items[1].content }}",
    gold_template="Both concern {{ title }}.",
    requirements=GraphRequirements(("Paragraph",), (), min_nodes=2, max_nodes=4),
)

SEARCH_PAGE = """
<form id="search"><input type="search" name="q" id="q"><select name="year" id="year">
<option>Any year</option><option>1843</option></select><button type="submit" id="go">Search</button></form>
<ul id="results"><li class="r">Notes on the engine</li><li class="r">Lovelace letters</li><li class="r">Babbage memoir</li></ul>
<button id="open" data-target="#dlg">Details</button><div id="dlg" class="modal"><p>More</p></div>
"""
URL = "https://shop.example.test/"


def paragraphs() -> tuple[Graph, Subgraph]:
    g = Graph(2)
    for i, text in enumerate(("The engine used cards.", "Cards encoded operations.")):
        add(g, f"p{i}", "Paragraph", text=text, source_path="a.md", metadata={"order": str(i), "title": "Engines"})
    chain(g, ["p0", "p1"])
    g.freeze()
    return g, Subgraph.induced(g, ["p0", "p1"])


def web_graph() -> Graph:
    snap = PageSnapshot(URL, "Shop", f"<html><body>{SEARCH_PAGE}</body></html>".encode(), None, "now", "e-commerce")
    return build_web_graph([snap], HashingEmbedder(16)).freeze()


def node_of(g: Graph, kind: str) -> str:
    return next(n.id for n in g.nodes.values() if n.kind.element_kind == kind)


# -- document tasks ----------------------------------------------------------------


def test_doc_task_without_gateway():
    g, sub = paragraphs()
    task = generate_doc_task(COMPARE, g, sub)
    want = render(COMPARE.prompt_template, extract_variables(COMPARE, g, sub))
    assert task.prompt == want == "Compare: The engine used cards. | Cards encoded operations."
    assert task.gold_answer == "Both concern Engines."
    assert task.citations == ["p0", "p1"] and task.provenance["generator"] == "template"
    assert generate_doc_task(COMPARE, g, sub).task_id == task.task_id
    validate_record(task.to_dict())


@pytest.mark.parametrize("reply", ["", "not json", '{"prompt": "", "gold_answer": "x"}', '{"prompt": "{{ x }}", "gold_answer": "y"}'])
def test_doc_task_falls_back_on_bad_refinement(reply):
    g, sub = paragraphs()
    task = generate_doc_task(COMPARE, g, sub, MockGateway(responses={"doc_task": reply}))
    assert task.provenance["generator"] == "template"
    assert task.prompt == generate_doc_task(COMPARE, g, sub).prompt


def test_doc_task_with_refinement():
    g, sub = paragraphs()
    reply = json.dumps({"prompt": "How do the two passages relate?", "gold_answer": "Cards."})
    task = generate_doc_task(COMPARE, g, sub, MockGateway(responses={"doc_task": reply}))
    assert task.provenance["generator"] == "llm" and task.prompt == "How do the two passages relate?"
    assert task.task_id != generate_doc_task(COMPARE, g, sub).task_id


def test_gateway_failure_degrades(caplog):
    g, sub = paragraphs()
    task = generate_doc_task(COMPARE, g, sub, MockGateway(responses={"doc_task": [ValueError("down")]}))
    assert task.provenance["generator"] == "template"


# -- steps -------------------------------------------------------------------------


def test_search_pattern_steps():
    g = web_graph()
    pattern = parse_pattern("SearchBox($search) -[Fills]-> BusinessData($query) -[Controls]-> Button($submit)", pattern_id="p")
    (inst,) = match_pattern(pattern, g)
    steps = synthesize_steps(inst, g)
    core = [(s.action, s.target_selector) for s in steps if s.action != "wait"]
    sel = {k: g.node(v).metadata["selector"] for k, v in inst.binding_map.items()}
    assert core == [("input", sel["search"]), ("click", sel["submit"]), ("extract", sel["query"])]
    assert steps[0].value == "Notes on the engine"
    assert [s.index for s in steps] == list(range(len(steps)))


def test_single_button_and_modal_steps():
    g = web_graph()
    go = node_of(g, "button")
    (inst,) = [i for i in match_pattern(parse_pattern("Button($b)", pattern_id="b"), g) if i.nodes == (go,)]
    assert [s.action for s in synthesize_steps(inst, g)] == ["click"]
    (modal,) = match_pattern(parse_pattern("Button($t) -[ClickTrigger]-> Modal($m)", pattern_id="m"), g)
    assert [s.action for s in synthesize_steps(modal, g)] == ["click", "wait", "assert_visible"]


def test_unmapped_kind_is_named():
    g = Graph(2)
    add(g, "x", "Paragraph")
    with pytest.raises(StepSynthesisError, match="Paragraph"):
        synthesize_steps(MetapathInstance("p", (), ("x",), ()), g)


def test_select_value_skips_placeholder_option():
    g = web_graph()
    f = node_of(g, "filter")
    (step,) = synthesize_steps(MetapathInstance("p", (), (f,), ()), g)
    assert (step.action, step.value) == ("select", "1843")


@pytest.mark.parametrize("count, band", [(1, "Easy"), (2, "Easy"), (3, "Medium"), (4, "Medium"), (5, "Hard"), (6, "Hard"), (7, "Expert"), (20, "Expert")])
def test_difficulty_bands(count, band):
    assert difficulty_for_steps(count) == band


# -- chains ------------------------------------------------------------------------


def test_chain_names():
    g = web_graph()
    search = MetapathInstance("s", (), (node_of(g, "search_box"), node_of(g, "business_data")), ())
    assert compose_chain([search], g) == "Search + Detail"
    with_filter = MetapathInstance("f", (), (node_of(g, "filter"),), ())
    assert compose_chain([search, with_filter], g) == "Search + Filter + Detail"
    opener = next(n.id for n in g.nodes.values() if n.metadata.get("selector") == "#open")
    assert compose_chain([MetapathInstance("b", (), (opener,), ())], g) == "Modal"
    go = next(n.id for n in g.nodes.values() if n.metadata.get("selector") == "#go")
    assert compose_chain([MetapathInstance("b", (), (go,), ())], g) == ""


# -- web tasks ---------------------------------------------------------------------


def test_web_task_end_to_end():
    g = web_graph()
    page_id = f"page:{URL}"
    context = build_page_context(g, page_id)
    library = {p.id: p for p in load_library()}
    (inst,) = match_pattern(library["business.search_submit"], g)
    task = generate_web_task(inst, g, context, MockGateway(seed=1), seed=7)
    assert task.chain_name == "Search + Detail" and task.task_type == "web_search"
    assert [s.action for s in task.web_steps if s.action != "wait"] == ["input", "click", "extract"]
    assert task.difficulty == difficulty_for_steps(len(task.web_steps))
    assert generate_web_task(inst, g, context, MockGateway(seed=1), seed=7).task_id == task.task_id
    validate_record(task.to_dict())
    soup = parse_html(f"<html><body>{SEARCH_PAGE}</body></html>".encode())
    for step in task.web_steps:
        if step.action != "navigate":
            assert resolve_selector(soup, step.target_selector) is not None
    assert set(task.citations) <= set(task.provenance["subgraph"])


def test_web_task_rejects_selector_hallucination():
    g = web_graph()
    context = build_page_context(g, f"page:{URL}")
    (inst,) = match_pattern(parse_pattern("Button($t) -[ClickTrigger]-> Modal($m)", pattern_id="m"), g)
    bad = json.dumps({"instruction": "Click #nonexistent-button and wait."})
    task = generate_web_task(inst, g, context, MockGateway(responses={"web_task": bad}))
    assert task.provenance["generator"] == "template" and "#nonexistent" not in task.prompt


def test_web_task_needs_marked_elements():
    g = web_graph()
    (inst,) = match_pattern(parse_pattern("Button($t) -[ClickTrigger]-> Modal($m)", pattern_id="m"), g)
    with pytest.raises(ValueError):
        generate_web_task(inst, g, PageContext(URL, "Shop", ()))
    with pytest.raises(ValueError):
        PageContext(URL, "x", ((1, "#a", "button", ""), (1, "#b", "button", "")))


# -- records -----------------------------------------------------------------------


def test_record_round_trip_and_rejections():
    g, sub = paragraphs()
    record = generate_doc_task(COMPARE, g, sub).to_dict()
    assert Task.from_dict(record).to_dict() == record
    for broken in (
        record | {"extra": 1},
        record | {"web_steps": [{"index": 0, "action": "click", "target_selector": "#a"}]},
        record | {"citations": ["elsewhere"]},
        {k: v for k, v in record.items() if k != "gold_answer"},
        record | {"task_id": "doc-xyz"},
    ):
        with pytest.raises(TaskValidationError):
            validate_record(broken)
