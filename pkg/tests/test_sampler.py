from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import add
from oracles import random_graph, random_objective, sample_oracle
from kgtaskgen.embed import HashingEmbedder
from kgtaskgen.errors import DimensionMismatchError
from kgtaskgen.graph import Graph, cosine_similarity
from kgtaskgen.sampler import (
    SamplerConfig,
    SeedSelector,
    Subgraph,
    TaskObjective,
    identify_seeds,
    relevance,
    sample_document_subgraph,
    sample_subgraph,
    sample_web_subgraph,
    struct_match,
)


def unit(i: int, d: int = 4) -> np.ndarray:
    v = np.zeros(d)
    v[i] = 1.0
    return v


def vector_with_cos(c: float) -> list[float]:
    """A 2-d vector whose cosine with (1, 0) is exactly c."""
    return [c, float(np.sqrt(1 - c * c))]


def doc_objective(goal, **kw) -> TaskObjective:
    return TaskObjective("goal", goal, "document", **kw)


def web_objective(dim: int = 4, **kw) -> TaskObjective:
    return TaskObjective("goal", np.zeros(dim), "web", **kw)


# -- relevance and struct_match ----------------------------------------------------


def test_relevance_examples():
    g = Graph(4)
    add(g, "a", "Paragraph", embedding=unit(0))
    add(g, "b", "Paragraph", embedding=unit(1))
    assert relevance(g.node("a"), doc_objective(unit(0))) == 1.0
    assert relevance(g.node("b"), doc_objective(unit(0))) == 0.0
    with pytest.raises(DimensionMismatchError):
        relevance(g.node("a"), doc_objective(np.ones(3)))


def test_relevance_on_hashing_embedder_pair():
    emb = HashingEmbedder(64)
    a, b = "alpha beta gamma delta", "alpha beta epsilon zeta"
    g = Graph(64)
    add(g, "a", "Paragraph", embedding=emb.embed(a))
    got = relevance(g.node("a"), doc_objective(emb.embed(b)))
    va, vb = emb.embed(a), emb.embed(b)
    want = float(sum(x * y for x, y in zip(va, vb)) / (np.sqrt((va**2).sum()) * np.sqrt((vb**2).sum())))
    assert got == pytest.approx(want, abs=1e-12)


def test_struct_match_examples():
    g = Graph(2)
    add(g, "t", "Table", embedding=[1, 0])
    add(g, "p", "Paragraph", embedding=[1, 0])
    add(g, "h", "Heading", embedding=[1, 0], context=("Doc", "Results", "Ablations"))
    wants_table = doc_objective(np.ones(2), required_node_kinds={"Table"})
    assert struct_match(g.node("t"), wants_table)
    assert not struct_match(g.node("p"), wants_table)
    under_results = doc_objective(np.ones(2), required_node_kinds={"Heading"}, required_context="results")
    assert struct_match(g.node("h"), under_results)
    under_methods = doc_objective(np.ones(2), required_node_kinds={"Heading"}, required_context="Methods")
    assert not struct_match(g.node("h"), under_methods)


# -- document mode -----------------------------------------------------------------


def test_four_node_fixture():
    g = Graph(2)
    for name, c in zip(("n1", "n2", "n3", "n4"), (0.9, 0.2, 0.1, 0.4)):
        add(g, name, "Table" if name == "n3" else "Paragraph", embedding=vector_with_cos(c))
    g.add_edge("n1", "n3", "table_context")
    g.add_edge("n1", "n2", "sequence")
    objective = doc_objective(np.array([1.0, 0.0]), required_node_kinds={"Table"})
    sub = sample_document_subgraph(g, objective, SamplerConfig(tau=0.5))
    assert sub.node_ids == {"n1", "n3"}
    assert sub.edge_ids == (0,)


def test_high_threshold_gives_empty_subgraph():
    g = Graph(2)
    add(g, "a", "Paragraph", embedding=[1, 0.5])
    sub = sample_document_subgraph(g, doc_objective(np.array([1.0, 0.0])), SamplerConfig(tau=0.99))
    assert sub.node_ids == frozenset() and sub.edge_ids == ()


def test_saturation_keeps_all_document_nodes():
    g = Graph(2)
    for n in ("a", "b", "c"):
        add(g, n, "Paragraph", embedding=[1, 0])
    add(g, "d", "Document", embedding=[1, 0])
    add(g, "w", "button", embedding=[1, 0])
    g.add_edge("a", "b", "sequence")
    g.add_edge("b", "c", "sequence")
    g.add_edge("d", "a", "contains")
    sub = sample_document_subgraph(g, doc_objective(np.array([1.0, 0.0])), SamplerConfig())
    assert sub.node_ids == {"a", "b", "c"} and sub.edge_ids == (0, 1)


def test_strict_threshold():
    g = Graph(2)
    add(g, "a", "Paragraph", embedding=[1, 1])
    tau = cosine_similarity([1, 1], [1, 0])
    sub = sample_document_subgraph(g, doc_objective(np.array([1.0, 0.0])), SamplerConfig(tau=tau))
    assert sub.node_ids == frozenset()


def test_mode_checks():
    g = Graph(2)
    with pytest.raises(ValueError):
        sample_document_subgraph(g, web_objective(2), SamplerConfig())
    with pytest.raises(ValueError):
        sample_web_subgraph(g, doc_objective(np.ones(2)), SamplerConfig())
    with pytest.raises(DimensionMismatchError):
        sample_document_subgraph(g, doc_objective(np.ones(3)), SamplerConfig())
    with pytest.raises(ValueError):
        SamplerConfig(tau=1.0)
    with pytest.raises(ValueError):
        SamplerConfig(k=0)


# -- web mode ----------------------------------------------------------------------


def _page() -> Graph:
    g = Graph(4)
    add(g, "page", "WebPage", metadata={"url": "https://x.test/"})
    add(g, "btn", "button", metadata={"url": "https://x.test/"})
    add(g, "data", "business_data", metadata={"url": "https://x.test/"})
    add(g, "sb", "search_box", metadata={"url": "https://x.test/"})
    add(g, "para", "Paragraph")
    g.add_edge("page", "btn", "contains")
    g.add_edge("page", "data", "contains")
    g.add_edge("page", "sb", "contains")
    g.add_edge("btn", "para", "contains")
    return g


def test_identify_seeds():
    g = _page()
    assert identify_seeds(g, web_objective()) == {"btn", "sb"}
    assert identify_seeds(Graph(4), web_objective()) == set()
    only_search = web_objective(seed_selector=SeedSelector(kinds={"search_box"}))
    assert identify_seeds(g, only_search) == {"sb"}
    elsewhere = web_objective(seed_selector=SeedSelector(page_url="https://y.test/"))
    assert identify_seeds(g, elsewhere) == set()
    with pytest.raises(ValueError):
        SeedSelector(kinds={"toast"})


def test_web_k_hops():
    g = _page()
    only_button = web_objective(seed_selector=SeedSelector(kinds={"button"}))
    k1 = sample_web_subgraph(g, only_button, SamplerConfig(k=1))
    assert k1.node_ids == {"btn", "page"} and k1.seed_ids == {"btn"}
    k2 = sample_web_subgraph(g, only_button, SamplerConfig(k=2))
    assert k2.node_ids == {"btn", "page", "data", "sb"}
    assert k1.node_ids <= k2.node_ids
    assert "para" not in k2.node_ids


def test_no_seeds_gives_diagnostic():
    g = Graph(4)
    add(g, "page", "WebPage")
    sub = sample_web_subgraph(g, web_objective(), SamplerConfig())
    assert sub.node_ids == frozenset() and sub.diagnostics


def test_dispatch():
    g = _page()
    assert sample_subgraph(g, web_objective()).node_ids == {"page", "btn", "data", "sb"}


# -- properties --------------------------------------------------------------------


def _objective(goal, kinds, context, seed_kinds, mode):
    if mode == "document":
        return TaskObjective("g", goal, "document", required_node_kinds=kinds, required_context=context)
    return TaskObjective("g", goal, "web", seed_selector=SeedSelector(kinds=seed_kinds))


@given(st.integers(0, 2**32 - 1), st.sampled_from(["document", "web"]), st.floats(0.05, 0.95), st.integers(1, 4))
@settings(max_examples=150, deadline=None)
def test_matches_transcription_oracle(seed, mode, tau, k):
    rng = random.Random(seed)
    g = random_graph(rng, 30)
    goal, kinds, context, seed_kinds = random_objective(rng)
    sub = sample_subgraph(g, _objective(goal, kinds, context, seed_kinds, mode), SamplerConfig(tau, k))
    v_g, e_g = sample_oracle(g, mode, goal, tau, k, kinds, context, seed_kinds)
    assert set(sub.node_ids) == v_g
    assert list(sub.edge_ids) == e_g


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9), st.floats(0.0, 0.09), st.integers(1, 3))
@settings(max_examples=80, deadline=None)
def test_monotonicity(seed, tau, step, k):
    rng = random.Random(seed)
    g = random_graph(rng, 25)
    goal, kinds, context, seed_kinds = random_objective(rng)
    doc = _objective(goal, kinds, context, seed_kinds, "document")
    lo = sample_document_subgraph(g, doc, SamplerConfig(tau=tau))
    hi = sample_document_subgraph(g, doc, SamplerConfig(tau=tau + step))
    assert hi.node_ids <= lo.node_ids
    web = _objective(goal, kinds, context, seed_kinds, "web")
    small = sample_web_subgraph(g, web, SamplerConfig(k=k))
    large = sample_web_subgraph(g, web, SamplerConfig(k=k + 1))
    assert small.node_ids <= large.node_ids


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_induced_edges_and_order_independence(seed):
    rng = random.Random(seed)
    g = random_graph(rng, 20)
    ids = [n for n in g.nodes if rng.random() < 0.5]
    sub = Subgraph.induced(g, ids)
    shuffled = list(ids)
    rng.shuffle(shuffled)
    assert Subgraph.induced(g, shuffled) == sub
    inside = set(ids)
    assert set(sub.edge_ids) == {i for i, e in enumerate(g.edges) if e.src in inside and e.dst in inside}
