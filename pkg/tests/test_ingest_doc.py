from __future__ import annotations

import json
import warnings
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgtaskgen.embed import HashingEmbedder
from kgtaskgen.errors import DegenerateInputWarning
from kgtaskgen.graph import cosine_similarity, k_hop_neighbors, serialize_graph, undirected_distances
from kgtaskgen.ingest.doc import (
    Block,
    HeuristicEntityExtractor,
    MetadataCaptioner,
    RawDocument,
    build_doc_graph,
    chunk_document,
    document_from_dict,
    fuse_text_visual,
    load_corpus,
    parse_markdown,
    plan_chunks,
)
from kgtaskgen.tokens import tokenize

EMB = HashingEmbedder(64)


def words(n: int, stem: str = "w") -> str:
    return " ".join(f"{stem}{i}" for i in range(n))


def doc_of(*blocks: Block, path: str = "d.json", title: str = "T") -> RawDocument:
    out = RawDocument(path, title, "A")
    for i, b in enumerate(blocks):
        b.order = i
        out.blocks.append(b)
    return out


def pack_oracle(sizes: list[int], limit: int) -> list[list[int]]:
    """Greedy packing of block indexes given token sizes (all <= limit)."""
    groups, current, used = [], [], 0
    for i, n in enumerate(sizes):
        if n == 0:
            continue
        if current and used + n > limit:
            groups.append(current)
            current, used = [], 0
        current.append(i)
        used += n
    if current:
        groups.append(current)
    return groups


# -- fusion ------------------------------------------------------------------------


def test_fuse_paragraph_is_identity():
    assert fuse_text_visual(Block("paragraph", "hello")) == "hello"


def test_fuse_figure_uses_metadata_order():
    block = Block("figure", "", caption="Loss curve", alt="plot")
    assert fuse_text_visual(block) == " | ".join(["Loss curve", "plot"])
    block = Block("figure", "Fig 2", caption="c", ocr_text="o")
    assert fuse_text_visual(block, MetadataCaptioner()) == "Fig 2 c | o"


def test_fuse_empty_figure_warns():
    with pytest.warns(DegenerateInputWarning):
        assert fuse_text_visual(Block("figure", "")) == ""


# -- chunking ----------------------------------------------------------------------


def test_small_paragraphs_pack_into_one_chunk():
    raw = doc_of(*(Block("paragraph", words(10)) for _ in range(3)))
    assert len(chunk_document(raw, 64)) == 1


def test_blocks_are_never_split_when_they_fit():
    raw = doc_of(*(Block("paragraph", words(50, s)) for s in "abc"))
    chunks = chunk_document(raw, 64)
    assert chunks == [words(50, s) for s in "abc"]


def test_empty_document_has_no_chunks():
    assert chunk_document(doc_of(), 64) == []


def test_minimum_budget():
    with pytest.raises(ValueError):
        chunk_document(doc_of(Block("paragraph", "x")), 31)


def test_oversized_block_splits_on_sentences_then_hard():
    sentences = ". ".join(words(20, f"s{i}x") for i in range(5)) + "."
    plans = plan_chunks(doc_of(Block("paragraph", sentences)), 45)
    assert [len(tokenize(p.text)) for p in plans] == [40, 40, 20]
    assert not any(p.hard_split for p in plans)
    plans = plan_chunks(doc_of(Block("paragraph", words(100))), 32)
    assert [len(tokenize(p.text)) for p in plans] == [32, 32, 32, 4]
    assert all(p.hard_split for p in plans)
    assert " ".join(p.text for p in plans).split() == words(100).split()


@given(st.lists(st.integers(0, 32), max_size=12), st.integers(32, 80))
@settings(max_examples=100)
def test_packing_matches_greedy_oracle(sizes, limit):
    blocks = [Block("paragraph", words(n, f"b{i}t")) if n else Block("heading", "", heading_level=1) for i, n in enumerate(sizes)]
    raw = doc_of(*blocks)
    plans = plan_chunks(raw, limit)
    assert [list(p.block_orders) for p in plans] == pack_oracle(sizes, limit)
    for p in plans:
        assert len(tokenize(p.text)) <= limit
    # coverage: all block tokens in order
    assert [t for p in plans for t in tokenize(p.text)] == [t for b in blocks for t in tokenize(b.text)]


# -- loaders -----------------------------------------------------------------------


def test_document_from_dict_skips_bad_blocks():
    issues: list[str] = []
    raw = document_from_dict(
        {
            "path": "x.json",
            "title": "X",
            "blocks": [
                {"kind": "paragraph", "text": "fine"},
                {"kind": "figure"},
                {"kind": "heading", "text": "no level"},
                {"kind": "video", "text": "?"},
                {"kind": "paragraph", "text": "also fine", "colour": "red"},
                {"kind": "paragraph", "text": "last"},
            ],
        },
        issues,
    )
    assert [b.text for b in raw.blocks] == ["fine", "last"]
    assert [b.order for b in raw.blocks] == [0, 1]
    assert len(issues) == 4
    with pytest.raises(ValueError):
        document_from_dict({"title": "no path"})


def test_parse_markdown_subset():
    text = "---\ntitle: Front\nauthor: Me\n---\n# Top\n\nPara one\ncontinues.\n\n## Sub\n\n| a | b |\n|---|---|\n| 1 | 2 |\n\n![alt text](x.png \"cap\")\n"
    raw = parse_markdown(text, "m.md")
    assert (raw.title, raw.author) == ("Front", "Me")
    assert [(b.kind, b.text) for b in raw.blocks] == [
        ("heading", "Top"),
        ("paragraph", "Para one continues."),
        ("heading", "Sub"),
        ("table", "a | b\n1 | 2"),
        ("figure", ""),
    ]
    assert raw.blocks[2].heading_level == 2
    assert (raw.blocks[4].caption, raw.blocks[4].alt) == ("cap", "alt text")
    assert [b.order for b in raw.blocks] == list(range(5))


def test_load_corpus_sorted_and_unique(tmp_path):
    (tmp_path / "b.md").write_text("# B\n\ntext b\n")
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "a.json").write_text(json.dumps({"path": "ignored", "title": "A", "blocks": []}))
    docs = load_corpus(tmp_path)
    assert [d.path for d in docs] == ["b.md", "sub/a.json"]


# -- graph construction ------------------------------------------------------------


def test_two_paragraph_document():
    raw = doc_of(Block("paragraph", "alpha beta"), Block("paragraph", "gamma delta"))
    g = build_doc_graph([raw], EMB)
    kinds = Counter(n.kind.category for n in g.nodes.values())
    assert kinds["Document"] == 1 and kinds["Paragraph"] == 2 and kinds["SemanticChunk"] >= 1
    doc = "doc:d.json"
    seq = [(e.src, e.dst) for e in g.edges if e.kind == "sequence"]
    assert seq == [("doc:d.json#b000", "doc:d.json#b001")]
    contained = {e.dst for e in g.edges if e.kind == "contains" and e.src == doc}
    assert {"doc:d.json#b000", "doc:d.json#b001"} <= contained


def test_figure_and_table_context_edges():
    raw = doc_of(
        Block("paragraph", "intro"),
        Block("figure", "", caption="chart"),
        Block("paragraph", "middle"),
        Block("table", "a | b"),
    )
    g = build_doc_graph([raw], EMB)
    ctx = {(e.kind, e.src[-4:], e.dst[-4:]) for e in g.edges if e.kind.endswith("_context")}
    assert ctx == {("figure_context", "b001", "b000"), ("table_context", "b003", "b002")}


def test_heading_hierarchy_contains():
    raw = doc_of(
        Block("heading", "H1", heading_level=1),
        Block("paragraph", "p under h1"),
        Block("heading", "H2", heading_level=2),
        Block("paragraph", "p under h2"),
        Block("heading", "H1b", heading_level=1),
        Block("paragraph", "p under h1b"),
    )
    g = build_doc_graph([raw], EMB)
    parent = {e.dst[-4:]: e.src[-4:] for e in g.edges if e.kind == "contains" and "#b" in e.src}
    assert parent == {"b001": "b000", "b002": "b000", "b003": "b002", "b005": "b004"}
    assert g.node("doc:d.json#b003").contextual_path == ("T", "H1", "H2")


def test_similarity_edge_weight_is_the_cosine():
    a = "store mill cards engine numbers arithmetic operations variables loom"
    b = a + " plans"
    raw = doc_of(Block("paragraph", a), Block("paragraph", words(30, "z")), Block("paragraph", b))
    g = build_doc_graph([raw], EMB, sim_threshold=0.75, max_chunk_tokens=32)
    sims = [e for e in g.edges if e.kind == "semantic_similarity"]
    assert len(sims) == 1
    want = cosine_similarity(EMB.embed(a), EMB.embed(b))
    assert want >= 0.75 and sims[0].weight == pytest.approx(want, abs=1e-12)


def test_cross_document_links():
    text = "shared vocabulary about punched cards and the analytical engine"
    docs = [doc_of(Block("paragraph", text), path="a.json"), doc_of(Block("paragraph", text), path="b.json")]
    g = build_doc_graph(docs, EMB)
    links = [e for e in g.edges if e.kind == "cross_doc_link"]
    assert [(e.src, e.dst) for e in links] == [("doc:a.json#c000", "doc:b.json#c000")]


def test_entities_and_relations():
    raw = doc_of(Block("paragraph", "Ada Lovelace met Charles Babbage in London."))
    g = build_doc_graph([raw], EMB)
    ents = {n.text: n.kind.entity_class for n in g.nodes_of("Entity")}
    assert ents == {"Ada Lovelace": "person", "Charles Babbage": "person", "London": "location"}
    assert sum(e.kind == "co_reference" for e in g.edges) == 3
    assert sum(e.kind == "entity_relation" for e in g.edges) == 3


def test_entity_extractor_skips_sentence_initial_words():
    mentions = HeuristicEntityExtractor().extract("The engine ran. Then Grace Hopper wrote code at IBM.")
    assert [(m.surface, m.entity_class) for m in mentions] == [("Grace Hopper", "person"), ("IBM", "organization")]


paragraphs = st.lists(st.sampled_from(["cards", "store", "mill", "engine", "Paris", "Ada Lovelace", "tape", "loom"]), min_size=1, max_size=12)


@given(st.lists(st.lists(paragraphs, min_size=1, max_size=5), min_size=1, max_size=3), st.floats(0.3, 0.95))
@settings(max_examples=40, deadline=None)
def test_graph_invariants(docs_words, theta):
    docs = [
        doc_of(*(Block("paragraph", " ".join(ws)) for ws in blocks), path=f"d{i}.json")
        for i, blocks in enumerate(docs_words)
    ]
    g = build_doc_graph(docs, EMB, sim_threshold=theta, max_chunk_tokens=32)
    g.check_consistency()
    n_blocks = sum(len(d.blocks) for d in docs)
    n_chunks = len(g.nodes_of("SemanticChunk"))
    assert len(g) == n_blocks + n_chunks + len(docs) + len(g.nodes_of("Entity"))
    for d in docs:
        root = f"doc:{d.path}"
        contains = [i for i in range(len(g.edges)) if g.edges[i].kind == "contains"]
        reach = undirected_distances(g, root, edge_ids=contains)
        for n in g.nodes.values():
            if n.source_path == d.path and n.kind.category not in ("Entity", "Document"):
                assert n.id in reach
        seq = [e for e in g.edges if e.kind == "sequence" and e.src.startswith(root + "#")]
        assert len(seq) == len(d.blocks) - 1
        assert max(Counter(e.src for e in seq).values(), default=0) <= 1
        assert max(Counter(e.dst for e in seq).values(), default=0) <= 1
    # similarity edges are exactly the pairs at or above the threshold
    chunks = sorted(g.nodes_of("SemanticChunk"), key=lambda n: n.id)
    want = set()
    for i, a in enumerate(chunks):
        for b in chunks[i + 1 :]:
            if cosine_similarity(a.embedding, b.embedding) >= theta:
                want.add((a.id, b.id))
    got = {(e.src, e.dst) for e in g.edges if e.kind in ("semantic_similarity", "cross_doc_link")}
    assert got == want


def test_reingest_is_byte_identical(bundled_docs):
    a = serialize_graph(build_doc_graph(bundled_docs, HashingEmbedder()))
    b = serialize_graph(build_doc_graph(bundled_docs, HashingEmbedder()))
    assert a == b


def test_bundled_corpus_graph(bundled_docs):
    g = build_doc_graph(bundled_docs, HashingEmbedder())
    assert {"semantic_similarity", "cross_doc_link", "figure_context", "table_context", "co_reference"} <= g.relation_set
    doc = "doc:analytical_engine.md"
    assert k_hop_neighbors(g, doc, 1)
