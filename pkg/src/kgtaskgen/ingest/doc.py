"""Document ingestion: blocks -> fused text -> chunks, entities and the text-side graph."""

from __future__ import annotations

import json
import logging
import re
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from ..embed import Embedder
from ..errors import DegenerateInputWarning
from ..graph import DEFAULT_DIMENSION, Graph, Node, NodeKind, cosine_similarity
from ..tokens import token_spans, tokenize

logger = logging.getLogger(__name__)

BLOCK_KINDS = ("paragraph", "heading", "table", "figure")
_CATEGORY = {"paragraph": "Paragraph", "heading": "Heading", "table": "Table", "figure": "Figure"}
MIN_CHUNK_TOKENS = 32


@dataclass
class Block:
    kind: str
    text: str = ""
    heading_level: int | None = None
    caption: str = ""
    alt: str = ""
    ocr_text: str = ""
    order: int = 0

    def problems(self) -> list[str]:
        """Reasons this block cannot be ingested (empty list when well-formed)."""
        out = []
        if self.kind not in BLOCK_KINDS:
            out.append(f"unknown block kind {self.kind!r}")
        if self.kind == "heading" and (self.heading_level is None or self.heading_level < 1):
            out.append("heading without a level >= 1")
        if self.kind == "figure" and not (self.caption or self.alt or self.ocr_text):
            out.append("figure with no caption, alt or ocr_text")
        return out


@dataclass
class RawDocument:
    path: str
    title: str = ""
    author: str = ""
    blocks: list[Block] = field(default_factory=list)


class Captioner(Protocol):
    def describe(self, block: Block) -> str: ...


class MetadataCaptioner:
    """Text-mode stand-in for a vision model: caption | alt | ocr_text."""

    def describe(self, block: Block) -> str:
        return " | ".join(p for p in (block.caption, block.alt, block.ocr_text) if p)


class GatewayCaptioner:
    """Asks the LLM gateway to describe a figure from its metadata."""

    def __init__(self, gateway, fallback: Captioner | None = None):
        self.gateway = gateway
        self.fallback = fallback or MetadataCaptioner()

    def describe(self, block: Block) -> str:
        from ..gateway import ChatRequest, GatewayError

        meta = self.fallback.describe(block)
        if not meta:
            return ""
        request = ChatRequest.user(
            "Describe this figure in one sentence.\nFigure metadata: " + meta
        )
        try:
            text = self.gateway.complete(request, "caption").text.strip()
        except GatewayError as exc:
            logger.warning("caption request failed, using metadata: %s", exc)
            return meta
        return text or meta


def fuse_text_visual(block: Block, captioner: Captioner | None = None) -> str:
    """Concatenate a block's text with the textual rendering of its visual part."""
    if block.kind != "figure":
        return block.text
    visual = (captioner or MetadataCaptioner()).describe(block)
    fused = " ".join(p for p in (block.text, visual) if p)
    if not fused:
        warnings.warn("figure block has no text or visual description", DegenerateInputWarning, stacklevel=2)
    return fused


# -- chunking ------------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class Chunk:
    text: str
    block_orders: tuple[int, ...]
    hard_split: bool = False


def _hard_split(text: str, limit: int) -> list[str]:
    spans = token_spans(text)
    pieces = []
    for start in range(0, len(spans), limit):
        window = spans[start : start + limit]
        end = spans[start + limit][0] if start + limit < len(spans) else len(text)
        begin = 0 if start == 0 else window[0][0]
        pieces.append(text[begin:end].strip())
    return pieces


def _split_oversized(text: str, limit: int) -> tuple[list[str], bool]:
    pieces: list[str] = []
    hard = False
    current: list[str] = []
    used = 0
    for sentence in _SENTENCE_SPLIT.split(text.strip()):
        n = len(tokenize(sentence))
        if n > limit:
            if current:
                pieces.append(" ".join(current))
                current, used = [], 0
            pieces.extend(_hard_split(sentence, limit))
            hard = True
            continue
        if used + n > limit and current:
            pieces.append(" ".join(current))
            current, used = [], 0
        current.append(sentence)
        used += n
    if current:
        pieces.append(" ".join(current))
    return [p for p in pieces if p], hard


def plan_chunks(
    raw: RawDocument, max_chunk_tokens: int, captioner: Captioner | None = None
) -> list[Chunk]:
    """Greedy packing of whole blocks into chunks of at most ``max_chunk_tokens`` tokens."""
    if max_chunk_tokens < MIN_CHUNK_TOKENS:
        raise ValueError(f"max_chunk_tokens must be >= {MIN_CHUNK_TOKENS}")
    chunks: list[Chunk] = []
    texts: list[str] = []
    orders: list[int] = []
    used = 0

    def flush() -> None:
        nonlocal texts, orders, used
        if texts:
            chunks.append(Chunk("\n\n".join(texts), tuple(orders)))
        texts, orders, used = [], [], 0

    for block in raw.blocks:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateInputWarning)
            text = fuse_text_visual(block, captioner)
        n = len(tokenize(text))
        if n == 0:
            continue
        if n > max_chunk_tokens:
            flush()
            pieces, hard = _split_oversized(text, max_chunk_tokens)
            if hard:
                logger.warning("%s block %d hard-split into %d chunks", raw.path, block.order, len(pieces))
            chunks.extend(Chunk(p, (block.order,), hard) for p in pieces)
            continue
        if used + n > max_chunk_tokens:
            flush()
        texts.append(text)
        orders.append(block.order)
        used += n
    flush()
    return chunks


def chunk_document(
    raw: RawDocument, max_chunk_tokens: int, captioner: Captioner | None = None
) -> list[str]:
    return [c.text for c in plan_chunks(raw, max_chunk_tokens, captioner)]


# -- entities ------------------------------------------------------------------

_WORD = re.compile(r"[^\W\d_][\w'&.-]*")
_STOP = frozenset(
    """a an the this that these those it its in on at of for to by with from and or but
    as is are was were be we our they their he she his her you your i if when while
    however then thus also each every all some many most such figure table section""".split()
)
_ORG_HINTS = frozenset(
    "inc corp corporation university institute lab labs laboratory company foundation "
    "agency association group college council ministry society".split()
)
_LOC_HINTS = frozenset("city river mountains mountain county island lake street valley bay".split())
_PERSON_TITLES = frozenset("dr mr mrs ms prof professor sir".split())
GAZETTEER = {
    "person": frozenset({"ada lovelace", "alan turing", "marie curie", "grace hopper", "charles babbage"}),
    "location": frozenset(
        {"london", "paris", "berlin", "geneva", "tokyo", "new york", "california", "europe", "asia",
         "africa", "america", "china", "france", "germany", "japan", "england"}
    ),
    "organization": frozenset(
        {"openai", "google", "microsoft", "deepmind", "ibm", "nasa", "cern", "mozilla", "github",
         "wikipedia", "unesco", "royal society"}
    ),
}


@dataclass(frozen=True)
class EntityMention:
    surface: str
    entity_class: str


class HeuristicEntityExtractor:
    """Capitalised-token spans (length <= 4) classified by a small gazetteer."""

    max_span = 4

    def classify(self, surface: str) -> str:
        key = surface.lower()
        for cls, names in GAZETTEER.items():
            if key in names:
                return cls
        words = key.replace(".", "").split()
        if words[0] in _PERSON_TITLES:
            return "person"
        if words[-1] in _ORG_HINTS or words[0] in _ORG_HINTS:
            return "organization"
        if words[-1] in _LOC_HINTS:
            return "location"
        return "other"

    def extract(self, text: str) -> list[EntityMention]:
        spans: list[list[re.Match]] = []
        current: list[re.Match] = []
        prev_end = None
        for m in _WORD.finditer(text):
            word = m.group().rstrip(".")
            capital = word[:1].isupper()
            joined = prev_end is not None and text[prev_end : m.start()] == " "
            if capital and current and joined:
                current.append(m)
            else:
                if current:
                    spans.append(current)
                current = [m] if capital else []
            prev_end = m.end() if not m.group().endswith(".") else None
        if current:
            spans.append(current)

        out: list[EntityMention] = []
        seen: set[str] = set()
        for span in spans:
            words = [m.group().rstrip(".") for m in span]
            while words and words[0].lower() in _STOP:
                span = span[1:]
                words = words[1:]
            if not words or len(words) > self.max_span:
                continue
            surface = " ".join(words)
            sentence_start = re.search(r"(^|[.!?:]\s+)$", text[: span[0].start()]) is not None
            cls = self.classify(surface)
            if len(words) == 1 and (sentence_start or len(surface) < 2) and cls == "other":
                continue
            if surface.lower() in seen:
                continue
            seen.add(surface.lower())
            out.append(EntityMention(surface, cls))
        return out


# -- loaders -------------------------------------------------------------------

_DOC_FIELDS = {"path", "title", "author", "blocks"}
_BLOCK_FIELDS = {"kind", "text", "heading_level", "caption", "alt", "ocr_text"}


def document_from_dict(data: dict, issues: list[str] | None = None) -> RawDocument:
    """Build a :class:`RawDocument` from the JSON document schema; bad blocks are skipped."""
    unknown = set(data) - _DOC_FIELDS
    if unknown or "path" not in data:
        raise ValueError(f"document record needs 'path' and no unknown fields (got {sorted(unknown)})")
    doc = RawDocument(str(data["path"]), str(data.get("title", "")), str(data.get("author", "")))
    for i, rec in enumerate(data.get("blocks", [])):
        bad = set(rec) - _BLOCK_FIELDS
        block = Block(
            kind=rec.get("kind", ""),
            text=rec.get("text", "") or "",
            heading_level=rec.get("heading_level"),
            caption=rec.get("caption", "") or "",
            alt=rec.get("alt", "") or "",
            ocr_text=rec.get("ocr_text", "") or "",
            order=len(doc.blocks),
        )
        problems = block.problems() + ([f"unknown fields {sorted(bad)}"] if bad else [])
        if problems:
            msg = f"{doc.path}: skipped block {i}: {'; '.join(problems)}"
            logger.warning(msg)
            if issues is not None:
                issues.append(msg)
            continue
        doc.blocks.append(block)
    return doc


_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_IMAGE = re.compile(r'^!\[(?P<alt>[^\]]*)\]\((?P<src>[^\s)]*)(?:\s+"(?P<caption>[^"]*)")?\)\s*$')


def parse_markdown(text: str, path: str, title: str | None = None, author: str = "") -> RawDocument:
    """Markdown subset: ATX headings, pipe tables, image lines, blank-line paragraphs.

    An optional ``---`` front matter block may set ``title`` and ``author``.
    """
    lines = text.splitlines()
    meta: dict[str, str] = {}
    if lines and lines[0].strip() == "---":
        for j in range(1, len(lines)):
            if lines[j].strip() == "---":
                for line in lines[1:j]:
                    if ":" in line:
                        key, value = line.split(":", 1)
                        meta[key.strip().lower()] = value.strip()
                lines = lines[j + 1 :]
                break

    blocks: list[Block] = []
    para: list[str] = []
    table: list[str] = []

    def add(block: Block) -> None:
        block.order = len(blocks)
        blocks.append(block)

    def flush() -> None:
        nonlocal para, table
        if para:
            add(Block("paragraph", " ".join(s.strip() for s in para)))
        if table:
            rows = []
            for row in table:
                cells = [c.strip() for c in row.strip().strip("|").split("|")]
                if all(re.fullmatch(r":?-{2,}:?", c) for c in cells if c):
                    continue
                rows.append(" | ".join(cells))
            add(Block("table", "\n".join(rows)))
        para, table = [], []

    for line in lines:
        stripped = line.strip()
        if not stripped:
            flush()
            continue
        heading = _HEADING.match(stripped)
        image = _IMAGE.match(stripped)
        if heading:
            flush()
            add(Block("heading", heading.group(2), heading_level=len(heading.group(1))))
        elif image:
            flush()
            add(Block("figure", "", caption=image.group("caption") or "", alt=image.group("alt")))
        elif stripped.startswith("|"):
            if para:
                flush()
            table.append(stripped)
        else:
            if table:
                flush()
            para.append(stripped)
    flush()

    if title is None:
        title = meta.get("title") or next(
            (b.text for b in blocks if b.kind == "heading" and b.heading_level == 1), Path(path).stem
        )
    return RawDocument(path, title, meta.get("author", author), blocks)


def load_document(path: Path, root: Path | None = None, issues: list[str] | None = None) -> RawDocument:
    rel = path.relative_to(root).as_posix() if root else path.name
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
        if data.get("path", rel) != rel:
            logger.info("%s: record path %r replaced by its corpus-relative location", rel, data["path"])
        return document_from_dict(dict(data, path=rel), issues)
    return parse_markdown(text, rel)


def load_corpus(directory: str | Path, issues: list[str] | None = None) -> list[RawDocument]:
    """All ``*.json`` / ``*.md`` documents under ``directory``, sorted by relative path."""
    root = Path(directory)
    files = sorted(p for p in root.rglob("*") if p.suffix in (".json", ".md") and p.is_file())
    docs = [load_document(p, root, issues) for p in files]
    paths = [d.path for d in docs]
    if len(set(paths)) != len(paths):
        raise ValueError("document paths must be unique within a corpus")
    return docs


# -- graph construction --------------------------------------------------------


def doc_node_id(path: str) -> str:
    return f"doc:{path}"


def _block_id(path: str, order: int) -> str:
    return f"doc:{path}#b{order:03d}"


def _chunk_id(path: str, index: int) -> str:
    return f"doc:{path}#c{index:03d}"


def _entity_id(surface: str) -> str:
    return "ent:" + "_".join(tokenize(surface))


def build_doc_graph(
    raw_docs: Sequence[RawDocument],
    embedder: Embedder,
    captioner: Captioner | None = None,
    sim_threshold: float = 0.75,
    *,
    max_chunk_tokens: int = 128,
    entity_extractor: HeuristicEntityExtractor | None = None,
    graph: Graph | None = None,
    report: list[str] | None = None,
) -> Graph:
    """Add document, block, chunk and entity nodes plus the text edge set to a graph.

    Similarity edges (``semantic_similarity`` within a document,
    ``cross_doc_link`` across documents) are stored once per unordered chunk
    pair, pointing from the earlier chunk to the later one, weighted by cosine.
    """
    captioner = captioner or MetadataCaptioner()
    extractor = entity_extractor or HeuristicEntityExtractor()
    graph = Graph(getattr(embedder, "dimension", DEFAULT_DIMENSION)) if graph is None else graph
    if getattr(embedder, "dimension", graph.dimension) != graph.dimension:
        raise ValueError("embedder dimension does not match graph dimension")

    def embed(text: str):
        return embedder.embed(text)

    chunk_ids: list[tuple[str, str]] = []  # (node id, document path)
    entity_mentions: list[tuple[str, list[EntityMention]]] = []

    for raw in raw_docs:
        base_meta = {"path": raw.path, "title": raw.title, "author": raw.author}
        doc_id = doc_node_id(raw.path)
        graph.add_node(
            Node(doc_id, NodeKind("Document"), raw.title, embed(raw.title), dict(base_meta), raw.path, ())
        )
        stack: list[tuple[int, str, str]] = []  # (level, node id, heading text)
        paths: dict[int, tuple[str, ...]] = {}
        last_paragraph: str | None = None
        prev_block: str | None = None
        for block in raw.blocks:
            problems = block.problems()
            if problems:
                msg = f"{raw.path}: skipped block {block.order}: {'; '.join(problems)}"
                logger.warning(msg)
                if report is not None:
                    report.append(msg)
                continue
            bid = _block_id(raw.path, block.order)
            if block.kind == "heading":
                while stack and stack[-1][0] >= block.heading_level:
                    stack.pop()
            ctx = (raw.title or raw.path, *(h[2] for h in stack))
            paths[block.order] = ctx
            fused = fuse_text_visual(block, captioner)
            meta = dict(base_meta, order=str(block.order), block_kind=block.kind)
            if block.heading_level is not None:
                meta["heading_level"] = str(block.heading_level)
            for key in ("caption", "alt", "ocr_text"):
                if getattr(block, key):
                    meta[key] = getattr(block, key)
            graph.add_node(
                Node(bid, NodeKind(_CATEGORY[block.kind]), fused, embed(fused), meta, raw.path, ctx)
            )
            graph.add_edge(doc_id, bid, "contains")
            if stack:
                graph.add_edge(stack[-1][1], bid, "contains")
            if prev_block is not None:
                graph.add_edge(prev_block, bid, "sequence")
            if block.kind == "figure" and last_paragraph is not None:
                graph.add_edge(bid, last_paragraph, "figure_context")
            if block.kind == "table" and last_paragraph is not None:
                graph.add_edge(bid, last_paragraph, "table_context")
            if block.kind == "paragraph":
                last_paragraph = bid
            if block.kind == "heading":
                stack.append((block.heading_level, bid, block.text))
            prev_block = bid
            mentions = extractor.extract(fused)
            if mentions:
                entity_mentions.append((bid, mentions))

        for idx, chunk in enumerate(plan_chunks(raw, max_chunk_tokens, captioner)):
            cid = _chunk_id(raw.path, idx)
            ctx = paths.get(chunk.block_orders[0], (raw.title or raw.path,))
            meta = dict(
                base_meta,
                order=str(chunk.block_orders[0]),
                chunk_index=str(idx),
                blocks=",".join(str(o) for o in chunk.block_orders),
            )
            if chunk.hard_split:
                meta["hard_split"] = "true"
                if report is not None:
                    report.append(f"{raw.path}: chunk {idx} hard-split")
            graph.add_node(
                Node(cid, NodeKind("SemanticChunk"), chunk.text, embed(chunk.text), meta, raw.path, ctx)
            )
            graph.add_edge(doc_id, cid, "contains")
            # chunks also contain the blocks they were packed from
            for order in chunk.block_orders:
                if order in paths:
                    graph.add_edge(cid, _block_id(raw.path, order), "contains")
            chunk_ids.append((cid, raw.path))

    # entities: one node per surface form across the corpus
    for bid, mentions in entity_mentions:
        block_node = graph.node(bid)
        ids = []
        for mention in mentions:
            eid = _entity_id(mention.surface)
            if eid not in graph:
                graph.add_node(
                    Node(
                        eid,
                        NodeKind.entity(mention.entity_class),
                        mention.surface,
                        embed(mention.surface),
                        {"name": mention.surface, "path": block_node.source_path},
                        block_node.source_path,
                        (block_node.contextual_path[0],),
                    )
                )
            # heuristic stand-in: an exact surface mention links the block to the entity
            if not graph.has_edge(bid, eid, "co_reference"):
                graph.add_edge(bid, eid, "co_reference")
            ids.append(eid)
        uniq = sorted(set(ids))
        for i, a in enumerate(uniq):
            for b in uniq[i + 1 :]:
                if not graph.has_edge(a, b, "entity_relation"):
                    graph.add_edge(a, b, "entity_relation")

    for i, (a, pa) in enumerate(chunk_ids):
        for b, pb in chunk_ids[i + 1 :]:
            sim = cosine_similarity(graph.node(a).embedding, graph.node(b).embedding)
            if sim >= sim_threshold:
                kind = "semantic_similarity" if pa == pb else "cross_doc_link"
                graph.add_edge(a, b, kind, min(1.0, max(0.0, sim)))
    return graph


def iter_document_nodes(graph: Graph, path: str) -> Iterable[Node]:
    return (n for n in graph.nodes.values() if n.source_path == path and n.kind.category != "Entity")
