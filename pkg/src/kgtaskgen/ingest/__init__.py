"""Corpus ingestion for documents and saved web pages."""

from .doc import build_doc_graph, load_corpus, load_document
from .web import build_web_graph, filter_links, load_snapshots, parse_snapshot

__all__ = [
    "build_doc_graph",
    "build_web_graph",
    "filter_links",
    "load_corpus",
    "load_document",
    "load_snapshots",
    "parse_snapshot",
]
