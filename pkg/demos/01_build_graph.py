"""Ingest the bundled corpus and look at the resulting knowledge graph.

Run with ``python3 demos/01_build_graph.py``. The bundled corpus has two
documents and three saved web pages. Ingestion turns them into one graph. Its
nodes are documents, chunks, entities, pages and interactive elements. Its
edges are structural, semantic and navigational links.
"""

from __future__ import annotations

import tempfile
from collections import Counter

from kgtaskgen.pipeline import Pipeline, build_config


def main() -> None:
    with tempfile.TemporaryDirectory() as ws:
        pipeline = Pipeline(build_config(), ws)
        docs = pipeline.ingest_docs()
        pages = pipeline.ingest_web()
        print(f"documents: {[d.path for d in docs]}")
        print(f"pages:     {[p.url for p in pages]}")

        graph = pipeline.build_graph()
        print(f"\ngraph: {len(graph)} nodes, {len(list(graph.iter_edges()))} edges")

        print("\nnode kinds")
        for kind, count in sorted(Counter(n.kind.name for n in graph.nodes_of()).items()):
            print(f"  {kind:<16} {count}")
        print("\nedge kinds")
        for kind, count in sorted(Counter(e.kind for _, e in graph.iter_edges()).items()):
            print(f"  {kind:<20} {count}")

        # one chunk with its hierarchical context, to show what the sampler sees
        chunk = graph.nodes_of("SemanticChunk")[0]
        print(f"\nexample chunk {chunk.id}")
        print(f"  context: {' > '.join(chunk.contextual_path)}")
        print(f"  text:    {chunk.text[:100]}...")


if __name__ == "__main__":
    main()
