"""Sample a subgraph for a task objective and match web interaction patterns.

Run with ``python3 demos/02_sample_and_match.py``.

The first half samples a document subgraph. It keeps nodes that are
relevant to a goal and that carry the required structure. The second half
runs the bundled metapath library over the web part of the graph. Each
instance found there becomes raw material for a web task.
"""

from __future__ import annotations

import tempfile

from kgtaskgen.metapath import load_library, match_pattern
from kgtaskgen.pipeline import Pipeline, build_config
from kgtaskgen.sampler import SamplerConfig, SeedSelector, TaskObjective, sample_subgraph


def main() -> None:
    with tempfile.TemporaryDirectory() as ws:
        pipeline = Pipeline(build_config(), ws)
        pipeline.ingest_docs()
        pipeline.ingest_web()
        graph = pipeline.build_graph()

    embedder = pipeline.embedder
    objective = TaskObjective.from_text(
        "How did the analytical engine use punched cards?", embedder, mode="document", required_node_kinds={"SemanticChunk"}
    )
    for tau in (0.1, 0.3, 0.5):
        sub = sample_subgraph(graph, objective, SamplerConfig(tau=tau))
        print(f"document sample tau={tau}: {len(sub.node_ids)} nodes, {len(sub.edge_ids)} edges")

    web = TaskObjective.from_text("search the catalog", embedder, mode="web", seed_selector=SeedSelector(kinds={"search_box"}))
    for k in (1, 2):
        sub = sample_subgraph(graph, web, SamplerConfig(k=k))
        print(f"web sample around search boxes k={k}: {len(sub.node_ids)} nodes")

    print("\nmetapath instances on the bundled pages")
    for pattern in load_library(pipeline.config.path("generation", "patterns")):
        instances = match_pattern(pattern, graph)
        print(f"  [{pattern.tier}] {pattern.id:<32} {len(instances)}")
        if instances:
            print(f"      first: {instances[0].binding_map}")


if __name__ == "__main__":
    main()
