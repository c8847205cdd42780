"""Stage orchestration over a workspace directory.

Stages: ingest-docs -> ingest-web -> build-graph -> sample -> generate -> optimize,
plus evaluate and report. Each stage reads the previous stage's artifacts from the
workspace, so any stage can be rerun on its own.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import random
import time
from collections.abc import Callable, Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .coverage import SelectionConfig, optimize_tasks
from .embed import HashingEmbedder, SentenceTransformerEmbedder
from .errors import ConfigError, KGTaskGenError, StageError, TaskValidationError
from .gateway import make_gateway
from .graph import Graph, load_graph, serialize_graph
from .ingest.doc import GatewayCaptioner, MetadataCaptioner, RawDocument, build_doc_graph, document_from_dict, load_corpus
from .ingest.web import PageSnapshot, build_web_graph, decode_html, load_snapshots
from .metapath import MetapathInstance, load_library, match_pattern, select_patterns
from .metrics import evaluate_tasks, load_trajectories
from .sampler import SamplerConfig, SeedSelector, Subgraph, TaskObjective, sample_document_subgraph, sample_web_subgraph
from .taskgen import Task, build_page_context, generate_doc_task, generate_web_task, validate_record
from .templates import TaskTemplate, load_templates, template_matches

logger = logging.getLogger(__name__)

STAGES = ("ingest-docs", "ingest-web", "build-graph", "sample", "generate", "optimize", "evaluate", "report")

ARTIFACTS = {
    "docs": "docs.json",
    "snapshots": "snapshots.json",
    "graph": "graph.json",
    "candidates": "candidates.json",
    "raw_tasks": "tasks.raw.jsonl",
    "tasks": "tasks.jsonl",
    "selection": "selection_report.json",
    "stages": "stages.json",
    "run_report": "run_report.json",
    "eval": "eval/report.json",
    "eval_csv": "eval/report.csv",
}


# -- configuration -----------------------------------------------------------------

DEFAULTS: dict[str, Any] = {
    "seed": 7,
    "corpus": {"docs": "", "snapshots": ""},
    "graph": {"dimension": 384, "sim_threshold": 0.75, "max_chunk_tokens": 128, "embedder": "hashing", "embedder_model": ""},
    "sampler": {"tau": 0.5, "k": 2},
    "generation": {"templates": "", "patterns": "", "per_source_cap": 4, "documents": True, "web": True, "refine": True},
    "optimization": {"lambda": 0.7, "alpha": 0.5, "quality_threshold": 0.6, "target_size": 0, "judge": True},
    "evaluation": {"top_k": 3, "trajectories": "", "judge_aggregate": "mean", "multiset_f1": True},
    "gateway": {
        "mock": True,
        "seed": 0,
        "endpoint": "",
        "model": "",
        "temperature": 0.1,
        "api_key_env": "LLM_API_KEY",
        "timeout": 60.0,
        "retries": 3,
        "backoff_base": 0.5,
        "max_in_flight": 4,
        "requests_per_minute": 0,
    },
}

# (section, key) -> (low, high) inclusive numeric bounds
_RANGES = {
    ("graph", "dimension"): (1, 65536),
    ("graph", "sim_threshold"): (0.0, 1.0),
    ("graph", "max_chunk_tokens"): (32, 1 << 20),
    ("sampler", "tau"): (1e-9, 1 - 1e-9),
    ("sampler", "k"): (1, 64),
    ("generation", "per_source_cap"): (1, 1 << 20),
    ("optimization", "lambda"): (0.0, 1.0),
    ("optimization", "alpha"): (0.0, 1.0),
    ("optimization", "quality_threshold"): (0.0, 1.0),
    ("optimization", "target_size"): (0, 1 << 30),
    ("evaluation", "top_k"): (1, 1000),
    ("gateway", "temperature"): (0.0, 2.0),
    ("gateway", "retries"): (0, 20),
    ("gateway", "max_in_flight"): (1, 256),
    ("gateway", "requests_per_minute"): (0, 1 << 20),
}


def _bundled(relative: str) -> Path:
    return Path(str(resources.files("kgtaskgen").joinpath(relative)))


def _merge(base: dict, override: Mapping, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        label = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {label!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {label!r} must be a table")
            out[key] = _merge(base[key], value, f"{label}.")
        else:
            expected = type(base[key])
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ConfigError(f"config key {label!r} must be of type {expected.__name__}")
            out[key] = value
    return out


@dataclass(frozen=True)
class PipelineConfig:
    data: dict[str, Any]
    base_dir: Path

    def __getitem__(self, section: str) -> Any:
        return self.data[section]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def path(self, section: str, key: str, bundled: str | None = None) -> Path | None:
        raw = self.data[section][key]
        if not raw:
            return _bundled(bundled) if bundled else None
        p = Path(raw)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def docs_dir(self) -> Path:
        return self.path("corpus", "docs", "data/corpus/docs")

    @property
    def snapshots_dir(self) -> Path:
        return self.path("corpus", "snapshots", "data/corpus/snapshots")

    def selection(self) -> SelectionConfig:
        opt = self.data["optimization"]
        return SelectionConfig(opt["lambda"], opt["alpha"], opt["quality_threshold"], opt["target_size"] or None)

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.data["sampler"]["tau"], self.data["sampler"]["k"])


def build_config(overrides: Mapping[str, Any] | None = None, base_dir: Path | None = None) -> PipelineConfig:
    data = _merge(DEFAULTS, overrides or {})
    for (section, key), (lo, hi) in _RANGES.items():
        value = data[section][key]
        if not lo <= value <= hi:
            raise ConfigError(f"config key '{section}.{key}'={value} outside [{lo}, {hi}]")
    if data["evaluation"]["judge_aggregate"] not in ("mean", "answer_quality"):
        raise ConfigError("evaluation.judge_aggregate must be 'mean' or 'answer_quality'")
    if data["graph"]["embedder"] not in ("hashing", "sentence-transformers"):
        raise ConfigError("graph.embedder must be 'hashing' or 'sentence-transformers'")
    return PipelineConfig(data, base_dir or Path.cwd())


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """TOML file (optional) merged over defaults, then ``overrides`` (CLI flags) on top."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    file_data: dict[str, Any] = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            file_data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base_dir = path.parent.resolve()
    merged = _merge(DEFAULTS, file_data)
    return build_config(_merge(merged, overrides or {}), base_dir)


def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """Per-stage seed from the global seed via a labelled counter."""
    digest = hashlib.sha256(f"{seed}:{label}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# -- workspace helpers ---------------------------------------------------------------


def _write(path: Path, data: bytes | str) -> None:
    """Write through a ``.partial`` file; a failure leaves only the partial behind."""
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    partial.write_bytes(data.encode("utf-8") if isinstance(data, str) else data)
    os.replace(partial, path)


def _json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}; run the earlier stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def write_tasks(path: Path, tasks: Iterable[Task]) -> None:
    lines = [t.to_json() for t in sorted(tasks, key=lambda t: t.task_id)]
    _write(path, "".join(line + "\n" for line in lines))


def read_tasks(path: Path) -> list[Task]:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}; run the earlier stage first")
    tasks = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            try:
                tasks.append(Task.from_dict(json.loads(line)))
            except (TaskValidationError, ValueError) as exc:
                raise TaskValidationError(f"{path.name} line {n}: {exc}") from exc
    return tasks


def _doc_to_dict(doc: RawDocument) -> dict[str, Any]:
    blocks = []
    for b in doc.blocks:
        rec: dict[str, Any] = {"kind": b.kind, "text": b.text}
        if b.heading_level is not None:
            rec["heading_level"] = b.heading_level
        for key in ("caption", "alt", "ocr_text"):
            if getattr(b, key):
                rec[key] = getattr(b, key)
        blocks.append(rec)
    return {"path": doc.path, "title": doc.title, "author": doc.author, "blocks": blocks}


def _snapshot_to_dict(snap: PageSnapshot) -> dict[str, Any]:
    return {
        "url": snap.url,
        "title": snap.title,
        "html": decode_html(snap.html),
        "screenshot_ref": snap.screenshot_ref,
        "fetched_at": snap.fetched_at,
        "website_type": snap.website_type,
        "source": snap.source,
    }


def _snapshot_from_dict(rec: Mapping[str, Any]) -> PageSnapshot:
    return PageSnapshot(
        rec["url"], rec["title"], rec["html"].encode("utf-8"), rec.get("screenshot_ref"), rec["fetched_at"],
        rec.get("website_type", ""), rec.get("source", ""),
    )


def make_embedder(config: PipelineConfig):
    graph_cfg = config["graph"]
    if graph_cfg["embedder"] == "sentence-transformers":
        embedder = SentenceTransformerEmbedder(graph_cfg["embedder_model"] or "sentence-transformers/all-MiniLM-L6-v2")
        if embedder.dimension != graph_cfg["dimension"]:
            raise ConfigError(f"embedder dimension {embedder.dimension} != graph.dimension {graph_cfg['dimension']}")
        return embedder
    return HashingEmbedder(graph_cfg["dimension"])


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- pipeline ---------------------------------------------------------------------


class Pipeline:
    def __init__(self, config: PipelineConfig, workspace: str | Path, jobs: int = 1):
        self.config = config
        self.workspace = Path(workspace)
        self.jobs = max(1, jobs)
        self._gateway = None
        self._embedder = None

    def artifact(self, name: str) -> Path:
        return self.workspace / ARTIFACTS[name]

    @property
    def gateway(self):
        if self._gateway is None:
            settings = dict(self.config["gateway"])
            if settings.get("mock", True) and not settings.get("seed"):
                settings["seed"] = derive_seed(self.config.seed, "gateway") % (1 << 31)
            self._gateway = make_gateway(settings)
        return self._gateway

    @property
    def embedder(self):
        if self._embedder is None:
            self._embedder = make_embedder(self.config)
        return self._embedder

    def graph(self) -> Graph:
        path = self.artifact("graph")
        if not path.exists():
            raise FileNotFoundError(f"missing artifact {path}; run the earlier stage first")
        return load_graph(path.read_bytes()).freeze()

    @contextmanager
    def _stage(self, name: str):
        start = time.perf_counter()
        before = self.gateway.usage.as_dict() if self._gateway is not None else {}
        try:
            yield
        except KGTaskGenError as exc:
            if isinstance(exc, (ConfigError, TaskValidationError, StageError)):
                raise
            raise StageError(name, exc) from exc
        except (OSError, ValueError, KeyError) as exc:
            raise StageError(name, exc) from exc
        elapsed = time.perf_counter() - start
        after = self._gateway.usage.as_dict() if self._gateway is not None else {}
        usage = {k: after.get(k, 0) - before.get(k, 0) for k in after}
        stages = _read_json(self.artifact("stages")) if self.artifact("stages").exists() else {}
        stages[name] = {"seconds": round(elapsed, 4), "usage": usage}
        _write(self.artifact("stages"), _json(stages))

    # stage 1a
    def ingest_docs(self) -> list[RawDocument]:
        with self._stage("ingest-docs"):
            if not self.config["generation"]["documents"]:
                docs: list[RawDocument] = []
                issues: list[str] = []
            else:
                path = self.config.docs_dir
                if not path.is_dir():
                    raise ConfigError(f"documents directory {path} does not exist")
                issues = []
                docs = load_corpus(path, issues)
            _write(self.artifact("docs"), _json({"documents": [_doc_to_dict(d) for d in docs], "issues": issues}))
        return docs

    # stage 1b
    def ingest_web(self) -> list[PageSnapshot]:
        with self._stage("ingest-web"):
            snaps: list[PageSnapshot] = []
            if self.config["generation"]["web"]:
                path = self.config.snapshots_dir
                if not path.is_dir():
                    raise ConfigError(f"snapshots directory {path} does not exist")
                snaps = load_snapshots(path)
            _write(self.artifact("snapshots"), _json({"snapshots": [_snapshot_to_dict(s) for s in snaps]}))
        return snaps

    # stage 2
    def build_graph(self) -> Graph:
        with self._stage("build-graph"):
            docs_payload = _read_json(self.artifact("docs"))
            snaps_payload = _read_json(self.artifact("snapshots"))
            docs = [document_from_dict(d) for d in docs_payload["documents"]]
            snaps = [_snapshot_from_dict(s) for s in snaps_payload["snapshots"]]
            graph_cfg = self.config["graph"]
            graph = Graph(graph_cfg["dimension"])
            report: list[str] = []
            captioner = GatewayCaptioner(self.gateway) if self.config["generation"]["refine"] else MetadataCaptioner()
            build_doc_graph(
                docs,
                self.embedder,
                captioner,
                graph_cfg["sim_threshold"],
                max_chunk_tokens=graph_cfg["max_chunk_tokens"],
                graph=graph,
                report=report,
            )
            build_web_graph(snaps, self.embedder, graph=graph, report=report)
            _write(self.artifact("graph"), serialize_graph(graph))
        return graph

    def templates(self) -> list[TaskTemplate]:
        return load_templates(self.config.path("generation", "templates"))

    def patterns(self):
        return load_library(self.config.path("generation", "patterns"))

    # stage 3
    def sample(self) -> dict[str, Any]:
        with self._stage("sample"):
            graph = self.graph()
            cap = self.config["generation"]["per_source_cap"]
            doc_candidates = []
            for t_index, template in enumerate(self.templates()):
                objective = TaskObjective.from_text(
                    f"{template.name}. {template.description}",
                    self.embedder,
                    mode="document",
                    required_node_kinds=frozenset(template.requirements.required_node_kinds),
                    required_edge_kinds=frozenset(template.requirements.required_edge_kinds),
                )
                sampled = sample_document_subgraph(graph, objective, self.config.sampler())
                rng = random.Random(derive_seed(self.config.seed, "sample", t_index))
                for nodes in carve_candidates(graph, template, sampled, cap, rng):
                    doc_candidates.append({"template_id": template.template_id, "nodes": nodes})
            web_candidates = self._web_candidates(graph, cap)
            payload = {"document": doc_candidates, "web": web_candidates}
            _write(self.artifact("candidates"), _json(payload))
        return payload

    def _web_candidates(self, graph: Graph, cap: int) -> list[dict[str, Any]]:
        library = self.patterns()
        out = []
        for page in sorted(graph.nodes_of("WebPage"), key=lambda n: n.id):
            url = page.metadata.get("url", "")
            objective = TaskObjective.from_text(
                page.text, self.embedder, mode="web", seed_selector=SeedSelector(page_url=url)
            )
            sub = sample_web_subgraph(graph, objective, self.config.sampler())
            if not sub.node_ids:
                continue
            local: list[MetapathInstance] = []
            for pattern in select_patterns(library, graph, sub):
                matches = [m for m in match_pattern(pattern, graph, sub) if _on_page(graph, m, page.id)]
                for inst in matches[:cap]:
                    out.append({"page_id": page.id, "instances": [_instance_to_dict(inst)]})
                if matches and pattern.tier != "basic" and len(local) < 3:
                    local.append(matches[0])
            if len(local) >= 2:
                out.append({"page_id": page.id, "instances": [_instance_to_dict(i) for i in local]})
        return out

    # stage 4
    def generate(self) -> list[Task]:
        with self._stage("generate"):
            graph = self.graph()
            payload = _read_json(self.artifact("candidates"))
            templates = {t.template_id: t for t in self.templates()}
            names = {p.id: p.name for p in self.patterns()}
            gateway = self.gateway if self.config["generation"]["refine"] else None

            def doc_task(spec: dict) -> Task:
                template = templates[spec["template_id"]]
                return generate_doc_task(template, graph, Subgraph.induced(graph, spec["nodes"]), gateway)

            def web_task(item: tuple[int, dict]) -> Task:
                index, spec = item
                instances = [_instance_from_dict(d) for d in spec["instances"]]
                context = build_page_context(graph, spec["page_id"])
                seed = derive_seed(self.config.seed, "generate", index)
                return generate_web_task(instances, graph, context, gateway, seed=seed, pattern_names=names)

            tasks = _map(doc_task, payload["document"], self.jobs)
            tasks += _map(web_task, list(enumerate(payload["web"])), self.jobs)
            unique = {t.task_id: t for t in tasks}
            for task in unique.values():
                validate_record(task.to_dict())
            write_tasks(self.artifact("raw_tasks"), unique.values())
        return sorted(unique.values(), key=lambda t: t.task_id)

    # stage 5
    def optimize(self) -> tuple[list[Task], dict]:
        with self._stage("optimize"):
            graph = self.graph()
            tasks = read_tasks(self.artifact("raw_tasks"))
            judge = self.gateway if self.config["optimization"]["judge"] else None
            selected, report = optimize_tasks(tasks, graph, self.config.selection(), judge=judge, embedder=self.embedder)
            write_tasks(self.artifact("tasks"), selected)
            _write(self.artifact("selection"), _json(report))
        return selected, report

    def evaluate(self) -> dict[str, Any]:
        with self._stage("evaluate"):
            graph = self.graph()
            tasks = read_tasks(self.artifact("tasks"))
            traj_path = self.config.path("evaluation", "trajectories")
            trajectories = load_trajectories(traj_path) if traj_path else {}
            ev = self.config["evaluation"]
            report = evaluate_tasks(
                tasks,
                graph,
                self.gateway,
                self.embedder,
                trajectories=trajectories,
                top_k=ev["top_k"],
                judge_aggregate=ev["judge_aggregate"],
                multiset_f1=ev["multiset_f1"],
            )
            payload = report.to_dict()
            _write(self.artifact("eval"), _json(payload))
            _write(self.artifact("eval_csv"), report.to_csv())
        return payload

    def report(self) -> dict[str, Any]:
        with self._stage("report"):
            pass
        report = build_run_report(self)
        _write(self.artifact("run_report"), _json(report))
        return report

    def run_all(self, evaluate: bool = True) -> dict[str, Any]:
        self.workspace.mkdir(parents=True, exist_ok=True)
        if self.artifact("stages").exists():
            self.artifact("stages").unlink()
        self.ingest_docs()
        self.ingest_web()
        self.build_graph()
        self.sample()
        self.generate()
        self.optimize()
        if evaluate:
            self.evaluate()
        return self.report()


def _on_page(graph: Graph, instance: MetapathInstance, page_id: str) -> bool:
    first = instance.nodes[0]
    return first == page_id or any(
        graph.edges[i].src == page_id and graph.edges[i].kind == "contains" for i in graph.in_edges(first)
    )


def _instance_to_dict(inst: MetapathInstance) -> dict[str, Any]:
    return {
        "pattern_id": inst.pattern_id,
        "bindings": [list(b) for b in inst.bindings],
        "nodes": list(inst.nodes),
        "edge_ids": list(inst.edge_ids),
        "units": list(inst.units),
    }


def _instance_from_dict(data: Mapping[str, Any]) -> MetapathInstance:
    return MetapathInstance(
        data["pattern_id"],
        tuple((s, n) for s, n in data["bindings"]),
        tuple(data["nodes"]),
        tuple(data["edge_ids"]),
        tuple(data["units"]),
    )


def carve_candidates(
    graph: Graph, template: TaskTemplate, sampled: Subgraph, cap: int, rng: random.Random
) -> list[list[str]]:
    """Small connected pieces of a sampled subgraph that satisfy the template.

    Each piece is a breadth-first ball (radius max_hops // 2) around an anchor node
    of the template's first required kind, truncated to max_nodes in BFS order so it
    stays connected.
    """
    req = template.requirements
    members = set(sampled.node_ids)
    adjacency: dict[str, set[str]] = {n: set() for n in members}
    for i in sampled.edge_ids:
        e = graph.edges[i]
        adjacency[e.src].add(e.dst)
        adjacency[e.dst].add(e.src)
    anchor_kind = req.required_node_kinds[0] if req.required_node_kinds else None
    anchors = sorted(n for n in members if anchor_kind is None or graph.node(n).kind.category == anchor_kind)
    rng.shuffle(anchors)
    radius = max(1, req.max_hops // 2)
    seen: set[frozenset[str]] = set()
    out: list[list[str]] = []
    for anchor in anchors:
        order = [anchor]
        depth = {anchor: 0}
        for current in order:
            if depth[current] == radius:
                continue
            for nxt in sorted(adjacency[current]):
                if nxt not in depth:
                    depth[nxt] = depth[current] + 1
                    order.append(nxt)
        piece = frozenset(order[: req.max_nodes])
        if piece in seen:
            continue
        seen.add(piece)
        if template_matches(template, graph, Subgraph.induced(graph, piece)):
            out.append(sorted(piece))
            if len(out) >= cap:
                break
    return out


# -- run report ----------------------------------------------------------------------


def tasks_per_source(n_tasks: int, n_sources: int) -> float | None:
    return round(n_tasks / n_sources, 2) if n_sources else None


def _count_lines(path: Path) -> int:
    if not path.exists():
        return 0
    return sum(1 for line in path.read_text(encoding="utf-8").splitlines() if line.strip())


def build_run_report(pipeline: Pipeline) -> dict[str, Any]:
    ws = pipeline
    stages = _read_json(ws.artifact("stages")) if ws.artifact("stages").exists() else {}
    graph = ws.graph() if ws.artifact("graph").exists() else None
    raw = read_tasks(ws.artifact("raw_tasks")) if ws.artifact("raw_tasks").exists() else []
    selected = read_tasks(ws.artifact("tasks")) if ws.artifact("tasks").exists() else []
    selection = _read_json(ws.artifact("selection")) if ws.artifact("selection").exists() else {}
    filtered_ids = selection.get("filtered_ids", {"quality": [], "reachability": []})
    kinds = {t.task_id: t.kind for t in raw}

    def per_kind(ids: Iterable[str]) -> dict[str, int]:
        ids = list(ids)
        return {k: sum(1 for i in ids if kinds.get(i) == k) for k in ("document", "web")}

    n_docs = len(graph.nodes_of("Document")) if graph else 0
    n_pages = len(graph.nodes_of("WebPage")) if graph else 0
    selected_kinds = per_kind(t.task_id for t in selected)
    usage: dict[str, int] = {}
    for entry in stages.values():
        for key, value in entry.get("usage", {}).items():
            usage[key] = usage.get(key, 0) + value
    report = {
        "stages": {name: entry["seconds"] for name, entry in stages.items()},
        "graph": {
            "nodes": len(graph.nodes) if graph else 0,
            "edges": len(graph.edges) if graph else 0,
            "documents": n_docs,
            "pages": n_pages,
        },
        "tasks": {
            "generated": per_kind(t.task_id for t in raw),
            "filtered": {
                "quality": per_kind(filtered_ids.get("quality", [])),
                "reachability": per_kind(filtered_ids.get("reachability", [])),
            },
            "selected": selected_kinds,
            "task_types": sorted({t.task_type for t in selected}),
        },
        "tasks_per_source": {
            "document": tasks_per_source(selected_kinds["document"], n_docs),
            "web": tasks_per_source(selected_kinds["web"], n_pages),
        },
        "coverage": selection.get("per_dimension_coverage", {}),
        "token_usage": usage,
        "files": {
            "tasks.raw.jsonl": _count_lines(ws.artifact("raw_tasks")),
            "tasks.jsonl": _count_lines(ws.artifact("tasks")),
        },
    }
    generated = sum(report["tasks"]["generated"].values())
    if generated != report["files"]["tasks.raw.jsonl"] or sum(selected_kinds.values()) != report["files"]["tasks.jsonl"]:
        raise TaskValidationError("run report counts disagree with the task files")
    return report


def run_stage(pipeline: Pipeline, stage: str) -> Any:
    dispatch = {
        "ingest-docs": pipeline.ingest_docs,
        "ingest-web": pipeline.ingest_web,
        "build-graph": pipeline.build_graph,
        "sample": pipeline.sample,
        "generate": pipeline.generate,
        "optimize": pipeline.optimize,
        "evaluate": pipeline.evaluate,
        "report": pipeline.report,
        "run-all": pipeline.run_all,
    }
    return dispatch[stage]()


def run_pipeline(config: PipelineConfig, workspace: str | Path, jobs: int = 1) -> dict[str, Any]:
    return Pipeline(config, workspace, jobs).run_all()


__all__ = [
    "Pipeline",
    "PipelineConfig",
    "STAGES",
    "build_config",
    "carve_candidates",
    "derive_seed",
    "load_config",
    "read_tasks",
    "run_pipeline",
    "run_stage",
    "tasks_per_source",
]
