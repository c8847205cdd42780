"""Task-set optimization: quality scoring, reachability, coverage buckets and MMR selection."""

from __future__ import annotations

import json
import logging
from collections import Counter
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

from .errors import GatewayError
from .gateway import ChatRequest
from .graph import Graph, cosine_similarity, undirected_distances
from .jsonutil import parse_json_object
from .taskgen import Task, difficulty_for_steps
from .templates import DIFFICULTIES
from .tokens import count_tokens, tokenize

logger = logging.getLogger(__name__)

WEB_DIMENSIONS = ("node_type", "edge_type", "pattern", "page", "website_type", "difficulty")
DOC_DIMENSIONS = ("task_type", "difficulty", "template", "variable", "content_length")
PROMPT_TOKEN_RANGE = (8, 400)


@dataclass(frozen=True)
class QualityScore:
    clarity: float
    relevance: float
    difficulty_fit: float
    completeness: float

    @property
    def overall(self) -> float:
        return (self.clarity + self.relevance + self.difficulty_fit + self.completeness) / 4


@dataclass(frozen=True)
class SelectionConfig:
    lambda_: float = 0.7
    alpha: float = 0.5
    quality_threshold: float = 0.6
    target_size: int | None = None

    def __post_init__(self) -> None:
        for name in ("lambda_", "alpha", "quality_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.target_size is not None and self.target_size < 0:
            raise ValueError("target_size must be >= 0")


# -- quality -------------------------------------------------------------------


def clarity_score(prompt: str) -> float:
    if "{{" in prompt or "}}" in prompt:
        return 0.0
    n = count_tokens(prompt)
    lo, hi = PROMPT_TOKEN_RANGE
    if n == 0:
        return 0.0
    if n < lo:
        return n / lo
    if n > hi:
        return hi / n
    return 1.0


def _selector_index(graph: Graph, task: Task) -> dict[str, str]:
    """selector -> node id for WebElements in the task's subgraph."""
    out = {}
    for nid in task.subgraph_ids:
        if nid in graph:
            selector = graph.node(nid).metadata.get("selector")
            if selector:
                out[selector] = nid
    return out


def step_targets(task: Task, graph: Graph) -> tuple[list[str], int]:
    """Node ids targeted by a web task's steps, plus the number of unresolvable targets."""
    selectors = _selector_index(graph, task)
    pages = {graph.node(n).metadata.get("url"): n for n in task.subgraph_ids if n in graph and graph.node(n).kind.category == "WebPage"}
    targets, missing = [], 0
    for step in task.web_steps or []:
        if step.action == "wait" and step.target_selector == "body":
            continue
        lookup = pages if step.action == "navigate" else selectors
        if step.target_selector in lookup:
            targets.append(lookup[step.target_selector])
        else:
            missing += 1
    return targets, missing


def _relevance(task: Task, graph: Graph) -> float:
    members = set(task.subgraph_ids)
    checks = [c in graph and c in members for c in task.citations]
    if task.kind == "web":
        targets, missing = step_targets(task, graph)
        checks += [True] * len(targets) + [False] * missing
    return sum(checks) / len(checks) if checks else 0.0


def _band_distance(expected: str, actual: str) -> float:
    return 1.0 - abs(DIFFICULTIES.index(expected) - DIFFICULTIES.index(actual)) / (len(DIFFICULTIES) - 1)


def expected_difficulty(task: Task) -> str:
    if task.kind == "web":
        return difficulty_for_steps(len(task.web_steps or []))
    size = len(task.subgraph_ids)
    if size <= 3:
        return "Easy"
    if size <= 6:
        return "Medium"
    if size <= 10:
        return "Hard"
    return "Expert"


def _completeness(task: Task) -> float:
    if task.kind == "document":
        fields = [task.prompt.strip(), task.gold_answer and task.gold_answer.strip(), task.citations, task.task_type, task.difficulty]
    else:
        fields = [task.prompt.strip(), task.web_steps, task.chain_name, task.citations, task.difficulty]
    return sum(1 for f in fields if f) / len(fields)


def score_quality(task: Task, graph: Graph, judge=None) -> QualityScore:
    if not task.prompt.strip():
        # nothing to ask: the other components would otherwise keep the task above threshold
        return QualityScore(0.0, 0.0, 0.0, 0.0)
    score = QualityScore(
        clarity=clarity_score(task.prompt),
        relevance=_relevance(task, graph),
        difficulty_fit=_band_distance(expected_difficulty(task), task.difficulty),
        completeness=_completeness(task),
    )
    if judge is None:
        return score
    request = ChatRequest.user(
        "Score this benchmark task from 0.0 to 1.0 on clarity, relevance and completeness.\n"
        f"Task: {json.dumps(task.to_dict(), ensure_ascii=False)}\n"
        'Respond with JSON only: {"clarity": <score>, "relevance": <score>, "completeness": <score>}'
    )
    try:
        data = parse_json_object(judge.complete(request, "quality").text)
        values = {k: min(1.0, max(0.0, float(data[k]))) for k in ("clarity", "relevance", "completeness")}
    except (GatewayError, ValueError, KeyError, TypeError) as exc:
        logger.warning("quality judge failed for %s, keeping rule scores: %s", task.task_id, exc)
        return score
    return QualityScore(values["clarity"], values["relevance"], score.difficulty_fit, values["completeness"])


# -- reachability ----------------------------------------------------------------


def task_root(task: Task, graph: Graph) -> str | None:
    if task.kind == "web":
        url = task.metadata.get("page_url")
        for nid in task.subgraph_ids:
            node = graph.node(nid) if nid in graph else None
            if node is not None and node.kind.category == "WebPage" and node.metadata.get("url") == url:
                return nid
        return None
    path = task.metadata.get("source_path")
    for node in graph.nodes.values():
        if node.kind.category == "Document" and node.source_path == path:
            return node.id
    return None


def reachability_check(task: Task, graph: Graph) -> bool:
    """Every cited or step-targeted node is reachable (undirected) from the task's root."""
    targets = list(task.citations)
    if task.kind == "web":
        found, missing = step_targets(task, graph)
        if missing:
            return False
        targets += found
    if not targets:
        return False
    root = task_root(task, graph)
    if root is None:
        return False
    reachable = undirected_distances(graph, root)
    return all(t in reachable for t in targets)


# -- coverage --------------------------------------------------------------------


def content_length_bucket(prompt: str) -> str:
    n = count_tokens(prompt)
    if n < 50:
        return "<50"
    if n <= 150:
        return "50-150"
    return ">150"


def task_buckets(task: Task, graph: Graph) -> frozenset[tuple[str, str]]:
    """Exactly one (dimension, bucket) pair per coverage dimension of the task's kind."""
    if task.kind == "document":
        return frozenset(
            {
                ("task_type", task.task_type),
                ("difficulty", task.difficulty),
                ("template", task.provenance.get("template_id", "")),
                ("variable", str(task.metadata.get("variables", ""))),
                ("content_length", content_length_bucket(task.prompt)),
            }
        )
    members = [n for n in task.subgraph_ids if n in graph]
    kinds = sorted({graph.node(n).kind.name for n in task.citations if n in graph})
    edges = sorted({graph.edges[i].kind for i in graph.induced_edges(members)} - {"contains"})
    return frozenset(
        {
            ("node_type", "+".join(kinds)),
            ("edge_type", "+".join(edges) or "none"),
            ("pattern", task.provenance.get("pattern_id", "")),
            ("page", str(task.metadata.get("page_url", ""))),
            ("website_type", str(task.metadata.get("website_type", "")) or "unknown"),
            ("difficulty", task.difficulty),
        }
    )


def coverage_gain(
    selected: Sequence[frozenset] | frozenset, candidate: frozenset, pool_bucket_count: int
) -> float:
    """Share of the pool's (dimension, bucket) pairs that the candidate adds to the selection."""
    if pool_bucket_count <= 0:
        return 0.0
    covered = selected if isinstance(selected, (set, frozenset)) else frozenset().union(*selected)
    return len(candidate - covered) / pool_bucket_count


# -- similarity --------------------------------------------------------------------


def token_jaccard(a: str, b: str) -> float:
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def multiset_jaccard(a: Sequence[str], b: Sequence[str]) -> float:
    ca, cb = Counter(a), Counter(b)
    union = sum((ca | cb).values())
    if union == 0:
        return 1.0
    return sum((ca & cb).values()) / union


def prompt_similarity(a: str, b: str, embedder=None) -> float:
    if embedder is None:
        return token_jaccard(a, b)
    if a == b:
        return 1.0
    return min(1.0, max(0.0, cosine_similarity(embedder.embed(a), embedder.embed(b))))


def similarity(a: Task, b: Task, embedder=None) -> float:
    if a.kind != b.kind:
        raise ValueError("similarity is only defined between tasks of the same kind")
    prompt = prompt_similarity(a.prompt, b.prompt, embedder)
    if a.kind == "document":
        return prompt
    same_pattern = 1.0 if a.provenance.get("pattern_id") == b.provenance.get("pattern_id") else 0.0
    actions = multiset_jaccard([s.action for s in a.web_steps or []], [s.action for s in b.web_steps or []])
    return 0.3 * same_pattern + 0.3 * actions + 0.4 * prompt


# -- MMR ---------------------------------------------------------------------------


def mmr_select(
    candidate_ids: Sequence[str],
    quality: Mapping[str, float],
    buckets: Mapping[str, frozenset],
    sim: Callable[[str, str], float],
    config: SelectionConfig,
) -> list[str]:
    """Greedy maximal-marginal-relevance ordering of candidates.

    score(c) = lambda * (alpha * quality(c) + (1 - alpha) * gain(S, c)) - (1 - lambda) * max_s sim(c, s)
    with ties broken towards the smaller id.
    """
    remaining = sorted(set(candidate_ids))
    target = len(remaining) if config.target_size is None else min(config.target_size, len(remaining))
    pool_count = len(frozenset().union(*(buckets[c] for c in remaining))) if remaining else 0
    selected: list[str] = []
    covered: frozenset = frozenset()
    cache: dict[tuple[str, str], float] = {}

    def pair_sim(a: str, b: str) -> float:
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            cache[key] = sim(*key)
        return cache[key]

    while remaining and len(selected) < target:
        best_id, best_score = None, None
        for cid in remaining:
            relevance = config.alpha * quality[cid] + (1 - config.alpha) * coverage_gain(covered, buckets[cid], pool_count)
            redundancy = max((pair_sim(cid, s) for s in selected), default=0.0)
            score = config.lambda_ * relevance - (1 - config.lambda_) * redundancy
            if best_score is None or score > best_score:
                best_id, best_score = cid, score
        selected.append(best_id)
        covered = covered | buckets[best_id]
        remaining.remove(best_id)
    return selected


def per_dimension_coverage(selected: Sequence[frozenset], pool: Sequence[frozenset]) -> dict[str, float]:
    pool_pairs = frozenset().union(*pool) if pool else frozenset()
    chosen = frozenset().union(*selected) if selected else frozenset()
    dims = sorted({d for d, _ in pool_pairs})
    out = {}
    for dim in dims:
        total = {b for d, b in pool_pairs if d == dim}
        out[dim] = len({b for d, b in chosen if d == dim}) / len(total)
    return out


def optimize_tasks(
    tasks: Sequence[Task],
    graph: Graph,
    config: SelectionConfig,
    *,
    judge=None,
    embedder=None,
) -> tuple[list[Task], dict]:
    """Filter by quality and reachability, then MMR-select per task kind.

    Returns the selected tasks (sorted by id) and the selection report.
    """
    by_id = {t.task_id: t for t in tasks}
    scores = {tid: score_quality(t, graph, judge) for tid, t in sorted(by_id.items())}
    low_quality = sorted(tid for tid, s in scores.items() if s.overall < config.quality_threshold)
    unreachable = sorted(tid for tid in by_id if tid not in low_quality and not reachability_check(by_id[tid], graph))
    survivors = [tid for tid in sorted(by_id) if tid not in set(low_quality) | set(unreachable)]
    buckets = {tid: task_buckets(by_id[tid], graph) for tid in by_id}

    selected: list[str] = []
    coverage: dict[str, dict[str, float]] = {}
    for kind in ("document", "web"):
        ids = [tid for tid in survivors if by_id[tid].kind == kind]
        if not ids:
            continue
        chosen = mmr_select(
            ids,
            {tid: scores[tid].overall for tid in ids},
            buckets,
            lambda a, b: similarity(by_id[a], by_id[b], embedder),
            config,
        )
        selected += chosen
        coverage[kind] = per_dimension_coverage([buckets[t] for t in chosen], [buckets[t] for t in ids])
    report = {
        "pool_size": len(by_id),
        "filtered_out": {"quality": len(low_quality), "reachability": len(unreachable)},
        "filtered_ids": {"quality": low_quality, "reachability": unreachable},
        "selected_ids": selected,
        "per_dimension_coverage": coverage,
        "quality": {tid: round(scores[tid].overall, 6) for tid in sorted(scores)},
    }
    return sorted((by_id[t] for t in selected), key=lambda t: t.task_id), report
