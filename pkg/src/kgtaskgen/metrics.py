"""Answer metrics, LLM-as-judge harness, success rate and a retrieval baseline agent."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .errors import GatewayError, RetrievalError
from .gateway import ChatRequest
from .graph import Graph, VectorIndex, knn_query
from .jsonutil import parse_json_object
from .taskgen import Task
from .tokens import tokenize

logger = logging.getLogger(__name__)

JSON_RETRY_HINT = "Respond with valid JSON only"


# -- lexical metrics -------------------------------------------------------------


def token_f1(pred: str, gold: str, *, multiset: bool = True) -> float:
    """Harmonic mean of token precision and recall (multiset overlap by default)."""
    p, g = tokenize(pred), tokenize(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    if multiset:
        overlap = sum((Counter(p) & Counter(g)).values())
        precision, recall = overlap / len(p), overlap / len(g)
    else:
        sp, sg = set(p), set(g)
        overlap = len(sp & sg)
        precision, recall = overlap / len(sp), overlap / len(sg)
    if overlap == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(pred: str, gold: str, beta: float = 1.0) -> float:
    """LCS-based F-measure: (1 + b^2) R P / (R + b^2 P) with R = LCS/|G|, P = LCS/|P|."""
    p, g = tokenize(pred), tokenize(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    lcs = lcs_length(p, g)
    assert lcs <= min(len(p), len(g))
    if lcs == 0:
        return 0.0
    recall, precision = lcs / len(g), lcs / len(p)
    b2 = beta * beta
    return (1 + b2) * recall * precision / (recall + b2 * precision)


# -- judge prompts -----------------------------------------------------------------

ANSWER_JUDGE_TEMPLATE = """You are an expert evaluator assessing the quality of an AI-generated answer. Please evaluate the following:

TASK: {task_prompt}
GOLD STANDARD ANSWER: {gold_answer}
GENERATED ANSWER: {pred_answer}

Rate the generated answer on these 3 key dimensions (0.0 to 1.0):

1. ANSWER_QUALITY: Overall quality and accuracy of the answer compared to the gold standard
2. RELEVANCE: How well the answer addresses the specific task/question
3. COMPLETENESS: How complete and comprehensive the answer is

Provide your assessment in JSON format:
{{
    "answer_quality": <score>,
    "relevance": <score>,
    "completeness": <score>
}}

Be objective and focus on the most important aspects of answer quality."""

TRAJECTORY_JUDGE_TEMPLATE = """Task: {task_prompt}

Execution Summary:
- Actions executed: {action_count}
- Success: {success}
- Error message: {error_message}

Current page URL: {url}
Current page title: {title}

Actions executed:
{action_lines}

Please evaluate if the task has been completed successfully by analyzing the current page state. Consider:
1. Whether all required actions were performed
2. Whether the final state matches the task requirements
3. Whether any errors occurred that prevent completion
4. Whether the current page content indicates task completion

Respond with valid JSON format (no markdown, no code blocks):
{{
    "task_completed": true,
    "confidence": 0.8,
    "reasoning": "explanation of your evaluation",
    "missing_actions": ["list of any missing actions"],
    "final_state_analysis": "description of current page state"
}}"""


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    actions: tuple[str, ...]
    success: bool
    error_message: str | None = None
    final_url: str = ""
    final_title: str = ""

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> Trajectory:
        allowed = {"task_id", "actions", "success", "error_message", "final_url", "final_title"}
        unknown = set(record) - allowed
        missing = {"task_id", "actions", "success"} - set(record)
        if unknown or missing:
            raise ValueError(f"trajectory record: unknown {sorted(unknown)}, missing {sorted(missing)}")
        if not isinstance(record["success"], bool):
            raise ValueError("trajectory success must be a boolean")
        return cls(
            record["task_id"],
            tuple(str(a) for a in record["actions"]),
            record["success"],
            record.get("error_message"),
            record.get("final_url", ""),
            record.get("final_title", ""),
        )


def load_trajectories(path: str | Path) -> dict[str, Trajectory]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            traj = Trajectory.from_dict(json.loads(line))
            out[traj.task_id] = traj
    return out


def answer_judge_prompt(task_prompt: str, gold_answer: str, pred_answer: str) -> str:
    return ANSWER_JUDGE_TEMPLATE.format(task_prompt=task_prompt, gold_answer=gold_answer, pred_answer=pred_answer)


def trajectory_judge_prompt(task: Task | None, trajectory: Trajectory, page_info: Mapping[str, str]) -> str:
    if task is not None and task.prompt:
        task_prompt = task.prompt
    else:
        task_prompt = f"Complete task: {trajectory.task_id if task is None else task.task_id}"
    return TRAJECTORY_JUDGE_TEMPLATE.format(
        task_prompt=task_prompt,
        action_count=len(trajectory.actions),
        success=trajectory.success,
        error_message=trajectory.error_message or "None",
        url=page_info.get("url", "Unknown"),
        title=page_info.get("title", "Unknown"),
        action_lines="\n".join(f"- {action or 'unknown'}" for action in trajectory.actions),
    )


# -- verdicts --------------------------------------------------------------------


def _unit(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number")
    if not 0.0 <= value <= 1.0:
        warnings.warn(f"judge score {name}={value} outside [0, 1], clamped", stacklevel=3)
    return min(1.0, max(0.0, float(value)))


@dataclass(frozen=True)
class JudgeVerdict:
    answer_quality: float
    relevance: float
    completeness: float

    @property
    def aggregate(self) -> float:
        return (self.answer_quality + self.relevance + self.completeness) / 3

    @classmethod
    def parse(cls, text: str) -> JudgeVerdict:
        data = parse_json_object(text)
        return cls(*(_unit(data[k], k) for k in ("answer_quality", "relevance", "completeness")))


@dataclass(frozen=True)
class TrajectoryVerdict:
    task_completed: bool
    confidence: float
    reasoning: str = ""
    missing_actions: tuple[str, ...] = ()
    final_state_analysis: str = ""

    @classmethod
    def parse(cls, text: str) -> TrajectoryVerdict:
        data = parse_json_object(text)
        if not isinstance(data["task_completed"], bool):
            raise ValueError("task_completed must be a boolean")
        missing = data.get("missing_actions", [])
        if not isinstance(missing, list):
            raise ValueError("missing_actions must be a list")
        return cls(
            data["task_completed"],
            _unit(data["confidence"], "confidence"),
            str(data.get("reasoning", "")),
            tuple(str(m) for m in missing),
            str(data.get("final_state_analysis", "")),
        )


def _ask_json(gateway, request: ChatRequest, purpose: str, parser):
    """One request plus one repair retry; returns None when both replies fail to parse."""
    for attempt in range(2):
        text = gateway.complete(request, purpose).text
        try:
            return parser(text)
        except (ValueError, KeyError, TypeError) as exc:
            logger.info("%s reply unparseable (attempt %d): %s", purpose, attempt + 1, exc)
            request = request.with_extra_user(JSON_RETRY_HINT)
    return None


def judge_answer(task: Task, pred: str, gateway) -> JudgeVerdict | None:
    if task.kind != "document" or task.gold_answer is None:
        raise ValueError("answer judging needs a document task with a gold answer")
    prompt = answer_judge_prompt(task.prompt, task.gold_answer, pred)
    return _ask_json(gateway, ChatRequest.user(prompt), "judge_answer", JudgeVerdict.parse)


def judge_trajectory(task: Task, trajectory: Trajectory, page_info: Mapping[str, str], gateway) -> TrajectoryVerdict | None:
    if task.kind != "web":
        raise ValueError("trajectory judging needs a web task")
    prompt = trajectory_judge_prompt(task, trajectory, page_info)
    return _ask_json(gateway, ChatRequest.user(prompt), "judge_trajectory", TrajectoryVerdict.parse)


def success_rate(verdicts: Sequence[TrajectoryVerdict | None]) -> float:
    """N_success / N_total over the verdicts that parsed."""
    judged = [v for v in verdicts if v is not None]
    if not judged:
        raise ValueError("success rate needs at least one parsed verdict")
    return sum(1 for v in judged if v.task_completed) / len(judged)


# -- reference agent ---------------------------------------------------------------


def chunk_index(graph: Graph) -> VectorIndex:
    index = VectorIndex(graph.dimension)
    for node in sorted(graph.nodes_of("SemanticChunk"), key=lambda n: n.id):
        index.add(node.id, node.embedding)
    return index


def run_reference_agent(task: Task, graph: Graph, gateway, top_k: int, embedder, index: VectorIndex | None = None) -> str:
    """Retrieve the top-k chunks for the task prompt and ask the gateway to answer."""
    index = index if index is not None else chunk_index(graph)
    if len(index) == 0:
        raise RetrievalError("the graph holds no chunks to retrieve from")
    hits = knn_query(index, embedder.embed(task.prompt), max(1, top_k))
    context = "\n".join(f"[{i}] {graph.node(nid).text}" for i, (nid, _) in enumerate(hits, start=1))
    prompt = (
        "Answer the question using only the numbered context passages.\n\n"
        f"CONTEXT:\n{context}\n\nQUESTION:\n{task.prompt}\n\nANSWER:"
    )
    return gateway.complete(ChatRequest.user(prompt), "answer").text.strip()


# -- evaluation report -------------------------------------------------------------


@dataclass
class EvalReport:
    rows: list[dict[str, Any]] = field(default_factory=list)
    usage: dict[str, int] = field(default_factory=dict)
    judge_aggregate: str = "mean"

    def aggregates(self) -> dict[str, Any]:
        def mean(key: str) -> float | None:
            values = [r[key] for r in self.rows if r.get(key) is not None]
            return sum(values) / len(values) if values else None

        key = "judge_aggregate" if self.judge_aggregate == "mean" else "answer_quality"
        web = [r for r in self.rows if r["kind"] == "web" and r.get("trajectory")]
        judged = [r for r in web if r.get("task_completed") is not None]
        return {
            "mean_token_f1": mean("token_f1"),
            "mean_rouge_l": mean("rouge_l"),
            "mean_judge": mean(key),
            "success_rate": (sum(1 for r in judged if r["task_completed"]) / len(judged)) if judged else None,
            "judge_missing": sum(1 for r in self.rows if r.get("judge_missing")),
            "agent_errors": sum(1 for r in self.rows if r.get("error")),
            "n_document": sum(1 for r in self.rows if r["kind"] == "document"),
            "n_web_judged": len(judged),
        }

    def to_dict(self) -> dict[str, Any]:
        return {"rows": self.rows, "aggregates": self.aggregates(), "usage": self.usage}

    def to_csv(self) -> str:
        columns = [
            "task_id", "kind", "task_type", "token_f1", "rouge_l", "answer_quality", "relevance",
            "completeness", "judge_aggregate", "task_completed", "confidence", "judge_missing", "error",
        ]
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({c: "" if row.get(c) is None else row.get(c) for c in columns})
        return buffer.getvalue()


def evaluate_tasks(
    tasks: Sequence[Task],
    graph: Graph,
    gateway,
    embedder,
    *,
    trajectories: Mapping[str, Trajectory] | None = None,
    top_k: int = 3,
    judge_aggregate: str = "mean",
    multiset_f1: bool = True,
) -> EvalReport:
    """Score document tasks with the reference agent and judge recorded web trajectories."""
    if judge_aggregate not in ("mean", "answer_quality"):
        raise ValueError("judge_aggregate must be 'mean' or 'answer_quality'")
    report = EvalReport(judge_aggregate=judge_aggregate)
    index = chunk_index(graph)
    trajectories = trajectories or {}
    for task in sorted(tasks, key=lambda t: t.task_id):
        row: dict[str, Any] = {"task_id": task.task_id, "kind": task.kind, "task_type": task.task_type}
        if task.kind == "document":
            try:
                answer = run_reference_agent(task, graph, gateway, top_k, embedder, index)
            except (GatewayError, RetrievalError) as exc:
                row["error"] = str(exc)
                report.rows.append(row)
                continue
            row["answer"] = answer
            row["token_f1"] = token_f1(answer, task.gold_answer or "", multiset=multiset_f1)
            row["rouge_l"] = rouge_l(answer, task.gold_answer or "")
            verdict = judge_answer(task, answer, gateway)
            if verdict is None:
                row["judge_missing"] = True
            else:
                row.update(asdict(verdict), judge_aggregate=verdict.aggregate)
        else:
            traj = trajectories.get(task.task_id)
            row["trajectory"] = traj is not None
            if traj is not None:
                page_info = {"url": traj.final_url or "Unknown", "title": traj.final_title or "Unknown"}
                verdict = judge_trajectory(task, traj, page_info, gateway)
                if verdict is None:
                    row["judge_missing"] = True
                else:
                    row["task_completed"] = verdict.task_completed
                    row["confidence"] = verdict.confidence
        report.rows.append(row)
    report.usage = gateway.usage.as_dict()
    return report
