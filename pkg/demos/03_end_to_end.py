"""Run every stage into a scratch workspace and show a few generated tasks.

Run with ``python3 demos/03_end_to_end.py``. This is the same work as
``kgtaskgen run-all --seed 7``. The language model is the deterministic mock
gateway, so two runs print the same tasks.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from kgtaskgen.pipeline import build_config, read_tasks, run_pipeline


def main() -> None:
    with tempfile.TemporaryDirectory() as ws:
        report = run_pipeline(build_config({"seed": 7}), ws)
        print("selected tasks:", report["tasks"]["selected"])
        print("tasks per source:", report["tasks_per_source"])

        tasks = read_tasks(Path(ws) / "tasks.jsonl")
        doc = next(t for t in tasks if t.kind == "document")
        web = next(t for t in tasks if t.kind == "web")
        print(f"\n[{doc.task_type}, {doc.difficulty}] {doc.prompt}")
        print(f"  gold: {doc.gold_answer}")
        print(f"  cites: {doc.citations}")
        print(f"\n[{web.task_type}, {web.difficulty}] {web.prompt}")
        for step in web.web_steps:
            print(f"  {step.index}. {step.action:<9} {step.target_selector} {step.value or ''}")

        evaluation = json.loads((Path(ws) / "eval" / "report.json").read_text())
        print("\nevaluation aggregates:", json.dumps(evaluation.get("aggregates", evaluation), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
