"""Lenient-but-bounded JSON extraction from model output."""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any

_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)


def strip_fences(text: str) -> str:
    match = _FENCE.match(text)
    return match.group(1) if match else text


def parse_json_object(text: str) -> dict[str, Any]:
    """Parse a JSON object, tolerating one surrounding markdown code fence."""
    data = json.loads(strip_fences(text).strip())
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    return data


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(value: Any, length: int = 16) -> str:
    payload = value if isinstance(value, str) else canonical_json(value)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:length]
