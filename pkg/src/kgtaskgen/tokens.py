"""The one tokenizer used for chunk budgets, metrics and mock similarity."""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and return its maximal alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


def token_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of the tokens in ``text`` (same rule as :func:`tokenize`)."""
    return [m.span() for m in _TOKEN_RE.finditer(text.lower())]


def count_tokens(text: str) -> int:
    return len(tokenize(text))
