"""Prefix-based refusal filter for generator outputs."""

from __future__ import annotations

DEFAULT_REFUSAL_PREFIXES = (
    "I'm sorry",
    "I am sorry",
    "I cannot",
    "As an AI",
)


def _normalize(text: str) -> str:
    # Curly apostrophes from chat models compare equal to straight ones.
    return text.replace("’", "'").casefold().lstrip()


def is_refusal(text: str, prefixes: tuple[str, ...] = DEFAULT_REFUSAL_PREFIXES) -> bool:
    """True iff the leading non-whitespace of ``text`` matches a refusal
    prefix, case-insensitively. Strictly prefix-based: content after a
    non-matching opening never flips the verdict."""
    lead = _normalize(text)
    return any(lead.startswith(_normalize(p)) for p in prefixes)
