"""Parse model responses into requirement vectors.

Stage 1 (``bracket``): scan the whole response for bracket groups.  A group
qualifies if, after splitting its interior on whitespace/commas, it holds
exactly 8 tokens that are all ``0`` or ``1``.  The LAST qualifying group wins,
because models that restate the format instruction or think out loud tend to
put the real answer at the end.

Stage 2 (``step_fallback``): if no bracket group qualifies, look for lines of
the form ``Step k: ...`` (case-insensitive, tolerating leading quote/list
markup) and read a Yes/No off the front of each remainder.  All 8 steps must
appear exactly once with a readable Yes/No.

Anything else is a parse failure with one of four reasons:
``no_bracket_no_steps``, ``missing_step(k)``, ``duplicate_step``,
``ambiguous_step(k)`` - checked per step in ascending k.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .dataset import N_QUESTIONS, RequirementVector

METHOD_BRACKET = "bracket"
METHOD_STEP_FALLBACK = "step_fallback"

_GROUP_RE = re.compile(r"\[([^\[\]]*)\]")
_TOKEN_SEP_RE = re.compile(r"[\s,]+")
# Leading markup tolerated before "Step": whitespace, quotes, list markers.
_STEP_LINE_RE = re.compile(r"""^[\s"'*\-]*step\s*(\d+)\s*:(.*)$""", re.IGNORECASE)
# Yes/No may be wrapped in light punctuation but must be the first word.
_ANSWER_RE = re.compile(r"""^[\s"'*\-:.,()\[\]]*(yes|no)\b""", re.IGNORECASE)


@dataclass(frozen=True, slots=True)
class ParseOutcome:
    """Either a parsed vector with the method that produced it, or a failure reason."""

    vector: RequirementVector | None
    method: str | None  # METHOD_BRACKET or METHOD_STEP_FALLBACK
    failure_reason: str | None

    def __post_init__(self) -> None:
        parsed = self.vector is not None and self.method is not None
        failed = self.failure_reason is not None
        if parsed == failed:
            raise ValueError("outcome must have exactly one of (vector, method) or failure_reason")
        if parsed and self.method not in (METHOD_BRACKET, METHOD_STEP_FALLBACK):
            raise ValueError(f"unknown parse method {self.method!r}")

    @property
    def ok(self) -> bool:
        return self.vector is not None

    @classmethod
    def success(cls, vector: RequirementVector, method: str) -> "ParseOutcome":
        return cls(vector=vector, method=method, failure_reason=None)

    @classmethod
    def failure(cls, reason: str) -> "ParseOutcome":
        return cls(vector=None, method=None, failure_reason=reason)


def _find_bracket_vector(text: str) -> RequirementVector | None:
    last: RequirementVector | None = None
    for match in _GROUP_RE.finditer(text):
        tokens = [t for t in _TOKEN_SEP_RE.split(match.group(1).strip()) if t]
        if len(tokens) == N_QUESTIONS and all(t in ("0", "1") for t in tokens):
            last = RequirementVector(tuple(t == "1" for t in tokens))
    return last


def _step_fallback(text: str) -> ParseOutcome:
    # answers[k] collects every Step-k line; None marks a line with no Yes/No
    answers: dict[int, list[bool | None]] = {}
    for line in text.splitlines():
        match = _STEP_LINE_RE.match(line)
        if not match:
            continue
        k = int(match.group(1))
        if not 1 <= k <= N_QUESTIONS:
            continue
        word = _ANSWER_RE.match(match.group(2))
        answers.setdefault(k, []).append(
            word.group(1).lower() == "yes" if word else None
        )
    if not answers:
        return ParseOutcome.failure("no_bracket_no_steps")
    flags: list[bool] = []
    for k in range(1, N_QUESTIONS + 1):
        found = answers.get(k)
        if found is None:
            return ParseOutcome.failure(f"missing_step({k})")
        if len(found) > 1:
            return ParseOutcome.failure("duplicate_step")
        if found[0] is None:
            return ParseOutcome.failure(f"ambiguous_step({k})")
        flags.append(found[0])
    return ParseOutcome.success(RequirementVector(tuple(flags)), METHOD_STEP_FALLBACK)


def parse_response(text: str) -> ParseOutcome:
    """Parse a raw model response; never raises on bad input."""
    vector = _find_bracket_vector(text)
    if vector is not None:
        return ParseOutcome.success(vector, METHOD_BRACKET)
    return _step_fallback(text)
