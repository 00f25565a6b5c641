"""Motion scripts and the time-span grammar.

A motion script holds one body-part-movement statement per snippet of a
motion. On the wire the statements are joined by ``<SEP>`` and empty
statements are written as ``<Motionless>``. Time spans are snippet-aligned
intervals printed canonically as ``from {a}s to {b}s`` with one decimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DataFormatError, Diagnostic

SEP = "<SEP>"
MOTIONLESS = "<Motionless>"

#: Substrings that must never appear inside a snippet statement: the snippet
#: separator and the prompt block frame.
RESERVED_IN_STATEMENTS = (SEP, "###")

_SNAP_TOL = 1e-6


@dataclass(frozen=True)
class TimeSpan:
    """Half-open interval in seconds, ``0 <= start < end``."""

    start_seconds: float
    end_seconds: float

    def __post_init__(self):
        if not (0.0 <= self.start_seconds < self.end_seconds):
            raise ValueError(
                f"invalid time span [{self.start_seconds}, {self.end_seconds}): "
                "need 0 <= start < end"
            )

    @property
    def duration(self) -> float:
        return self.end_seconds - self.start_seconds


def format_time_span(span: TimeSpan) -> str:
    """Render a span in the canonical one-decimal surface form."""
    return f"from {span.start_seconds:.1f}s to {span.end_seconds:.1f}s"


class TimeParseError(DataFormatError):
    """Non-canonical time-span text; ``offset`` is the character position."""


def parse_time_span(text: str) -> TimeSpan:
    """Parse the canonical ``from {a}s to {b}s`` form (and nothing else)."""
    pos = 0

    def expect(literal: str):
        nonlocal pos
        if not text.startswith(literal, pos):
            raise TimeParseError(f"expected {literal!r} in time span {text!r}", offset=pos)
        pos += len(literal)

    def number() -> float:
        nonlocal pos
        start = pos
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        if pos == start or pos >= len(text) or text[pos] != ".":
            raise TimeParseError(f"expected '<digits>.<digit>' in time span {text!r}", offset=start)
        pos += 1
        if pos >= len(text) or not text[pos].isdigit():
            raise TimeParseError(f"expected one decimal digit in time span {text!r}", offset=pos)
        pos += 1
        return float(text[start:pos])

    expect("from ")
    start_s = number()
    expect("s to ")
    end_pos = pos
    end_s = number()
    expect("s")
    if pos != len(text):
        raise TimeParseError(f"trailing characters in time span {text!r}", offset=pos)
    if start_s >= end_s:
        raise TimeParseError(f"start >= end in time span {text!r}", offset=end_pos)
    return TimeSpan(start_s, end_s)


@dataclass(frozen=True)
class MotionScript:
    """Per-snippet statements for one motion.

    Statements are stored verbatim (trimmed); an empty string means a
    motionless snippet. ``snippet_seconds`` and ``fps`` record the grid the
    script was written against.
    """

    snippets: tuple[str, ...]
    snippet_seconds: float = 0.5
    fps: int = 20

    def __post_init__(self):
        if len(self.snippets) < 1:
            raise ValueError("a motion script needs at least one snippet")
        if self.snippet_seconds <= 0:
            raise ValueError("snippet_seconds must be positive")
        object.__setattr__(self, "snippets", tuple(self.snippets))

    @property
    def n_snippets(self) -> int:
        return len(self.snippets)

    @property
    def duration_seconds(self) -> float:
        return self.n_snippets * self.snippet_seconds


def serialize_script(script: MotionScript) -> str:
    """Join statements with ``<SEP>``, writing empties as ``<Motionless>``.

    n snippets produce exactly n-1 separators and no framing header.
    """
    for i, statement in enumerate(script.snippets):
        for reserved in RESERVED_IN_STATEMENTS:
            if reserved in statement:
                raise ValueError(
                    f"snippet {i} contains reserved token {reserved!r}: {statement!r}"
                )
    return SEP.join(s if s else MOTIONLESS for s in script.snippets)


def parse_script(
    text: str, snippet_seconds: float = 0.5, fps: int = 20
) -> tuple[MotionScript, list[Diagnostic]]:
    """Inverse of :func:`serialize_script`, tolerant of model output.

    Never raises on content: anomalies (bare empty segments, trailing
    separators) become empty snippets plus diagnostics. Whitespace around
    separators is trimmed.
    """
    diagnostics: list[Diagnostic] = []
    segments = text.split(SEP)
    snippets: list[str] = []
    for i, segment in enumerate(segments):
        segment = segment.strip()
        if segment == MOTIONLESS:
            snippets.append("")
        elif segment == "":
            if i == len(segments) - 1 and len(segments) > 1:
                diagnostics.append(Diagnostic("trailing separator", i))
            else:
                diagnostics.append(Diagnostic("bare empty segment (expected <Motionless>)", i))
            snippets.append("")
        else:
            snippets.append(segment)
    return MotionScript(tuple(snippets), snippet_seconds, fps), diagnostics


def span_snippet_range(span: TimeSpan, snippet_seconds: float, n_snippets: int) -> tuple[int, int]:
    """Map a boundary-snapped span to the half-open snippet index range it covers.

    The end may be clipped (not a boundary multiple) only inside the last
    snippet, which is how spans reaching a partial final snippet are written.
    """
    start_idx = span.start_seconds / snippet_seconds
    if abs(start_idx - round(start_idx)) > _SNAP_TOL:
        raise ValueError(f"span start {span.start_seconds} is not snippet-aligned")
    start = int(round(start_idx))
    end_idx = span.end_seconds / snippet_seconds
    if abs(end_idx - round(end_idx)) <= _SNAP_TOL:
        end = int(round(end_idx))
    else:
        end = math.ceil(end_idx - _SNAP_TOL)
        if end != n_snippets:
            raise ValueError(
                f"span end {span.end_seconds} is neither snippet-aligned nor at the motion end"
            )
    if not (0 <= start < end <= n_snippets):
        raise ValueError(
            f"span [{span.start_seconds}, {span.end_seconds}) is outside the "
            f"{n_snippets}-snippet range"
        )
    return start, end


def script_window(script: MotionScript, span: TimeSpan) -> MotionScript:
    """Return the sub-script of the snippets fully covered by ``span``."""
    start, end = span_snippet_range(span, script.snippet_seconds, script.n_snippets)
    return MotionScript(script.snippets[start:end], script.snippet_seconds, script.fps)


def span_for_snippets(start: int, end: int, snippet_seconds: float,
                      duration_seconds: float | None = None) -> TimeSpan:
    """Span covering snippets [start, end); the end clips to ``duration_seconds``."""
    end_s = end * snippet_seconds
    if duration_seconds is not None:
        end_s = min(end_s, duration_seconds)
    return TimeSpan(start * snippet_seconds, end_s)
