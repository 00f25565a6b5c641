"""Procedural synthetic motions with known per-snippet ground truth.

Each motion is a sequence of events on named body-part channels. An event
ramps one channel linearly from 0 to ``direction * amplitude`` over a whole
number of snippets; outside its events a channel sits at 0, so an edit to one
snippet's event can only change that snippet's channels. Every event carries a
canonical "verb + body part + direction" statement, which makes the generator
an exact oracle for motion scripts, localization spans, and captions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from random import Random

import numpy as np

from .motion import MotionSequence, frames_per_snippet
from .script import MotionScript


@dataclass(frozen=True)
class Channel:
    """One body-part channel with its statement/caption phrases per direction."""

    name: str
    statements: tuple[str, str]      # imperative, (positive, negative) direction
    caption_clauses: tuple[str, str]  # third person, same order


# Default 8-channel layout: two channels per limb group plus root x/y.
# All statements are exactly five words in "verb + body part + direction" form.
DEFAULT_CHANNELS: tuple[Channel, ...] = (
    Channel("left arm",
            ("raise your left arm upward", "lower your left arm downward"),
            ("raises the left arm upward", "lowers the left arm downward")),
    Channel("right arm",
            ("raise your right arm upward", "lower your right arm downward"),
            ("raises the right arm upward", "lowers the right arm downward")),
    Channel("left leg",
            ("swing your left leg forward", "swing your left leg backward"),
            ("swings the left leg forward", "swings the left leg backward")),
    Channel("right leg",
            ("swing your right leg forward", "swing your right leg backward"),
            ("swings the right leg forward", "swings the right leg backward")),
    Channel("upper body",
            ("lean your upper body forward", "lean your upper body backward"),
            ("leans the upper body forward", "leans the upper body backward")),
    Channel("head",
            ("turn your head left slowly", "turn your head right slowly"),
            ("turns the head left slowly", "turns the head right slowly")),
    Channel("root x",
            ("slide your whole body left", "slide your whole body right"),
            ("slides the whole body left", "slides the whole body right")),
    Channel("root y",
            ("move your whole body forward", "move your whole body backward"),
            ("moves the whole body forward", "moves the whole body backward")),
)

CAPTION_PREFIXES = ("a person", "someone", "the person")


@dataclass(frozen=True)
class MotionEvent:
    """One primitive: a channel moving one direction for whole snippets.

    ``channel=None`` is stillness (no statement, channels stay flat).
    """

    channel: str | None
    direction: int
    snippets: int

    def __post_init__(self):
        if self.snippets < 1:
            raise ValueError("an event must span at least one whole snippet")
        if self.channel is not None and self.direction not in (-1, 1):
            raise ValueError(f"direction must be -1 or +1, got {self.direction}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic recipe for one synthetic motion."""

    events: tuple[MotionEvent, ...]
    seed: int = 0
    fps: int = 20
    snippet_seconds: float = 0.5
    amplitude: float = 1.0
    channels: tuple[Channel, ...] = DEFAULT_CHANNELS

    def __post_init__(self):
        names = {c.name for c in self.channels}
        for event in self.events:
            if event.channel is not None and event.channel not in names:
                raise ValueError(f"unknown channel {event.channel!r}")
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def n_snippets(self) -> int:
        return sum(e.snippets for e in self.events)

    @property
    def dim(self) -> int:
        return len(self.channels)

    def channel_index(self, name: str) -> int:
        for i, c in enumerate(self.channels):
            if c.name == name:
                return i
        raise KeyError(name)


def statement_for(channel: Channel, direction: int) -> str:
    return channel.statements[0 if direction > 0 else 1]


def _channel_by_name(channels: tuple[Channel, ...], name: str) -> Channel:
    for c in channels:
        if c.name == name:
            return c
    raise KeyError(name)


def synth_motion(spec: SyntheticSpec) -> tuple[MotionSequence, tuple[tuple[str, ...], ...]]:
    """Render a spec into frames plus per-snippet ground-truth statement lists.

    Each channel ramps linearly 0 -> direction over its event's frames and is 0
    elsewhere, so a snippet's statement list is nonempty exactly when an event
    overlaps it. Bit-identical output for equal specs.
    """
    if spec.n_snippets < 1:
        raise ValueError("spec renders no snippet: add events or stillness")
    per = frames_per_snippet(spec.fps, spec.snippet_seconds)
    total_frames = spec.n_snippets * per
    frames = np.zeros((total_frames, spec.dim), dtype=np.float32)
    statements: list[tuple[str, ...]] = [() for _ in range(spec.n_snippets)]
    cursor = 0
    for event in spec.events:
        if event.channel is not None:
            channel = _channel_by_name(spec.channels, event.channel)
            col = spec.channel_index(event.channel)
            n = event.snippets * per
            ramp = event.direction * spec.amplitude * np.arange(1, n + 1, dtype=np.float32) / n
            frames[cursor * per:cursor * per + n, col] = ramp
            for s in range(cursor, cursor + event.snippets):
                statements[s] = statements[s] + (statement_for(channel, event.direction),)
        cursor += event.snippets
    return MotionSequence(frames, spec.fps), tuple(statements)


def script_for(spec: SyntheticSpec) -> MotionScript:
    """Ground-truth motion script of a spec (one pre-joined string per snippet)."""
    _, statements = synth_motion(spec)
    return MotionScript(
        tuple(" and ".join(s) for s in statements), spec.snippet_seconds, spec.fps
    )


def caption_for(spec: SyntheticSpec, variant: int = 0) -> str:
    """One-sentence summary of the spec's events, in temporal order."""
    clauses = []
    for event in spec.events:
        if event.channel is None:
            continue
        channel = _channel_by_name(spec.channels, event.channel)
        clauses.append(channel.caption_clauses[0 if event.direction > 0 else 1])
    prefix = CAPTION_PREFIXES[variant % len(CAPTION_PREFIXES)]
    if not clauses:
        return f"{prefix} stays still"
    return f"{prefix} " + " then ".join(clauses)


def captions_for(spec: SyntheticSpec, n: int = 3) -> list[str]:
    return [caption_for(spec, v) for v in range(n)]


def parse_statement(spec: SyntheticSpec, statement: str) -> tuple[str, int] | None:
    """Reverse lookup of a canonical statement to (channel name, direction)."""
    for channel in spec.channels:
        for d, phrase in zip((1, -1), channel.statements):
            if statement == phrase:
                return channel.name, d
    return None


def edit_spec_statement(spec: SyntheticSpec, snippet_index: int, statement: str) -> SyntheticSpec:
    """Replace the event at one snippet with the event the statement names.

    Only single-snippet events can be edited this way; an empty statement
    turns the snippet into stillness.
    """
    if not (0 <= snippet_index < spec.n_snippets):
        raise ValueError(f"snippet index {snippet_index} out of range")
    cursor = 0
    events = list(spec.events)
    for i, event in enumerate(events):
        if cursor <= snippet_index < cursor + event.snippets:
            if event.snippets != 1:
                raise ValueError(
                    f"snippet {snippet_index} belongs to a {event.snippets}-snippet "
                    "event; only single-snippet events are editable"
                )
            if statement == "":
                events[i] = MotionEvent(None, 1, 1)
            else:
                parsed = parse_statement(spec, statement)
                if parsed is None:
                    raise ValueError(f"unknown statement {statement!r}")
                events[i] = MotionEvent(parsed[0], parsed[1], 1)
            return replace(spec, events=tuple(events))
        cursor += event.snippets
    raise AssertionError("unreachable")


def random_spec(
    rng: Random,
    min_snippets: int = 2,
    max_snippets: int = 8,
    seed: int = 0,
    channels: tuple[Channel, ...] = DEFAULT_CHANNELS,
    fps: int = 20,
    snippet_seconds: float = 0.5,
    stillness_prob: float = 0.0,
    max_event_snippets: int = 1,
) -> SyntheticSpec:
    """Draw a spec whose (channel, direction) statements are unique within it."""
    n_snippets = rng.randint(min_snippets, max_snippets)
    moves = [(c.name, d) for c in channels for d in (1, -1)]
    rng.shuffle(moves)
    events: list[MotionEvent] = []
    used = 0
    while used < n_snippets:
        span = min(rng.randint(1, max_event_snippets), n_snippets - used)
        if stillness_prob > 0 and rng.random() < stillness_prob:
            events.append(MotionEvent(None, 1, span))
        else:
            if not moves:
                events.append(MotionEvent(None, 1, span))
            else:
                name, d = moves.pop()
                events.append(MotionEvent(name, d, span))
        used += span
    return SyntheticSpec(
        tuple(events), seed=seed, fps=fps,
        snippet_seconds=snippet_seconds, channels=channels,
    )
