"""Motion sequences, the fixed-interval snippet grid, slicing, and binary I/O.

A motion is a ``T x d`` matrix of normalized real features at a fixed frame
rate. The snippet grid cuts it into fixed-duration segments (default 0.5 s);
the last snippet keeps the remainder and is never dropped, so the number of
snippets is always ``ceil(T / frames_per_snippet)``.

Motion file format (little-endian): magic ``MGM1``, u32 fps, u32 T, u32 d,
then ``T * d`` float32 features in row-major order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .script import TimeSpan, span_snippet_range

MOTION_MAGIC = b"MGM1"

DEFAULT_FPS = 20
DEFAULT_MAX_FRAMES = 196
DEFAULT_SNIPPET_SECONDS = 0.5

_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class MotionSequence:
    """Immutable ``T x d`` float32 feature matrix at ``fps`` frames per second."""

    frames: np.ndarray
    fps: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be a T x d matrix with T, d >= 1, got {frames.shape}")
        if int(self.fps) < 1:
            raise ValueError(f"fps must be a positive integer, got {self.fps}")
        if not np.isfinite(frames).all():
            raise ValueError("motion features must be finite")
        frames = frames.copy()
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", int(self.fps))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_frames / self.fps


@dataclass(frozen=True)
class SnippetGrid:
    """Contiguous, non-overlapping [start, end) frame ranges covering a motion."""

    snippet_seconds: float
    boundaries: tuple[tuple[int, int], ...]

    @property
    def n_snippets(self) -> int:
        return len(self.boundaries)

    @property
    def n_frames(self) -> int:
        return self.boundaries[-1][1]


def frames_per_snippet(fps: int, snippet_seconds: float) -> int:
    return int(round(snippet_seconds * fps))


def make_snippet_grid(
    motion: MotionSequence, snippet_seconds: float = DEFAULT_SNIPPET_SECONDS
) -> SnippetGrid:
    """Cut ``motion`` into fixed-interval snippets; the last keeps the remainder."""
    if snippet_seconds <= 0:
        raise ValueError(f"snippet_seconds must be positive, got {snippet_seconds}")
    per = frames_per_snippet(motion.fps, snippet_seconds)
    if per < 1:
        raise ValueError(
            f"snippet of {snippet_seconds}s covers no frame at {motion.fps} fps"
        )
    t = motion.n_frames
    boundaries = tuple(
        (start, min(start + per, t)) for start in range(0, t, per)
    )
    return SnippetGrid(snippet_seconds, boundaries)


def n_snippets_for(n_frames: int, fps: int, snippet_seconds: float) -> int:
    return math.ceil(n_frames / frames_per_snippet(fps, snippet_seconds))


def slice_motion(
    motion: MotionSequence,
    span: TimeSpan,
    snippet_seconds: float = DEFAULT_SNIPPET_SECONDS,
    clip: bool = False,
) -> MotionSequence:
    """Return the frames of the snippets covered by a boundary-snapped span.

    ``clip=True`` clips a span end past the motion end instead of rejecting it
    (used for spans produced by generation; user-supplied spans stay strict).
    """
    duration = motion.duration_seconds
    if clip and span.end_seconds > duration:
        span = TimeSpan(span.start_seconds, duration)
    if span.end_seconds > duration + 1e-9:
        raise ValueError(
            f"span [{span.start_seconds}, {span.end_seconds}) exceeds the "
            f"{duration:.3f}s motion"
        )
    grid = make_snippet_grid(motion, snippet_seconds)
    first, last = span_snippet_range(span, snippet_seconds, grid.n_snippets)
    start_f = grid.boundaries[first][0]
    end_f = grid.boundaries[last - 1][1]
    return MotionSequence(motion.frames[start_f:end_f], motion.fps)


def write_motion(path: str | Path, motion: MotionSequence) -> None:
    payload = np.ascontiguousarray(motion.frames, dtype="<f4").tobytes()
    header = _HEADER.pack(MOTION_MAGIC, motion.fps, motion.n_frames, motion.dim)
    Path(path).write_bytes(header + payload)


def read_motion(path: str | Path) -> MotionSequence:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(f"truncated header in {path}", offset=len(data))
    magic, fps, t, d = _HEADER.unpack_from(data)
    if magic != MOTION_MAGIC:
        raise DataFormatError(f"bad magic {magic!r} in {path}, expected {MOTION_MAGIC!r}", offset=0)
    if fps < 1:
        raise DataFormatError(f"fps must be >= 1, got {fps}", offset=4)
    if t < 1:
        raise DataFormatError(f"frame count must be >= 1, got {t}", offset=8)
    if d < 1:
        raise DataFormatError(f"feature dimension must be >= 1, got {d}", offset=12)
    expected = _HEADER.size + t * d * 4
    if len(data) != expected:
        raise DataFormatError(
            f"truncated payload in {path}: header claims {t}x{d} frames "
            f"({expected} bytes), file holds {len(data)}",
            offset=min(len(data), expected),
        )
    frames = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(t, d)
    finite = np.isfinite(frames)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise DataFormatError(
            f"non-finite feature value in {path}", offset=_HEADER.size + bad * 4
        )
    return MotionSequence(frames, fps)
