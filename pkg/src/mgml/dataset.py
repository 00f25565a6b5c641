"""Dataset manifests, sample assembly, and synthetic corpus construction.

A manifest is line-delimited JSON, one record per motion:
``{id, motion_path, captions: [...], script: [one string per snippet], split}``.
Motion paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from random import Random

from .errors import DataFormatError
from .motion import (
    DEFAULT_SNIPPET_SECONDS, MotionSequence, SnippetGrid, make_snippet_grid,
    read_motion, write_motion,
)
from .quantizer import MotionQuantizer, encode_motion
from .script import MotionScript
from .synth import captions_for, random_spec, script_for, synth_motion

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class MotionRecord:
    id: str
    motion_path: str
    captions: tuple[str, ...]
    script: tuple[str, ...]
    split: str


def write_manifest(path, records: list[MotionRecord]) -> None:
    lines = [
        json.dumps({
            "id": r.id, "motion_path": r.motion_path,
            "captions": list(r.captions), "script": list(r.script), "split": r.split,
        }, ensure_ascii=False)
        for r in records
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[MotionRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(MotionRecord(
                id=obj["id"], motion_path=obj["motion_path"],
                captions=tuple(obj["captions"]), script=tuple(obj["script"]),
                split=obj["split"],
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataFormatError(f"bad manifest record at {path}:{lineno}: {exc}") from exc
    return records


@dataclass(frozen=True)
class Sample:
    """One motion with everything the prompt compiler needs.

    ``tokens`` always equals ``encode_motion`` of the sequence under the frozen
    quantizer, and the script length matches the snippet grid.
    """

    id: str
    motion: MotionSequence
    tokens: tuple[int, ...]
    captions: tuple[str, ...]
    script: MotionScript
    grid: SnippetGrid
    downsample: int

    def __post_init__(self):
        if self.script.n_snippets != self.grid.n_snippets:
            raise ValueError(
                f"sample {self.id}: script has {self.script.n_snippets} snippets, "
                f"grid has {self.grid.n_snippets}"
            )
        if len(self.tokens) == 0:
            raise ValueError(f"sample {self.id} has no motion tokens")


def build_sample(
    record: MotionRecord,
    quantizer: MotionQuantizer,
    base_dir,
    snippet_seconds: float = DEFAULT_SNIPPET_SECONDS,
) -> Sample:
    motion = read_motion(Path(base_dir) / record.motion_path)
    grid = make_snippet_grid(motion, snippet_seconds)
    script = MotionScript(record.script, snippet_seconds, motion.fps)
    tokens = tuple(encode_motion(motion, quantizer))
    return Sample(
        id=record.id, motion=motion, tokens=tokens, captions=record.captions,
        script=script, grid=grid, downsample=quantizer.config.downsample,
    )


def load_samples(
    manifest_path,
    quantizer: MotionQuantizer,
    split: str | None = None,
    snippet_seconds: float = DEFAULT_SNIPPET_SECONDS,
) -> list[Sample]:
    base = Path(manifest_path).parent
    records = read_manifest(manifest_path)
    if split is not None:
        records = [r for r in records if r.split == split]
    return [build_sample(r, quantizer, base, snippet_seconds) for r in records]


def load_motions(manifest_path, split: str | None = None) -> list[MotionSequence]:
    base = Path(manifest_path).parent
    records = read_manifest(manifest_path)
    if split is not None:
        records = [r for r in records if r.split == split]
    return [read_motion(base / r.motion_path) for r in records]


def build_synth_corpus(
    out_dir,
    n_motions: int = 200,
    seed: int = 0,
    min_snippets: int = 2,
    max_snippets: int = 8,
    fps: int = 20,
    snippet_seconds: float = DEFAULT_SNIPPET_SECONDS,
    n_captions: int = 3,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
    max_event_snippets: int = 1,
) -> Path:
    """Write a synthetic corpus (motion files + manifest) and return the manifest path.

    Splits are assigned by index: the first (1 - val - test) fraction is
    train, then val, then test. Deterministic for a fixed seed.
    """
    out = Path(out_dir)
    (out / "motions").mkdir(parents=True, exist_ok=True)
    rng = Random(seed)
    n_train = int(n_motions * (1 - val_fraction - test_fraction))
    n_val = int(n_motions * val_fraction)
    records = []
    for i in range(n_motions):
        spec = random_spec(
            rng, min_snippets=min_snippets, max_snippets=max_snippets,
            seed=seed + i, fps=fps, snippet_seconds=snippet_seconds,
            max_event_snippets=max_event_snippets,
        )
        motion, _ = synth_motion(spec)
        script = script_for(spec)
        rel = f"motions/m{i:05d}.mgm"
        write_motion(out / rel, motion)
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        records.append(MotionRecord(
            id=f"m{i:05d}", motion_path=rel,
            captions=tuple(captions_for(spec, n_captions)),
            script=tuple(script.snippets), split=split,
        ))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest
