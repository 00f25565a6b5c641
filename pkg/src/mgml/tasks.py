"""The 28-task prompt compiler.

Task definitions (templates, placeholder sets, output schemas) are data,
loaded from ``data/tasks.jsonl``; this module instantiates them against
samples, derives the auxiliary placeholders (head/tail/random motion
fragments, snippet-aligned time spans), and builds the two training-set
shapes: the uniform multi-task pretraining stream and per-task finetuning
lists.
"""

from __future__ import annotations

import hashlib
import json
import re
import zlib
from dataclasses import dataclass
from importlib import resources
from math import ceil
from random import Random
from typing import Iterable, Iterator

from .dataset import Sample
from .errors import ConfigError, SchemaError, TaskNotFoundError
from .motion import frames_per_snippet
from .script import (
    MotionScript, TimeSpan, format_time_span, script_window, serialize_script,
    span_for_snippets,
)
from .vocab import MOTION_CLOSE, MOTION_OPEN, motion_token_surface

PLACEHOLDER_NAMES = (
    "[caption]", "[motion]", "[motion script]", "[snippet motion script]",
    "[time]", "[head motion]", "[tail motion]", "[random motions]",
    "[snippet motion]",
)

#: Matches any unresolved template placeholder; instantiated prompts must not.
PLACEHOLDER_RE = re.compile(r"\[[a-z ']+\]")

_SPAN_PLACEHOLDERS = ("[time]", "[snippet motion]", "[snippet motion script]")

HEAD_TAIL_FRACTION = 0.25


@dataclass(frozen=True)
class OutputSchema:
    template: str
    motion_scope: str | None  # "full" | "span" for [motion] targets, else None


@dataclass(frozen=True)
class TaskSpec:
    name: str
    granularity: str
    input_types: tuple[str, ...]
    templates: tuple[str, ...]
    placeholders: tuple[str, ...]
    output: OutputSchema

    def __post_init__(self):
        for template in self.templates + (self.output.template,):
            for name in PLACEHOLDER_RE.findall(template):
                if name not in self.placeholders:
                    raise ValueError(f"{self.name}: template uses unregistered {name}")
        for name in self.placeholders:
            if not any(name in t for t in self.templates + (self.output.template,)):
                raise ValueError(f"{self.name}: placeholder {name} unused")

    @property
    def needs_span(self) -> bool:
        return any(p in self.placeholders for p in _SPAN_PLACEHOLDERS)

    @property
    def needs_caption(self) -> bool:
        return "[caption]" in self.placeholders


@dataclass(frozen=True)
class PromptPair:
    """One instantiated (input, target) instance of a task."""

    input_text: str
    target_text: str
    task: str
    motion_id: str
    template_index: int
    seed: int

    def __post_init__(self):
        if not self.target_text:
            raise SchemaError(f"{self.task} on {self.motion_id}: empty target")


def _load_registry() -> tuple[TaskSpec, ...]:
    text = resources.files("mgml").joinpath("data/tasks.jsonl").read_text("utf-8")
    specs = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        specs.append(TaskSpec(
            name=obj["name"],
            granularity=obj["granularity"],
            input_types=tuple(obj["input_types"]),
            templates=tuple(obj["templates"]),
            placeholders=tuple(obj["placeholders"]),
            output=OutputSchema(
                obj["output_schema"]["template"],
                obj["output_schema"]["motion_scope"],
            ),
        ))
    return tuple(specs)


_REGISTRY: tuple[TaskSpec, ...] = _load_registry()
_BY_NAME = {t.name: t for t in _REGISTRY}


def all_tasks() -> tuple[TaskSpec, ...]:
    return _REGISTRY


def get_task(name: str) -> TaskSpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise TaskNotFoundError(f"unknown task {name!r}") from None


def select_tasks(
    include: Iterable[str] | None = None, exclude: Iterable[str] | None = None
) -> tuple[TaskSpec, ...]:
    selected = [get_task(n) for n in include] if include else list(_REGISTRY)
    if exclude:
        drop = {get_task(n).name for n in exclude}
        selected = [t for t in selected if t.name not in drop]
    if not selected:
        raise ConfigError("task selection is empty")
    return tuple(selected)


def wrap_tokens_text(tokens: Iterable[int]) -> str:
    """Motion-token ids as wrapped surface text."""
    return MOTION_OPEN + "".join(motion_token_surface(t) for t in tokens) + MOTION_CLOSE


def _sample_span(rng: Random, sample: Sample) -> TimeSpan:
    """Uniform over all snippet-aligned spans of at least one snippet."""
    n = sample.grid.n_snippets
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n + 1)]
    i, j = pairs[rng.randrange(len(pairs))]
    return span_for_snippets(
        i, j, sample.grid.snippet_seconds, sample.motion.duration_seconds
    )


def span_token_range(sample: Sample, span: TimeSpan) -> tuple[int, int]:
    """Token index range covering a span: frame range divided by the downsample rate."""
    per = frames_per_snippet(sample.motion.fps, sample.grid.snippet_seconds)
    start_f = int(round(span.start_seconds / sample.grid.snippet_seconds)) * per
    end_f = min(ceil(span.end_seconds * sample.motion.fps - 1e-9), sample.motion.n_frames)
    l = sample.downsample
    start_t = start_f // l
    end_t = min(ceil(end_f / l), len(sample.tokens))
    return start_t, max(end_t, start_t + 1)


def _bindings(task: TaskSpec, sample: Sample, rng: Random, caption_index: int | None):
    """Placeholder values, drawn in a fixed order: caption, span, random tokens."""
    bindings: dict[str, str] = {}
    if task.needs_caption:
        if not sample.captions:
            raise SchemaError(f"{task.name}: sample {sample.id} has no captions")
        idx = rng.randrange(len(sample.captions)) if caption_index is None else caption_index
        bindings["[caption]"] = sample.captions[idx]
    span = _sample_span(rng, sample) if task.needs_span else None
    tokens = list(sample.tokens)
    if span is not None:
        lo, hi = span_token_range(sample, span)
        span_tokens = tokens[lo:hi]
        bindings["[time]"] = format_time_span(span)
        bindings["[snippet motion]"] = wrap_tokens_text(span_tokens)
        bindings["[snippet motion script]"] = serialize_script(
            script_window(sample.script, span)
        )
    # Conditioning fragments are drawn from the same range the target motion
    # covers: the sampled span for span-scope tasks, the whole motion otherwise.
    scope = span_tokens if (span is not None and task.output.motion_scope == "span") else tokens
    bindings["[motion]"] = wrap_tokens_text(scope)
    bindings["[motion script]"] = serialize_script(sample.script)
    n = len(scope)
    h = ceil(HEAD_TAIL_FRACTION * n)
    bindings["[head motion]"] = wrap_tokens_text(scope[:h])
    bindings["[tail motion]"] = wrap_tokens_text(scope[len(scope) - h:])
    if "[random motions]" in task.placeholders:
        k = rng.randint(1, max(1, n // 4))
        picks = sorted(rng.sample(range(n), min(k, n)))
        bindings["[random motions]"] = wrap_tokens_text(scope[i] for i in picks)
    return bindings


def derive_aux(
    sample: Sample, needs: Iterable[str], seed: int, scope: str = "full"
) -> dict[str, str]:
    """Bind the requested placeholders for one sample, deterministically per seed.

    ``scope="span"`` draws head/tail/random fragments from the sampled span
    rather than the whole token sequence (used when the target is a segment).
    """
    if len(sample.tokens) == 0:
        raise ValueError(f"sample {sample.id} has no tokens")
    needs = tuple(needs)
    fake = TaskSpec(
        name="derive_aux", granularity="fine", input_types=("text",),
        templates=(" ".join(needs) or "[motion]",),
        placeholders=needs or ("[motion]",),
        output=OutputSchema("x", "span" if scope == "span" else "full"),
    )
    bindings = _bindings(fake, sample, Random(seed), caption_index=None)
    return {k: v for k, v in bindings.items() if k in needs} if needs else bindings


def _substitute(template: str, bindings: dict[str, str], task: TaskSpec) -> str:
    text = template
    for name in PLACEHOLDER_NAMES:
        if name in text:
            if name not in bindings:
                raise SchemaError(f"{task.name}: no binding for {name}")
            text = text.replace(name, bindings[name])
    return text


def instantiate(
    task: TaskSpec,
    sample: Sample,
    seed: int,
    template_index: int | None = None,
    caption_index: int | None = None,
) -> PromptPair:
    """Fill one template of a task with values derived from a sample.

    A template is chosen uniformly unless pinned; all randomness comes from
    ``seed``, so equal calls produce byte-identical pairs.
    """
    rng = Random(seed)
    t_idx = rng.randrange(len(task.templates)) if template_index is None else template_index
    bindings = _bindings(task, sample, rng, caption_index)
    input_text = _substitute(task.templates[t_idx], bindings, task)
    target_text = _substitute(task.output.template, bindings, task)
    return PromptPair(
        input_text=input_text, target_text=target_text, task=task.name,
        motion_id=sample.id, template_index=t_idx, seed=seed,
    )


def render_template(
    task: TaskSpec, bindings: dict[str, str], template_index: int = 0
) -> str:
    """Fill one input template from explicit bindings (no sample needed)."""
    return _substitute(task.templates[template_index], bindings, task)


def _satisfies(sample: Sample, task: TaskSpec) -> bool:
    if task.needs_caption and not sample.captions:
        return False
    return len(sample.tokens) > 0


def pretrain_stream(
    samples: list[Sample],
    seed: int,
    tasks: Iterable[str] | None = None,
    exclude: Iterable[str] | None = None,
) -> Iterator[PromptPair]:
    """Infinite deterministic stream mixing tasks uniformly.

    Tasks are drawn uniformly (expected share 1/28 with the full registry);
    samples are drawn uniformly with reshuffling every epoch. Raises at
    construction if a selected task has no satisfying sample.
    """
    if not samples:
        raise ConfigError("pretrain stream needs a nonempty dataset")
    selected = select_tasks(tasks, exclude)
    for task in selected:
        if not any(_satisfies(s, task) for s in samples):
            raise ConfigError(f"no sample can satisfy task {task.name!r}")

    def stream() -> Iterator[PromptPair]:
        rng = Random(seed)
        order: list[int] = []
        while True:
            task = selected[rng.randrange(len(selected))]
            if not order:
                order = list(range(len(samples)))
                rng.shuffle(order)
            sample = samples[order.pop()]
            if not _satisfies(sample, task):
                pool = [s for s in samples if _satisfies(s, task)]
                sample = pool[rng.randrange(len(pool))]
            yield instantiate(task, sample, seed=rng.getrandbits(32))

    return stream()


def _stable_seed(*parts) -> int:
    return zlib.crc32("/".join(str(p) for p in parts).encode("utf-8"))


def finetune_set(
    samples: list[Sample], task_name: str, epoch: int = 0, seed: int = 0
) -> list[PromptPair]:
    """One epoch of task-specific instruction data.

    Every (sample x applicable caption) pair appears exactly once, ordered by
    (motion id, caption index), with the template rotating per epoch.
    """
    task = get_task(task_name)
    pairs: list[PromptPair] = []
    for sample in sorted(samples, key=lambda s: s.id):
        if not _satisfies(sample, task):
            continue
        caption_indices = range(len(sample.captions)) if task.needs_caption else (None,)
        for c_idx in caption_indices:
            base = _stable_seed(task.name, sample.id, c_idx)
            pairs.append(instantiate(
                task, sample,
                seed=_stable_seed(seed, epoch, task.name, sample.id, c_idx),
                template_index=(base + epoch) % len(task.templates),
                caption_index=c_idx,
            ))
    return pairs


def task_mix_hash(task_names: Iterable[str]) -> str:
    joined = ",".join(sorted(task_names))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:12]


_BLOCK_RE = re.compile(r"### (.+?) ###")


def split_framed_blocks(text: str) -> tuple[str, list[tuple[str, str]]]:
    """Split prompt text into (preamble, [(block name, block body), ...])."""
    matches = list(_BLOCK_RE.finditer(text))
    if not matches:
        return text.strip(), []
    preamble = text[:matches[0].start()].strip()
    blocks = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        blocks.append((m.group(1), text[m.end():end].strip()))
    return preamble, blocks
