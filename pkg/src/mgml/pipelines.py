"""Run configuration and the end-to-end pipelines.

Four workflows live here: the two-stage language-model training (uniform
multi-task pretraining, then task-specific tuning with early stopping), the
evaluation suites, the fine-grained edit round-trip, and synthetic-corpus /
vocabulary management. Every run resolves a flat :class:`RunConfig`, embeds
its hash in outputs, and is bit-deterministic for a fixed (config, seed) on
one machine.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

import numpy as np
import torch

from . import quantizer as quant
from .dataset import Sample, build_synth_corpus, load_samples, read_manifest
from .embedding import EmbeddingOracle, EventSequenceEmbedder, embed_motions, embed_texts
from .errors import ConfigError, DataFormatError, MgmlError
from .metrics import (
    MetricResult, diversity, fid, localization_score, mmodality,
    retrieval_metrics, snippet_level_eval, summarize_trials, text_metrics,
    write_report,
)
from .motion import MotionSequence, frames_per_snippet
from .script import (
    MotionScript, format_time_span, parse_script, parse_time_span,
    serialize_script, span_for_snippets,
)
from .seq2seq import (
    Seq2SeqConfig, Seq2SeqModel, eval_loss, generate, load_lm, save_lm,
    train_step,
)
from .tasks import (
    PromptPair, all_tasks, finetune_set, get_task, instantiate,
    pretrain_stream, render_template, select_tasks, split_framed_blocks,
    task_mix_hash, wrap_tokens_text,
)
from .vocab import UnifiedVocabulary, build_vocab

log = logging.getLogger(__name__)

#: Tasks that overfit quickly and default to a third of the tuning steps.
CAPTIONING_TASKS = ("Motion-to-Text",)


def cache_dir() -> Path:
    return Path(os.environ.get("MGML_CACHE_DIR", "~/.cache/mgml")).expanduser()


def ensure_outfile(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise ConfigError(f"refusing to overwrite {path} (pass --force)")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class RunConfig:
    """Flat key-value run configuration; every field overridable from the CLI."""

    manifest: str = ""
    quantizer_path: str = ""
    vocab_path: str = ""
    checkpoint: str = ""        # model under evaluation / tuning base
    out: str = ""               # output checkpoint or report directory
    stage: str = "pretrain"     # pretrain | finetune
    task: str = ""              # finetune / eval target task
    tasks: str = ""             # comma whitelist for the pretrain mix
    exclude_tasks: str = ""     # comma excludes (leave-one-out ablation)
    from_scratch: bool = False

    steps: int = 0              # 0 = stage default
    batch_size: int = 16
    lr: float = 0.0             # 0 = stage default (2e-4 pretrain, 1e-4 finetune)
    seed: int = 0
    eval_every: int = 500
    eval_pairs: int = 8         # per-task validation pairs per eval
    patience: int = 5

    width: int = 128
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    max_input: int = 1024
    max_output: int = 512

    snippet_seconds: float = 0.5
    suite: str = "self"
    trials: int = 20
    retrieval_batch: int = 32
    diversity_pairs: int = 300
    mmodality_repeats: int = 0  # 0 disables the sampling-based metric
    temperature: float = 1.0
    max_new_tokens: int = 96
    spans_per_motion: int = 4

    PRETRAIN_STEPS: int = 4000
    FINETUNE_STEPS: int = 9000

    def resolved(self) -> dict[str, object]:
        return dataclasses.asdict(self)

    @property
    def stage_lr(self) -> float:
        if self.lr:
            return self.lr
        return 2e-4 if self.stage == "pretrain" else 1e-4

    def stage_steps(self) -> int:
        if self.steps:
            return self.steps
        if self.stage == "pretrain":
            return self.PRETRAIN_STEPS
        if self.task in CAPTIONING_TASKS:
            return self.FINETUNE_STEPS // 3
        return self.FINETUNE_STEPS


def config_hash(cfg: RunConfig) -> str:
    text = "\n".join(f"{k}={v}" for k, v in sorted(cfg.resolved().items()))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def load_config(path) -> RunConfig:
    """Parse a flat ``key = value`` file into a RunConfig."""
    cfg = RunConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        apply_override(cfg, key, value)
    return cfg


def apply_override(cfg: RunConfig, key: str, value: str) -> None:
    if not hasattr(cfg, key):
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(cfg, key)
    if isinstance(current, bool):
        setattr(cfg, key, value.lower() in ("1", "true", "yes"))
    elif isinstance(current, int):
        setattr(cfg, key, int(value))
    elif isinstance(current, float):
        setattr(cfg, key, float(value))
    else:
        setattr(cfg, key, value)


def _selected_task_names(cfg: RunConfig) -> tuple[list[str] | None, list[str] | None]:
    include = [t.strip() for t in cfg.tasks.split(",") if t.strip()] or None
    exclude = [t.strip() for t in cfg.exclude_tasks.split(",") if t.strip()] or None
    return include, exclude


# --------------------------------------------------------------------------
# corpus, quantizer, vocabulary


def synth_pipeline(out_dir, n_motions: int, seed: int, force: bool = False, **kwargs) -> Path:
    manifest = Path(out_dir) / "manifest.jsonl"
    if manifest.exists() and not force:
        raise ConfigError(f"refusing to overwrite {manifest} (pass --force)")
    return build_synth_corpus(out_dir, n_motions=n_motions, seed=seed, **kwargs)


def train_quantizer_pipeline(
    cfg: RunConfig,
    codebook_size: int = 64,
    code_dim: int = 8,
    vq_width: int = 64,
    beta: float = 0.25,
    steps: int = 4000,
    batch_size: int = 32,
    lr: float = 2e-4,
    force: bool = False,
) -> Path:
    from .dataset import load_motions

    out = ensure_outfile(cfg.out or cache_dir() / "quantizer.mgq", force)
    motions = load_motions(cfg.manifest, split="train")
    model = quant.MotionQuantizer(quant.QuantizerConfig(
        input_dim=motions[0].dim, codebook_size=codebook_size, code_dim=code_dim,
        width=vq_width, beta=beta,
    ))
    curve = quant.train_vqvae(motions, model, quant.TrainSchedule(
        steps=steps, batch_size=batch_size, lr=lr, seed=cfg.seed,
    ))
    quant.save_quantizer(out, model)
    quant.write_loss_curve(out.with_suffix(".loss.csv"), curve)
    return out


def vocab_corpus(manifest_path, snippet_seconds: float = 0.5) -> list[str]:
    """Every string the tasks can emit over a corpus: templates, captions,
    scripts, and the full set of snippet-boundary time tokens."""
    records = read_manifest(manifest_path)
    docs: list[str] = []
    for task in all_tasks():
        docs.extend(task.templates)
        docs.append(task.output.template)
    max_snippets = 1
    for record in records:
        docs.extend(record.captions)
        docs.extend(s for s in record.script if s)
        max_snippets = max(max_snippets, len(record.script))
    marks = [f"{k * snippet_seconds:.1f}s" for k in range(max_snippets + 1)]
    docs.append("from to " + " ".join(marks))
    docs.append(" ".join(f"{m}'s" for m in marks))
    return docs


def build_vocab_pipeline(cfg: RunConfig, force: bool = False) -> Path:
    out = ensure_outfile(cfg.vocab_path or cache_dir() / "vocab.txt", force)
    quantizer = quant.load_quantizer(cfg.quantizer_path)
    vocab = build_vocab(
        vocab_corpus(cfg.manifest, cfg.snippet_seconds),
        quantizer.config.codebook_size,
    )
    vocab.save(out)
    return out


# --------------------------------------------------------------------------
# language-model training


def _write_csv(path, header: str, rows: list[str]) -> None:
    Path(path).write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


def _load_parts(cfg: RunConfig):
    if not cfg.quantizer_path or not Path(cfg.quantizer_path).is_file():
        raise ConfigError(f"quantizer checkpoint {cfg.quantizer_path!r} not found")
    quantizer = quant.load_quantizer(cfg.quantizer_path)
    vocab = UnifiedVocabulary.load(cfg.vocab_path)
    train = load_samples(cfg.manifest, quantizer, "train", cfg.snippet_seconds)
    val = load_samples(cfg.manifest, quantizer, "val", cfg.snippet_seconds)
    return quantizer, vocab, train, val


def _fresh_model(cfg: RunConfig, vocab: UnifiedVocabulary) -> Seq2SeqModel:
    torch.manual_seed(cfg.seed)
    return Seq2SeqModel(Seq2SeqConfig(
        vocab_size=len(vocab), width=cfg.width, heads=cfg.heads,
        enc_layers=cfg.enc_layers, dec_layers=cfg.dec_layers,
        max_input=cfg.max_input, max_output=cfg.max_output,
    ), vocab)


def run_pretrain(cfg: RunConfig, force: bool = False) -> Path:
    """Uniform multi-task pretraining over the selected task mix."""
    out = ensure_outfile(cfg.out, force)
    _, vocab, train, val = _load_parts(cfg)
    include, exclude = _selected_task_names(cfg)
    selected = select_tasks(include, exclude)
    stream = pretrain_stream(train, cfg.seed, include, exclude)
    model = _fresh_model(cfg, vocab)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.stage_lr)
    mix_hash = task_mix_hash(t.name for t in selected)
    counts: dict[str, int] = {t.name: 0 for t in selected}
    train_rows: list[str] = []
    eval_rows: list[str] = []
    steps = cfg.stage_steps()
    for step in range(1, steps + 1):
        batch = []
        for _ in range(cfg.batch_size):
            pair = next(stream)
            counts[pair.task] += 1
            batch.append(pair)
        loss = train_step(model, optimizer, batch)
        if step % 50 == 0 or step == steps:
            train_rows.append(f"{step},pretrain,{mix_hash},{loss:.6f},{cfg.stage_lr:g}")
        if cfg.eval_every and (step % cfg.eval_every == 0 or step == steps) and val:
            for task in selected:
                pairs = finetune_set(val, task.name, epoch=0, seed=cfg.seed)[:cfg.eval_pairs]
                if pairs:
                    eval_rows.append(f"{step},{task.name},{eval_loss(model, pairs):.6f}")
    model.freeze()
    save_lm(out, model, config_hash=config_hash(cfg))
    _write_csv(out.with_suffix(".train.csv"), "step,stage,task_mix,loss,lr", train_rows)
    if eval_rows:
        _write_csv(out.with_suffix(".eval.csv"), "step,task,eval_loss", eval_rows)
    write_mix_log(out.with_suffix(".mix.csv"), counts)
    return out


def write_mix_log(path, counts: dict[str, int]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "count"])
        for name, count in sorted(counts.items()):
            writer.writerow([name, count])


def read_mix_log(path) -> dict[str, int]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {name: int(count) for name, count in rows[1:]}


def run_finetune(cfg: RunConfig, force: bool = False) -> Path:
    """Task-specific tuning from a pretrained checkpoint (or from scratch).

    Holds out the validation split's loss; stops after ``patience`` evals
    without improvement and keeps the best weights. The saved checkpoint
    records its pretraining ancestor's hash.
    """
    if not cfg.task:
        raise ConfigError("finetune needs a target task (config key 'task')")
    task = get_task(cfg.task)
    out = ensure_outfile(cfg.out, force)
    _, vocab, train, val = _load_parts(cfg)
    parent_hash = ""
    if cfg.from_scratch:
        model = _fresh_model(cfg, vocab)
    else:
        if not cfg.checkpoint or not Path(cfg.checkpoint).is_file():
            raise ConfigError(
                f"finetune needs a pretrain checkpoint (got {cfg.checkpoint!r}); "
                "pass from_scratch to skip it"
            )
        model, meta = load_lm(cfg.checkpoint, vocab)
        parent_hash = meta.get("config_hash", "")
        for p in model.parameters():
            p.requires_grad_(True)
    torch.manual_seed(cfg.seed + 1)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.stage_lr)
    rng = Random(cfg.seed)
    val_pairs = finetune_set(val, task.name, epoch=0, seed=cfg.seed + 7) if val else []
    steps = cfg.stage_steps()
    train_rows: list[str] = []
    eval_rows: list[str] = []
    best_loss = float("inf")
    best_state = None
    stale = 0
    epoch = 0
    queue: list[PromptPair] = []
    for step in range(1, steps + 1):
        while len(queue) < cfg.batch_size:
            epoch_pairs = finetune_set(train, task.name, epoch=epoch, seed=cfg.seed)
            if not epoch_pairs:
                raise ConfigError(f"no training pairs for task {task.name!r}")
            rng.shuffle(epoch_pairs)
            queue.extend(epoch_pairs)
            epoch += 1
        batch, queue = queue[:cfg.batch_size], queue[cfg.batch_size:]
        loss = train_step(model, optimizer, batch)
        if step % 50 == 0 or step == steps:
            train_rows.append(f"{step},finetune,{task_mix_hash([task.name])},{loss:.6f},{cfg.stage_lr:g}")
        if cfg.eval_every and val_pairs and (step % cfg.eval_every == 0 or step == steps):
            held = eval_loss(model, val_pairs)
            eval_rows.append(f"{step},{task.name},{held:.6f}")
            if held < best_loss - 1e-4:
                best_loss = held
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at step %d (no improvement for %d evals)",
                             step, stale)
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.freeze()
    save_lm(out, model, config_hash=config_hash(cfg), parent_hash=parent_hash)
    _write_csv(out.with_suffix(".train.csv"), "step,stage,task_mix,loss,lr", train_rows)
    if eval_rows:
        _write_csv(out.with_suffix(".eval.csv"), "step,task,eval_loss", eval_rows)
    return out


# --------------------------------------------------------------------------
# evaluation suites


def _reconstruct_tokens(
    tokens, quantizer: quant.MotionQuantizer, fps: int
) -> MotionSequence:
    # An empty generated span still yields a (degenerate) motion so metric
    # suites keep matched rows instead of crashing.
    ids = list(tokens) or [0]
    n_frames = len(ids) * quantizer.config.downsample
    return quant.reconstruct(ids, quantizer, n_frames, fps)


def _strip_script_blocks(text: str) -> str:
    _, blocks = split_framed_blocks(text)
    for name, body in blocks:
        if "Motion Script" in name and "Summary" not in name:
            return body
    return text.strip()


def evaluate_suite(cfg: RunConfig, force: bool = False) -> Path:
    """Run one evaluation suite end to end and write a metric report.

    Suites: ``self`` (ground truth against itself), ``t2m``, ``m2t``,
    ``m2dt`` (sequence- plus snippet-level), ``localize``. Sampling-dependent
    metrics repeat over ``trials`` reshuffles and report 95% intervals.
    """
    out_dir = Path(cfg.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"report_{cfg.suite}.jsonl"
    if report_path.exists() and not force:
        raise ConfigError(f"refusing to overwrite {report_path} (pass --force)")
    quantizer = quant.load_quantizer(cfg.quantizer_path)
    samples = load_samples(cfg.manifest, quantizer, "test", cfg.snippet_seconds)
    if not samples:
        raise ConfigError("evaluation needs a nonempty test split")
    oracle = EventSequenceEmbedder(snippet_seconds=cfg.snippet_seconds)
    results: list[MetricResult] = []

    if cfg.suite == "self":
        results = _suite_self(cfg, samples, oracle)
    elif cfg.suite in ("t2m", "m2t", "m2dt", "localize"):
        vocab = UnifiedVocabulary.load(cfg.vocab_path)
        model, _ = load_lm(cfg.checkpoint, vocab)
        if cfg.suite == "t2m":
            results = _suite_t2m(cfg, samples, model, quantizer, oracle)
        elif cfg.suite == "m2t":
            results = _suite_m2t(cfg, samples, model, oracle)
        elif cfg.suite == "m2dt":
            results = _suite_m2dt(cfg, samples, model)
        else:
            results = _suite_localize(cfg, samples, model)
    else:
        raise ConfigError(f"unknown suite {cfg.suite!r}")
    write_report(report_path, results, config_hash(cfg))
    return report_path


def _retrieval_trials(cfg: RunConfig, texts: np.ndarray, motions: np.ndarray):
    """Re-pair the batching per trial; jitter-free deterministic shuffles."""
    per_metric: dict[str, list[float]] = {}
    for trial in range(cfg.trials):
        order = np.random.default_rng(cfg.seed + trial).permutation(texts.shape[0])
        scores = retrieval_metrics(
            texts[order], motions[order], batch_size=min(cfg.retrieval_batch, texts.shape[0])
        )
        for key, value in scores.items():
            per_metric.setdefault(key, []).append(value)
    return [summarize_trials(k, v) for k, v in per_metric.items()]


def _suite_self(cfg: RunConfig, samples: list[Sample], oracle: EmbeddingOracle):
    motions = [s.motion for s in samples]
    motion_embs = embed_motions(oracle, motions)
    text_embs = embed_texts(oracle, [serialize_script(s.script) for s in samples])
    results = [summarize_trials("FID", [fid(motion_embs, motion_embs)])]
    results += _retrieval_trials(cfg, text_embs, motion_embs)
    scripts = [serialize_script(s.script) for s in samples]
    tm = text_metrics(scripts, [[s] for s in scripts])
    results += [summarize_trials(k, [v]) for k, v in tm.items()]
    if len(samples) >= 2 * cfg.diversity_pairs:
        results.append(summarize_trials(
            "Diversity",
            [diversity(motion_embs, cfg.diversity_pairs, seed=cfg.seed + t)
             for t in range(cfg.trials)],
        ))
    return results


def _suite_t2m(cfg, samples, model, quantizer, oracle):
    real = embed_motions(oracle, [s.motion for s in samples])
    task = get_task("Text-to-Motion")
    captions = [s.captions[0] for s in samples]
    generated = []
    for sample, caption in zip(samples, captions):
        prompt = render_template(task, {"[caption]": caption}, template_index=0)
        result = generate(model, prompt, max_new_tokens=cfg.max_new_tokens)
        tokens = result.motion_spans[0] if result.motion_spans else ()
        generated.append(_reconstruct_tokens(tokens, quantizer, samples[0].motion.fps))
    gen_embs = embed_motions(oracle, generated)
    text_embs = embed_texts(oracle, captions)
    results = [summarize_trials("FID", [fid(gen_embs, real)])]
    results += _retrieval_trials(cfg, text_embs, gen_embs)
    if len(samples) >= 2 * cfg.diversity_pairs:
        results.append(summarize_trials(
            "Diversity",
            [diversity(gen_embs, cfg.diversity_pairs, seed=cfg.seed + t)
             for t in range(cfg.trials)],
        ))
    if cfg.mmodality_repeats > 1:
        per_condition = []
        for sample, caption in zip(samples, captions):
            prompt = render_template(task, {"[caption]": caption}, template_index=0)
            repeats = []
            for r in range(cfg.mmodality_repeats):
                result = generate(
                    model, prompt, max_new_tokens=cfg.max_new_tokens,
                    temperature=cfg.temperature, seed=cfg.seed + r,
                )
                tokens = result.motion_spans[0] if result.motion_spans else ()
                repeats.append(oracle.motion_embed(
                    _reconstruct_tokens(tokens, quantizer, sample.motion.fps)
                ))
            per_condition.append(np.stack(repeats))
        results.append(summarize_trials("MModality", [mmodality(per_condition)]))
    return results


def _suite_m2t(cfg, samples, model, oracle):
    task = get_task("Motion-to-Text")
    predictions = []
    for sample in samples:
        prompt = render_template(
            task, {"[motion]": wrap_tokens_text(sample.tokens)}, template_index=0
        )
        predictions.append(generate(model, prompt, max_new_tokens=cfg.max_new_tokens).text)
    tm = text_metrics(predictions, [list(s.captions) for s in samples])
    results = [summarize_trials(k, [v]) for k, v in tm.items()]
    text_embs = embed_texts(oracle, predictions)
    motion_embs = embed_motions(oracle, [s.motion for s in samples])
    results += _retrieval_trials(cfg, text_embs, motion_embs)
    return results


def _suite_m2dt(cfg, samples, model):
    task = get_task("Motion-to-Motion Script")
    seq_scores: dict[str, list[float]] = {}
    snip_scores: dict[str, list[float]] = {}
    for sample in samples:
        prompt = render_template(
            task, {"[motion]": wrap_tokens_text(sample.tokens)}, template_index=0
        )
        predicted = _strip_script_blocks(
            generate(model, prompt, max_new_tokens=cfg.max_new_tokens).text
        )
        gold = serialize_script(sample.script)
        for key, value in text_metrics(predicted or "<Motionless>", [gold]).items():
            seq_scores.setdefault(key, []).append(value)
        snippet = snippet_level_eval(predicted, gold, cfg.snippet_seconds)
        for key, value in snippet.aggregate.items():
            snip_scores.setdefault(key, []).append(value)
    results = [summarize_trials(f"seq/{k}", v) for k, v in seq_scores.items()]
    results += [summarize_trials(f"snippet/{k}", v) for k, v in snip_scores.items()]
    return results


def localization_eval(
    cfg: RunConfig, samples: list[Sample], model: Seq2SeqModel, seed: int
) -> dict[str, float]:
    """Exact-match / IoU / parse-success rates over seeded random spans."""
    task = get_task("(Motion Script, Snippet Motion Script)-to-Time")
    rng = Random(seed)
    exact, ious, parsed = [], [], []
    for sample in samples:
        for _ in range(cfg.spans_per_motion):
            pair = instantiate(task, sample, seed=rng.getrandbits(32))
            result = generate(model, pair.input_text, max_new_tokens=12)
            gold = parse_time_span(pair.target_text)
            scores, diag = localization_score(result.text, gold)
            exact.append(scores["exact_match"])
            ious.append(scores["iou"])
            parsed.append(0.0 if diag else 1.0)
    return {
        "exact_match": float(np.mean(exact)),
        "iou": float(np.mean(ious)),
        "parse_success": float(np.mean(parsed)),
    }


def _suite_localize(cfg, samples, model):
    per_metric: dict[str, list[float]] = {}
    for trial in range(cfg.trials):
        scores = localization_eval(cfg, samples, model, seed=cfg.seed + trial)
        for key, value in scores.items():
            per_metric.setdefault(key, []).append(value)
    return [summarize_trials(k, v) for k, v in per_metric.items()]


# --------------------------------------------------------------------------
# fine-grained edit round-trip


class EditError(MgmlError):
    """A round-trip step produced output the next step cannot consume."""

    exit_code = 3

    def __init__(self, message: str, raw_stream: str = ""):
        super().__init__(message if not raw_stream else f"{message}\nraw output: {raw_stream!r}")
        self.raw_stream = raw_stream


@dataclass(frozen=True)
class EditReport:
    caption: str
    snippet_index: int
    old_statement: str
    new_statement: str
    prompts: dict[str, str]          # step1, step2, step4, step4_unedited
    script_before: MotionScript
    script_after: MotionScript
    tokens_before: tuple[int, ...]
    tokens_after: tuple[int, ...]
    motion_before: MotionSequence
    motion_after: MotionSequence
    snippet_channel_delta: np.ndarray  # (snippets, channels) max |before - after|


def edit_roundtrip(
    model: Seq2SeqModel,
    quantizer: quant.MotionQuantizer,
    caption: str,
    snippet_index: int,
    new_statement: str,
    fps: int = 20,
    snippet_seconds: float = 0.5,
    max_new_tokens: int = 96,
    template_index: int = 0,
) -> EditReport:
    """Text-to-Motion, Motion-to-Motion Script, apply the edit, then
    (Text, Motion Script)-to-Motion, all through ``generate``.

    The report carries per-snippet, per-channel deltas between the two
    reconstructions; an identity edit reproduces the unedited step-4 prompt
    byte for byte.
    """
    t2m = get_task("Text-to-Motion")
    m2s = get_task("Motion-to-Motion Script")
    ts2m = get_task("(Text, Motion Script)-to-Motion")

    prompt1 = render_template(t2m, {"[caption]": caption}, template_index)
    step1 = generate(model, prompt1, max_new_tokens=max_new_tokens)
    if not step1.motion_spans or not step1.motion_spans[0]:
        raise EditError("step 1 generated no motion span", step1.text)
    tokens_before = step1.motion_spans[0]
    motion_before = _reconstruct_tokens(tokens_before, quantizer, fps)

    prompt2 = render_template(m2s, {"[motion]": wrap_tokens_text(tokens_before)}, template_index)
    step2 = generate(model, prompt2, max_new_tokens=max_new_tokens)
    body = _strip_script_blocks(step2.text)
    if not body:
        raise EditError("step 2 produced no motion script", step2.text)
    script_before, _ = parse_script(body, snippet_seconds, fps)

    if not (0 <= snippet_index < script_before.n_snippets):
        raise EditError(
            f"snippet index {snippet_index} outside the {script_before.n_snippets}-snippet script"
        )
    old_statement = script_before.snippets[snippet_index]
    edited = list(script_before.snippets)
    edited[snippet_index] = new_statement
    script_after = MotionScript(tuple(edited), snippet_seconds, fps)

    def step4_prompt(script: MotionScript) -> str:
        return render_template(ts2m, {
            "[caption]": caption,
            "[motion script]": serialize_script(script),
        }, template_index)

    prompt4 = step4_prompt(script_after)
    step4 = generate(model, prompt4, max_new_tokens=max_new_tokens)
    tokens_after = step4.motion_spans[0] if step4.motion_spans else ()
    if not tokens_after:
        raise EditError("step 4 generated no motion span", step4.text)
    motion_after = _reconstruct_tokens(tokens_after, quantizer, fps)

    per = frames_per_snippet(fps, snippet_seconds)
    frames_b = np.asarray(motion_before.frames)
    frames_a = np.asarray(motion_after.frames)
    width = max(frames_b.shape[0], frames_a.shape[0])
    frames_b = quant.pad_to_multiple(frames_b, width)[:width]
    frames_a = quant.pad_to_multiple(frames_a, width)[:width]
    n_snippets = (width + per - 1) // per
    delta = np.zeros((n_snippets, frames_b.shape[1]), dtype=np.float64)
    for i in range(n_snippets):
        chunk = slice(i * per, min((i + 1) * per, width))
        delta[i] = np.abs(frames_b[chunk] - frames_a[chunk]).max(axis=0)

    return EditReport(
        caption=caption, snippet_index=snippet_index,
        old_statement=old_statement, new_statement=new_statement,
        prompts={
            "step1": prompt1, "step2": prompt2, "step4": prompt4,
            "step4_unedited": step4_prompt(script_before),
        },
        script_before=script_before, script_after=script_after,
        tokens_before=tuple(tokens_before), tokens_after=tuple(tokens_after),
        motion_before=motion_before, motion_after=motion_after,
        snippet_channel_delta=delta,
    )
