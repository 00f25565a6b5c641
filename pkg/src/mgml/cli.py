"""Command-line interface.

Subcommands: synth, train-vqvae, build-vocab, tokenize, train-lm, generate,
script, localize, edit, eval. Every file-writing subcommand refuses to
overwrite existing output unless ``--force`` is passed. Exit codes: 0 ok,
2 configuration error, 3 data/format error, 4 numeric or training failure.
The ``MGML_CACHE_DIR`` environment variable sets the default output root.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipelines, quantizer as quant
from .errors import exit_code_for
from .motion import read_motion
from .script import format_time_span, parse_script, parse_time_span, script_window, serialize_script
from .seq2seq import generate, load_lm
from .tasks import get_task, render_template, wrap_tokens_text
from .vocab import UnifiedVocabulary


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing output files")


def _resolve_config(args, **direct) -> pipelines.RunConfig:
    cfg = pipelines.load_config(args.config) if args.config else pipelines.RunConfig()
    for key, value in direct.items():
        if value is not None:
            setattr(cfg, key, value)
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pipelines.apply_override(cfg, key.strip(), value.strip())
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgml",
        description="Multi-granularity motion-language pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic ground-truth corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-snippets", type=int, default=2)
    p.add_argument("--max-snippets", type=int, default=8)
    _add_common(p)

    p = sub.add_parser("train-vqvae", help="train and freeze the motion tokenizer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--codebook-size", type=int, default=64)
    p.add_argument("--code-dim", type=int, default=8)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--beta", type=float, default=0.25)
    _add_common(p)

    p = sub.add_parser("build-vocab", help="build the unified vocabulary file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("tokenize", help="print motion token ids for a motion file")
    p.add_argument("--motion", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--wrap", action="store_true", help="print the wrapped text form")
    _add_common(p)

    p = sub.add_parser("train-lm", help="train the language model (two-stage scheme)")
    p.add_argument("--stage", choices=("pretrain", "finetune"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="pretrain checkpoint to finetune from")
    p.add_argument("--task", help="finetune target task")
    p.add_argument("--tasks", help="comma-separated pretrain whitelist")
    p.add_argument("--exclude-task", action="append", default=[],
                   help="exclude one task (repeatable; leave-one-out ablation)")
    p.add_argument("--from-scratch", action="store_true",
                   help="ablation arm: instruction-tune without pretraining")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("generate", help="run one prompt through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="input", required=True, help="file holding the prompt text")
    p.add_argument("--max-new", type=int, default=96)
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("script", help="parse or window a serialized motion script")
    p.add_argument("--in", dest="input", required=True, help="file holding the script text")
    p.add_argument("--window", help="time span, e.g. 'from 1.0s to 2.5s'")
    p.add_argument("--snippet-seconds", type=float, default=0.5)
    _add_common(p)

    p = sub.add_parser("localize", help="predict the span of a snippet script")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--whole", required=True, help="file holding the whole script")
    p.add_argument("--snippet", required=True, help="file holding the snippet script")
    p.add_argument("--template-index", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("edit", help="fine-grained edit round-trip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--snippet", type=int, required=True)
    p.add_argument("--statement", required=True)
    p.add_argument("--out", help="write the diff report as JSON")
    _add_common(p)

    p = sub.add_parser("eval", help="run an evaluation suite")
    p.add_argument("--suite", required=True,
                   choices=("self", "t2m", "m2t", "m2dt", "localize"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--trials", type=int)
    _add_common(p)

    return parser


def _cmd_synth(args) -> int:
    manifest = pipelines.synth_pipeline(
        args.out, n_motions=args.n, seed=args.seed, force=args.force,
        min_snippets=args.min_snippets, max_snippets=args.max_snippets,
    )
    print(manifest)
    return 0


def _cmd_train_vqvae(args) -> int:
    cfg = _resolve_config(args, manifest=args.manifest, out=args.out)
    out = pipelines.train_quantizer_pipeline(
        cfg, codebook_size=args.codebook_size, code_dim=args.code_dim,
        vq_width=args.width, beta=args.beta, steps=args.steps,
        batch_size=args.batch, lr=args.lr, force=args.force,
    )
    print(out)
    return 0


def _cmd_build_vocab(args) -> int:
    cfg = _resolve_config(
        args, manifest=args.manifest, quantizer_path=args.quantizer, vocab_path=args.out
    )
    print(pipelines.build_vocab_pipeline(cfg, force=args.force))
    return 0


def _cmd_tokenize(args) -> int:
    model = quant.load_quantizer(args.quantizer)
    tokens = quant.encode_motion(read_motion(args.motion), model)
    print(wrap_tokens_text(tokens) if args.wrap else " ".join(map(str, tokens)))
    return 0


def _cmd_train_lm(args) -> int:
    cfg = _resolve_config(
        args, manifest=args.manifest, quantizer_path=args.quantizer,
        vocab_path=args.vocab, out=args.out, stage=args.stage,
        task=args.task, tasks=args.tasks, steps=args.steps, seed=args.seed,
        checkpoint=args.init,
    )
    if args.exclude_task:
        cfg.exclude_tasks = ",".join(args.exclude_task)
    cfg.from_scratch = bool(args.from_scratch)
    if args.stage == "pretrain":
        print(pipelines.run_pretrain(cfg, force=args.force))
    else:
        print(pipelines.run_finetune(cfg, force=args.force))
    return 0


def _cmd_generate(args) -> int:
    vocab = UnifiedVocabulary.load(args.vocab)
    model, _ = load_lm(args.checkpoint, vocab)
    prompt = Path(args.input).read_text(encoding="utf-8").strip()
    result = generate(
        model, prompt, max_new_tokens=args.max_new,
        temperature=args.temperature, top_k=args.top_k, seed=args.seed,
    )
    print(result.text)
    if result.motion_spans:
        for i, span in enumerate(result.motion_spans):
            print(f"# motion span {i}: {' '.join(map(str, span))}", file=sys.stderr)
    for diag in result.diagnostics:
        print(f"# diagnostic: {diag}", file=sys.stderr)
    if result.truncated:
        print("# output hit the token limit", file=sys.stderr)
    return 0


def _cmd_script(args) -> int:
    text = Path(args.input).read_text(encoding="utf-8").strip()
    script, diagnostics = parse_script(text, args.snippet_seconds)
    if args.window:
        span = parse_time_span(args.window)
        print(serialize_script(script_window(script, span)))
    else:
        for i, statement in enumerate(script.snippets):
            span = format_time_span(
                parse_time_span(
                    f"from {i * args.snippet_seconds:.1f}s to {(i + 1) * args.snippet_seconds:.1f}s"
                )
            )
            print(f"{i}\t{span}\t{statement or '<Motionless>'}")
    for diag in diagnostics:
        print(f"# diagnostic: {diag}", file=sys.stderr)
    return 0


def _cmd_localize(args) -> int:
    vocab = UnifiedVocabulary.load(args.vocab)
    model, _ = load_lm(args.checkpoint, vocab)
    task = get_task("(Motion Script, Snippet Motion Script)-to-Time")
    prompt = render_template(task, {
        "[motion script]": Path(args.whole).read_text(encoding="utf-8").strip(),
        "[snippet motion script]": Path(args.snippet).read_text(encoding="utf-8").strip(),
    }, template_index=args.template_index)
    result = generate(model, prompt, max_new_tokens=12)
    print(result.text)
    try:
        parse_time_span(result.text)
    except Exception as exc:
        print(f"# prediction does not parse: {exc}", file=sys.stderr)
    return 0


def _cmd_edit(args) -> int:
    vocab = UnifiedVocabulary.load(args.vocab)
    model, _ = load_lm(args.checkpoint, vocab)
    quantizer = quant.load_quantizer(args.quantizer)
    report = pipelines.edit_roundtrip(
        model, quantizer, args.caption, args.snippet, args.statement
    )
    summary = {
        "caption": report.caption,
        "snippet_index": report.snippet_index,
        "old_statement": report.old_statement,
        "new_statement": report.new_statement,
        "script_before": list(report.script_before.snippets),
        "script_after": list(report.script_after.snippets),
        "tokens_before": list(report.tokens_before),
        "tokens_after": list(report.tokens_after),
        "snippet_channel_delta": report.snippet_channel_delta.tolist(),
        "prompts": report.prompts,
    }
    if args.out:
        out = pipelines.ensure_outfile(args.out, args.force)
        out.write_text(json.dumps(summary, indent=2), encoding="utf-8")
        print(out)
    else:
        print(json.dumps(summary, indent=2))
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve_config(
        args, manifest=args.manifest, quantizer_path=args.quantizer,
        vocab_path=args.vocab, checkpoint=args.checkpoint, out=args.out,
        suite=args.suite, trials=args.trials,
    )
    print(pipelines.evaluate_suite(cfg, force=args.force))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train-vqvae": _cmd_train_vqvae,
    "build-vocab": _cmd_build_vocab,
    "tokenize": _cmd_tokenize,
    "train-lm": _cmd_train_lm,
    "generate": _cmd_generate,
    "script": _cmd_script,
    "localize": _cmd_localize,
    "edit": _cmd_edit,
    "eval": _cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # map to the documented exit codes
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
