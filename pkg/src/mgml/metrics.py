"""Evaluation metrics: distribution distance, retrieval, diversity, text overlap,
snippet-level scoring, and temporal localization.

All functions are pure numpy over caller-supplied features or strings; the
embedding space comes from :mod:`mgml.embedding`. Text scores live on the
0-100 scale.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, Diagnostic, NumericError
from .script import TimeSpan, parse_script, parse_time_span

# --------------------------------------------------------------------------
# distribution distance


def _sym_sqrt(matrix: np.ndarray, floor: float = -1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [floor, 0) clip to zero; anything below floor means the
    input was not a covariance and raises.
    """
    eigvals, eigvecs = np.linalg.eigh(matrix)
    if eigvals.min() < floor:
        raise NumericError(
            f"matrix square root of a non-PSD matrix (min eigenvalue {eigvals.min():.3e})"
        )
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def fid_from_moments(
    mu_a: np.ndarray, sigma_a: np.ndarray, mu_b: np.ndarray, sigma_b: np.ndarray
) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`` from exact moments.

    The product root is computed symmetrically as
    ``(S_b^{1/2} S_a S_b^{1/2})^{1/2}``, which shares its trace.
    """
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    root_b = _sym_sqrt(np.atleast_2d(np.asarray(sigma_b, dtype=np.float64)))
    sigma_a = np.atleast_2d(np.asarray(sigma_a, dtype=np.float64))
    inner = root_b @ sigma_a @ root_b
    eigvals = np.linalg.eigvalsh(inner)
    tr_root = float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())
    diff = mu_a - mu_b
    return float(
        diff @ diff + np.trace(sigma_a) + np.trace(np.atleast_2d(sigma_b)) - 2.0 * tr_root
    )


def fid(features_a: np.ndarray, features_b: np.ndarray, ridge: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    When a set has no more rows than dimensions its covariance gets a
    ``ridge * I`` stabilizer.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"feature sets must share one dimension, got {a.shape} vs {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("each feature set needs at least two rows")
    e = a.shape[1]
    sigma_a = np.atleast_2d(np.cov(a, rowvar=False))
    sigma_b = np.atleast_2d(np.cov(b, rowvar=False))
    if a.shape[0] <= e:
        sigma_a = sigma_a + ridge * np.eye(e)
    if b.shape[0] <= e:
        sigma_b = sigma_b + ridge * np.eye(e)
    return fid_from_moments(a.mean(0), sigma_a, b.mean(0), sigma_b)


# --------------------------------------------------------------------------
# retrieval


def euclidean_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d2 = (a * a).sum(1)[:, None] - 2 * a @ b.T + (b * b).sum(1)[None, :]
    return np.sqrt(np.clip(d2, 0.0, None))


def retrieval_metrics(
    text_embs: np.ndarray,
    motion_embs: np.ndarray,
    ks: tuple[int, ...] = (1, 2, 3),
    batch_size: int = 32,
) -> dict[str, float]:
    """Motion-to-text retrieval accuracy over batches of candidates.

    Rows i of the two matrices are a matched pair. Within each batch of
    ``batch_size`` pairs, each motion ranks its matched text among the batch's
    texts by Euclidean distance (ties break toward the lower candidate index);
    R@k is the fraction ranked in the top k. MM-Dist is the mean matched-pair
    distance over all rows.
    """
    texts = np.asarray(text_embs, dtype=np.float64)
    motions = np.asarray(motion_embs, dtype=np.float64)
    if texts.shape != motions.shape:
        raise ValueError(f"embedding shapes differ: {texts.shape} vs {motions.shape}")
    n = texts.shape[0]
    if batch_size > n:
        raise ConfigError(f"retrieval batch size {batch_size} exceeds dataset size {n}")
    matched = np.linalg.norm(texts - motions, axis=1)
    ranks: list[int] = []
    for start in range(0, n - batch_size + 1, batch_size):
        t = texts[start:start + batch_size]
        m = motions[start:start + batch_size]
        distances = euclidean_distance_matrix(m, t)
        for i in range(batch_size):
            row = distances[i]
            better = (row < row[i]).sum() + (row[:i] == row[i]).sum()
            ranks.append(int(better) + 1)
    ranks_arr = np.asarray(ranks)
    out = {f"R@{k}": float((ranks_arr <= k).mean()) for k in ks}
    out["MM-Dist"] = float(matched.mean())
    return out


def diversity(features: np.ndarray, n_pairs: int = 300, seed: int = 0) -> float:
    """Mean distance over ``n_pairs`` disjoint random pairs of features."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[0] < 2 * n_pairs:
        raise ConfigError(
            f"diversity needs at least {2 * n_pairs} features, got {feats.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(feats.shape[0], size=2 * n_pairs, replace=False)
    first, second = picks[:n_pairs], picks[n_pairs:]
    return float(np.linalg.norm(feats[first] - feats[second], axis=1).mean())


def mmodality(per_condition_features: list[np.ndarray]) -> float:
    """Mean pairwise distance among same-condition generations.

    Each entry holds the feature rows of repeated generations for one caption;
    every entry needs at least two rows.
    """
    if not per_condition_features:
        raise ConfigError("mmodality needs at least one condition")
    means = []
    for feats in per_condition_features:
        feats = np.asarray(feats, dtype=np.float64)
        r = feats.shape[0]
        if r < 2:
            raise ConfigError("mmodality needs >= 2 generations per condition")
        distances = euclidean_distance_matrix(feats, feats)
        upper = distances[np.triu_indices(r, k=1)]
        means.append(upper.mean())
    return float(np.mean(means))


# --------------------------------------------------------------------------
# text metrics (0-100 scale)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_scores(
    candidates: list[str],
    references: list[list[str]],
    max_n: int = 7,
    lowercase: bool = False,
) -> dict[int, float]:
    """Corpus BLEU with brevity penalty for every order 1..max_n.

    Modified n-gram precision with per-reference clipping; zero match counts
    smooth by add-one for n >= 2. Orders with no candidate n-grams anywhere
    drop out of the geometric mean (short-sentence identity still scores 100).
    """
    if len(candidates) != len(references) or not candidates:
        raise ValueError("need equally many candidates and reference lists")
    matched = np.zeros(max_n + 1)
    total = np.zeros(max_n + 1)
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        c_tokens = cand.lower().split() if lowercase else cand.split()
        r_tokens = [r.lower().split() if lowercase else r.split() for r in refs]
        cand_len += len(c_tokens)
        ref_len += min((abs(len(r) - len(c_tokens)), len(r)) for r in r_tokens)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(c_tokens, n)
            if not counts:
                continue
            best = Counter()
            for r in r_tokens:
                for gram, count in _ngrams(r, n).items():
                    best[gram] = max(best[gram], count)
            total[n] += sum(counts.values())
            matched[n] += sum(min(c, best[g]) for g, c in counts.items())
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    precisions: dict[int, float | None] = {}
    for n in range(1, max_n + 1):
        if total[n] == 0:
            precisions[n] = None
        elif matched[n] == 0 and n >= 2:
            precisions[n] = (matched[n] + 1.0) / (total[n] + 1.0)
        else:
            precisions[n] = matched[n] / total[n]
    out: dict[int, float] = {}
    for n in range(1, max_n + 1):
        orders = [precisions[k] for k in range(1, n + 1) if precisions[k] is not None]
        if not orders:
            out[n] = 0.0
        elif min(orders) == 0.0:
            out[n] = 0.0
        else:
            out[n] = 100.0 * bp * math.exp(sum(math.log(p) for p in orders) / len(orders))
    return out


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, references: list[str], lowercase: bool = False) -> float:
    """ROUGE-L F1 (x100), best reference taken."""
    c = candidate.lower().split() if lowercase else candidate.split()
    best = 0.0
    for ref in references:
        r = ref.lower().split() if lowercase else ref.split()
        lcs = _lcs_length(c, r)
        if lcs == 0:
            continue
        precision = lcs / len(c)
        recall = lcs / len(r)
        best = max(best, 200.0 * precision * recall / (precision + recall))
    return best


def text_metrics(
    candidates: str | list[str],
    references: list[str] | list[list[str]],
    max_n: int = 7,
    lowercase: bool = False,
) -> dict[str, float]:
    """BLEU@1..max_n plus ROUGE-L for one pair or a whole corpus."""
    if isinstance(candidates, str):
        candidates = [candidates]
        references = [list(references)]  # type: ignore[arg-type]
    refs: list[list[str]] = [list(r) for r in references]  # type: ignore[union-attr]
    bleu = bleu_scores(candidates, refs, max_n=max_n, lowercase=lowercase)
    rouge = float(np.mean([
        rouge_l(c, r, lowercase=lowercase) for c, r in zip(candidates, refs)
    ]))
    out = {f"BLEU@{n}": bleu[n] for n in range(1, max_n + 1)}
    out["ROUGE-L"] = rouge
    return out


# --------------------------------------------------------------------------
# snippet-level detailed-text evaluation


@dataclass(frozen=True)
class SnippetEval:
    per_snippet: tuple[dict[str, float], ...]
    aggregate: dict[str, float]
    diagnostics: tuple[Diagnostic, ...]


def _pair_scores(pred: str, gold: str, max_n: int) -> dict[str, float]:
    if pred == "" and gold == "":
        return {f"BLEU@{n}": 100.0 for n in range(1, max_n + 1)} | {"ROUGE-L": 100.0}
    if pred == "" or gold == "":
        return {f"BLEU@{n}": 0.0 for n in range(1, max_n + 1)} | {"ROUGE-L": 0.0}
    return text_metrics(pred, [gold], max_n=max_n)


def snippet_level_eval(
    pred_text: str,
    gold_text: str,
    snippet_seconds: float = 0.5,
    max_n: int = 7,
) -> SnippetEval:
    """Split both scripts on ``<SEP>`` and score them snippet by snippet.

    Length mismatches score the overlap and pair every extra snippet against
    an empty one, with a diagnostic. The aggregate is the mean over all
    aligned positions.
    """
    pred_script, pred_diag = parse_script(pred_text, snippet_seconds)
    gold_script, gold_diag = parse_script(gold_text, snippet_seconds)
    diagnostics = list(pred_diag)
    pred = list(pred_script.snippets)
    gold = list(gold_script.snippets)
    if len(pred) != len(gold):
        diagnostics.append(Diagnostic(
            f"length mismatch: {len(pred)} predicted vs {len(gold)} gold snippets; "
            "extras scored against empty",
            min(len(pred), len(gold)),
        ))
    width = max(len(pred), len(gold))
    pred += [""] * (width - len(pred))
    gold += [""] * (width - len(gold))
    per = tuple(_pair_scores(p, g, max_n) for p, g in zip(pred, gold))
    aggregate = {
        key: float(np.mean([scores[key] for scores in per])) for key in per[0]
    }
    return SnippetEval(per, aggregate, tuple(diagnostics))


# --------------------------------------------------------------------------
# localization


def interval_iou(a: TimeSpan, b: TimeSpan) -> float:
    intersection = min(a.end_seconds, b.end_seconds) - max(a.start_seconds, b.start_seconds)
    if intersection <= 0:
        return 0.0
    union = max(a.end_seconds, b.end_seconds) - min(a.start_seconds, b.start_seconds)
    return intersection / union


def localization_score(
    pred: TimeSpan | str | None, gold: TimeSpan
) -> tuple[dict[str, float], Diagnostic | None]:
    """Exact boundary match (0/1) and real-line IoU; unparseable predictions score 0."""
    diagnostic = None
    span: TimeSpan | None
    if isinstance(pred, str):
        try:
            span = parse_time_span(pred)
        except Exception as exc:
            span = None
            diagnostic = Diagnostic(f"unparseable time span {pred!r}: {exc}", 0)
    else:
        span = pred
        if span is None:
            diagnostic = Diagnostic("missing predicted span", 0)
    if span is None:
        return {"exact_match": 0.0, "iou": 0.0}, diagnostic
    exact = float(
        span.start_seconds == gold.start_seconds and span.end_seconds == gold.end_seconds
    )
    return {"exact_match": exact, "iou": interval_iou(span, gold)}, diagnostic


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MetricResult:
    metric: str
    value: float
    ci_low: float
    ci_high: float
    n: int


def mean_ci(values: list[float]) -> tuple[float, float, float]:
    """Mean with a 95% normal-approximation interval over repeated trials."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, mean, mean
    half = 1.96 * float(arr.std(ddof=0)) / math.sqrt(arr.size)
    return mean, mean - half, mean + half


def summarize_trials(metric: str, values: list[float]) -> MetricResult:
    mean, low, high = mean_ci(values)
    if not np.isfinite(mean):
        raise NumericError(f"metric {metric} produced a non-finite value")
    return MetricResult(metric, mean, low, high, len(values))


def write_report(path, results: list[MetricResult], config_hash: str) -> None:
    lines = [
        json.dumps({
            "metric": r.metric, "value": r.value, "ci_low": r.ci_low,
            "ci_high": r.ci_high, "n": r.n, "config_hash": config_hash,
        })
        for r in results
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> list[dict]:
    return [
        json.loads(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()
    ]
