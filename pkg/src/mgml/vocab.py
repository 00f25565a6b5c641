"""Unified token vocabulary over text, motion ids, and special markers.

Ids are laid out in three disjoint regions: text words (id 0 is the unknown
fallback), then one ``<motion_id_k>`` per codebook row, then the special
tokens ``<Motion Tokens>``, ``</Motion Tokens>``, ``<SEP>``, ``<Motionless>``
plus end-of-sequence and padding. Special tokens are atomic: they are matched
before word splitting and can never come out of the text region.

Vocabulary file: a header line ``K_t K_m K_s``, then one surface form per
line; the token on the (i+2)-th line has id i.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import Diagnostic, InvalidTokenError

MOTION_OPEN = "<Motion Tokens>"
MOTION_CLOSE = "</Motion Tokens>"
SEP = "<SEP>"
MOTIONLESS = "<Motionless>"
EOS = "</s>"
PAD = "<pad>"
UNK = "<unk>"

SPECIAL_TOKENS = (MOTION_OPEN, MOTION_CLOSE, SEP, MOTIONLESS, EOS, PAD)

_MOTION_ID_RE = re.compile(r"<motion_id_(\d+)>")
# Longer forms first so </Motion Tokens> never half-matches <Motion Tokens>.
_ATOM_RE = re.compile(
    "("
    + "|".join(re.escape(t) for t in sorted(SPECIAL_TOKENS, key=len, reverse=True))
    + r"|<motion_id_\d+>)"
)


def motion_token_surface(k: int) -> str:
    return f"<motion_id_{k}>"


@dataclass(frozen=True)
class ExtractResult:
    """Motion spans pulled out of a token stream plus what was left over."""

    spans: tuple[tuple[int, ...], ...]
    residual_ids: tuple[int, ...]
    residual_text: str
    diagnostics: tuple[Diagnostic, ...]


class UnifiedVocabulary:
    """Bijective id map over text words, motion tokens, and special tokens."""

    def __init__(self, text_tokens: list[str], codebook_size: int):
        if codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        if not text_tokens or text_tokens[0] != UNK:
            raise ValueError(f"text region must start with the {UNK!r} fallback")
        self.text_tokens = list(text_tokens)
        self.codebook_size = codebook_size
        self.n_text = len(self.text_tokens)
        self.n_motion = codebook_size
        self.n_special = len(SPECIAL_TOKENS)
        self._surfaces = (
            self.text_tokens
            + [motion_token_surface(k) for k in range(codebook_size)]
            + list(SPECIAL_TOKENS)
        )
        self._ids = {s: i for i, s in enumerate(self._surfaces)}
        if len(self._ids) != len(self._surfaces):
            raise ValueError("duplicate surface forms in vocabulary")
        self.unk_id = 0
        self.motion_base = self.n_text
        self.special_base = self.n_text + self.n_motion
        self.eos_id = self._ids[EOS]
        self.pad_id = self._ids[PAD]
        self.sep_id = self._ids[SEP]
        self.motion_open_id = self._ids[MOTION_OPEN]
        self.motion_close_id = self._ids[MOTION_CLOSE]

    def __len__(self) -> int:
        return len(self._surfaces)

    @classmethod
    def build(cls, corpus: Iterable[str], codebook_size: int) -> "UnifiedVocabulary":
        """Collect text words from a corpus in first-occurrence order.

        Special-token and motion-token surface forms inside corpus documents
        are atomic and never enter the text region.
        """
        words: dict[str, None] = {}
        for doc in corpus:
            for part in _ATOM_RE.split(doc):
                if not part or _ATOM_RE.fullmatch(part):
                    continue
                for word in part.split():
                    words.setdefault(word, None)
        if not words:
            raise ValueError("corpus is empty")
        return cls([UNK] + list(words), codebook_size)

    # --- region predicates -------------------------------------------------
    def is_text(self, token_id: int) -> bool:
        return 0 <= token_id < self.n_text

    def is_motion(self, token_id: int) -> bool:
        return self.motion_base <= token_id < self.special_base

    def is_special(self, token_id: int) -> bool:
        return self.special_base <= token_id < len(self._surfaces)

    def surface(self, token_id: int) -> str:
        return self._surfaces[token_id]

    def motion_token_id(self, k: int) -> int:
        if not 0 <= k < self.codebook_size:
            raise InvalidTokenError(
                f"motion token id {k} outside codebook of size {self.codebook_size}"
            )
        return self.motion_base + k

    def motion_index(self, token_id: int) -> int:
        if not self.is_motion(token_id):
            raise InvalidTokenError(f"token id {token_id} is not a motion token")
        return token_id - self.motion_base

    # --- text <-> ids ------------------------------------------------------
    def encode(self, text: str) -> list[int]:
        """Tokenize text; unknown words map to the text-region fallback id."""
        ids: list[int] = []
        for part in _ATOM_RE.split(text):
            if not part:
                continue
            atom = self._ids.get(part)
            if atom is not None and (
                part in SPECIAL_TOKENS or _MOTION_ID_RE.fullmatch(part)
            ):
                ids.append(atom)
                continue
            match = _MOTION_ID_RE.fullmatch(part)
            if match:
                raise InvalidTokenError(
                    f"motion token {part} outside codebook of size {self.codebook_size}"
                )
            for word in part.split():
                ids.append(self._ids.get(word, self.unk_id))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        """Render ids back to text.

        Words are space-separated; ``<SEP>`` glues to both neighbours, motion
        markers glue inward, and adjacent motion tokens glue together, so
        serialized scripts and wrapped motion spans round-trip exactly.
        """
        out: list[str] = []
        prev: int | None = None
        for token_id in ids:
            surface = self._surfaces[token_id]
            if prev is not None and self._space_between(prev, token_id):
                out.append(" ")
            out.append(surface)
            prev = token_id
        return "".join(out)

    def _space_between(self, prev: int, cur: int) -> bool:
        if prev in (self.motion_open_id, self.sep_id):
            return False
        if cur in (self.motion_close_id, self.sep_id):
            return False
        if self.is_motion(prev) and self.is_motion(cur):
            return False
        return True

    # --- motion spans ------------------------------------------------------
    def wrap_motion(self, tokens: Iterable[int]) -> list[int]:
        """``<Motion Tokens>`` + mapped motion ids + ``</Motion Tokens>``."""
        return (
            [self.motion_open_id]
            + [self.motion_token_id(t) for t in tokens]
            + [self.motion_close_id]
        )

    def extract_motion_spans(self, ids: Iterable[int]) -> ExtractResult:
        """Pull every marker-delimited motion span out of a (possibly malformed) stream.

        Never fatal: unclosed spans are closed at end of stream, stray motion
        ids and markers are dropped, all with positioned diagnostics. The
        residual is the stream minus spans, markers, and dropped tokens.
        """
        spans: list[tuple[int, ...]] = []
        residual: list[int] = []
        diagnostics: list[Diagnostic] = []
        current: list[int] | None = None
        pos = -1
        for pos, token_id in enumerate(ids):
            if current is None:
                if token_id == self.motion_open_id:
                    current = []
                elif token_id == self.motion_close_id:
                    diagnostics.append(Diagnostic("stray </Motion Tokens> dropped", pos))
                elif self.is_motion(token_id):
                    diagnostics.append(
                        Diagnostic("motion token outside markers dropped", pos)
                    )
                else:
                    residual.append(token_id)
            else:
                if token_id == self.motion_close_id:
                    spans.append(tuple(current))
                    current = None
                elif token_id == self.motion_open_id:
                    diagnostics.append(
                        Diagnostic("nested <Motion Tokens>; previous span closed", pos)
                    )
                    spans.append(tuple(current))
                    current = []
                elif self.is_motion(token_id):
                    current.append(self.motion_index(token_id))
                else:
                    diagnostics.append(
                        Diagnostic("non-motion token inside motion span dropped", pos)
                    )
        if current is not None:
            diagnostics.append(Diagnostic("unclosed motion span at end of stream", pos + 1))
            spans.append(tuple(current))
        return ExtractResult(
            tuple(spans), tuple(residual), self.decode(residual), tuple(diagnostics)
        )

    # --- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        lines = [f"{self.n_text} {self.n_motion} {self.n_special}"]
        lines.extend(self._surfaces)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "UnifiedVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        n_text, n_motion, n_special = (int(x) for x in lines[0].split())
        surfaces = lines[1:1 + n_text + n_motion + n_special]
        if len(surfaces) != n_text + n_motion + n_special:
            raise ValueError(f"vocabulary file {path} is shorter than its header claims")
        vocab = cls(surfaces[:n_text], n_motion)
        if vocab._surfaces != surfaces:
            raise ValueError(f"vocabulary file {path} has inconsistent regions")
        return vocab


def build_vocab(text_corpus: Iterable[str], codebook_size: int) -> UnifiedVocabulary:
    return UnifiedVocabulary.build(text_corpus, codebook_size)
