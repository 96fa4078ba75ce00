"""Prompt refinement: attention-window token scoring and sentence selection.

Both ends of the protocol tokenize with the same deterministic reference
tokenizer (whitespace word split, punctuation as separate tokens), so a
selection mask computed on one side reconstructs the identical refined
prompt on the other.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from math import ceil
from typing import Sequence

import numpy as np

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_SENTENCE_BREAK = frozenset(".!?\n")


def tokenize(text: str) -> list[str]:
    """Whitespace word split with punctuation characters as their own tokens."""
    return _TOKEN_RE.findall(text)


def split_sentences(text: str) -> list[str]:
    """Split on '.', '!', '?' and newline, keeping terminators with their sentence.

    Segments that tokenize to nothing (stray whitespace) are dropped.
    """
    pieces: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch in _SENTENCE_BREAK:
            pieces.append(text[start : i + 1])
            start = i + 1
    pieces.append(text[start:])
    return [p for p in pieces if _TOKEN_RE.search(p)]


@dataclass(frozen=True)
class TokenizedPrompt:
    """Prompt split into fixed prefix, refinable content and fixed suffix.

    ``sentence_ids`` labels each content token with its sentence, contiguous
    and nondecreasing from zero.
    """

    prefix: tuple[str, ...]
    content: tuple[str, ...]
    sentence_ids: tuple[int, ...]
    suffix: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.sentence_ids) != len(self.content):
            raise ValueError("one sentence id per content token required")
        prev = -1
        for sid in self.sentence_ids:
            if sid not in (prev, prev + 1):
                raise ValueError("sentence ids must be contiguous and nondecreasing")
            prev = max(prev, sid)

    @property
    def total_tokens(self) -> int:
        return len(self.prefix) + len(self.content) + len(self.suffix)

    @property
    def content_span(self) -> slice:
        return slice(len(self.prefix), len(self.prefix) + len(self.content))

    @classmethod
    def from_text(cls, prefix: str, content: str, suffix: str) -> "TokenizedPrompt":
        content_tokens: list[str] = []
        ids: list[int] = []
        for sid, sentence in enumerate(split_sentences(content)):
            toks = tokenize(sentence)
            content_tokens.extend(toks)
            ids.extend([sid] * len(toks))
        return cls(
            prefix=tuple(tokenize(prefix)),
            content=tuple(content_tokens),
            sentence_ids=tuple(ids),
            suffix=tuple(tokenize(suffix)),
        )


@dataclass(frozen=True)
class AttentionInputs:
    """Observation-window queries against the full key (and optional value) set.

    One instance per attention head. ``hidden_size`` feeds the score scale
    and is carried separately from the matrix width so callers control it.
    """

    q_window: np.ndarray  # [w, dim]
    k_full: np.ndarray    # [n_keys, dim]
    hidden_size: int
    v_full: np.ndarray | None = None
    heads: int = 1

    def __post_init__(self) -> None:
        q, k = np.asarray(self.q_window), np.asarray(self.k_full)
        if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
            raise ValueError(f"query/key shape mismatch: {q.shape} vs {k.shape}")
        if q.shape[0] > k.shape[0]:
            raise ValueError("observation window cannot exceed the key count")
        if self.hidden_size <= 0:
            raise ValueError("hidden_size must be positive")
        if not (np.isfinite(q).all() and np.isfinite(k).all()):
            raise ValueError("non-finite attention inputs")
        if self.v_full is not None:
            v = np.asarray(self.v_full)
            if v.ndim != 2 or v.shape[0] != k.shape[0]:
                raise ValueError(f"value shape mismatch: {v.shape} vs keys {k.shape}")
            if not np.isfinite(v).all():
                raise ValueError("non-finite attention inputs")


def attention_weights(inputs: AttentionInputs) -> tuple[np.ndarray, np.ndarray | None]:
    """Scaled dot-product weights softmax(Q K^T / sqrt(hidden)) for one head.

    Returns (weights [w, n_keys], weights @ V or None). Each weight row is a
    probability vector.
    """
    q = np.asarray(inputs.q_window, dtype=np.float64)
    k = np.asarray(inputs.k_full, dtype=np.float64)
    logits = q @ k.T / np.sqrt(float(inputs.hidden_size))
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    if inputs.v_full is None:
        return weights, None
    return weights, weights @ np.asarray(inputs.v_full, dtype=np.float64)


def max_pool_1d(values: np.ndarray, kernel: int) -> np.ndarray:
    """Same-length 1D max pooling, truncated at the edges."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    x = np.asarray(values, dtype=np.float64)
    if kernel == 1 or x.size == 0:
        return x.copy()
    half = kernel // 2
    padded = np.full(x.size + 2 * half, -np.inf)
    padded[half : half + x.size] = x
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel)
    return windows.max(axis=1)


@dataclass(frozen=True, eq=False)
class TokenScores:
    """Nonnegative importance score per content token."""

    scores: np.ndarray
    pooling_kernel: int = 1

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1 or not np.isfinite(arr).all():
            raise ValueError("scores must be a finite 1-D vector")
        object.__setattr__(self, "scores", arr)

    def __len__(self) -> int:
        return int(self.scores.size)


def score_tokens(
    weights_per_head: Sequence[np.ndarray],
    window: int,
    kernel: int,
    content_span: slice | None = None,
    head_aggregation: str = "sum",
) -> TokenScores:
    """Collapse per-head attention weights into one score per content token.

    Per head: sum the trailing ``window`` query rows, then max-pool with
    ``kernel``. Heads combine by summation (default) or elementwise max,
    selectable because per-head top-k voting has no canonical conflict rule.
    """
    if not weights_per_head:
        raise ValueError("at least one head required")
    if window < 1:
        raise ValueError("window must be >= 1")
    if head_aggregation not in ("sum", "max"):
        raise ValueError(f"unknown head aggregation {head_aggregation!r}")
    n_keys = np.asarray(weights_per_head[0]).shape[1]
    combined: np.ndarray | None = None
    for head in weights_per_head:
        w = np.asarray(head, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != n_keys:
            raise ValueError("all heads must share the key dimension")
        rows = w[-window:] if w.shape[0] > window else w
        pooled = max_pool_1d(rows.sum(axis=0), kernel)
        if combined is None:
            combined = pooled
        elif head_aggregation == "sum":
            combined += pooled
        else:
            combined = np.maximum(combined, pooled)
    assert combined is not None
    if content_span is not None:
        combined = combined[content_span]
    return TokenScores(scores=combined, pooling_kernel=kernel)


class SelectionMask:
    """One bit per prompt token; 1 selects the token for the refined prompt."""

    __slots__ = ("bits",)

    def __init__(self, bits) -> None:
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.ndim != 1:
            raise ValueError("mask bits must be 1-D")
        if arr.size and arr.max() > 1:
            raise ValueError("mask bits must be 0 or 1")
        self.bits = arr

    def __len__(self) -> int:
        return int(self.bits.size)

    def popcount(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SelectionMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"SelectionMask(len={len(self)}, selected={self.popcount()})"


def sentence_order(prompt: TokenizedPrompt, scores: TokenScores) -> list[int]:
    """Sentences sorted by descending mean token score, earlier position first on ties."""
    if len(scores) != len(prompt.content):
        raise ValueError(f"expected {len(prompt.content)} scores, got {len(scores)}")
    n_sentences = prompt.sentence_ids[-1] + 1 if prompt.sentence_ids else 0
    ids = np.asarray(prompt.sentence_ids, dtype=np.int64)
    totals = np.zeros(n_sentences)
    counts = np.zeros(n_sentences)
    np.add.at(totals, ids, scores.scores)
    np.add.at(counts, ids, 1.0)
    means = totals / counts
    return sorted(range(n_sentences), key=lambda sid: (-means[sid], sid))


def select_sentences(prompt: TokenizedPrompt, scores: TokenScores, ratio: float) -> SelectionMask:
    """Greedy whole-sentence selection until the token budget ceil(ratio * |content|) is met.

    Prefix and suffix are always kept. The greedy order does not depend on
    the ratio, so selections nest as the ratio grows. Empty content yields an
    all-ones mask (nothing to refine).
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    bits = np.ones(prompt.total_tokens, dtype=np.uint8)
    n_content = len(prompt.content)
    if n_content == 0 or ratio == 1.0:
        return SelectionMask(bits)
    budget = ceil(ratio * n_content)
    ids = np.asarray(prompt.sentence_ids)
    selected: set[int] = set()
    count = 0
    for sid in sentence_order(prompt, scores):
        selected.add(sid)
        count += int((ids == sid).sum())
        if count >= budget:
            break
    span = prompt.content_span
    keep = np.isin(ids, list(selected))
    bits[span] = keep.astype(np.uint8)
    return SelectionMask(bits)


def refined_text(prompt: TokenizedPrompt, mask: SelectionMask) -> list[str]:
    """Apply a selection mask: prefix, selected content sentences in order, suffix."""
    if len(mask) != prompt.total_tokens:
        raise ValueError(f"mask length {len(mask)} != prompt length {prompt.total_tokens}")
    span = prompt.content_span
    if not mask.bits[: span.start].all() or not mask.bits[span.stop :].all():
        raise ValueError("prefix and suffix tokens must all be selected")
    content_bits = mask.bits[span]
    body = [tok for tok, bit in zip(prompt.content, content_bits) if bit]
    return list(prompt.prefix) + body + list(prompt.suffix)
