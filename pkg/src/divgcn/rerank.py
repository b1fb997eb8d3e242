"""Greedy post-hoc diversification baselines (MMR and DUM)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .data import DataError


@dataclass(frozen=True)
class Candidate:
    item: int
    relevance: float
    category: int


def _arrays(candidates: Sequence[Candidate]):
    if not candidates:
        raise ValueError("no candidates to rerank")
    items = np.array([c.item for c in candidates], dtype=np.int64)
    rel = np.array([c.relevance for c in candidates], dtype=float)
    cats = np.array([c.category for c in candidates], dtype=np.int64)
    if not np.all(np.isfinite(rel)):
        raise ValueError("candidate relevance must be finite")
    if len(np.unique(items)) != len(items):
        raise ValueError("duplicate candidate items")
    return items, rel, cats


def _check_k(k_out: int, n: int) -> None:
    if not 1 <= k_out <= n:
        raise ValueError(f"k_out={k_out} must be in [1, {n}]")


def _argmax(values: np.ndarray, items: np.ndarray, allowed: np.ndarray) -> int:
    # best value among allowed positions, lower item id on ties
    idx = np.flatnonzero(allowed)
    v = values[idx]
    top = idx[v == v.max()]
    return int(top[np.argmin(items[top])])


def relevance_sort(candidates: Sequence[Candidate], k_out: int | None = None) -> list[int]:
    items, rel, _ = _arrays(candidates)
    order = np.lexsort((items, -rel))
    k_out = len(items) if k_out is None else k_out
    _check_k(k_out, len(items))
    return items[order[:k_out]].tolist()


def mmr_rerank(candidates: Sequence[Candidate], lam: float, k_out: int,
               vectors: np.ndarray | None = None) -> list[int]:
    """Maximal marginal relevance with ``lam * rel - (1 - lam) * max_sim``.

    Similarity is 1 for a shared category and 0 otherwise, unless
    ``vectors`` (one row per candidate) is given, in which case cosine
    similarity is used.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    items, rel, cats = _arrays(candidates)
    _check_k(k_out, len(items))
    if vectors is None:
        sim = (cats[:, None] == cats[None, :]).astype(float)
    else:
        v = np.asarray(vectors, dtype=float)
        v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
        sim = v @ v.T
    remaining = np.ones(len(items), dtype=bool)
    first = _argmax(rel, items, remaining)
    picked = [first]
    remaining[first] = False
    max_sim = sim[first].copy()
    while len(picked) < k_out:
        j = _argmax(lam * rel - (1.0 - lam) * max_sim, items, remaining)
        picked.append(j)
        remaining[j] = False
        np.maximum(max_sim, sim[j], out=max_sim)
    return items[picked].tolist()


def dum_rerank(candidates: Sequence[Candidate], k_out: int) -> list[int]:
    """Greedy coverage-first selection.

    While some remaining item has an uncovered category, take the most
    relevant such item; after that, fall back to plain relevance.
    """
    items, rel, cats = _arrays(candidates)
    _check_k(k_out, len(items))
    remaining = np.ones(len(items), dtype=bool)
    covered: set[int] = set()
    picked = []
    while len(picked) < k_out:
        fresh = remaining & ~np.isin(cats, list(covered))
        j = _argmax(rel, items, fresh if fresh.any() else remaining)
        picked.append(j)
        remaining[j] = False
        covered.add(int(cats[j]))
    return items[picked].tolist()


def coverage(items: Sequence[int], candidates: Sequence[Candidate]) -> int:
    cat = {c.item: c.category for c in candidates}
    return len({cat[i] for i in items})


def read_candidates(source: IO[str]) -> list[Candidate]:
    """Parse ``item_id,score,category_id`` CSV (integer ids)."""
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["item_id", "score", "category_id"]:
        raise DataError("line 1: expected header item_id,score,category_id")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            item, rel, cat = row
            out.append(Candidate(int(item), float(rel), int(cat)))
        except ValueError:
            raise DataError(f"line {lineno}: malformed candidate row {row!r}") from None
    return out


def write_ranking(sink: IO[str], items: Sequence[int], candidates: Sequence[Candidate]) -> None:
    by_item = {c.item: c for c in candidates}
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["rank", "item_id", "score", "category_id"])
    for rank, item in enumerate(items, start=1):
        c = by_item[item]
        w.writerow([rank, c.item, repr(c.relevance), c.category])
