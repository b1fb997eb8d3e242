"""Interaction log ingestion, k-core filtering, temporal split and graph build."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, NamedTuple

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class Interaction(NamedTuple):
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class CategoryTable:
    """Total map item -> dense category index in ``[0, num_categories)``."""

    index: dict[str, int]
    labels: list[str]

    @property
    def num_categories(self) -> int:
        return len(self.labels)

    def __getitem__(self, item_id: str) -> int:
        return self.index[item_id]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.index

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "CategoryTable":
        pairs = list(pairs)
        labels = sorted({c for _, c in pairs}, key=_label_key)
        pos = {c: k for k, c in enumerate(labels)}
        return cls({item: pos[c] for item, c in pairs}, labels)

    def restrict(self, items: Iterable[str]) -> "CategoryTable":
        return CategoryTable.from_pairs((i, self.labels[self.index[i]]) for i in items)


def _label_key(label: str):
    # numeric labels sort numerically, everything else lexically after them
    try:
        return (0, int(label), "")
    except ValueError:
        return (1, 0, label)


@dataclass
class DatasetSplit:
    train: list[Interaction]
    validation: list[Interaction]
    test: list[Interaction]


@dataclass
class BipartiteGraph:
    """Undirected user-item graph built from the training interactions.

    Users are indexed ``[0, n_users)`` and items ``[0, n_items)``. Global node
    ids (used by the sampler and the model) put users first and items after,
    so item ``j`` is node ``n_users + j``.
    """

    user_adj: list[np.ndarray]
    item_adj: list[np.ndarray]
    user_ids: list[str]
    item_ids: list[str]
    user_index: dict[str, int] = field(repr=False)
    item_index: dict[str, int] = field(repr=False)

    @property
    def n_users(self) -> int:
        return len(self.user_adj)

    @property
    def n_items(self) -> int:
        return len(self.item_adj)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def n_edges(self) -> int:
        return int(sum(len(a) for a in self.user_adj))

    def is_user(self, node: int) -> bool:
        return node < self.n_users

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) over global node ids, neighbors sorted."""
        rows = [a + self.n_users for a in self.user_adj] + list(self.item_adj)
        degree = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(degree, out=indptr[1:])
        indices = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
        return indptr, indices

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.csr[0])

    def neighbors(self, node: int) -> np.ndarray:
        indptr, indices = self.csr
        return indices[indptr[node]:indptr[node + 1]]

    def edges(self) -> set[tuple[int, int]]:
        return {(u, int(i)) for u, adj in enumerate(self.user_adj) for i in adj}


# ---------------------------------------------------------------- ingestion

def _text(source: IO) -> io.TextIOBase:
    if isinstance(source, (io.TextIOBase, io.StringIO)):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _rows(source: IO, header: list[str]):
    reader = csv.reader(_text(source))
    try:
        first = next(reader)
    except StopIteration:
        raise DataError(f"missing header, expected {','.join(header)}") from None
    if [h.strip() for h in first] != header:
        raise DataError(f"line 1: expected header {','.join(header)}, got {','.join(first)}")
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, [f.strip() for f in row]


def read_interactions(source: IO) -> list[Interaction]:
    """Parse ``user_id,item_id,timestamp`` CSV, keeping input order and duplicates."""
    out = []
    for lineno, (user, item, ts) in _rows(source, ["user_id", "item_id", "timestamp"]):
        if not user or not item:
            raise DataError(f"line {lineno}: empty id")
        try:
            stamp = int(ts)
        except ValueError:
            raise DataError(f"line {lineno}: timestamp {ts!r} is not an integer") from None
        out.append(Interaction(user, item, stamp))
    return out


def read_categories(source: IO) -> CategoryTable:
    pairs = {}
    for lineno, (item, cat) in _rows(source, ["item_id", "category_id"]):
        if not item or not cat:
            raise DataError(f"line {lineno}: empty field")
        if item in pairs and pairs[item] != cat:
            raise DataError(f"line {lineno}: item {item!r} has two categories")
        pairs[item] = cat
    return CategoryTable.from_pairs(pairs.items())


def ingest_interactions(source: IO, categories: IO | None = None):
    """Read interactions and, if given, the category file.

    Returns the interaction list alone, or ``(interactions, table)`` when a
    category stream is passed; every interacted item must have a category.
    """
    interactions = read_interactions(source)
    if categories is None:
        return interactions
    table = read_categories(categories)
    for x in interactions:
        if x.item_id not in table:
            raise DataError(f"item {x.item_id!r} has no category mapping")
    return interactions, table


def write_interactions(path, interactions: Iterable[Interaction]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_id", "timestamp"])
        w.writerows(interactions)


def write_categories(path, table: CategoryTable, items: Iterable[str] | None = None) -> None:
    items = table.index if items is None else items
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "category_id"])
        for item in items:
            w.writerow([item, table.labels[table.index[item]]])


def load_interactions(path) -> list[Interaction]:
    with open(path, "rb") as fh:
        return read_interactions(fh)


def load_categories(path) -> CategoryTable:
    with open(path, "rb") as fh:
        return read_categories(fh)


# --------------------------------------------------------------- filtering

def k_core_filter(interactions: list[Interaction], k: int = 10) -> list[Interaction]:
    """Drop users and items with fewer than ``k`` interactions until a fixpoint."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    current = list(interactions)
    while True:
        users = Counter(x.user_id for x in current)
        items = Counter(x.item_id for x in current)
        kept = [x for x in current if users[x.user_id] >= k and items[x.item_id] >= k]
        if len(kept) == len(current):
            return kept
        current = kept


def temporal_split(interactions: list[Interaction],
                   ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> DatasetSplit:
    """Global split by timestamp: first share to train, next to validation, rest to test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be 3 nonnegative values summing to 1, got {ratios}")
    if not interactions:
        raise DataError("cannot split an empty interaction log")
    ordered = sorted(interactions, key=lambda x: x.timestamp)  # stable
    n = len(ordered)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return DatasetSplit(ordered[:n_train],
                        ordered[n_train:n_train + n_val],
                        ordered[n_train + n_val:])


def build_graph(train: list[Interaction]) -> BipartiteGraph:
    """Collapse duplicate pairs into single undirected edges and re-index ids.

    Indices are assigned in order of first appearance.
    """
    if not train:
        raise DataError("cannot build a graph from an empty training set")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    edges = set()
    for x in train:
        u = user_index.setdefault(x.user_id, len(user_index))
        i = item_index.setdefault(x.item_id, len(item_index))
        edges.add((u, i))
    u_lists: list[list[int]] = [[] for _ in user_index]
    i_lists: list[list[int]] = [[] for _ in item_index]
    for u, i in sorted(edges):
        u_lists[u].append(i)
        i_lists[i].append(u)
    return BipartiteGraph(
        user_adj=[np.array(a, dtype=np.int64) for a in u_lists],
        item_adj=[np.array(sorted(a), dtype=np.int64) for a in i_lists],
        user_ids=list(user_index),
        item_ids=list(item_index),
        user_index=user_index,
        item_index=item_index,
    )


# ------------------------------------------------------------ indexed view

@dataclass
class Dataset:
    """Everything training and evaluation need, in index space."""

    graph: BipartiteGraph
    item_categories: np.ndarray  # item index -> category index
    num_categories: int
    train: np.ndarray  # (n, 2) user/item index pairs, duplicates kept
    validation: np.ndarray
    test: np.ndarray

    @property
    def n_users(self) -> int:
        return self.graph.n_users

    @property
    def n_items(self) -> int:
        return self.graph.n_items

    def train_items(self) -> list[np.ndarray]:
        return self.graph.user_adj

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "validation", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)


def _to_index(rows: list[Interaction], graph: BipartiteGraph) -> np.ndarray:
    # interactions whose user or item is not in the training graph are dropped
    out = [(graph.user_index[x.user_id], graph.item_index[x.item_id]) for x in rows
           if x.user_id in graph.user_index and x.item_id in graph.item_index]
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def make_dataset(split: DatasetSplit, table: CategoryTable) -> Dataset:
    graph = build_graph(split.train)
    missing = [i for i in graph.item_ids if i not in table]
    if missing:
        raise DataError(f"item {missing[0]!r} has no category mapping")
    cats = np.array([table[i] for i in graph.item_ids], dtype=np.int64)
    return Dataset(graph, cats, table.num_categories,
                   _to_index(split.train, graph),
                   _to_index(split.validation, graph),
                   _to_index(split.test, graph))
