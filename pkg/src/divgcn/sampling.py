"""Node Flow construction and category-aware sampling.

Neighbor draws are weighted sampling without replacement. They are done for
all seed nodes of a hop at once with exponential race keys: every candidate
edge gets ``Exp(1) / weight`` and each node keeps its smallest ``n`` keys,
which has the same law as drawing one neighbor at a time with probabilities
renormalized over what is left.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BipartiteGraph


def histogram_and_rebalance(neighbors, categories, alpha: float) -> np.ndarray:
    """Sampling probabilities over ``neighbors`` with category counts flattened.

    ``categories`` maps item index -> category (array or mapping). Each
    neighbor gets weight ``(1 / H[c]) ** alpha`` where ``H`` is the category
    histogram of the list, then the weights are normalized.
    """
    neighbors = np.asarray(neighbors)
    if neighbors.size == 0:
        raise ValueError("neighbor list is empty")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    cats = np.asarray([categories[int(i)] for i in neighbors])
    _, inverse, counts = np.unique(cats, return_inverse=True, return_counts=True)
    weights = (1.0 / counts[inverse]) ** alpha
    return weights / weights.sum()


def edge_weights(graph: BipartiteGraph, item_categories: np.ndarray, alpha: float) -> np.ndarray:
    """Per-edge sampling probabilities aligned with ``graph.csr``.

    User rows use the rebalanced distribution, item rows are uniform.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    indptr, indices = graph.csr
    deg = np.diff(indptr)
    weights = np.repeat(1.0 / np.maximum(deg, 1), deg)
    n_user_edges = int(indptr[graph.n_users])
    if alpha == 0 or n_user_edges == 0:
        return weights
    # category histogram per user row, via (row, category) pair counts
    rows = np.repeat(np.arange(graph.n_users), deg[:graph.n_users])
    cats = item_categories[indices[:n_user_edges] - graph.n_users]
    key = rows * (int(item_categories.max()) + 1) + cats
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    w = (1.0 / counts[inverse]) ** alpha
    totals = np.bincount(rows, weights=w, minlength=graph.n_users)
    weights[:n_user_edges] = w / totals[rows]
    return weights


def sample_rows(indptr: np.ndarray, indices: np.ndarray, weights: np.ndarray,
                rows: np.ndarray, fanout: int, rng: np.random.Generator):
    """Draw ``min(fanout, degree)`` distinct neighbors for every entry of ``rows``.

    Returns ``(offsets, picked)``: the neighbors of ``rows[r]`` are
    ``picked[offsets[r]:offsets[r + 1]]``. Rows may repeat.
    """
    rows = np.asarray(rows, dtype=np.int64)
    starts = indptr[rows]
    deg = indptr[rows + 1] - starts
    counts = np.minimum(deg, fanout)
    offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    out = np.empty(int(offsets[-1]), dtype=np.int64)
    # rows that fit the fan-out keep their whole neighborhood, no draw needed
    small = deg <= fanout
    _gather(indptr, indices, rows[small], offsets[:-1][small], out)
    big = np.flatnonzero(~small)
    if big.size:
        b_start, b_deg = starts[big], deg[big]
        seg_start = np.zeros(big.size + 1, dtype=np.int64)
        np.cumsum(b_deg, out=seg_start[1:])
        seg = np.repeat(np.arange(big.size), b_deg)
        edge = np.arange(int(seg_start[-1])) - seg_start[seg] + b_start[seg]
        keys = rng.exponential(size=edge.size) / weights[edge]
        # segment id plus a key squashed into [0, 1) sorts by (segment, key)
        order = np.argsort(seg + keys / (1.0 + keys), kind="stable")
        rank = np.arange(edge.size) - seg_start[seg]
        chosen = order[rank < fanout]
        dest = np.repeat(offsets[big], fanout) + np.tile(np.arange(fanout), big.size)
        out[dest] = indices[edge[chosen]]
    return offsets, out


def _gather(indptr, indices, rows, dest_start, out):
    deg = indptr[rows + 1] - indptr[rows]
    if not deg.sum():
        return
    seg = np.repeat(np.arange(len(rows)), deg)
    first = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(deg, out=first[1:])
    within = np.arange(int(first[-1])) - first[seg]
    out[dest_start[seg] + within] = indices[indptr[rows][seg] + within]


@dataclass
class Block:
    """One hop of a Node Flow.

    ``nodes`` are the hop's seeds (sorted, unique). The sampled list of
    ``nodes[r]`` is ``neighbors[offsets[r]:offsets[r + 1]]``, self first.
    ``sources`` is the sorted union of all sampled lists and ``local`` maps
    each entry of ``neighbors`` to its position in ``sources``.
    """

    nodes: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray
    sources: np.ndarray
    local: np.ndarray

    def sampled(self, r: int) -> np.ndarray:
        return self.neighbors[self.offsets[r]:self.offsets[r + 1]]


@dataclass
class NodeFlow:
    seeds: np.ndarray
    blocks: list[Block]

    @property
    def depth(self) -> int:
        return len(self.blocks)


def discover_neighbors(graph: BipartiteGraph, seeds, depth: int, fanout: int,
                       item_categories: np.ndarray, alpha: float, rng: np.random.Generator,
                       weights: np.ndarray | None = None) -> NodeFlow:
    """Build a ``depth``-block Node Flow from global seed node ids.

    Every seed keeps itself plus up to ``fanout`` distinct sampled neighbors;
    the union of a hop's sampled lists seeds the next hop. ``weights`` may be
    a precomputed :func:`edge_weights` array for the same ``alpha``.
    """
    if depth < 1 or fanout < 1:
        raise ValueError("depth and fanout must be >= 1")
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if seeds.size and (seeds[0] < 0 or seeds[-1] >= graph.n_nodes):
        raise ValueError("seed node not in graph")
    if weights is None:
        weights = edge_weights(graph, item_categories, alpha)
    indptr, indices = graph.csr
    blocks = []
    current = seeds
    for _ in range(depth):
        offsets, picked = sample_rows(indptr, indices, weights, current, fanout, rng)
        counts = np.diff(offsets) + 1
        full_off = np.zeros(len(current) + 1, dtype=np.int64)
        np.cumsum(counts, out=full_off[1:])
        neighbors = np.empty(int(full_off[-1]), dtype=np.int64)
        neighbors[full_off[:-1]] = current
        mask = np.ones(len(neighbors), dtype=bool)
        mask[full_off[:-1]] = False
        neighbors[mask] = picked
        sources, local = np.unique(neighbors, return_inverse=True)
        blocks.append(Block(current, full_off, neighbors, sources, local.ravel()))
        current = sources
    return NodeFlow(seeds, blocks)


# ------------------------------------------------------------ negatives

@dataclass
class Samples:
    """Training samples ``(u, i, y, c)`` as parallel arrays."""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray
    cats: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    def take(self, idx) -> "Samples":
        return Samples(self.users[idx], self.items[idx], self.labels[idx], self.cats[idx])


def positive_samples(pairs: np.ndarray, item_categories: np.ndarray) -> Samples:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return Samples(pairs[:, 0].copy(), pairs[:, 1].copy(),
                   np.ones(len(pairs), dtype=np.int64), item_categories[pairs[:, 1]])


def _category_members(item_categories: np.ndarray):
    order = np.argsort(item_categories, kind="stable")
    counts = np.bincount(item_categories)
    starts = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    position = np.empty_like(order)
    position[order] = np.arange(len(order)) - starts[item_categories[order]]
    return order, starts, position


def boosted_negative_sampling(positives: Samples, n_items: int, rate: int,
                              item_categories: np.ndarray, beta: float,
                              rng: np.random.Generator,
                              exclude: list[np.ndarray] | None = None) -> Samples:
    """Append ``rate`` negatives per positive.

    Each negative comes, with probability ``beta``, uniformly from the
    positive's own category minus the positive item, otherwise uniformly from
    all items minus the positive item. An empty own-category pool falls back
    to the catalog draw. ``exclude`` (per-user sorted item arrays) optionally
    rejects a user's known positives as negatives.
    """
    if n_items < 2:
        raise ValueError("need at least two items to draw negatives")
    if rate < 1:
        raise ValueError(f"negative rate must be >= 1, got {rate}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    users = np.repeat(positives.users, rate)
    pos = np.repeat(positives.items, rate)
    members, starts, position = _category_members(item_categories)
    cat = item_categories[pos]
    pool = starts[cat + 1] - starts[cat]
    similar = (rng.random(len(pos)) < beta) & (pool > 1)
    neg = _draw(pos, similar, members, starts, position, cat, pool, n_items, rng)
    if exclude is not None:
        neg = _reject_known(users, pos, neg, similar, exclude, members, starts,
                            position, cat, pool, n_items, rng)
    return Samples(
        np.concatenate([positives.users, users]),
        np.concatenate([positives.items, neg]),
        np.concatenate([positives.labels, np.zeros(len(neg), dtype=np.int64)]),
        np.concatenate([positives.cats, item_categories[neg]]),
    )


def _draw(pos, similar, members, starts, position, cat, pool, n_items, rng):
    # uniform draw over a pool minus one element: draw from size-1, skip the hole
    out = np.empty(len(pos), dtype=np.int64)
    j = (rng.random(len(pos)) * np.where(similar, pool - 1, n_items - 1)).astype(np.int64)
    s = similar
    js = j[s]
    js = js + (js >= position[pos[s]])
    out[s] = members[starts[cat[s]] + js]
    js = j[~s]
    out[~s] = js + (js >= pos[~s])
    return out


def _reject_known(users, pos, neg, similar, exclude, members, starts, position,
                  cat, pool, n_items, rng, max_rounds: int = 1000):
    def clash(idx):
        return np.array([_contains(exclude[users[k]], neg[k]) for k in idx], dtype=bool)

    bad = np.flatnonzero(clash(np.arange(len(neg))))
    for rounds in range(max_rounds):
        if bad.size == 0:
            return neg
        if rounds == 50:
            similar = similar.copy()
            similar[bad] = False
        neg[bad] = _draw(pos[bad], similar[bad], members, starts, position,
                         cat[bad], pool[bad], n_items, rng)
        bad = bad[clash(bad)]
    raise ValueError("could not draw negatives outside the users' known items")


def _contains(sorted_arr: np.ndarray, value) -> bool:
    k = np.searchsorted(sorted_arr, value)
    return k < len(sorted_arr) and sorted_arr[k] == value
