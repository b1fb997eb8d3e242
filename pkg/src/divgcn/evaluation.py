"""Full-graph inference, exact top-K retrieval and accuracy/diversity metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import BipartiteGraph
from .model import ModelParameters

MEAN_ROW = "__mean__"
METRIC_COLUMNS = ("recall", "hit", "coverage", "entropy", "gini")


def full_mean_operator(graph: BipartiteGraph) -> sp.csr_matrix:
    """Row-stochastic average over each node's full neighborhood plus itself."""
    indptr, indices = graph.csr
    n = graph.n_nodes
    adj = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))
    adj = adj + sp.identity(n, format="csr")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return sp.diags(1.0 / deg) @ adj


def infer_all(graph: BipartiteGraph, params: ModelParameters):
    """Final-layer representations of every user and item (no sampling, no dropout)."""
    if params.n_users != graph.n_users or params.n_items != graph.n_items:
        raise ValueError("parameters do not match the graph")
    op = full_mean_operator(graph)
    h = params.embeddings
    for w in params.conv:
        h = np.tanh((op @ h) @ w.T)
    return h[:graph.n_users], h[graph.n_users:]


@dataclass
class Recommendations:
    """Ranked lists for a set of users: row ``r`` belongs to ``users[r]``."""

    users: np.ndarray
    items: np.ndarray  # (n_users, k)
    scores: np.ndarray

    @property
    def k(self) -> int:
        return self.items.shape[1]

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self):
        return iter(zip(self.users, self.items, self.scores))


def retrieve_topk(user_reps: np.ndarray, item_reps: np.ndarray, k: int,
                  exclusions: list[np.ndarray] | None = None,
                  users: np.ndarray | None = None) -> Recommendations:
    """Exact top-``k`` items by inner product, skipping each user's excluded items.

    Ties go to the lower item index.
    """
    users = np.arange(len(user_reps)) if users is None else np.asarray(users, dtype=np.int64)
    n_items = len(item_reps)
    widest = max((len(exclusions[u]) for u in users), default=0) if exclusions is not None else 0
    if k < 1 or k > n_items - widest:
        raise ValueError(f"k={k} infeasible with {n_items} items and up to {widest} exclusions")
    scores = user_reps[users] @ item_reps.T
    if exclusions is not None:
        rows = np.repeat(np.arange(len(users)), [len(exclusions[u]) for u in users])
        cols = np.concatenate([exclusions[u] for u in users]) if len(users) else []
        scores[rows, np.asarray(cols, dtype=np.int64)] = -np.inf
    # stable sort of negated scores puts lower indices first among ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return Recommendations(users, order, np.take_along_axis(scores, order, axis=1))


def ground_truth(pairs: np.ndarray, n_users: int) -> dict[int, set[int]]:
    truth: dict[int, set[int]] = {}
    for u, i in np.asarray(pairs).reshape(-1, 2):
        truth.setdefault(int(u), set()).add(int(i))
    return truth


def accuracy_metrics(recs: Recommendations, truth: dict[int, set[int]]):
    """Per-user recall and hit ratio for users that have ground-truth items.

    Returns ``(users, recall, hit)``; users without truth are skipped.
    """
    users, recall, hit = [], [], []
    for u, items, _ in recs:
        relevant = truth.get(int(u))
        if not relevant:
            continue
        found = len(relevant.intersection(items.tolist()))
        users.append(int(u))
        recall.append(found / len(relevant))
        hit.append(1.0 if found else 0.0)
    return np.array(users, dtype=np.int64), np.array(recall), np.array(hit)


def entropy(counts) -> float:
    """Shannon entropy (natural log) of a count vector; zeros are ignored."""
    counts = np.asarray(counts, dtype=float)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def gini(counts) -> float:
    """Gini index of counts over the whole category vocabulary (0 = equal)."""
    x = np.sort(np.asarray(counts, dtype=float))
    c = len(x)
    total = x.sum()
    if c == 0 or total == 0:
        raise ValueError("gini needs a nonempty, nonzero count vector")
    ranks = np.arange(1, c + 1)
    return float(2.0 * (ranks * x).sum() / (c * total) - (c + 1) / c)


def category_counts(items, item_categories: np.ndarray, n_categories: int) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)
    if items.size and (items.min() < 0 or items.max() >= len(item_categories)):
        raise ValueError("recommended item has no category")
    return np.bincount(item_categories[items], minlength=n_categories)


def diversity_metrics(recs: Recommendations, item_categories: np.ndarray, n_categories: int):
    """Per-user ``(coverage, entropy, gini)`` arrays aligned with ``recs.users``."""
    cov, ent, gin = [], [], []
    for _, items, _ in recs:
        counts = category_counts(items, item_categories, n_categories)
        cov.append(float(np.count_nonzero(counts)))
        ent.append(entropy(counts))
        gin.append(gini(counts))
    return np.array(cov), np.array(ent), np.array(gin)


@dataclass
class MetricsReport:
    k: int
    users: np.ndarray
    recall: np.ndarray
    hit: np.ndarray
    coverage: np.ndarray
    entropy: np.ndarray
    gini: np.ndarray

    def mean(self) -> dict[str, float]:
        if len(self.users) == 0:
            return {c: float("nan") for c in METRIC_COLUMNS}
        return {c: float(np.mean(getattr(self, c))) for c in METRIC_COLUMNS}

    def rows(self, labels: list[str] | None = None):
        for r, u in enumerate(self.users):
            name = labels[u] if labels is not None else str(int(u))
            yield [name] + [float(getattr(self, c)[r]) for c in METRIC_COLUMNS]
        mean = self.mean()
        yield [MEAN_ROW] + [mean[c] for c in METRIC_COLUMNS]

    def write_csv(self, path, labels: list[str] | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("user",) + METRIC_COLUMNS)
            for row in self.rows(labels):
                w.writerow([row[0]] + [repr(v) for v in row[1:]])

    def write_json(self, path, labels: list[str] | None = None) -> None:
        rows = [dict(zip(("user",) + METRIC_COLUMNS, row)) for row in self.rows(labels)]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"k": self.k, "rows": rows}, fh, indent=1)
            fh.write("\n")


def read_metrics_csv(path) -> tuple[dict[str, dict[str, float]], dict[str, float]]:
    """Load a metrics CSV back as ``(per_user, mean_row)``."""
    per_user, mean = {}, None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            values = {c: float(row[c]) for c in METRIC_COLUMNS}
            if row["user"] == MEAN_ROW:
                mean = values
            else:
                per_user[row["user"]] = values
    if mean is None:
        raise ValueError(f"{path}: no {MEAN_ROW} row")
    return per_user, mean


def evaluate(user_reps, item_reps, pairs: np.ndarray, k: int, item_categories: np.ndarray,
             n_categories: int, exclusions: list[np.ndarray] | None = None) -> MetricsReport:
    """Retrieve top-``k`` for every user with ground truth in ``pairs`` and score it."""
    truth = ground_truth(pairs, len(user_reps))
    users = np.array(sorted(truth), dtype=np.int64)
    recs = retrieve_topk(user_reps, item_reps, k, exclusions, users=users)
    ev_users, recall, hit = accuracy_metrics(recs, truth)
    cov, ent, gin = diversity_metrics(recs, item_categories, n_categories)
    return MetricsReport(k, ev_users, recall, hit, cov, ent, gin)


def linear_probe_accuracy(item_reps: np.ndarray, item_categories: np.ndarray,
                          n_categories: int, seed: int = 0, holdout: float = 0.3,
                          l2: float = 1e-3) -> float:
    """Held-out accuracy of a fresh softmax classifier on frozen item representations.

    Items are split at random; the probe (weights plus bias) is fit by L-BFGS
    on the remaining share with a small L2 penalty.
    """
    from scipy.optimize import minimize

    rng = np.random.default_rng(seed)
    n, d = item_reps.shape
    order = rng.permutation(n)
    n_test = max(1, int(round(holdout * n)))
    test, train = order[:n_test], order[n_test:]
    x = np.hstack([item_reps, np.ones((n, 1))])
    y = item_categories

    def objective(flat):
        w = flat.reshape(n_categories, d + 1)
        logits = x[train] @ w.T
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(len(train))
        loss = np.mean(lse - shifted[rows, y[train]]) + 0.5 * l2 * np.sum(w[:, :d] ** 2)
        p = np.exp(shifted - lse[:, None])
        p[rows, y[train]] -= 1.0
        grad = p.T @ x[train] / len(train)
        grad[:, :d] += l2 * w[:, :d]
        return loss, grad.ravel()

    res = minimize(objective, np.zeros(n_categories * (d + 1)), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500})
    w = res.x.reshape(n_categories, d + 1)
    pred = np.argmax(x[test] @ w.T, axis=1)
    return float(np.mean(pred == y[test]))
