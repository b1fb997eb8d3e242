"""AMSGrad and the training loop with early stopping."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, asdict, fields

import numpy as np

from .data import ConfigError, Dataset
from .evaluation import evaluate, infer_all
from .model import Gradients, ModelParameters, backward, forward
from .sampling import (boosted_negative_sampling, discover_neighbors, edge_weights,
                       positive_samples)

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


class AmsGrad:
    """Adam with the running max of the second moment, no bias correction.

    Embedding rows whose gradient is entirely zero are left alone, moments
    included (lazy sparse update).
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.v_hat: dict[str, np.ndarray] = {}
        self.steps = 0

    def _slot(self, name, shape):
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
            self.v_hat[name] = np.zeros(shape)
        return self.m[name], self.v[name], self.v_hat[name]

    def _update(self, name, param, grad, rows=None):
        m, v, v_hat = self._slot(name, param.shape)
        if rows is not None:
            m_r = self.beta1 * m[rows] + (1 - self.beta1) * grad
            v_r = self.beta2 * v[rows] + (1 - self.beta2) * grad * grad
            vh_r = np.maximum(v_hat[rows], v_r)
            m[rows], v[rows], v_hat[rows] = m_r, v_r, vh_r
            param[rows] -= self.lr * m_r / (np.sqrt(vh_r) + self.eps)
            return
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        np.maximum(v_hat, v, out=v_hat)
        param -= self.lr * m / (np.sqrt(v_hat) + self.eps)

    def step(self, params: ModelParameters, grads: Gradients) -> None:
        for name, g in _named(grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient in {name}")
        self.steps += 1
        rows, emb = _merge_rows(grads.embedding_rows, grads.embedding)
        live = np.any(emb != 0, axis=1)
        self._update("embeddings", params.embeddings, emb[live], rows[live])
        for k, g in enumerate(grads.conv):
            self._update(f"conv{k + 1}", params.conv[k], g)
        self._update("classifier", params.classifier, grads.classifier)


def _named(grads: Gradients):
    yield "embeddings", grads.embedding
    for k, g in enumerate(grads.conv):
        yield f"conv{k + 1}", g
    yield "classifier", grads.classifier


def _merge_rows(rows, values):
    uniq, inverse = np.unique(rows, return_inverse=True)
    if len(uniq) == len(rows):
        order = np.argsort(rows, kind="stable")
        return rows[order], values[order]
    merged = np.zeros((len(uniq), values.shape[1]))
    np.add.at(merged, inverse.ravel(), values)
    return uniq, merged


@dataclass
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 200
    patience: int = 10
    lr: float = 1e-3
    dropout: float = 0.1
    alpha: float = 1.0
    beta: float = 0.3
    gamma: float = 0.1
    negatives: int = 4
    fanout: int = 10
    depth: int = 2
    dim: int = 32
    seed: int = 0
    k_eval: int = 300
    exclude_known_negatives: bool = False

    def validate(self) -> "TrainConfig":
        positive = ("batch_size", "epochs", "lr", "negatives", "fanout", "depth", "dim", "k_eval")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.alpha < 0 or self.gamma < 0:
            raise ConfigError("alpha and gamma must be >= 0")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must be in [0, 1]")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        return self

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss_r: float
    loss_c: float
    val_recall: float
    val_coverage: float
    seconds: float


LOG_COLUMNS = ("epoch", "loss_r", "loss_c", "val_recall", "val_coverage", "seconds")


def write_log(path, records: list[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow([r.epoch, repr(r.loss_r), repr(r.loss_c), repr(r.val_recall),
                        repr(r.val_coverage), f"{r.seconds:.3f}"])


def train_epoch(data: Dataset, params: ModelParameters, opt: AmsGrad, config: TrainConfig,
                rng: np.random.Generator, weights: np.ndarray) -> tuple[float, float]:
    """One pass over freshly drawn samples; returns mean (L_r, L_c) over batches."""
    pos = positive_samples(data.train, data.item_categories)
    exclude = data.train_items() if config.exclude_known_negatives else None
    samples = boosted_negative_sampling(pos, data.n_items, config.negatives,
                                        data.item_categories, config.beta, rng, exclude)
    samples = samples.take(rng.permutation(len(samples)))
    n_users = data.n_users
    rec, cls = [], []
    for start in range(0, len(samples), config.batch_size):
        batch = samples.take(slice(start, start + config.batch_size))
        seeds = np.concatenate([batch.users, batch.items + n_users])
        flow = discover_neighbors(data.graph, seeds, config.depth, config.fanout,
                                  data.item_categories, config.alpha, rng, weights)
        trace = forward(flow, params, config.dropout, "train", rng)
        grads, report = backward(trace, batch, params, config.gamma)
        opt.step(params, grads)
        rec.append(report.rec)
        cls.append(report.cls)
    return float(np.mean(rec)), float(np.mean(cls))


def validation_report(data: Dataset, params: ModelParameters, k: int, split: str = "validation"):
    users, items = infer_all(data.graph, params)
    return evaluate(users, items, data.split(split), k, data.item_categories,
                    data.num_categories, data.train_items())


def fit(data: Dataset, config: TrainConfig, callback=None):
    """Train until validation recall@k stops improving for ``patience`` epochs.

    Returns the parameters of the best validation epoch and the epoch log.
    """
    config.validate()
    if len(data.validation) == 0:
        raise ConfigError("validation split is empty; early stopping has nothing to track")
    seq = np.random.SeedSequence(config.seed)
    init_seq, *epoch_seqs = seq.spawn(config.epochs + 1)
    params = ModelParameters.init(data.n_users, data.n_items, config.dim, config.depth,
                                  data.num_categories, np.random.default_rng(init_seq))
    opt = AmsGrad(lr=config.lr)
    weights = edge_weights(data.graph, data.item_categories, config.alpha)
    k_val = min(config.k_eval,
                data.n_items - max((len(a) for a in data.train_items()), default=0))
    best, best_recall, stale = params.copy(), -np.inf, 0
    records = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        loss_r, loss_c = train_epoch(data, params, opt, config,
                                     np.random.default_rng(epoch_seqs[epoch - 1]), weights)
        mean = validation_report(data, params, k_val).mean()
        rec = EpochRecord(epoch, loss_r, loss_c, mean["recall"], mean["coverage"],
                          time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d loss_r=%.5f loss_c=%.5f val_recall=%.5f val_coverage=%.3f",
                 epoch, loss_r, loss_c, rec.val_recall, rec.val_coverage)
        if callback is not None:
            callback(rec)
        if rec.val_recall > best_recall:
            best, best_recall, stale = params.copy(), rec.val_recall, 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return best, records
