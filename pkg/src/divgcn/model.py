"""GCN matching model with an adversarial category classifier.

Everything is plain numpy in float64 with closed-form gradients. Node ids are
global (users first, then items) so the embedding table is indexed directly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sampling import NodeFlow, Samples

CHECKPOINT_MAGIC = b"DIVGCNCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sI5Q")


@dataclass
class ModelParameters:
    embeddings: np.ndarray  # (n_users + n_items, d)
    conv: list[np.ndarray]  # K matrices, (d, d)
    classifier: np.ndarray  # (n_categories, d)
    n_users: int
    n_items: int

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def depth(self) -> int:
        return len(self.conv)

    @property
    def n_categories(self) -> int:
        return self.classifier.shape[0]

    @classmethod
    def init(cls, n_users: int, n_items: int, dim: int, depth: int, n_categories: int,
             rng: np.random.Generator) -> "ModelParameters":
        if depth < 1:
            raise ValueError("depth must be >= 1")
        emb = rng.uniform(-0.05, 0.05, size=(n_users + n_items, dim))
        # variance-preserving conv init; 1/sqrt(d) stalls training once depth > 1
        wide = np.sqrt(3.0 / dim)
        conv = [rng.uniform(-wide, wide, size=(dim, dim)) for _ in range(depth)]
        bound = 1.0 / np.sqrt(dim)
        clf = rng.uniform(-bound, bound, size=(n_categories, dim))
        return cls(emb, conv, clf, n_users, n_items)

    def tensors(self):
        yield "embeddings", self.embeddings
        for k, w in enumerate(self.conv):
            yield f"conv{k + 1}", w
        yield "classifier", self.classifier

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.embeddings.copy(), [w.copy() for w in self.conv],
                               self.classifier.copy(), self.n_users, self.n_items)


@dataclass
class Gradients:
    """Gradients shaped like :class:`ModelParameters`.

    The embedding gradient is sparse: ``embedding`` holds the rows listed in
    ``embedding_rows``; every other row is zero.
    """

    embedding_rows: np.ndarray
    embedding: np.ndarray
    conv: list[np.ndarray]
    classifier: np.ndarray

    def dense_embedding(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows, self.embedding.shape[1]))
        np.add.at(out, self.embedding_rows, self.embedding)
        return out


@dataclass
class LossReport:
    rec: float
    cls: float


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, layer 1 first.

    ``inputs[k]`` are the (possibly dropped-out) representations fed to conv
    layer ``k + 1``; ``outputs[k]`` its tanh outputs. ``outputs[-1]`` are the
    final representations of ``nodeflow.seeds``.
    """

    nodeflow: NodeFlow
    mode: str
    inputs: list[np.ndarray] = field(default_factory=list)
    aggregated: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    operators: list[sp.csr_matrix] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.outputs[-1]

    def rows(self, nodes) -> np.ndarray:
        seeds = self.nodeflow.seeds
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = np.searchsorted(seeds, nodes)
        pos = np.minimum(pos, len(seeds) - 1)
        if len(seeds) == 0 or np.any(seeds[pos] != nodes):
            raise ValueError("batch node is not a seed of this node flow")
        return pos


def mean_operator(block) -> sp.csr_matrix:
    """Row-stochastic matrix averaging each node's sampled list."""
    counts = np.diff(block.offsets)
    data = np.repeat(1.0 / counts, counts)
    return sp.csr_matrix((data, block.local, block.offsets),
                         shape=(len(block.nodes), len(block.sources)))


def forward(nodeflow: NodeFlow, params: ModelParameters, dropout: float = 0.0,
            mode: str = "eval", rng: np.random.Generator | None = None,
            masks: list[np.ndarray | None] | None = None) -> ForwardTrace:
    """Run the conv stack over a Node Flow.

    Conv layer ``k`` consumes block ``K - k`` (the deepest block first). In
    train mode inverted dropout is applied to every intermediate layer
    output; ``masks`` replays previously drawn masks instead of sampling.
    """
    if nodeflow.depth != params.depth:
        raise ValueError(f"node flow depth {nodeflow.depth} != model depth {params.depth}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {dropout}")
    depth = params.depth
    trace = ForwardTrace(nodeflow, mode)
    h = params.embeddings[nodeflow.blocks[-1].sources]
    for k in range(depth):
        block = nodeflow.blocks[depth - 1 - k]
        mask = None
        if k > 0 and mode == "train":
            if masks is not None:
                mask = masks[k]
            elif dropout > 0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            if mask is not None:
                h = h * mask
        op = mean_operator(block)
        agg = op @ h
        out = np.tanh(agg @ params.conv[k].T)
        trace.inputs.append(h)
        trace.aggregated.append(agg)
        trace.outputs.append(out)
        trace.operators.append(op)
        trace.masks.append(mask)
        h = out
    return trace


# ------------------------------------------------------------------ losses

def score(h_user, h_item) -> float:
    h_user = np.asarray(h_user, dtype=float)
    h_item = np.asarray(h_item, dtype=float)
    if h_user.shape != h_item.shape:
        raise ValueError(f"dimension mismatch {h_user.shape} vs {h_item.shape}")
    return float(h_user @ h_item)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def rec_loss(logit, label):
    """Log loss on an inner-product logit; returns ``(loss, dloss/dlogit)``.

    Works elementwise on arrays.
    """
    logit = np.asarray(logit, dtype=float)
    label = np.asarray(label, dtype=float)
    loss = np.logaddexp(0.0, logit) - label * logit
    grad = _sigmoid(logit) - label
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def cls_loss(logits, category: int):
    """Softmax cross-entropy for one item; returns ``(loss, dloss/dlogits)``."""
    logits = np.asarray(logits, dtype=float)
    if not 0 <= category < logits.shape[-1]:
        raise ValueError(f"category {category} out of range [0, {logits.shape[-1]})")
    losses, grads = _cls_loss_rows(logits[None, :], np.array([category]))
    return float(losses[0]), grads[0]


def _cls_loss_rows(logits: np.ndarray, cats: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(cats))
    losses = lse - shifted[rows, cats]
    grads = np.exp(shifted - lse[:, None])
    grads[rows, cats] -= 1.0
    return losses, grads


def grl_backward(upstream, gamma: float):
    """Gradient reversal: identity forward, ``-gamma`` times the gradient backward."""
    return -gamma * np.asarray(upstream)


# ---------------------------------------------------------------- backward

@dataclass
class BatchTerms:
    """Losses of a batch and their gradients at the final representations."""

    loss_rec: float
    loss_cls: float
    d_rec: np.ndarray  # dL_r / d final seed representations
    d_cls: np.ndarray  # dL_c / d final seed representations
    classifier: np.ndarray  # dL_c / d classifier


def batch_terms(trace: ForwardTrace, batch: Samples, params: ModelParameters) -> BatchTerms:
    """L_r averaged over samples, L_c averaged over the distinct batch items."""
    final = trace.final
    n_users = params.n_users
    urows = trace.rows(batch.users)
    irows = trace.rows(batch.items + n_users)
    hu, hi = final[urows], final[irows]
    logits = np.einsum("ij,ij->i", hu, hi)
    losses, dlogit = rec_loss(logits, batch.labels)
    n = len(batch)
    dlogit = np.atleast_1d(dlogit) / n
    d_rec = np.zeros_like(final)
    np.add.at(d_rec, urows, dlogit[:, None] * hi)
    np.add.at(d_rec, irows, dlogit[:, None] * hu)

    items, first = np.unique(batch.items, return_index=True)
    rows = trace.rows(items + n_users)
    h_items = final[rows]
    cls_logits = h_items @ params.classifier.T
    c_losses, c_grads = _cls_loss_rows(cls_logits, batch.cats[first])
    c_grads /= len(items)
    d_cls = np.zeros_like(final)
    d_cls[rows] = c_grads @ params.classifier
    return BatchTerms(float(np.mean(losses)), float(np.mean(c_losses)),
                      d_rec, d_cls, c_grads.T @ h_items)


def propagate(trace: ForwardTrace, params: ModelParameters, upstream: np.ndarray):
    """Back-propagate a gradient at the final seed representations.

    Returns ``(embedding_rows, embedding_grad, conv_grads)``.
    """
    depth = params.depth
    conv_grads = [None] * depth
    d = upstream
    for k in range(depth - 1, -1, -1):
        dz = d * (1.0 - trace.outputs[k] ** 2)
        conv_grads[k] = dz.T @ trace.aggregated[k]
        d = trace.operators[k].T @ (dz @ params.conv[k])
        if trace.masks[k] is not None:
            d = d * trace.masks[k]
    return trace.nodeflow.blocks[-1].sources, d, conv_grads


def backward(trace: ForwardTrace, batch: Samples, params: ModelParameters,
             gamma: float) -> tuple[Gradients, LossReport]:
    """Gradients for one batch.

    The classifier descends on L_c. The GCN side receives the recommendation
    gradient plus the classification gradient passed through gradient
    reversal, i.e. it descends on ``L_r - gamma * L_c``.
    """
    terms = batch_terms(trace, batch, params)
    upstream = terms.d_rec + grl_backward(terms.d_cls, gamma)
    rows, emb, conv = propagate(trace, params, upstream)
    return (Gradients(rows, emb, conv, terms.classifier),
            LossReport(terms.loss_rec, terms.loss_cls))


# -------------------------------------------------------------- checkpoint

def save_checkpoint(path, params: ModelParameters, metadata: dict | None = None) -> None:
    """Binary little-endian float64 dump plus a JSON sidecar (``<path>.json``)."""
    path = Path(path)
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.n_users,
                          params.n_items, params.dim, params.depth, params.n_categories)
    with open(path, "wb") as fh:
        fh.write(header)
        for _, tensor in params.tensors():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    if metadata is not None:
        Path(str(path) + ".json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, m, n, d, k, c = _HEADER.unpack(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    return {"n_users": m, "n_items": n, "dim": d, "depth": k, "n_categories": c}


def load_checkpoint(path) -> ModelParameters:
    h = read_checkpoint_header(path)
    m, n, d, k, c = h["n_users"], h["n_items"], h["dim"], h["depth"], h["n_categories"]
    data = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    expected = (m + n) * d + k * d * d + c * d
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {data.size}")
    emb = data[:(m + n) * d].reshape(m + n, d).astype(float)
    pos = (m + n) * d
    conv = []
    for _ in range(k):
        conv.append(data[pos:pos + d * d].reshape(d, d).astype(float))
        pos += d * d
    clf = data[pos:].reshape(c, d).astype(float)
    return ModelParameters(emb, conv, clf, m, n)
