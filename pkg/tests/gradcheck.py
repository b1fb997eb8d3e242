"""Central finite-difference checks for the hand-written gradients."""

import numpy as np

from divgcn.data import Interaction, build_graph
from divgcn.model import ModelParameters, backward, batch_terms, forward
from divgcn.sampling import Samples, discover_neighbors

STEP = 1e-5
FLOOR = 1e-6  # below this both gradients count as zero


def random_case(rng, max_users=6, max_items=10, max_dim=4, depth=None, gamma=None, n_cats=3):
    """A tiny random graph, batch, node flow and parameter set."""
    while True:
        m = int(rng.integers(2, max_users + 1))
        n = int(rng.integers(2, max_items + 1))
        log = [Interaction(f"u{u}", f"i{i}", 0)
               for u in range(m) for i in range(n) if rng.random() < 0.5]
        if log:
            break
    g = build_graph(log)
    m, n = g.n_users, g.n_items
    d = int(rng.integers(1, max_dim + 1))
    k = int(rng.choice([1, 2])) if depth is None else depth
    gamma = float(rng.choice([0.0, 0.5])) if gamma is None else gamma
    cats = rng.integers(n_cats, size=n)
    params = ModelParameters.init(m, n, d, k, n_cats, rng)
    params.embeddings = rng.normal(size=params.embeddings.shape)
    size = int(rng.integers(1, 7))
    users = rng.integers(m, size=size)
    items = rng.integers(n, size=size)
    batch = Samples(users, items, rng.integers(2, size=size), cats[items])
    flow = discover_neighbors(g, np.concatenate([users, items + m]), k, 2, cats, 1.0, rng)
    return flow, params, batch, gamma


def numeric(params, arr, objective):
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + STEP
        up = objective(params)
        arr[idx] = old - STEP
        down = objective(params)
        arr[idx] = old
        out[idx] = (up - down) / (2 * STEP)
    return out


def relative_error(analytic, approx) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(approx)), FLOOR)
    return float(np.max(np.abs(analytic - approx) / scale))


def check_case(flow, params, batch, gamma, dropout=0.3, rng=None):
    """Worst relative error per tensor: GCN side against L_r - gamma*L_c,
    classifier against L_c."""
    rng = rng or np.random.default_rng(0)
    trace = forward(flow, params, dropout, "train", rng)
    grads, _ = backward(trace, batch, params, gamma)

    def terms(p):
        return batch_terms(forward(flow, p, dropout, "train", masks=trace.masks), batch, p)

    def gcn_objective(p):
        t = terms(p)
        return t.loss_rec - gamma * t.loss_cls

    def cls_objective(p):
        return terms(p).loss_cls

    errors = {"embeddings": relative_error(grads.dense_embedding(len(params.embeddings)),
                                           numeric(params, params.embeddings, gcn_objective))}
    for k, w in enumerate(params.conv):
        errors[f"conv{k + 1}"] = relative_error(grads.conv[k], numeric(params, w, gcn_objective))
    errors["classifier"] = relative_error(grads.classifier,
                                          numeric(params, params.classifier, cls_objective))
    return errors
