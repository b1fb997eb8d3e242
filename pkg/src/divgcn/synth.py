"""Synthetic category-skewed interaction logs for self-contained experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CategoryTable, Interaction


@dataclass
class SynthConfig:
    users: int = 200
    items: int = 500
    categories: int = 10
    bias: float = 0.7  # share of a user's interactions in their dominant category
    per_user: int = 40
    spread: float = 1.0  # Dirichlet concentration of each user's secondary interests
    latent_dim: int = 8
    temperature: float = 0.5
    seed: int = 0


def generate(config: SynthConfig = SynthConfig()) -> tuple[list[Interaction], CategoryTable]:
    """Draw a log where every user favors one dominant category.

    The remaining share of a user's interactions follows a personal
    Dirichlet(``spread``) preference over the other categories, so minor
    interests persist over time.
    Items get a latent taste vector; within a category a user picks item ``j``
    with probability proportional to ``exp(<p_u, q_j> / temperature)``, so the
    log carries collaborative structure beyond the category skew. Timestamps
    are uniform over ``[0, 10**6)``, independent of the user.
    """
    c = config
    if c.per_user > c.items:
        raise ValueError("per_user cannot exceed the number of items")
    if not 0.0 <= c.bias <= 1.0:
        raise ValueError("bias must be in [0, 1]")
    rng = np.random.default_rng(c.seed)
    item_cat = rng.permutation(np.arange(c.items) % c.categories)
    members = [np.flatnonzero(item_cat == k) for k in range(c.categories)]
    q = rng.normal(size=(c.items, c.latent_dim)) / np.sqrt(c.latent_dim)
    p = rng.normal(size=(c.users, c.latent_dim)) / np.sqrt(c.latent_dim)
    dominant = rng.integers(c.categories, size=c.users)
    secondary = rng.dirichlet(np.full(max(c.categories - 1, 1), c.spread), size=c.users)

    interactions = []
    for u in range(c.users):
        affinity = np.exp(q @ p[u] / c.temperature)
        taken = np.zeros(c.items, dtype=bool)
        for _ in range(c.per_user):
            if rng.random() < c.bias or c.categories == 1:
                cat = dominant[u]
            else:
                others = [k for k in range(c.categories) if k != dominant[u]]
                cat = others[rng.choice(len(others), p=secondary[u])]
            pool = members[cat][~taken[members[cat]]]
            if pool.size == 0:
                pool = np.flatnonzero(~taken)
            w = affinity[pool]
            item = int(rng.choice(pool, p=w / w.sum()))
            taken[item] = True
            interactions.append(Interaction(f"u{u}", f"i{item}", int(rng.integers(10**6))))
    table = CategoryTable.from_pairs((f"i{j}", str(item_cat[j])) for j in range(c.items))
    return interactions, table
