"""Synthetic implicit-feedback data with Zipf item popularity and latent user communities."""

from __future__ import annotations

import numpy as np

from .interactions import InteractionMatrix


def zipf_interactions(num_users=2000, num_items=500, mean_items=40, s=1.2,
                      num_communities=10, affinity=0.8, seed=0):
    """Sample a binary matrix whose item marginals follow ``rank^-s``.

    Every user belongs to one community; each community prefers a random
    subset of items. With probability ``affinity`` an interaction is drawn
    from the community's Zipf-weighted preference set, otherwise from the
    global Zipf distribution. Row lengths are ``1 + Poisson(mean_items - 1)``
    capped at ``num_items``.
    """
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, num_items + 1, dtype=np.float64)
    popularity = ranks ** -s
    popularity = popularity[rng.permutation(num_items)]
    popularity /= popularity.sum()

    pref_size = max(2, num_items // num_communities)
    community_dist = np.empty((num_communities, num_items))
    for c in range(num_communities):
        members = rng.choice(num_items, size=pref_size, replace=False)
        w = np.zeros(num_items)
        w[members] = popularity[members]
        community_dist[c] = w / w.sum()
    mix = affinity * community_dist + (1.0 - affinity) * popularity

    lengths = np.minimum(1 + rng.poisson(max(mean_items - 1, 0), size=num_users), num_items)
    communities = rng.integers(num_communities, size=num_users)
    rows = []
    for u in range(num_users):
        p = mix[communities[u]]
        support = np.count_nonzero(p)
        rows.append(rng.choice(num_items, size=min(lengths[u], support), replace=False, p=p))
    return InteractionMatrix.from_rows(rows, num_items)
