"""Shared instance generators for the test suite."""

import numpy as np

from rwch.walks import from_weighted_graph


def k2():
    return from_weighted_graph([(0, 1, 1.0)])


def complete(n, weights=None):
    edges = []
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            edges.append((i, j, 1.0 if weights is None else float(weights[k])))
            k += 1
    return from_weighted_graph(edges, n=n)


def path(n):
    return from_weighted_graph([(i, i + 1, 1.0) for i in range(n - 1)], n=n)


def random_connected(rng, n, extra=0.3, loops=False):
    """Random spanning tree plus extra edges, weights in [0.5, 1.5]."""
    perm = rng.permutation(n)
    edges = []
    for k in range(1, n):
        edges.append((int(perm[k]), int(perm[rng.integers(k)]), rng.uniform(0.5, 1.5)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra:
                edges.append((i, j, rng.uniform(0.5, 1.5)))
    if loops:
        for i in range(n):
            if rng.random() < 0.3:
                edges.append((i, i, rng.uniform(0.1, 1.0)))
    return from_weighted_graph(edges, n=n, allow_loops=loops)


def random_complete(rng, n):
    return complete(n, rng.uniform(0.5, 1.5, n * (n - 1) // 2))


def mean_zero(rng, nu, size=None):
    f = rng.standard_normal(len(nu) if size is None else (size, len(nu)))
    return f - (f @ nu / nu.sum())[..., None] if f.ndim == 2 else f - np.dot(nu, f) / nu.sum()
