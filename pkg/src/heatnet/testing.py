"""Random graph fixtures for gradient checks and property tests."""

from __future__ import annotations

import numpy as np

from .hetgraph import DEFAULT_TYPES, HeteroGraph, TypeSet


def random_labeled_graph(rng: np.random.Generator, types: TypeSet = DEFAULT_TYPES,
                         n_nodes: int = 10, feature_dim: int = 8,
                         n_classes: int = 2, extra_edge_prob: float = 0.3,
                         edge_dim: int = 1, with_coords: bool = True) -> HeteroGraph:
    """A valid random graph: self-loops on every node plus random extra edges.

    Node types are uniform over the type set, features standard normal,
    edge attributes uniform in [-1, 1] with self-loop attributes 1.0.
    """
    feats = rng.standard_normal((n_nodes, feature_dim))
    type_idx = rng.integers(0, len(types), size=n_nodes)
    pairs = [(i, i) for i in range(n_nodes)]
    for s in range(n_nodes):
        for t in range(n_nodes):
            if s != t and rng.random() < extra_edge_prob:
                pairs.append((s, t))
    pairs.sort()
    attrs = np.empty((len(pairs), edge_dim))
    for i, (s, t) in enumerate(pairs):
        attrs[i] = 1.0 if s == t else rng.uniform(-1.0, 1.0, size=edge_dim)
    coords = None
    if with_coords:
        width = max(1, int(np.ceil(np.sqrt(n_nodes))))
        coords = np.array([(i % width, i // width) for i in range(n_nodes)], dtype=np.int64)
    return HeteroGraph(
        types=types,
        node_ids=tuple(range(n_nodes)),
        node_types=np.asarray(type_idx, dtype=np.intp),
        features=feats,
        edge_src=np.asarray([p[0] for p in pairs], dtype=np.intp),
        edge_dst=np.asarray([p[1] for p in pairs], dtype=np.intp),
        edge_attrs=attrs,
        label=int(rng.integers(0, n_classes)),
        coords=coords,
    )
