"""Connectivity-constrained Ward agglomeration of voxels into parcels.

Only clusters joined by at least one graph edge may merge. The merge with
the smallest Ward cost ``|A||B| / (|A| + |B|) * ||mean_A - mean_B||^2`` is
taken at each step, ties going to the pair with the lowest smaller node id,
then the lowest larger node id. Leaves are ``0..p-1``; the node created by
merge ``t`` gets id ``p + t``.
"""

import heapq
import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .exceptions import ArgumentError, ShapeError
from .volume import AdjacencyGraph, ContrastImage, read_volume, write_volume

TIE_BREAK_VERSION = "min-id-then-max-id/1"


@dataclass(frozen=True, eq=False)
class ParcellationTree:
    """Merge sequence over ``n_leaves`` voxels.

    ``children[t]`` holds the two node ids merged at step ``t`` (smaller id
    first) and ``costs[t]`` the Ward cost of that merge. Costs need not be
    monotone under connectivity constraints; cuts follow merge order.
    """

    n_leaves: int
    children: np.ndarray
    costs: np.ndarray
    n_components: int

    @property
    def n_merges(self):
        return self.children.shape[0]

    def merges(self):
        """List of (node_a, node_b, cost, new_node_id) tuples."""
        return [(int(a), int(b), float(c), self.n_leaves + t)
                for t, ((a, b), c) in enumerate(zip(self.children, self.costs))]


@dataclass(frozen=True, eq=False)
class Parcellation:
    labels: np.ndarray
    n_parcels: int

    @property
    def parcel_sizes(self):
        return np.bincount(self.labels, minlength=self.n_parcels)

    @property
    def n_voxels(self):
        return self.labels.shape[0]

    def members(self, k):
        return np.flatnonzero(self.labels == k)

    @classmethod
    def identity(cls, p):
        return cls(np.arange(p), p)


def build_tree(data, graph):
    """Constrained Ward tree of the columns of ``data`` (n samples x p voxels)."""
    data = check_matrix(data, "data")
    if not isinstance(graph, AdjacencyGraph):
        raise ArgumentError("graph must be an AdjacencyGraph")
    n, p = data.shape
    if n < 1 or graph.n_nodes != p:
        raise ShapeError(f"data has {p} columns but the graph has {graph.n_nodes} nodes")

    max_nodes = 2 * p
    sums = np.zeros((max_nodes, n))
    sums[:p] = data.T
    sizes = np.zeros(max_nodes)
    sizes[:p] = 1.0
    alive = np.zeros(max_nodes, dtype=bool)
    alive[:p] = True
    neighbors = [set() for _ in range(p)]

    edges = graph.edges
    heap = []
    if edges.shape[0]:
        d = sums[edges[:, 0]] - sums[edges[:, 1]]
        costs = 0.5 * np.einsum("ij,ij->i", d, d)
        for (a, b), c in zip(edges.tolist(), costs.tolist()):
            neighbors[a].add(b)
            neighbors[b].add(a)
            heap.append((c, a, b))
        heapq.heapify(heap)

    children = []
    merge_costs = []
    next_id = p
    while heap:
        c, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        new = next_id
        next_id += 1
        alive[a] = alive[b] = False
        alive[new] = True
        sums[new] = sums[a] + sums[b]
        sizes[new] = sizes[a] + sizes[b]
        children.append((a, b))
        merge_costs.append(c)

        nbrs = (neighbors[a] | neighbors[b]) - {a, b}
        neighbors.append(nbrs)
        neighbors[a] = neighbors[b] = None
        if not nbrs:
            continue
        ks = sorted(nbrs)
        for k in ks:
            nk = neighbors[k]
            nk.discard(a)
            nk.discard(b)
            nk.add(new)
        n_new = sizes[new]
        n_k = sizes[ks]
        diff = sums[ks] / n_k[:, None] - sums[new] / n_new
        new_costs = (n_k * n_new / (n_k + n_new)) * np.einsum("ij,ij->i", diff, diff)
        for k, ck in zip(ks, new_costs.tolist()):
            heapq.heappush(heap, (ck, k, new))

    n_components = p - len(children)
    return ParcellationTree(p, np.asarray(children, dtype=np.int64).reshape(-1, 2),
                            np.asarray(merge_costs, dtype=np.float64), n_components)


def cut(tree, n_parcels):
    """Parcellation with ``n_parcels`` clusters obtained by undoing the last merges.

    Parcel ids are ordered by each parcel's smallest voxel index.
    """
    p, c = tree.n_leaves, tree.n_components
    n_parcels = int(n_parcels)
    if not c <= n_parcels <= p:
        raise ArgumentError(f"n_parcels must lie in [{c}, {p}], got {n_parcels}")
    parent = np.arange(p + tree.n_merges)
    for t in range(p - n_parcels):
        a, b = tree.children[t]
        parent[a] = parent[b] = p + t
    # resolve roots; parents always have larger ids, so walk downward
    root = parent.copy()
    for node in range(p + tree.n_merges - 1, -1, -1):
        if parent[node] != node:
            root[node] = root[parent[node]]
    leaf_roots = root[:p]
    _, first, inverse = np.unique(leaf_roots, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first)] = np.arange(first.size)
    return Parcellation(rank[inverse].astype(np.int64), int(first.size))


def transform(parcellation, data):
    """Parcel means: entry (i, k) is the mean of row i over parcel k."""
    data = check_matrix(data, "data")
    if data.shape[1] != parcellation.n_voxels:
        raise ShapeError(f"data has {data.shape[1]} columns, parcellation has "
                         f"{parcellation.n_voxels} voxels")
    K = parcellation.n_parcels
    out = np.zeros((data.shape[0], K))
    np.add.at(out.T, parcellation.labels, data.T)
    return out / parcellation.parcel_sizes


def inverse_transform(parcellation, scores):
    """Broadcast per-parcel values back to voxels (last axis of ``scores``)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[-1] != parcellation.n_parcels:
        raise ShapeError(f"expected {parcellation.n_parcels} parcel scores, got {scores.shape[-1]}")
    return scores[..., parcellation.labels]


def is_connected_parcellation(parcellation, graph):
    """True when every parcel induces a connected subgraph of ``graph``."""
    from scipy.sparse.csgraph import connected_components
    adj = graph.to_sparse().tocsr()
    for k in range(parcellation.n_parcels):
        idx = parcellation.members(k)
        if idx.size > 1:
            n_comp = connected_components(adj[idx][:, idx], directed=False)[0]
            if n_comp != 1:
                return False
    return True


class WardAgglomeration(TransformerMixin, BaseEstimator):
    """Feature agglomeration with connectivity-constrained Ward linkage.

    ``fit`` clusters the columns of X; ``transform`` averages features
    within each parcel and ``inverse_transform`` maps parcel values back.

    Parameters
    ----------
    n_clusters : int
    connectivity : AdjacencyGraph
    """

    def __init__(self, n_clusters=2000, connectivity=None):
        self.n_clusters = n_clusters
        self.connectivity = connectivity

    def fit(self, X, y=None):
        X = check_matrix(X)
        graph = self.connectivity
        if graph is None:
            graph = AdjacencyGraph.complete(X.shape[1])
        self.tree_ = build_tree(X, graph)
        self.parcellation_ = cut(self.tree_, min(self.n_clusters, X.shape[1]))
        self.labels_ = self.parcellation_.labels
        self.n_features_in_ = X.shape[1]
        return self

    def set_n_clusters(self, n_clusters):
        """Re-cut the fitted tree without refitting."""
        check_is_fitted(self, "tree_")
        self.n_clusters = n_clusters
        self.parcellation_ = cut(self.tree_, n_clusters)
        self.labels_ = self.parcellation_.labels
        return self

    def transform(self, X):
        check_is_fitted(self, "parcellation_")
        return transform(self.parcellation_, X)

    def inverse_transform(self, X):
        check_is_fitted(self, "parcellation_")
        return inverse_transform(self.parcellation_, X)


def save_parcellation(parcellation, space, path, tree=None):
    """Labels as a VOL1 volume (float32) plus a ``.json`` sidecar."""
    write_volume(ContrastImage(space, parcellation.labels.astype(np.float64)), path)
    sidecar = {"K": parcellation.n_parcels, "tie_break_version": TIE_BREAK_VERSION,
               "merges": [] if tree is None else
               [[a, b, c, new] for a, b, c, new in tree.merges()]}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")


def load_parcellation(path):
    image = read_volume(path)
    labels = image.values.astype(np.int64)
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    return Parcellation(labels, int(sidecar["K"])), image.space
