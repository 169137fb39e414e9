"""Snapshot segmentation: visual graph segmentation plus player-feature Ward.

Phase 1 segments the visible actions of a snapshot by RGB similarity
(graph-based image segmentation over the 4-adjacent pixel grid). Phase 2
treats each segment as a super-action carrying the mean embedding of its
authors and agglomerates spatially adjacent super-actions with Ward linkage
until the minimum eligible linkage distance exceeds a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Canvas
from .partition import Partition


@dataclass
class PixelGraph:
    """Visible actions of one snapshot plus 4-adjacency edges weighted by RGB distance."""

    action_ids: np.ndarray  # (n,) int64, one per visible pixel
    px: np.ndarray          # (n,) absolute pixel x
    py: np.ndarray          # (n,) absolute pixel y
    colors: np.ndarray      # (n,) palette indices
    edges: np.ndarray       # (m, 2) int32 node indices
    weights: np.ndarray     # (m,) float64 RGB L2 distance

    @property
    def n_nodes(self) -> int:
        return len(self.action_ids)


def build_pixel_graph(canvas: Canvas) -> PixelGraph:
    """Graph over visible pixels; edges join 4-adjacent pixels, w = ||rgb_u - rgb_v||_2."""
    vis = canvas.visible_mask()
    h, w = vis.shape
    node_id = np.full((h, w), -1, dtype=np.int64)
    ys, xs = np.nonzero(vis)
    n = len(xs)
    node_id[ys, xs] = np.arange(n)

    rgb = canvas.palette.astype(np.float64)
    cols = canvas.color[ys, xs]

    edge_u, edge_v = [], []
    # right neighbors
    m = vis[:, :-1] & vis[:, 1:]
    yy, xx = np.nonzero(m)
    edge_u.append(node_id[yy, xx])
    edge_v.append(node_id[yy, xx + 1])
    # down neighbors
    m = vis[:-1, :] & vis[1:, :]
    yy, xx = np.nonzero(m)
    edge_u.append(node_id[yy, xx])
    edge_v.append(node_id[yy + 1, xx])

    u = np.concatenate(edge_u) if edge_u else np.empty(0, np.int64)
    v = np.concatenate(edge_v) if edge_v else np.empty(0, np.int64)
    du = rgb[cols[u]] - rgb[cols[v]]
    weights = np.sqrt((du * du).sum(axis=1)) if len(u) else np.empty(0, np.float64)

    return PixelGraph(
        action_ids=canvas.action[ys, xs],
        px=xs.astype(np.int64) + canvas.x0,
        py=ys.astype(np.int64) + canvas.y0,
        colors=cols.astype(np.int64),
        edges=np.stack([u, v], axis=1).astype(np.int32) if len(u) else np.empty((0, 2), np.int32),
        weights=weights,
    )


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


def gbis(graph: PixelGraph, kappa: float) -> Partition:
    """Graph-based image segmentation (Felzenszwalb-Huttenlocher merge rule).

    Edges are scanned in nondecreasing weight order (ties by edge id);
    components merge iff the edge weight is <= min over both components of
    (max internal edge + kappa / component size).
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    n = graph.n_nodes

    # Zero-weight edges always satisfy the merge predicate (w=0 <= Int + k/|C|)
    # and leave Int at 0, so contract them up front in one vectorized pass.
    comp = np.arange(n, dtype=np.int64)
    n_comp = n
    if len(graph.weights):
        zero = graph.weights == 0.0
        if zero.any():
            from scipy.sparse import coo_matrix
            from scipy.sparse.csgraph import connected_components

            ez = graph.edges[zero]
            m = coo_matrix(
                (np.ones(len(ez)), (ez[:, 0], ez[:, 1])), shape=(n, n)
            )
            n_comp, comp = connected_components(m, directed=False)
            comp = comp.astype(np.int64)

    uf = _UnionFind(n_comp)
    uf.size = np.bincount(comp, minlength=n_comp).astype(np.int64)
    internal = np.zeros(n_comp, dtype=np.float64)  # max spanning-tree edge per root
    if len(graph.weights):
        nz = np.flatnonzero(graph.weights > 0.0)
        order = nz[np.lexsort((nz, graph.weights[nz]))]
        for e in order:
            u, v = graph.edges[e]
            ru, rv = uf.find(comp[u]), uf.find(comp[v])
            if ru == rv:
                continue
            w = graph.weights[e]
            if w <= min(internal[ru] + kappa / uf.size[ru],
                        internal[rv] + kappa / uf.size[rv]):
                r = uf.union(ru, rv)
                internal[r] = w
    roots = np.array([uf.find(c) for c in comp.tolist()], dtype=np.int64)
    _, labels = np.unique(roots, return_inverse=True)
    return Partition(items=graph.action_ids.copy(), labels=labels)


def ward_cluster(
    vectors: np.ndarray,
    adjacency: np.ndarray | list | None,
    delta: float,
    return_merges: bool = False,
):
    """Agglomerative Ward clustering restricted to spatially adjacent clusters.

    Linkage distance follows the standard Ward convention (equal to the
    Euclidean distance for singletons) and is updated with the Lance-Williams
    recurrence. Merging stops when the minimum eligible linkage exceeds
    ``delta``; ``adjacency=None`` means all pairs are eligible. Merge partners
    always fold into the lower cluster index; ties pick the lexicographically
    smallest pair.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    vectors = np.asarray(vectors, dtype=np.float64)
    if not np.isfinite(vectors).all():
        raise ValueError("vectors must be finite")
    n = len(vectors)
    merges = []
    if n == 0:
        out = Partition(items=np.empty(0, np.int64), labels=np.empty(0, np.int64))
        return (out, merges) if return_merges else out

    sq = (vectors * vectors).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (vectors @ vectors.T)
    np.maximum(d2, 0.0, out=d2)

    eligible = np.zeros((n, n), dtype=bool)
    if adjacency is None:
        eligible[:] = True
    else:
        adjacency = np.asarray(adjacency, dtype=np.int64).reshape(-1, 2)
        eligible[adjacency[:, 0], adjacency[:, 1]] = True
        eligible[adjacency[:, 1], adjacency[:, 0]] = True
    np.fill_diagonal(eligible, False)

    size = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    label = np.arange(n, dtype=np.int64)
    INF = np.inf

    while True:
        mat = np.where(eligible & active[:, None] & active[None, :], d2, INF)
        flat = np.argmin(mat)
        i, j = divmod(int(flat), n)
        if not np.isfinite(mat[i, j]):
            break
        d = float(np.sqrt(mat[i, j]))
        if d > delta:
            break
        if i > j:
            i, j = j, i
        merges.append((i, j, d))
        ni, nj = size[i], size[j]
        # Lance-Williams update on squared distances for Ward linkage.
        k = active.copy()
        k[i] = k[j] = False
        nk = size[k]
        d2[i, k] = ((ni + nk) * d2[i, k] + (nj + nk) * d2[j, k] - nk * d2[i, j]) / (
            ni + nj + nk
        )
        d2[k, i] = d2[i, k]
        eligible[i, :] |= eligible[j, :]
        eligible[:, i] |= eligible[:, j]
        eligible[i, i] = False
        active[j] = False
        size[i] = ni + nj
        label[label == label[j]] = label[i]

    _, labels = np.unique(label, return_inverse=True)
    out = Partition(items=np.arange(n, dtype=np.int64), labels=labels)
    return (out, merges) if return_merges else out


def segment_snapshot(
    canvas: Canvas,
    player_of_action: np.ndarray,
    embeddings: np.ndarray,
    kappa: float,
    delta: float,
    unit_norm: bool = True,
) -> Partition:
    """Combined segmentation of one snapshot's visible actions.

    Phase 1 runs gbis over the pixel graph; phase 2 assigns each segment the
    mean embedding of its visible actions' authors and runs adjacency-
    constrained Ward over those super-action vectors. Background pixels have
    no visible action and appear in no cluster.
    """
    graph = build_pixel_graph(canvas)
    if graph.n_nodes == 0:
        return Partition(items=np.empty(0, np.int64), labels=np.empty(0, np.int64))
    coarse = gbis(graph, kappa)

    players = player_of_action[graph.action_ids].astype(np.int64)
    if len(players) and int(players.max()) >= len(embeddings):
        raise ValueError("embeddings do not cover all players in the snapshot")
    vecs = embeddings.astype(np.float64)
    if unit_norm:
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        vecs = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)

    n_super = int(coarse.labels.max()) + 1
    sums = np.zeros((n_super, vecs.shape[1]), dtype=np.float64)
    np.add.at(sums, coarse.labels, vecs[players])
    counts = np.bincount(coarse.labels, minlength=n_super).astype(np.float64)
    means = sums / counts[:, None]

    # Super-action adjacency: any member pixels 4-adjacent (pixel-graph edges).
    if len(graph.edges):
        lu = coarse.labels[graph.edges[:, 0]]
        lv = coarse.labels[graph.edges[:, 1]]
        cross = lu != lv
        pairs = np.unique(
            np.sort(np.stack([lu[cross], lv[cross]], axis=1), axis=1), axis=0
        )
    else:
        pairs = np.empty((0, 2), np.int64)

    # Super-actions with no adjacent partner can never merge; keep them out
    # of the Ward matrix (isolated noise pixels dominate n otherwise).
    final = np.arange(n_super, dtype=np.int64)
    if len(pairs):
        linked = np.unique(pairs)
        idx_of = np.full(n_super, -1, dtype=np.int64)
        idx_of[linked] = np.arange(len(linked))
        fine = ward_cluster(means[linked], idx_of[pairs], delta)
        final[linked] = n_super + fine.labels
    _, final = np.unique(final, return_inverse=True)
    return Partition(items=graph.action_ids.copy(), labels=final[coarse.labels])
