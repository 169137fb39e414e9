"""Player collaboration graph and random-walk skip-gram embeddings.

Two players are linked whenever they placed the same color at the same or
4-adjacent pixels; each such unordered action pair adds 1 to the edge weight.
Embeddings come from weighted second-order random walks (return parameter p,
in-out parameter q) fed to skip-gram with negative sampling. Isolated players
get the zero vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .ingest import ActionLog


@dataclass
class PlayerGraph:
    n_nodes: int
    indptr: np.ndarray   # (n_nodes+1,) int64 CSR
    indices: np.ndarray  # neighbor node ids, sorted within each slice
    weights: np.ndarray  # positive integer co-placement counts

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.indptr[v], self.indptr[v + 1]
        return self.indices[s:e], self.weights[s:e]


def build_player_graph(log: ActionLog) -> PlayerGraph:
    """Count same-color co-placements at identical or 4-adjacent pixels."""
    n = log.n_players
    if log.n_actions == 0:
        return _graph_from_edge_dict(n, {})

    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    key = pix * 256 + log.color.astype(np.int64)
    order = np.argsort(key, kind="stable")
    skey = key[order]
    splayer = log.player.astype(np.int64)[order]
    bounds = np.flatnonzero(np.r_[True, skey[1:] != skey[:-1], True])

    # (pixel, color) -> list of (player, action count)
    groups: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for b, e in zip(bounds[:-1], bounds[1:]):
        players, counts = np.unique(splayer[b:e], return_counts=True)
        groups[int(skey[b])] = (players, counts)

    edges: dict[tuple[int, int], int] = {}

    def add(a: int, b: int, amount: int):
        if a == b:
            return
        k = (a, b) if a < b else (b, a)
        edges[k] = edges.get(k, 0) + amount

    height = log.config.height
    for k, (players, counts) in groups.items():
        pixel, color = divmod(k, 256)
        y, x = divmod(pixel, w)
        # same pixel, same color: pairs of actions by distinct players
        m = len(players)
        if m > 1:
            for i in range(m):
                for j in range(i + 1, m):
                    add(int(players[i]), int(players[j]), int(counts[i] * counts[j]))
        # 4-adjacent pixels, same color (right and down cover each pair once)
        neighbor_keys = []
        if x + 1 < w:
            neighbor_keys.append(k + 256)
        if y + 1 < height:
            neighbor_keys.append(k + 256 * w)
        for nk in neighbor_keys:
            other = groups.get(nk)
            if other is None:
                continue
            oplayers, ocounts = other
            for i in range(m):
                pi, ci = int(players[i]), int(counts[i])
                for j in range(len(oplayers)):
                    add(pi, int(oplayers[j]), ci * int(ocounts[j]))

    return _graph_from_edge_dict(n, edges)


def _graph_from_edge_dict(n: int, edges: dict) -> PlayerGraph:
    if not edges:
        return PlayerGraph(
            n_nodes=n,
            indptr=np.zeros(n + 1, dtype=np.int64),
            indices=np.empty(0, dtype=np.int64),
            weights=np.empty(0, dtype=np.int64),
        )
    pairs = np.array(list(edges.keys()), dtype=np.int64)
    vals = np.array(list(edges.values()), dtype=np.int64)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    ww = np.concatenate([vals, vals])
    order = np.lexsort((dst, src))
    src, dst, ww = src[order], dst[order], ww[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return PlayerGraph(n_nodes=n, indptr=indptr, indices=dst, weights=ww)


def connected_components(graph: PlayerGraph) -> np.ndarray:
    """Component label per node (isolated nodes get their own label)."""
    n = graph.n_nodes
    label = np.full(n, -1, dtype=np.int64)
    cur = 0
    for start in range(n):
        if label[start] != -1:
            continue
        stack = [start]
        label[start] = cur
        while stack:
            v = stack.pop()
            s, e = graph.indptr[v], graph.indptr[v + 1]
            for u in graph.indices[s:e]:
                if label[u] == -1:
                    label[u] = cur
                    stack.append(int(u))
        cur += 1
    return label


@dataclass
class EmbedParams:
    h: int = 64
    walk_length: int = 40
    num_walks: int = 10
    window: int = 5
    p: float = 1.0
    q: float = 1.0
    negatives: int = 5
    epochs: int = 3
    lr: float = 0.025
    max_norm: float = 25.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def embed_players(graph: PlayerGraph, params: EmbedParams | None = None) -> np.ndarray:
    """Train (n_players, h) embeddings; rows of isolated players are zero."""
    params = params or EmbedParams()
    if params.h < 2:
        raise ValueError("embedding dimension must be >= 2")
    n = graph.n_nodes
    out = np.zeros((n, params.h), dtype=np.float32)
    deg = graph.degree()
    active = np.flatnonzero(deg > 0)
    if len(active) == 0:
        return out

    rng = np.random.default_rng(params.seed)
    walks = _generate_walks(graph, active, params, rng)
    centers, contexts = _skipgram_pairs(walks, params.window)
    vecs = _train_sgns(n, centers, contexts, params, rng)

    norms = np.linalg.norm(vecs, axis=1)
    too_big = norms > params.max_norm
    if too_big.any():
        vecs[too_big] *= (params.max_norm / norms[too_big])[:, None]
    if not np.isfinite(vecs).all():
        raise FloatingPointError("embedding training produced non-finite values")
    vecs[deg == 0] = 0.0
    out[:] = vecs
    return out


def _generate_walks(graph, active, params, rng) -> np.ndarray:
    starts = np.tile(active, params.num_walks)
    if params.p == 1.0 and params.q == 1.0:
        return _walks_first_order(graph, starts, params.walk_length, rng)
    return _walks_second_order(graph, starts, params, rng)


def _walks_first_order(graph, starts, walk_length, rng) -> np.ndarray:
    """Weighted uniform walks, all walks advanced one step at a time."""
    cumw = np.copy(graph.weights).astype(np.float64)
    for v in range(graph.n_nodes):
        s, e = graph.indptr[v], graph.indptr[v + 1]
        if e > s:
            np.cumsum(cumw[s:e], out=cumw[s:e])
    walks = np.empty((len(starts), walk_length), dtype=np.int64)
    walks[:, 0] = starts
    cur = starts.copy()
    for step in range(1, walk_length):
        lo = graph.indptr[cur]
        hi = graph.indptr[cur + 1]
        total = cumw[hi - 1]
        target = rng.random(len(cur)) * total
        # vectorized binary search: first k in [lo, hi) with cumw[k] > target
        left, right = lo.copy(), hi.copy()
        while True:
            unsettled = left < right
            if not unsettled.any():
                break
            mid = (left + right) // 2
            midc = np.minimum(mid, len(cumw) - 1)
            go_right = unsettled & (cumw[midc] <= target)
            left[go_right] = mid[go_right] + 1
            shrink = unsettled & ~go_right
            right[shrink] = mid[shrink]
        pick = np.minimum(left, hi - 1)
        cur = graph.indices[pick]
        walks[:, step] = cur
    return walks


def _walks_second_order(graph, starts, params, rng) -> np.ndarray:
    inv_p, inv_q = 1.0 / params.p, 1.0 / params.q
    walks = np.empty((len(starts), params.walk_length), dtype=np.int64)
    for wi, start in enumerate(starts):
        walk = walks[wi]
        walk[0] = start
        nbrs, ww = graph.neighbors(int(start))
        probs = ww / ww.sum()
        walk[1] = cur = int(nbrs[rng.choice(len(nbrs), p=probs)])
        prev = int(start)
        for step in range(2, params.walk_length):
            nbrs, ww = graph.neighbors(cur)
            prev_nbrs, _ = graph.neighbors(prev)
            bias = np.where(
                nbrs == prev, inv_p,
                np.where(np.isin(nbrs, prev_nbrs, assume_unique=True), 1.0, inv_q),
            )
            probs = ww * bias
            probs = probs / probs.sum()
            nxt = int(nbrs[rng.choice(len(nbrs), p=probs)])
            walk[step] = nxt
            prev, cur = cur, nxt
    return walks


def _skipgram_pairs(walks, window) -> tuple[np.ndarray, np.ndarray]:
    cs, os = [], []
    for off in range(1, window + 1):
        if off >= walks.shape[1]:
            break
        a = walks[:, :-off].ravel()
        b = walks[:, off:].ravel()
        cs.append(a)
        os.append(b)
        cs.append(b)
        os.append(a)
    return np.concatenate(cs), np.concatenate(os)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30, 30)))


def _train_sgns(n, centers, contexts, params, rng, batch=1024) -> np.ndarray:
    win = (rng.random((n, params.h)) - 0.5) / params.h
    wout = np.zeros((n, params.h), dtype=np.float64)

    counts = np.bincount(contexts, minlength=n).astype(np.float64)
    noise = counts ** 0.75
    noise_cum = np.cumsum(noise / noise.sum())

    n_pairs = len(centers)
    total_steps = max(params.epochs * ((n_pairs + batch - 1) // batch), 1)
    step = 0
    for epoch in range(params.epochs):
        perm = rng.permutation(n_pairs)
        for s in range(0, n_pairs, batch):
            lr = params.lr * max(1.0 - step / total_steps, 0.05)
            step += 1
            idx = perm[s : s + batch]
            c, o = centers[idx], contexts[idx]
            neg = np.searchsorted(noise_cum, rng.random((len(idx), params.negatives)))
            vc = win[c]
            vo = wout[o]
            g_pos = _sigmoid((vc * vo).sum(axis=1)) - 1.0
            grad_c = g_pos[:, None] * vo
            np.add.at(wout, o, -lr * g_pos[:, None] * vc)
            vn = wout[neg]
            g_neg = _sigmoid(np.einsum("bh,bkh->bk", vc, vn))
            grad_c += np.einsum("bk,bkh->bh", g_neg, vn)
            np.add.at(wout, neg.reshape(-1),
                      (-lr * g_neg[:, :, None] * vc[:, None, :]).reshape(-1, params.h))
            np.add.at(win, c, -lr * grad_c)
    return win


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize rows; zero rows stay zero."""
    m = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def save_embeddings(path: str | Path, matrix: np.ndarray, params: EmbedParams) -> None:
    """Sized binary file: one JSON text header line, then float32 rows."""
    path = Path(path)
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    header = {"n": matrix.shape[0], "h": matrix.shape[1], **params.to_dict()}
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(matrix.tobytes())
    tmp.replace(path)


def load_embeddings(path: str | Path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype=np.float32)
    matrix = data.reshape(header["n"], header["h"])
    return matrix, header
