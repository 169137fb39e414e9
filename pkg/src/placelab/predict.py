"""Coalition success prediction: dataset extraction, CART training, evaluation.

At each sampled snapshot every active dynamic cluster (>= a_min pixels
currently matching its reference color) contributes one example with four
features; the label is whether the cluster's final matching area retains at
least 40% of its maximum. The classifier is a Gini CART with midpoint
thresholds, trained on class-balanced (downsampled) data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ingest import ActionLog
from .metrics import coalition_records, reference_colors

FEATURES = ("start_time", "artwork_size", "coalition_size", "color_entropy")


@dataclass
class SuccessExample:
    start_time: float      # normalized [0, 1] time of the coalition's first action
    artwork_size: float    # pixels currently matching the reference color
    coalition_size: float  # distinct contributors so far
    color_entropy: float   # Shannon entropy (bits) of the current color histogram
    successful: bool
    cluster: int
    snapshot_time: int

    def features(self) -> list[float]:
        return [self.start_time, self.artwork_size, self.coalition_size,
                self.color_entropy]


def color_entropy_bits(hist: dict[int, int]) -> float:
    total = sum(v for v in hist.values() if v > 0)
    if total == 0:
        return 0.0
    ent = 0.0
    for v in hist.values():
        if v > 0:
            q = v / total
            ent -= q * math.log2(q)
    return ent


def extract_examples(
    log: ActionLog,
    labels: np.ndarray,
    n_snapshots: int = 100,
    seed: int = 0,
    a_min: int = 20,
    retain_frac: float = 0.4,
) -> tuple[list[SuccessExample], list[int]]:
    """Sample snapshot times uniformly without replacement and emit one example
    per active cluster. Returns (examples, snapshot times with zero rows)."""
    labels = np.asarray(labels, dtype=np.int64)
    duration = log.config.duration
    rng = np.random.default_rng(seed)
    times: set[int] = set()
    while len(times) < n_snapshots:
        draw = rng.integers(0, duration, size=n_snapshots - len(times))
        times.update(int(v) for v in draw)
    sample_times = sorted(times)

    records = coalition_records(log, labels, reference="modal")
    success = {lab: rec.successful(retain_frac) for lab, rec in records.items()}
    first_time = {lab: rec.first_time for lab, rec in records.items()}

    refs = reference_colors(log, labels, "modal")
    all_labels = sorted(refs)
    lab_idx = {lab: i for i, lab in enumerate(all_labels)}
    k = len(all_labels)
    owners: dict[int, list[tuple[int, int]]] = {}
    for lab, table in refs.items():
        for p, c in table.items():
            owners.setdefault(p, []).append((lab_idx[lab], c))

    # distinct-contributor counts by time: per label, sorted first-action times
    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    firsts: dict[int, list[int]] = {}
    seen: set[tuple[int, int]] = set()
    for i in range(log.n_actions):
        lab = int(labels[i])
        if lab < 0:
            continue
        key = (lab, int(log.player[i]))
        if key not in seen:
            seen.add(key)
            firsts.setdefault(lab, []).append(int(log.time[i]))
    first_arr = {lab: np.asarray(v) for lab, v in firsts.items()}

    bg = log.config.palette_at(0).background
    match = np.zeros(k, dtype=np.int64)
    hists: list[dict[int, int]] = [dict() for _ in range(k)]
    for lab, table in refs.items():
        li = lab_idx[lab]
        for c in table.values():
            if c == bg:
                match[li] += 1
                hists[li][c] = hists[li].get(c, 0) + 1

    examples: list[SuccessExample] = []
    empty_snapshots: list[int] = []
    state: dict[int, int] = {}
    i = 0
    n = log.n_actions
    times_arr = log.time
    for t in sample_times:
        while i < n and int(times_arr[i]) <= t:
            p = int(pix[i])
            own = owners.get(p)
            if own is not None:
                old = state.get(p, bg)
                new = int(log.color[i])
                if old != new:
                    for li, ref in own:
                        if old == ref:
                            match[li] -= 1
                            hists[li][ref] -= 1
                        if new == ref:
                            match[li] += 1
                            hists[li][ref] = hists[li].get(ref, 0) + 1
            state[p] = int(log.color[i])
            i += 1
        emitted = 0
        for lab in all_labels:
            li = lab_idx[lab]
            if match[li] < a_min:
                continue
            contributors = int(np.searchsorted(first_arr[lab], t, side="right"))
            if contributors == 0:
                continue
            examples.append(SuccessExample(
                start_time=first_time[lab] / duration,
                artwork_size=float(match[li]),
                coalition_size=float(contributors),
                color_entropy=color_entropy_bits(hists[li]),
                successful=success[lab],
                cluster=int(lab),
                snapshot_time=t,
            ))
            emitted += 1
        if emitted == 0:
            empty_snapshots.append(t)
    return examples, empty_snapshots


# ---------------------------------------------------------------------------
# CART with Gini impurity


@dataclass
class TreeNode:
    n_neg: int
    n_pos: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def positive_fraction(self) -> float:
        total = self.n_neg + self.n_pos
        return self.n_pos / total if total else 0.0


@dataclass
class TreeModel:
    root: TreeNode
    max_depth: int
    min_leaf: int

    def score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X))
        for i, row in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.positive_fraction
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.score(X) >= 0.5

    def dump(self) -> str:
        lines = [f"# cart max_depth={self.max_depth} min_leaf={self.min_leaf}"]

        def walk(node, indent):
            pad = "  " * indent
            if node.is_leaf:
                lines.append(f"{pad}leaf neg={node.n_neg} pos={node.n_pos}")
            else:
                lines.append(
                    f"{pad}split {FEATURES[node.feature]} <= {node.threshold:.10g} "
                    f"neg={node.n_neg} pos={node.n_pos}"
                )
                walk(node.left, indent + 1)
                walk(node.right, indent + 1)

        walk(self.root, 0)
        return "\n".join(lines) + "\n"


def _gini(n_neg: int, n_pos: int) -> float:
    n = n_neg + n_pos
    if n == 0:
        return 0.0
    p = n_pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _best_split(X, y, idx, min_leaf):
    """(decrease, feature, threshold) maximizing Gini decrease; ties prefer the
    lower feature index then the lower threshold."""
    n = len(idx)
    n_pos = int(y[idx].sum())
    n_neg = n - n_pos
    parent = _gini(n_neg, n_pos)
    best = None
    for f in range(X.shape[1]):
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[idx][order]
        cum_pos = np.cumsum(sy)
        distinct = np.flatnonzero(sv[1:] > sv[:-1])  # split between i and i+1
        for cut in distinct:
            nl = cut + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            lp = int(cum_pos[cut])
            rp = n_pos - lp
            child = (nl * _gini(nl - lp, lp) + nr * _gini(nr - rp, rp)) / n
            dec = parent - child
            thr = (sv[cut] + sv[cut + 1]) / 2.0
            cand = (dec, f, thr)
            if best is None or dec > best[0] + 1e-15:
                best = cand
            # equal decrease keeps the earlier (lower f, lower thr) candidate
    return best


def train_tree(
    examples: list[SuccessExample],
    depth: int = 6,
    min_leaf: int = 20,
    seed: int = 0,
) -> TreeModel:
    """Downsample the majority class to balance, then grow a Gini CART."""
    y = np.array([e.successful for e in examples], dtype=bool)
    if y.all() or not y.any():
        raise ValueError("need both classes to train")
    X = np.array([e.features() for e in examples], dtype=np.float64)

    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(y)
    neg = np.flatnonzero(~y)
    if len(pos) > len(neg):
        pos = np.sort(rng.choice(pos, size=len(neg), replace=False))
    elif len(neg) > len(pos):
        neg = np.sort(rng.choice(neg, size=len(pos), replace=False))
    keep = np.sort(np.concatenate([pos, neg]))
    X, y = X[keep], y[keep]

    def build(idx, d):
        n_pos = int(y[idx].sum())
        node = TreeNode(n_neg=len(idx) - n_pos, n_pos=n_pos)
        if d >= depth or n_pos == 0 or n_pos == len(idx) or len(idx) < 2 * min_leaf:
            return node
        found = _best_split(X, y, idx, min_leaf)
        if found is None or found[0] <= 0:
            return node
        _, f, thr = found
        node.feature = f
        node.threshold = thr
        mask = X[idx, f] <= thr
        node.left = build(idx[mask], d + 1)
        node.right = build(idx[~mask], d + 1)
        return node

    root = build(np.arange(len(y)), 0)
    return TreeModel(root=root, max_depth=depth, min_leaf=min_leaf)


# ---------------------------------------------------------------------------
# evaluation


def pr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Precision-recall AUC over descending score thresholds, trapezoidal.

    The curve is anchored at recall 0 with the precision of the highest
    threshold, so a constant scorer yields the positive fraction.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("need both classes for PR-AUC")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    matched = labels[order]
    tp = np.cumsum(matched)
    fp = np.cumsum(~matched)
    last_of_threshold = np.r_[s[1:] < s[:-1], True]
    tp_t = tp[last_of_threshold]
    fp_t = fp[last_of_threshold]
    precision = tp_t / (tp_t + fp_t)
    recall = tp_t / n_pos
    recall = np.r_[0.0, recall]
    precision = np.r_[precision[0], precision]
    return float(np.trapezoid(precision, recall))


def f1_score(pred: np.ndarray, labels: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = int((pred & labels).sum())
    fp = int((pred & ~labels).sum())
    fn = int((~pred & labels).sum())
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def split_examples(
    examples: list[SuccessExample], test_frac: float = 0.3, seed: int = 0
) -> tuple[list[SuccessExample], list[SuccessExample]]:
    """70/30 stratified split by cluster id; a cluster never straddles."""
    if not 0 < test_frac < 1:
        raise ValueError("test_frac must be in (0, 1)")
    by_cluster: dict[int, list[SuccessExample]] = {}
    for e in examples:
        by_cluster.setdefault(e.cluster, []).append(e)
    rng = np.random.default_rng(seed)
    train: list[SuccessExample] = []
    test: list[SuccessExample] = []
    for cls in (True, False):
        clusters = sorted(c for c, rows in by_cluster.items()
                          if rows[0].successful == cls)
        if not clusters:
            continue
        perm = rng.permutation(len(clusters))
        n_test = max(1, round(test_frac * len(clusters))) if len(clusters) > 1 else 0
        test_set = {clusters[i] for i in perm[:n_test]}
        for c in clusters:
            (test if c in test_set else train).extend(by_cluster[c])
    return train, test


def evaluate(
    model: TreeModel,
    examples: list[SuccessExample],
    time_slice: tuple[int, int] | None = None,
) -> dict:
    """F1 (positive class), PR-AUC over leaf scores, and positive fraction."""
    rows = examples
    if time_slice is not None:
        lo, hi = time_slice
        rows = [e for e in examples if lo <= e.snapshot_time < hi]
    if not rows:
        raise ValueError("no examples in the evaluation slice")
    y = np.array([e.successful for e in rows], dtype=bool)
    if y.all() or not y.any():
        raise ValueError("degenerate split: only one class present")
    X = np.array([e.features() for e in rows], dtype=np.float64)
    scores = model.score(X)
    return {
        "n": len(rows),
        "f1": f1_score(scores >= 0.5, y),
        "pr_auc": pr_auc(scores, y),
        "positive_fraction": float(y.mean()),
    }


def examples_to_csv(examples: list[SuccessExample]) -> str:
    lines = ["start_time,artwork_size,coalition_size,color_entropy,successful,"
             "cluster,snapshot_time"]
    for e in examples:
        lines.append(
            f"{e.start_time:.9g},{e.artwork_size:.9g},{e.coalition_size:.9g},"
            f"{e.color_entropy:.9g},{int(e.successful)},{e.cluster},{e.snapshot_time}"
        )
    return "\n".join(lines) + "\n"
