"""Dynamic clustering of actions across snapshots via greedy set cover.

Each snapshot cluster becomes a candidate set of the action ids currently
coloring its pixels; greedy set cover picks a minimal family covering every
action, each action then joins the largest selected set containing it, and
covers are merged by footprint overlap (IoU + area similarity) and by player
embedding similarity.

banded_fgreedy runs the heap-based greedy in descending gain bands and
commits a selection only while its uncovered gain stays at or above the
band's lower bound, which reproduces the plain greedy sequence exactly while
only keeping one band's sets resident.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .embed import unit_rows
from .ingest import ActionLog
from .partition import Partition


@dataclass
class CoverInstance:
    """Set-cover instance: universe of action ids, sets in CSR layout."""

    n_universe: int
    set_offsets: np.ndarray   # (n_sets+1,) int64
    set_members: np.ndarray   # concatenated action ids
    set_snapshot: np.ndarray  # (n_sets,) snapshot time, -1 for fallback singletons
    set_label: np.ndarray     # (n_sets,) cluster label within the snapshot, -1 fallback
    fallback_count: int = 0

    @property
    def n_sets(self) -> int:
        return len(self.set_offsets) - 1

    def members(self, s: int) -> np.ndarray:
        return self.set_members[self.set_offsets[s] : self.set_offsets[s + 1]]

    def size(self, s: int) -> int:
        return int(self.set_offsets[s + 1] - self.set_offsets[s])

    def sizes(self) -> np.ndarray:
        return np.diff(self.set_offsets)


@dataclass
class DynamicClustering:
    assignment: np.ndarray          # (n_universe,) final cluster id per action
    selected: np.ndarray            # selected set ids in selection order
    set_of_action: np.ndarray       # (n_universe,) covering set id per action
    lineage: list = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(np.unique(self.assignment))

    def to_partition(self) -> Partition:
        return Partition(
            items=np.arange(len(self.assignment), dtype=np.int64),
            labels=self.assignment,
        )


def default_snapshot_times(log: ActionLog, cadence_ms: int) -> list[int]:
    """Cadence grid plus the final action time, so the last layer is covered."""
    if cadence_ms <= 0:
        raise ValueError("cadence must be positive")
    if log.n_actions == 0:
        return []
    end = int(log.time[-1])
    times = list(range(cadence_ms, end + 1, cadence_ms))
    if not times or times[-1] != end:
        times.append(end)
    return times


def build_cover_instance(
    partitions: list[tuple[int, Partition]], log: ActionLog
) -> CoverInstance:
    """Snapshot clusters as sets; fallback singletons for never-visible actions."""
    n = log.n_actions
    member_chunks, snaps, labels = [], [], []
    covered = np.zeros(n, dtype=bool)
    for t, part in sorted(partitions, key=lambda x: x[0]):
        for lab, items in sorted(part.clusters().items()):
            member_chunks.append(np.sort(items))
            snaps.append(t)
            labels.append(lab)
            covered[items] = True
    uncovered = np.flatnonzero(~covered)
    for a in uncovered:
        member_chunks.append(np.array([a], dtype=np.int64))
        snaps.append(-1)
        labels.append(-1)
    offsets = np.zeros(len(member_chunks) + 1, dtype=np.int64)
    if member_chunks:
        offsets[1:] = np.cumsum([len(c) for c in member_chunks])
        members = np.concatenate(member_chunks)
    else:
        members = np.empty(0, dtype=np.int64)
    return CoverInstance(
        n_universe=n,
        set_offsets=offsets,
        set_members=members,
        set_snapshot=np.asarray(snaps, dtype=np.int64),
        set_label=np.asarray(labels, dtype=np.int64),
        fallback_count=len(uncovered),
    )


def _lazy_greedy(instance, set_ids, covered, lower_bound):
    """Heap-based greedy over the given sets, committing only gains >= lower_bound.

    Returns (selections, peak_heap_entries). Stale heap gains are upper
    bounds, so a popped entry whose recomputed gain still matches its key is
    the true (max gain, min id) choice.
    """
    heap = []
    for s in set_ids:
        gain = int((~covered[instance.members(s)]).sum())
        if gain >= lower_bound and gain > 0:
            heap.append((-gain, int(s)))
    heapq.heapify(heap)
    peak = len(heap)
    out = []
    while heap:
        neg_gain, s = heapq.heappop(heap)
        members = instance.members(s)
        gain = int((~covered[members]).sum())
        if gain == -neg_gain:
            out.append(s)
            covered[members] = True
        elif gain >= lower_bound and gain > 0:
            heapq.heappush(heap, (-gain, s))
            peak = max(peak, len(heap))
        # gains below the band bound are deferred to a later band
    return out, peak


def greedy_set_cover(instance: CoverInstance, stats: dict | None = None) -> np.ndarray:
    """Plain greedy: repeatedly take the set covering the most uncovered items.

    Ties break by set id ascending. Implemented with a lazy-decrement heap
    (all sets resident at once).
    """
    covered = np.zeros(instance.n_universe, dtype=bool)
    out, peak = _lazy_greedy(instance, range(instance.n_sets), covered, 1)
    if stats is not None:
        stats["peak_resident_members"] = int(instance.sizes().sum())
        stats["peak_heap_entries"] = peak
        stats["peak_resident_bytes"] = int(instance.sizes().sum()) * 8 + peak * 16
    return np.asarray(out, dtype=np.int64)


def geometric_bands(max_size: int, ratio: int = 8) -> list[int]:
    """Descending band lower bounds [.., ratio^2, ratio, 1] covering [1, max_size]."""
    if max_size < 1:
        return [1]
    bounds = [1]
    while bounds[-1] * ratio <= max_size:
        bounds.append(bounds[-1] * ratio)
    return bounds[::-1]


def banded_fgreedy(
    instance: CoverInstance,
    bands: list[int] | None = None,
    stats: dict | None = None,
) -> np.ndarray:
    """Greedy set cover run in descending uncovered-gain bands.

    ``bands`` are descending lower bounds, last = 1 (``None`` = geometric,
    ratio 8, from the max set size down to 1). Per band only the sets whose
    current gain can fall in the band are materialized; a selection is
    committed only while its gain is at or above the band's lower bound, so
    the committed sequence equals plain greedy's.
    """
    sizes = instance.sizes()
    max_size = int(sizes.max()) if len(sizes) else 1
    if bands is None:
        bands = geometric_bands(max_size)
    bands = [int(b) for b in bands]
    if any(b2 >= b1 for b1, b2 in zip(bands, bands[1:])):
        raise ValueError("bands must be strictly descending")
    if not bands or bands[-1] != 1:
        raise ValueError("bands must end at lower bound 1")

    covered = np.zeros(instance.n_universe, dtype=bool)
    out: list[int] = []
    peak_members = 0
    peak_heap = 0
    for lower in bands:
        # stream in only the sets whose gain could fall in this band
        eligible = np.flatnonzero(sizes >= lower)
        resident = 0
        band_ids = []
        for s in eligible:
            gain = int((~covered[instance.members(s)]).sum())
            if gain >= lower:
                band_ids.append(int(s))
                resident += instance.size(int(s))
        sel, ph = _lazy_greedy(instance, band_ids, covered, lower)
        out.extend(sel)
        peak_members = max(peak_members, resident)
        peak_heap = max(peak_heap, ph)
    if stats is not None:
        stats["peak_resident_members"] = peak_members
        stats["peak_heap_entries"] = peak_heap
        stats["peak_resident_bytes"] = peak_members * 8 + peak_heap * 16
        stats["bands"] = bands
    return np.asarray(out, dtype=np.int64)


def assign_actions(instance: CoverInstance, selected: np.ndarray) -> DynamicClustering:
    """Map each action to the largest selected set containing it (ties: lower id)."""
    assignment = np.full(instance.n_universe, -1, dtype=np.int64)
    sizes = instance.sizes()
    order = sorted(selected.tolist(), key=lambda s: (-sizes[s], s))
    for s in order:
        members = instance.members(s)
        fresh = assignment[members] == -1
        assignment[members[fresh]] = s
    if (assignment == -1).any():
        raise ValueError("selected sets do not cover the universe")
    return DynamicClustering(
        assignment=assignment.copy(),
        selected=np.asarray(selected, dtype=np.int64),
        set_of_action=assignment,
    )


class _DSU:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _footprints(instance, sets, log) -> list[np.ndarray]:
    w = log.config.width
    out = []
    for s in sets:
        m = instance.members(int(s))
        pix = log.y[m].astype(np.int64) * w + log.x[m].astype(np.int64)
        out.append(np.unique(pix))
    return out


def _pair_intersections(footprints) -> dict[tuple[int, int], int]:
    owners: dict[int, list[int]] = {}
    for i, pix in enumerate(footprints):
        for p in pix.tolist():
            owners.setdefault(p, []).append(i)
    inter: dict[tuple[int, int], int] = {}
    for plist in owners.values():
        if len(plist) < 2:
            continue
        for a in range(len(plist)):
            for b in range(a + 1, len(plist)):
                k = (plist[a], plist[b])
                inter[k] = inter.get(k, 0) + 1
    return inter


def merge_covers(
    clustering: DynamicClustering,
    instance: CoverInstance,
    log: ActionLog,
    embeddings: np.ndarray,
    alpha_iou: float = 0.6,
    alpha_as: float = 0.5,
    alpha_player: float = 0.8,
) -> DynamicClustering:
    """Merge selected covers: phase 1 by footprint IoU and area similarity,
    phase 2 by cosine of mean member-player embeddings (requires IoU > 0)."""
    if not (0 <= alpha_iou <= 1 and 0 <= alpha_as <= 1):
        raise ValueError("alpha_iou and alpha_as must be in [0, 1]")
    if not (-1 <= alpha_player <= 1):
        raise ValueError("alpha_player must be in [-1, 1]")

    selected = clustering.selected
    k = len(selected)
    lineage = list(clustering.lineage)

    foot = _footprints(instance, selected, log)
    areas = np.array([len(f) for f in foot], dtype=np.int64)
    inter = _pair_intersections(foot)

    dsu = _DSU(k)
    for (a, b), ab in sorted(inter.items()):
        union = areas[a] + areas[b] - ab
        iou = ab / union
        asim = min(areas[a], areas[b]) / max(areas[a], areas[b])
        if iou >= alpha_iou and asim >= alpha_as:
            dsu.union(a, b)
            lineage.append({
                "rule": "iou_as", "cover_a": int(selected[a]), "cover_b": int(selected[b]),
                "iou": round(iou, 6), "as": round(asim, 6),
            })

    group = np.array([dsu.find(i) for i in range(k)], dtype=np.int64)
    uniq_groups, group_idx = np.unique(group, return_inverse=True)
    g = len(uniq_groups)

    # group footprints and mean member-player embeddings
    gfoot = []
    for gi in range(g):
        pix = np.concatenate([foot[i] for i in np.flatnonzero(group_idx == gi)])
        gfoot.append(np.unique(pix))
    unit = unit_rows(embeddings)
    gvec = np.zeros((g, unit.shape[1]))
    pos_arr = np.full(instance.n_sets, -1, dtype=np.int64)
    pos_arr[selected] = np.arange(k)
    action_group = group_idx[pos_arr[clustering.set_of_action]]
    np.add.at(gvec, action_group, unit[log.player])
    gcount = np.bincount(action_group, minlength=g)
    gvec /= np.maximum(gcount, 1)[:, None]
    gunit = unit_rows(gvec)

    ginter = _pair_intersections(gfoot)
    dsu2 = _DSU(g)
    for (a, b), ab in sorted(ginter.items()):
        cos = float(gunit[a] @ gunit[b])
        if cos >= alpha_player:
            dsu2.union(a, b)
            lineage.append({
                "rule": "embedding",
                "group_a": int(uniq_groups[a]), "group_b": int(uniq_groups[b]),
                "cosine": round(cos, 6),
            })

    final_group = np.array([dsu2.find(i) for i in range(g)], dtype=np.int64)
    _, compact = np.unique(final_group[action_group], return_inverse=True)
    return DynamicClustering(
        assignment=compact.astype(np.int64),
        selected=selected,
        set_of_action=clustering.set_of_action,
        lineage=lineage,
    )
