"""Engagement, collaboration, and competition metrics over a labeled action log.

``labels`` is always a per-action int array (atlas entry index or dynamic
cluster id, -1 = unlabeled), the common currency with the labeling stages.
Coalition bookkeeping supports two reference-color conventions: "final"
compares against the final canvas (atlas artworks), "modal" against the
per-pixel modal color of the coalition's own actions (dynamic clusters,
which may have died before the end).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import ActionLog, canvas_at

MS_PER_HOUR = 3_600_000


# ---------------------------------------------------------------------------
# shared replay-derived arrays


def previous_colors(log: ActionLog) -> np.ndarray:
    """Color each action's pixel showed immediately before the action."""
    n = log.n_actions
    if n == 0:
        return np.empty(0, dtype=np.int64)
    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    order = np.argsort(pix, kind="stable")  # time order within each pixel
    spix = pix[order]
    scolor = log.color[order].astype(np.int64)
    prev = np.empty(n, dtype=np.int64)
    bg = log.config.palette_at(0).background
    first = np.r_[True, spix[1:] != spix[:-1]]
    prev[order[first]] = bg
    prev[order[~first]] = scolor[:-1][~first[1:]]
    return prev


def final_pixel_colors(log: ActionLog) -> np.ndarray:
    """Final-canvas color of each action's pixel."""
    if log.n_actions == 0:
        return np.empty(0, dtype=np.int64)
    canvas = canvas_at(log, int(log.time[-1]))
    px = log.x.astype(np.int64) - canvas.x0
    py = log.y.astype(np.int64) - canvas.y0
    return canvas.color[py, px].astype(np.int64)


def is_final_action(log: ActionLog) -> np.ndarray:
    """True where the action is the last on its pixel."""
    n = log.n_actions
    if n == 0:
        return np.empty(0, dtype=bool)
    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    order = np.argsort(pix, kind="stable")
    spix = pix[order]
    last = np.r_[spix[1:] != spix[:-1], True]
    out = np.zeros(n, dtype=bool)
    out[order[last]] = True
    return out


def modal_reference_colors(log: ActionLog, labels: np.ndarray) -> dict[int, dict[int, int]]:
    """Per label: pixel -> modal color of the label's actions there.

    Ties break toward the lower palette index.
    """
    mask = labels >= 0
    if not mask.any():
        return {}
    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    key = np.stack([labels[mask], pix[mask], log.color[mask].astype(np.int64)], axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    # sort so the winner per (label, pixel) comes first: count desc, color asc
    order = np.lexsort((uniq[:, 2], -counts, uniq[:, 1], uniq[:, 0]))
    uniq = uniq[order]
    first = np.r_[True, (np.diff(uniq[:, 0]) != 0) | (np.diff(uniq[:, 1]) != 0)]
    refs: dict[int, dict[int, int]] = {}
    for lab, p, c in uniq[first]:
        refs.setdefault(int(lab), {})[int(p)] = int(c)
    return refs


def reference_colors(
    log: ActionLog, labels: np.ndarray, reference: str
) -> dict[int, dict[int, int]]:
    """Per label: footprint pixel -> reference color under the chosen convention."""
    if reference == "modal":
        return modal_reference_colors(log, labels)
    if reference != "final":
        raise ValueError(f"unknown reference {reference!r}")
    final = final_pixel_colors(log)
    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    refs: dict[int, dict[int, int]] = {}
    mask = labels >= 0
    key = np.stack([labels[mask], pix[mask], final[mask]], axis=1)
    uniq = np.unique(key, axis=0)
    for lab, p, c in uniq:
        refs.setdefault(int(lab), {})[int(p)] = int(c)
    return refs


# ---------------------------------------------------------------------------
# coalition records


@dataclass
class CoalitionRecord:
    label: int
    members: np.ndarray        # distinct players with >= 1 agreeing action
    member_counts: np.ndarray  # agreeing actions per member, aligned
    n_actions: int             # all actions carrying the label
    agreeing: int
    wasted: int
    adversarial: int
    footprint: int             # distinct pixels touched by the label's actions
    first_time: int
    area_series: np.ndarray    # matching-pixel count sampled at bucket ends
    max_area: int
    final_area: int

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def wasted_ratio(self) -> float | None:
        return self.wasted / self.agreeing if self.agreeing else None

    def successful(self, retain_frac: float = 0.4) -> bool:
        return self.final_area >= retain_frac * self.max_area


def coalition_records(
    log: ActionLog,
    labels: np.ndarray,
    reference: str = "final",
    bucket_ms: int = MS_PER_HOUR,
) -> dict[int, CoalitionRecord]:
    """One chronological replay computing every per-coalition aggregate."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != log.n_actions:
        raise ValueError("labels must align with the action log")
    refs = reference_colors(log, labels, reference)
    if not refs:
        return {}

    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    color = log.color.astype(np.int64)
    prev = previous_colors(log)

    # ref color of each labeled action's own pixel under its own label
    ref_of_action = np.full(log.n_actions, -2, dtype=np.int64)
    for i in np.flatnonzero(labels >= 0):
        ref_of_action[i] = refs[int(labels[i])][int(pix[i])]
    agreeing_mask = (labels >= 0) & (color == ref_of_action)
    wasted_mask = agreeing_mask & (prev == color)

    # ownership map: pixel -> [(label, ref color)] for the area replay
    owners: dict[int, list[tuple[int, int]]] = {}
    for lab, table in refs.items():
        for p, c in table.items():
            owners.setdefault(p, []).append((lab, c))

    end = int(log.time[-1]) if log.n_actions else 0
    n_buckets = end // bucket_ms + 1
    all_labels = sorted(refs)
    lab_idx = {lab: i for i, lab in enumerate(all_labels)}
    k = len(all_labels)
    bg = log.config.palette_at(0).background

    match = np.zeros(k, dtype=np.int64)
    for lab, table in refs.items():
        match[lab_idx[lab]] = sum(1 for c in table.values() if c == bg)
    max_area = match.copy()
    series = np.zeros((k, n_buckets), dtype=np.int64)

    state: dict[int, int] = {}
    bucket = 0
    times = log.time
    for i in range(log.n_actions):
        b = int(times[i]) // bucket_ms
        while bucket < b:
            series[:, bucket] = match
            bucket += 1
        p = int(pix[i])
        own = owners.get(p)
        if own is not None:
            old = state.get(p, bg)
            new = int(color[i])
            if old != new:
                for lab, ref in own:
                    li = lab_idx[lab]
                    if old == ref:
                        match[li] -= 1
                    if new == ref:
                        match[li] += 1
                        if match[li] > max_area[li]:
                            max_area[li] = match[li]
        state[p] = int(color[i])
    series[:, bucket:] = match[:, None]

    records = {}
    labeled = np.flatnonzero(labels >= 0)
    order = labeled[np.argsort(labels[labeled], kind="stable")]
    glab = labels[order]
    bounds = np.flatnonzero(np.r_[True, glab[1:] != glab[:-1], True])
    for b, e in zip(bounds[:-1], bounds[1:]):
        lab = int(glab[b])
        li = lab_idx[lab]
        rows = order[b:e]
        agree_rows = rows[agreeing_mask[rows]]
        members, counts = np.unique(log.player[agree_rows], return_counts=True)
        records[lab] = CoalitionRecord(
            label=lab,
            members=members.astype(np.int64),
            member_counts=counts.astype(np.int64),
            n_actions=len(rows),
            agreeing=len(agree_rows),
            wasted=int(wasted_mask[rows].sum()),
            adversarial=len(rows) - len(agree_rows),
            footprint=len(refs[lab]),
            first_time=int(times[rows].min()),
            area_series=series[li],
            max_area=int(max_area[li]),
            final_area=int(match[li]),
        )
    return records


# ---------------------------------------------------------------------------
# RQE: engagement


def player_rates(log: ActionLog, full_duration: bool = False) -> np.ndarray:
    """Actions per hour per player (active span denominator, min 1 h)."""
    if log.n_actions == 0:
        return np.empty(0, dtype=np.float64)
    counts = np.bincount(log.player, minlength=log.n_players).astype(np.float64)
    if full_duration:
        span_h = np.full(log.n_players, max(log.config.duration / MS_PER_HOUR, 1.0))
    else:
        first = np.full(log.n_players, np.iinfo(np.int64).max, dtype=np.int64)
        last = np.zeros(log.n_players, dtype=np.int64)
        np.minimum.at(first, log.player, log.time)
        np.maximum.at(last, log.player, log.time)
        span_h = np.maximum((last - first) / MS_PER_HOUR, 1.0)
    return counts / span_h


def icdf_table(values: np.ndarray, n_points: int = 100) -> list[tuple[float, float]]:
    """(x, fraction of values >= x) at log-spaced x."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return []
    lo, hi = float(values.min()), float(values.max())
    if lo <= 0:
        lo = min(v for v in values if v > 0) if (values > 0).any() else 1.0
    if hi <= lo:
        xs = np.array([lo])
    else:
        xs = np.logspace(np.log10(lo), np.log10(hi), n_points)
    svals = np.sort(values)
    fracs = 1.0 - np.searchsorted(svals, xs, side="left") / len(values)
    return list(zip(xs.tolist(), fracs.tolist()))


def activity_icdf(log: ActionLog, full_duration: bool = False,
                  n_points: int = 100) -> list[tuple[float, float]]:
    return icdf_table(player_rates(log, full_duration), n_points)


@dataclass
class ProgressionSeries:
    """Hourly counts of final / match / adversary actions."""

    hours: np.ndarray
    final: np.ndarray
    match: np.ndarray
    adversary: np.ndarray

    def totals(self) -> np.ndarray:
        return self.final + self.match + self.adversary

    def rows(self) -> list[dict]:
        total = max(int(self.totals().sum()), 1)
        cum = 0
        out = []
        for i, h in enumerate(self.hours.tolist()):
            bucket = int(self.totals()[i])
            cum += bucket
            out.append({
                "hour": h,
                "final": int(self.final[i]),
                "match": int(self.match[i]),
                "adversary": int(self.adversary[i]),
                "pct_of_total": 100.0 * bucket / total,
                "cumulative_pct": 100.0 * cum / total,
            })
        return out


def classify_actions(log: ActionLog) -> ProgressionSeries:
    """final = survives on its pixel; match = same color as the pixel's final
    color but overwritten; adversary = different color."""
    n = log.n_actions
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return ProgressionSeries(empty, empty, empty, empty)
    finals = final_pixel_colors(log)
    last = is_final_action(log)
    match = ~last & (log.color.astype(np.int64) == finals)
    adversary = ~last & ~match
    buckets = (log.time // MS_PER_HOUR).astype(np.int64)
    n_b = int(buckets.max()) + 1
    return ProgressionSeries(
        hours=np.arange(n_b),
        final=np.bincount(buckets[last], minlength=n_b),
        match=np.bincount(buckets[match], minlength=n_b),
        adversary=np.bincount(buckets[adversary], minlength=n_b),
    )


def activity_heatmap(log: ActionLog) -> np.ndarray:
    """Per-pixel action counts on the final canvas dimensions."""
    h, w = log.config.height, log.config.width
    grid = np.zeros((h, w), dtype=np.int64)
    np.add.at(grid, (log.y.astype(np.int64), log.x.astype(np.int64)), 1)
    return grid


def category_rollup(
    records: dict[int, CoalitionRecord],
    subreddit_of_label: dict[int, str | None],
    category_of_subreddit: dict[str, str],
) -> dict[str, dict]:
    """Mean coalition size and mean area per subreddit category."""
    groups: dict[str, list[CoalitionRecord]] = {}
    for lab, rec in records.items():
        sub = subreddit_of_label.get(lab)
        cat = category_of_subreddit.get(sub, "Other") if sub else "Other"
        groups.setdefault(cat, []).append(rec)
    out = {}
    for cat, recs in sorted(groups.items()):
        out[cat] = {
            "n_artworks": len(recs),
            "mean_players": float(np.mean([r.size for r in recs])),
            "mean_area": float(np.mean([r.footprint for r in recs])),
        }
    return out


# ---------------------------------------------------------------------------
# RQC: collaboration


def coordination_cost(
    records: dict[int, CoalitionRecord],
) -> tuple[list[dict], float | None, int]:
    """(size, wasted ratio) per coalition, OLS slope of ratio on size, and the
    count of coalitions excluded for having no agreeing actions."""
    rows, skipped = [], 0
    for lab in sorted(records):
        rec = records[lab]
        if rec.agreeing == 0:
            skipped += 1
            continue
        rows.append({
            "label": lab,
            "size": rec.size,
            "agreeing": rec.agreeing,
            "wasted": rec.wasted,
            "ratio": rec.wasted / rec.agreeing,
        })
    slope = None
    if len(rows) >= 2:
        xs = np.array([r["size"] for r in rows], dtype=np.float64)
        ys = np.array([r["ratio"] for r in rows], dtype=np.float64)
        if np.ptp(xs) > 0:
            slope = float(np.polyfit(xs, ys, 1)[0])
    return rows, slope, skipped


DEFAULT_LOAFING_BINS = (1, 100, 10_000)


def loafing_icdf(
    records: dict[int, CoalitionRecord],
    bins: tuple[int, ...] = DEFAULT_LOAFING_BINS,
) -> tuple[dict[str, list[tuple[float, float]]], list[str]]:
    """Per coalition-size bin: ICDF of the median actions per member.

    Returns (bin -> [(median value, fraction >= value)], empty bin names).
    """
    edges = list(bins) + [None]
    out: dict[str, list] = {}
    flagged: list[str] = []
    for i in range(len(bins)):
        lo, hi = edges[i], edges[i + 1]
        name = f"[{lo},{hi})" if hi else f"[{lo},inf)"
        medians = [
            float(np.median(rec.member_counts))
            for rec in records.values()
            if rec.size >= lo and (hi is None or rec.size < hi) and rec.size > 0
        ]
        if not medians:
            flagged.append(name)
            out[name] = []
            continue
        vals = np.sort(np.array(medians))
        uniq = np.unique(vals)
        out[name] = [
            (float(v), float((vals >= v).sum() / len(vals))) for v in uniq
        ]
    return out, flagged


# ---------------------------------------------------------------------------
# RQP: competition


def coalition_size_distribution(
    log: ActionLog, labels: np.ndarray, t: int
) -> dict[int, float]:
    """Normalized coalition sizes (distinct contributors by t / population by t)
    for clusters with at least one visible action at t."""
    if t < 0 or t > log.config.duration:
        raise ValueError(f"t={t} outside [0, {log.config.duration}]")
    labels = np.asarray(labels, dtype=np.int64)
    k = int(np.searchsorted(log.time, t, side="right"))
    if k == 0:
        return {}
    canvas = canvas_at(log, t)
    vis_actions = canvas.action[canvas.action >= 0]
    active = np.unique(labels[vis_actions])
    active = active[active >= 0]
    population = len(np.unique(log.player[:k]))
    out = {}
    lab_k = labels[:k]
    for lab in active:
        contributors = np.unique(log.player[:k][lab_k == lab])
        out[int(lab)] = len(contributors) / population
    return out


def conflict_timeline(
    log: ActionLog,
    labels: np.ndarray,
    cluster_id: int,
    bucket_ms: int = MS_PER_HOUR,
) -> dict:
    """Hourly collaborative vs adversarial action counts inside the cluster's
    pixel footprint (reference = the cluster's per-pixel modal color)."""
    labels = np.asarray(labels, dtype=np.int64)
    if not (labels == cluster_id).any():
        raise ValueError(f"unknown cluster id {cluster_id}")
    refs = modal_reference_colors(log, labels)[int(cluster_id)]
    w = log.config.width
    pix = log.y.astype(np.int64) * w + log.x.astype(np.int64)
    foot_pix = np.array(sorted(refs), dtype=np.int64)
    foot_ref = np.array([refs[p] for p in foot_pix.tolist()], dtype=np.int64)
    pos = np.searchsorted(foot_pix, pix)
    pos = np.clip(pos, 0, len(foot_pix) - 1)
    in_foot = foot_pix[pos] == pix
    ref_arr = np.where(in_foot, foot_ref[pos], -2)
    collab = in_foot & (log.color.astype(np.int64) == ref_arr)
    adv = in_foot & ~collab
    buckets = (log.time // bucket_ms).astype(np.int64)
    n_b = int(buckets.max()) + 1 if log.n_actions else 0
    return {
        "hours": np.arange(n_b),
        "collaborative": np.bincount(buckets[collab], minlength=n_b),
        "adversarial": np.bincount(buckets[adv], minlength=n_b),
    }


def actions_vs_pixels(
    records: dict[int, CoalitionRecord],
    region_areas: dict[int, int] | None = None,
) -> tuple[list[dict], float | None]:
    """Per artwork (actions, final pixels) plus the OLS slope actions ~ pixels."""
    rows = []
    for lab in sorted(records):
        rec = records[lab]
        area = region_areas.get(lab, rec.footprint) if region_areas else rec.footprint
        rows.append({"label": lab, "actions": rec.n_actions, "pixels": int(area)})
    slope = None
    if len(rows) >= 2:
        xs = np.array([r["pixels"] for r in rows], dtype=np.float64)
        ys = np.array([r["actions"] for r in rows], dtype=np.float64)
        if np.ptp(xs) > 0:
            slope = float(np.polyfit(xs, ys, 1)[0])
    return rows, slope
