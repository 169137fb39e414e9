"""Community atlas parsing and artwork labeling of canvas pixels and actions.

Point-in-polygon uses ray casting (+x ray, even-odd rule, boundary counts as
inside). Canvas labeling prefilters candidate entries by bounding box;
overlaps resolve to the smallest-area polygon, exact ties by entry id.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ingest import ActionLog, Canvas


@dataclass
class AtlasEntry:
    id: str
    name: str
    subreddit: str | None
    polygon: np.ndarray  # (m, 2) float vertices

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=np.float64)
        if self.polygon.ndim != 2 or self.polygon.shape[1] != 2 or len(self.polygon) < 3:
            raise DataError(f"atlas entry {self.id}: polygon needs >= 3 (x, y) vertices")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        xs, ys = self.polygon[:, 0], self.polygon[:, 1]
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())

    @property
    def area(self) -> float:
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass
class LabeledCanvas:
    """Per-pixel atlas entry index (-1 = unlabeled) over one canvas region."""

    entry_index: np.ndarray  # (H, W) int32
    entries: list[AtlasEntry]
    x0: int = 0
    y0: int = 0

    def n_labels_used(self) -> int:
        used = np.unique(self.entry_index)
        return int((used >= 0).sum())


def point_in_polygon(point, polygon) -> bool:
    """True iff the point is inside or on the boundary (even-odd rule)."""
    poly = np.asarray(polygon, dtype=np.float64)
    if len(poly) < 3:
        raise ValueError("polygon needs >= 3 vertices")
    px, py = float(point[0]), float(point[1])
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if _on_segment(px, py, x1, y1, x2, y2):
            return True
        if (y1 > py) != (y2 > py):
            xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xi:
                inside = not inside
    return inside


def _on_segment(px, py, x1, y1, x2, y2, eps=1e-12) -> bool:
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
    if abs(cross) > eps * scale * max(abs(px - x1), abs(py - y1), 1.0):
        return False
    return (
        min(x1, x2) - eps <= px <= max(x1, x2) + eps
        and min(y1, y2) - eps <= py <= max(y1, y2) + eps
    )


def polygon_grid_mask(polygon: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized point_in_polygon over the grid xs x ys; same semantics."""
    poly = np.asarray(polygon, dtype=np.float64)
    X = xs[None, :].astype(np.float64)
    Y = ys[:, None].astype(np.float64)
    inside = np.zeros((len(ys), len(xs)), dtype=bool)
    boundary = np.zeros_like(inside)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        cond = (y1 > Y) != (y2 > Y)
        if y2 != y1:
            xi = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= cond & (X < xi)
        # boundary: collinear and within the segment's bbox
        eps = 1e-12
        scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
        cross = (x2 - x1) * (Y - y1) - (y2 - y1) * (X - x1)
        far = np.maximum(np.broadcast_to(np.abs(X - x1), cross.shape),
                         np.broadcast_to(np.abs(Y - y1), cross.shape))
        tol = eps * scale * np.maximum(far, 1.0)
        on = (np.abs(cross) <= tol) \
            & (X >= min(x1, x2) - eps) & (X <= max(x1, x2) + eps) \
            & (Y >= min(y1, y2) - eps) & (Y <= max(y1, y2) + eps)
        boundary |= on
    return inside | boundary


def label_canvas(canvas: Canvas, atlas: list[AtlasEntry]) -> LabeledCanvas:
    """Label every canvas pixel with the smallest-area polygon containing it."""
    h, w = canvas.height, canvas.width
    entry_index = np.full((h, w), -1, dtype=np.int32)
    order = sorted(range(len(atlas)), key=lambda i: (atlas[i].area, str(atlas[i].id)))
    for i in order:
        entry = atlas[i]
        minx, miny, maxx, maxy = entry.bbox
        gx0 = max(int(np.floor(minx)), canvas.x0)
        gy0 = max(int(np.floor(miny)), canvas.y0)
        gx1 = min(int(np.ceil(maxx)), canvas.x0 + w - 1)
        gy1 = min(int(np.ceil(maxy)), canvas.y0 + h - 1)
        if gx1 < gx0 or gy1 < gy0:
            continue
        xs = np.arange(gx0, gx1 + 1)
        ys = np.arange(gy0, gy1 + 1)
        mask = polygon_grid_mask(entry.polygon, xs, ys)
        sub = entry_index[gy0 - canvas.y0 : gy1 - canvas.y0 + 1,
                          gx0 - canvas.x0 : gx1 - canvas.x0 + 1]
        sub[mask & (sub == -1)] = i
    return LabeledCanvas(entry_index=entry_index, entries=list(atlas),
                         x0=canvas.x0, y0=canvas.y0)


def label_actions(log: ActionLog, labeled: LabeledCanvas) -> np.ndarray:
    """Per-action atlas entry index (-1 where the pixel is unlabeled)."""
    px = log.x.astype(np.int64) - labeled.x0
    py = log.y.astype(np.int64) - labeled.y0
    h, w = labeled.entry_index.shape
    out = np.full(log.n_actions, -1, dtype=np.int64)
    ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    out[ok] = labeled.entry_index[py[ok], px[ok]]
    return out


_RANGE_RE = re.compile(r"(\d+)\s*(?:-\s*(\d+))?")


def _path_sort_key(key: str):
    # Time-scoped path keys look like "1-165, T" or "56-90"; pick the one
    # whose range ends latest, preferring keys flagged with T (final canvas).
    has_t = "T" in key.upper()
    end = -1
    for m in _RANGE_RE.finditer(key):
        hi = int(m.group(2) or m.group(1))
        end = max(end, hi)
    return (1 if has_t else 0, end)


def parse_atlas(path: str | Path) -> list[AtlasEntry]:
    """Normalize the community atlas file into AtlasEntry records.

    Accepts both the flat legacy format (``path`` is a vertex list) and the
    later format where ``path`` maps time-range keys to vertex lists; the
    final-time path is used. Entries with fewer than 3 vertices are skipped.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read atlas {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"atlas {path} is not valid JSON: {exc}") from exc
    if isinstance(raw, dict) and "atlas" in raw:
        raw = raw["atlas"]
    if not isinstance(raw, list):
        raise DataError(f"atlas {path}: expected a list of entries")
    entries = []
    for rec in raw:
        pid = str(rec.get("id", len(entries)))
        name = str(rec.get("name", ""))
        subreddit = _extract_subreddit(rec)
        path_field = rec.get("path")
        if isinstance(path_field, dict):
            if not path_field:
                continue
            key = max(path_field, key=_path_sort_key)
            verts = path_field[key]
        else:
            verts = path_field
        if not verts or len(verts) < 3:
            continue
        entries.append(AtlasEntry(id=pid, name=name, subreddit=subreddit,
                                  polygon=np.asarray(verts, dtype=np.float64)))
    return entries


def _extract_subreddit(rec: dict) -> str | None:
    sub = None
    links = rec.get("links")
    if isinstance(links, dict) and links.get("subreddit"):
        sub = links["subreddit"][0]
    elif rec.get("subreddit"):
        sub = str(rec["subreddit"]).split(",")[0]
    if sub is None:
        return None
    return sub.strip().lstrip("/").removeprefix("r/") or None
