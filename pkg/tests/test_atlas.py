import json

import numpy as np
import pytest

from placelab.atlas import (AtlasEntry, label_actions, label_canvas, parse_atlas,
                            point_in_polygon, polygon_grid_mask)
from placelab.ingest import canvas_at

from conftest import make_log

UNIT_SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


def winding_number_inside(point, polygon):
    """Independent oracle: nonzero winding number (exact for simple polygons)."""
    px, py = point
    wn = 0
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if y1 <= py:
            if y2 > py and cross > 0:
                wn += 1
        else:
            if y2 <= py and cross < 0:
                wn -= 1
    return wn != 0


def random_simple_polygon(rng, n_min=3, n_max=12):
    """Star-shaped polygon around a random center: always simple."""
    n = int(rng.integers(n_min, n_max + 1))
    cx, cy = rng.uniform(-5, 5, size=2)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    if len(np.unique(np.round(angles, 9))) < n:
        angles = np.linspace(0, 2 * np.pi, n, endpoint=False)
    radii = rng.uniform(0.5, 5.0, size=n)
    return [(cx + r * np.cos(a), cy + r * np.sin(a)) for r, a in zip(radii, angles)]


def distance_to_boundary(point, polygon):
    px, py = point
    best = np.inf
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        dx, dy = x2 - x1, y2 - y1
        denom = dx * dx + dy * dy
        t = 0.0 if denom == 0 else max(0.0, min(1.0, ((px - x1) * dx + (py - y1) * dy) / denom))
        best = min(best, np.hypot(px - (x1 + t * dx), py - (y1 + t * dy)))
    return best


class TestPointInPolygon:
    def test_interior_point(self):
        assert point_in_polygon((0.5, 0.5), UNIT_SQUARE)

    def test_exterior_point(self):
        assert not point_in_polygon((2, 2), UNIT_SQUARE)

    def test_boundary_counts_as_inside(self):
        assert point_in_polygon((0.5, 0.0), UNIT_SQUARE)
        assert point_in_polygon((1.0, 1.0), UNIT_SQUARE)

    def test_degenerate_polygon_contains_only_boundary(self):
        line = [(0, 0), (2, 2), (1, 1)]
        assert point_in_polygon((0.5, 0.5), line)
        assert not point_in_polygon((0.5, 0.6), line)
        assert not point_in_polygon((5, 5), line)

    def test_agrees_with_winding_number_oracle(self):
        rng = np.random.default_rng(12345)
        checked = 0
        while checked < 1000:
            poly = random_simple_polygon(rng)
            point = tuple(rng.uniform(-11, 11, size=2))
            if distance_to_boundary(point, poly) < 1e-9:
                continue
            assert point_in_polygon(point, poly) == winding_number_inside(point, poly)
            checked += 1

    def test_translation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            poly = random_simple_polygon(rng)
            point = tuple(rng.uniform(-8, 8, size=2))
            dx, dy = rng.integers(-1000, 1000, size=2)
            moved_poly = [(x + dx, y + dy) for x, y in poly]
            moved_point = (point[0] + dx, point[1] + dy)
            assert point_in_polygon(point, poly) == point_in_polygon(moved_point, moved_poly)

    def test_convex_half_plane_agreement(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            # random convex polygon: hull of random points
            pts = rng.uniform(-4, 4, size=(12, 2))
            hull = _convex_hull(pts)
            point = tuple(rng.uniform(-5, 5, size=2))
            if distance_to_boundary(point, hull) < 1e-9:
                continue
            assert point_in_polygon(point, hull) == _in_all_half_planes(point, hull)

    def test_grid_mask_matches_scalar(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            poly = random_simple_polygon(rng)
            xs = np.arange(-6, 7)
            ys = np.arange(-6, 7)
            mask = polygon_grid_mask(np.asarray(poly), xs, ys)
            for yi, y in enumerate(ys):
                for xi, x in enumerate(xs):
                    assert mask[yi, xi] == point_in_polygon((x, y), poly)


def _convex_hull(pts):
    pts = sorted(map(tuple, pts))

    def cross2(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(points):
        out = []
        for p in points:
            while len(out) >= 2 and cross2(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return lower[:-1] + upper[:-1]


def _in_all_half_planes(point, hull):
    n = len(hull)
    px, py = point
    for i in range(n):
        x1, y1 = hull[i]
        x2, y2 = hull[(i + 1) % n]
        if (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1) < 0:
            return False
    return True


class TestLabelCanvas:
    def _canvas(self, w=10, h=10):
        log = make_log([(0, 1, 0, 0, 1)], width=w, height=h)
        return canvas_at(log, 0)

    def test_empty_atlas_all_null(self):
        labeled = label_canvas(self._canvas(), [])
        assert (labeled.entry_index == -1).all()

    def test_nested_polygons_inner_wins(self):
        outer = AtlasEntry(id="big", name="outer", subreddit=None,
                           polygon=[(0, 0), (9, 0), (9, 9), (0, 9)])
        inner = AtlasEntry(id="small", name="inner", subreddit=None,
                           polygon=[(2, 2), (5, 2), (5, 5), (2, 5)])
        labeled = label_canvas(self._canvas(), [outer, inner])
        assert labeled.entry_index[3, 3] == 1  # inner entry index
        assert labeled.entry_index[8, 8] == 0

    def test_entry_order_independent(self):
        a = AtlasEntry(id="a", name="", subreddit=None,
                       polygon=[(0, 0), (6, 0), (6, 6), (0, 6)])
        b = AtlasEntry(id="b", name="", subreddit=None,
                       polygon=[(3, 3), (8, 3), (8, 8), (3, 8)])
        l1 = label_canvas(self._canvas(), [a, b])
        l2 = label_canvas(self._canvas(), [b, a])
        ids1 = np.array([["" if v < 0 else [a, b][v].id for v in row]
                         for row in l1.entry_index])
        ids2 = np.array([["" if v < 0 else [b, a][v].id for v in row]
                         for row in l2.entry_index])
        assert (ids1 == ids2).all()

    def test_equal_area_tie_breaks_by_id(self):
        sq = [(2, 2), (5, 2), (5, 5), (2, 5)]
        a = AtlasEntry(id="zz", name="", subreddit=None, polygon=sq)
        b = AtlasEntry(id="aa", name="", subreddit=None, polygon=sq)
        labeled = label_canvas(self._canvas(), [a, b])
        assert labeled.entry_index[3, 3] == 1  # "aa" sorts first


class TestLabelActions:
    def test_action_at_null_pixel_is_null(self):
        log = make_log([(0, 1, 9, 9, 1), (5, 2, 3, 3, 2)])
        entry = AtlasEntry(id="e", name="", subreddit=None,
                           polygon=[(2, 2), (5, 2), (5, 5), (2, 5)])
        labeled = label_canvas(canvas_at(log, 5), [entry])
        labels = label_actions(log, labeled)
        assert labels.tolist() == [-1, 0]

    def test_single_artwork_synthetic_game_all_labeled(self, two_teams_run):
        log, truth, _ = two_teams_run
        entries = [
            AtlasEntry(id="red", name="", subreddit=None,
                       polygon=[(5, 5), (20, 5), (20, 20), (5, 20)]),
            AtlasEntry(id="green", name="", subreddit=None,
                       polygon=[(40, 30), (55, 30), (55, 45), (40, 45)]),
        ]
        labeled = label_canvas(canvas_at(log, int(log.time[-1])), entries)
        labels = label_actions(log, labeled)
        team0 = labels[truth == 0]
        team1 = labels[truth == 1]
        assert (team0 == 0).all()
        assert (team1 == 1).all()


class TestParseAtlas:
    def test_legacy_flat_format(self, tmp_path):
        f = tmp_path / "atlas.json"
        f.write_text(json.dumps([{
            "id": "x1", "name": "Flag", "subreddit": "/r/flags",
            "path": [[0, 0], [4, 0], [4, 4], [0, 4]],
        }]))
        entries = parse_atlas(f)
        assert len(entries) == 1
        assert entries[0].subreddit == "flags"
        assert entries[0].area == 16.0

    def test_time_scoped_paths_use_final(self, tmp_path):
        f = tmp_path / "atlas.json"
        f.write_text(json.dumps({"atlas": [{
            "id": "y", "name": "Thing",
            "links": {"subreddit": ["things"]},
            "path": {
                "1-50": [[0, 0], [2, 0], [2, 2], [0, 2]],
                "51-166, T": [[0, 0], [8, 0], [8, 8], [0, 8]],
            },
        }]}))
        entries = parse_atlas(f)
        assert entries[0].area == 64.0
        assert entries[0].subreddit == "things"

    def test_short_paths_skipped(self, tmp_path):
        f = tmp_path / "atlas.json"
        f.write_text(json.dumps([
            {"id": "a", "name": "", "path": [[0, 0], [1, 1]]},
            {"id": "b", "name": "", "path": [[0, 0], [3, 0], [3, 3]]},
        ]))
        entries = parse_atlas(f)
        assert [e.id for e in entries] == ["b"]

    def test_bad_json_raises(self, tmp_path):
        f = tmp_path / "atlas.json"
        f.write_text("{not json")
        from placelab.errors import DataError
        with pytest.raises(DataError):
            parse_atlas(f)
