"""Parse raw canvas dumps into one canonical, time-sorted, columnar action log.

Each edition's CSV schema differs; the adapters here normalize timestamps,
coordinate encodings, and color encodings to palette indices. The canonical
on-disk form is a columnar cache (one little-endian fixed-width file per
column plus a manifest) so downstream passes stream without re-parsing.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import GameConfig
from .errors import DataError

CACHE_FORMAT_VERSION = 1

_COLUMNS = {
    "x": np.uint16,
    "y": np.uint16,
    "color": np.uint8,
    "time": np.int64,
    "player": np.uint32,
}


@dataclass
class ActionLog:
    """Columnar action log sorted by (time, original file order).

    ``player`` holds dense 0-based ids; ``player_ids`` maps them back to the
    opaque 64-bit identifiers derived from the dump's user strings.
    """

    x: np.ndarray
    y: np.ndarray
    color: np.ndarray
    time: np.ndarray
    player: np.ndarray
    player_ids: np.ndarray
    config: GameConfig
    malformed_rows: int = 0
    malformed_reasons: dict = field(default_factory=dict)

    @property
    def n_actions(self) -> int:
        return len(self.time)

    @property
    def n_players(self) -> int:
        return len(self.player_ids)

    def validate(self) -> None:
        if not (np.diff(self.time) >= 0).all():
            raise DataError("action log is not time-sorted")
        if self.n_actions and int(self.player.max()) >= self.n_players:
            raise DataError("player index out of range")

    def save(self, cache_dir: str | Path) -> Path:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, dtype in _COLUMNS.items():
            arr = np.ascontiguousarray(getattr(self, name).astype(dtype))
            fname = f"col_{name}.bin"
            data = arr.tobytes()  # little-endian on all supported platforms
            _atomic_write_bytes(cache_dir / fname, data)
            files[name] = {
                "file": fname,
                "dtype": np.dtype(dtype).str,
                "sha256": hashlib.sha256(data).hexdigest(),
            }
        pdata = np.ascontiguousarray(self.player_ids.astype(np.uint64)).tobytes()
        _atomic_write_bytes(cache_dir / "players.bin", pdata)
        manifest = {
            "format_version": CACHE_FORMAT_VERSION,
            "edition": self.config.edition,
            "rows": self.n_actions,
            "players": self.n_players,
            "columns": files,
            "player_ids": {"file": "players.bin", "dtype": "<u8",
                           "sha256": hashlib.sha256(pdata).hexdigest()},
            "malformed_rows": self.malformed_rows,
            "malformed_reasons": self.malformed_reasons,
            "config": self.config.to_dict(),
        }
        _atomic_write_bytes(
            cache_dir / "manifest.json",
            (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode(),
        )
        return cache_dir

    @classmethod
    def load(cls, cache_dir: str | Path, verify: bool = True) -> "ActionLog":
        cache_dir = Path(cache_dir)
        mpath = cache_dir / "manifest.json"
        if not mpath.exists():
            raise DataError(f"no cache manifest at {mpath}")
        manifest = json.loads(mpath.read_text())
        if manifest.get("format_version") != CACHE_FORMAT_VERSION:
            raise DataError(f"unsupported cache format {manifest.get('format_version')}")
        cols = {}
        for name, meta in manifest["columns"].items():
            data = (cache_dir / meta["file"]).read_bytes()
            if verify and hashlib.sha256(data).hexdigest() != meta["sha256"]:
                raise DataError(f"checksum mismatch for column {name}")
            cols[name] = np.frombuffer(data, dtype=np.dtype(meta["dtype"]))
        pmeta = manifest["player_ids"]
        pdata = (cache_dir / pmeta["file"]).read_bytes()
        if verify and hashlib.sha256(pdata).hexdigest() != pmeta["sha256"]:
            raise DataError("checksum mismatch for player ids")
        log = cls(
            x=cols["x"], y=cols["y"], color=cols["color"], time=cols["time"],
            player=cols["player"],
            player_ids=np.frombuffer(pdata, dtype=np.uint64),
            config=GameConfig.from_dict(manifest["config"]),
            malformed_rows=manifest.get("malformed_rows", 0),
            malformed_reasons=manifest.get("malformed_reasons", {}),
        )
        if manifest["rows"] != log.n_actions:
            raise DataError("manifest row count does not match column length")
        return log


@dataclass
class Canvas:
    """Canvas state at one instant: last action per pixel, background elsewhere."""

    t: int
    width: int
    height: int
    x0: int
    y0: int
    color: np.ndarray   # (H, W) uint8 palette indices
    action: np.ndarray  # (H, W) int64 action row index, -1 where untouched
    palette: np.ndarray  # (n_colors, 3) uint8
    background: int

    def visible_mask(self) -> np.ndarray:
        return self.action >= 0


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _hash_user(user: str, cache: dict) -> int:
    h = cache.get(user)
    if h is None:
        h = int.from_bytes(hashlib.blake2b(user.encode(), digest_size=8).digest(), "little")
        cache[user] = h
    return h


_TS_FORMATS = ("%Y-%m-%d %H:%M:%S.%f %Z", "%Y-%m-%d %H:%M:%S %Z",
               "%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S")


def _parse_timestamp_ms(token: str) -> int:
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    for fmt in _TS_FORMATS:
        try:
            dt = datetime.strptime(token, fmt)
            dt = dt.replace(tzinfo=timezone.utc)
            return int(dt.timestamp() * 1000)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {token!r}")


def _norm_header(fields: list[str]) -> list[str]:
    return [f.strip().lower().lstrip("﻿") for f in fields]


def _schema_2017(header: list[str]):
    names = _norm_header(header)
    aliases = {
        "ts": "ts", "timestamp": "ts",
        "user": "user", "user_hash": "user", "user_id": "user",
        "x_coordinate": "x", "x": "x",
        "y_coordinate": "y", "y": "y",
        "color": "color", "pixel_color": "color",
    }
    idx = {}
    for i, name in enumerate(names):
        if name in aliases:
            idx[aliases[name]] = i
    if set(idx) != {"ts", "user", "x", "y", "color"}:
        return None

    def adapt(row):
        t = _parse_timestamp_ms(row[idx["ts"]])
        x = int(row[idx["x"]])
        y = int(row[idx["y"]])
        c = int(row[idx["color"]])
        return t, row[idx["user"]], x, y, c

    return adapt


def _hex_key(token: str) -> int:
    token = token.strip().lstrip("#")
    if len(token) != 6:
        raise ValueError(f"bad hex color {token!r}")
    return int(token, 16)


def _coord_pair(token: str) -> tuple[int, int]:
    # Moderation rectangles carry four numbers; treat them as ordinary
    # actions at their first vertex.
    parts = token.replace('"', "").split(",")
    if len(parts) not in (2, 4):
        raise ValueError(f"bad coordinate {token!r}")
    return int(float(parts[0])), int(float(parts[1]))


def _schema_2022(header: list[str]):
    names = _norm_header(header)
    if names != ["timestamp", "user_id", "pixel_color", "coordinate"]:
        return None

    def adapt(row):
        t = _parse_timestamp_ms(row[0])
        x, y = _coord_pair(row[3])
        return t, row[1], x, y, _hex_key(row[2])

    return adapt


def _schema_2023(header: list[str]):
    names = _norm_header(header)
    if names != ["timestamp", "user", "coordinate", "pixel"]:
        return None

    def adapt(row):
        t = _parse_timestamp_ms(row[0])
        x, y = _coord_pair(row[2])
        return t, row[1], x, y, _hex_key(row[3])

    return adapt


_SCHEMAS = {"2017": _schema_2017, "2022": _schema_2022, "2023": _schema_2023}


def parse_dump(
    path: str | Path,
    edition: str,
    config: GameConfig | None = None,
    max_malformed_frac: float = 0.001,
) -> ActionLog:
    """Parse one edition's raw CSV dump into an ActionLog.

    Malformed rows are counted per reason and dropped; if their fraction
    exceeds ``max_malformed_frac`` the parse aborts with a diagnostic.
    """
    from .config import load_edition_config

    path = Path(path)
    if edition not in _SCHEMAS:
        raise DataError(f"unknown edition {edition!r}")
    if config is None:
        config = load_edition_config(edition)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    reasons: dict[str, int] = {}

    def bump(reason):
        reasons[reason] = reasons.get(reason, 0) + 1

    times, users, xs, ys, colors = [], [], [], [], []
    hash_cache: dict[str, int] = {}
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty")
        adapt = _SCHEMAS[edition](header)
        if adapt is None:
            raise DataError(f"{path}: header {header!r} does not match the {edition} schema")
        n_rows = 0
        for row in reader:
            if not row:
                continue
            n_rows += 1
            try:
                t, user, x, y, c = adapt(row)
            except (ValueError, IndexError):
                bump("unparseable_row")
                continue
            times.append(t)
            users.append(_hash_user(user, hash_cache))
            xs.append(x)
            ys.append(y)
            colors.append(c)

    if n_rows == 0:
        raise DataError(f"{path} has no data rows")

    time = np.asarray(times, dtype=np.int64)
    x = np.asarray(xs, dtype=np.int64)
    y = np.asarray(ys, dtype=np.int64)
    color_raw = np.asarray(colors, dtype=np.int64)
    user_hash = np.asarray(users, dtype=np.uint64)
    del times, users, xs, ys, colors

    hex_colors = _SCHEMAS[edition] is not _schema_2017
    time = time - time.min()
    ox, oy = config.origin_offset
    x = x + ox
    y = y + oy

    keep = np.ones(len(time), dtype=bool)

    # Bounds against the expansion region active at each action's time.
    exp_times = np.array([e.time for e in config.expansions], dtype=np.int64)
    era = np.searchsorted(exp_times, time, side="right") - 1
    for i, exp in enumerate(config.expansions):
        m = era == i
        if not m.any():
            continue
        ok = (
            (x[m] >= exp.x0) & (x[m] < exp.x0 + exp.width)
            & (y[m] >= exp.y0) & (y[m] < exp.y0 + exp.height)
        )
        bad = int((~ok).sum())
        if bad:
            reasons["out_of_bounds"] = reasons.get("out_of_bounds", 0) + bad
            mi = np.where(m)[0][~ok]
            keep[mi] = False

    # Colors against the palette active at each action's time.
    pal_times = np.array([p.time for p in config.palettes], dtype=np.int64)
    pera = np.searchsorted(pal_times, time, side="right") - 1
    color = np.zeros(len(time), dtype=np.int64)
    for i, pal in enumerate(config.palettes):
        m = pera == i
        if not m.any():
            continue
        if hex_colors:
            keys = (
                pal.rgb[:, 0].astype(np.int64) << 16
                | pal.rgb[:, 1].astype(np.int64) << 8
                | pal.rgb[:, 2].astype(np.int64)
            )
            order = np.argsort(keys)
            sorted_keys = keys[order]
            pos = np.searchsorted(sorted_keys, color_raw[m])
            pos = np.clip(pos, 0, len(sorted_keys) - 1)
            ok = sorted_keys[pos] == color_raw[m]
            color[m] = order[pos]
        else:
            ok = (color_raw[m] >= 0) & (color_raw[m] < pal.n_colors)
            color[m] = color_raw[m]
        bad = int((~ok).sum())
        if bad:
            reasons["bad_color"] = reasons.get("bad_color", 0) + bad
            mi = np.where(m)[0][~ok]
            keep[mi] = False

    malformed = reasons.get("unparseable_row", 0) + int((~keep).sum())
    if malformed > max_malformed_frac * n_rows:
        detail = ", ".join(f"{k}={v}" for k, v in sorted(reasons.items()))
        raise DataError(
            f"{path}: {malformed} of {n_rows} rows malformed "
            f"(limit {max_malformed_frac:.2%}): {detail}"
        )

    time, x, y, color, user_hash = (a[keep] for a in (time, x, y, color, user_hash))
    order = np.argsort(time, kind="stable")
    time, x, y, color, user_hash = (a[order] for a in (time, x, y, color, user_hash))

    player, player_ids = _densify_players(user_hash)

    if len(time) and int(time[-1]) + 1 > config.duration:
        config.duration = int(time[-1]) + 1
        config.validate()

    return ActionLog(
        x=x.astype(np.uint16), y=y.astype(np.uint16), color=color.astype(np.uint8),
        time=time, player=player, player_ids=player_ids, config=config,
        malformed_rows=malformed, malformed_reasons=reasons,
    )


def _densify_players(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense 0-based player ids in order of first appearance."""
    uniq, first, inverse = np.unique(ids, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    return rank[inverse].astype(np.uint32), uniq[np.argsort(first, kind="stable")]


def filter_whiteout(log: ActionLog) -> ActionLog:
    """Drop actions at or after the whiteout cutoff; re-densifies player ids."""
    cut = np.searchsorted(log.time, log.config.whiteout_start, side="left")
    if cut == log.n_actions:
        return log
    kept_ids = log.player_ids[log.player[:cut]]
    player, player_ids = _densify_players(kept_ids)
    return ActionLog(
        x=log.x[:cut], y=log.y[:cut], color=log.color[:cut], time=log.time[:cut],
        player=player, player_ids=player_ids, config=log.config,
        malformed_rows=log.malformed_rows, malformed_reasons=log.malformed_reasons,
    )


def canvas_at(log: ActionLog, t: int) -> Canvas:
    """Materialize the canvas at time t: most recent action per pixel."""
    cfg = log.config
    if t < 0 or t > cfg.duration:
        raise ValueError(f"t={t} outside [0, {cfg.duration}]")
    region = cfg.region_at(t)
    pal = cfg.palette_at(t)
    color = np.full((region.height, region.width), pal.background, dtype=np.uint8)
    action = np.full((region.height, region.width), -1, dtype=np.int64)

    k = int(np.searchsorted(log.time, t, side="right"))
    if k:
        px = log.x[:k].astype(np.int64) - region.x0
        py = log.y[:k].astype(np.int64) - region.y0
        pix = py * region.width + px
        order = np.argsort(pix, kind="stable")  # within a pixel, time order survives
        spix = pix[order]
        last = np.ones(k, dtype=bool)
        last[:-1] = spix[1:] != spix[:-1]
        rows = order[last]
        action[py[rows], px[rows]] = rows
        color[py[rows], px[rows]] = log.color[rows]

    return Canvas(
        t=t, width=region.width, height=region.height, x0=region.x0, y0=region.y0,
        color=color, action=action, palette=pal.rgb, background=pal.background,
    )
