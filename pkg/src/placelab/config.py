"""Game configuration: canvas expansion schedule, palette schedule, whiteout cutoff.

Configs are plain JSON files; the three shipped edition configs live in
``placelab/data/``. All times are milliseconds relative to the edition's
first action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

MS_PER_HOUR = 3_600_000

EDITIONS = ("2017", "2022", "2023", "synth")


class ConfigError(ValueError):
    pass


def parse_hex_color(text: str) -> tuple[int, int, int]:
    s = text.strip().lstrip("#")
    if len(s) != 6:
        raise ConfigError(f"bad hex color {text!r}")
    return tuple(int(s[i : i + 2], 16) for i in (0, 2, 4))


@dataclass(frozen=True)
class Expansion:
    """Active canvas region from ``time`` onward, in final-canvas coordinates."""

    time: int
    width: int
    height: int
    x0: int = 0
    y0: int = 0

    def contains(self, other: "Expansion") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and self.x0 + self.width >= other.x0 + other.width
            and self.y0 + self.height >= other.y0 + other.height
        )


@dataclass(frozen=True)
class PaletteEntry:
    """RGB table active from ``time`` onward."""

    time: int
    rgb: np.ndarray  # (n_colors, 3) uint8
    background: int  # index of the background (white) color

    @property
    def n_colors(self) -> int:
        return len(self.rgb)


@dataclass
class GameConfig:
    edition: str
    expansions: list[Expansion]
    palettes: list[PaletteEntry]
    whiteout_start: int
    duration: int
    origin_offset: tuple[int, int] = (0, 0)  # added to raw dump coordinates
    notes: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.edition not in EDITIONS:
            raise ConfigError(f"unknown edition {self.edition!r}")
        if not self.expansions or self.expansions[0].time != 0:
            raise ConfigError("first expansion entry must have time 0")
        prev = None
        for exp in self.expansions:
            if prev is not None:
                if exp.time <= prev.time:
                    raise ConfigError("expansion times must be strictly increasing")
                if exp.width * exp.height < prev.width * prev.height:
                    raise ConfigError("expansion areas must be non-decreasing")
                if not exp.contains(prev):
                    raise ConfigError("each expansion region must contain the previous")
            prev = exp
        if not self.palettes or self.palettes[0].time != 0:
            raise ConfigError("first palette entry must have time 0")
        for a, b in zip(self.palettes, self.palettes[1:]):
            if b.time <= a.time:
                raise ConfigError("palette times must be strictly increasing")
        if self.whiteout_start > self.duration:
            raise ConfigError("whiteout_start must be <= duration")

    @property
    def width(self) -> int:
        return self.expansions[-1].width

    @property
    def height(self) -> int:
        return self.expansions[-1].height

    def region_at(self, t: int) -> Expansion:
        cur = self.expansions[0]
        for exp in self.expansions:
            if exp.time <= t:
                cur = exp
            else:
                break
        return cur

    def palette_at(self, t: int) -> PaletteEntry:
        cur = self.palettes[0]
        for pal in self.palettes:
            if pal.time <= t:
                cur = pal
            else:
                break
        return cur

    def to_dict(self) -> dict:
        return {
            "edition": self.edition,
            "expansions": [
                {"time_ms": e.time, "width": e.width, "height": e.height, "x0": e.x0, "y0": e.y0}
                for e in self.expansions
            ],
            "palettes": [
                {
                    "time_ms": p.time,
                    "colors": ["#%02X%02X%02X" % tuple(c) for c in p.rgb],
                }
                for p in self.palettes
            ],
            "whiteout_start_ms": self.whiteout_start,
            "duration_ms": self.duration,
            "origin_offset": list(self.origin_offset),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        expansions = [
            Expansion(
                time=int(e["time_ms"]),
                width=int(e["width"]),
                height=int(e["height"]),
                x0=int(e.get("x0", 0)),
                y0=int(e.get("y0", 0)),
            )
            for e in d["expansions"]
        ]
        palettes = []
        for p in d["palettes"]:
            rgb = np.array([parse_hex_color(c) for c in p["colors"]], dtype=np.uint8)
            white = np.where((rgb == 255).all(axis=1))[0]
            background = int(white[0]) if len(white) else 0
            palettes.append(PaletteEntry(time=int(p["time_ms"]), rgb=rgb, background=background))
        return cls(
            edition=str(d["edition"]),
            expansions=expansions,
            palettes=palettes,
            whiteout_start=int(d["whiteout_start_ms"]),
            duration=int(d["duration_ms"]),
            origin_offset=tuple(d.get("origin_offset", (0, 0))),
            notes=d.get("notes", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GameConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_edition_config(edition: str) -> GameConfig:
    """Shipped default config for one of the three editions."""
    name = f"edition_{edition}.json"
    try:
        text = resources.files("placelab.data").joinpath(name).read_text()
    except FileNotFoundError:
        raise ConfigError(f"no shipped config for edition {edition!r}")
    return GameConfig.from_dict(json.loads(text))


def synthetic_config(
    width: int,
    height: int,
    duration: int,
    palette_hex: list[str],
    whiteout_start: int | None = None,
) -> GameConfig:
    rgb = np.array([parse_hex_color(c) for c in palette_hex], dtype=np.uint8)
    white = np.where((rgb == 255).all(axis=1))[0]
    background = int(white[0]) if len(white) else 0
    return GameConfig(
        edition="synth",
        expansions=[Expansion(time=0, width=width, height=height)],
        palettes=[PaletteEntry(time=0, rgb=rgb, background=background)],
        whiteout_start=duration if whiteout_start is None else whiteout_start,
        duration=duration,
    )
