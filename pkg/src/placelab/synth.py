"""Synthetic canvas games with planted ground truth.

Every pipeline stage needs an oracle at desk scale: the generator plants
artworks (teams painting bitmap templates), redundancy (wasted repaints of
already-correct pixels at a configured rate), loafing (member selection
skew), scripted attacks, and erasures, then emits the action log, per-action
truth labels, and the analytically tracked per-coalition oracle values.

Teams work only while their artwork has incorrect pixels, and each work slot
is a wasted repaint with probability ``redundancy``, so the wasted-to-agreeing
ratio concentrates on the planted rate. All players respect the rate cap.
Noise actions land outside every artwork's region and carry truth label -1.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .config import GameConfig, synthetic_config
from .errors import DataError
from .ingest import ActionLog
from .ingest import _densify_players  # shared dense-id convention


@dataclass
class Attack:
    start: int
    end: int
    team_size: int
    color: int
    coverage: float = 0.3       # fraction of template columns overwritten
    halo: float = 0.0           # extra area factor around the bbox (erasures)
    pace_ms: int = 1000         # mean gap between attack actions

    def validate(self):
        if not (0 < self.coverage <= 1):
            raise DataError("attack coverage must be in (0, 1]")
        if self.end <= self.start:
            raise DataError("attack window must be non-empty")


@dataclass
class Artwork:
    name: str
    template: np.ndarray        # (h, w) palette indices, -1 transparent
    origin: tuple[int, int]
    team_size: int
    start: int = 0
    end: int | None = None      # team stops acting at this time
    redundancy: float = 0.0
    loafing_exponent: float = 0.0
    pace_ms: int = 1000         # mean gap between team work slots
    ramp_ms: int = 0            # members join spread over this window
    attacks: list[Attack] = field(default_factory=list)
    erased: bool = False

    def pixels(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self.template >= 0)
        ox, oy = self.origin
        return [(ox + int(x), oy + int(y)) for y, x in zip(ys, xs)]


@dataclass
class NoiseSpec:
    rate_per_hour: float = 0.0
    players: int = 0
    end: int | None = None      # noise arrivals stop here (default: duration)


@dataclass
class Scenario:
    name: str
    width: int
    height: int
    duration: int
    palette: list[str]
    artworks: list[Artwork]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rate_cap: int = 300_000
    seed: int = 0

    def config(self) -> GameConfig:
        return synthetic_config(self.width, self.height, self.duration, self.palette)


def load_template(name: str) -> np.ndarray:
    try:
        text = resources.files("placelab.data.templates").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise DataError(f"no bundled template {name!r}")
    return np.asarray(json.loads(text)["rows"], dtype=np.int64)


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    """Scenario config file (same structured JSON style as GameConfig)."""
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(d, seed=seed)


def bundled_scenario(name: str, seed: int | None = None) -> Scenario:
    text = resources.files("placelab.data.scenarios").joinpath(f"{name}.json").read_text()
    return scenario_from_dict(json.loads(text), seed=seed)


def scenario_from_dict(d: dict, seed: int | None = None) -> Scenario:
    artworks = []
    for a in d["artworks"]:
        if "rows" in a:
            template = np.asarray(a["rows"], dtype=np.int64)
        else:
            template = load_template(a["template"])
        scale = int(a.get("scale", 1))
        if scale > 1:
            template = np.repeat(np.repeat(template, scale, axis=0), scale, axis=1)
        cmap = {int(k): int(v) for k, v in a.get("color_map", {}).items()}
        if cmap:
            mapped = template.copy()
            for src, dst in cmap.items():
                mapped[template == src] = dst
            template = mapped
        attacks = [
            Attack(
                start=int(t["start_ms"]), end=int(t["end_ms"]),
                team_size=int(t["team_size"]), color=int(t["color"]),
                coverage=float(t.get("coverage", 0.3)),
                halo=float(t.get("halo", 0.0)),
                pace_ms=int(t.get("pace_ms", 1000)),
            )
            for t in a.get("attacks", [])
        ]
        artworks.append(Artwork(
            name=a["name"],
            template=template,
            origin=(int(a["origin"][0]), int(a["origin"][1])),
            team_size=int(a["team_size"]),
            start=int(a.get("start_ms", 0)),
            end=int(a["end_ms"]) if a.get("end_ms") is not None else None,
            redundancy=float(a.get("redundancy", 0.0)),
            loafing_exponent=float(a.get("loafing_exponent", 0.0)),
            pace_ms=int(a.get("pace_ms", 1000)),
            ramp_ms=int(a.get("ramp_ms", 0)),
            attacks=attacks,
            erased=bool(a.get("erased", False)),
        ))
    noise = d.get("background_noise", {})
    return Scenario(
        name=d.get("name", "scenario"),
        width=int(d["canvas"]["width"]),
        height=int(d["canvas"]["height"]),
        duration=int(d["duration_ms"]),
        palette=list(d["palette"]),
        artworks=artworks,
        noise=NoiseSpec(
            rate_per_hour=float(noise.get("rate_per_hour", 0.0)),
            players=int(noise.get("players", 0)),
            end=int(noise["end_ms"]) if noise.get("end_ms") is not None else None,
        ),
        rate_cap=int(d.get("rate_cap_ms", 300_000)),
        seed=int(d.get("seed", 0)) if seed is None else seed,
    )


@dataclass
class CoalitionOracle:
    label: int
    kind: str                 # "artwork" or "attack"
    name: str
    n_actions: int
    n_wasted: int
    max_area: int
    final_area: int
    successful: bool
    member_counts: dict[int, int]

    @property
    def wasted_ratio(self) -> float | None:
        return self.n_wasted / self.n_actions if self.n_actions else None


class _RandomBag:
    """Set with O(1) uniform random pick (swap-pop removal, seeded rng)."""

    def __init__(self, items, rng):
        self.items = list(items)
        self.pos = {p: i for i, p in enumerate(self.items)}
        self.rng = rng

    def __len__(self):
        return len(self.items)

    def __contains__(self, p):
        return p in self.pos

    def add(self, p):
        if p not in self.pos:
            self.pos[p] = len(self.items)
            self.items.append(p)

    def remove(self, p):
        i = self.pos.pop(p)
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def pick(self):
        return self.items[int(self.rng.integers(0, len(self.items)))]


class _Team:
    """One acting group with rate-capped members and optional selection skew."""

    def __init__(self, members, weights, rate_cap, rng, join_times=None):
        self.members = list(members)
        w = np.asarray(weights, dtype=np.float64)
        self.weights = w / w.sum()
        self.rate_cap = rate_cap
        self.rng = rng
        self.action_count: dict[int, int] = {}
        if join_times is None:
            self.avail = list(range(len(self.members)))   # member indices
            self.busy: list[tuple[int, int]] = []         # (next_free, member idx)
        else:
            self.avail = []
            self.busy = [(int(j), mi) for mi, j in enumerate(join_times)]
            heapq.heapify(self.busy)

    def act(self, t: int) -> int | None:
        while self.busy and self.busy[0][0] <= t:
            _, mi = heapq.heappop(self.busy)
            self.avail.append(mi)
        if not self.avail:
            return None
        w = self.weights[self.avail]
        pick = int(self.rng.choice(len(self.avail), p=w / w.sum()))
        mi = self.avail[pick]
        self.avail[pick] = self.avail[-1]
        self.avail.pop()
        nf = t + self.rate_cap + int(self.rng.integers(0, 2000))
        heapq.heappush(self.busy, (nf, mi))
        m = self.members[mi]
        self.action_count[m] = self.action_count.get(m, 0) + 1
        return m

    def earliest_free(self) -> int:
        return self.busy[0][0] if self.busy else 0


def generate(scenario: Scenario) -> tuple[ActionLog, np.ndarray, dict]:
    """Simulate the scenario; returns (log, truth labels, oracle values)."""
    cfg = scenario.config()
    n_colors = cfg.palettes[0].n_colors
    bg = cfg.palettes[0].background
    for art in scenario.artworks:
        h, w = art.template.shape
        ox, oy = art.origin
        if ox < 0 or oy < 0 or ox + w > scenario.width or oy + h > scenario.height:
            raise DataError(f"artwork {art.name}: template does not fit the canvas")
        if int(art.template.max()) >= n_colors:
            raise DataError(f"artwork {art.name}: template color outside the palette")

    rng = np.random.default_rng(scenario.seed)
    rows: list[tuple[int, int, int, int, int, int]] = []  # t, player, x, y, color, label

    all_template_pixels: set[tuple[int, int]] = set()
    for art in scenario.artworks:
        all_template_pixels.update(art.pixels())

    next_player = 0
    oracles: list[CoalitionOracle] = []
    n_artworks = len(scenario.artworks)
    next_attack_label = n_artworks

    for ai, art in enumerate(scenario.artworks):
        joins = None
        if art.ramp_ms > 0:
            joins = art.start + (np.arange(art.team_size, dtype=np.int64)
                                 * art.ramp_ms) // art.team_size
        team = _Team(
            range(next_player, next_player + art.team_size),
            np.arange(1, art.team_size + 1, dtype=np.float64) ** (-art.loafing_exponent),
            scenario.rate_cap, rng, join_times=joins,
        )
        next_player += art.team_size
        attack_labels = []
        for atk in art.attacks:
            atk.validate()
            attack_labels.append(next_attack_label)
            next_attack_label += 1
        art_oracles, n_used = _simulate_artwork(
            scenario, art, ai, attack_labels, team, next_player,
            all_template_pixels, bg, rng, rows,
        )
        next_player += n_used
        oracles.extend(art_oracles)

    # background noise outside every artwork region
    if scenario.noise.rate_per_hour > 0 and scenario.noise.players > 0:
        n_noise = int(scenario.noise.rate_per_hour * scenario.duration / 3_600_000)
        nteam = _Team(
            range(next_player, next_player + scenario.noise.players),
            np.ones(scenario.noise.players), scenario.rate_cap, rng,
        )
        next_player += scenario.noise.players
        noise_end = scenario.noise.end or scenario.duration
        times = np.sort(rng.integers(0, noise_end, size=n_noise))
        for t in times.tolist():
            m = nteam.act(int(t))
            if m is None:
                continue
            while True:
                x = int(rng.integers(0, scenario.width))
                y = int(rng.integers(0, scenario.height))
                if (x, y) not in all_template_pixels:
                    break
            c = int(rng.integers(0, n_colors))
            rows.append((int(t), m, x, y, c, -1))

    if not rows:
        raise DataError("scenario produced no actions")

    arr = np.asarray(rows, dtype=np.int64)
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    player, player_ids = _densify_players(arr[:, 1].astype(np.uint64))
    log = ActionLog(
        x=arr[:, 2].astype(np.uint16), y=arr[:, 3].astype(np.uint16),
        color=arr[:, 4].astype(np.uint8), time=arr[:, 0].copy(),
        player=player, player_ids=player_ids, config=cfg,
    )
    truth = arr[:, 5].copy()
    oracle = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "n_actions": int(log.n_actions),
        "n_players": int(log.n_players),
        "coalitions": [vars(o) for o in oracles],
    }
    return log, truth, oracle


def _simulate_artwork(scenario, art, label, attack_labels, team, player_base,
                      all_template_pixels, bg, rng, rows):
    """Chronological walk over one artwork's local world (team + its attackers)."""
    pix = art.pixels()
    template_color = {
        (x, y): int(art.template[y - art.origin[1], x - art.origin[0]])
        for (x, y) in pix
    }
    current = {p: bg for p in pix}
    incorrect = _RandomBag((p for p in pix if current[p] != template_color[p]), rng)
    correct = _RandomBag((p for p in pix if current[p] == template_color[p]), rng)

    attack_teams, attack_targets, attack_pending, attack_counts = {}, {}, {}, {}
    attack_target_sets = {}
    used_players = 0
    for atk, lab in zip(art.attacks, attack_labels):
        attack_teams[lab] = _Team(
            range(player_base + used_players, player_base + used_players + atk.team_size),
            np.ones(atk.team_size), scenario.rate_cap, rng,
        )
        used_players += atk.team_size
        targets = _attack_region(art, atk, all_template_pixels,
                                 scenario.width, scenario.height)
        attack_targets[lab] = targets
        attack_target_sets[lab] = set(targets)
        attack_pending[lab] = _RandomBag(targets, rng)  # pixels not yet attack-colored
        attack_counts[lab] = 0

    team_end = art.end if art.end is not None else scenario.duration
    if art.erased and art.attacks:
        team_end = min(team_end, min(atk.start for atk in art.attacks))

    matching = len(correct)
    max_area = matching
    n_wasted = 0
    n_team_actions = 0

    events: list[tuple[int, int, int]] = []  # (time, seq, stream); stream -1 = team
    seq = 0

    def push(t, stream):
        nonlocal seq
        heapq.heappush(events, (t, seq, stream))
        seq += 1

    team_pending = True
    push(art.start, -1)
    for i, atk in enumerate(art.attacks):
        push(atk.start, i)

    by_lab = dict(zip(attack_labels, art.attacks))
    duration = scenario.duration

    while events:
        t, _, stream = heapq.heappop(events)
        if t >= duration:
            continue
        if stream == -1:
            team_pending = False
            if t >= team_end or len(incorrect) == 0:
                continue  # re-armed when an attack lands new damage
            m = team.act(t)
            if m is None:
                team_pending = True
                push(max(team.earliest_free(), t + 1), -1)
                continue
            if len(correct) and rng.random() < art.redundancy:
                p = correct.pick()
                c = template_color[p]
                n_wasted += 1  # repaint of an already-correct pixel
            else:
                p = incorrect.pick()
                c = template_color[p]
                incorrect.remove(p)
                correct.add(p)
                matching += 1
                max_area = max(max_area, matching)
                for lab, pend in attack_pending.items():
                    if p in attack_target_sets[lab]:
                        pend.add(p)  # team repainted an attacked pixel
            current[p] = c
            rows.append((t, m, p[0], p[1], c, label))
            n_team_actions += 1
            team_pending = True
            push(t + int(rng.integers(art.pace_ms // 2, art.pace_ms * 3 // 2 + 1)), -1)
        else:
            lab = attack_labels[stream]
            atk = by_lab[lab]
            if t >= atk.end:
                continue
            pend = attack_pending[lab]
            if len(pend) == 0:
                push(t + 5_000, stream)
                continue
            ateam = attack_teams[lab]
            m = ateam.act(t)
            if m is None:
                push(max(ateam.earliest_free(), t + 1), stream)
                continue
            p = pend.pick()
            pend.remove(p)
            if p in template_color and current.get(p, bg) == template_color[p]:
                correct.remove(p)
                incorrect.add(p)
                matching -= 1
            current[p] = atk.color
            rows.append((t, m, p[0], p[1], atk.color, lab))
            attack_counts[lab] += 1
            if not team_pending and t + 1 < team_end:
                team_pending = True
                push(t + 1, -1)  # wake the team: damage appeared
            push(t + int(rng.integers(atk.pace_ms // 2, atk.pace_ms * 3 // 2 + 1)), stream)

    out = [CoalitionOracle(
        label=label, kind="artwork", name=art.name,
        n_actions=n_team_actions, n_wasted=n_wasted,
        max_area=max_area, final_area=matching,
        successful=matching >= 0.4 * max_area,
        member_counts=dict(sorted(team.action_count.items())),
    )]
    for lab in attack_labels:
        targets = attack_targets[lab]
        atk = by_lab[lab]
        final_atk = sum(1 for p in targets if current.get(p, bg) == atk.color)
        out.append(CoalitionOracle(
            label=lab, kind="attack", name=f"{art.name}/attack@{atk.start}",
            n_actions=attack_counts[lab], n_wasted=0,
            max_area=len(targets), final_area=final_atk,
            successful=final_atk >= 0.4 * len(targets),
            member_counts=dict(sorted(attack_teams[lab].action_count.items())),
        ))
    return out, used_players


def _attack_region(art: Artwork, atk: Attack, all_template_pixels,
                   width, height) -> list[tuple[int, int]]:
    """Contiguous column block of the template (coverage), plus an optional
    halo ring around the bbox that avoids every artwork's pixels."""
    pix = art.pixels()
    xs = sorted({x for x, _ in pix})
    n_cols = max(1, int(round(atk.coverage * len(xs))))
    chosen_cols = set(xs[:n_cols])
    region = [p for p in pix if p[0] in chosen_cols]
    if atk.halo > 1.0:
        minx = min(x for x, _ in pix)
        maxx = max(x for x, _ in pix)
        miny = min(y for _, y in pix)
        maxy = max(y for _, y in pix)
        bw, bh = maxx - minx + 1, maxy - miny + 1
        grow = (np.sqrt(atk.halo) - 1.0) / 2.0
        gx, gy = int(round(bw * grow)), int(round(bh * grow))
        own = set(pix)
        for y in range(max(0, miny - gy), min(height, maxy + gy + 1)):
            for x in range(max(0, minx - gx), min(width, maxx + gx + 1)):
                p = (x, y)
                if p in own:
                    continue
                if p in all_template_pixels:
                    continue  # never overwrite other artworks
                region.append(p)
    return region


def save_truth_csv(path: str | Path, truth: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write("item_id,cluster\n")
        for i, lab in enumerate(truth.tolist()):
            fh.write(f"{i},{lab}\n")
    tmp.replace(path)


def save_oracle_json(path: str | Path, oracle: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(oracle, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)
