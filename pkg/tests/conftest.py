import numpy as np
import pytest

from placelab.config import synthetic_config
from placelab.ingest import ActionLog
from placelab.synth import bundled_scenario, generate

TEST_PALETTE = ["#FFFFFF", "#E50000", "#E59500", "#E5D900", "#02BE01", "#00D3DD",
                "#0000EA", "#820080", "#FFA7D1", "#A06A42", "#222222", "#888888"]


def make_log(rows, width=10, height=10, duration=100_000, palette=None):
    """Build an ActionLog from (t, player, x, y, color) tuples (test helper)."""
    palette = palette or TEST_PALETTE
    cfg = synthetic_config(width, height, duration, palette)
    arr = np.asarray(sorted(range(len(rows)), key=lambda i: rows[i][0]))
    rows = [rows[i] for i in arr]
    t = np.array([r[0] for r in rows], dtype=np.int64)
    player_raw = np.array([r[1] for r in rows], dtype=np.uint64)
    from placelab.ingest import _densify_players

    player, player_ids = _densify_players(player_raw)
    return ActionLog(
        x=np.array([r[2] for r in rows], dtype=np.uint16),
        y=np.array([r[3] for r in rows], dtype=np.uint16),
        color=np.array([r[4] for r in rows], dtype=np.uint8),
        time=t, player=player, player_ids=player_ids, config=cfg,
    )


@pytest.fixture(scope="session")
def two_teams_run():
    sc = bundled_scenario("two_teams", seed=7)
    return generate(sc)


@pytest.fixture(scope="session")
def redundancy_run():
    sc = bundled_scenario("redundancy_plant", seed=11)
    return generate(sc)


@pytest.fixture(scope="session")
def loafing_run():
    sc = bundled_scenario("loafing_plant", seed=13)
    return generate(sc)


@pytest.fixture(scope="session")
def growth_run():
    sc = bundled_scenario("growth", seed=17)
    return generate(sc)
