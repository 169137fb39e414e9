import itertools
import math

import numpy as np
import pytest

from placelab.cover import (CoverInstance, assign_actions, banded_fgreedy,
                            build_cover_instance, default_snapshot_times,
                            geometric_bands, greedy_set_cover, merge_covers)
from placelab.partition import Partition

from conftest import make_log


def instance_from_sets(sets, n_universe=None):
    """Build a CoverInstance from plain python sets (test helper)."""
    if n_universe is None:
        n_universe = max((max(s) for s in sets if s), default=-1) + 1
    chunks = [np.sort(np.array(sorted(s), dtype=np.int64)) for s in sets]
    offsets = np.zeros(len(chunks) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(c) for c in chunks])
    return CoverInstance(
        n_universe=n_universe,
        set_offsets=offsets,
        set_members=np.concatenate(chunks) if chunks else np.empty(0, np.int64),
        set_snapshot=np.zeros(len(chunks), dtype=np.int64),
        set_label=np.arange(len(chunks), dtype=np.int64),
    )


def brute_force_optimum(sets, universe):
    for k in range(1, len(sets) + 1):
        for combo in itertools.combinations(range(len(sets)), k):
            if set().union(*(sets[i] for i in combo)) >= universe:
                return k
    raise AssertionError("instance not coverable")


def random_instance(rng, max_u=2000, max_sets=500):
    n = int(rng.integers(4, max_u + 1))
    k = int(rng.integers(2, max_sets + 1))
    sets = []
    for _ in range(k - 1):
        size = int(rng.integers(1, max(2, n // 2)))
        sets.append(set(rng.choice(n, size=min(size, n), replace=False).tolist()))
    covered = set().union(*sets) if sets else set()
    rest = set(range(n)) - covered
    sets.append(rest | set(rng.choice(n, size=min(3, n), replace=False).tolist())
                if rest else {int(rng.integers(0, n))})
    return sets, n


class TestBuildCoverInstance:
    def test_single_cluster_single_set(self):
        log = make_log([(i * 10, 1, i, 0, 1) for i in range(5)])
        part = Partition(items=np.arange(5), labels=np.zeros(5))
        inst = build_cover_instance([(50, part)], log)
        assert inst.n_sets == 1
        assert inst.members(0).tolist() == [0, 1, 2, 3, 4]
        assert inst.fallback_count == 0

    def test_overwritten_action_gets_fallback_singleton(self):
        # action 0 is overwritten before the only snapshot: fallback, flagged
        log = make_log([(0, 1, 2, 2, 1), (10, 2, 2, 2, 3)])
        part = Partition(items=np.array([1]), labels=np.array([0]))
        inst = build_cover_instance([(20, part)], log)
        assert inst.fallback_count == 1
        assert inst.n_sets == 2
        assert inst.members(1).tolist() == [0]
        assert inst.set_snapshot[1] == -1

    def test_universe_covered(self, two_teams_run):
        from placelab.ingest import canvas_at
        from placelab.seg import segment_snapshot

        log, _, _ = two_teams_run
        emb = np.ones((log.n_players, 4))
        parts = []
        for t in default_snapshot_times(log, 300_000):
            parts.append((t, segment_snapshot(canvas_at(log, t), log.player, emb,
                                              60.0, 1.0)))
        inst = build_cover_instance(parts, log)
        covered = np.zeros(log.n_actions, dtype=bool)
        for s in range(inst.n_sets):
            covered[inst.members(s)] = True
        assert covered.all()


class TestGreedy:
    def test_single_superset_selected(self):
        inst = instance_from_sets([{0, 1}, {1, 2}, {0, 1, 2}])
        assert greedy_set_cover(inst).tolist() == [2]

    def test_hand_traced_tie_sequence(self):
        # universe {0..5}: picks {0,1,2} (size 3), then ties {3,4} vs {4,5}
        # resolve to the lower set id
        inst = instance_from_sets([{0, 1, 2}, {3, 4}, {4, 5}, {0, 3}])
        assert greedy_set_cover(inst).tolist() == [0, 1, 2]

    def test_zero_gain_sets_never_selected(self):
        inst = instance_from_sets([{0, 1, 2}, {0, 1}, {2}])
        sel = greedy_set_cover(inst).tolist()
        assert sel == [0]

    def test_approximation_bound_vs_exhaustive_optimum(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(2, 17))
            k = int(rng.integers(2, 11))
            sets = [set(rng.choice(n, size=int(rng.integers(1, n + 1)),
                                   replace=False).tolist()) for _ in range(k - 1)]
            covered = set().union(*sets)
            sets.append(set(range(n)) - covered or
                        {int(v) for v in rng.choice(n, size=2)})
            inst = instance_from_sets(sets, n)
            greedy_size = len(greedy_set_cover(inst))
            opt = brute_force_optimum(sets, set(range(n)))
            h_n = sum(1.0 / i for i in range(1, n + 1))
            assert greedy_size <= h_n * opt + 1e-9


class TestBandedFgreedy:
    def test_single_band_degenerate(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            sets, n = random_instance(rng, max_u=100, max_sets=30)
            inst = instance_from_sets(sets, n)
            assert banded_fgreedy(inst, [1]).tolist() == greedy_set_cover(inst).tolist()

    def test_matches_greedy_on_200_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            sets, n = random_instance(rng)
            inst = instance_from_sets(sets, n)
            sel_g = greedy_set_cover(inst)
            sel_b = banded_fgreedy(inst, [64, 8, 1])
            assert sel_b.tolist() == sel_g.tolist()

    def test_decayed_gain_selected_in_later_band(self):
        # set 1 starts large (gain 60) but decays below 64-band once set 0
        # lands; it must still appear exactly where greedy puts it.
        big = set(range(0, 50)) | set(range(100, 114))     # 64 elements
        decayed = set(range(0, 60))                        # gain 60 -> 10
        singles = [{i} for i in range(60, 100)]
        sets = [big, decayed] + singles
        inst = instance_from_sets(sets, 114)
        sel_g = greedy_set_cover(inst).tolist()
        sel_b = banded_fgreedy(inst, [64, 8, 1]).tolist()
        assert sel_b == sel_g
        assert sel_b[0] == 0 and sel_b[1] == 1  # decayed set picked second

    def test_bands_validation(self):
        inst = instance_from_sets([{0}])
        with pytest.raises(ValueError):
            banded_fgreedy(inst, [8, 64, 1])
        with pytest.raises(ValueError):
            banded_fgreedy(inst, [64, 8])

    def test_geometric_bands(self):
        assert geometric_bands(4096, 8) == [4096, 512, 64, 8, 1]
        assert geometric_bands(5, 8) == [1]

    def test_banded_uses_less_resident_memory(self):
        rng = np.random.default_rng(3)
        sets, n = random_instance(rng, max_u=2000, max_sets=400)
        inst = instance_from_sets(sets, n)
        s1, s2 = {}, {}
        greedy_set_cover(inst, stats=s1)
        banded_fgreedy(inst, stats=s2)
        assert s2["peak_resident_bytes"] < s1["peak_resident_bytes"]


class TestAssignActions:
    def test_largest_set_wins(self):
        inst = instance_from_sets([{0, 1, 2, 3, 4, 5, 6}, {0, 1, 2}, {6, 7}])
        clus = assign_actions(inst, np.array([1, 0, 2]))
        assert clus.assignment[0] == 0  # size 7 beats size 3
        assert clus.assignment[7] == 2

    def test_tie_breaks_to_lower_set_id(self):
        inst = instance_from_sets([{0, 1}, {1, 2}, {2, 3}])
        clus = assign_actions(inst, np.array([2, 1, 0]))
        assert clus.assignment[1] == 0
        assert clus.assignment[2] == 1

    def test_single_containing_set(self):
        inst = instance_from_sets([{0, 1}, {2}])
        clus = assign_actions(inst, np.array([0, 1]))
        assert clus.assignment.tolist() == [0, 0, 1]

    def test_uncovered_action_rejected(self):
        inst = instance_from_sets([{0, 1}, {2}])
        with pytest.raises(ValueError):
            assign_actions(inst, np.array([0]))

    def test_deterministic_and_total(self):
        rng = np.random.default_rng(11)
        sets, n = random_instance(rng, max_u=300, max_sets=60)
        inst = instance_from_sets(sets, n)
        sel = greedy_set_cover(inst)
        a1 = assign_actions(inst, sel).assignment
        a2 = assign_actions(inst, sel).assignment
        assert np.array_equal(a1, a2)
        assert (a1 >= 0).all()


def two_layer_log():
    """One 3x3 artwork painted twice by one team (two layers), plus a distant
    1-pixel artwork by another player."""
    rows = []
    t = 0
    for rep in range(2):
        for i in range(9):
            rows.append((t, 1 + (i % 3), i % 3, i // 3, 2))
            t += 100
    rows.append((t, 9, 8, 8, 5))
    return make_log(rows, width=9, height=9, duration=10_000)


class TestMergeCovers:
    def _cluster(self, log, times):
        parts = []
        for t in times:
            from placelab.ingest import canvas_at
            from placelab.seg import segment_snapshot

            emb = np.zeros((log.n_players, 4))
            emb[1:4] = [1.0, 0, 0, 0]  # team players share a direction
            emb[-1] = [0, 1.0, 0, 0]
            parts.append((t, segment_snapshot(canvas_at(log, t), log.player, emb,
                                              60.0, 1.0)))
        inst = build_cover_instance(parts, log)
        sel = greedy_set_cover(inst)
        emb = np.zeros((log.n_players, 4))
        emb[1:4] = [1.0, 0, 0, 0]
        emb[-1] = [0, 1.0, 0, 0]
        return inst, assign_actions(inst, sel), emb

    def test_identical_footprints_merge_phase1(self):
        log = two_layer_log()
        inst, clus, emb = self._cluster(log, [850, 1900])
        merged = merge_covers(clus, inst, log, emb, alpha_iou=1.0, alpha_as=1.0,
                              alpha_player=1.0)
        labs = merged.assignment
        layer1 = labs[:9]
        layer2 = labs[9:18]
        assert len(set(layer1.tolist()) | set(layer2.tolist())) == 1
        assert labs[18] != labs[0]
        # the layer merge happened in phase 1 (identical footprints)
        assert any(ev["rule"] == "iou_as" and ev["iou"] == 1.0
                   for ev in merged.lineage)

    def test_disjoint_footprints_never_phase1(self):
        log = two_layer_log()
        inst, clus, emb = self._cluster(log, [850, 1900])
        merged = merge_covers(clus, inst, log, emb, alpha_iou=0.0, alpha_as=0.0,
                              alpha_player=1.0)
        labs = merged.assignment
        assert labs[18] != labs[0]  # zero-overlap pair has no IoU candidate pair

    def test_phase2_requires_shared_pixel(self):
        log = two_layer_log()
        inst, clus, emb = self._cluster(log, [850, 1900])
        # same-direction embeddings everywhere: only footprint-overlapping
        # groups may merge in phase 2
        emb_same = np.tile([1.0, 0, 0, 0], (log.n_players, 1))
        merged = merge_covers(clus, inst, log, emb_same, alpha_iou=1.0,
                              alpha_as=1.0, alpha_player=0.9)
        labs = merged.assignment
        assert labs[18] != labs[0]

    def test_invalid_thresholds(self):
        log = two_layer_log()
        inst, clus, emb = self._cluster(log, [850, 1900])
        with pytest.raises(ValueError):
            merge_covers(clus, inst, log, emb, alpha_iou=1.5)
        with pytest.raises(ValueError):
            merge_covers(clus, inst, log, emb, alpha_player=-2.0)

    def test_merge_never_decreases_cluster_sizes(self):
        log = two_layer_log()
        inst, clus, emb = self._cluster(log, [850, 1900])
        before = np.bincount(np.unique(clus.assignment, return_inverse=True)[1])
        merged = merge_covers(clus, inst, log, emb, alpha_iou=0.6, alpha_as=0.5,
                              alpha_player=0.8)
        after_sizes = np.bincount(merged.assignment)
        # every original cluster maps inside one merged cluster at least as big
        for s in np.unique(clus.assignment):
            mask = clus.assignment == s
            target = np.unique(merged.assignment[mask])
            assert len(target) == 1
            assert after_sizes[target[0]] >= mask.sum()

    def test_iou_as_invariants(self):
        # IoU in [0,1]; identical footprints give IoU 1 and AS 1
        log = two_layer_log()
        inst, clus, emb = self._cluster(log, [850, 1900])
        merged = merge_covers(clus, inst, log, emb, alpha_iou=0.999,
                              alpha_as=0.999, alpha_player=1.0)
        for ev in merged.lineage:
            if ev["rule"] == "iou_as":
                assert 0 <= ev["iou"] <= 1
                assert 0 < ev["as"] <= 1
                if ev["iou"] == 1.0:
                    assert ev["as"] == 1.0


class TestSnapshotTimes:
    def test_grid_plus_final(self):
        log = make_log([(0, 1, 0, 0, 1), (250_000, 1, 1, 0, 1)],
                       duration=300_000)
        assert default_snapshot_times(log, 60_000) == [60_000, 120_000, 180_000,
                                                       240_000, 250_000]

    def test_bad_cadence(self):
        log = make_log([(0, 1, 0, 0, 1)])
        with pytest.raises(ValueError):
            default_snapshot_times(log, 0)
