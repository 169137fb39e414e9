import numpy as np
import pytest

from placelab.partition import (Partition, load_label_grid_rle,
                                save_label_grid_rle)


class TestPartition:
    def test_csv_roundtrip(self, tmp_path):
        p = Partition(items=np.array([3, 1, 7]), labels=np.array([0, 0, -1]))
        p.save_csv(tmp_path / "p.csv")
        q = Partition.load_csv(tmp_path / "p.csv")
        assert q.items.tolist() == [3, 1, 7]
        assert q.labels.tolist() == [0, 0, -1]

    def test_n_clusters_ignores_null(self):
        p = Partition(items=np.arange(4), labels=np.array([2, 2, 5, -1]))
        assert p.n_clusters == 2

    def test_clusters_grouping(self):
        p = Partition(items=np.array([10, 11, 12]), labels=np.array([1, 0, 1]))
        groups = p.clusters()
        assert groups[1].tolist() == [10, 12]
        assert groups[0].tolist() == [11]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Partition(items=np.arange(3), labels=np.arange(2))


class TestLabelGridRle:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        grid = rng.integers(-1, 4, size=(37, 53))
        save_label_grid_rle(grid, tmp_path / "g.rle")
        back = load_label_grid_rle(tmp_path / "g.rle")
        assert np.array_equal(grid, back)

    def test_compresses_uniform_grid(self, tmp_path):
        grid = np.zeros((500, 500), dtype=np.int64)
        save_label_grid_rle(grid, tmp_path / "g.rle")
        assert (tmp_path / "g.rle").stat().st_size < 200

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "bad.rle").write_bytes(b"XXXX" + b"\0" * 32)
        with pytest.raises(ValueError):
            load_label_grid_rle(tmp_path / "bad.rle")
