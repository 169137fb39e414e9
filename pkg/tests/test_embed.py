import numpy as np
import pytest

from placelab.embed import (EmbedParams, PlayerGraph, build_player_graph,
                            connected_components, embed_players, load_embeddings,
                            save_embeddings, unit_rows)

from conftest import make_log


def graph_from_edges(n, edges):
    d = {}
    for a, b, w in edges:
        d[(min(a, b), max(a, b))] = w
    from placelab.embed import _graph_from_edge_dict

    return _graph_from_edge_dict(n, d)


def cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


class TestBuildPlayerGraph:
    def test_same_pixel_same_color_edge(self):
        log = make_log([(0, 1, 3, 3, 2), (10, 2, 3, 3, 2)])
        g = build_player_graph(log)
        nbrs, w = g.neighbors(0)
        assert nbrs.tolist() == [1]
        assert w.tolist() == [1]

    def test_adjacent_pixels_different_colors_no_edge(self):
        log = make_log([(0, 1, 3, 3, 2), (10, 2, 4, 3, 5)])
        g = build_player_graph(log)
        assert g.n_edges == 0

    def test_action_pair_multiplicity(self):
        # player 1 places the color twice, player 2 once: 2 action pairs
        log = make_log([(0, 1, 3, 3, 2), (10, 2, 3, 3, 2), (20, 1, 3, 3, 2)])
        g = build_player_graph(log)
        _, w = g.neighbors(0)
        assert w.tolist() == [2]

    def test_no_self_loops(self):
        log = make_log([(0, 1, 3, 3, 2), (10, 1, 3, 3, 2), (20, 1, 4, 3, 2)])
        g = build_player_graph(log)
        assert g.n_edges == 0

    def test_chebyshev_diagonal_not_counted(self):
        log = make_log([(0, 1, 3, 3, 2), (10, 2, 4, 4, 2)])
        g = build_player_graph(log)
        assert g.n_edges == 0

    def test_disjoint_teams_two_components(self, two_teams_run):
        log, truth, _ = two_teams_run
        g = build_player_graph(log)
        comp = connected_components(g)
        team_a = np.unique(log.player[truth == 0])
        team_b = np.unique(log.player[truth == 1])
        assert len(np.unique(comp[team_a])) == 1
        assert len(np.unique(comp[team_b])) == 1
        assert set(comp[team_a].tolist()).isdisjoint(comp[team_b].tolist())


class TestEmbedPlayers:
    def test_empty_graph_zero_matrix(self):
        g = graph_from_edges(4, [])
        m = embed_players(g, EmbedParams(h=8, seed=0))
        assert m.shape == (4, 8)
        assert (m == 0).all()

    def test_h_too_small_rejected(self):
        g = graph_from_edges(2, [(0, 1, 1)])
        with pytest.raises(ValueError):
            embed_players(g, EmbedParams(h=1))

    def test_edge_pair_beats_isolated(self):
        g = graph_from_edges(3, [(0, 1, 5)])
        diffs = []
        for seed in range(5):
            m = embed_players(g, EmbedParams(h=16, walk_length=10, num_walks=20,
                                             window=3, epochs=3, seed=seed))
            assert (m[2] == 0).all()  # isolated player gets the zero vector
            diffs.append(cosine(m[0], m[1]) - cosine(m[0], m[2]))
        assert np.mean(diffs) > 0

    def test_two_cliques_intra_beats_inter(self):
        edges = []
        for i in range(10):
            for j in range(i + 1, 10):
                edges.append((i, j, 5))
                edges.append((10 + i, 10 + j, 5))
        edges.append((0, 10, 1))  # weak bridge
        g = graph_from_edges(20, edges)
        m = embed_players(g, EmbedParams(h=16, walk_length=20, num_walks=10,
                                         window=4, epochs=3, seed=2))
        u = unit_rows(m)
        intra = np.mean([u[i] @ u[j] for i in range(10) for j in range(i + 1, 10)])
        inter = np.mean([u[i] @ u[10 + j] for i in range(10) for j in range(10)])
        assert intra > inter

    def test_rows_finite_and_capped(self):
        g = graph_from_edges(6, [(i, (i + 1) % 6, 3) for i in range(6)])
        params = EmbedParams(h=8, max_norm=0.5, seed=4)
        m = embed_players(g, params)
        assert np.isfinite(m).all()
        assert (np.linalg.norm(m, axis=1) <= params.max_norm + 1e-6).all()

    def test_deterministic_given_seed(self):
        g = graph_from_edges(8, [(i, (i + 1) % 8, 2) for i in range(8)])
        p = EmbedParams(h=8, walk_length=8, num_walks=4, epochs=2, seed=3)
        assert np.array_equal(embed_players(g, p), embed_players(g, p))

    def test_second_order_walk_params(self):
        g = graph_from_edges(6, [(i, (i + 1) % 6, 1) for i in range(6)])
        p = EmbedParams(h=8, walk_length=6, num_walks=2, p=0.5, q=2.0, epochs=1, seed=1)
        m = embed_players(g, p)
        assert np.isfinite(m).all()
        assert (np.linalg.norm(m, axis=1) > 0).all()


class TestEmbeddingIO:
    def test_roundtrip_with_header(self, tmp_path):
        params = EmbedParams(h=4, seed=9)
        m = np.arange(12, dtype=np.float32).reshape(3, 4)
        save_embeddings(tmp_path / "e.bin", m, params)
        m2, header = load_embeddings(tmp_path / "e.bin")
        assert np.array_equal(m, m2)
        assert header["n"] == 3 and header["h"] == 4 and header["seed"] == 9
