"""Roadmap construction, pruning, APSP cache, path reconstruction, and the
node-budget sparsifier."""

import numpy as np
import pytest

from sorb import distval, roadmap as rmod
from sorb.distval import TabularEstimator, value_iteration
from sorb.ensemble import EnsembleConfig, ValueEnsemble
from sorb.gridworld import State, builtin_map

from oracles import bfs_grid, dijkstra_all_pairs, random_pruned_graph


class FixedEnsemble:
    """Test double returning distances from a fixed matrix keyed by node
    coordinates; aggregate == the matrix entry."""

    def __init__(self, nodes, matrix):
        self.index = {(int(x), int(y)): i for i, (x, y) in enumerate(nodes)}
        self.matrix = np.asarray(matrix, dtype=np.float64)

    def aggregate_distances(self, sx, sy, gx, gy):
        si = [self.index[(int(a), int(b))] for a, b in zip(sx, sy)]
        gi = [self.index[(int(a), int(b))] for a, b in zip(gx, gy)]
        return self.matrix[si, gi]

    def aggregate_distance(self, s, g):
        return float(self.matrix[self.index[(s.x, s.y)], self.index[(g.x, g.y)]])


def _line_buffer(grid, cells):
    return rmod.SearchBuffer(grid, np.array(cells, dtype=np.int32))


@pytest.fixture(scope="module")
def grid():
    return builtin_map("u_maze")


def test_floyd_warshall_matches_dijkstra_exactly(rng):
    for trial in range(40):
        n = int(rng.integers(2, 21))
        w = random_pruned_graph(rng, n, dyadic=True)
        dist, succ = rmod.floyd_warshall(w)
        np.testing.assert_array_equal(dist, dijkstra_all_pairs(w))


def test_edge_pruned_when_aggregate_exceeds_maxdist(grid):
    # d(a,b)=5 >= maxdist 3 -> no edge; the only route is a->c->b
    nodes = [(1, 1), (3, 1), (2, 1)]
    m = np.array([
        [0.0, 5.0, 1.0],
        [5.0, 0.0, 1.5],
        [1.0, 1.5, 0.0],
    ])
    rm = rmod.build_roadmap(_line_buffer(grid, nodes), FixedEnsemble(nodes, m), 3.0)
    assert np.isinf(rm.apsp[0, 1]) is np.False_
    assert rm.apsp[0, 1] == pytest.approx(2.5)  # two-hop composition
    chain = rmod.reconstruct_path(rm.successor, 0, 1)
    assert chain == [0, 2, 1]


def test_all_edges_pruned_gives_inf(grid):
    nodes = [(1, 1), (3, 1)]
    m = np.array([[0.0, 9.0], [9.0, 0.0]])
    rm = rmod.build_roadmap(_line_buffer(grid, nodes), FixedEnsemble(nodes, m), 3.0)
    assert np.isinf(rm.apsp[0, 1])
    assert rmod.reconstruct_path(rm.successor, 0, 1) is None


def test_route_weight_equals_sum_of_hops(grid, rng):
    for _ in range(20):
        n = 12
        nodes = [(1 + i % 5, 1 + i // 5) for i in range(n)]
        w = random_pruned_graph(rng, n, dyadic=True)
        rm = rmod.build_roadmap(_line_buffer(grid, nodes), FixedEnsemble(nodes, w), 4.0)
        pruned = np.where(w < 4.0, w, np.inf)
        np.fill_diagonal(pruned, 0.0)
        for u in range(n):
            for v in range(n):
                chain = rmod.reconstruct_path(rm.successor, u, v)
                if chain is None:
                    assert np.isinf(rm.apsp[u, v])
                    continue
                assert chain[0] == u and chain[-1] == v
                total = sum(pruned[a, b] for a, b in zip(chain, chain[1:]))
                assert abs(total - rm.apsp[u, v]) < 1e-9


def test_reprune_monotonicity(grid, rng):
    nodes = [(1 + i % 5, 1 + i // 5) for i in range(15)]
    w = random_pruned_graph(rng, 15)
    base = rmod.build_roadmap(_line_buffer(grid, nodes), FixedEnsemble(nodes, w), 5.0)
    prev = base
    for md in (4.0, 3.0, 2.0, 1.0):
        tight = rmod.reprune(base, md)
        # fewer edges allowed -> no pair gets closer
        with np.errstate(invalid="ignore"):
            assert np.all(tight.apsp + 1e-12 >= prev.apsp) or np.all(
                (tight.apsp >= prev.apsp) | np.isinf(tight.apsp)
            )
        assert tight.maxdist == md
        np.testing.assert_array_equal(tight.edge_weights, base.edge_weights)
        prev = tight


def test_refresh_cache_reevaluates_weights(grid):
    nodes = [(1, 1), (2, 1)]

    class Mutable(FixedEnsemble):
        pass

    ens = Mutable(nodes, [[0.0, 2.0], [2.0, 0.0]])
    rm = rmod.build_roadmap(_line_buffer(grid, nodes), ens, 3.0)
    assert rm.apsp[0, 1] == pytest.approx(2.0)
    ens.matrix = np.array([[0.0, 1.0], [1.0, 0.0]])
    rm2 = rmod.refresh_cache(rm, ens)
    assert rm2.apsp[0, 1] == pytest.approx(1.0)
    # original untouched for in-flight readers
    assert rm.apsp[0, 1] == pytest.approx(2.0)


def test_build_deterministic(grid):
    nodes = [(1, 1), (3, 1), (5, 1), (5, 3)]
    m = np.abs(np.subtract.outer(np.arange(4.0), np.arange(4.0)))
    a = rmod.build_roadmap(_line_buffer(grid, nodes), FixedEnsemble(nodes, m), 2.5)
    b = rmod.build_roadmap(_line_buffer(grid, nodes), FixedEnsemble(nodes, m), 2.5)
    np.testing.assert_array_equal(a.apsp, b.apsp)
    np.testing.assert_array_equal(a.successor, b.successor)


def test_search_buffer_dedup_and_cap(grid):
    states = [State(1, 1), State(1, 1), State(2, 1), State(1, 1), State(3, 1)]
    sb = rmod.SearchBuffer.from_states(grid, states)
    assert len(sb) == 3
    np.testing.assert_array_equal(sb.nodes[0], (1, 1))

    many = [State(int(x), int(y)) for x, y in np.argwhere(grid.occupancy.T == 0)]
    capped = rmod.SearchBuffer.from_states(grid, many, limit=10)
    assert len(capped) == 10
    # all survivors are real free cells
    for x, y in capped.nodes:
        assert grid.occupancy[y, x] == 0


def test_coverage_subsample_spreads_and_is_deterministic(grid):
    cells = np.argwhere(grid.occupancy.T == 0).astype(np.int32)
    a = rmod.coverage_subsample(grid, cells, 12)
    b = rmod.coverage_subsample(grid, cells, 12)
    np.testing.assert_array_equal(a, b)
    assert len(a) == 12
    # no two survivors share a cell, none adjacent (2-packing survives the cap)
    seen = set(map(tuple, a))
    assert len(seen) == 12


def test_sparsify_keeps_strong_connectivity():
    grid = builtin_map("u_maze")
    vi = value_iteration(grid, num_bins=20)
    ens = ValueEnsemble([vi], EnsembleConfig(size=1))
    cells = np.argwhere(grid.occupancy.T == 0).astype(np.int32)
    sb = rmod.SearchBuffer(grid, cells)
    full = rmod.build_roadmap(sb, ens, 3.0)
    assert np.isfinite(full.apsp).all(), "exact estimates must connect the full map"
    for k in (30, 15):
        idx = rmod.sparsify_indices(full, k)
        assert len(idx) == k
        sub = rmod.subset_roadmap(full, idx)
        assert np.isfinite(sub.apsp).all(), f"k={k} disconnected"


def test_sparsify_deterministic_and_subset_reuses_weights():
    grid = builtin_map("u_maze")
    vi = value_iteration(grid, num_bins=20)
    ens = ValueEnsemble([vi], EnsembleConfig(size=1))
    cells = np.argwhere(grid.occupancy.T == 0).astype(np.int32)
    full = rmod.build_roadmap(rmod.SearchBuffer(grid, cells), ens, 3.0)
    i1 = rmod.sparsify_indices(full, 20)
    i2 = rmod.sparsify_indices(full, 20)
    np.testing.assert_array_equal(i1, i2)
    sub = rmod.subset_roadmap(full, i1)
    np.testing.assert_array_equal(
        sub.edge_weights, full.edge_weights[np.ix_(i1, i1)]
    )


def test_shortest_path_direct_vs_waypoint(grid):
    # goal within maxdist of start -> direct route allowed and never worse
    nodes = [(1, 1), (2, 1), (3, 1)]
    m = np.array([
        [0.0, 1.2, 2.4],
        [1.2, 0.0, 1.2],
        [2.4, 1.2, 0.0],
    ])
    ens = FixedEnsemble(nodes, m)
    rm = rmod.build_roadmap(_line_buffer(grid, nodes), ens, 3.0)
    total, chain = rmod.shortest_path(State(1, 1), State(3, 1), rm, ens)
    assert total <= 2.4 + 1e-9
    # far pair: direct 9 is over maxdist, must route through the middle
    far = np.array([
        [0.0, 1.2, 9.0],
        [1.2, 0.0, 1.2],
        [9.0, 1.2, 0.0],
    ])
    ens2 = FixedEnsemble(nodes, far)
    rm2 = rmod.build_roadmap(_line_buffer(grid, nodes), ens2, 3.0)
    total2, chain2 = rmod.shortest_path(State(1, 1), State(3, 1), rm2, ens2)
    assert np.isfinite(total2)
    assert chain2, "expected at least one waypoint"
    assert total2 == pytest.approx(2.4)


def test_shortest_path_no_route_raises(grid):
    nodes = [(1, 1), (5, 5)]
    m = np.array([[0.0, 50.0], [50.0, 0.0]])
    ens = FixedEnsemble(nodes, m)
    rm = rmod.build_roadmap(_line_buffer(grid, nodes), ens, 3.0)
    with pytest.raises(rmod.NoPathError):
        rmod.shortest_path(State(1, 1), State(5, 5), rm, ens)


def test_empty_buffer_roadmap(grid):
    nodes = np.zeros((0, 2), dtype=np.int32)
    ens = FixedEnsemble([], np.zeros((0, 0)))
    rm = rmod.build_roadmap(rmod.SearchBuffer(grid, nodes), ens, 3.0)
    assert len(rm.buffer) == 0


def test_roadmap_csv_round_trip(tmp_path, grid):
    nodes = [(1, 1), (2, 1), (3, 1)]
    m = np.array([
        [0.0, 1.2, 9.0],
        [1.2, 0.0, 1.2],
        [9.0, 1.2, 0.0],
    ])
    rm = rmod.build_roadmap(_line_buffer(grid, nodes), FixedEnsemble(nodes, m), 3.0)
    edges = tmp_path / "edges.csv"
    nodes_csv = tmp_path / "nodes.csv"
    rmod.dump_roadmap_csv(rm, edges, nodes_csv)
    etext = edges.read_text().strip().splitlines()
    ntext = nodes_csv.read_text().strip().splitlines()
    assert ntext[0] == "index,x,y"
    assert len(ntext) == 4
    assert etext[0] == "u_index,v_index,weight"
    # only surviving edges appear
    assert len(etext) == 1 + 4  # (0,1),(1,0),(1,2),(2,1)
