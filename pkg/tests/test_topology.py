import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstdma.topology import (
    GraphError,
    Topology,
    chromatic_number_distance2,
    complete,
    greedy_distance2_coloring,
    grid,
    metrics,
    path,
    read_edge_list,
    star,
    unit_disk,
    write_edge_list,
)


def _matrix_metrics(g):
    # [DERIVED] independent oracle: reachability from powers of the adjacency matrix
    a = np.zeros((g.n, g.n), dtype=np.int64)
    for u, v in g.edges():
        a[u, v] = a[v, u] = 1
    eye = np.eye(g.n, dtype=np.int64)
    two = ((a + a @ a) > 0) & ~eye.astype(bool)
    reach, k, diam = eye.astype(bool), 0, 0
    while not reach.all():
        k += 1
        reach = (np.linalg.matrix_power(a + eye, k) > 0)
        diam = k
    return int(a.sum(axis=1).max()), int(two.sum(axis=1).max()), diam


def test_star_shape():
    g = star(5)
    assert g.n == 6
    assert len(g.adj[5]) == 5
    assert all(len(g.adj[i]) == 1 for i in range(5))
    assert all(len(g.two_hop(i)) == 5 for i in range(5))
    assert star(1).edges() == [(0, 1)]


def test_grid_shape():
    g = grid(4, 4)
    assert g.n == 16 and len(g.edges()) == 24
    assert len(g.adj[5]) == 4
    assert grid(1, 5).edges() == path(5).edges()


def test_metrics_hand_counts():
    assert metrics(star(5)) == (5, 5, 2)
    assert metrics(complete(5)) == (4, 4, 1)


def test_grid_metrics_against_matrix_oracle():
    g = grid(4, 4)
    assert tuple(metrics(g)) == _matrix_metrics(g)
    # an interior node of the 4x4 lattice sees 4 nodes at distance 1 and 6 at distance 2
    assert metrics(g) == (4, 10, 6)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
@settings(max_examples=60)
def test_metrics_match_oracle_on_random_trees(n, seed):
    rng = random.Random(seed)
    g = Topology.from_edges(n, [(i, rng.randrange(i)) for i in range(1, n)])
    assert tuple(metrics(g)) == _matrix_metrics(g)


def test_metrics_rejects_disconnected():
    with pytest.raises(GraphError):
        metrics(Topology.from_edges(3, [(0, 1)]))


def test_asymmetric_adjacency_rejected():
    with pytest.raises(GraphError):
        Topology(2, (frozenset({1}), frozenset()))


def _brute_force_chi2(g, max_colors=4):
    # [DERIVED] enumerate every assignment of k colours at once
    pairs = np.array([(u, v) for u in range(g.n) for v in g.two_hop(u) if u < v], dtype=np.int64).reshape(-1, 2)
    for k in range(1, max_colors + 1):
        cols = np.indices((k,) * g.n, dtype=np.int8).reshape(g.n, -1)
        if np.all(cols[pairs[:, 0]] != cols[pairs[:, 1]], axis=0).any():
            return k
    return None


def test_chromatic_number_hand_cases():
    assert chromatic_number_distance2(star(5)) == 6
    assert chromatic_number_distance2(path(3)) == 3


def _random_sparse_graph(n, rng, max_degree):
    edges, deg = [], [0] * n
    for i in range(1, n):
        choices = [j for j in range(i) if deg[j] < max_degree]
        j = rng.choice(choices)
        edges.append((i, j))
        deg[i] += 1
        deg[j] += 1
    for u in range(n):
        for v in range(u):
            if deg[u] < max_degree and deg[v] < max_degree and (u, v) not in edges and rng.random() < 0.08:
                edges.append((u, v))
                deg[u] += 1
                deg[v] += 1
    return Topology.from_edges(n, edges)


def test_chromatic_number_against_brute_force():
    rng = random.Random(7)
    checked = 0
    for _ in range(60):
        g = _random_sparse_graph(10, rng, max_degree=3)
        want = _brute_force_chi2(g, max_colors=4)
        if want is None:
            continue
        assert chromatic_number_distance2(g) == want
        checked += 1
    assert checked >= 5


def test_chromatic_number_against_brute_force_denser():
    rng = random.Random(11)
    for _ in range(20):
        g = _random_sparse_graph(8, rng, max_degree=4)
        want = _brute_force_chi2(g, max_colors=6)
        assert want is not None
        assert chromatic_number_distance2(g) == want


@given(st.integers(1, 14), st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_greedy_colouring_is_distance2_proper(n, seed):
    rng = random.Random(seed)
    g = Topology.from_edges(n, [(i, rng.randrange(i)) for i in range(1, n)])
    cols = greedy_distance2_coloring(g)
    assert all(cols[u] != cols[v] for u in range(n) for v in g.two_hop(u))
    assert chromatic_number_distance2(g) <= max(cols) + 1


def test_exact_colouring_size_limit():
    with pytest.raises(GraphError, match="limited"):
        chromatic_number_distance2(path(21))


def test_unit_disk_large_radius_is_complete():
    g = unit_disk(6, radius=2.0, area=1.0, rng=random.Random(1))
    assert len(g.edges()) == 15


def test_unit_disk_replay_and_constraints():
    a = unit_disk(20, 0.35, 1.0, random.Random("s"))
    b = unit_disk(20, 0.35, 1.0, random.Random("s"))
    assert a == b
    for seed in range(10):
        g = unit_disk(16, 0.4, 1.0, random.Random(seed))
        assert g.is_connected() and max(len(x) for x in g.adj) <= 16


def test_unit_disk_gives_up():
    with pytest.raises(GraphError):
        unit_disk(10, 0.01, 1.0, random.Random(0), max_tries=5)


def test_edge_list_round_trip():
    g = grid(3, 2)
    h = read_edge_list(write_edge_list(g))
    assert h.edges() == g.edges()


@pytest.mark.parametrize("text", ["", "3\n", "3 2\n0 1\n", "2 1\n0 5\n", "2 1\n0 1 2\n"])
def test_edge_list_errors(text):
    with pytest.raises(GraphError):
        read_edge_list(text)


def test_relabel_preserves_metrics():
    g = grid(3, 3)
    perm = [8, 3, 5, 0, 7, 1, 2, 6, 4]
    assert metrics(g.relabel(perm)) == metrics(g)
