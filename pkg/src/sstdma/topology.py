"""Communication graphs and the metrics the protocol's bounds are stated in."""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

EXACT_COLORING_MAX_NODES = 20


class GraphError(ValueError):
    pass


class Metrics(NamedTuple):
    delta: int  # max degree
    delta2: int  # max 2-hop neighbourhood size
    diam: int


@dataclass(frozen=True)
class Topology:
    """Undirected, irreflexive graph on nodes ``0..n-1``."""

    n: int
    adj: tuple[frozenset[int], ...]
    name: str = "custom"
    positions: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if len(self.adj) != self.n:
            raise GraphError("adjacency length does not match node count")
        for i, nbrs in enumerate(self.adj):
            if i in nbrs:
                raise GraphError(f"self-loop at node {i}")
            for j in nbrs:
                if not 0 <= j < self.n or i not in self.adj[j]:
                    raise GraphError(f"edge {i}-{j} is not symmetric")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], name: str = "custom", positions=None) -> Topology:
        sets: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            sets[u].add(v)
            sets[v].add(u)
        return cls(n, tuple(frozenset(s) for s in sets), name, positions)

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n) for j in sorted(self.adj[i]) if i < j]

    def neighbors(self, i: int) -> frozenset[int]:
        return self.adj[i]

    def distances_from(self, src: int) -> list[Optional[int]]:
        dist: list[Optional[int]] = [None] * self.n
        dist[src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in self.adj[u]:
                if dist[v] is None:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def two_hop(self, i: int) -> frozenset[int]:
        """Nodes at distance 1 or 2 from ``i``."""
        out = set(self.adj[i])
        for j in self.adj[i]:
            out |= self.adj[j]
        out.discard(i)
        return frozenset(out)

    def is_connected(self) -> bool:
        return self.n > 0 and all(d is not None for d in self.distances_from(0))

    def relabel(self, perm: Sequence[int]) -> Topology:
        """Graph with node ``i`` renamed ``perm[i]``."""
        return Topology.from_edges(self.n, [(perm[u], perm[v]) for u, v in self.edges()], self.name)


def star(leaves: int) -> Topology:
    """Leaves ``0..leaves-1`` around a centre with the highest id."""
    if leaves < 1:
        raise GraphError("a star needs at least one leaf")
    return Topology.from_edges(leaves + 1, [(i, leaves) for i in range(leaves)], f"star{leaves}")


def grid(width: int, height: int) -> Topology:
    """Four-neighbour lattice; node ``(x, y)`` has id ``y*width + x``."""
    if width < 1 or height < 1:
        raise GraphError("grid dimensions must be >= 1")
    edges = []
    for y in range(height):
        for x in range(width):
            i = y * width + x
            if x + 1 < width:
                edges.append((i, i + 1))
            if y + 1 < height:
                edges.append((i, i + width))
    pos = tuple((float(i % width), float(i // width)) for i in range(width * height))
    return Topology.from_edges(width * height, edges, f"grid{width}x{height}", pos)


def path(n: int) -> Topology:
    return Topology.from_edges(n, [(i, i + 1) for i in range(n - 1)], f"path{n}")


def complete(n: int) -> Topology:
    return Topology.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)], f"K{n}")


def unit_disk(
    n: int,
    radius: float,
    area: float,
    rng: random.Random,
    degree_cap: int = 16,
    max_tries: int = 10_000,
) -> Topology:
    """Uniform placement in an ``area`` x ``area`` square, edges within ``radius``.

    Placements are redrawn until the graph is connected and no degree exceeds
    ``degree_cap``.
    """
    if n < 1:
        raise GraphError("unit disk graph needs n >= 1")
    for _ in range(max_tries):
        pts = [(rng.uniform(0, area), rng.uniform(0, area)) for _ in range(n)]
        edges = [
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if math.dist(pts[i], pts[j]) <= radius
        ]
        g = Topology.from_edges(n, edges, f"udg{n}", tuple(pts))
        if g.is_connected() and max(len(a) for a in g.adj) <= degree_cap:
            return g
    raise GraphError(
        f"no connected unit disk graph with max degree <= {degree_cap} after {max_tries} draws "
        f"(n={n}, radius={radius}, area={area})"
    )


def metrics(g: Topology) -> Metrics:
    diam = 0
    for i in range(g.n):
        dist = g.distances_from(i)
        if any(d is None for d in dist):
            raise GraphError("graph is disconnected")
        diam = max(diam, max(dist))
    delta = max((len(a) for a in g.adj), default=0)
    delta2 = max((len(g.two_hop(i)) for i in range(g.n)), default=0)
    return Metrics(delta, delta2, diam)


def square_adjacency(g: Topology) -> list[frozenset[int]]:
    return [g.two_hop(i) for i in range(g.n)]


def greedy_distance2_coloring(g: Topology) -> list[int]:
    """Largest-degree-first greedy colouring of the square graph."""
    sq = square_adjacency(g)
    colors = [-1] * g.n
    for v in sorted(range(g.n), key=lambda v: (-len(sq[v]), v)):
        taken = {colors[u] for u in sq[v]}
        colors[v] = next(k for k in range(g.n + 1) if k not in taken)
    return colors


def chromatic_number_distance2(g: Topology) -> int:
    """Exact distance-2 chromatic number by backtracking, for ``n <= 20``."""
    if g.n > EXACT_COLORING_MAX_NODES:
        raise GraphError(
            f"exact distance-2 colouring is limited to {EXACT_COLORING_MAX_NODES} nodes; "
            "use greedy_distance2_coloring for an upper bound"
        )
    if g.n == 0:
        return 0
    sq = square_adjacency(g)
    upper = max(greedy_distance2_coloring(g)) + 1
    # every closed neighbourhood is a clique in the square graph
    lower = max(len(a) for a in g.adj) + 1
    for k in range(lower, upper):
        if _colorable(sq, k):
            return k
    return upper


def _colorable(sq: list[frozenset[int]], k: int) -> bool:
    n = len(sq)
    colors = [-1] * n

    def pick() -> int:
        # DSATUR: most distinct neighbour colours, then highest degree
        best, best_key = -1, None
        for v in range(n):
            if colors[v] >= 0:
                continue
            sat = len({colors[u] for u in sq[v] if colors[u] >= 0})
            key = (sat, len(sq[v]))
            if best_key is None or key > best_key:
                best, best_key = v, key
        return best

    def solve(done: int, used: int) -> bool:
        if done == n:
            return True
        v = pick()
        taken = {colors[u] for u in sq[v]}
        # a fresh colour is interchangeable with any other fresh colour
        for col in range(min(used + 1, k)):
            if col in taken:
                continue
            colors[v] = col
            if solve(done + 1, max(used, col + 1)):
                return True
        colors[v] = -1
        return False

    return solve(0, 0)


def read_edge_list(text: str, name: str = "custom") -> Topology:
    """Parse ``"n m"`` followed by ``m`` lines ``"u v"`` (0-indexed)."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or len(lines[0]) != 2:
        raise GraphError("edge list must start with a line 'n m'")
    n, m = (int(x) for x in lines[0])
    body = lines[1:]
    if len(body) != m:
        raise GraphError(f"header announces {m} edges, found {len(body)}")
    edges = []
    for row in body:
        if len(row) != 2:
            raise GraphError(f"bad edge line: {' '.join(row)!r}")
        u, v = int(row[0]), int(row[1])
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge {u}-{v} out of range for n={n}")
        edges.append((u, v))
    return Topology.from_edges(n, edges, name)


def write_edge_list(g: Topology) -> str:
    edges = g.edges()
    return "\n".join([f"{g.n} {len(edges)}"] + [f"{u} {v}" for u, v in edges]) + "\n"
