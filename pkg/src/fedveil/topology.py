"""Client communication graphs and pairwise seed agreement.

Supports the complete graph and the random n-out graph (each client selects
n distinct peers uniformly; an edge exists when either endpoint selected the
other).  Pairwise seeds stand in for a key-agreement protocol: each edge
gets a deterministic per-round seed derived by hashing, so both endpoints
can generate identical correlated noise without communication.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .rng import RngStream, derive_seed

__all__ = ["GraphTopology", "build_complete", "build_random_n_out", "pairwise_seeds"]


def _norm_edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class GraphTopology:
    """Undirected client graph without self-loops."""

    nodes: tuple[int, ...]
    edges: frozenset
    mode: str
    n_out: int | None = None
    _adj: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        adj: dict[int, list[int]] = {u: [] for u in self.nodes}
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(
            self, "_adj", {u: tuple(sorted(vs)) for u, vs in adj.items()}
        )

    @property
    def num_clients(self) -> int:
        return len(self.nodes)

    def neighbors(self, k: int) -> tuple[int, ...]:
        return self._adj[k]

    def degree(self, k: int) -> int:
        return len(self._adj[k])

    def to_edge_list(self) -> list[list[int]]:
        """Sorted edge list for JSON transcripts."""
        return [list(e) for e in sorted(self.edges)]


def build_complete(k: int, nodes=None) -> GraphTopology:
    """Complete graph on k clients (labelled 1..k unless nodes are given)."""
    if k < 2:
        raise ValueError(f"complete graph needs k >= 2, got {k}")
    nodes = tuple(nodes) if nodes is not None else tuple(range(1, k + 1))
    if len(nodes) != k:
        raise ValueError(f"expected {k} node labels, got {len(nodes)}")
    edges = frozenset(
        _norm_edge(nodes[i], nodes[j]) for i in range(k) for j in range(i + 1, k)
    )
    return GraphTopology(nodes=nodes, edges=edges, mode="complete")


def build_random_n_out(k: int, n: int, rng: RngStream, nodes=None) -> GraphTopology:
    """Random n-out graph: every client selects n distinct peers uniformly.

    Degrees are at least n (own selections) and at most k-1.
    """
    if k < 2:
        raise ValueError(f"random n-out graph needs k >= 2, got {k}")
    if not 1 <= n <= k - 1:
        raise ValueError(f"n must be in [1, k-1] = [1, {k - 1}], got {n}")
    nodes = tuple(nodes) if nodes is not None else tuple(range(1, k + 1))
    if len(nodes) != k:
        raise ValueError(f"expected {k} node labels, got {len(nodes)}")
    edges = set()
    for i, u in enumerate(nodes):
        others = [w for w in nodes if w != u]
        picks = rng.gen.choice(len(others), size=n, replace=False)
        for j in picks:
            edges.add(_norm_edge(u, others[int(j)]))
    return GraphTopology(nodes=nodes, edges=frozenset(edges),
                         mode="random_n_out", n_out=n)


def pairwise_seeds(graph: GraphTopology, round_index: int, master_seed: int) -> dict:
    """Deterministic per-edge seed for one round, symmetric in the endpoints."""
    return {
        edge: derive_seed("pairwise", master_seed, round_index, edge[0], edge[1])
        for edge in graph.edges
    }
