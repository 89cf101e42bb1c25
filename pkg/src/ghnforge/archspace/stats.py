"""Graph statistics and shortest-path structure for propagation."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from ghnforge.archspace.types import ArchGraph


def _index(g: ArchGraph) -> dict[int, int]:
    return {n.id: k for k, n in enumerate(g.nodes)}


def _adjacency(g: ArchGraph, directed: bool) -> sp.csr_matrix:
    n = len(g.nodes)
    idx = _index(g)
    rows = [idx[a] for a, b in g.edges]
    cols = [idx[b] for a, b in g.edges]
    if not directed:
        rows, cols = rows + cols, cols + rows
    data = np.ones(len(rows), dtype=np.int8)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def graph_stats(g: ArchGraph) -> dict:
    """Size, degree, path-length, depth, and parameter-count summary.

    Degree and path statistics use the undirected view; depth is the longest
    directed path measured in nodes.
    """
    n = len(g.nodes)
    params = sum(node.param_count() for node in g.nodes)
    if n == 1:
        return {"node_count": 1, "avg_degree": 0.0, "avg_shortest_path": 0.0,
                "depth": 1, "param_count": params}
    avg_degree = 2.0 * len(g.edges) / n
    dist = shortest_path(_adjacency(g, directed=False), method="D", unweighted=True)
    off = ~np.eye(n, dtype=bool)
    finite = np.isfinite(dist) & off
    avg_path = float(dist[finite].mean()) if finite.any() else 0.0

    idx = _index(g)
    longest = np.ones(n, dtype=np.int64)
    for a, b in g.edges:  # stored order is topological
        ia, ib = idx[a], idx[b]
        longest[ib] = max(longest[ib], longest[ia] + 1)
    return {
        "node_count": n,
        "avg_degree": float(avg_degree),
        "avg_shortest_path": avg_path,
        "depth": int(longest.max()),
        "param_count": int(params),
    }


def shortest_paths(g: ArchGraph, s_max: int = 50) -> dict[str, dict[tuple[int, int], int]]:
    """Directed hop distances in (1, s_max] for both propagation directions.

    forward[(u, v)] == s means v is s directed hops downstream of u; the
    backward map holds the same distances keyed from the reversed graph, i.e.
    backward[(v, u)] == forward[(u, v)]. Direct edges (s == 1) are excluded.
    """
    if s_max < 2:
        raise ValueError(f"s_max must be at least 2, got {s_max}")
    dist = shortest_path(_adjacency(g, directed=True), method="D",
                         unweighted=True, directed=True)
    ids = [n.id for n in g.nodes]
    forward: dict[tuple[int, int], int] = {}
    backward: dict[tuple[int, int], int] = {}
    ii, jj = np.nonzero(np.isfinite(dist) & (dist > 1) & (dist <= s_max))
    for i, j in zip(ii.tolist(), jj.tolist()):
        s = int(dist[i, j])
        forward[(ids[i], ids[j])] = s
        backward[(ids[j], ids[i])] = s
    return {"forward": forward, "backward": backward}
