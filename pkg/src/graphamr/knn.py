"""Ball tree and exact k-nearest-neighbour sample graphs.

Nodes are stored in flat arrays: node ``i`` owns ``order[start[i]:end[i]]``
and has children ``left[i]``/``right[i]`` (-1 for a leaf). Splits use the
dimension of largest spread, cut at the lower median. Queries prune a ball
when ``dist(q, centroid) - radius`` exceeds the current k-th best distance;
ties in distance always go to the lower point index, so results are fully
deterministic and match a brute-force scan.
"""
from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError


@dataclass
class BallTree:
    points: np.ndarray
    leaf_size: int
    order: np.ndarray
    start: np.ndarray
    end: np.ndarray
    left: np.ndarray
    right: np.ndarray
    centroid: np.ndarray
    radius: np.ndarray
    distance_evals: int = field(default=0, repr=False)  # point distances computed by queries

    @property
    def n_nodes(self) -> int:
        return len(self.start)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def members(self, node: int) -> np.ndarray:
        return self.order[self.start[node]:self.end[node]]

    def leaves(self) -> list[int]:
        return [i for i in range(self.n_nodes) if self.is_leaf(i)]


def build_ball_tree(points: np.ndarray, leaf_size: int = 32) -> BallTree:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
        raise ContractError(f"ball tree needs a non-empty n x d array, got shape {pts.shape}")
    if leaf_size < 1:
        raise ContractError("leaf_size must be positive")
    order = np.arange(pts.shape[0])
    start, end, left, right, cents, radii = [], [], [], [], [], []

    def make(lo: int, hi: int) -> int:
        node = len(start)
        idx = order[lo:hi]
        sub = pts[idx]
        c = sub.mean(axis=0)
        start.append(lo)
        end.append(hi)
        left.append(-1)
        right.append(-1)
        cents.append(c)
        radii.append(float(np.sqrt(((sub - c) ** 2).sum(axis=1)).max()))
        if hi - lo > leaf_size:
            dim = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
            # stable sort: equal coordinates keep index order
            order[lo:hi] = idx[np.argsort(sub[:, dim], kind="stable")]
            mid = lo + (hi - lo - 1) // 2 + 1  # lower median goes left
            left[node] = make(lo, mid)
            right[node] = make(mid, hi)
        return node

    make(0, pts.shape[0])
    return BallTree(pts, leaf_size, order, np.array(start), np.array(end), np.array(left),
                    np.array(right), np.array(cents), np.array(radii))


def _dist(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = rows - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def query_knn(tree: BallTree, q: np.ndarray, k: int, exclude: int | None = None
              ) -> list[tuple[int, float]]:
    """Exact k nearest stored points to ``q`` as (index, distance), ascending."""
    n = tree.points.shape[0]
    available = n - (1 if exclude is not None and 0 <= exclude < n else 0)
    if k < 1 or k > available:
        raise ContractError(f"k={k} but only {available} points are available")
    q = np.asarray(q, dtype=np.float64)
    heap: list[tuple[float, int]] = []  # (-dist, -index): worst candidate on top

    def worst() -> tuple[float, int]:
        return (-heap[0][0], -heap[0][1]) if len(heap) == k else (np.inf, n)

    def visit(node: int, lower: float) -> None:
        if lower > worst()[0]:
            return
        if tree.is_leaf(node):
            idx = tree.members(node)
            d = _dist(tree.points[idx], q)
            tree.distance_evals += len(idx)
            for i, di in zip(idx.tolist(), d.tolist()):
                if i == exclude:
                    continue
                if (di, i) < worst():
                    if len(heap) == k:
                        heapq.heapreplace(heap, (-di, -i))
                    else:
                        heapq.heappush(heap, (-di, -i))
            return
        kids = []
        for child in (tree.left[node], tree.right[node]):
            dc = float(np.sqrt(((tree.centroid[child] - q) ** 2).sum()))
            kids.append((max(dc - tree.radius[child], 0.0), child))
        kids.sort()
        for lb, child in kids:
            visit(child, lb)

    visit(0, 0.0)
    return sorted(((-ni, -nd) for nd, ni in heap), key=lambda t: (t[1], t[0]))


def knn_all(tree: BallTree, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest other points for every stored point.

    Queries are processed one leaf block at a time: a tree node is skipped
    when its ball is farther from the block's ball than every query's
    current k-th best. Returns (indices, distances), each n x k.
    """
    pts = tree.points
    n = pts.shape[0]
    if k < 1 or k > n - 1:
        raise ContractError(f"k={k} needs at least k+1 points, have {n}")
    out_idx = np.empty((n, k), dtype=np.int64)
    out_dist = np.empty((n, k))
    for leaf in tree.leaves():
        qi = tree.members(leaf)
        qp = pts[qi]
        qc, qr = tree.centroid[leaf], tree.radius[leaf]
        best_d = np.full((len(qi), k), np.inf)
        best_i = np.full((len(qi), k), n, dtype=np.int64)
        stack = [0]
        while stack:
            node = stack.pop()
            gap = np.sqrt(((tree.centroid[node] - qc) ** 2).sum()) - tree.radius[node] - qr
            if gap > best_d[:, -1].max():
                continue
            if not tree.is_leaf(node):
                l, r = tree.left[node], tree.right[node]
                dl = ((tree.centroid[l] - qc) ** 2).sum()
                dr = ((tree.centroid[r] - qc) ** 2).sum()
                stack.extend([r, l] if dl <= dr else [l, r])  # nearer child popped first
                continue
            ci = tree.members(node)
            cp = pts[ci]
            diff = qp[:, None, :] - cp[None, :, :]
            d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            tree.distance_evals += d.size
            d[qi[:, None] == ci[None, :]] = np.inf  # exclude self
            cand_d = np.concatenate([best_d, d], axis=1)
            cand_i = np.concatenate([best_i, np.broadcast_to(ci, d.shape)], axis=1)
            sel = np.lexsort((cand_i, cand_d), axis=1)[:, :k]
            best_d = np.take_along_axis(cand_d, sel, axis=1)
            best_i = np.take_along_axis(cand_i, sel, axis=1)
        out_idx[qi] = best_i
        out_dist[qi] = best_d
    return out_idx, out_dist


# ---------------------------------------------------------------------------
# sample graph


@dataclass
class SampleGraph:
    """Directed k-NN graph: edge i -> j for each of i's k nearest neighbours j.

    ``complete`` graphs carry no edge list; every node neighbours every node.
    """

    n: int
    k: int
    src: np.ndarray
    dst: np.ndarray
    distance: np.ndarray
    complete: bool = False

    @classmethod
    def complete_graph(cls, n: int) -> "SampleGraph":
        empty = np.empty(0, dtype=np.int64)
        return cls(n, n - 1, empty, empty, np.empty(0), complete=True)

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n)

    def neighbourhoods(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetrized edges plus self-loops as (source, target) message pairs.

        Target ``i`` aggregates over every source ``j`` with (j, i) listed.
        Pairs are sorted by (target, source).
        """
        if self.complete:
            raise ContractError("complete graphs use the dense path")
        s = np.concatenate([self.src, self.dst, np.arange(self.n)])
        t = np.concatenate([self.dst, self.src, np.arange(self.n)])
        key = np.unique(t * self.n + s)
        return key % self.n, key // self.n

    def dense_support(self) -> np.ndarray:
        """n x n boolean matrix, row i marks the neighbourhood of i (incl. itself)."""
        if self.complete:
            return np.ones((self.n, self.n), dtype=bool)
        s, t = self.neighbourhoods()
        A = np.zeros((self.n, self.n), dtype=bool)
        A[t, s] = True
        return A

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))


def build_knn_graph(embeddings: np.ndarray, k: int = 10, leaf_size: int = 32) -> SampleGraph:
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    if n <= k:
        raise ContractError(f"k-NN graph needs n > k, got n={n}, k={k}")
    tree = build_ball_tree(X, leaf_size)
    idx, dist = knn_all(tree, k)
    return SampleGraph(n, k, np.repeat(np.arange(n), k), idx.reshape(-1), dist.reshape(-1))


def brute_force_knn_graph(embeddings: np.ndarray, k: int) -> SampleGraph:
    """Reference construction by full distance matrix (used as a test oracle)."""
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    if n <= k:
        raise ContractError(f"k-NN graph needs n > k, got n={n}, k={k}")
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))
    np.fill_diagonal(D, np.inf)
    cols = np.broadcast_to(np.arange(n), (n, n))
    order = np.lexsort((cols, D), axis=1)[:, :k]
    return SampleGraph(n, k, np.repeat(np.arange(n), k), order.reshape(-1),
                       np.take_along_axis(D, order, axis=1).reshape(-1))


def export_edges(path, graph: SampleGraph) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "distance"])
        for s, d, dist in zip(graph.src.tolist(), graph.dst.tolist(), graph.distance.tolist()):
            w.writerow([s, d, repr(dist)])
