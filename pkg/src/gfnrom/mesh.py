"""Point meshes, nearest-neighbor relations, and transform classification.

A mesh here is an ordered, duplicate-free collection of node coordinates;
no element or connectivity information is kept because the transfer
machinery only ever needs nearest-neighbor relations between two meshes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "KDTree",
    "Mesh",
    "NeighborMap",
    "TransformKind",
    "nearest_neighbor",
    "build_neighbor_map",
    "classify_transform",
    "master_mesh_union",
    "load_mesh",
    "save_mesh",
]


class KDTree:
    """Static k-d tree with deterministic tie-breaking.

    Queries return the index of the closest point in Euclidean distance;
    among equidistant points the lowest index wins, exactly as an
    exhaustive scan in index order would decide.  Correctness of the
    pruning under ties relies on visiting the far side of a split whenever
    the splitting plane is at most the current best distance (``<=``, not
    ``<``), and on leaf index arrays being sorted ascending so the first
    minimum inside a leaf is the lowest index.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = 16):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0 or points.shape[1] == 0:
            raise ValueError("empty mesh")
        self.points = points
        self._leaf_size = max(int(leaf_size), 1)
        self._root = self._build(np.arange(points.shape[0]))

    def _build(self, idx: np.ndarray):
        if idx.size <= self._leaf_size:
            return (np.sort(idx),)
        pts = self.points[idx]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        axis = int(np.argmax(hi - lo))
        if hi[axis] == lo[axis]:
            # every remaining point coincides; nothing left to split on
            return (np.sort(idx),)
        k = idx.size // 2
        order = np.argpartition(pts[:, axis], k)
        split = float(pts[order[k], axis])
        return (
            axis,
            split,
            self._build(idx[order[:k]]),
            self._build(idx[order[k:]]),
        )

    def query(self, q) -> int:
        """Index of the nearest point to ``q`` (lowest index on ties)."""
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.points.shape[1]:
            raise ValueError(
                f"query dimension {q.shape[0]} != point dimension "
                f"{self.points.shape[1]}"
            )
        best = [np.inf, -1]
        self._query(self._root, q, best)
        return best[1]

    def query_many(self, qs) -> np.ndarray:
        """Nearest indices for every row of ``qs``."""
        qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
        if qs.shape[1] != self.points.shape[1]:
            raise ValueError(
                f"query dimension {qs.shape[1]} != point dimension "
                f"{self.points.shape[1]}"
            )
        out = np.empty(qs.shape[0], dtype=np.int64)
        root = self._root
        for r in range(qs.shape[0]):
            best = [np.inf, -1]
            self._query(root, qs[r], best)
            out[r] = best[1]
        return out

    def _query(self, node, q, best):
        if len(node) == 1:
            idx = node[0]
            d2 = ((self.points[idx] - q) ** 2).sum(axis=1)
            j = int(np.argmin(d2))  # first minimum = lowest index, idx is sorted
            dj = float(d2[j])
            if dj < best[0] or (dj == best[0] and idx[j] < best[1]):
                best[0] = dj
                best[1] = int(idx[j])
            return
        axis, split, left, right = node
        delta = float(q[axis]) - split
        if delta <= 0.0:
            near, far = left, right
        else:
            near, far = right, left
        self._query(near, q, best)
        # an equal-distance, lower-index point may sit exactly on the best
        # radius, so the far side is pruned only on strict inequality
        if delta * delta <= best[0]:
            self._query(far, q, best)


class Mesh:
    """Ordered, duplicate-free set of node coordinates.

    Node order is fixed at construction and defines node indices.  A 1-D
    array of values is accepted as a one-dimensional mesh.  Instances are
    immutable; the spatial index is built lazily on first query.
    """

    def __init__(self, nodes):
        nodes = np.array(nodes, dtype=np.float64)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if nodes.ndim != 2 or nodes.shape[0] == 0 or nodes.shape[1] == 0:
            raise ValueError("empty mesh")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("non-finite node coordinates")
        # adding 0.0 folds -0.0 onto 0.0, so duplicates mean value equality
        if np.unique(nodes + 0.0, axis=0).shape[0] != nodes.shape[0]:
            raise ValueError("duplicate node coordinates")
        nodes.setflags(write=False)
        self.nodes = nodes
        self._tree: KDTree | None = None

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def __repr__(self) -> str:
        return f"Mesh(n={len(self)}, d={self.dim})"

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def tree(self) -> KDTree:
        if self._tree is None:
            self._tree = KDTree(self.nodes)
        return self._tree

    def nearest(self, query) -> int:
        return self.tree.query(query)

    def nearest_many(self, queries) -> np.ndarray:
        return self.tree.query_many(queries)


def nearest_neighbor(mesh: Mesh, query) -> int:
    """Index of the mesh node closest to ``query`` (lowest index on ties)."""
    return mesh.nearest(query)


@dataclass(frozen=True)
class NeighborMap:
    """Nearest-neighbor arrows between a source and a target mesh.

    ``fwd[i]`` is the target node nearest to source node ``i``; ``bwd[j]``
    is the source node nearest to target node ``j``.
    """

    fwd: np.ndarray
    bwd: np.ndarray

    @property
    def n_source(self) -> int:
        return self.fwd.shape[0]

    @property
    def n_target(self) -> int:
        return self.bwd.shape[0]


def build_neighbor_map(m_o: Mesh, m_n: Mesh) -> NeighborMap:
    """Both arrow directions between source mesh ``m_o`` and target ``m_n``."""
    if m_o.dim != m_n.dim:
        raise ValueError(f"mesh dimensions differ: {m_o.dim} != {m_n.dim}")
    return NeighborMap(fwd=m_n.nearest_many(m_o.nodes), bwd=m_o.nearest_many(m_n.nodes))


class TransformKind(NamedTuple):
    expansive: bool
    agglomerative: bool


def classify_transform(nm: NeighborMap) -> TransformKind:
    """Classify the source-to-target transform.

    Expansive: every source node is the nearest neighbor of its own nearest
    neighbor in the target.  Agglomerative: the mirrored condition on
    target nodes.  Both hold at once only for one-to-one correspondences.
    """
    expansive = bool(np.array_equal(nm.bwd[nm.fwd], np.arange(nm.n_source)))
    agglomerative = bool(np.array_equal(nm.fwd[nm.bwd], np.arange(nm.n_target)))
    return TransformKind(expansive, agglomerative)


def master_mesh_union(m_o: Mesh, m_n: Mesh, nm: NeighborMap | None = None) -> Mesh:
    """Union mesh: all of ``m_o`` plus target nodes no source node points to.

    Source nodes keep their indices; the extra target nodes are appended in
    ``m_n`` order.  The transform from ``m_o`` onto the result is always
    expansive, and from the result onto ``m_n`` always agglomerative.  When
    nothing needs appending the original ``m_o`` object is returned.
    """
    if nm is None:
        nm = build_neighbor_map(m_o, m_n)
    j = np.arange(nm.n_target)
    extra = m_n.nodes[nm.fwd[nm.bwd] != j]
    if extra.shape[0] == 0:
        return m_o
    # an appended node can never share coordinates with a source node
    # (a zero-distance pair is always mutual-nearest), but guard anyway
    seen = {row.tobytes() for row in m_o.nodes + 0.0}
    keep = [r for r in range(extra.shape[0]) if (extra[r] + 0.0).tobytes() not in seen]
    if len(keep) < extra.shape[0]:
        extra = extra[keep]
        if extra.shape[0] == 0:
            return m_o
    return Mesh(np.vstack([m_o.nodes, extra]))


def load_mesh(path) -> Mesh:
    """Read a mesh from CSV: one node per row, no header."""
    return Mesh(np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2))


def save_mesh(mesh: Mesh, path) -> None:
    """Write mesh CSV with enough digits to round-trip float64 exactly."""
    np.savetxt(path, mesh.nodes, delimiter=",", fmt="%.17g")
