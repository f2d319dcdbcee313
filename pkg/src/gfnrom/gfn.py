"""Weight transfer between meshes for node-owned network layers.

The first encoder layer and the last decoder layer of the autoencoder own
one weight column / row per mesh node; everything else in the network is
mesh-independent.  Moving a model between meshes redistributes those
columns and rows along nearest-neighbor relations: encoder columns are
split equally over the target nodes related to their source node, decoder
rows become means over the source nodes related to each target node.

Three entry points realize the same map: :func:`gfn_transform` evaluates
the relation sums directly, :func:`expand` / :func:`agglomerate` are the
one-sided fast paths valid under their respective mesh conditions, and
:func:`gfn_transform_decomposed` chains an expansion onto the union mesh
with an agglomeration onto the target, which is the path training uses.
All sums run in ascending node index so results are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .mesh import (
    Mesh,
    NeighborMap,
    build_neighbor_map,
    classify_transform,
    load_mesh,
    master_mesh_union,
    save_mesh,
)

__all__ = [
    "WeightBundle",
    "Transfer",
    "TransferChain",
    "relation_pairs",
    "general_transfer",
    "expand_transfer",
    "agglomerate_transfer",
    "make_transfer_chain",
    "gfn_transform",
    "expand",
    "agglomerate",
    "gfn_transform_decomposed",
    "save_bundle",
    "load_bundle",
]


@dataclass
class WeightBundle:
    """Mesh-owned layer parameters.

    w_enc: (L, N) first encoder layer, one column per node.
    b_enc: (L,) encoder bias, mesh-independent.
    w_dec: (N, L) last decoder layer, one row per node.
    b_dec: (N,) decoder bias, one entry per node.
    mesh:  the Mesh of size N owning the node-indexed dimension.
    """

    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        self.w_enc = np.asarray(self.w_enc, dtype=np.float64)
        self.b_enc = np.asarray(self.b_enc, dtype=np.float64)
        self.w_dec = np.asarray(self.w_dec, dtype=np.float64)
        self.b_dec = np.asarray(self.b_dec, dtype=np.float64)
        n = len(self.mesh)
        if self.w_enc.ndim != 2:
            raise ValueError("w_enc must be a matrix")
        width = self.w_enc.shape[0]
        if (
            self.w_enc.shape != (width, n)
            or self.b_enc.shape != (width,)
            or self.w_dec.shape != (n, width)
            or self.b_dec.shape != (n,)
        ):
            raise ValueError("weight shapes do not chain with the mesh size")

    @property
    def width(self) -> int:
        """Size of the non-mesh dimension (latent or first hidden width)."""
        return self.w_enc.shape[0]

    @property
    def n_nodes(self) -> int:
        return len(self.mesh)


class Transfer:
    """One linear node-redistribution step between two meshes.

    ``pattern`` is a sparse 0/1 relation matrix of shape (n_new, n_old).
    Encoder columns are divided by ``src_count`` (how many new nodes each
    old node feeds) and then pattern-summed; decoder rows are pattern-summed
    and then divided by ``dst_count`` (the mean over related old nodes).
    Keeping the counts outside the matrix data makes the fast paths agree
    bitwise with the general transform where they coincide mathematically.
    """

    def __init__(self, pattern: sparse.csr_matrix, src_count, dst_count):
        self.pattern = pattern
        self.pattern_t = pattern.T.tocsr()
        self.src_count = np.asarray(src_count, dtype=np.float64)
        self.dst_count = np.asarray(dst_count, dtype=np.float64)

    @property
    def n_old(self) -> int:
        return self.pattern.shape[1]

    @property
    def n_new(self) -> int:
        return self.pattern.shape[0]

    def apply_enc(self, w_enc: np.ndarray) -> np.ndarray:
        return (self.pattern @ (w_enc / self.src_count).T).T

    def apply_dec_w(self, w_dec: np.ndarray) -> np.ndarray:
        return (self.pattern @ w_dec) / self.dst_count[:, None]

    def apply_dec_b(self, b_dec: np.ndarray) -> np.ndarray:
        return (self.pattern @ b_dec) / self.dst_count

    def adjoint_enc(self, g: np.ndarray) -> np.ndarray:
        return (self.pattern_t @ g.T).T / self.src_count

    def adjoint_dec_w(self, g: np.ndarray) -> np.ndarray:
        return self.pattern_t @ (g / self.dst_count[:, None])

    def adjoint_dec_b(self, g: np.ndarray) -> np.ndarray:
        return self.pattern_t @ (g / self.dst_count)


class TransferChain:
    """Composition of transfer stages ending on ``target_mesh``.

    The transform is linear in the weights, so gradients flow back through
    the stages via their adjoints in reverse order.
    """

    def __init__(self, stages: list[Transfer], target_mesh: Mesh):
        self.stages = stages
        self.target_mesh = target_mesh

    def apply_enc(self, w: np.ndarray) -> np.ndarray:
        for t in self.stages:
            w = t.apply_enc(w)
        return w

    def apply_dec_w(self, w: np.ndarray) -> np.ndarray:
        for t in self.stages:
            w = t.apply_dec_w(w)
        return w

    def apply_dec_b(self, b: np.ndarray) -> np.ndarray:
        for t in self.stages:
            b = t.apply_dec_b(b)
        return b

    def adjoint_enc(self, g: np.ndarray) -> np.ndarray:
        for t in reversed(self.stages):
            g = t.adjoint_enc(g)
        return g

    def adjoint_dec_w(self, g: np.ndarray) -> np.ndarray:
        for t in reversed(self.stages):
            g = t.adjoint_dec_w(g)
        return g

    def adjoint_dec_b(self, g: np.ndarray) -> np.ndarray:
        for t in reversed(self.stages):
            g = t.adjoint_dec_b(g)
        return g

    def apply(self, wb: WeightBundle) -> WeightBundle:
        return WeightBundle(
            w_enc=self.apply_enc(wb.w_enc),
            b_enc=wb.b_enc.copy(),
            w_dec=self.apply_dec_w(wb.w_dec),
            b_dec=self.apply_dec_b(wb.b_dec),
            mesh=self.target_mesh,
        )


def relation_pairs(nm: NeighborMap) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicated related (target, source) index pairs.

    Two nodes are related when either is the other's nearest neighbor; a
    pair related both ways counts once.  Pairs come back sorted by target
    then source index.
    """
    n_o, n_n = nm.n_source, nm.n_target
    rows = np.concatenate([np.arange(n_n, dtype=np.int64), nm.fwd.astype(np.int64)])
    cols = np.concatenate([nm.bwd.astype(np.int64), np.arange(n_o, dtype=np.int64)])
    key = np.unique(rows * n_o + cols)
    return key // n_o, key % n_o


def _pattern(rows: np.ndarray, cols: np.ndarray, n_new: int, n_old: int) -> sparse.csr_matrix:
    # rows must be sorted and cols ascending within each row
    indptr = np.zeros(n_new + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_new), out=indptr[1:])
    return sparse.csr_matrix(
        (np.ones(rows.shape[0]), cols.astype(np.int64), indptr), shape=(n_new, n_old)
    )


def general_transfer(m_o: Mesh, m_n: Mesh, nm: NeighborMap | None = None) -> Transfer:
    """Transfer evaluating the relation sums directly (both arrow directions)."""
    if nm is None:
        nm = build_neighbor_map(m_o, m_n)
    rows, cols = relation_pairs(nm)
    # both counts are at least one because each arrow map is total
    src_count = np.bincount(cols, minlength=len(m_o)).astype(np.float64)
    dst_count = np.bincount(rows, minlength=len(m_n)).astype(np.float64)
    return Transfer(_pattern(rows, cols, len(m_n), len(m_o)), src_count, dst_count)


def expand_transfer(m_o: Mesh, m_n: Mesh, bwd: np.ndarray | None = None) -> Transfer:
    """One-sided transfer for the expansive case: only backward arrows.

    Each target column is a copy of its nearest source column divided by
    how many target nodes share that source; decoder rows are plain copies.
    """
    if bwd is None:
        bwd = m_o.nearest_many(m_n.nodes)
    n_o, n_n = len(m_o), len(m_n)
    src_count = np.bincount(bwd, minlength=n_o).astype(np.float64)
    # a source column nothing points to is never read; clamping only keeps
    # the elementwise division quiet
    np.maximum(src_count, 1.0, out=src_count)
    pattern = sparse.csr_matrix(
        (np.ones(n_n), bwd.astype(np.int64), np.arange(n_n + 1, dtype=np.int64)),
        shape=(n_n, n_o),
    )
    return Transfer(pattern, src_count, np.ones(n_n))


def agglomerate_transfer(m_o: Mesh, m_n: Mesh, fwd: np.ndarray | None = None) -> Transfer:
    """One-sided transfer for the agglomerative case: only forward arrows.

    Each target column sums the source columns pointing at it; decoder rows
    are means over the same groups.
    """
    if fwd is None:
        fwd = m_n.nearest_many(m_o.nodes)
    n_o, n_n = len(m_o), len(m_n)
    counts = np.bincount(fwd, minlength=n_n)
    # impossible under the agglomerative condition: every target node is
    # pointed at by at least its own nearest source node
    assert counts.min() >= 1, "agglomeration target with empty source set"
    order = np.argsort(fwd, kind="stable").astype(np.int64)
    indptr = np.zeros(n_n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    pattern = sparse.csr_matrix((np.ones(n_o), order, indptr), shape=(n_n, n_o))
    return Transfer(pattern, np.ones(n_o), counts.astype(np.float64))


def make_transfer_chain(m_o: Mesh, m_n: Mesh) -> TransferChain:
    """Expansion onto the union mesh followed by agglomeration onto ``m_n``.

    Valid for any mesh pair and equal to the general transform; both stage
    conditions hold by construction of the union mesh, so they are not
    re-checked.
    """
    nm = build_neighbor_map(m_o, m_n)
    master = master_mesh_union(m_o, m_n, nm)
    return TransferChain(
        [expand_transfer(m_o, master), agglomerate_transfer(master, m_n)], m_n
    )


def gfn_transform(wb: WeightBundle, m_n: Mesh) -> WeightBundle:
    """General transform of a bundle onto mesh ``m_n`` by direct evaluation.

    Every source column is split equally over all its related target nodes,
    every target decoder row is the mean over its related source rows, and
    the encoder bias travels unchanged.  On the identical mesh this is an
    exact copy.
    """
    t = general_transfer(wb.mesh, m_n)
    return TransferChain([t], m_n).apply(wb)


def expand(wb: WeightBundle, m_n: Mesh, *, check: bool = True) -> WeightBundle:
    """Fast-path transform for an expansive mesh pair.

    Only the target-to-source arrows are computed.  ``check`` verifies the
    expansive condition first, at the cost of the other arrow direction;
    callers that guarantee the condition by construction may skip it.
    """
    bwd = wb.mesh.nearest_many(m_n.nodes)
    if check:
        fwd = m_n.nearest_many(wb.mesh.nodes)
        if not classify_transform(NeighborMap(fwd=fwd, bwd=bwd)).expansive:
            raise ValueError("not expansive")
    t = expand_transfer(wb.mesh, m_n, bwd=bwd)
    return TransferChain([t], m_n).apply(wb)


def agglomerate(wb: WeightBundle, m_n: Mesh, *, check: bool = True) -> WeightBundle:
    """Fast-path transform for an agglomerative mesh pair.

    Only the source-to-target arrows are computed; see :func:`expand` for
    the checking policy.
    """
    fwd = m_n.nearest_many(wb.mesh.nodes)
    if check:
        bwd = wb.mesh.nearest_many(m_n.nodes)
        if not classify_transform(NeighborMap(fwd=fwd, bwd=bwd)).agglomerative:
            raise ValueError("not agglomerative")
    t = agglomerate_transfer(wb.mesh, m_n, fwd=fwd)
    return TransferChain([t], m_n).apply(wb)


def gfn_transform_decomposed(wb: WeightBundle, m_n: Mesh) -> WeightBundle:
    """General transform via the union mesh (expand, then agglomerate)."""
    return make_transfer_chain(wb.mesh, m_n).apply(wb)


_BLOBS = ("w_enc", "b_enc", "w_dec", "b_dec")


def _write_blob(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_blob(path: Path, shape) -> np.ndarray:
    return np.frombuffer(path.read_bytes(), dtype="<f8").reshape(shape).astype(np.float64)


def save_bundle(wb: WeightBundle, directory, extra: dict | None = None) -> None:
    """Write manifest.json, mesh.csv, and the four little-endian blobs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_mesh(wb.mesh, directory / "mesh.csv")
    manifest = {"L": wb.width, "N": wb.n_nodes, "mesh": "mesh.csv"}
    if extra:
        manifest.update(extra)
    for name in _BLOBS:
        _write_blob(directory / f"{name}.bin", getattr(wb, name))
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_bundle(directory) -> tuple[WeightBundle, dict]:
    """Read a bundle directory back; returns the bundle and its manifest."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    mesh = load_mesh(directory / manifest["mesh"])
    width, n = int(manifest["L"]), int(manifest["N"])
    if n != len(mesh):
        raise ValueError("manifest N does not match the mesh file")
    wb = WeightBundle(
        w_enc=_read_blob(directory / "w_enc.bin", (width, n)),
        b_enc=_read_blob(directory / "b_enc.bin", (width,)),
        w_dec=_read_blob(directory / "w_dec.bin", (n, width)),
        b_dec=_read_blob(directory / "b_dec.bin", (n,)),
        mesh=mesh,
    )
    return wb, manifest
