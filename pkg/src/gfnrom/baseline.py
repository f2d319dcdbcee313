"""Linear reduction baseline: POD via the method of snapshots.

The basis comes from the eigendecomposition of the T x T Gram matrix,
solved with cyclic Jacobi rotations so results are deterministic and
independent of LAPACK build details.  Snapshots are treated in plain
l2, without mass-matrix weighting.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PodBasis",
    "jacobi_eigh",
    "pod_basis",
    "pod_projection_error",
    "save_basis",
    "load_basis",
]

RANK_TRUNCATION = 1e-12


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 50):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
    columns of the second array are the eigenvectors.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    n = a.shape[0]
    s = (a + a.T) / 2.0
    v = np.eye(n)
    scale = np.linalg.norm(s)
    if n == 1 or scale == 0.0:
        return np.diag(s).copy(), v
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(s, -1) ** 2) * 2.0)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                spq = s[p, q]
                if spq == 0.0:
                    continue
                theta = (s[q, q] - s[p, p]) / (2.0 * spq)
                t = np.sign(theta) if theta != 0.0 else 1.0
                # hypot keeps theta^2 from overflowing for tiny pivots
                t = t / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                sp = s[:, p].copy()
                sq = s[:, q].copy()
                s[:, p] = c * sp - sn * sq
                s[:, q] = sn * sp + c * sq
                sp = s[p, :].copy()
                sq = s[q, :].copy()
                s[p, :] = c * sp - sn * sq
                s[q, :] = sn * sp + c * sq
                s[p, q] = 0.0
                s[q, p] = 0.0
                vp = v[:, p].copy()
                v[:, p] = c * vp - sn * v[:, q]
                v[:, q] = sn * vp + c * v[:, q]
    eig = np.diag(s).copy()
    order = np.argsort(-eig, kind="stable")
    return eig[order], v[:, order]


@dataclass(frozen=True)
class PodBasis:
    """Orthonormal modes (N_h, N) with their singular values (N,)."""

    modes: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "modes", np.ascontiguousarray(self.modes, dtype=np.float64)
        )
        object.__setattr__(
            self,
            "singular_values",
            np.ascontiguousarray(self.singular_values, dtype=np.float64),
        )
        if self.modes.ndim != 2 or self.modes.shape[1] != len(self.singular_values):
            raise ValueError("modes and singular values disagree on rank")

    @property
    def rank(self) -> int:
        return self.modes.shape[1]

    def project(self, u: np.ndarray) -> np.ndarray:
        """Orthogonal projection of columns-as-samples or a single vector."""
        return self.modes @ (self.modes.T @ u)


def pod_basis(snapshots: np.ndarray, rank: int) -> PodBasis:
    """Top ``rank`` left singular vectors of a (N_h, T) snapshot matrix.

    Singular values below the numerical-rank cutoff are dropped, so the
    returned basis may be thinner than requested for degenerate data.
    """
    u = np.asarray(snapshots, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError("expected an (N_h, T) snapshot matrix")
    if not 1 <= rank <= min(u.shape):
        raise ValueError("rank too large")
    gram = u.T @ u
    eig, w = jacobi_eigh(gram)
    eig = np.maximum(eig, 0.0)
    if eig[0] == 0.0:
        raise ValueError("snapshot matrix has rank zero")
    keep = eig >= RANK_TRUNCATION * eig[0]
    r = min(rank, int(np.count_nonzero(keep)))
    sigma = np.sqrt(eig[:r])
    modes = (u @ w[:, :r]) / sigma
    return PodBasis(modes, sigma)


def _relative_errors(truth: np.ndarray, approx: np.ndarray) -> np.ndarray:
    """Per-sample relative l2 errors in percent; rows are samples.

    Zero-norm truth rows are excluded with a warning, matching the model
    evaluation metric so POD and network numbers are comparable.
    """
    truth = np.atleast_2d(truth)
    approx = np.atleast_2d(approx)
    norms = np.linalg.norm(truth, axis=1)
    ok = norms > 0.0
    if not np.all(ok):
        warnings.warn("excluding zero-norm samples from the error metric")
    if not np.any(ok):
        raise ValueError("no nonzero samples to evaluate")
    err = np.linalg.norm(truth - approx, axis=1)
    return 100.0 * err[ok] / norms[ok]


def pod_projection_error(basis: PodBasis, tests: np.ndarray) -> float:
    """Mean relative l2 error (percent) of projecting test samples.

    ``tests`` has one sample per row.
    """
    tests = np.atleast_2d(np.asarray(tests, dtype=np.float64))
    proj = basis.project(tests.T).T
    return float(np.mean(_relative_errors(tests, proj)))


def save_basis(basis: PodBasis, path) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {
        "n_h": int(basis.modes.shape[0]),
        "rank": int(basis.rank),
        "blobs": {"modes": "modes.bin", "singular_values": "singular_values.bin"},
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    basis.modes.astype("<f8").tofile(os.path.join(path, "modes.bin"))
    basis.singular_values.astype("<f8").tofile(
        os.path.join(path, "singular_values.bin")
    )


def load_basis(path) -> PodBasis:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    n_h, rank = manifest["n_h"], manifest["rank"]
    modes = np.fromfile(os.path.join(path, "modes.bin"), dtype="<f8").reshape(
        n_h, rank
    )
    sigma = np.fromfile(os.path.join(path, "singular_values.bin"), dtype="<f8")
    return PodBasis(modes, sigma)
