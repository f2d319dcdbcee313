"""Synthetic parametric scalar fields on point meshes.

Closed-form families stand in for finite-element snapshot data: each one
maps a parameter vector to a field that can be evaluated at arbitrary
coordinates, and each carries an analytic Lipschitz constant so the
mesh-distance premise of the error bounds can be checked exactly.

Mesh hierarchies are built by farthest-point subsampling, which keeps
every coarse mesh a coordinate subset of its parent.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, load_mesh, save_mesh

__all__ = [
    "Family",
    "FAMILIES",
    "Sample",
    "SnapshotSet",
    "analytic_field",
    "parameter_grid",
    "jittered_grid_mesh",
    "farthest_point_indices",
    "subsample_mesh",
    "make_hierarchy",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]

HIERARCHY_FRACTIONS = (1.0, 0.31, 0.105, 0.04)
HIERARCHY_NAMES = ("large", "medium", "small", "tiny")

BUMP_WIDTH = 0.05


@dataclass(frozen=True)
class Family:
    """A parametric closed-form field on [0,1]^2.

    ``evaluate(mu, xy)`` maps an (N, 2) coordinate array to N field values;
    ``gradient_bound(mu)`` is an upper bound on |grad u| over the domain,
    valid for every parameter in ``box`` (rows of [lo, hi] per component).
    """

    name: str
    box: tuple
    evaluate: callable
    gradient_bound: callable

    @property
    def n_mu(self) -> int:
        return len(self.box)


def _smooth(mu, xy):
    return np.sin(np.pi * mu[0] * xy[:, 0]) * np.sin(np.pi * mu[1] * xy[:, 1])


def _smooth_bound(mu):
    return np.pi * math.hypot(mu[0], mu[1])


def _boundary_layer(mu, xy):
    x, y = xy[:, 0], xy[:, 1]
    return 1.0 - np.exp(-x / mu[1]) * (4.0 * y * (1.0 - y)) ** mu[0]


def _boundary_layer_bound(mu):
    # |du/dx| <= 1/mu2 and |du/dy| <= 4*mu1 on the unit square for mu1 >= 1.
    return math.hypot(1.0 / mu[1], 4.0 * mu[0])


def _bump(mu, xy):
    r2 = (xy[:, 0] - mu[0]) ** 2 + (xy[:, 1] - mu[1]) ** 2
    return np.exp(-r2 / (2.0 * BUMP_WIDTH**2))


def _bump_bound(mu):
    # max of r*exp(-r^2/(2 s^2))/s^2 over r >= 0, attained at r = s.
    return math.exp(-0.5) / BUMP_WIDTH


def _fourier7(mu, xy):
    x, y = xy[:, 0], xy[:, 1]
    out = mu[6] * 0.5 * (x + y)
    for k in range(1, 4):
        a, b = mu[2 * k - 2], mu[2 * k - 1]
        out = out + a * np.sin(k * np.pi * x) * np.sin(k * np.pi * y)
        out = out + b * np.cos(k * np.pi * x) * np.cos(k * np.pi * y)
    return out


def _fourier7_bound(mu):
    g = abs(mu[6]) / math.sqrt(2.0)
    for k in range(1, 4):
        g += k * np.pi * (abs(mu[2 * k - 2]) + abs(mu[2 * k - 1]))
    return g


FAMILIES = {
    "smooth": Family(
        "smooth",
        ((0.5, 2.0), (0.5, 2.0)),
        _smooth,
        _smooth_bound,
    ),
    "boundary_layer": Family(
        "boundary_layer",
        ((1.0, 3.0), (0.01, 0.1)),
        _boundary_layer,
        _boundary_layer_bound,
    ),
    "bump": Family(
        "bump",
        ((0.2, 0.8), (0.2, 0.8)),
        _bump,
        _bump_bound,
    ),
    # Seven-parameter stress config: low-order Fourier modes plus a tilt.
    "fourier7": Family(
        "fourier7",
        tuple([(-1.0, 1.0)] * 7),
        _fourier7,
        _fourier7_bound,
    ),
}


def get_family(family) -> Family:
    if isinstance(family, Family):
        return family
    try:
        return FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}") from None


def analytic_field(family, mu, mesh: Mesh) -> np.ndarray:
    """Evaluate the family's closed form at every mesh node."""
    fam = get_family(family)
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (fam.n_mu,):
        raise ValueError(f"{fam.name} expects {fam.n_mu} parameters, got {mu.shape}")
    box = np.asarray(fam.box)
    if np.any(mu < box[:, 0]) or np.any(mu > box[:, 1]):
        raise ValueError(f"parameter {mu.tolist()} outside {fam.name} box")
    return fam.evaluate(mu, mesh.nodes)


def parameter_grid(family, counts) -> np.ndarray:
    """Equispaced tensor grid over the parameter box, (T, n_mu)."""
    fam = get_family(family)
    counts = tuple(int(c) for c in counts)
    if len(counts) != fam.n_mu or min(counts) < 1:
        raise ValueError(f"need {fam.n_mu} positive counts, got {counts}")
    axes = [
        np.linspace(lo, hi, c) if c > 1 else np.array([(lo + hi) / 2.0])
        for (lo, hi), c in zip(fam.box, counts)
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def jittered_grid_mesh(nx: int, ny: int, seed: int = 0, jitter: float = 0.4) -> Mesh:
    """Uniform grid on [0,1]^2 with seeded per-node jitter.

    Displacements stay below half a cell (jitter < 1), so nodes remain
    distinct; the result is irregular enough to produce non-trivial
    nearest-neighbour patterns.
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 points per axis")
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny), indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel()], axis=1)
    h = np.array([1.0 / (nx - 1), 1.0 / (ny - 1)])
    nodes = nodes + rng.uniform(-0.5, 0.5, size=nodes.shape) * jitter * h
    return Mesh(np.clip(nodes, 0.0, 1.0))


def farthest_point_indices(mesh: Mesh, count: int) -> np.ndarray:
    """Greedy max-min subsample: seed at the node nearest the centroid,
    then repeatedly take the node farthest from the chosen set.  Ties go
    to the lowest index.  Returns sorted indices into the mesh.
    """
    nodes = mesh.nodes
    n = len(nodes)
    if not 1 <= count <= n:
        raise ValueError(f"count {count} out of range for {n} nodes")
    centroid = nodes.mean(axis=0)
    start = int(np.argmin(((nodes - centroid) ** 2).sum(axis=1)))
    chosen = [start]
    d2 = ((nodes - nodes[start]) ** 2).sum(axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((nodes - nodes[nxt]) ** 2).sum(axis=1))
    return np.array(sorted(chosen))


def subsample_mesh(mesh: Mesh, fraction: float) -> Mesh:
    """Farthest-point subsample down to ceil(fraction * N) nodes."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction out of range")
    count = math.ceil(fraction * len(mesh))
    if count == len(mesh):
        return mesh
    return Mesh(mesh.nodes[farthest_point_indices(mesh, count)])


def make_hierarchy(mesh: Mesh, fractions=HIERARCHY_FRACTIONS) -> dict:
    """Nested large/medium/small/tiny meshes at the given fractions.

    Targets are relative to the input mesh and each level is subsampled
    from the previous one, so the meshes are nested by construction.
    """
    if len(fractions) != len(HIERARCHY_NAMES):
        raise ValueError(f"expected {len(HIERARCHY_NAMES)} fractions")
    if len(mesh) < 50:
        raise ValueError("mesh too small for a hierarchy")
    out = {}
    prev = mesh
    for name, frac in zip(HIERARCHY_NAMES, fractions):
        target = math.ceil(frac * len(mesh))
        if target < 2:
            raise ValueError(f"hierarchy level {name} would have {target} nodes")
        if target < len(prev):
            prev = Mesh(prev.nodes[farthest_point_indices(prev, target)])
        out[name] = prev
    return out


@dataclass(frozen=True)
class Sample:
    mu: np.ndarray
    mesh_id: str
    u: np.ndarray


@dataclass
class SnapshotSet:
    """A family's snapshots over one or more meshes."""

    family: str
    meshes: dict
    samples: list
    grid: tuple = ()
    seed: int = 0

    def __post_init__(self):
        for s in self.samples:
            if s.mesh_id not in self.meshes:
                raise ValueError(f"sample references unknown mesh {s.mesh_id!r}")
            if len(s.u) != len(self.meshes[s.mesh_id]):
                raise ValueError("field length does not match its mesh")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def params(self) -> np.ndarray:
        return np.array([s.mu for s in self.samples])


def generate_dataset(family, counts, meshes, assignment, seed: int = 0) -> SnapshotSet:
    """Snapshots on an equispaced parameter grid.

    ``assignment`` is a mesh id (single fidelity), a pair of ids
    (alternating 50/50 split), or an explicit per-sample list.
    """
    fam = get_family(family)
    params = parameter_grid(fam, counts)
    t = len(params)
    if isinstance(assignment, str):
        mesh_ids = [assignment] * t
    elif len(assignment) == t and t != 2:
        mesh_ids = list(assignment)
    elif len(assignment) == 2:
        mesh_ids = [assignment[i % 2] for i in range(t)]
    else:
        raise ValueError("assignment must be an id, a pair, or one id per sample")
    samples = []
    for mu, mid in zip(params, mesh_ids):
        if mid not in meshes:
            raise ValueError(f"assignment references unknown mesh {mid!r}")
        samples.append(Sample(mu, mid, analytic_field(fam, mu, meshes[mid])))
    # Unreferenced meshes stay in the set; they serve as evaluation targets.
    return SnapshotSet(fam.name, dict(meshes), samples, tuple(counts), seed)


def save_dataset(dataset: SnapshotSet, path) -> None:
    """Write manifest, meshes, parameters and per-mesh snapshot tables."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "family": dataset.family,
        "n_mu": get_family(dataset.family).n_mu,
        "grid": list(dataset.grid),
        "mesh_ids": sorted(dataset.meshes),
        "assignment": [s.mesh_id for s in dataset.samples],
        "seed": dataset.seed,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for mid, mesh in dataset.meshes.items():
        save_mesh(mesh, os.path.join(path, f"mesh_{mid}.csv"))
    np.savetxt(
        os.path.join(path, "params.csv"), dataset.params, fmt="%.17g", delimiter=","
    )
    for mid in sorted(dataset.meshes):
        rows = [s.u for s in dataset.samples if s.mesh_id == mid]
        if rows:
            np.savetxt(
                os.path.join(path, f"snapshots_{mid}.csv"),
                np.array(rows),
                fmt="%.17g",
                delimiter=",",
            )


def load_dataset(path) -> SnapshotSet:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    meshes = {
        mid: load_mesh(os.path.join(path, f"mesh_{mid}.csv"))
        for mid in manifest["mesh_ids"]
    }
    params = np.loadtxt(os.path.join(path, "params.csv"), delimiter=",", ndmin=2)
    assignment = manifest["assignment"]
    fields = {}
    for mid in dict.fromkeys(assignment):
        table = np.loadtxt(
            os.path.join(path, f"snapshots_{mid}.csv"), delimiter=",", ndmin=2
        )
        fields[mid] = iter(table)
    samples = [
        Sample(mu, mid, next(fields[mid])) for mu, mid in zip(params, assignment)
    ]
    return SnapshotSet(
        manifest["family"],
        meshes,
        samples,
        tuple(manifest["grid"]),
        manifest["seed"],
    )
