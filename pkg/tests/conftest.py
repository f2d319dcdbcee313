"""Shared generators and independent oracles for the test suite.

The oracles deliberately avoid the library's own data structures: nearest
neighbors by exhaustive scan, transforms by literal enumeration of the
relation set, gradients by central differences.
"""

import numpy as np

from gfnrom.gfn import WeightBundle
from gfnrom.mesh import Mesh


def random_mesh(rng, n, dim=2, scale=1.0):
    """Mesh of n distinct uniform points in [0, scale]^dim."""
    nodes = rng.uniform(0.0, scale, size=(n, dim))
    return Mesh(nodes)


def superset_mesh(rng, base, extra):
    """Target mesh containing every base node plus ``extra`` fresh ones.

    Exact containment makes the pair expansive: each base node is its own
    nearest target and vice versa, at distance zero.
    """
    add = rng.uniform(0.0, 1.0, size=(extra, base.dim))
    return Mesh(np.vstack([base.nodes, add]))


def subset_mesh(rng, base, k):
    """Target mesh of k nodes drawn from the base without replacement.

    Containment the other way round makes the pair agglomerative.
    """
    idx = np.sort(rng.choice(len(base), size=k, replace=False))
    return Mesh(base.nodes[idx])


def random_bundle(rng, width, mesh):
    n = len(mesh)
    return WeightBundle(
        w_enc=rng.standard_normal((width, n)),
        b_enc=rng.standard_normal(width),
        w_dec=rng.standard_normal((n, width)),
        b_dec=rng.standard_normal(n),
        mesh=mesh,
    )


def oracle_nearest(nodes, q):
    """Exhaustive nearest node index, lowest index on distance ties."""
    d = ((nodes - np.asarray(q)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def oracle_neighbor_map(src_nodes, dst_nodes):
    fwd = np.array([oracle_nearest(dst_nodes, p) for p in src_nodes])
    bwd = np.array([oracle_nearest(src_nodes, q) for q in dst_nodes])
    return fwd, bwd


def oracle_related(src_nodes, dst_nodes):
    """Set of (target, source) pairs related through either arrow."""
    fwd, bwd = oracle_neighbor_map(src_nodes, dst_nodes)
    pairs = {(int(j), int(i)) for i, j in enumerate(fwd)}
    pairs |= {(int(j), int(i)) for j, i in enumerate(bwd)}
    return pairs


def oracle_transform(wb, m_n):
    """Literal evaluation of the node-redistribution rule.

    Encoder columns are split equally over all target nodes related to the
    source node; decoder rows and biases are means over related sources;
    the encoder bias is carried over unchanged.
    """
    pairs = oracle_related(wb.mesh.nodes, m_n.nodes)
    n_n = len(m_n)
    out_deg = np.zeros(len(wb.mesh))
    for _, i in pairs:
        out_deg[i] += 1
    w_enc = np.zeros((wb.width, n_n))
    w_dec = np.zeros((n_n, wb.width))
    b_dec = np.zeros(n_n)
    in_deg = np.zeros(n_n)
    for j, i in sorted(pairs):
        w_enc[:, j] += wb.w_enc[:, i] / out_deg[i]
        w_dec[j] += wb.w_dec[i]
        b_dec[j] += wb.b_dec[i]
        in_deg[j] += 1
    w_dec /= in_deg[:, None]
    b_dec /= in_deg
    return w_enc, wb.b_enc.copy(), w_dec, b_dec


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def relative_gradient_error(analytic, numeric):
    """Scale-free comparison of two gradient stacks."""
    a = np.concatenate([np.ravel(g) for g in analytic])
    b = np.concatenate([np.ravel(g) for g in numeric])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
