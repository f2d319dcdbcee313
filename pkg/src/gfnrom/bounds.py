"""Empirical verification of the cross-mesh error bounds.

For a model resident on one mesh and evaluated on another, three
inequalities bound the (per-node or per-latent) errors in terms of the
model's empirical errors on its own mesh plus a mesh-proximity term
delta: the largest field gap across nearest-neighbour-related node
pairs.  They are theorems for the transfer rule implemented here, so
every check is expected to pass; a violation means an implementation
bug, and the suite treats it as such.

All weight norms are taken on the resident bundle, not the transferred
one, and the norm is the max absolute row sum.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .gfn import WeightBundle, gfn_transform, relation_pairs
from .mesh import Mesh, NeighborMap, build_neighbor_map
from .rom import RomModel, decode, encode, map_params

__all__ = [
    "LIPSCHITZ",
    "inf_norm",
    "compute_delta",
    "BoundCheck",
    "verify_rom_bound",
    "verify_mapper_bound",
    "verify_autoencoder_bound",
    "BoundReport",
    "bound_report",
    "save_report",
]

# Lipschitz constants of supported activations.
LIPSCHITZ = {"tanh": 1.0}


def inf_norm(w: np.ndarray) -> float:
    """Operator infinity norm: max absolute row sum."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    return float(np.abs(w).sum(axis=1).max())


def compute_delta(u_o: np.ndarray, u_n: np.ndarray, nm: NeighborMap) -> float:
    """Largest field gap over nearest-neighbour-related node pairs."""
    rows, cols = relation_pairs(nm)
    return float(np.max(np.abs(np.asarray(u_o)[cols] - np.asarray(u_n)[rows])))


def empirical_tau(model: RomModel, mu, u_o: np.ndarray) -> float:
    """Max nodal error of the full model on its resident mesh."""
    return float(np.max(np.abs(u_o - decode(model, map_params(model, mu)))))


def empirical_alpha(model: RomModel, mu, u_o: np.ndarray) -> float:
    """Max latent gap between mapper and encoder on the resident mesh."""
    return float(np.max(np.abs(map_params(model, mu) - encode(model, u_o))))


def empirical_beta(model: RomModel, u_o: np.ndarray) -> float:
    """Max nodal autoencoder error on the resident mesh."""
    return float(np.max(np.abs(u_o - decode(model, encode(model, u_o)))))


def _norm_terms(model: RomModel, activation: str):
    c = LIPSCHITZ[activation]
    enc_prod = float(np.prod([inf_norm(w) for w in model.enc_hidden.weights]))
    dec_prod = float(np.prod([inf_norm(w) for w in model.dec_hidden.weights]))
    p = len(model.enc_hidden)
    q = p + len(model.dec_hidden)
    return c, p, q, enc_prod, dec_prod


def _io_norms(model: RomModel):
    """Inf-norms of the mesh layers as seen from raw field units.

    With min-max scaling active the encoder absorbs a 1/(hi-lo) factor
    and the decoder a matching (hi-lo); their product is scale-free.
    """
    span = 1.0
    if model.field_range is not None:
        lo, hi = model.field_range
        span = hi - lo
    return inf_norm(model.bundle.w_enc) / span, inf_norm(model.bundle.w_dec) * span


@dataclass(frozen=True)
class BoundCheck:
    """One inequality evaluated at every node or latent index.

    ``ok`` is the authoritative verdict; ``max_slack`` is the float
    diagnostic and may sit a few ulps above zero on checks that were
    rescued by the exact comparison.
    """

    name: str
    lhs: np.ndarray
    rhs: float
    ok: np.ndarray

    @property
    def max_slack(self) -> float:
        """Largest lhs - rhs; nonpositive when the bound holds."""
        return float(np.max(self.lhs) - self.rhs)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ok))


def _transfer(model, m_n, wbt, nm):
    if nm is None:
        nm = build_neighbor_map(model.bundle.mesh, m_n)
    if wbt is None:
        wbt = gfn_transform(model.bundle, m_n)
    return wbt, nm


def _exact_rom_recheck(idx, u_n, pred_n, u_o, pred_o, nm) -> np.ndarray:
    """Exact-arithmetic verdict for nodes the float comparison rejected.

    When the transform copies decoder rows, lhs = tau + delta can hold
    with equality, and the float comparison may lose it by a few ulps of
    its own rounding.  Every float is a dyadic rational, so the
    inequality over the computed values is decidable exactly; a genuine
    violation stays a violation here.
    """
    rows, cols = relation_pairs(nm)
    delta = max(
        abs(Fraction(float(a)) - Fraction(float(b)))
        for a, b in zip(u_o[cols], u_n[rows])
    )
    tau = max(
        abs(Fraction(float(a)) - Fraction(float(b))) for a, b in zip(u_o, pred_o)
    )
    bound = tau + delta
    return np.array(
        [
            abs(Fraction(float(u_n[j])) - Fraction(float(pred_n[j]))) <= bound
            for j in idx
        ],
        dtype=bool,
    )


def verify_rom_bound(
    model: RomModel,
    mu,
    u_o: np.ndarray,
    u_n: np.ndarray,
    m_n: Mesh,
    wbt: WeightBundle | None = None,
    nm: NeighborMap | None = None,
    activation: str = "tanh",
) -> BoundCheck:
    """Prediction error on the new mesh against tau + delta."""
    wbt, nm = _transfer(model, m_n, wbt, nm)
    delta = compute_delta(u_o, u_n, nm)
    pred_o = decode(model, map_params(model, mu))
    tau = float(np.max(np.abs(u_o - pred_o)))
    pred_n = decode(model, map_params(model, mu), wbt)
    lhs = np.abs(u_n - pred_n)
    ok = lhs <= tau + delta
    if not ok.all():
        idx = np.flatnonzero(~ok)
        ok = ok.copy()
        ok[idx] = _exact_rom_recheck(idx, u_n, pred_n, u_o, pred_o, nm)
    return BoundCheck("rom", lhs, tau + delta, ok)


def verify_mapper_bound(
    model: RomModel,
    mu,
    u_o: np.ndarray,
    u_n: np.ndarray,
    m_n: Mesh,
    wbt: WeightBundle | None = None,
    nm: NeighborMap | None = None,
    activation: str = "tanh",
) -> BoundCheck:
    """Latent mapper-encoder gap on the new mesh against its bound."""
    wbt, nm = _transfer(model, m_n, wbt, nm)
    delta = compute_delta(u_o, u_n, nm)
    alpha = empirical_alpha(model, mu, u_o)
    c, p, _, enc_prod, _ = _norm_terms(model, activation)
    enc_norm, _ = _io_norms(model)
    rhs = alpha + delta * c ** (p + 1) * enc_norm * enc_prod
    lhs = np.abs(map_params(model, mu) - encode(model, u_n, wbt))
    return BoundCheck("mapper", lhs, rhs, lhs <= rhs)


def verify_autoencoder_bound(
    model: RomModel,
    u_o: np.ndarray,
    u_n: np.ndarray,
    m_n: Mesh,
    wbt: WeightBundle | None = None,
    nm: NeighborMap | None = None,
    activation: str = "tanh",
) -> BoundCheck:
    """Autoencoder round-trip error on the new mesh against its bound."""
    wbt, nm = _transfer(model, m_n, wbt, nm)
    delta = compute_delta(u_o, u_n, nm)
    beta = empirical_beta(model, u_o)
    c, _, q, enc_prod, dec_prod = _norm_terms(model, activation)
    enc_norm, dec_norm = _io_norms(model)
    rhs = beta + delta + delta * c ** (q + 1) * dec_norm * enc_norm * enc_prod * dec_prod
    lhs = np.abs(u_n - decode(model, encode(model, u_n, wbt), wbt))
    return BoundCheck("autoencoder", lhs, rhs, lhs <= rhs)


@dataclass
class BoundReport:
    """All three bounds over a batch of samples on one mesh pair."""

    n_samples: int
    n_eval_nodes: int
    delta: np.ndarray
    tau: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    lipschitz: float
    enc_norm: float
    dec_norm: float
    enc_hidden_product: float
    dec_hidden_product: float
    max_lhs: dict
    rhs: dict
    max_slack: dict
    passed: dict

    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_eval_nodes": self.n_eval_nodes,
            "delta": self.delta.tolist(),
            "tau": self.tau.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "lipschitz": self.lipschitz,
            "enc_norm": self.enc_norm,
            "dec_norm": self.dec_norm,
            "enc_hidden_product": self.enc_hidden_product,
            "dec_hidden_product": self.dec_hidden_product,
            "max_lhs": {k: v.tolist() for k, v in self.max_lhs.items()},
            "rhs": {k: v.tolist() for k, v in self.rhs.items()},
            "max_slack": self.max_slack,
            "passed": self.passed,
        }


BOUND_NAMES = ("rom", "mapper", "autoencoder")


def bound_report(
    model: RomModel, mus, m_n: Mesh, field_fn, activation: str = "tanh"
) -> BoundReport:
    """Evaluate all three bounds for every parameter in ``mus``.

    ``field_fn(mu, mesh)`` must return the true field on any mesh; the
    closed-form families provide exactly that.
    """
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    m_o = model.bundle.mesh
    nm = build_neighbor_map(m_o, m_n)
    wbt = gfn_transform(model.bundle, m_n)
    t = len(mus)
    delta = np.zeros(t)
    tau = np.zeros(t)
    alpha = np.zeros(t)
    beta = np.zeros(t)
    max_lhs = {name: np.zeros(t) for name in BOUND_NAMES}
    rhs = {name: np.zeros(t) for name in BOUND_NAMES}
    all_ok = {name: True for name in BOUND_NAMES}
    for i, mu in enumerate(mus):
        u_o = field_fn(mu, m_o)
        u_n = field_fn(mu, m_n)
        delta[i] = compute_delta(u_o, u_n, nm)
        tau[i] = empirical_tau(model, mu, u_o)
        alpha[i] = empirical_alpha(model, mu, u_o)
        beta[i] = empirical_beta(model, u_o)
        checks = (
            verify_rom_bound(model, mu, u_o, u_n, m_n, wbt, nm, activation),
            verify_mapper_bound(model, mu, u_o, u_n, m_n, wbt, nm, activation),
            verify_autoencoder_bound(model, u_o, u_n, m_n, wbt, nm, activation),
        )
        for check in checks:
            max_lhs[check.name][i] = float(np.max(check.lhs))
            rhs[check.name][i] = check.rhs
            all_ok[check.name] = all_ok[check.name] and check.passed
    c, _, _, enc_prod, dec_prod = _norm_terms(model, activation)
    slack = {
        name: float(np.max(max_lhs[name] - rhs[name])) for name in BOUND_NAMES
    }
    enc_norm, dec_norm = _io_norms(model)
    return BoundReport(
        n_samples=t,
        n_eval_nodes=len(m_n),
        delta=delta,
        tau=tau,
        alpha=alpha,
        beta=beta,
        lipschitz=c,
        enc_norm=enc_norm,
        dec_norm=dec_norm,
        enc_hidden_product=enc_prod,
        dec_hidden_product=dec_prod,
        max_lhs=max_lhs,
        rhs=rhs,
        max_slack=slack,
        passed=all_ok,
    )


def save_report(report: BoundReport, directory) -> None:
    """Write the full JSON report and a one-line-per-bound CSV summary."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "bound_report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "bound_summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bound", "samples", "max_lhs", "min_rhs", "max_slack", "pass"])
        for name in BOUND_NAMES:
            writer.writerow(
                [
                    name,
                    report.n_samples,
                    f"{np.max(report.max_lhs[name]):.17g}",
                    f"{np.min(report.rhs[name]):.17g}",
                    f"{report.max_slack[name]:.17g}",
                    report.passed[name],
                ]
            )
