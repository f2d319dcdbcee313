"""Reduced-order model assembly: losses, training modes, inference.

The model is an autoencoder whose outermost layers live on a mesh (the
weight bundle) plus a parameter-to-latent mapper.  Training transfers
the bundle to each sample's mesh through the expand/agglomerate chain
and backpropagates through the transfer, so gradients land on the
resident bundle regardless of which mesh a sample was observed on.

Three modes:
  fixed       - the resident mesh never changes; full-batch steps.
  adaptive    - the resident mesh grows by master-mesh unions as samples
                arrive; per-sample plain-SGD steps (momentum-style
                optimizers cannot follow the shape changes).
  precomputed_adaptive - fold all training meshes into one master up
                front, expand once, then train as fixed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .baseline import _relative_errors
from .datagen import SnapshotSet
from .gfn import (
    TransferChain,
    WeightBundle,
    agglomerate_transfer,
    expand,
    gfn_transform,
    load_bundle,
    make_transfer_chain,
    save_bundle,
)
from .mesh import Mesh, master_mesh_union
from .neural import Adam, DenseNet, SGD, glorot

__all__ = [
    "RomModel",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "build_model",
    "encode",
    "decode",
    "map_params",
    "loss_recon",
    "loss_map",
    "total_loss",
    "split_dataset",
    "train",
    "predict",
    "mean_relative_error",
    "save_model",
    "load_model",
]

MODES = ("fixed", "adaptive", "precomputed_adaptive")
OPTIMIZERS = ("adam", "sgd")


@dataclass
class TrainConfig:
    epochs: int = 5000
    lr: float = 1e-3
    l2: float = 1e-5
    omega: float = 10.0
    mode: str = "fixed"
    optimizer: str = "adam"
    seed: int = 0
    train_fraction: float = 0.30
    normalize: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mode == "adaptive" and self.optimizer == "adam":
            raise ValueError(
                "adaptive mode changes parameter shapes and cannot use adam"
            )
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "l2": self.l2,
            "omega": self.omega,
            "mode": self.mode,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "normalize": self.normalize,
        }


@dataclass
class RomModel:
    """Weight bundle on the resident mesh plus the mesh-free nets."""

    bundle: WeightBundle
    enc_hidden: DenseNet
    dec_hidden: DenseNet
    mapper: DenseNet
    omega: float = 10.0
    # (lo, hi) of the training fields when min-max scaling was requested;
    # encode maps raw fields into [0, 1] and decode maps back out.
    field_range: tuple | None = None

    def __post_init__(self):
        latent = self.latent_dim
        if len(self.enc_hidden) and self.enc_hidden.sizes[0] != self.bundle.width:
            raise ValueError("encoder hidden net does not chain with the bundle")
        if len(self.dec_hidden):
            if self.dec_hidden.sizes[0] != latent:
                raise ValueError("decoder hidden net does not start at the latent dim")
            if self.dec_hidden.sizes[-1] != self.bundle.width:
                raise ValueError("decoder hidden net does not chain with the bundle")
        elif len(self.enc_hidden):
            raise ValueError("encoder and decoder hidden nets must come in pairs")
        if not len(self.mapper):
            raise ValueError("mapper must have at least one layer")
        if self.mapper.sizes[-1] != latent:
            raise ValueError("mapper output does not match the latent dim")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        if self.field_range is not None:
            lo, hi = (float(v) for v in self.field_range)
            if not hi > lo:
                raise ValueError("field_range needs hi > lo")
            self.field_range = (lo, hi)

    @property
    def latent_dim(self) -> int:
        if len(self.enc_hidden):
            return self.enc_hidden.sizes[-1]
        return self.bundle.width

    @property
    def n_mu(self) -> int:
        return self.mapper.sizes[0]


def default_latent_dim(n_mu: int) -> int:
    return int(1.5 * n_mu)


def build_model(
    mesh: Mesh,
    n_mu: int,
    latent_dim: int | None = None,
    hidden_width: int | None = 200,
    mapper_widths=(50, 50, 50, 50),
    omega: float = 10.0,
    seed: int = 0,
) -> RomModel:
    """Fresh model on ``mesh``; ``hidden_width=None`` drops the hidden pair."""
    latent = default_latent_dim(n_mu) if latent_dim is None else int(latent_dim)
    if latent < 1:
        raise ValueError("latent dimension must be positive")
    width = latent if hidden_width is None else int(hidden_width)
    rng = np.random.default_rng(seed)
    bundle = WeightBundle(
        glorot(rng, width, len(mesh)),
        np.zeros(width),
        glorot(rng, len(mesh), width),
        np.zeros(len(mesh)),
        mesh,
    )
    if hidden_width is None:
        enc_hidden = DenseNet([], [])
        dec_hidden = DenseNet([], [])
    else:
        enc_hidden = DenseNet.init([width, latent], rng)
        dec_hidden = DenseNet.init([latent, width], rng)
    mapper = DenseNet.init([n_mu, *mapper_widths, latent], rng, final_activation=False)
    return RomModel(bundle, enc_hidden, dec_hidden, mapper, omega)


def _scale_fields(model: RomModel, u: np.ndarray) -> np.ndarray:
    if model.field_range is None:
        return u
    lo, hi = model.field_range
    return (u - lo) / (hi - lo)


def encode(model: RomModel, u: np.ndarray, bundle: WeightBundle | None = None):
    """Latent coordinates of nodal fields; rows are samples."""
    wb = model.bundle if bundle is None else bundle
    u = _scale_fields(model, u)
    return model.enc_hidden.forward(np.tanh(u @ wb.w_enc.T + wb.b_enc))


def decode(model: RomModel, z: np.ndarray, bundle: WeightBundle | None = None):
    """Nodal fields from latent coordinates; rows are samples."""
    wb = model.bundle if bundle is None else bundle
    out = model.dec_hidden.forward(z) @ wb.w_dec.T + wb.b_dec
    if model.field_range is not None:
        lo, hi = model.field_range
        out = out * (hi - lo) + lo
    return out


def map_params(model: RomModel, mu: np.ndarray):
    return model.mapper.forward(np.asarray(mu, dtype=np.float64))


def _bundle_for(model: RomModel, mesh: Mesh) -> WeightBundle:
    if mesh is model.bundle.mesh or np.array_equal(
        mesh.nodes, model.bundle.mesh.nodes
    ):
        return model.bundle
    return gfn_transform(model.bundle, mesh)


def loss_recon(model: RomModel, u: np.ndarray, mesh: Mesh) -> float:
    """Mean squared nodal error of the transferred autoencoder round trip."""
    wb = _bundle_for(model, mesh)
    r = decode(model, encode(model, u, wb), wb) - u
    return float(np.mean(r * r))


def loss_map(model: RomModel, mu, u: np.ndarray, mesh: Mesh) -> float:
    """Mean squared latent gap between the encoder and the mapper."""
    wb = _bundle_for(model, mesh)
    e = encode(model, u, wb) - map_params(model, mu)
    return float(np.mean(e * e))


def total_loss(model: RomModel, batch) -> float:
    """Mesh-size-weighted mean of the composite loss over (mu, u, mesh) triples.

    Each sample is weighted by its node count over the batch total, and
    the weighted sum is averaged over the batch once more.
    """
    if not batch:
        raise ValueError("empty batch")
    sizes = np.array([len(mesh) for _, _, mesh in batch], dtype=np.float64)
    weights = sizes / sizes.sum()
    comps = [
        loss_recon(model, u, mesh) + model.omega * loss_map(model, mu, u, mesh)
        for mu, u, mesh in batch
    ]
    return float(np.dot(weights, comps) / len(batch))


def split_dataset(params: np.ndarray, train_fraction: float, seed: int):
    """Deterministic train/test split stratified by the first parameter.

    Within each group sharing a first-parameter value, a seeded
    permutation selects round(fraction * group size) training samples.
    Returns sorted index arrays (train, test).
    """
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    rng = np.random.default_rng(seed)
    train = []
    for val in np.unique(params[:, 0]):
        idx = np.flatnonzero(params[:, 0] == val)
        k = int(round(train_fraction * len(idx)))
        perm = rng.permutation(len(idx))
        train.extend(idx[perm[:k]].tolist())
    train = np.array(sorted(train), dtype=np.intp)
    test = np.setdiff1d(np.arange(len(params)), train)
    if len(train) == 0 or len(test) == 0:
        raise ValueError("degenerate split; adjust train_fraction or grid")
    return train, test


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the history so far."""

    def __init__(self, epoch: int, history: np.ndarray):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.history = history


@dataclass
class TrainResult:
    model: RomModel
    history: np.ndarray  # rows: epoch, weighted total, weighted recon, weighted map
    train_indices: np.ndarray
    test_indices: np.ndarray


def _parameters(model: RomModel):
    """Parameter arrays in update order with their decay flags."""
    params = [model.bundle.w_enc, model.bundle.b_enc, model.bundle.w_dec,
              model.bundle.b_dec]
    decay = [True, False, True, False]
    for net in (model.enc_hidden, model.dec_hidden, model.mapper):
        for w, b in zip(net.weights, net.biases):
            params.extend([w, b])
            decay.extend([True, False])
    return params, decay


def _forward_backward(model, wbt, u, mu, coeff):
    """Composite loss and gradients for one mesh group.

    ``u`` is (B, n) on the group's mesh, ``wbt`` the transferred bundle,
    ``coeff`` a (B,) vector of global loss weights.  Returns per-sample
    recon/map losses and gradients w.r.t. the transferred bundle and the
    shared nets, each scaled by ``coeff``.
    """
    a1 = u @ wbt.w_enc.T + wbt.b_enc
    h1 = np.tanh(a1)
    z, tape_e = model.enc_hidden.forward_tape(h1)
    hd, tape_d = model.dec_hidden.forward_tape(z)
    uhat = hd @ wbt.w_dec.T + wbt.b_dec
    zm, tape_m = model.mapper.forward_tape(mu)

    r = uhat - u
    e = z - zm
    rec = (r * r).mean(axis=1)
    mp = (e * e).mean(axis=1)

    gu = (2.0 / u.shape[1]) * r * coeff[:, None]
    g_wdec = gu.T @ hd
    g_bdec = gu.sum(axis=0)
    ghd = gu @ wbt.w_dec
    gz_dec, gws_d, gbs_d = model.dec_hidden.backward(tape_d, ghd)

    ge = (2.0 / e.shape[1]) * e * (model.omega * coeff)[:, None]
    _, gws_m, gbs_m = model.mapper.backward(tape_m, -ge)
    gh1, gws_e, gbs_e = model.enc_hidden.backward(tape_e, gz_dec + ge)
    ga1 = gh1 * (1.0 - h1 * h1)
    g_wenc = ga1.T @ u
    g_benc = ga1.sum(axis=0)

    grads_bundle = (g_wenc, g_benc, g_wdec, g_bdec)
    grads_nets = (gws_e, gbs_e, gws_d, gbs_d, gws_m, gbs_m)
    return rec, mp, grads_bundle, grads_nets


def _pull_back(chain, grads_bundle):
    g_wenc, g_benc, g_wdec, g_bdec = grads_bundle
    return (
        chain.adjoint_enc(g_wenc),
        g_benc,
        chain.adjoint_dec_w(g_wdec),
        chain.adjoint_dec_b(g_bdec),
    )


def _flatten_net_grads(model, grads_nets):
    gws_e, gbs_e, gws_d, gbs_d, gws_m, gbs_m = grads_nets
    flat = []
    for gws, gbs in ((gws_e, gbs_e), (gws_d, gbs_d), (gws_m, gbs_m)):
        for gw, gb in zip(gws, gbs):
            flat.extend([gw, gb])
    return flat


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(lr=cfg.lr, l2=cfg.l2)
    return SGD(lr=cfg.lr, l2=cfg.l2)


def _train_fixed(model, dataset, cfg, train_idx):
    samples = [dataset.samples[i] for i in train_idx]
    sizes = np.array([len(s.u) for s in samples], dtype=np.float64)
    weights = sizes / sizes.sum()
    t = len(samples)

    groups = {}
    for pos, s in enumerate(samples):
        groups.setdefault(s.mesh_id, []).append(pos)
    prepared = []
    for mid, positions in groups.items():
        mesh = dataset.meshes[mid]
        chain = make_transfer_chain(model.bundle.mesh, mesh)
        u = _scale_fields(model, np.array([samples[p].u for p in positions]))
        mu = np.array([samples[p].mu for p in positions])
        # Descend on the weighted mean, not the 1/T-scaled display formula:
        # same minimizers, and the L2 strength keeps its usual meaning
        # relative to a mean-scale data gradient.
        coeff = weights[positions]
        prepared.append((chain, u, mu, np.array(positions), coeff))

    optimizer = _make_optimizer(cfg)
    params, decay = _parameters(model)
    history = np.zeros((cfg.epochs, 4))
    rec_all = np.zeros(t)
    map_all = np.zeros(t)
    for epoch in range(cfg.epochs):
        grads = [np.zeros_like(p) for p in params]
        for chain, u, mu, positions, coeff in prepared:
            wbt = chain.apply(model.bundle)
            rec, mp, g_bundle, g_nets = _forward_backward(model, wbt, u, mu, coeff)
            rec_all[positions] = rec
            map_all[positions] = mp
            for g, piece in zip(grads, _pull_back(chain, g_bundle)):
                g += piece
            for g, piece in zip(grads[4:], _flatten_net_grads(model, g_nets)):
                g += piece
        w_rec = float(np.dot(weights, rec_all))
        w_map = float(np.dot(weights, map_all))
        history[epoch] = (epoch, w_rec + model.omega * w_map, w_rec, w_map)
        if not np.isfinite(history[epoch, 1]):
            raise TrainingDiverged(epoch, history[: epoch + 1])
        optimizer.step(params, grads, decay)
    return history


def _train_adaptive(model, dataset, cfg, train_idx):
    samples = [dataset.samples[i] for i in train_idx]
    sizes = np.array([len(s.u) for s in samples], dtype=np.float64)
    weights = sizes / sizes.sum()
    t = len(samples)

    optimizer = _make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    history = np.zeros((cfg.epochs, 4))
    rec_all = np.zeros(t)
    map_all = np.zeros(t)
    for epoch in range(cfg.epochs):
        for pos in rng.permutation(t):
            s = samples[pos]
            mesh = dataset.meshes[s.mesh_id]
            master = master_mesh_union(model.bundle.mesh, mesh)
            if master is not model.bundle.mesh:
                # Union keeps resident nodes first, so this is expansive.
                model.bundle = expand(model.bundle, master, check=False)
            chain = TransferChain(
                [agglomerate_transfer(model.bundle.mesh, mesh)], mesh
            )
            wbt = chain.apply(model.bundle)
            u = _scale_fields(model, s.u[None, :])
            mu = np.asarray(s.mu, dtype=np.float64)[None, :]
            rec, mp, g_bundle, g_nets = _forward_backward(
                model, wbt, u, mu, np.ones(1)
            )
            rec_all[pos] = rec[0]
            map_all[pos] = mp[0]
            params, decay = _parameters(model)
            grads = list(_pull_back(chain, g_bundle)) + _flatten_net_grads(
                model, g_nets
            )
            optimizer.step(params, grads, decay)
        w_rec = float(np.dot(weights, rec_all))
        w_map = float(np.dot(weights, map_all))
        history[epoch] = (epoch, w_rec + model.omega * w_map, w_rec, w_map)
        if not np.isfinite(history[epoch, 1]):
            raise TrainingDiverged(epoch, history[: epoch + 1])
    return history


def train(model: RomModel, dataset: SnapshotSet, cfg: TrainConfig) -> TrainResult:
    """Split the dataset, train in the configured mode, return the history.

    History rows hold the mesh-size-weighted mean reconstruction and
    mapper losses over the training samples and their omega-composite.
    With ``cfg.normalize`` the reconstruction entries are in scaled units.
    """
    train_idx, test_idx = split_dataset(dataset.params, cfg.train_fraction, cfg.seed)
    model.omega = float(cfg.omega)
    if cfg.normalize:
        lo = min(float(dataset.samples[i].u.min()) for i in train_idx)
        hi = max(float(dataset.samples[i].u.max()) for i in train_idx)
        if not hi > lo:
            raise ValueError("constant training fields cannot be min-max scaled")
        # Scaling is a property of the model from here on: encode/decode
        # work in raw units while the nets see fields mapped to [0, 1].
        model.field_range = (lo, hi)
    if cfg.mode == "precomputed_adaptive":
        master = model.bundle.mesh
        for s in (dataset.samples[i] for i in train_idx):
            master = master_mesh_union(master, dataset.meshes[s.mesh_id])
        if master is not model.bundle.mesh:
            model.bundle = expand(model.bundle, master, check=False)
    if cfg.mode == "adaptive":
        history = _train_adaptive(model, dataset, cfg, train_idx)
    else:
        history = _train_fixed(model, dataset, cfg, train_idx)
    return TrainResult(model, history, train_idx, test_idx)


def predict(
    model: RomModel, mu, target_mesh: Mesh, bundle: WeightBundle | None = None
) -> np.ndarray:
    """Decode the mapped parameters on the target mesh (no encoder needed)."""
    wb = _bundle_for(model, target_mesh) if bundle is None else bundle
    return decode(model, map_params(model, mu), wb)


def mean_relative_error(model: RomModel, mus, us, eval_mesh: Mesh) -> float:
    """Mean over samples of the relative l2 prediction error in percent."""
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    us = np.atleast_2d(np.asarray(us, dtype=np.float64))
    wb = _bundle_for(model, eval_mesh)
    preds = predict(model, mus, eval_mesh, bundle=wb)
    return float(np.mean(_relative_errors(us, preds)))


def save_model(model: RomModel, directory, extra: dict | None = None) -> None:
    """Checkpoint: bundle blobs plus hidden/mapper blobs and one manifest."""
    nets = {
        "enc_hidden": model.enc_hidden,
        "dec_hidden": model.dec_hidden,
        "mapper": model.mapper,
    }
    info = {
        "omega": model.omega,
        "field_range": list(model.field_range) if model.field_range else None,
        "nets": {
            name: {"sizes": net.sizes, "final_activation": net.final_activation}
            for name, net in nets.items()
        },
    }
    if extra:
        info.update(extra)
    save_bundle(model.bundle, directory, extra=info)
    for name, net in nets.items():
        for k, (w, b) in enumerate(zip(net.weights, net.biases)):
            w.astype("<f8").tofile(os.path.join(directory, f"{name}_w{k}.bin"))
            b.astype("<f8").tofile(os.path.join(directory, f"{name}_b{k}.bin"))


def load_model(directory) -> tuple[RomModel, dict]:
    bundle, manifest = load_bundle(directory)
    nets = {}
    for name, meta in manifest["nets"].items():
        sizes = meta["sizes"]
        weights, biases = [], []
        for k in range(max(len(sizes) - 1, 0)):
            w = np.fromfile(
                os.path.join(directory, f"{name}_w{k}.bin"), dtype="<f8"
            ).reshape(sizes[k + 1], sizes[k])
            b = np.fromfile(os.path.join(directory, f"{name}_b{k}.bin"), dtype="<f8")
            weights.append(w)
            biases.append(b)
        nets[name] = DenseNet(weights, biases, meta["final_activation"])
    fr = manifest.get("field_range")
    model = RomModel(
        bundle,
        nets["enc_hidden"],
        nets["dec_hidden"],
        nets["mapper"],
        manifest["omega"],
        tuple(fr) if fr else None,
    )
    return model, manifest
