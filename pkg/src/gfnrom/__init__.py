"""Mesh-transferable feedforward layers and the reduced-order model built on them.

The building blocks, bottom up:

- ``mesh``: point meshes, deterministic nearest-neighbour search, and the
  relation maps that classify a mesh-to-mesh transform.
- ``gfn``: weight bundles owned by mesh nodes and the transfer operators
  (general, expand, agglomerate) that move them between meshes.
- ``neural``: plain dense nets with hand-written gradients and optimizers.
- ``rom``: the autoencoder + parameter mapper model, its losses, and the
  fixed/adaptive/precomputed-adaptive training modes.
- ``datagen``: closed-form snapshot families and mesh hierarchies.
- ``baseline``: POD projection baseline.
- ``bounds``: empirical verification of the cross-mesh error bounds.
- ``cli``: the ``gfnrom`` command.
"""

from .baseline import PodBasis, pod_basis, pod_projection_error
from .bounds import (
    BoundReport,
    bound_report,
    compute_delta,
    verify_autoencoder_bound,
    verify_mapper_bound,
    verify_rom_bound,
)
from .datagen import (
    FAMILIES,
    SnapshotSet,
    analytic_field,
    generate_dataset,
    jittered_grid_mesh,
    load_dataset,
    make_hierarchy,
    save_dataset,
    subsample_mesh,
)
from .gfn import (
    WeightBundle,
    agglomerate,
    expand,
    gfn_transform,
    gfn_transform_decomposed,
    load_bundle,
    save_bundle,
)
from .mesh import (
    Mesh,
    NeighborMap,
    build_neighbor_map,
    classify_transform,
    load_mesh,
    master_mesh_union,
    nearest_neighbor,
    save_mesh,
)
from .rom import (
    RomModel,
    TrainConfig,
    TrainResult,
    build_model,
    load_model,
    mean_relative_error,
    predict,
    save_model,
    total_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Mesh",
    "NeighborMap",
    "build_neighbor_map",
    "classify_transform",
    "master_mesh_union",
    "nearest_neighbor",
    "load_mesh",
    "save_mesh",
    "WeightBundle",
    "gfn_transform",
    "gfn_transform_decomposed",
    "expand",
    "agglomerate",
    "save_bundle",
    "load_bundle",
    "FAMILIES",
    "SnapshotSet",
    "analytic_field",
    "generate_dataset",
    "jittered_grid_mesh",
    "make_hierarchy",
    "subsample_mesh",
    "save_dataset",
    "load_dataset",
    "PodBasis",
    "pod_basis",
    "pod_projection_error",
    "RomModel",
    "TrainConfig",
    "TrainResult",
    "build_model",
    "train",
    "predict",
    "total_loss",
    "mean_relative_error",
    "save_model",
    "load_model",
    "BoundReport",
    "bound_report",
    "compute_delta",
    "verify_rom_bound",
    "verify_mapper_bound",
    "verify_autoencoder_bound",
    "__version__",
]
