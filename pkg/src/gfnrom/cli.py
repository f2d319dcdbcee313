"""Command-line pipeline: gen, train, eval, bounds, report.

Settings resolve in order: built-in defaults, then the selected profile,
then the --config JSON file, then explicit flags.  The seed falls back
to the GFNROM_SEED environment variable when neither a flag nor the
config provides one.  Every command fails with a single-line diagnostic
on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np

from . import baseline, bounds, datagen, rom
from .report import error_map_figure, format_table, loss_curve_figure, save_figure

PROFILES = {"desk": {"epochs": 500}, "paper": {"epochs": 5000}}

DEFAULTS = {
    "profile": "desk",
    "seed": None,
    "out": "out",
    # gen
    "family": "smooth",
    "grid": [10, 10],
    "base_mesh": [30, 30],
    "jitter": 0.4,
    "fractions": [1.0, 0.31, 0.105, 0.04],
    "assignment": "large",
    # train
    "dataset": None,
    "mode": "fixed",
    "optimizer": "adam",
    "epochs": 500,
    "lr": 1e-3,
    "l2": 1e-5,
    "omega": 10.0,
    "train_fraction": 0.30,
    "normalize": False,
    "mesh": None,
    "latent": None,
    "hidden_width": 200,
    "mapper_widths": [50, 50, 50, 50],
    "tag": None,
    # eval / bounds
    "model": None,
    "eval_mesh": "large",
    "with_pod": False,
    # report
    "run": None,
}


class CliError(Exception):
    pass


def parse_dims(value) -> list[int]:
    """Accept '10x20', '10,20', or a list of ints."""
    if isinstance(value, str):
        parts = value.replace("x", ",").split(",")
        return [int(p) for p in parts if p.strip()]
    return [int(p) for p in value]


def parse_assignment(value):
    if isinstance(value, str) and "," in value:
        return [p.strip() for p in value.split(",") if p.strip()]
    return value


def resolve(args: argparse.Namespace) -> dict:
    flags = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config") and v is not None
    }
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = sorted(set(file_cfg) - set(DEFAULTS))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
    profile = flags.get("profile") or file_cfg.get("profile") or DEFAULTS["profile"]
    if profile not in PROFILES:
        raise CliError(f"unknown profile {profile!r}")
    cfg = dict(DEFAULTS)
    cfg.update(PROFILES[profile])
    cfg.update(file_cfg)
    cfg.update(flags)
    cfg["profile"] = profile
    if cfg["seed"] is None:
        cfg["seed"] = int(os.environ.get("GFNROM_SEED", "0"))
    cfg["seed"] = int(cfg["seed"])
    if cfg["dataset"] is None:
        cfg["dataset"] = os.path.join(cfg["out"], "dataset")
    if cfg["run"] is None:
        cfg["run"] = cfg["out"]
    return cfg


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen(cfg: dict) -> None:
    family = datagen.get_family(cfg["family"])
    nx, ny = parse_dims(cfg["base_mesh"])
    base = datagen.jittered_grid_mesh(nx, ny, seed=cfg["seed"], jitter=cfg["jitter"])
    hierarchy = datagen.make_hierarchy(base, tuple(cfg["fractions"]))
    dataset = datagen.generate_dataset(
        family,
        parse_dims(cfg["grid"]),
        hierarchy,
        parse_assignment(cfg["assignment"]),
        seed=cfg["seed"],
    )
    datagen.save_dataset(dataset, cfg["dataset"])
    sizes = ", ".join(f"{k}={len(m)}" for k, m in hierarchy.items())
    print(f"wrote {len(dataset)} {family.name} samples to {cfg['dataset']} ({sizes})")


def _analytic_batch(family, mus, mesh) -> np.ndarray:
    return np.array([datagen.analytic_field(family, mu, mesh) for mu in mus])


def cmd_train(cfg: dict) -> None:
    dataset = datagen.load_dataset(cfg["dataset"])
    family = datagen.get_family(dataset.family)
    tcfg = rom.TrainConfig(
        epochs=int(cfg["epochs"]),
        lr=float(cfg["lr"]),
        l2=float(cfg["l2"]),
        omega=float(cfg["omega"]),
        mode=cfg["mode"],
        optimizer=cfg["optimizer"],
        seed=cfg["seed"],
        train_fraction=float(cfg["train_fraction"]),
        normalize=bool(cfg["normalize"]),
    )
    train_idx, test_idx = rom.split_dataset(
        dataset.params, tcfg.train_fraction, tcfg.seed
    )
    mesh_id = cfg["mesh"] or dataset.samples[train_idx[0]].mesh_id
    if mesh_id not in dataset.meshes:
        raise CliError(f"mesh {mesh_id!r} not in dataset")
    hidden = int(cfg["hidden_width"]) or None
    model = rom.build_model(
        dataset.meshes[mesh_id],
        family.n_mu,
        latent_dim=cfg["latent"],
        hidden_width=hidden,
        mapper_widths=tuple(cfg["mapper_widths"]),
        omega=tcfg.omega,
        seed=tcfg.seed,
    )
    result = rom.train(model, dataset, tcfg)

    tag = cfg["tag"] or cfg["mode"]
    run_dir = os.path.join(cfg["out"], f"train_{tag}")
    os.makedirs(run_dir, exist_ok=True)
    rom.save_model(
        result.model,
        os.path.join(run_dir, "checkpoint"),
        extra={"train_config": tcfg.to_dict(), "train_mesh": mesh_id, "tag": tag},
    )
    np.savetxt(
        os.path.join(run_dir, "loss_history.csv"),
        result.history,
        fmt="%.17g",
        delimiter=",",
        header="epoch,total,recon,map",
        comments="",
    )
    _write_json(
        os.path.join(run_dir, "split.json"),
        {
            "train": result.train_indices.tolist(),
            "test": result.test_indices.tolist(),
        },
    )
    mus = dataset.params[result.test_indices]
    val_mesh = dataset.meshes[mesh_id]
    truth = _analytic_batch(family, mus, val_mesh)
    err = rom.mean_relative_error(result.model, mus, truth, val_mesh)
    metrics = {
        "tag": tag,
        "mode": tcfg.mode,
        "train_mesh": mesh_id,
        "validation_mesh": mesh_id,
        "mean_relative_error": err,
        "final_loss": float(result.history[-1, 1]) if len(result.history) else None,
        "epochs": tcfg.epochs,
        "n_train": int(len(result.train_indices)),
        "n_test": int(len(result.test_indices)),
        "seed": tcfg.seed,
    }
    _write_json(os.path.join(run_dir, "metrics.json"), metrics)
    print(
        f"trained {tag} on {mesh_id} for {tcfg.epochs} epochs: "
        f"validation error {err:.4f}% -> {run_dir}"
    )


def _load_checkpoint(cfg: dict):
    model_dir = cfg["model"]
    if not model_dir:
        raise CliError("--model is required")
    model, manifest = rom.load_model(os.path.join(model_dir, "checkpoint"))
    with open(os.path.join(model_dir, "split.json")) as fh:
        split = json.load(fh)
    return model_dir, model, manifest, split


def cmd_eval(cfg: dict) -> None:
    model_dir, model, manifest, split = _load_checkpoint(cfg)
    dataset = datagen.load_dataset(cfg["dataset"])
    family = datagen.get_family(dataset.family)
    if cfg["eval_mesh"] not in dataset.meshes:
        raise CliError(f"mesh {cfg['eval_mesh']!r} not in dataset")
    mesh = dataset.meshes[cfg["eval_mesh"]]
    test_idx = np.asarray(split["test"], dtype=np.intp)
    mus = dataset.params[test_idx]
    truth = _analytic_batch(family, mus, mesh)
    preds = rom.predict(model, mus, mesh)
    norms = np.linalg.norm(truth, axis=1)
    gaps = np.linalg.norm(truth - preds, axis=1)
    per_sample = 100.0 * np.where(norms > 0, gaps / np.where(norms > 0, norms, 1.0), np.nan)
    mean_err = rom.mean_relative_error(model, mus, truth, mesh)

    out_dir = os.path.join(model_dir, f"eval_{cfg['eval_mesh']}")
    os.makedirs(out_dir, exist_ok=True)
    table = np.column_stack([mus, per_sample])
    header = ",".join([f"mu_{i + 1}" for i in range(mus.shape[1])] + ["error_percent"])
    np.savetxt(
        os.path.join(out_dir, "per_sample.csv"),
        table,
        fmt="%.17g",
        delimiter=",",
        header=header,
        comments="",
    )
    metrics = {
        "eval_mesh": cfg["eval_mesh"],
        "n_eval_nodes": len(mesh),
        "mean_relative_error": mean_err,
        "n_test": int(len(test_idx)),
        "train_mesh": manifest.get("train_mesh"),
        "tag": manifest.get("tag"),
    }
    line = f"eval on {cfg['eval_mesh']}: mean relative error {mean_err:.4f}%"
    if cfg["with_pod"]:
        train_idx = np.asarray(split["train"], dtype=np.intp)
        train_truth = _analytic_batch(family, dataset.params[train_idx], mesh)
        basis = baseline.pod_basis(train_truth.T, model.latent_dim)
        pod_err = baseline.pod_projection_error(basis, truth)
        metrics["pod_projection_error"] = pod_err
        metrics["pod_rank"] = basis.rank
        line += f", POD projection {pod_err:.4f}% at rank {basis.rank}"
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    print(line)


def cmd_bounds(cfg: dict) -> None:
    model_dir, model, manifest, split = _load_checkpoint(cfg)
    dataset = datagen.load_dataset(cfg["dataset"])
    family = datagen.get_family(dataset.family)
    if cfg["eval_mesh"] not in dataset.meshes:
        raise CliError(f"mesh {cfg['eval_mesh']!r} not in dataset")
    mesh = dataset.meshes[cfg["eval_mesh"]]
    test_idx = np.asarray(split["test"], dtype=np.intp)

    def field_fn(mu, m):
        return datagen.analytic_field(family, mu, m)

    report = bounds.bound_report(model, dataset.params[test_idx], mesh, field_fn)
    out_dir = os.path.join(model_dir, f"bounds_{cfg['eval_mesh']}")
    bounds.save_report(report, out_dir)
    status = ", ".join(
        f"{name}={'pass' if report.passed[name] else 'FAIL'}"
        for name in bounds.BOUND_NAMES
    )
    print(f"bounds on {cfg['eval_mesh']} over {report.n_samples} samples: {status}")
    if not report.all_passed():
        raise CliError(f"bound violation on {cfg['eval_mesh']}: {status}")


def _report_rows(train_dirs):
    rows = []
    histories = {}
    for d in train_dirs:
        tag = os.path.basename(d)[len("train_") :]
        with open(os.path.join(d, "metrics.json")) as fh:
            metrics = json.load(fh)
        hist_path = os.path.join(d, "loss_history.csv")
        if os.path.exists(hist_path):
            hist = np.loadtxt(hist_path, delimiter=",", skiprows=1, ndmin=2)
            if hist.size:
                histories[tag] = hist
        eval_dirs = sorted(glob.glob(os.path.join(d, "eval_*")))
        if eval_dirs:
            for e in eval_dirs:
                with open(os.path.join(e, "metrics.json")) as fh:
                    em = json.load(fh)
                rows.append(
                    {
                        "tag": tag,
                        "mode": metrics.get("mode", ""),
                        "train_mesh": metrics.get("train_mesh", ""),
                        "eval_mesh": em["eval_mesh"],
                        "error": em["mean_relative_error"],
                        "pod": em.get("pod_projection_error"),
                        "dir": d,
                        "eval_dir": e,
                    }
                )
        else:
            rows.append(
                {
                    "tag": tag,
                    "mode": metrics.get("mode", ""),
                    "train_mesh": metrics.get("train_mesh", ""),
                    "eval_mesh": metrics.get("validation_mesh", ""),
                    "error": metrics.get("mean_relative_error"),
                    "pod": None,
                    "dir": d,
                    "eval_dir": None,
                }
            )
    return rows, histories


def cmd_report(cfg: dict) -> None:
    run = cfg["run"]
    train_dirs = sorted(
        d for d in glob.glob(os.path.join(run, "train_*")) if os.path.isdir(d)
    )
    if not train_dirs:
        raise CliError(f"nothing to report under {run}")
    rows, histories = _report_rows(train_dirs)

    # Reference per eval mesh: the run trained on that same mesh.
    reference = {}
    for r in rows:
        if r["train_mesh"] == r["eval_mesh"] and r["error"] is not None:
            reference.setdefault(r["eval_mesh"], r["error"])
    table_rows = []
    for r in rows:
        ref = reference.get(r["eval_mesh"])
        if r["error"] is None or ref is None or r["train_mesh"] == r["eval_mesh"]:
            delta = ""
        else:
            delta = f"({r['error'] - ref:+.2f})"
        table_rows.append(
            [
                r["tag"],
                r["mode"],
                r["train_mesh"],
                r["eval_mesh"],
                "" if r["error"] is None else f"{r['error']:.2f}",
                delta,
                "" if r["pod"] is None else f"{r['pod']:.2f}",
            ]
        )
    headers = ["run", "mode", "train_mesh", "eval_mesh", "error_%", "vs_ref", "pod_%"]

    out_dir = os.path.join(run, "report")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(table_rows)
    text = format_table(headers, table_rows)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)

    figures = []
    if histories:
        path = os.path.join(out_dir, "loss_curves.svg")
        save_figure(loss_curve_figure(histories), path)
        figures.append(path)
    params_path = os.path.join(run, "dataset", "params.csv")
    params = (
        np.loadtxt(params_path, delimiter=",", ndmin=2)
        if os.path.exists(params_path)
        else None
    )
    for r in rows:
        if r["eval_dir"] is None or params is None:
            continue
        per_path = os.path.join(r["eval_dir"], "per_sample.csv")
        split_path = os.path.join(r["dir"], "split.json")
        if not (os.path.exists(per_path) and os.path.exists(split_path)):
            continue
        per = np.loadtxt(per_path, delimiter=",", skiprows=1, ndmin=2)
        with open(split_path) as fh:
            split = json.load(fh)
        fig = error_map_figure(
            per[:, :-1],
            per[:, -1],
            params[np.asarray(split["train"], dtype=np.intp)],
            title=f"{r['tag']} on {r['eval_mesh']}",
        )
        path = os.path.join(out_dir, f"error_map_{r['tag']}_{r['eval_mesh']}.svg")
        save_figure(fig, path)
        figures.append(path)
    print(f"report written to {out_dir} ({len(figures)} figures)")


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "bounds": cmd_bounds,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfnrom",
        description="Mesh-transferable reduced-order model pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON settings file")
        p.add_argument("--profile", choices=sorted(PROFILES))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output root directory")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--family", choices=sorted(datagen.FAMILIES))
    p.add_argument("--grid", help="parameter grid counts, e.g. 10x10")
    p.add_argument("--base-mesh", help="base mesh resolution, e.g. 30x30")
    p.add_argument("--jitter", type=float)
    p.add_argument("--assignment", help="mesh id, or two ids for a 50/50 split")
    p.add_argument("--dataset", help="dataset directory (default <out>/dataset)")

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--mode", choices=rom.MODES)
    p.add_argument("--optimizer", choices=rom.OPTIMIZERS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--train-fraction", type=float)
    p.add_argument(
        "--normalize",
        action="store_const",
        const=True,
        help="min-max scale fields to the training range",
    )
    p.add_argument("--mesh", help="mesh id the model starts on")
    p.add_argument("--latent", type=int)
    p.add_argument("--hidden-width", type=int, help="0 drops the hidden pair")
    p.add_argument("--tag", help="run name (default: the mode)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a mesh")
    common(p)
    p.add_argument("--model", help="training run directory")
    p.add_argument("--dataset")
    p.add_argument("--eval-mesh")
    p.add_argument("--with-pod", action="store_const", const=True)

    p = sub.add_parser("bounds", help="verify the error bounds on a mesh")
    common(p)
    p.add_argument("--model", help="training run directory")
    p.add_argument("--dataset")
    p.add_argument("--eval-mesh")

    p = sub.add_parser("report", help="summarize a run directory")
    common(p)
    p.add_argument("--run", help="run directory (default: --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
        return 0
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"gfnrom: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
