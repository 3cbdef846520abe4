"""Pipeline stages: ingest -> pretrain -> finetune -> score -> baseline -> report.

Stages communicate only through files in the run directory, so any
stage can be rerun or replaced by an external tool producing the same
artifacts. Each stage writes a ``<stage>.manifest.json`` recording the
content hashes of its inputs, the seeds in effect and the package
version; no artifact carries a timestamp, so reruns with identical
inputs are byte-identical.

Run directories are named by the config hash under the output base, and
a lock file serializes writers per directory.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import fit_iforest, fit_pca, iforest_score, pca_recon_error
from .config import RunConfig, echo_config
from .embeddings import DatasetSplit, load_embeddings, split_dataset
from .errors import LoopguardError, PrerequisiteError
from .evaluation import (
    PERCENTILE_CONVENTION,
    box_stats,
    histogram_density,
    latent_report,
    project_2d,
    score_histogram,
    threshold_report,
)
from .rng import RNG_ALGORITHM
from .serialize import (
    load_autoencoder,
    load_svdd,
    save_autoencoder,
    save_iforest,
    save_pca,
    save_svdd,
)
from .training import encode_eval, finetune_svdd, pretrain_autoencoder, svdd_score

STAGES = ("ingest", "pretrain", "finetune", "score", "baseline", "report")


def run_directory(cfg: RunConfig, out_base=None) -> Path:
    base = Path(out_base) if out_base is not None else Path(cfg.output_dir)
    return base / f"run-{cfg.config_hash()}"


class RunLock:
    """Exclusive per-run-directory lock; concurrent runs must use distinct directories."""

    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LoopguardError(
                f"run directory {self.path.parent} is locked by another run "
                f"(remove {self.path} if that run is dead)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(run_dir: Path, stage: str, inputs: list, outputs: list, seeds: dict) -> None:
    def rel(p) -> str:
        # artifacts inside the run directory are recorded relative to it
        p = Path(p)
        try:
            return str(p.relative_to(run_dir))
        except ValueError:
            return str(p)

    doc = {
        "stage": stage,
        "version": __version__,
        "rng_algorithm": RNG_ALGORITHM,
        "inputs": {rel(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seeds": seeds,
    }
    with open(run_dir / f"{stage}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _require(path: Path, hint: str) -> Path:
    if not Path(path).exists():
        raise PrerequisiteError(f"missing prerequisite {path} ({hint})")
    return Path(path)


def _load_dataset(cfg: RunConfig):
    if cfg.dataset is None:
        raise PrerequisiteError("config has no dataset path; nothing to ingest")
    return load_embeddings(_require(cfg.dataset, "dataset file"))


def _load_split(run_dir: Path) -> DatasetSplit:
    path = _require(run_dir / "split.json", "run `ingest` first")
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetSplit.from_dict(json.load(fh))


def _fmt(x) -> str:
    # repr of the Python float: shortest decimal that round-trips
    return repr(float(x))


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def stage_ingest(cfg: RunConfig, run_dir: Path) -> None:
    matrix, manifest = _load_dataset(cfg)
    split = split_dataset(matrix.n, cfg.split.ratio, cfg.split.seed)
    with open(run_dir / "split.json", "w", encoding="utf-8") as fh:
        json.dump(split.to_dict(), fh, indent=2, sort_keys=True)
    subset = _subset_labels(matrix.n, split)
    _write_csv(
        run_dir / "dataset_index.csv",
        ["row", "id", "subset"],
        ([str(i), manifest.entries[i].id, subset[i]] for i in range(matrix.n)),
    )
    _write_manifest(run_dir, "ingest", [cfg.dataset], ["split.json", "dataset_index.csv"],
                    {"split": cfg.split.seed})


def stage_pretrain(cfg: RunConfig, run_dir: Path) -> None:
    matrix, _ = _load_dataset(cfg)
    split = _load_split(run_dir)
    model, history = pretrain_autoencoder(matrix, split, cfg.model, cfg.hyperparameters)
    save_autoencoder(model, run_dir / "ae")
    _write_history(run_dir / "pretrain_history.csv", history)
    _write_manifest(
        run_dir,
        "pretrain",
        [cfg.dataset, run_dir / "split.json"],
        ["ae.model.json", "ae.model.bin", "pretrain_history.csv"],
        {"training": cfg.hyperparameters.seed},
    )


def stage_finetune(cfg: RunConfig, run_dir: Path) -> None:
    matrix, _ = _load_dataset(cfg)
    split = _load_split(run_dir)
    _require(run_dir / "ae.model.json", "run `pretrain` first")
    pretrained = load_autoencoder(run_dir / "ae")
    svdd, history = finetune_svdd(
        pretrained,
        matrix,
        split,
        cfg.hyperparameters,
        eps_c=cfg.svdd.eps_c,
        no_bias=cfg.svdd.no_bias,
        threshold_q=cfg.evaluation.q,
    )
    save_svdd(svdd, cfg.hyperparameters, run_dir / "svdd")
    _write_history(run_dir / "finetune_history.csv", history)
    _write_manifest(
        run_dir,
        "finetune",
        [cfg.dataset, run_dir / "ae.model.json", run_dir / "ae.model.bin"],
        ["svdd.model.json", "svdd.model.bin", "svdd.svdd.json", "finetune_history.csv"],
        {"training": cfg.hyperparameters.seed},
    )


def stage_score(cfg: RunConfig, run_dir: Path) -> None:
    matrix, manifest = _load_dataset(cfg)
    split = _load_split(run_dir)
    _require(run_dir / "svdd.model.json", "run `finetune` first")
    model, _ = load_svdd(run_dir / "svdd")
    scores = svdd_score(model, matrix.data)
    subset = _subset_labels(matrix.n, split)
    _write_csv(
        run_dir / "scores.csv",
        ["row", "id", "subset", "score"],
        ([str(i), manifest.entries[i].id, subset[i], _fmt(scores[i])] for i in range(matrix.n)),
    )
    _write_manifest(
        run_dir,
        "score",
        [cfg.dataset, run_dir / "svdd.model.json", run_dir / "svdd.model.bin"],
        ["scores.csv"],
        {},
    )


def stage_baseline(cfg: RunConfig, run_dir: Path) -> None:
    matrix, manifest = _load_dataset(cfg)
    split = _load_split(run_dir)
    train = matrix.data[split.train_indices]
    forest = fit_iforest(train, cfg.baselines.iforest)
    if_scores = iforest_score(forest, matrix.data)
    pca = fit_pca(
        train,
        n_components=cfg.baselines.pca.n_components,
        theta_var=cfg.baselines.pca.theta_var,
        standardize=cfg.baselines.pca.standardize,
    )
    pca_errors = pca_recon_error(pca, matrix.data)
    save_iforest(forest, run_dir / "iforest.json")
    save_pca(pca, run_dir / "pca")
    subset = _subset_labels(matrix.n, split)
    _write_csv(
        run_dir / "baseline_scores.csv",
        ["row", "id", "subset", "iforest_score", "pca_recon_error"],
        (
            [str(i), manifest.entries[i].id, subset[i], _fmt(if_scores[i]), _fmt(pca_errors[i])]
            for i in range(matrix.n)
        ),
    )
    _write_manifest(
        run_dir,
        "baseline",
        [cfg.dataset, run_dir / "split.json"],
        ["iforest.json", "pca.pca.json", "pca.pca.bin", "baseline_scores.csv"],
        {"iforest": cfg.baselines.iforest.seed},
    )


def _subset_labels(n: int, split: DatasetSplit) -> list:
    labels = ["val"] * n
    for i in split.train_indices:
        labels[int(i)] = "train"
    return labels


def _read_scores_csv(path: Path, score_cols: list) -> dict:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: header.index(name) for name in ["row", "id", "subset", *score_cols]}
        rows = [r for r in reader if r]
    out = {
        "row": np.array([int(r[cols["row"]]) for r in rows]),
        "id": [r[cols["id"]] for r in rows],
        "subset": np.array([r[cols["subset"]] for r in rows]),
    }
    for name in score_cols:
        out[name] = np.array([float(r[cols[name]]) for r in rows])
    return out


def stage_report(cfg: RunConfig, run_dir: Path) -> None:
    matrix, _ = _load_dataset(cfg)
    scores_path = _require(run_dir / "scores.csv", "run `score` first")
    _require(run_dir / "svdd.model.json", "run `finetune` first")
    model, _ = load_svdd(run_dir / "svdd")
    table = _read_scores_csv(scores_path, ["score"])
    train_mask = table["subset"] == "train"
    q, n_bins = cfg.evaluation.q, cfg.evaluation.n_bins

    score_sets = {"svdd": (table["score"][train_mask], table["score"][~train_mask])}
    baseline_path = run_dir / "baseline_scores.csv"
    if baseline_path.exists():
        btable = _read_scores_csv(baseline_path, ["iforest_score", "pca_recon_error"])
        bmask = btable["subset"] == "train"
        score_sets["iforest"] = (btable["iforest_score"][bmask], btable["iforest_score"][~bmask])
        score_sets["pca"] = (btable["pca_recon_error"][bmask], btable["pca_recon_error"][~bmask])

    thresholds = {
        name: vars(threshold_report(tr, va, q)) for name, (tr, va) in score_sets.items()
    }
    with open(run_dir / "thresholds.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"percentile_convention": PERCENTILE_CONVENTION, "models": thresholds},
            fh,
            indent=2,
            sort_keys=True,
        )

    # 2-D projection of the model latents, labeled by the svdd threshold
    latents = encode_eval(model.encoder, matrix.data.astype(np.float64))
    proj = project_2d(latents)
    svdd_thr = thresholds["svdd"]["threshold"]
    _write_csv(
        run_dir / "projection.csv",
        ["row", "id", "subset", "pc1", "pc2", "label"],
        (
            [
                str(int(table["row"][i])),
                table["id"][i],
                table["subset"][i],
                _fmt(proj.coords[int(table["row"][i]), 0]),
                _fmt(proj.coords[int(table["row"][i]), 1]),
                "anomaly" if table["score"][i] > svdd_thr else "normal",
            ]
            for i in range(len(table["id"]))
        ),
    )
    with open(run_dir / "projection.json", "w", encoding="utf-8") as fh:
        json.dump({"evr": [proj.evr[0], proj.evr[1]], "n": int(latents.shape[0])}, fh, indent=2)

    hist_rows = []
    for name, (tr, va) in score_sets.items():
        hist = score_histogram(tr, va, n_bins)
        for b in range(len(hist.train_counts)):
            hist_rows.append(
                [
                    name,
                    str(b),
                    _fmt(hist.bin_edges[b]),
                    _fmt(hist.bin_edges[b + 1]),
                    str(int(hist.train_counts[b])),
                    str(int(hist.val_counts[b])),
                ]
            )
    _write_csv(
        run_dir / "histograms.csv",
        ["model", "bin", "bin_left", "bin_right", "train_count", "val_count"],
        hist_rows,
    )

    report = latent_report(latents, n_bins)
    lat_rows = []
    for j, hist in enumerate(report.per_dimension_histograms):
        dens = histogram_density(hist)
        for b in range(len(hist.train_counts)):
            lat_rows.append(
                [
                    str(j),
                    str(b),
                    _fmt(hist.bin_edges[b]),
                    _fmt(hist.bin_edges[b + 1]),
                    str(int(hist.train_counts[b])),
                    _fmt(dens[b]),
                ]
            )
    _write_csv(
        run_dir / "latent_report.csv",
        ["dim", "bin", "bin_left", "bin_right", "count", "density"],
        lat_rows,
    )
    _write_csv(
        run_dir / "latent_heatmap.csv",
        ["row", "id"] + [f"z{j}" for j in range(report.heatmap.shape[1])],
        (
            [str(int(table["row"][i])), table["id"][i]]
            + [_fmt(v) for v in report.heatmap[int(table["row"][i])]]
            for i in range(len(table["id"]))
        ),
    )

    boxes = {
        name: {"train": box_stats(tr).to_dict(), "val": box_stats(va).to_dict()}
        for name, (tr, va) in score_sets.items()
    }
    with open(run_dir / "box_stats.json", "w", encoding="utf-8") as fh:
        json.dump(boxes, fh, indent=2, sort_keys=True)

    inputs = [cfg.dataset, scores_path, run_dir / "svdd.model.json"]
    if baseline_path.exists():
        inputs.append(baseline_path)
    _write_manifest(
        run_dir,
        "report",
        inputs,
        [
            "thresholds.json",
            "projection.csv",
            "projection.json",
            "histograms.csv",
            "latent_report.csv",
            "latent_heatmap.csv",
            "box_stats.json",
        ],
        {},
    )


def _write_history(path: Path, history) -> None:
    _write_csv(
        path,
        ["epoch", "train_loss", "val_loss", "lr", "is_best"],
        (
            [str(e), _fmt(history.train_loss[e]), _fmt(history.val_loss[e]), _fmt(history.lr[e]),
             "1" if e == history.best_epoch else "0"]
            for e in range(len(history.train_loss))
        ),
    )


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "pretrain": stage_pretrain,
    "finetune": stage_finetune,
    "score": stage_score,
    "baseline": stage_baseline,
    "report": stage_report,
}


def run(command: str, cfg: RunConfig, out_base=None) -> Path:
    """Execute one stage (or `all`) inside the locked run directory; returns it."""
    if command != "all" and command not in _STAGE_FUNCS:
        raise LoopguardError(f"unknown command {command!r}")
    run_dir = run_directory(cfg, out_base)
    run_dir.mkdir(parents=True, exist_ok=True)
    with RunLock(run_dir):
        echo_config(cfg, run_dir / "config.json")
        stages = STAGES if command == "all" else (command,)
        for stage in stages:
            _STAGE_FUNCS[stage](cfg, run_dir)
    return run_dir
