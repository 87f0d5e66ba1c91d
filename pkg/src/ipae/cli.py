"""Command-line entry point.

Four subcommands cover the experiment lifecycle::

    ipae gen-data --out DIR --seed N
    ipae train    --config FILE --data PATH --out DIR
    ipae eval     --checkpoint FILE --data PATH --out DIR [--probe]
    ipae sweep    --config FILE --data PATH --out DIR --betas L --njs L --repeats N

Every run directory receives a manifest (config snapshot, data hashes,
output paths) sufficient to reproduce the run exactly; all randomness
flows from the config seed. Exit codes: 0 success, 1 usage/validation,
2 numeric divergence, 3 I/O or file-format problems.

``--data`` accepts a toy CSV (with its ``.meta.json`` sidecar next to
it) or a directory of IDX files named ``train-images-idx3-ubyte`` /
``train-labels-idx1-ubyte`` (plus optional ``t10k-*`` test files used by
``--probe``). When ``--data`` is omitted, $IPAE_DATA_DIR is consulted.
The image experiments fix the digit subset {1, 3, 4} truncated to 18000
rows.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .codec import load_checkpoint, save_checkpoint
from .data import gen_gmm, load_gmm_csv, load_mnist_subset, save_gmm_csv
from .errors import (ConfigError, ContractError, FormatError, NumericError,
                     ShapeError, TrainingDiverged)
from .ioutil import atomic_write_text
from .train_eval import (TrainConfig, evaluate, summarize_sweep, train,
                         write_embeddings_csv, write_metrics_csv,
                         write_recon_csv, write_summary_csv, write_sweep_csv)

log = logging.getLogger("ipae")

MNIST_DIGITS = (1, 3, 4)
MNIST_MAX_N = 18000
MNIST_TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
MNIST_TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses exit code 2 for usage errors; reserve 2 for divergence
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except (ConfigError, ContractError, ShapeError) as e:
        log.error("%s", e)
        return 1
    except TrainingDiverged as e:
        log.error("training diverged: %s", e)
        return 2
    except NumericError as e:
        log.error("numeric failure: %s", e)
        return 2
    except (FormatError, OSError) as e:
        log.error("%s", e)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipae",
                                description="Train and evaluate mutual-information regularized autoencoders.")
    p.add_argument("--version", action="version", version=f"ipae {__version__}")
    sub = p.add_subparsers(required=True)

    g = sub.add_parser("gen-data", help="generate the 25-component toy mixture")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--data", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--log-every", type=int, default=None, help="override the config's log cadence")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--probe", action="store_true", help="also fit the linear probe")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="factorial beta x nj sweep with repeats")
    s.add_argument("--config", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--betas", required=True, help="comma-separated list")
    s.add_argument("--njs", default="1", help="comma-separated list")
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--probe", action="store_true")
    s.add_argument("--log-every", type=int, default=None, help="override the config's log cadence")
    s.set_defaults(func=cmd_sweep)
    return p


# --- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = gen_gmm(args.seed)
    save_gmm_csv(ds, out / "toy.csv", out / "toy.meta.json", args.seed)
    log.info("wrote %s (%d rows)", out / "toy.csv", len(ds))
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.log_every is not None:
        config = replace(config, log_every=args.log_every).validate()
    data_path = _resolve_data(args.data, config.codec)
    dataset, _ = _load_dataset(data_path, config.codec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, config, data_path,
                    outputs=["checkpoint.json", "metrics.csv", "manifest.json"])
    try:
        codec, rows = train(config, dataset)
    except TrainingDiverged as e:
        if e.last_good is not None:
            save_checkpoint(out / "checkpoint.json", e.last_good, config.seed)
            write_metrics_csv(out / "metrics.csv", e.rows)
            log.error("diverged at step %d; last good checkpoint retained", e.step)
        raise
    save_checkpoint(out / "checkpoint.json", codec, config.seed)
    write_metrics_csv(out / "metrics.csv", rows)
    log.info("trained %d steps; final total=%.6g distortion=%.6g",
             config.total_batches, rows[-1].total, rows[-1].distortion)
    return 0


def cmd_eval(args) -> int:
    codec, seed = load_checkpoint(args.checkpoint)
    preset = _preset_for_codec(codec)
    data_path = _resolve_data(args.data, preset)
    dataset, probe_test = _load_dataset(data_path, preset)
    if dataset.x.shape[1] != codec.spec.input_dim:
        raise ContractError(
            f"checkpoint expects {codec.spec.input_dim}-d inputs, data has {dataset.x.shape[1]}")
    config = TrainConfig.toy(seed=seed) if preset == "toy" else TrainConfig.mnist(seed=seed)
    res = evaluate(codec, dataset, config, probe_test=probe_test, want_probe=args.probe,
                   out_dir=args.out)
    summary = {k: res.report[k] for k in ("E", "probe_err") if k in res.report}
    log.info("report written: %s", json.dumps(summary))
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    if args.log_every is not None:
        config = replace(config, log_every=args.log_every).validate()
    betas = _parse_list(args.betas, float, "betas")
    njs = _parse_list(args.njs, int, "njs")
    if args.repeats < 1:
        raise ConfigError("repeats: must be >= 1")
    data_path = _resolve_data(args.data, config.codec)
    _load_dataset(data_path, config.codec)  # fail fast before launching runs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, config, data_path, outputs=["sweep.csv", "summary.csv"],
                    extra={"betas": betas, "njs": njs, "repeats": args.repeats})

    tasks = []
    for beta in betas:
        for nj in njs:
            for r in range(args.repeats):
                cfg = replace(config, reg=replace(config.reg, beta=beta, nj=nj),
                              seed=config.seed + r)
                cfg.validate()
                cell = out / f"cell_{cfg.reg.kind}_b{beta!r}_nj{nj}" / f"run_{r}"
                tasks.append({"config": cfg.to_dict(), "data": str(data_path),
                              "out": str(cell), "probe": args.probe,
                              "beta": beta, "nj": nj, "repeat": r})
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    write_sweep_csv(out / "sweep.csv", rows)
    write_summary_csv(out / "summary.csv", summarize_sweep(rows))
    completed = sum(1 for r in rows if r["error"] is None)
    log.info("sweep finished: %d/%d runs completed", completed, len(rows))
    return 0 if completed >= 1 else 2


def _sweep_task(task: dict) -> dict:
    cfg = TrainConfig.from_dict(task["config"])
    row = {"kind": cfg.reg.kind, "beta": task["beta"], "nj": task["nj"],
           "repeat": task["repeat"], "seed": cfg.seed, "E": None, "probe_err": None,
           "final_distortion": None, "final_mi_bound": None, "error": None}
    try:
        dataset, probe_test = _load_dataset(Path(task["data"]), cfg.codec)
        cell = Path(task["out"])
        cell.mkdir(parents=True, exist_ok=True)
        atomic_write_text(cell / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        codec, metrics = train(cfg, dataset)
        save_checkpoint(cell / "checkpoint.json", codec, cfg.seed)
        write_metrics_csv(cell / "metrics.csv", metrics)
        res = evaluate(codec, dataset, cfg, probe_test=probe_test, want_probe=task["probe"])
        atomic_write_text(cell / "report.json", json.dumps(res.report, indent=2, sort_keys=True) + "\n")
        write_embeddings_csv(cell / "embeddings.csv", dataset.labels, res.pcs, res.mu)
        if dataset.centers is not None and dataset.x.shape[1] == 2:
            write_recon_csv(cell / "recon.csv", dataset, res.recon)
        row["E"] = res.report.get("E")
        row["probe_err"] = res.report.get("probe_err")
        row["final_distortion"] = res.report["final"]["distortion"]
        row["final_mi_bound"] = res.report["final"]["mi_bound"]
    except (NumericError, ContractError, ConfigError) as e:
        row["error"] = str(e)
        log.warning("run beta=%s nj=%s repeat=%s failed: %s",
                    task["beta"], task["nj"], task["repeat"], e)
    return row


# --- helpers ------------------------------------------------------------------

def _load_config(path) -> TrainConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: invalid JSON ({e})") from e
    return TrainConfig.from_dict(doc)


def _parse_list(text: str, cast, name: str):
    try:
        values = [cast(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from e
    if not values:
        raise ConfigError(f"{name}: empty list")
    return values


def _resolve_data(arg, preset: str) -> Path:
    if arg is not None:
        return Path(arg)
    root = os.environ.get("IPAE_DATA_DIR")
    if not root:
        raise ConfigError("--data not given and IPAE_DATA_DIR is not set")
    return Path(root) / "toy.csv" if preset == "toy" else Path(root)


def _load_dataset(path: Path, preset: str):
    """Returns (dataset, probe_test or None)."""
    if path.is_dir():
        img, lab = (path / MNIST_TRAIN_FILES[0], path / MNIST_TRAIN_FILES[1])
        if not img.exists():
            raise FormatError(f"{path}: no {MNIST_TRAIN_FILES[0]} in data directory")
        ds = load_mnist_subset(img, lab, MNIST_DIGITS, MNIST_MAX_N)
        t_img, t_lab = (path / MNIST_TEST_FILES[0], path / MNIST_TEST_FILES[1])
        probe_test = None
        if t_img.exists() and t_lab.exists():
            probe_test = load_mnist_subset(t_img, t_lab, MNIST_DIGITS, None)
        return ds, probe_test
    meta = path.with_suffix("").with_suffix(".meta.json") if path.suffix == ".csv" else None
    if meta is not None and not meta.exists():
        meta = path.parent / (path.stem + ".meta.json")
        if not meta.exists():
            meta = None
    ds = load_gmm_csv(path, meta)
    return ds, None


def _preset_for_codec(codec) -> str:
    return "toy" if codec.spec.input_dim == 2 else "mnist"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, config: TrainConfig, data_path: Path, outputs, extra=None) -> None:
    files = {}
    if data_path.is_dir():
        for name in sorted(os.listdir(data_path)):
            p = data_path / name
            if p.is_file():
                files[str(p)] = _sha256(p)
    elif data_path.exists():
        files[str(data_path)] = _sha256(data_path)
        meta = data_path.parent / (data_path.stem + ".meta.json")
        if meta.exists():
            files[str(meta)] = _sha256(meta)
    doc = {
        "build": f"ipae {__version__}",
        "config": config.to_dict(),
        "data_files": files,
        "outputs": sorted(str(out / o) for o in outputs),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        doc["sweep"] = extra
    atomic_write_text(out / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
