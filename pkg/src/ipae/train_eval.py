"""Training loop, evaluation metrics, and experiment sweeps.

A run is a pure function of (config, seed, dataset): weight init, batch
order, reparameterization noise, and partner draws all come from seeded
streams consumed in a fixed order (init first, then noise and partners
per step; batch order from a per-epoch stream keyed by (seed, epoch)).

Evaluation always uses the deterministic code z = mu(x) (noise off) for
reconstructions, projections, and probes; the sampled path stays
available through the codec API.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .codec import (SIGMA_CEIL, Codec, codec_preset, encode, decode, draw_noise,
                    init_codec)
from .data import LabeledDataset, batches, split
from .errors import ConfigError, ContractError, NumericError, TrainingDiverged
from .ioutil import atomic_write_text, fmt_float
from .math_nn import AdamState, adam_step
from .objectives import (LossBreakdown, RegularizerKind, partner_indices,
                         total_loss, total_loss_with_grads)
from .rng import RunRng

log = logging.getLogger(__name__)

DISTORTIONS = ("mse", "bernoulli")

EVAL_CHUNK = 2048


@dataclass(frozen=True)
class TrainConfig:
    """Complete description of one training run."""

    codec: str = "toy"
    reg: RegularizerKind = field(default_factory=RegularizerKind)
    distortion: str = "mse"
    lr: float = 0.001
    batch_size: int = 512
    total_batches: int = 5000
    seed: int = 0
    log_every: int = 100

    @classmethod
    def toy(cls, **over) -> "TrainConfig":
        return replace(cls(codec="toy", distortion="mse"), **over)

    @classmethod
    def mnist(cls, **over) -> "TrainConfig":
        return replace(cls(codec="mnist", distortion="bernoulli"), **over)

    def validate(self) -> "TrainConfig":
        if self.codec not in ("toy", "mnist"):
            raise ConfigError(f"codec: unknown preset {self.codec!r}")
        if self.distortion not in DISTORTIONS:
            raise ConfigError(f"distortion: must be one of {DISTORTIONS}, got {self.distortion!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr: must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.reg.kind == "information_potential" and self.batch_size < 2:
            raise ConfigError("batch_size: must be >= 2 for the information_potential regularizer")
        if self.reg.nj > self.batch_size:
            raise ConfigError(f"reg.nj: {self.reg.nj} exceeds batch_size {self.batch_size}")
        if self.total_batches < 1:
            raise ConfigError(f"total_batches: must be >= 1, got {self.total_batches}")
        if self.log_every < 1:
            raise ConfigError(f"log_every: must be >= 1, got {self.log_every}")
        return self

    def to_dict(self) -> dict:
        return {
            "codec": self.codec,
            "reg": {"kind": self.reg.kind, "beta": self.reg.beta, "k": self.reg.k, "nj": self.reg.nj},
            "distortion": self.distortion,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "total_batches": self.total_batches,
            "seed": self.seed,
            "log_every": self.log_every,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
        kwargs = dict(doc)
        if "reg" in kwargs:
            reg_doc = kwargs["reg"]
            if not isinstance(reg_doc, dict):
                raise ConfigError("reg: expected an object with kind/beta/k/nj")
            reg_known = {"kind", "beta", "k", "nj"}
            reg_unknown = set(reg_doc) - reg_known
            if reg_unknown:
                raise ConfigError(f"reg: unknown field(s) {sorted(reg_unknown)}")
            try:
                kwargs["reg"] = RegularizerKind(**reg_doc)
            except ContractError as e:
                raise ConfigError(f"reg.{e}") from e
        try:
            cfg = cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"config: {e}") from e
        return cfg.validate()


@dataclass
class MetricsRow:
    """One logged training record; wall_ms is diagnostic only."""

    step: int
    total: float
    distortion: float
    mi_bound: float
    h_z_bound: float
    h_z_given_x: float
    wall_ms: float = 0.0


def train(config: TrainConfig, dataset: LabeledDataset):
    """Run the full protocol and return ``(codec, metrics rows)``.

    Fully deterministic given the config; raises
    :class:`TrainingDiverged` (carrying the last logged parameter
    snapshot) if the loss goes non-finite.
    """
    config.validate()
    spec = codec_preset(config.codec)
    if dataset.x.shape[1] != spec.input_dim:
        raise ContractError(
            f"dataset has {dataset.x.shape[1]} features, codec {config.codec!r} expects {spec.input_dim}"
        )
    rng = RunRng(config.seed)
    codec = init_codec(spec, rng)
    params = codec.params()
    adam = AdamState.for_params(params, lr=config.lr)
    reg = config.reg
    is_ip = reg.kind == "information_potential"

    rows: list[MetricsRow] = []
    last_good = codec.copy()
    epoch = 0
    pending = list(batches(dataset, config.batch_size, config.seed, epoch))
    cursor = 0
    t0 = time.perf_counter()

    for step in range(1, config.total_batches + 1):
        if cursor >= len(pending):
            epoch += 1
            pending = list(batches(dataset, config.batch_size, config.seed, epoch))
            cursor = 0
        idx = pending[cursor]
        cursor += 1
        xb = dataset.x[idx]
        n = xb.shape[0]
        eps = draw_noise(n, reg.k, spec.latent_dim, rng)
        j_idx = None
        if is_ip:
            j_idx = partner_indices(n, min(reg.nj, max(n - 1, 1)), rng)
        try:
            breakdown, grads = total_loss_with_grads(
                xb, codec, reg, eps, j_idx, distortion=config.distortion)
        except NumericError as e:
            raise TrainingDiverged(step, last_good, rows) from e
        adam_step(params, grads, adam)

        if step % config.log_every == 0 or step == config.total_batches:
            ms = (time.perf_counter() - t0) * 1000.0
            rows.append(MetricsRow(step, breakdown.total, breakdown.distortion,
                                   breakdown.mi_bound, breakdown.h_z_bound,
                                   breakdown.h_z_given_x, ms))
            last_good = codec.copy()
            log.info("step %d/%d: total=%.6g distortion=%.6g mi_bound=%.6g",
                     step, config.total_batches, breakdown.total,
                     breakdown.distortion, breakdown.mi_bound)
            ceil_frac = float(np.mean(encode(codec, xb).sigma >= SIGMA_CEIL))
            if ceil_frac > 0.01:
                log.warning("step %d: sigma at ceiling for %.1f%% of the batch "
                            "(variance blow-up)", step, 100.0 * ceil_frac)
    return codec, rows


# --- metrics -------------------------------------------------------------------

def mean_distance_to_centers(recons: np.ndarray, labels: np.ndarray,
                             centers: np.ndarray | None) -> float:
    """Average Euclidean distance from each reconstruction to its true center."""
    if centers is None:
        raise ContractError("mean_distance_to_centers: dataset has no centers")
    recons = np.asarray(recons, dtype=np.float64)
    gaps = recons - centers[np.asarray(labels, dtype=np.intp)]
    return float(np.mean(np.sqrt(np.sum(gaps * gaps, axis=1))))


def pca_project(Z: np.ndarray, k: int, return_basis: bool = False):
    """Project rows onto the top-k principal axes.

    Columns are centered, the covariance eigendecomposed, and components
    ordered by decreasing eigenvalue. Sign convention: each component's
    largest-magnitude loading is positive. If the data has rank < k only
    the informative components are returned (with a warning).
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if n <= k:
        raise ContractError(f"pca_project: need more than k={k} rows, got {n}")
    mean = Z.mean(axis=0)
    Zc = Z - mean
    cov = (Zc.T @ Zc) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    tol = max(eigvals[0], 0.0) * 1e-12
    rank = int(np.sum(eigvals > tol))
    k_avail = min(k, rank) if rank > 0 else 0
    if k_avail < k:
        log.warning("pca_project: rank %d < requested %d components", rank, k)
        k_avail = max(k_avail, 1)
    basis = eigvecs[:, :k_avail].copy()
    for c in range(k_avail):
        lead = np.argmax(np.abs(basis[:, c]))
        if basis[lead, c] < 0:
            basis[:, c] = -basis[:, c]
    proj = Zc @ basis
    if return_basis:
        return proj, basis, mean
    return proj


def linear_probe(train_feats, train_labels, test_feats, test_labels, seed: int,
                 epochs: int = 50, lr: float = 0.01, l2: float = 1e-4) -> float:
    """Misclassification rate of a one-vs-rest hinge-loss linear classifier.

    Features are standardized by the train-set mean/std; training is
    plain seeded SGD with per-epoch 1/t learning-rate decay. The encoder
    is never touched, this only measures how separable its codes are.
    """
    Xtr = np.asarray(train_feats, dtype=np.float64)
    Xte = np.asarray(test_feats, dtype=np.float64)
    ytr = np.asarray(train_labels, dtype=np.intp)
    yte = np.asarray(test_labels, dtype=np.intp)
    classes = np.unique(ytr)
    if classes.size < 2:
        raise ContractError("linear_probe: need at least two classes")
    mean = Xtr.mean(axis=0)
    std = Xtr.std(axis=0)
    std[std < 1e-12] = 1.0
    Xtr = (Xtr - mean) / std
    Xte = (Xte - mean) / std

    n = Xtr.shape[0]
    C = classes.size
    col = {c: i for i, c in enumerate(classes)}
    Y = -np.ones((n, C))
    Y[np.arange(n), [col[c] for c in ytr]] = 1.0

    W = np.zeros((C, Xtr.shape[1]))
    b = np.zeros(C)
    rng = RunRng(seed)
    for epoch in range(epochs):
        eta = lr / (1.0 + epoch)
        order = rng.permutation(n)
        shrink = 1.0 - 2.0 * l2 * eta
        for i in order:
            f = Xtr[i]
            y = Y[i]
            active = (W @ f + b) * y < 1.0
            W *= shrink
            if active.any():
                W[active] += eta * np.outer(y[active], f)
                b[active] += eta * y[active]
    pred = classes[np.argmax(Xte @ W.T + b, axis=1)]
    return float(np.mean(pred != yte))


# --- evaluation ----------------------------------------------------------------

@dataclass
class EvalResult:
    report: dict
    mu: np.ndarray
    pcs: np.ndarray
    recon: np.ndarray


def evaluate(codec: Codec, dataset: LabeledDataset, config: TrainConfig,
             probe_test: LabeledDataset | None = None, want_probe: bool = False,
             out_dir=None) -> EvalResult:
    """Deterministic post-training report.

    Reconstructions use z = mu(x). The final objective components are
    averaged over contiguous chunks (noise and partners from a stream
    seeded by the config seed). The probe trains on this dataset's codes
    and tests on ``probe_test`` when given, else on a stratified 90/10
    held-out split. With ``out_dir`` set, report.json, embeddings.csv,
    and (for 2-d data with centers) recon.csv are written there.
    """
    spec = codec_preset(config.codec)
    if dataset.x.shape[1] != spec.input_dim:
        raise ContractError("evaluate: dataset does not match the codec preset")
    mu = _encode_mu_chunked(codec, dataset.x)
    recon = _decode_chunked(codec, mu)

    report: dict = {"n": len(dataset)}
    if dataset.centers is not None:
        report["E"] = mean_distance_to_centers(recon, dataset.labels, dataset.centers)

    pcs = pca_project(mu, 2)
    if pcs.shape[1] < 2:
        pcs = np.hstack([pcs, np.zeros((pcs.shape[0], 2 - pcs.shape[1]))])

    final = _objective_over_dataset(codec, dataset, config)
    report["final"] = {
        "total": final.total,
        "distortion": final.distortion,
        "mi_bound": final.mi_bound,
        "h_z_bound": final.h_z_bound,
        "h_z_given_x": final.h_z_given_x,
    }

    if want_probe:
        if probe_test is None:
            tr, te = split(dataset, (0.9, 0.1), config.seed)
        else:
            tr, te = dataset, probe_test
        mu_tr = _encode_mu_chunked(codec, tr.x)
        mu_te = _encode_mu_chunked(codec, te.x)
        report["probe_err"] = linear_probe(mu_tr, tr.labels, mu_te, te.labels, config.seed)

    result = EvalResult(report, mu, pcs, recon)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_embeddings_csv(out / "embeddings.csv", dataset.labels, pcs, mu)
        if dataset.centers is not None and dataset.x.shape[1] == 2:
            write_recon_csv(out / "recon.csv", dataset, recon)
        atomic_write_text(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    return result


def _encode_mu_chunked(codec: Codec, x: np.ndarray) -> np.ndarray:
    parts = [encode(codec, x[i:i + EVAL_CHUNK]).mu for i in range(0, x.shape[0], EVAL_CHUNK)]
    return np.vstack(parts)


def _decode_chunked(codec: Codec, z: np.ndarray) -> np.ndarray:
    parts = [decode(codec, z[i:i + EVAL_CHUNK]) for i in range(0, z.shape[0], EVAL_CHUNK)]
    return np.vstack(parts)


def _objective_over_dataset(codec: Codec, dataset: LabeledDataset,
                            config: TrainConfig) -> LossBreakdown:
    spec = codec_preset(config.codec)
    reg = config.reg
    rng = RunRng(config.seed)
    sums = np.zeros(5)
    total_rows = 0
    for start in range(0, len(dataset), EVAL_CHUNK):
        xb = dataset.x[start:start + EVAL_CHUNK]
        n = xb.shape[0]
        eps = draw_noise(n, reg.k, spec.latent_dim, rng)
        j_idx = None
        if reg.kind == "information_potential":
            j_idx = partner_indices(n, min(reg.nj, max(n - 1, 1)), rng)
        br = total_loss(xb, codec, reg, eps, j_idx, distortion=config.distortion)
        sums += n * np.array([br.total, br.distortion, br.mi_bound, br.h_z_bound, br.h_z_given_x])
        total_rows += n
    sums /= total_rows
    return LossBreakdown(*sums)


# --- CSV / report writers --------------------------------------------------------

def write_metrics_csv(path, rows, real_timing: bool = False) -> None:
    """Write the metrics log; ``ms`` is zeroed unless real timing is requested.

    Zeroing keeps the file byte-reproducible across identically seeded
    runs, which the artifact guarantees.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "total", "distortion", "mi_bound", "h_z_bound", "h_z_given_x", "ms"])
    for r in rows:
        ms = r.wall_ms if real_timing else 0.0
        w.writerow([r.step] + [fmt_float(v) for v in
                               (r.total, r.distortion, r.mi_bound, r.h_z_bound, r.h_z_given_x, ms)])
    atomic_write_text(path, buf.getvalue())


def write_embeddings_csv(path, labels, pcs, mu) -> None:
    d = mu.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "label", "pc1", "pc2"] + [f"mu_{j}" for j in range(d)])
    for i in range(mu.shape[0]):
        w.writerow([i, int(labels[i]), fmt_float(pcs[i, 0]), fmt_float(pcs[i, 1])]
                   + [fmt_float(v) for v in mu[i]])
    atomic_write_text(path, buf.getvalue())


def write_recon_csv(path, dataset: LabeledDataset, recon) -> None:
    if dataset.centers is None or dataset.x.shape[1] != 2:
        raise ContractError("write_recon_csv: needs 2-d data with centers")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "label", "x0", "x1", "recon_x0", "recon_x1",
                "center_x0", "center_x1"])
    for i in range(len(dataset)):
        c = dataset.centers[dataset.labels[i]]
        w.writerow([i, int(dataset.labels[i]),
                    fmt_float(dataset.x[i, 0]), fmt_float(dataset.x[i, 1]),
                    fmt_float(recon[i, 0]), fmt_float(recon[i, 1]),
                    fmt_float(c[0]), fmt_float(c[1])])
    atomic_write_text(path, buf.getvalue())


# --- sweeps ----------------------------------------------------------------------

def sweep(base_config: TrainConfig, dataset: LabeledDataset, beta_list, nj_list,
          repeats: int, probe: bool = False, run_hook=None):
    """Full factorial (beta x nj x repeat) runs with per-cell aggregation.

    Repeat ``r`` uses seed ``base seed + r``. A failed run is recorded
    with an error note and the sweep continues; aggregates cover
    completed runs only. Returns ``(run rows, summary rows)``.
    """
    if not beta_list or not nj_list or repeats < 1:
        raise ContractError("sweep: beta_list, nj_list and repeats must be non-empty")
    run_rows = []
    for beta in beta_list:
        for nj in nj_list:
            for r in range(repeats):
                cfg = replace(base_config,
                              reg=replace(base_config.reg, beta=float(beta), nj=int(nj)),
                              seed=base_config.seed + r)
                row = {"kind": cfg.reg.kind, "beta": float(beta), "nj": int(nj),
                       "repeat": r, "seed": cfg.seed, "E": None, "probe_err": None,
                       "final_distortion": None, "final_mi_bound": None, "error": None}
                try:
                    codec, rows = train(cfg, dataset)
                    res = evaluate(codec, dataset, cfg, want_probe=probe)
                    row["E"] = res.report.get("E")
                    row["probe_err"] = res.report.get("probe_err")
                    row["final_distortion"] = res.report["final"]["distortion"]
                    row["final_mi_bound"] = res.report["final"]["mi_bound"]
                    if run_hook is not None:
                        run_hook(cfg, codec, rows, res, row)
                except (NumericError, ContractError) as e:
                    row["error"] = str(e)
                    log.warning("sweep run beta=%s nj=%s repeat=%d failed: %s", beta, nj, r, e)
                run_rows.append(row)
    summary = summarize_sweep(run_rows)
    return run_rows, summary


def summarize_sweep(run_rows) -> list[dict]:
    cells: dict[tuple, list[dict]] = {}
    for row in run_rows:
        cells.setdefault((row["kind"], row["beta"], row["nj"]), []).append(row)
    out = []
    for (kind, beta, nj), rows in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        done = [r for r in rows if r["error"] is None]
        cell = {"kind": kind, "beta": beta, "nj": nj,
                "n_runs": len(rows), "n_completed": len(done)}
        for metric in ("E", "probe_err"):
            vals = [r[metric] for r in done if r[metric] is not None]
            cell[f"{metric}_mean"] = float(np.mean(vals)) if vals else None
            cell[f"{metric}_std"] = float(np.std(vals)) if vals else None
        out.append(cell)
    return out


def write_sweep_csv(path, run_rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "beta", "nj", "repeat", "seed", "E", "probe_err",
                "final_distortion", "final_mi_bound"])
    for r in run_rows:
        w.writerow([r["kind"], fmt_float(r["beta"]), r["nj"], r["repeat"], r["seed"]]
                   + ["" if r[k] is None else fmt_float(r[k])
                      for k in ("E", "probe_err", "final_distortion", "final_mi_bound")])
    atomic_write_text(path, buf.getvalue())


def write_summary_csv(path, summary_rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "beta", "nj", "n_runs", "n_completed",
                "E_mean", "E_std", "probe_err_mean", "probe_err_std"])
    for r in summary_rows:
        w.writerow([r["kind"], fmt_float(r["beta"]), r["nj"], r["n_runs"], r["n_completed"]]
                   + ["" if r[k] is None else fmt_float(r[k])
                      for k in ("E_mean", "E_std", "probe_err_mean", "probe_err_std")])
    atomic_write_text(path, buf.getvalue())
