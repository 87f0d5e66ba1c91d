import numpy as np
import pytest

from ipae import (ConfigError, ContractError, RegularizerKind, RunRng,
                  TrainConfig, evaluate, gen_gmm, linear_probe,
                  mean_distance_to_centers, pca_project, train)
from ipae.codec import zero_codec, codec_preset
from ipae.data import LabeledDataset
from ipae.train_eval import (MetricsRow, sweep, write_metrics_csv,
                             write_recon_csv, write_sweep_csv)

TINY = dict(total_batches=40, batch_size=64, log_every=10)


def tiny_config(**over):
    merged = {**TINY, **over}
    return TrainConfig.toy(**merged)


# --- config -----------------------------------------------------------------

def test_config_defaults_follow_protocol():
    cfg = TrainConfig.toy()
    assert (cfg.lr, cfg.batch_size, cfg.total_batches) == (0.001, 512, 5000)
    assert cfg.reg.k == 1 and cfg.reg.nj == 1 and cfg.distortion == "mse"
    assert TrainConfig.mnist().distortion == "bernoulli"


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="betaa"):
        TrainConfig.from_dict({"codec": "toy", "reg": {"kind": "parametric", "betaa": 1}})
    with pytest.raises(ConfigError, match="totalbatches"):
        TrainConfig.from_dict({"codec": "toy", "totalbatches": 10})


def test_config_rejects_unknown_regularizer():
    with pytest.raises(ConfigError, match="kind"):
        TrainConfig.from_dict({"codec": "toy", "reg": {"kind": "exotic"}})


def test_config_roundtrip():
    cfg = tiny_config(reg=RegularizerKind("parametric", beta=0.25, k=2, nj=1), seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_config_validates_ranges():
    with pytest.raises(ConfigError, match="lr"):
        tiny_config(lr=-1.0).validate()
    with pytest.raises(ConfigError, match="nj"):
        tiny_config(reg=RegularizerKind(nj=200), batch_size=64).validate()


# --- training ----------------------------------------------------------------

def test_train_deterministic_bit_identical():
    ds = gen_gmm(0)
    cfg = tiny_config(seed=3)
    c1, r1 = train(cfg, ds)
    c2, r2 = train(cfg, ds)
    for name, arr in c1.params().items():
        assert np.array_equal(arr, c2.params()[name]), name
    assert [(a.step, a.total) for a in r1] == [(b.step, b.total) for b in r2]


def test_train_logs_expected_rows():
    ds = gen_gmm(0)
    _, rows = train(tiny_config(total_batches=35, log_every=10), ds)
    assert [r.step for r in rows] == [10, 20, 30, 35]


def test_train_reduces_distortion_without_regularizer():
    ds = gen_gmm(0)
    cfg = TrainConfig.toy(reg=RegularizerKind("none", beta=0.0),
                          total_batches=200, log_every=10, seed=0)
    _, rows = train(cfg, ds)
    assert rows[-1].distortion < rows[0].distortion


def test_train_rejects_mismatched_data():
    ds = LabeledDataset(np.zeros((10, 3)), np.zeros(10, dtype=int))
    with pytest.raises(ContractError):
        train(tiny_config(), ds)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_keeps_last_snapshot():
    from ipae import TrainingDiverged
    ds = gen_gmm(0)
    cfg = tiny_config(lr=1e200, total_batches=60, log_every=5, seed=0)
    with pytest.raises(TrainingDiverged) as exc:
        train(cfg, ds)
    e = exc.value
    assert e.step >= 1
    assert e.last_good is not None
    for arr in e.last_good.params().values():
        assert np.all(np.isfinite(arr))


# --- metrics -------------------------------------------------------------------

def test_mean_distance_zero_at_centers():
    centers = np.array([[0.0, 0.0], [2.0, 2.0]])
    labels = np.array([0, 1])
    assert mean_distance_to_centers(centers[labels], labels, centers) == 0.0


def test_mean_distance_three_four_five():
    centers = np.array([[1.0, 1.0]])
    recons = np.array([[4.0, 5.0]])
    assert mean_distance_to_centers(recons, np.array([0]), centers) == 5.0


def test_mean_distance_requires_centers():
    with pytest.raises(ContractError):
        mean_distance_to_centers(np.zeros((1, 2)), np.array([0]), None)


def test_mean_distance_translation_consistent():
    rng = RunRng(1)
    centers = rng.normal((4, 2))
    labels = np.array([0, 1, 2, 3, 0, 1])
    recons = rng.normal((6, 2))
    base = mean_distance_to_centers(recons, labels, centers)
    shift = np.array([3.3, -1.7])
    moved = mean_distance_to_centers(recons + shift, labels, centers + shift)
    assert abs(base - moved) < 1e-12


def test_identity_map_distance_on_raw_gmm():
    # reconstructions == inputs: average distance to centers is the mean
    # norm of a 2-d N(0, 0.1 I) draw, sqrt(0.1 * pi / 2) ~ 0.396
    ds = gen_gmm(9)
    e = mean_distance_to_centers(ds.x, ds.labels, ds.centers)
    assert e == pytest.approx(np.sqrt(0.1 * np.pi / 2), rel=0.02)


# --- PCA -----------------------------------------------------------------------

def test_pca_axis_aligned_identity_up_to_sign():
    rng = RunRng(2)
    raw = rng.normal((80, 2)) * np.array([3.0, 1.0])
    # mirror across both axes: mean is exactly zero, covariance exactly diagonal
    z = np.vstack([raw, raw * [1, -1], -raw, raw * [-1, 1]])
    proj = pca_project(z, 2)
    for c in range(2):
        agree = np.allclose(proj[:, c], z[:, c], atol=1e-9)
        flipped = np.allclose(proj[:, c], -z[:, c], atol=1e-9)
        assert agree or flipped


def test_pca_component_variances_ordered():
    rng = RunRng(3)
    z = rng.normal((500, 5)) * np.array([1.0, 4.0, 2.0, 0.5, 3.0])
    proj = pca_project(z, 3)
    v = proj.var(axis=0)
    assert v[0] >= v[1] >= v[2]


def test_pca_full_basis_reconstructs_centered_data():
    rng = RunRng(4)
    z = rng.normal((100, 6))
    proj, basis, mean = pca_project(z, 6, return_basis=True)
    recon = proj @ basis.T + mean
    assert np.max(np.abs(recon - z)) < 1e-8


def test_pca_row_permutation_invariant():
    rng = RunRng(5)
    z = rng.normal((50, 4))
    perm = RunRng(6).permutation(50)
    a = pca_project(z, 2)
    b = pca_project(z[perm], 2)
    assert np.allclose(a[perm], b, atol=1e-9)


def test_pca_rank_deficient_warns(caplog):
    z = np.outer(np.arange(20.0), np.array([1.0, 2.0]))  # rank 1
    with caplog.at_level("WARNING"):
        proj = pca_project(z, 2)
    assert proj.shape[1] == 1
    assert any("rank" in r.getMessage() for r in caplog.records)


# --- linear probe -----------------------------------------------------------------

def test_probe_separable_blobs_zero_error():
    rng = RunRng(7)
    a = rng.normal((60, 3)) + np.array([6.0, 0.0, 0.0])
    b = rng.normal((60, 3)) - np.array([6.0, 0.0, 0.0])
    feats = np.vstack([a, b])
    labels = np.array([0] * 60 + [1] * 60)
    err = linear_probe(feats, labels, feats, labels, seed=0)
    assert err == 0.0


def test_probe_constant_features_majority_error():
    feats = np.ones((100, 4))
    labels = np.array([0] * 70 + [1] * 30)
    err = linear_probe(feats, labels, feats, labels, seed=0)
    assert err == pytest.approx(0.3, abs=0.02)


def test_probe_requires_two_classes():
    feats = np.ones((10, 2))
    labels = np.zeros(10, dtype=int)
    with pytest.raises(ContractError):
        linear_probe(feats, labels, feats, labels, seed=0)


def test_probe_error_bounded():
    rng = RunRng(8)
    feats = rng.normal((80, 2))
    labels = (rng.normal((80,)) > 0).astype(int)
    err = linear_probe(feats[:60], labels[:60], feats[60:], labels[60:], seed=1)
    assert 0.0 <= err <= 1.0


def test_probe_three_class_grid():
    rng = RunRng(9)
    centers = np.array([[0.0, 8.0], [8.0, -4.0], [-8.0, -4.0]])
    feats = np.vstack([c + rng.normal((40, 2)) for c in centers])
    labels = np.repeat([0, 1, 2], 40)
    err = linear_probe(feats, labels, feats, labels, seed=2)
    assert err < 0.05


# --- evaluate ----------------------------------------------------------------------

def test_evaluate_zero_network_distance_is_mean_center_norm():
    # all reconstructions collapse to the origin, so the metric equals the
    # mean norm of the 25 grid centers: computed independently below
    ds = gen_gmm(10)
    centers = ds.centers
    expected = float(np.mean(np.sqrt((centers ** 2).sum(axis=1))))
    codec = zero_codec(codec_preset("toy"))
    res = evaluate(codec, ds, TrainConfig.toy(seed=0))
    assert res.report["E"] == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(3.748729, abs=1e-5)


def test_evaluate_deterministic_and_shapes():
    ds = gen_gmm(11)
    cfg = tiny_config(seed=1)
    codec, _ = train(cfg, ds)
    r1 = evaluate(codec, ds, cfg)
    r2 = evaluate(codec, ds, cfg)
    assert r1.report == r2.report
    assert r1.pcs.shape == (5000, 2)
    assert r1.mu.shape == (5000, 16)
    assert r1.recon.shape == (5000, 2)


def test_evaluate_probe_split_on_toy():
    ds = gen_gmm(12)
    codec = zero_codec(codec_preset("toy"))
    res = evaluate(codec, ds, tiny_config(seed=2), want_probe=True)
    # constant codes carry no class signal: error near 1 - 1/25
    assert res.report["probe_err"] > 0.8


# --- writers -----------------------------------------------------------------------

def test_metrics_csv_schema_and_determinism(tmp_path):
    rows = [MetricsRow(10, 1.5, 1.0, 0.5, 2.0, 1.5, 123.4),
            MetricsRow(20, 1.2, 0.9, 0.3, 1.9, 1.6, 456.7)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics_csv(p1, rows)
    rows[0].wall_ms = 999.9  # timing must not leak into the export
    write_metrics_csv(p2, rows)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "step,total,distortion,mi_bound,h_z_bound,h_z_given_x,ms"
    assert len(lines) == 3 and "\r" not in p1.read_text()


def test_recon_csv_schema(tmp_path):
    ds = gen_gmm(13)
    recon = np.zeros_like(ds.x)
    write_recon_csv(tmp_path / "recon.csv", ds, recon)
    lines = (tmp_path / "recon.csv").read_text().splitlines()
    assert lines[0] == "sample_id,label,x0,x1,recon_x0,recon_x1,center_x0,center_x1"
    assert len(lines) == 5001
    assert len(lines[1].split(",")) == 8


# --- sweep --------------------------------------------------------------------------

def test_sweep_aggregates_cells(tmp_path):
    ds = gen_gmm(14)
    base = tiny_config(total_batches=15, log_every=5)
    rows, summary = sweep(base, ds, beta_list=[0.001, 0.1], nj_list=[1], repeats=2)
    assert len(rows) == 4
    assert len(summary) == 2
    for cell in summary:
        assert cell["n_runs"] == 2 and cell["n_completed"] == 2
        assert cell["E_mean"] is not None
    seeds = {r["seed"] for r in rows}
    assert seeds == {base.seed, base.seed + 1}
    write_sweep_csv(tmp_path / "sweep.csv", rows)
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
    assert header == "kind,beta,nj,repeat,seed,E,probe_err,final_distortion,final_mi_bound"


def test_sweep_single_cell():
    ds = gen_gmm(15)
    base = tiny_config(total_batches=10, log_every=5)
    rows, summary = sweep(base, ds, beta_list=[0.01], nj_list=[1], repeats=1)
    assert len(rows) == 1 and len(summary) == 1
    assert summary[0]["E_std"] == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_records_failures_and_continues():
    ds = gen_gmm(16)
    base = tiny_config(total_batches=10, log_every=5, lr=1e200)
    rows, summary = sweep(base, ds, beta_list=[0.01, 0.1], nj_list=[1], repeats=1)
    assert len(rows) == 2
    assert all(r["error"] is not None for r in rows)
    assert all(c["n_completed"] == 0 for c in summary)


def test_evaluate_out_dir_writes_artifacts(tmp_path):
    ds = gen_gmm(17)
    codec = zero_codec(codec_preset("toy"))
    evaluate(codec, ds, tiny_config(seed=0), out_dir=tmp_path)
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "embeddings.csv").exists()
    assert (tmp_path / "recon.csv").exists()


def test_image_preset_end_to_end_smoke():
    # synthetic image-shaped data through the bernoulli path and the probe
    rng = RunRng(30)
    n = 90
    labels = np.arange(n) % 3
    x = np.clip(0.25 * rng.normal((n, 784)) + labels[:, None] * 0.3, 0.0, 1.0)
    ds = LabeledDataset(x, labels)
    cfg = TrainConfig.mnist(total_batches=8, batch_size=32, log_every=4, seed=0)
    codec, rows = train(cfg, ds)
    assert all(np.isfinite(r.total) for r in rows)
    res = evaluate(codec, ds, cfg, want_probe=True)
    assert "E" not in res.report
    assert 0.0 <= res.report["probe_err"] <= 1.0
    assert res.mu.shape == (n, 8)
