"""End-to-end correction runs, config parsing, and the CLI."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from graphmend.core import (
    FeatureMatrix,
    ValidationError,
    load_features,
    load_label_columns,
    load_report,
    save_features,
    save_labels,
)
from graphmend.graph import GraphConfig
from graphmend.pipeline import (
    PipelineConfig,
    build_config,
    evaluate,
    parse_config_file,
    run_correction,
    run_sweep,
)
from graphmend.propagate import PropagationConfig
from graphmend.branches import TrainConfig
from graphmend.splitter import SplitConfig
from graphmend.synth import SynthConfig, make_blobs, make_noisy_dataset


def small_cfg(seed=0, M=3, B=2, outer_epochs=2, **kwargs):
    return PipelineConfig(
        split=SplitConfig(M, B, seed),
        graph=GraphConfig(k_graph=6, gamma=3.0),
        prop=PropagationConfig(alpha_prop=0.9, cg_tolerance=1e-6, cg_max_iters=300),
        train=TrainConfig(hidden_width=16, batch_size=32, pair_sample_count=64),
        outer_epochs=outer_epochs,
        seed=seed,
        **kwargs,
    )


def noisy_blobs(seed=0, per_class=60, C=3):
    cfg = SynthConfig(
        n_classes=C,
        per_class=per_class,
        dim=6,
        class_separation=4.0,
        noise_rate=0.25,
        noise_kind="confusing",
        rng_seed=seed,
    )
    return make_noisy_dataset(cfg)


def test_evaluate_hand_example():
    noisy = [0, 1, 1, 0]
    clean = [0, 1, 0, 0]
    corrected = [0, 1, 0, 1]
    out = evaluate(noisy, corrected, clean)
    assert out["correction_accuracy"] == 1.0
    assert out["clean_preservation"] == pytest.approx(2.0 / 3.0)
    assert out["residual_noise_rate"] == 0.25


def test_evaluate_no_flips_scores_one():
    out = evaluate([0, 1], [0, 1], [0, 1])
    assert out["correction_accuracy"] == 1.0
    assert out["clean_preservation"] == 1.0
    assert out["residual_noise_rate"] == 0.0


def test_evaluate_length_mismatch():
    with pytest.raises(ValidationError):
        evaluate([0, 1], [0], [0, 1])


def test_run_reduces_noise_on_blobs(tmp_path):
    feats, noisy, clean = noisy_blobs(seed=3)
    cfg = small_cfg(seed=3, outer_epochs=3)
    reports = run_correction(
        cfg, features=feats, labels=noisy, clean=clean, output_dir=str(tmp_path)
    )
    assert len(reports) == 3
    before = (noisy != clean).mean()
    after = (reports[-1].corrected != clean).mean()
    assert after < before
    # the report keeps the original labels untouched in every epoch
    for r in reports:
        assert np.array_equal(r.noisy, noisy)


def test_run_preserves_clean_labels(tmp_path):
    cfg_synth = SynthConfig(
        n_classes=3, per_class=50, dim=6, class_separation=6.0,
        noise_kind="none", rng_seed=4,
    )
    feats, noisy, clean = make_noisy_dataset(cfg_synth)
    cfg = small_cfg(seed=4, outer_epochs=2)
    reports = run_correction(cfg, features=feats, labels=noisy, clean=clean)
    assert (reports[-1].corrected == clean).mean() >= 0.99


def test_run_early_stop_breaks_on_stable_epoch():
    cfg_synth = SynthConfig(
        n_classes=3, per_class=50, dim=6, class_separation=6.0,
        noise_kind="none", rng_seed=5,
    )
    feats, noisy, clean = make_noisy_dataset(cfg_synth)
    cfg = small_cfg(seed=5, outer_epochs=6, early_stop=True)
    reports = run_correction(cfg, features=feats, labels=noisy, clean=clean)
    assert len(reports) < 6


def test_run_deterministic():
    feats, noisy, clean = noisy_blobs(seed=6, per_class=40)
    out = []
    for rep in range(2):
        reports = run_correction(
            small_cfg(seed=6), features=feats, labels=noisy, clean=clean
        )
        out.append(reports[-1])
    assert np.array_equal(out[0].corrected, out[1].corrected)
    assert np.array_equal(out[0].confidence, out[1].confidence)


def test_run_no_resplit_mode():
    feats, noisy, clean = noisy_blobs(seed=7, per_class=40)
    cfg = small_cfg(seed=7, resplit_each_epoch=False)
    reports = run_correction(cfg, features=feats, labels=noisy, clean=clean)
    assert len(reports) == 2


def test_run_output_layout(tmp_path):
    feats, noisy, clean = noisy_blobs(seed=8, per_class=40)
    cfg = small_cfg(seed=8, dump_suggestions=True)
    run_correction(
        cfg, features=feats, labels=noisy, clean=clean, output_dir=str(tmp_path)
    )
    n = feats.n_samples
    for epoch in (1, 2):
        edir = tmp_path / ("epoch_%d" % epoch)
        report = load_report(str(edir / "report.txt"))
        assert report.epoch == epoch
        assert report.n_samples == n
        assert (edir / "corrected_model.bin").exists()
        assert (edir / "noisy_model.bin").exists()
        lines = (edir / "suggestions.txt").read_text().splitlines()
        header = 5
        assert len(lines) == header + 2 * 3 * 3 * n
        # on well-connected blob graphs nearly every propagation lands
        labels = np.array([int(l.split()[4]) for l in lines[header:]])
        assert (labels >= 0).mean() > 0.9
    final = tmp_path / "final" / "labels.csv"
    stored, nothing = load_label_columns(str(final))
    assert nothing is None
    report2 = load_report(str(tmp_path / "epoch_2" / "report.txt"))
    assert np.array_equal(stored, report2.corrected)
    assert (tmp_path / "final" / "corrected_model.bin").exists()


def test_run_config_echo(tmp_path):
    feats, noisy, clean = noisy_blobs(seed=9, per_class=40)
    cfg = small_cfg(seed=9)
    run_correction(
        cfg, features=feats, labels=noisy, clean=clean, output_dir=str(tmp_path)
    )
    echoed = parse_config_file(str(tmp_path / "run_config.txt"))
    assert echoed["n_branches"] == 3
    assert echoed["packages_per_class_per_branch"] == 2
    assert echoed["k_graph"] == 6
    assert echoed["alpha_prop"] == 0.9
    assert echoed["seed"] == 9
    assert echoed["n_classes"] == 3
    assert echoed["resplit_each_epoch"] is True


def test_run_requires_small_k_graph():
    feats = FeatureMatrix(np.random.default_rng(0).standard_normal((10, 3)))
    labels = np.repeat([0, 1], 5)
    cfg = small_cfg()
    cfg.graph = GraphConfig(k_graph=10)
    with pytest.raises(ValidationError):
        run_correction(cfg, features=feats, labels=labels)


def test_run_rejects_missing_inputs():
    with pytest.raises(ValidationError):
        run_correction(small_cfg())


def test_sweep_rows_sorted_and_written(tmp_path):
    feats, noisy, clean = noisy_blobs(seed=10, per_class=30)
    cfg = small_cfg(seed=10, M=2, B=1, outer_epochs=1)
    cfg.sweep_m = [2, 1]
    cfg.sweep_b = [1]
    rows = run_sweep(
        cfg, features=feats, labels=noisy, clean=clean, output_dir=str(tmp_path)
    )
    assert [(r[0], r[1]) for r in rows] == [(1, 1), (2, 1)]
    assert all(isinstance(r[2], float) for r in rows)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "M,B,correction_accuracy,residual_noise_rate"
    assert len(lines) == 3
    assert (tmp_path / "sweep_M1_B1" / "final" / "labels.csv").exists()
    assert (tmp_path / "sweep_M2_B1" / "final" / "labels.csv").exists()


def test_sweep_requires_grid():
    with pytest.raises(ValidationError):
        run_sweep(small_cfg(), features=None, labels=None)


def test_parse_config_file_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "n_branches = 4\n"
        "gamma = 2.5   # trailing comment\n"
        "resplit_each_epoch = false\n"
        "sweep_m = 1,3,5\n"
        "\n"
    )
    values = parse_config_file(str(path))
    assert values == {
        "n_branches": 4,
        "gamma": 2.5,
        "resplit_each_epoch": False,
        "sweep_m": [1, 3, 5],
    }


def test_parse_config_file_unknown_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("n_branches = 4\nwibble = 2\n")
    with pytest.raises(ValidationError, match="row 2"):
        parse_config_file(str(path))


def test_parse_config_file_bad_value(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("k_graph = soon\n")
    with pytest.raises(ValidationError, match="row 1"):
        parse_config_file(str(path))


def test_parse_config_file_missing_equals(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("k_graph 12\n")
    with pytest.raises(ValidationError, match="row 1"):
        parse_config_file(str(path))


def test_build_config_defaults():
    cfg = build_config({})
    assert cfg.split.n_branches == 5
    assert cfg.split.packages_per_class_per_branch == 4
    assert cfg.graph.k_graph == 50
    assert cfg.graph.gamma == 3.0
    assert cfg.prop.alpha_prop == 0.99
    assert cfg.prop.cg_tolerance == 1e-6
    assert cfg.prop.cg_max_iters == 200
    assert cfg.train.learning_rate == 0.01
    assert cfg.train.momentum == 0.9
    assert cfg.train.lr_decay == 0.1
    assert cfg.train.epochs == 15
    assert cfg.train.batch_size == 64
    assert cfg.train.l2_weight == 5e-3
    assert cfg.train.hidden_width == 64
    assert cfg.train.alpha_smooth == 1.0
    assert cfg.train.pair_sample_count == 256
    assert cfg.outer_epochs == 15
    assert cfg.resplit_each_epoch is True


def test_build_config_seed_flows_to_split():
    cfg = build_config({"seed": 42})
    assert cfg.seed == 42
    assert cfg.split.rng_seed == 42


# ------------------------------------------------------------- CLI


def run_cli(args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "graphmend.pipeline"] + args,
        capture_output=True,
        text=True,
        cwd=cwd,
    )


CLI_CONFIG = (
    "n_branches = 3\n"
    "packages_per_class_per_branch = 2\n"
    "k_graph = 6\n"
    "alpha_prop = 0.9\n"
    "hidden_width = 16\n"
    "batch_size = 32\n"
    "pair_sample_count = 64\n"
    "outer_epochs = 2\n"
)


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    feats = root / "feats.bin"
    labels = root / "labels.csv"
    proc = run_cli(
        [
            "synth",
            "--out-features", str(feats),
            "--out-labels", str(labels),
            "--classes", "3",
            "--per-class", "40",
            "--dim", "6",
            "--separation", "4.0",
            "--noise-rate", "0.25",
            "--noise-kind", "uniform",
            "--seed", "12",
        ]
    )
    assert proc.returncode == 0, proc.stderr
    cfg = root / "run.cfg"
    cfg.write_text(CLI_CONFIG)
    return root, feats, labels, cfg


def test_cli_synth_output_loadable(cli_dataset):
    root, feats, labels, cfg = cli_dataset
    fm = load_features(str(feats))
    noisy, clean = load_label_columns(str(labels))
    assert fm.n_samples == 120 and fm.dim == 6
    assert clean is not None
    assert (noisy != clean).sum() == 30


def test_cli_correct_and_eval(cli_dataset):
    root, feats, labels, cfg = cli_dataset
    out = root / "run1"
    proc = run_cli(
        [
            "correct",
            "--features", str(feats),
            "--labels", str(labels),
            "--out", str(out),
            "--config", str(cfg),
            "--seed", "12",
        ]
    )
    assert proc.returncode == 0, proc.stderr
    line = json.loads(proc.stdout.strip().splitlines()[-1])
    assert line["epochs_run"] == 2
    assert "correction_accuracy" in line
    assert (out / "final" / "labels.csv").exists()

    proc = run_cli(
        [
            "eval",
            "--labels", str(labels),
            "--corrected", str(out / "final" / "labels.csv"),
        ]
    )
    assert proc.returncode == 0, proc.stderr
    metrics = json.loads(proc.stdout.strip())
    noisy, clean = load_label_columns(str(labels))
    corrected, _ = load_label_columns(str(out / "final" / "labels.csv"))
    want = evaluate(noisy, corrected, clean)
    assert metrics == pytest.approx(want)


def test_cli_byte_identical_reruns(cli_dataset):
    root, feats, labels, cfg = cli_dataset
    outs = []
    for name in ("rep_a", "rep_b"):
        out = root / name
        proc = run_cli(
            [
                "correct",
                "--features", str(feats),
                "--labels", str(labels),
                "--out", str(out),
                "--config", str(cfg),
                "--seed", "77",
            ]
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    for rel in ("epoch_1/report.txt", "epoch_2/report.txt", "final/labels.csv"):
        a = (outs[0] / rel).read_bytes()
        b = (outs[1] / rel).read_bytes()
        assert a == b, rel


def test_cli_split_dump(cli_dataset):
    root, feats, labels, cfg = cli_dataset
    out = root / "split.txt"
    proc = run_cli(
        [
            "split",
            "--features", str(feats),
            "--labels", str(labels),
            "--branches", "3",
            "--packages", "2",
            "--seed", "1",
            "--out", str(out),
        ]
    )
    assert proc.returncode == 0, proc.stderr
    lines = out.read_text().splitlines()
    assert lines[0] == "MLCS v1"
    assert lines[1] == "n_samples 120"
    assert lines[2] == "n_branches 3"
    records = [tuple(int(v) for v in l.split()) for l in lines[5:]]
    assert len(records) == 120
    assert sorted(r[0] for r in records) == list(range(120))
    branches = {r[1] for r in records}
    assert branches <= {0, 1, 2}


def test_cli_sweep(cli_dataset):
    root, feats, labels, cfg = cli_dataset
    out = root / "sweep"
    proc = run_cli(
        [
            "sweep",
            "--features", str(feats),
            "--labels", str(labels),
            "--out", str(out),
            "--config", str(cfg),
            "--seed", "12",
            "--sweep-m", "2,1",
            "--sweep-b", "1",
        ]
    )
    assert proc.returncode == 0, proc.stderr
    stdout = proc.stdout.strip().splitlines()
    assert stdout[0].startswith("M=1 B=1")
    assert stdout[1].startswith("M=2 B=1")
    assert (out / "sweep.csv").exists()


def test_cli_missing_file_exit_code(tmp_path):
    proc = run_cli(
        [
            "correct",
            "--features", str(tmp_path / "nope.bin"),
            "--labels", str(tmp_path / "nope.csv"),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert proc.returncode == 1
    assert "error:" in proc.stderr


def test_cli_bad_magic_exit_code(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + b"\x00" * 12)
    labels = tmp_path / "l.csv"
    labels.write_text("0\n")
    proc = run_cli(
        [
            "correct",
            "--features", str(bad),
            "--labels", str(labels),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert proc.returncode == 10


def test_cli_invalid_labels_exit_code(tmp_path):
    feats = tmp_path / "f.bin"
    save_features(str(feats), FeatureMatrix(np.ones((3, 2), dtype=np.float32)))
    labels = tmp_path / "l.csv"
    labels.write_text("0\n-2\n1\n")
    proc = run_cli(
        [
            "correct",
            "--features", str(feats),
            "--labels", str(labels),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert proc.returncode == 11


def test_cli_usage_error_exit_code():
    proc = run_cli([])
    assert proc.returncode == 2
