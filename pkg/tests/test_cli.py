import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from aacca.cli import main
from aacca.datasets import generate_arc_toy, generate_patch_scene, save_feature_csv, save_scene

SMALL = ["--rows", "8", "--cols", "8", "--d", "12", "--k", "4"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_toy_report(tmp_path, capsys):
    out = tmp_path / "a" / "b"  # missing parents are created
    assert main(["toy", "--n", "100", "--beta", "0.01", "--knn", "10", "--seed", "0", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert {"baseline_accuracy", "aa_accuracy"} <= set(report)
    assert "generated_at" in report
    for name in ("matches.csv", "latent_r.csv", "latent_t.csv", "trace_aa.csv", "model_aa.json", "model_baseline.json"):
        assert (out / name).exists()
    assert len(read_csv(out / "matches.csv")) == 100


def test_toy_noiseless(tmp_path):
    assert main(["toy", "--noise", "0", "--out", str(tmp_path), "--no-timestamp"]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["aa_accuracy"] == 1.0


def test_synth_outputs(tmp_path):
    argv = ["synth", "--regime", "residual", "--configs", "res,standard", "--seed", "0",
            "--out", str(tmp_path), "--no-timestamp", *SMALL]
    assert main(argv) == 0
    rows = read_csv(tmp_path / "eer_table.csv")
    assert [r["config"] for r in rows] == ["res", "standard"]
    assert set(rows[0]) == {"config", "eer_train", "eer_dev", "eer_unlabeled"}
    report = json.loads((tmp_path / "report.json").read_text())
    run = report["runs"][0]
    assert {"config_name", "eer", "threshold", "n_labeled", "n_unlabeled", "iterations",
            "converged", "beta", "seed"} <= set(run)
    assert report["notes"]["positive_class"] == "no-change"
    for name in ("res", "standard"):
        assert (tmp_path / f"trace_{name}.csv").exists()
        assert (tmp_path / f"model_{name}.json").exists()


def test_synth_unknown_config(tmp_path, capsys):
    assert main(["synth", "--configs", "bogus", "--out", str(tmp_path)]) == 1
    assert "valid names" in capsys.readouterr().err


def test_synth_is_byte_identical(tmp_path):
    for tag in ("a", "b"):
        main(["synth", "--configs", "standard,res+sup+ca", "--seed", "2", "--out", str(tmp_path / tag),
              "--no-timestamp", *SMALL])
    for name in ("report.json", "eer_table.csv", "trace_res+sup+ca.csv", "model_standard.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    argv = ["--configs", "standard,res,sup+ca", "--seed", "1", "--no-timestamp", *SMALL]
    main(["synth", "--out", str(tmp_path / "one"), *argv])
    monkeypatch.setenv("AACCA_THREADS", "3")
    main(["synth", "--out", str(tmp_path / "three"), *argv])
    assert (tmp_path / "one" / "report.json").read_bytes() == (tmp_path / "three" / "report.json").read_bytes()


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("AACCA_THREADS", "zero")
    assert main(["synth", "--configs", "standard", "--out", str(tmp_path), *SMALL]) == 1


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"configs": "standard", "seed": 1, "rows": 8, "cols": 8, "d": 12, "k": 3}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-timestamp"]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["seed"] == 1 and report["settings"]["k"] == 3
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 1


def test_beta_sweep(tmp_path):
    argv = ["beta-sweep", "--betas", "0,1e-3,1e-2,1e-1", "--out", str(tmp_path), "--no-timestamp", *SMALL]
    assert main(argv) == 0
    rows = read_csv(tmp_path / "beta_sweep.csv")
    assert len(rows) == 4
    assert list(rows[0]) == ["beta", "eer_train", "eer_dev", "eer_unlabeled", "iterations", "L"]
    assert rows[0]["iterations"] == "1"


def test_beta_sweep_empty_grid(tmp_path):
    assert main(["beta-sweep", "--betas", "", "--out", str(tmp_path)]) == 1


@pytest.fixture
def scene_dir(tmp_path):
    return save_scene(tmp_path / "scene", generate_patch_scene(6, 6, 5, seed=3))


def test_fit_and_transform_verify(tmp_path, scene_dir):
    out = tmp_path / "fit"
    argv = ["fit", "--ref", str(scene_dir / "features_r.csv"), "--test", str(scene_dir / "features_t.csv"),
            "--labels", str(scene_dir / "labels.csv"), "--out", str(out), "--verify"]
    assert main(argv) == 0
    assert json.loads((out / "report.json").read_text())["verify"]["ok"]
    for side, name in (("reference", "features_r.csv"), ("test", "features_t.csv")):
        assert main(["transform", "--model", str(out / "model_strict.json"), "--features", str(scene_dir / name),
                     "--side", side, "--out", str(tmp_path / "z"), "--verify"]) == 0
    z = np.loadtxt(tmp_path / "z" / "latent.csv", delimiter=",", skiprows=1)
    assert z.shape[0] == 36


def test_transform_dimension_mismatch(tmp_path, scene_dir, capsys):
    main(["fit", "--ref", str(scene_dir / "features_r.csv"), "--test", str(scene_dir / "features_t.csv"),
          "--labels", str(scene_dir / "labels.csv"), "--out", str(tmp_path / "fit")])
    save_feature_csv(tmp_path / "wrong.csv", np.zeros((4, 3)))
    code = main(["transform", "--model", str(tmp_path / "fit" / "model_strict.json"),
                 "--features", str(tmp_path / "wrong.csv"), "--out", str(tmp_path / "z")])
    assert code == 2
    err = capsys.readouterr().err
    assert "5" in err and "3" in err


def test_fit_bound_warning(tmp_path, scene_dir, capsys):
    argv = ["fit", "--ref", str(scene_dir / "features_r.csv"), "--test", str(scene_dir / "features_t.csv"),
            "--labels", str(scene_dir / "labels.csv"), "--grid", "6", "6", "--beta", "1000",
            "--max-iter", "3", "--out", str(tmp_path / "fit")]
    assert main(argv) == 0
    assert "beta exceeds contraction bound" in capsys.readouterr().err


def test_fit_dense_with_knn_context(tmp_path):
    toy = generate_arc_toy(30, seed=0)
    for name, m in (("r.csv", toy.colors_r.T), ("t.csv", toy.colors_t.T), ("cr.csv", toy.coords_r.T),
                    ("ct.csv", toy.coords_t.T)):
        save_feature_csv(tmp_path / name, m)
    argv = ["fit", "--ref", str(tmp_path / "r.csv"), "--test", str(tmp_path / "t.csv"),
            "--pairing", "dense-crosssim", "--coords-ref", str(tmp_path / "cr.csv"),
            "--coords-test", str(tmp_path / "ct.csv"), "--knn", "5", "--beta", "0.01",
            "--out", str(tmp_path / "o")]
    assert main(argv) == 0
    assert (tmp_path / "o" / "model_dense-crosssim.json").exists()


def test_fit_parse_error(tmp_path):
    (tmp_path / "bad.csv").write_text("f0\nx\n")
    assert main(["fit", "--ref", str(tmp_path / "bad.csv"), "--test", str(tmp_path / "bad.csv"),
                 "--out", str(tmp_path)]) == 2


def test_usage_error():
    assert main(["toy", "--n", "many"]) == 1
    assert main([]) == 1


def test_numerical_failure_exit_code(tmp_path):
    # constant features have a zero covariance, which no ridge can repair
    save_feature_csv(tmp_path / "c.csv", np.ones((6, 2)))
    (tmp_path / "l.csv").write_text("label\n" + "1\n" * 6)
    assert main(["fit", "--ref", str(tmp_path / "c.csv"), "--test", str(tmp_path / "c.csv"),
                 "--labels", str(tmp_path / "l.csv"), "--out", str(tmp_path / "o")]) == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "aacca", "synth", "--configs", "nope", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "valid names" in proc.stderr
