"""CLI tests: each subcommand end to end on a tiny dataset, plus exit
codes, --force handling, and config precedence."""

import json

import numpy as np
import pytest

from blurvit import data
from blurvit.checkpoint import load_checkpoint
from blurvit.cli import main


def write_folder_dataset(root, n_per_class=6, hw=(8, 8), seed=0):
    rng = np.random.default_rng(seed)
    half = hw[1] // 2
    for label, cls in enumerate(["left", "right"]):
        (root / cls).mkdir(parents=True)
        for i in range(n_per_class):
            img = np.zeros((hw[0], hw[1], 1))
            if label == 0:
                img[:, :half, 0] = 1.0
            else:
                img[:, half:, 0] = 1.0
            img = np.clip(img + rng.normal(0, 0.05, img.shape), 0, 1)
            data.save_png(root / cls / f"{i}.png", img)


@pytest.fixture
def workspace(tmp_path):
    write_folder_dataset(tmp_path / "train")
    write_folder_dataset(tmp_path / "test", n_per_class=3, seed=1)
    return tmp_path


def run_pipeline(ws, run_name="run", train_args=()):
    if not (ws / "cur").exists():
        assert main(["prepare", "--data-root", str(ws / "train"),
                     "--out", str(ws / "cur"), "--levels", "2",
                     "--image-size", "8", "8", "--seed", "0"]) == 0
    assert main(["train", "--curriculum", str(ws / "cur"),
                 "--out", str(ws / run_name), "--patch-size", "4",
                 "--latent-dim", "16", "--heads", "2", "--n-blocks", "2",
                 "--mlp-ratio", "2", "--epochs", "2", "--batch-size", "8",
                 "--quiet", *train_args]) == 0
    assert main(["eval", "--checkpoint", str(ws / run_name / "checkpoint_final.bvt"),
                 "--data-root", str(ws / "test"),
                 "--out", str(ws / f"{run_name}_eval")]) == 0


def test_prepare_layout(workspace):
    ws = workspace
    assert main(["prepare", "--data-root", str(ws / "train"), "--out",
                 str(ws / "cur"), "--levels", "3", "--image-size", "8", "8"]) == 0
    manifest = json.loads((ws / "cur" / "manifest.json").read_text())
    assert manifest["format"] == "blurvit-curriculum/1"
    assert manifest["k"] == 3
    assert manifest["classes"] == ["left", "right"]
    assert len(manifest["samples"]) == 12
    for b in range(3):
        assert (ws / "cur" / f"group_{b}").is_dir()
    groups = [row["group"] for row in manifest["samples"]]
    assert set(groups) == {0, 1, 2}
    # refuses to overwrite without --force
    assert main(["prepare", "--data-root", str(ws / "train"), "--out",
                 str(ws / "cur"), "--levels", "3"]) == 1
    assert main(["prepare", "--data-root", str(ws / "train"), "--out",
                 str(ws / "cur"), "--levels", "3", "--image-size", "8", "8",
                 "--force"]) == 0


def test_full_pipeline_and_report(workspace, capsys):
    ws = workspace
    run_pipeline(ws)
    report = json.loads((ws / "run_eval" / "report.json").read_text())
    assert report["format"] == "blurvit-eval/1"
    assert report["classes"] == ["left", "right"]
    assert set(("accuracy", "precision", "recall", "f1", "auroc")) <= set(report)
    assert (ws / "run_eval" / "roc.csv").exists()
    assert (ws / "run_eval" / "roc.svg").exists()
    ck = load_checkpoint(ws / "run" / "checkpoint_final.bvt")
    assert ck.meta["classes"] == ["left", "right"]
    assert ck.meta["epoch"] == 2


def test_eval_warns_on_training_data(workspace, capsys):
    ws = workspace
    run_pipeline(ws)
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ws / "run" / "checkpoint_final.bvt"),
                 "--data-root", str(ws / "train"),
                 "--out", str(ws / "selftest")]) == 0
    assert "WARNING" in capsys.readouterr().err


def test_compare_command(workspace, capsys):
    ws = workspace
    run_pipeline(ws)
    run_pipeline(ws, run_name="run2", train_args=("--seed", "1", "--force"))
    capsys.readouterr()
    out = ws / "cmp.json"
    assert main(["compare", f"a={ws}/run_eval/report.json",
                 f"b={ws}/run2_eval/report.json", "--out", str(out)]) == 0
    table = capsys.readouterr().out
    for col in ("Accuracy", "Precision", "Recall", "F1", "AUROC"):
        assert col in table
    cmp_doc = json.loads(out.read_text())
    assert cmp_doc["format"] == "blurvit-compare/1"
    assert cmp_doc["baseline"] == "b"
    assert len(cmp_doc["runs"]) == 2
    # malformed run entry
    assert main(["compare", "only-a-path.json", "--out", str(ws / "x.json")]) == 1


def test_config_file_and_flag_precedence(workspace):
    ws = workspace
    assert main(["prepare", "--data-root", str(ws / "train"), "--out",
                 str(ws / "cur"), "--levels", "2", "--image-size", "8", "8"]) == 0
    cfg_path = ws / "cfg.json"
    cfg_path.write_text(json.dumps({
        "patch_size": 4, "latent_dim": 16, "heads": 2, "n_blocks": 2,
        "mlp_ratio": 2, "epochs": 3, "batch_size": 8}))
    assert main(["train", "--curriculum", str(ws / "cur"), "--out", str(ws / "r"),
                 "--config", str(cfg_path), "--epochs", "2", "--quiet"]) == 0
    ck = load_checkpoint(ws / "r" / "checkpoint_final.bvt")
    assert ck.meta["epoch"] == 2  # flag beat the config file
    assert ck.meta["train_config"]["batch_size"] == 8
    prov = ck.meta["config_provenance"]
    assert prov["epochs"] == "flag"
    assert prov["batch_size"] == "config-file"
    assert prov["learning_rate"] == "default"
    # unknown config keys are rejected
    cfg_path.write_text(json.dumps({"warmup": 5}))
    assert main(["train", "--curriculum", str(ws / "cur"), "--out", str(ws / "r2"),
                 "--config", str(cfg_path), "--quiet"]) == 1


def test_preview_blur(workspace):
    ws = workspace
    out = ws / "strip.png"
    assert main(["preview-blur", "--image", str(ws / "train" / "left" / "0.png"),
                 "--levels", "3", "--out", str(out)]) == 0
    img = data.decode_image(out)
    assert img.shape[1] == 3 * 8 + 2 * 2
    # existing file needs --force
    assert main(["preview-blur", "--image", str(ws / "train" / "left" / "0.png"),
                 "--levels", "3", "--out", str(out)]) == 1


def test_output_root_env(workspace, monkeypatch):
    ws = workspace
    monkeypatch.setenv("BLURVIT_OUTPUT_ROOT", str(ws / "artifacts"))
    assert main(["preview-blur", "--image", str(ws / "train" / "left" / "0.png"),
                 "--levels", "2", "--out", "strip.png"]) == 0
    assert (ws / "artifacts" / "strip.png").exists()


def test_exit_codes(workspace, capsys):
    ws = workspace
    # runtime failure: missing curriculum
    assert main(["train", "--curriculum", str(ws / "nope"), "--out",
                 str(ws / "r"), "--quiet"]) == 1
    assert "error:" in capsys.readouterr().err
    # usage error: unknown flag (argparse exits 2)
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main([])
