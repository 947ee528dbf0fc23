"""CLI dispatch: verbs, exit statuses, and file outputs."""

import csv

from floranet.cli import dispatch


def test_paramcount_mobilenet_gap(capsys):
    code = dispatch(["paramcount", "--arch", "mobilenet", "--head", "gap",
                     "--classes", "16"])
    out = capsys.readouterr().out
    assert code == 0
    assert "3,245,264" in out
    assert "86" in out


def test_paramcount_densenet_flatten(capsys):
    code = dispatch(["paramcount", "--arch", "densenet121", "--head", "flatten",
                     "--classes", "16"])
    out = capsys.readouterr().out
    assert code == 0
    assert "7,840,336" in out


def test_paramcount_xception_flatten_documents_input_discrepancy(capsys):
    code = dispatch(["paramcount", "--arch", "xception", "--head", "flatten",
                     "--classes", "16", "--input-size", "224"])
    out = capsys.readouterr().out
    assert code == 0
    assert "22,467,128" in out
    assert "299" in out and "224" in out  # the documented discrepancy note


def test_paramcount_with_freeze(capsys):
    code = dispatch(["paramcount", "--arch", "mobilenet", "--freeze", "0.25"])
    out = capsys.readouterr().out
    assert code == 0
    assert "21" in out and "52,288" in out


def test_train_on_synth_writes_checkpoint_and_reports(tmp_path, capsys):
    out = tmp_path / "model.ckpt"
    code = dispatch(["train", "--arch", "mini_mobilenet", "--data", "synth:4x8x32",
                     "--optimizer", "sgd", "--lr", "0.05", "--epochs", "5",
                     "--seed", "1", "--out", str(out)])
    assert code == 0
    assert out.exists()
    assert out.with_suffix(".history.csv").exists()
    assert out.with_suffix(".history.png").exists()
    stdout = capsys.readouterr().out
    assert "resolved configuration" in stdout


def test_train_rejects_unknown_optimizer(capsys):
    code = dispatch(["train", "--arch", "mini_mobilenet", "--data", "synth:4x8x32",
                     "--optimizer", "bogus"])
    assert code == 1
    err = capsys.readouterr().err
    for kind in ("sgd", "rmsprop", "adagrad", "adadelta", "adam", "nadam", "adamax"):
        assert kind in err


def test_unknown_flag_is_usage_error(capsys):
    code = dispatch(["paramcount", "--arch", "mobilenet", "--frobnicate", "1"])
    assert code == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_verb_is_usage_error():
    assert dispatch(["transmogrify"]) == 1


def test_help_exits_zero():
    assert dispatch(["--help"]) == 0
    assert dispatch(["train", "--help"]) == 0


def test_runtime_failure_exit_2(tmp_path):
    code = dispatch(["eval", "--ckpt", str(tmp_path / "missing.ckpt"),
                     "--data", "synth:3x4x16"])
    assert code == 2


def test_sweep_writes_all_outputs(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code = dispatch(["sweep", "--archs", "mini_mobilenet", "--optimizers", "all",
                     "--freezes", "0", "--heads", "gap",
                     "--data", "synth:3x12x24", "--epochs", "1",
                     "--batch-size", "8", "--seed", "3", "--input-size", "32",
                     "--out", str(out)])
    assert code == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 7
    kinds = {r["optimizer"] for r in rows}
    assert kinds == {"sgd", "rmsprop", "adagrad", "adadelta", "adam", "nadam",
                     "adamax"}
    for r in rows:
        assert r["status"] == "ok"
        for col in ("accuracy", "loss", "precision", "recall", "f1"):
            float(r[col])
    assert out.with_suffix(".txt").exists()
    assert out.with_suffix(".png").exists()


def test_eval_with_misclassification_dump(tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert dispatch(["train", "--arch", "mini_mobilenet", "--data", "synth:3x8x32",
                     "--optimizer", "sgd", "--lr", "0.05", "--epochs", "3",
                     "--seed", "5", "--out", str(ckpt)]) == 0
    dump = tmp_path / "errors.txt"
    report_dir = tmp_path / "report"
    code = dispatch(["eval", "--ckpt", str(ckpt), "--data", "synth:3x8x32",
                     "--dump-misclassified", str(dump),
                     "--report-dir", str(report_dir)])
    assert code == 0
    assert dump.exists()
    assert (report_dir / "metrics.txt").exists()
    assert (report_dir / "confusion_matrix.png").exists()
    out = capsys.readouterr().out
    assert "top1_accuracy" in out


def test_bench_cli(tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert dispatch(["train", "--arch", "mini_mobilenet", "--data", "synth:2x4x32",
                     "--epochs", "1", "--out", str(ckpt)]) == 0
    code = dispatch(["bench", "--ckpt", str(ckpt), "--runs", "5", "--warmup", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "avg execute time" in out.lower()


def test_synth_verb_materializes_dataset(tmp_path, capsys):
    out_dir = tmp_path / "flowers"
    code = dispatch(["synth", "--classes", "3", "--per-class", "4",
                     "--size", "16", "--out-dir", str(out_dir)])
    assert code == 0
    pngs = list(out_dir.rglob("*.png"))
    assert len(pngs) == 12
    assert len(list(out_dir.iterdir())) == 3


def test_eval_class_count_mismatch_is_runtime_error(tmp_path):
    ckpt = tmp_path / "m.ckpt"
    assert dispatch(["train", "--arch", "mini_mobilenet", "--data", "synth:3x4x32",
                     "--epochs", "1", "--out", str(ckpt)]) == 0
    assert dispatch(["eval", "--ckpt", str(ckpt), "--data", "synth:4x4x32"]) == 2
