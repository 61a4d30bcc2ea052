import csv

from nhalf_trainer.cli import main


def test_toy_train_sweep_round_trip(tmp_path, capsys):
    data_dir = tmp_path / "data"
    assert main(["toy", "--out", str(data_dir), "--per-class", "12", "--seed", "4"]) == 0
    out = capsys.readouterr().out
    assert "train_manifest=" in out

    ckpt = tmp_path / "toy.nhb"
    metrics = tmp_path / "metrics.csv"
    rc = main(
        [
            "train",
            "--train-manifest", str(data_dir / "train.csv"),
            "--test-manifest", str(data_dir / "test.csv"),
            "--epochs", "2",
            "--out", str(ckpt),
            "--metrics", str(metrics),
        ]
    )
    assert rc == 0
    assert ckpt.read_bytes()[:4] == b"NHB1"
    with metrics.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_acc", "test_acc", "loss"]
    assert len(rows) == 3

    sweep_csv = tmp_path / "sweep.csv"
    rc = main(
        [
            "sweep",
            "--train-manifest", str(data_dir / "train.csv"),
            "--test-manifest", str(data_dir / "test.csv"),
            "--epochs", "1",
            "--clips", "8,31",
            "--out", str(sweep_csv),
        ]
    )
    assert rc == 0
    with sweep_csv.open() as fh:
        rows = list(csv.reader(fh))
    assert [r[0] for r in rows] == ["clip", "8", "31"]


def test_train_refuses_export_without_half_block(tmp_path, capsys):
    data_dir = tmp_path / "data"
    main(["toy", "--out", str(data_dir), "--per-class", "8"])
    rc = main(
        [
            "train",
            "--train-manifest", str(data_dir / "train.csv"),
            "--test-manifest", str(data_dir / "test.csv"),
            "--epochs", "1",
            "--no-half-block",
            "--out", str(tmp_path / "x.nhb"),
        ]
    )
    assert rc == 1
    assert "half block" in capsys.readouterr().err
