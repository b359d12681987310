import pandas as pd

from backend.app.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, run


def test_synth_then_train(tmp_path, capsys):
    data = tmp_path / "synthetic.csv"
    assert run(["synth", "--out", str(data), "--m", "60", "--n", "40", "--d-true", "2", "--seed", "1"]) == EXIT_OK
    assert data.exists()

    out = tmp_path / "run"
    code = run(
        [
            "--log-level", "WARNING",
            "train",
            "--dataset-path", str(data),
            "--method", "pecf",
            "--d", "2",
            "--sweeps", "3",
            "--rounds", "2",
            "--cutoffs", "5,10",
            "--n-jobs", "1",
            "--output-dir", str(out),
        ]
    )
    assert code == EXIT_OK
    assert len(pd.read_csv(out / "metrics.csv")) == 3
    assert "recall@5=" in capsys.readouterr().out


def test_config_file_with_flag_override(tmp_path):
    data = tmp_path / "synthetic.csv"
    run(["synth", "--out", str(data), "--m", "60", "--n", "40", "--seed", "2"])
    config = tmp_path / "experiment.env"
    config.write_text(
        "\n".join(
            [
                f"DATASET_PATH={data}",
                "METHOD=l2boost",
                "D=2",
                "SWEEPS=2",
                "ROUNDS=1",
                "CUTOFFS=5,10",
                f"OUTPUT_DIR={tmp_path / 'from_file'}",
            ]
        )
    )
    assert run(["train", "--config", str(config), "--rounds", "2", "--n-jobs", "1"]) == EXIT_OK
    assert len(pd.read_csv(tmp_path / "from_file" / "metrics.csv")) == 3


def test_sweep_command(tmp_path):
    data = tmp_path / "synthetic.csv"
    run(["synth", "--out", str(data), "--m", "60", "--n", "40", "--seed", "3"])
    code = run(
        [
            "sweep",
            "--dataset-path", str(data),
            "--method", "wmf",
            "--sweeps", "2",
            "--cutoffs", "5",
            "--n-jobs", "1",
            "--output-dir", str(tmp_path / "sweep"),
            "--grid", "d=1,2",
        ]
    )
    assert code == EXIT_OK
    assert len(pd.read_csv(tmp_path / "sweep" / "sweep.csv")) == 2


def test_invalid_configuration_exits_2(tmp_path):
    data = tmp_path / "synthetic.csv"
    run(["synth", "--out", str(data), "--m", "30", "--n", "20"])
    assert run(["train", "--dataset-path", str(data), "--d", "0"]) == EXIT_CONFIG
    assert run(["sweep", "--dataset-path", str(data), "--grid", "lambda_u=0.1"]) == EXIT_CONFIG


def test_unknown_config_key_exits_2(tmp_path):
    config = tmp_path / "bad.env"
    config.write_text("NOT_A_FIELD=1\n")
    assert run(["train", "--config", str(config)]) == EXIT_CONFIG


def test_missing_dataset_exits_3(tmp_path):
    assert run(["train", "--dataset-path", str(tmp_path / "missing.csv"), "--output-dir", str(tmp_path)]) == EXIT_IO
