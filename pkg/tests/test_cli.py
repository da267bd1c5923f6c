import json
import math

import numpy as np
import pytest

from csformer import checkpoint
from csformer.cli import main
from csformer.data import SeriesTable, Standardizer, load_csv, write_csv
from csformer.errors import DataError
from csformer.metrics import read_reports
from csformer.model import CSformer, ModelConfig, msa_parameter_count
from csformer.training import predict
from fixtures import sinusoid_table

SMALL = ["--lookback", "16", "--horizon", "8", "--dim", "4", "--batch", "32", "--lr", "1e-3"]


@pytest.fixture
def synth_csv(tmp_path):
    path = tmp_path / "synth.csv"
    assert main(["synth", "--points", "400", "--vars", "3", "--noise-std", "0.1", "--out", str(path)]) == 0
    return path


def train(tmp_path, data, name="run", extra=()):
    out = tmp_path / name
    code = main(["train", "--data", str(data), *SMALL, "--epochs", "1", "--patience", "1", *extra, "--out", str(out)])
    return code, out


# train ------------------------------------------------------------------------------------------

def test_train_zero_epochs_keeps_initial_weights(tmp_path, synth_csv):
    code, out = train(tmp_path, synth_csv, extra=["--epochs", "0", "--seed", "3"])
    assert code == 0
    model, extra = checkpoint.load(out / "checkpoint.bin")
    fresh = CSformer(model.config, model.ablation, seed=3)
    assert checkpoint.dumps(model, extra) == checkpoint.dumps(fresh, extra)
    assert (out / "history.csv").read_text().splitlines() == ["epoch,train_mse,val_mse,steps"]


def test_train_rejects_both_stages_off(tmp_path, synth_csv, capsys):
    code, _ = train(tmp_path, synth_csv, extra=["--no-channel-msa", "--no-sequence-msa"])
    assert code == 2
    assert "usage error" in capsys.readouterr().err


def test_train_missing_file_is_data_error(tmp_path):
    code, _ = train(tmp_path, tmp_path / "absent.csv")
    assert code == 3


def test_train_bad_cells_is_data_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,oops\n")
    code, _ = train(tmp_path, path)
    assert code == 3


def test_smoke_train_manifest_and_replay(tmp_path, synth_csv):
    code, out = train(tmp_path, synth_csv, extra=["--seed", "7", "--max-steps", "3"])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 7
    assert manifest["config"]["model"]["n_channels"] == 3
    assert set(manifest["config"]) == {"model", "ablation", "train", "split"}
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    for name in ("checkpoint.bin", "history.csv"):
        assert (out / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_checkpoint_save_load_save_bytes(tmp_path, synth_csv):
    _, out = train(tmp_path, synth_csv, extra=["--max-steps", "2"])
    blob = (out / "checkpoint.bin").read_bytes()
    model, extra = checkpoint.loads(blob)
    assert checkpoint.dumps(model, extra) == blob


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(DataError, match="magic"):
        checkpoint.load(path)


# forecast ------------------------------------------------------------------------------------

def _read_forecast(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), np.array([[float(c) for c in line.split(",")[1:]] for line in lines[1:]])


def test_forecast_shape_and_consistency(tmp_path, synth_csv):
    _, out = train(tmp_path, synth_csv, extra=["--max-steps", "2"])
    fc = tmp_path / "fc.csv"
    assert main(["forecast", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(synth_csv), "--out", str(fc)]) == 0
    header, values = _read_forecast(fc)
    assert header == ["step", "var1", "var2", "var3"]
    assert values.shape == (8, 3)
    assert (tmp_path / "fc.csv.manifest.json").exists()

    model, extra = checkpoint.load(out / "checkpoint.bin")
    scaler = Standardizer.from_dict(extra["scaler"])
    table = load_csv(synth_csv)
    window = scaler.transform(table.values[-16:]).T[None]
    expected = scaler.inverse(predict(model, window)[0].T)
    assert np.array_equal(values, expected)


def test_forecast_zero_head(tmp_path, synth_csv):
    model = CSformer(ModelConfig(n_channels=3, lookback=16, horizon=8, d_model=4, revin=False))
    model.head.weight.data[...] = 0.0
    model.head.bias.data[...] = 0.0
    ckpt = tmp_path / "zero.bin"
    checkpoint.save(model, ckpt)
    fc = tmp_path / "fc.csv"
    assert main(["forecast", "--checkpoint", str(ckpt), "--data", str(synth_csv), "--out", str(fc)]) == 0
    _, values = _read_forecast(fc)
    assert np.array_equal(values, np.zeros((8, 3)))


def test_forecast_too_few_rows(tmp_path):
    model = CSformer(ModelConfig(n_channels=1, lookback=16, horizon=8, d_model=4))
    checkpoint.save(model, tmp_path / "m.bin")
    short = tmp_path / "short.csv"
    write_csv(SeriesTable(np.arange(10.0)[:, None], ["x"]), short)
    assert main(["forecast", "--checkpoint", str(tmp_path / "m.bin"), "--data", str(short), "--out", str(tmp_path / "f.csv")]) == 2


# eval -------------------------------------------------------------------------------------------

def test_eval_overfit_checkpoint(tmp_path):
    data = tmp_path / "sine.csv"
    write_csv(sinusoid_table(), data)
    out = tmp_path / "sine"
    args = ["train", "--data", str(data), "--lookback", "24", "--horizon", "8", "--dim", "8", "--lr", "1e-3",
            "--batch", "32", "--epochs", "1000", "--patience", "1000", "--max-steps", "2000", "--out", str(out)]
    assert main(args) == 0
    report = tmp_path / "eval.jsonl"
    assert main(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(data), "--out", str(report)]) == 0
    (r,) = read_reports(report)
    assert r.mse < 1e-3
    assert r.mae <= math.sqrt(r.mse)


def test_eval_average_over_horizons(tmp_path, synth_csv):
    ckpts = []
    for h in (4, 8):
        out = tmp_path / f"h{h}"
        args = ["train", "--data", str(synth_csv), "--lookback", "16", "--horizon", str(h), "--dim", "4",
                "--epochs", "1", "--patience", "1", "--max-steps", "2", "--out", str(out)]
        assert main(args) == 0
        ckpts += ["--checkpoint", str(out / "checkpoint.bin")]
    report = tmp_path / "eval.jsonl"
    assert main(["eval", *ckpts, "--data", str(synth_csv), "--horizons", "4,8", "--out", str(report)]) == 0
    a, b, avg = read_reports(report)
    assert avg.extra["label"] == "avg"
    assert abs(avg.mse - (a.mse + b.mse) / 2) < 1e-12
    assert abs(avg.mae - (a.mae + b.mae) / 2) < 1e-12
    bad = main(["eval", *ckpts, "--data", str(synth_csv), "--horizons", "4,96", "--out", str(tmp_path / "x.jsonl")])
    assert bad == 2


def test_eval_cross_data_channel_mismatch(tmp_path, synth_csv, capsys):
    _, out = train(tmp_path, synth_csv, extra=["--epochs", "0"])
    other = tmp_path / "four.csv"
    assert main(["synth", "--points", "400", "--vars", "4", "--out", str(other)]) == 0
    code = main(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(synth_csv),
                 "--cross-data", str(other), "--out", str(tmp_path / "r.jsonl")])
    assert code == 3
    assert "channels" in capsys.readouterr().err


def test_eval_cross_data_report_ids(tmp_path, synth_csv):
    _, out = train(tmp_path, synth_csv, extra=["--epochs", "0"])
    other = tmp_path / "other.csv"
    assert main(["synth", "--points", "400", "--vars", "3", "--seed", "5", "--noise-std", "0.3", "--out", str(other)]) == 0
    report = tmp_path / "r.jsonl"
    assert main(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(synth_csv),
                 "--cross-data", str(other), "--out", str(report)]) == 0
    (r,) = read_reports(report)
    assert (r.source_dataset, r.dataset) == ("synth", "other")


# scores -----------------------------------------------------------------------------------------

def test_scores_export(tmp_path, synth_csv):
    _, out = train(tmp_path, synth_csv, extra=["--epochs", "0", "--heads", "2"])
    maps = tmp_path / "maps"
    assert main(["scores", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(synth_csv), "--out", str(maps)]) == 0
    files = sorted(p.name for p in maps.glob("*.csv"))
    assert files == ["block0_channel_head0.csv", "block0_channel_head1.csv", "block0_sequence_head0.csv", "block0_sequence_head1.csv"]
    channel = np.loadtxt(maps / "block0_channel_head0.csv", delimiter=",")
    sequence = np.loadtxt(maps / "block0_sequence_head1.csv", delimiter=",")
    assert channel.shape == (3, 3) and sequence.shape == (16, 16)
    assert np.max(np.abs(channel.sum(axis=1) - 1)) < 1e-9


# ablate -----------------------------------------------------------------------------------------

def test_ablate_single_variant_matches_train_eval(tmp_path, synth_csv):
    common = [*SMALL, "--epochs", "2", "--patience", "2", "--seed", "4"]
    assert main(["ablate", "--data", str(synth_csv), "--variants", "full", *common, "--out", str(tmp_path / "ab")]) == 0
    assert main(["train", "--data", str(synth_csv), *common, "--out", str(tmp_path / "tr")]) == 0
    report = tmp_path / "ev.jsonl"
    assert main(["eval", "--checkpoint", str(tmp_path / "tr" / "checkpoint.bin"), "--data", str(synth_csv), "--out", str(report)]) == 0
    (ablated,) = read_reports(tmp_path / "ab" / "reports.jsonl")
    (direct,) = read_reports(report)
    assert (ablated.mse, ablated.mae) == (direct.mse, direct.mae)


def test_ablate_all_variants_table(tmp_path, synth_csv):
    out = tmp_path / "ab"
    args = ["ablate", "--data", str(synth_csv), *SMALL, "--blocks", "2", "--epochs", "1", "--patience", "1",
            "--max-steps", "1", "--out", str(out)]
    assert main(args) == 0
    reports = {r.variant: r for r in read_reports(out / "reports.jsonl")}
    assert len(reports) == 8
    assert all(np.isfinite(r.mse) for r in reports.values())
    model = CSformer(ModelConfig(n_channels=3, lookback=16, horizon=8, d_model=4, n_blocks=2))
    delta = reports["no-share"].parameter_count - reports["full"].parameter_count
    assert delta == 2 * msa_parameter_count(model)
    table = (out / "table.txt").read_text().splitlines()
    assert len(table) == 9
    assert len({len(line.split()) for line in table}) == 1


# synth ------------------------------------------------------------------------------------------

def test_synth_defaults(tmp_path):
    path = tmp_path / "s.csv"
    assert main(["synth", "--out", str(path)]) == 0
    table = load_csv(path)
    assert table.values.shape == (20000, 10)


def test_synth_clean_is_analytic(tmp_path):
    path = tmp_path / "s.csv"
    assert main(["synth", "--points", "300", "--vars", "2", "--out", str(path)]) == 0
    t = np.arange(300)[:, None] * 0.01
    expected = np.array([1.0, 2.0]) * np.sin(2 * np.pi * t / np.array([1.0, 2.0]) + np.array([0.0, 0.2]))
    assert np.array_equal(load_csv(path).values, expected)


def test_synth_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["synth", "--points", "500", "--noise-std", "0.7", "--seed", "11", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synth_invalid_spec(tmp_path):
    assert main(["synth", "--noisy-frac", "2", "--out", str(tmp_path / "s.csv")]) == 2


# robustness -------------------------------------------------------------------------------------

def test_robustness_rows_and_determinism(tmp_path):
    args = ["robustness", "--noise", "0,0.5", "--points", "600", *SMALL, "--epochs", "1", "--patience", "1",
            "--max-steps", "3"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = read_reports(tmp_path / "a" / "reports.jsonl")
    b = read_reports(tmp_path / "b" / "reports.jsonl")
    assert len(a) == 2 * 2
    assert [(r.dataset, r.variant, r.mse, r.mae) for r in a] == [(r.dataset, r.variant, r.mse, r.mae) for r in b]
    assert len((tmp_path / "a" / "table.txt").read_text().splitlines()) == 1 + 4


def test_usage_errors_exit_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", str(tmp_path)])
    assert exc.value.code == 2
