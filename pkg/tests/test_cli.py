import csv
import json

import numpy as np
import pytest

from holoml import arrayio
from holoml.cli import METRIC_FIELDS, REPORT_FIELDS, RunConfig, CliError, main, versioned_dir

TINY = {
    "optics": {"nx": 16, "ny": 16, "z_count": 8, "z_step": 50e-6},
    "arch": {"encoder": [4, 8, 8, 16], "decoder": [8, 8, 4]},
    "dataset": {"count": 6, "particles_per_hologram": 2, "splits": {"train": 0.7, "val": 0.15, "test": 0.15}},
    "train": {"epochs": 1, "batch_size": 4},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.strip(), err.strip()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_then_train(tmp_path, config, capsys):
    code, data, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    assert code == 0 and data.endswith("v001")
    code, model, _ = run(capsys, "train", "--config", config, "--data", tmp_path / "d", "--out", tmp_path / "m")
    assert code == 0
    for name in ("last.holonet", "best.holonet", "history.csv", "history.json", "run.json"):
        assert (tmp_path / "m" / "v001" / name).exists()


def test_rerun_goes_to_new_version(tmp_path, config, capsys):
    run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    before = (tmp_path / "d" / "v001" / "manifest.json").read_bytes()
    code, second, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    assert code == 0 and second.endswith("v002")
    assert (tmp_path / "d" / "v001" / "manifest.json").read_bytes() == before


def test_versioned_dir_skips_existing(tmp_path):
    (tmp_path / "v007").mkdir()
    assert versioned_dir(tmp_path).name == "v008"


def test_output_root_env(tmp_path, config, capsys, monkeypatch):
    monkeypatch.setenv("HOLOML_OUTPUT_ROOT", str(tmp_path / "root"))
    code, out, _ = run(capsys, "generate", "--config", config, "--out", "rel")
    assert code == 0 and (tmp_path / "root" / "rel" / "v001" / "manifest.json").exists()


def test_seed_flag_reproduces_generation(tmp_path, config, capsys):
    for name in ("a", "b"):
        run(capsys, "generate", "--config", config, "--out", tmp_path / name, "--seed", 9)
    a = tmp_path / "a" / "v001" / "samples"
    b = tmp_path / "b" / "v001" / "samples"
    assert sorted(p.name for p in a.iterdir()) == sorted(p.name for p in b.iterdir())
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_evaluate_ground_truth_as_predictions(tmp_path, config, capsys):
    _, data, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    code, out, _ = run(capsys, "evaluate", "--config", config, "--data", data, "--predictions", f"{data}/samples",
                       "--out", tmp_path / "e")
    # prediction files are looked up by sample id, so point at copies named that way
    assert code == 3
    preds = tmp_path / "p"
    preds.mkdir()
    manifest = json.loads((tmp_path / "d" / "v001" / "manifest.json").read_text())
    for rec in manifest["samples"]:
        (preds / f"{rec['id']}.csv").write_bytes((tmp_path / "d" / "v001" / rec["ground_truth"]).read_bytes())
    code, out, _ = run(capsys, "evaluate", "--config", config, "--data", data, "--predictions", preds, "--out", tmp_path / "e")
    assert code == 0
    rows = read_csv(f"{out}/metrics.csv")
    assert list(rows[0]) == METRIC_FIELDS and len(rows) == 6
    assert all(float(r["extraction"]) == 1.0 and float(r["ghost"]) == 0.0 for r in rows)
    agg = json.loads(open(f"{out}/metrics.json").read())
    assert agg["extraction"] == 1.0 and agg["ppp"] == pytest.approx(2 / 256)


def test_infer_then_evaluate(tmp_path, config, capsys):
    _, data, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    run(capsys, "train", "--config", config, "--data", data, "--out", tmp_path / "m")
    code, inf, _ = run(capsys, "infer", "--config", config, "--data", data, "--checkpoint", tmp_path / "m",
                       "--out", tmp_path / "i", "--split", "test")
    assert code == 0
    files = sorted((tmp_path / "i" / "v001" / "predictions").glob("*.csv"))
    manifest = json.loads((tmp_path / "d" / "v001" / "manifest.json").read_text())
    assert [f.stem for f in files] == [r["id"] for r in manifest["samples"] if r["split"] == "test"]
    for f in files:
        arrayio.load_particles(f)
    code, ev, _ = run(capsys, "evaluate", "--config", config, "--data", data, "--split", "test",
                      "--predictions", tmp_path / "i", "--out", tmp_path / "e")
    assert code == 0
    code, ev2, _ = run(capsys, "evaluate", "--config", config, "--data", data, "--split", "test",
                       "--checkpoint", tmp_path / "m", "--out", tmp_path / "e")
    assert open(f"{ev}/metrics.csv").read() == open(f"{ev2}/metrics.csv").read()


def test_transfer(tmp_path, config, capsys):
    _, data, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    run(capsys, "train", "--config", config, "--data", data, "--out", tmp_path / "m")
    code, out, _ = run(capsys, "transfer", "--config", config, "--data", data, "--checkpoint", tmp_path / "m",
                       "--out", tmp_path / "t", "--epochs", 1)
    assert code == 0
    assert json.loads(open(f"{out}/history.json").read())["tag"] == "transfer"


def test_ablate_curves(tmp_path, config, capsys):
    _, data, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    code, out, _ = run(capsys, "ablate", "--config", config, "--data", data, "--out", tmp_path / "a", "--seeds", 2)
    assert code == 0
    curves = sorted(p.name for p in (tmp_path / "a" / "v001").glob("curve_*.csv"))
    assert len(curves) == 8
    for name in curves:
        rows = read_csv(tmp_path / "a" / "v001" / name)
        assert rows[0] == {"epoch": "0", "normalized_loss": "1.0"} and len(rows) == 2
    summary = json.loads(open(f"{out}/summary.json").read())
    assert set(summary) == {"full", "no-residual", "mse-only", "relu"}
    assert all(len(v["final_normalized_loss"]) == 2 for v in summary.values())


def write_metrics(directory, ppp, rows):
    directory.mkdir(parents=True)
    with open(directory / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for i, (n_gt, n_pred, n_pair) in enumerate(rows):
            w.writerow([f"{i:06d}", n_gt, n_pred, n_pair, n_pair / n_gt, (n_pred - n_pair) / n_pred, 0.5, 0.5, 1.0])
    (directory / "metrics.json").write_text(json.dumps({"ppp": ppp, "med_dx": 0.5, "med_dy": 0.5, "med_dz": 1.0}))
    return directory / "metrics.csv"


def test_report_sorted_and_pair_weighted(tmp_path, capsys):
    hi = write_metrics(tmp_path / "hi", 0.02, [(10, 10, 9), (30, 28, 27)])
    lo = write_metrics(tmp_path / "lo", 0.001, [(2, 2, 2)])
    code, out, _ = run(capsys, "report", hi, lo, "--out", tmp_path / "r", "--plot")
    assert code == 0
    rows = read_csv(f"{out}/report.csv")
    assert list(rows[0]) == REPORT_FIELDS
    assert [float(r["ppp"]) for r in rows] == [0.001, 0.02]
    # raw per-hologram rates 0.9 and 0.9 weighted by their ground-truth counts
    weighted = (10 * 0.9 + 30 * 0.9) / 40
    assert float(rows[1]["extraction"]) == pytest.approx(weighted)
    assert float(rows[1]["ghost"]) == pytest.approx(2 / 38)
    assert (tmp_path / "r" / "v001" / "extraction_vs_ppp.svg").exists()


def test_report_single_row(tmp_path, capsys):
    m = write_metrics(tmp_path / "one", 0.01, [(5, 5, 5)])
    code, out, _ = run(capsys, "report", m, "--out", tmp_path / "r")
    assert code == 0 and len(read_csv(f"{out}/report.csv")) == 1


def test_report_malformed_line(tmp_path, capsys):
    m = write_metrics(tmp_path / "bad", 0.01, [(5, 5, 5), (4, 4, 4)])
    lines = m.read_text().splitlines()
    lines[2] = "000001,4,x,4"
    m.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "report", m, "--out", tmp_path / "r")
    assert code != 0
    assert "line 3" in json.loads(err)["message"]


def test_unknown_config_key_reports_path(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lrr": 0.1}}))
    code, _, err = run(capsys, "generate", "--config", bad, "--out", tmp_path / "d")
    assert code == 2
    line = json.loads(err)
    assert line["error"] == "config" and line["path"] == "train.lrr"
    with pytest.raises(CliError, match="unknown key"):
        RunConfig.from_dict({"colour": 1})


def test_missing_file_reports_path(tmp_path, config, capsys):
    code, _, err = run(capsys, "train", "--config", config, "--data", tmp_path / "nope", "--out", tmp_path / "m")
    assert code == 3 and json.loads(err)["path"] == str(tmp_path / "nope")


def test_output_required(tmp_path, config, capsys):
    code, _, err = run(capsys, "generate", "--config", config)
    assert code == 2 and json.loads(err)["path"] == "output"


def test_flags_override_config(tmp_path, config, capsys):
    cfg = RunConfig.from_dict(TINY)
    assert cfg.train.epochs == 1 and cfg.output is None
    code, out, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d", "--ppp", 0.02)
    manifest = json.loads(open(f"{out}/manifest.json").read())
    assert manifest["ppp"] == pytest.approx(5 / 256)
    assert json.loads(open(f"{out}/run.json").read())["config"]["dataset"]["ppp"] == 0.02


def test_config_round_trip():
    cfg = RunConfig.from_dict(TINY)
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert np.isclose(again.optics.z_step, 50e-6)


def test_evaluate_baseline_records_threshold(tmp_path, config, capsys):
    _, data, _ = run(capsys, "generate", "--config", config, "--out", tmp_path / "d")
    code, fixed, _ = run(capsys, "evaluate", "--config", config, "--data", data, "--baseline", "--out", tmp_path / "e")
    assert code == 0 and json.loads(open(f"{fixed}/metrics.json").read())["baseline_threshold"] == 0.3
    code, tuned, _ = run(capsys, "evaluate", "--config", config, "--data", data, "--baseline", "--split", "test",
                         "--baseline-max-ghost", 0.2, "--out", tmp_path / "e")
    assert code == 0
    agg = json.loads(open(f"{tuned}/metrics.json").read())
    assert 0 < agg["baseline_threshold"] < 1
