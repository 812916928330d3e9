import subprocess
import sys

import pytest

from harvestcast.cli import main
from harvestcast.model import load_checkpoint
from harvestcast.raster import read_grid

SMALL = ["--lstm-units", "4", "--dense-units", "4", "--batch-size", "32"]


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--world", str(d / "w"), "--regions", "12", "--years", "2015-2016"]) == 0
    assert main(["dataset", "--yields", str(d / "w" / "yields.csv"), "--sources", str(d / "w" / "sources.cfg"),
                 "--out", str(d / "samples.csv")]) == 0
    assert main(["train", "--samples", str(d / "samples.csv"), "--checkpoint", str(d / "m.ynet"),
                 "--max-epochs", "2", *SMALL]) == 0
    return d


def test_synth_table(tmp_path, capsys):
    assert main(["synth", "--n", "25", "--seed", "3", "--out", str(tmp_path / "s.csv")]) == 0
    assert "25 synthetic samples" in capsys.readouterr().out
    assert (tmp_path / "s.csv.meta.json").exists()


def test_world_pipeline_artifacts(world):
    net = load_checkpoint(world / "m.ynet")
    assert net.config.lstm_units == 4
    assert net.norm is not None


def test_evaluate_report(world, tmp_path, capsys):
    rc = main(["evaluate", "--samples", str(world / "samples.csv"), "--checkpoint", str(world / "m.ynet"),
               "--name", "Synthetic", "--split", "all", "--report", str(tmp_path / "r.csv")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "Synthetic" in out and "RMSPE" in out
    assert (tmp_path / "r.csv").read_text().startswith("model,mae")


def _predict(world, out, *extra):
    return main(["predict-bbox", "--bbox=-20.2,-50.2,-19.9,-49.8", "--resolution-deg", "0.01",
                 "--checkpoint", str(world / "m.ynet"), "--sources", str(world / "w" / "sources.cfg"),
                 "--season", "2015-09", "--out", str(out), *extra])


def test_predict_bbox_reproducible(world, tmp_path):
    assert _predict(world, tmp_path / "a.agrd") == 0
    assert _predict(world, tmp_path / "b.agrd", "--workers", "4") == 0
    assert _predict(world, tmp_path / "c.agrd") == 0
    a = (tmp_path / "a.agrd").read_bytes()
    assert a == (tmp_path / "b.agrd").read_bytes() == (tmp_path / "c.agrd").read_bytes()
    g = read_grid(tmp_path / "a.agrd")
    assert (g.rows, g.cols) == (30, 40)
    assert (g.values[~g.missing_mask()] >= 0).all()


def test_config_file_and_override(world, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("max-epochs = 1\nlstm-units = 3\ndense-units = 3\n")
    hist = tmp_path / "h.csv"
    args = ["train", "--config", str(cfg), "--samples", str(world / "samples.csv"),
            "--checkpoint", str(tmp_path / "m.ynet"), "--history", str(hist)]
    assert main(args) == 0
    assert len(hist.read_text().splitlines()) == 2
    assert load_checkpoint(tmp_path / "m.ynet").config.lstm_units == 3
    assert main(args + ["--max-epochs", "2"]) == 0
    assert len(hist.read_text().splitlines()) == 3


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochs = 3\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "unknown key 'epochs'" in capsys.readouterr().err


def test_missing_required_option(capsys):
    assert main(["train", "--samples", "x.csv"]) == 2
    assert "--checkpoint" in capsys.readouterr().err


def test_missing_file_is_input_error(tmp_path):
    assert main(["evaluate", "--samples", str(tmp_path / "nope.csv"), "--checkpoint", str(tmp_path / "m")]) == 2


def test_bad_sample_table(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    assert main(["train", "--samples", str(path), "--checkpoint", str(tmp_path / "m.ynet")]) == 2


def test_missing_data_exit_code(world, tmp_path, capsys):
    rc = main(["predict-bbox", "--bbox=-20.2,-50.2,-19.9,-49.8", "--checkpoint", str(world / "m.ynet"),
               "--sources", str(world / "w" / "sources.cfg"), "--season", "2030-09", "--out", str(tmp_path / "x")])
    assert rc == 4
    assert "tmin@2030-09" in capsys.readouterr().err


def test_degenerate_bbox_exit_code(world, tmp_path):
    rc = main(["predict-bbox", "--bbox=-19.9,-50.2,-20.2,-49.8", "--checkpoint", str(world / "m.ynet"),
               "--sources", str(world / "w" / "sources.cfg"), "--season", "2015-09", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_numeric_failure_exit_code(world, tmp_path, capsys):
    rc = main(["train", "--samples", str(world / "samples.csv"), "--checkpoint", str(tmp_path / "m.ynet"),
               "--learning-rate", "1e300", "--max-epochs", "3", *SMALL])
    assert rc == 3
    assert "numeric failure" in capsys.readouterr().err


def test_ingest(tmp_path):
    asc = tmp_path / "tmin_2015-09.asc"
    asc.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n")
    assert main(["ingest", "--input", str(asc), "--out", str(tmp_path / "t.agrd"), "--variable", "tmin"]) == 0
    g = read_grid(tmp_path / "t.agrd")
    assert g.values.tolist() == [[1, 2], [3, 4]] and g.lat0 == 1.5


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "harvestcast", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("harvestcast ")
