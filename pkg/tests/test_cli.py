import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from hamrom.cli import main
from hamrom.foms import WaveParams, make_fom
from hamrom.integrators import predict_s
from hamrom.storage import read_checkpoint, read_snapshots

TINY = {
    "family": "linear", "n": 64, "t_final": 0.02, "dt": 1e-3, "p_train": 4, "p_val": 2, "k": 2, "s": 3,
    "ae_blocks": 2, "ae_dense": [32, 16], "hnn_hidden": [8, 8], "max_steps": 20, "eval_every": 10,
    "val_pairs": 16, "batch_size": 8, "repetitions": 2,
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "c.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["generate", "--config", str(cfg), "--out", str(d / "s.bin")]) == 0
    for method in ("psd", "aehnn"):
        rc = main(["reduce", "--config", str(cfg), "--method", method, "--snapshots", str(d / "s.bin"),
                   "--out", str(d / f"{method}.ckpt")])
        assert rc == 0
    return d


def test_generate_output(work):
    snaps, header = read_snapshots(work / "s.bin")
    assert snaps.n_params == 6 and snaps.n_steps == 20 and header["meta"]["n_train"] == 4


def test_reduce_is_deterministic(work):
    out = work / "again.ckpt"
    assert main(["reduce", "--config", str(work / "c.json"), "--method", "aehnn", "--snapshots",
                 str(work / "s.bin"), "--out", str(out)]) == 0
    assert out.read_bytes() == (work / "aehnn.ckpt").read_bytes()
    assert (work / "aehnn.ckpt.history.csv").exists()


def _strip_timing(path):
    rep = json.loads(path.read_text())
    for r in rep["results"]:
        r.pop("seconds")
    return rep


def test_evaluate_reports_identical_across_runs(work):
    for name in ("r1.json", "r2.json"):
        assert main(["evaluate", "--config", str(work / "c.json"), "--checkpoint", str(work / "psd.ckpt"),
                     "--out", str(work / name)]) == 0
    a, b = _strip_timing(work / "r1.json"), _strip_timing(work / "r2.json")
    assert a == b and len(a["results"]) >= 1
    assert all(r["err_q"] >= 0 for r in a["results"])


def test_predict_matches_latent_rollout(work):
    out = work / "p.bin"
    assert main(["predict", "--checkpoint", str(work / "aehnn.ckpt"), "--mu", "0.4", "--steps", "5", "--out", str(out)]) == 0
    snaps, _ = read_snapshots(out)
    net = read_checkpoint(work / "aehnn.ckpt").net()
    y0 = make_fom("linear", 64, WaveParams(0.4)).initial_state().y
    z = predict_s(net.encode(y0), 5, net.integrator, net.dynamics(net.prep.apply_mu([0.4])))
    np.testing.assert_allclose(snaps.trajectories[0, -1], net.decode(z), atol=1e-12)
    assert snaps.n_steps == 5


def test_predict_default_horizon_and_range_warning(work, caplog):
    out = work / "p2.bin"
    assert main(["predict", "--checkpoint", str(work / "psd.ckpt"), "--mu", "5.0", "--out", str(out)]) == 0
    assert read_snapshots(out)[0].n_steps == 20
    assert "outside the training range" in caplog.text


def test_plot_outputs(work):
    report = work / "r1.json"
    out = work / "plots"
    assert main(["plot", "--report", str(report), "--history", str(work / "aehnn.ckpt.history.csv"),
                 "--prediction", str(work / "p.bin"), "--out", str(out)]) == 0
    rep = json.loads(report.read_text())
    with open(out / "hamiltonian.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == sum(len(r["hamiltonian"]) for r in rep["results"])
    assert len(rows) == len(rep["results"]) * 21
    for svg in out.glob("*.svg"):
        ET.parse(svg)
    with open(out / "error_time_q.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 6


def test_plot_empty_report(work, tmp_path):
    rep = {"method": "psd", "family": "linear", "k": 2, "dt": 1e-3, "results": []}
    path = tmp_path / "empty.json"
    path.write_text(json.dumps(rep))
    assert main(["plot", "--report", str(path), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "hamiltonian.csv").read_text().strip().splitlines()
    assert len(lines) == 1


def test_benchmark_writes_timings(work):
    out = work / "timing.csv"
    assert main(["benchmark", "--config", str(work / "c.json"), "--checkpoint", str(work / "aehnn.ckpt"),
                 "--psd", str(work / "psd.ckpt"), "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} >= {"fom", "psd", "ae_hnn"}
    assert all(int(r["repetitions"]) == 2 for r in rows)


# ---------------------------------------------------------------- exit codes


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(work, tmp_path):
    assert main(["generate", "--config", str(tmp_path / "missing.json")]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text('{"family": "x"}')
    assert main(["generate", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["generate", "--config", str(bad)]) == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"0" * 40)
    assert main(["predict", "--checkpoint", str(junk), "--mu", "0.4", "--steps", "2"]) == 4
    assert main(["plot", "--out", str(tmp_path / "none")]) == 2
    assert main(["predict", "--checkpoint", str(work / "psd.ckpt"), "--mu", "0.4", "--steps", "0"]) == 2
    unstable = tmp_path / "sw.json"
    unstable.write_text(json.dumps({"family": "shallow_water", "n": 16, "t_final": 20.0, "dt": 1.0,
                                    "p_train": 2, "p_val": 1, "s": 2}))
    assert main(["generate", "--config", str(unstable), "--out", str(tmp_path / "sw.bin")]) == 3
