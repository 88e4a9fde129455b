import subprocess
import sys

import numpy as np
import pytest

from localgen import analysis, cli, dataset, learner
from localgen import quantum_core as qc
from localgen.config import ConfigError, load_config

FAST = ["--set", "model.N=5", "--set", "data.n_train=6", "--set", "data.n_val=2",
        "--set", "data.T_train=1.0", "--set", "data.T_tot=2.0",
        "--set", "train.epochs=1", "--set", "train.batches_per_epoch=5", "--set", "train.batch_size=32"]


def run(args, tmp_path, capsys):
    code = cli.main(args + ["--out", str(tmp_path)])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_defaults(tmp_path, capsys):
    code, out, _ = run(["generate", "--set", "model.N=5"], tmp_path, capsys)
    assert code == 0
    trajs, head = dataset.load_trajectories(tmp_path / "trajectories.txt")
    assert len(trajs) == 100 and all(len(t.times) == 1001 for t in trajs)
    assert head["dt"] == "0.01" and head["seed"] == "0" and head["model"] == "ModelI"
    ds = dataset.load_dataset(tmp_path / "dataset.txt")
    assert len(ds.train) + len(ds.val) == 100_000
    assert "trajectories=100" in out


def test_generate_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["generate", *FAST, "--seed", "4", "--out", str(d)]) == 0
    for name in ("trajectories.txt", "dataset.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # the effective config differs only in the output directory it records
    strip = lambda d: [ln for ln in (d / "effective_config.ini").read_text().splitlines() if not ln.startswith("dir")]
    assert strip(a) == strip(b)


def test_pipeline_and_rerun(tmp_path, capsys):
    for cmd in ("generate", "train", "evaluate"):
        assert run([cmd, *FAST], tmp_path, capsys)[0] == 0
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    for cmd in ("generate", "train", "evaluate"):
        assert run([cmd, *FAST], tmp_path, capsys)[0] == 0
    assert first == {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert {"model.txt", "loss_history.csv", "errors.csv", "comparison_0.csv"} <= set(first)
    head, rows = analysis.read_csv_records(tmp_path / "errors.csv")
    assert len(rows) == 5
    assert float(head["epsilon_bar"]) == pytest.approx(np.mean([float(r["epsilon"]) for r in rows]))


def test_evaluate_identity_matches_direct(tmp_path, capsys):
    learner.save_model(learner.LinearPropagator(), tmp_path / "model.txt")
    code, out, _ = run(["evaluate", *FAST, "--set", "evaluate.initial=0.6, 0.3, 0.4"], tmp_path, capsys)
    assert code == 0
    cfg = load_config(None, ["model.N=5", "data.T_tot=2.0", "data.T_train=1.0"])
    times, maps = qc.dynamical_map(cfg.spin_model(), 2.0, 0.01)
    v0 = np.array([1.0, 0.6, 0.3, 0.4])
    exact = maps @ v0
    direct = analysis.epsilon((times, np.tile(v0, (len(times), 1))), (times, exact))
    _, rows = analysis.read_csv_records(tmp_path / "errors.csv")
    assert float(rows[0]["epsilon"]) == pytest.approx(direct, rel=1e-12)
    _, comp = analysis.read_csv_records(tmp_path / "comparison_0.csv")
    assert len(comp) == 201 and float(comp[0]["residual_norm"]) == pytest.approx(0.0, abs=1e-12)


def test_xi_on_hypermodel(tmp_path, capsys):
    learner.save_model(learner.HyperMLP(4, T_train=1.0), tmp_path / "model.txt")
    code, out, _ = run(["xi", *FAST], tmp_path, capsys)
    assert code == 0 and "Xi=0.0" in out
    _, rows = analysis.read_csv_records(tmp_path / "xi.csv")
    assert len(rows) == 101


def test_xi_rejects_linear(tmp_path, capsys):
    learner.save_model(learner.LinearPropagator(), tmp_path / "model.txt")
    code, _, err = run(["xi"], tmp_path, capsys)
    assert code == 1 and err.startswith("error: bad_model:")


def test_sweep_ci3a(tmp_path, capsys):
    code, out, _ = run(["sweep", "--preset", "ci3a", *FAST], tmp_path, capsys)
    assert code == 0
    head, rows = analysis.read_csv_records(tmp_path / "sweep.csv")
    assert len(rows) == 4 and all(r["status"] == "ok" for r in rows)
    assert {(float(r["axis1"]), float(r["axis2"])) for r in rows} == {(0.1, 1.0), (0.1, 3.0), (2.0, 1.0),
                                                                        (2.0, 3.0)}
    assert head["preset"] == "ci3a"


def test_effective_config_round_trip(tmp_path, capsys):
    run(["generate", *FAST, "--set", "model.V=0.7"], tmp_path, capsys)
    a = load_config(tmp_path / "effective_config.ini")
    assert a.get("model", "V") == 0.7 and a.get("model", "N") == 5
    a.write(tmp_path / "again.ini")
    assert (tmp_path / "again.ini").read_bytes() == (tmp_path / "effective_config.ini").read_bytes()


def test_config_reports_all_problems(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[bogus]\nx = 1\n[data]\ndt = -1\n[train]\nlr = 0\n")
    code, _, err = run(["generate", "--config", str(ini)], tmp_path, capsys)
    assert code == 2
    assert err.count("\n") == 1 and err.startswith("error: config:")
    for part in ("unknown section [bogus]", "data.dt", "train.lr"):
        assert part in err


def test_config_rejects_unphysical_models():
    with pytest.raises(ConfigError, match="omega"):
        load_config(None, ["model.omega=0"])
    with pytest.raises(ConfigError, match="N"):
        load_config(None, ["model.N=2"])
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(None, ["model.gamma=1"])


def test_missing_files(tmp_path, capsys):
    code, _, err = run(["train"], tmp_path, capsys)
    assert code == 1 and err.startswith("error: missing_file:")
    code, _, err = run(["evaluate", "--config", str(tmp_path / "none.ini")], tmp_path, capsys)
    assert code == 1 and "missing_file" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "localgen", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("generate", "train", "evaluate", "xi", "sweep"):
        assert cmd in res.stdout
