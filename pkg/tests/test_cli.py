import json

import numpy as np
import pytest
from scipy.stats import norm

from zeronoise.cli import ConfigError, DEFAULTS, load_config, main


def _run(tmp_path, command, *sets, config=None, out="out", extra=()):
    argv = [command, "--out", str(tmp_path / out)]
    if config is not None:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    for s in sets:
        argv += ["--set", s]
    return main(argv + list(extra))


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_load_config_defaults_and_overrides():
    cfg = load_config(overrides=["sim.dt=0.01", "model.params.sigma=2.0", "model.name=ou"])
    assert cfg["sim"]["dt"] == 0.01 and cfg["model"]["params"] == {"sigma": 2.0}
    assert set(cfg) == set(DEFAULTS)
    with pytest.raises(ConfigError) as info:
        load_config(overrides=["sim.nope=1"])
    assert info.value.path == "sim.nope"
    with pytest.raises(ConfigError):
        load_config(overrides=["noise.epsilons=[0.1, 0.2]"])


def test_unknown_config_key(tmp_path, capsys):
    assert _run(tmp_path, "flow", config={"sim": {"bogus": 1}}) == 1
    assert "sim.bogus" in capsys.readouterr().err


def test_bad_dt_exit_code(tmp_path, capsys):
    assert _run(tmp_path, "flow", "sim.dt=-1") == 1
    assert "sim.dt" in capsys.readouterr().err
    assert _run(tmp_path, "flow", "sim.dt=0") == 1


def test_hopfield_kappa_out_of_range(tmp_path, capsys):
    assert _run(tmp_path, "hopfield-check", "hopfield.kappa=30") == 3
    assert "20.0855" in capsys.readouterr().out
    assert _run(tmp_path, "hopfield-check", out="ok") == 0
    text = (tmp_path / "ok" / "hopfield.csv").read_text().splitlines()
    assert text[0] == "kappa,gamma,threshold,b_min,satisfied"
    assert text[1].split(",")[1] == "36.0"


def test_equilibria_and_lyapunov(tmp_path):
    assert _run(tmp_path, "equilibria", "model.name=lemniscate") == 0
    rows = (tmp_path / "out" / "equilibria.csv").read_text().splitlines()
    assert len(rows) == 4
    assert _run(tmp_path, "lyapunov", "model.name=limit_cycle", "lyapunov.radii=[2,4,8]",
                out="lyap") == 0
    assert (tmp_path / "lyap" / "lyapunov.csv").read_text().startswith("R,infV,supLV,A_R\n")
    manifest = json.loads((tmp_path / "lyap" / "manifest_lyapunov.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["outputs"] == ["lyapunov.csv"]


def test_simulate_thread_invariance(tmp_path):
    sets = ["model.name=lemniscate", "noise.epsilon=0.3", "sim.t_final=1", "sim.dt=0.01",
            "sim.n_paths=5", "sim.save_every=10"]
    assert _run(tmp_path, "simulate", *sets, out="a", extra=["--threads", "1"]) == 0
    assert _run(tmp_path, "simulate", *sets, out="b", extra=["--threads", "8"]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a["paths.csv"] == b["paths.csv"]
    # manifests differ only in the output directory
    ma, mb = (json.loads(x["manifest_simulate.json"]) for x in (a, b))
    ma["effective_config"]["output"] = mb["effective_config"]["output"] = None
    assert ma == mb
    header = (tmp_path / "a" / "paths.csv").read_text().splitlines()[0]
    assert header == "path,t,x1,x2"


def test_lemniscate_sweep_outputs_and_rerun(tmp_path):
    sets = ["model.name=lemniscate", "noise.epsilons=[0.4,0.2,0.1]", "sim.t_final=20",
            "sim.dt=0.01", "sim.burn_in=2", "sim.n_paths=2", "measure.delta=0.3",
            "measure.lo=-3", "measure.hi=3", "measure.bins=32"]
    assert _run(tmp_path, "sweep", *sets, out="a", extra=["--seed", "4"]) == 0
    files = _files(tmp_path / "a")
    hist = [f for f in files if f.startswith("histogram_eps")]
    assert sorted(hist) == ["histogram_eps0.100000.csv", "histogram_eps0.200000.csv",
                            "histogram_eps0.400000.csv"]
    assert "sweep_summary.csv" in files and "candidates.csv" in files
    summary = files["sweep_summary.csv"].decode().splitlines()
    assert summary[0] == ("epsilon,w1_to_previous,support_mass,leak_mass,"
                          "outside_mass_R1,outside_mass_R2,outside_mass_R4")
    assert len(summary) == 4
    assert files["histogram_eps0.100000.csv"].decode().startswith("bin_0,bin_1,center_0,center_1,mass")
    cands = files["candidates.csv"].decode().splitlines()
    kinds = {row.split(",")[0]: row.split(",")[3] for row in cands[1:]}
    assert kinds == {"O": "saddle", "P+": "unstable_focus", "P-": "unstable_focus"}
    # the echoed effective config reproduces the outputs byte for byte
    manifest = json.loads(files["manifest_sweep.json"])
    config = manifest["effective_config"]
    config["output"]["directory"] = str(tmp_path / "b")
    assert _run(tmp_path, "sweep", config=config, out="b") == 0
    again = _files(tmp_path / "b")
    for name, data in files.items():
        if name != "manifest_sweep.json":
            assert again[name] == data


def test_decompose_and_grad(tmp_path):
    assert _run(tmp_path, "decompose", "noise.epsilon=0", "sim.t_final=2", "sim.dt=0.001",
                "decompose.g0=1") == 0
    assert _run(tmp_path, "grad", "model.name=ou", "noise.epsilon=0.2", "sim.dt=0.01",
                "sim.t_final=1", "sim.n_paths=4000", "grad.x=[1.0]", out="g") == 0
    lines = (tmp_path / "g" / "grad.csv").read_text().splitlines()
    assert lines[0] == "estimate,std_error,n_paths,dt,method"
    assert [line.split(",")[-1] for line in lines[1:]] == ["bel", "fd"]


def test_converge_limit_cycle(tmp_path):
    sets = ["model.name=limit_cycle", "noise.epsilons=[0.2,0.05]", "sim.dt=0.01",
            "sim.n_paths=500", "converge.points=[[1.0,0.5],[0.5,0.5]]"]
    assert _run(tmp_path, "converge", *sets) == 0
    rows = (tmp_path / "out" / "converge.csv").read_text().splitlines()
    assert rows[0] == "epsilon,sup_probability,point_0,point_1" and len(rows) == 3


def _hist_w1_to_gaussian(path, scale):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    centers, mass = data[:, 1], data[:, 2]
    w = centers[1] - centers[0]
    edges = np.concatenate([centers - w / 2, [centers[-1] + w / 2]])
    z = np.linspace(edges[0] - 1, edges[-1] + 1, 400_001)
    # histogram CDF, mass spread uniformly inside each bin
    f_hist = np.interp(z, edges, np.concatenate([[0.0], np.cumsum(mass)]))
    return np.trapezoid(np.abs(f_hist - norm.cdf(z, scale=scale)), z) if hasattr(
        np, "trapezoid") else np.trapz(np.abs(f_hist - norm.cdf(z, scale=scale)), z)


@pytest.mark.slow
def test_occupy_ou_fixture(tmp_path):
    sets = ["model.name=ou", "noise.epsilon=0.2", "sim.dt=0.001", "sim.t_final=2000",
            "sim.burn_in=100", "sim.n_paths=8", "sim.x0=[0.0]"]
    assert _run(tmp_path, "occupy", *sets) == 0
    w1 = _hist_w1_to_gaussian(tmp_path / "out" / "histogram_eps0.200000.csv", 0.2 / np.sqrt(2))
    assert w1 < 0.01
