import json
import math
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "canard.cli"]

REDUCED = {"alpha": 2.0, "beta": 0.75, "gamma": 0.5, "b": 30.0,
           "c": 2.5, "d": 1.18, "r": 1.65, "epsilon": 0.01}


def run_cli(*args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(CLI + list(args), capture_output=True, text=True, env=env)


def write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def sim_cfg(**over):
    cfg = {
        "schema_version": 1,
        "system": {"kind": "reduced", "params": dict(REDUCED)},
        "initial_state": [0.8, 28.0],
        "integration": {"method": "rk4-fixed", "dt": 0.02, "t_end": 5.0,
                        "sample_stride": 5},
    }
    cfg.update(over)
    return cfg


def test_simulate_writes_csv_run_json_and_summary(tmp_path):
    cfg_path = write_cfg(tmp_path, "sim.json", sim_cfg())
    out = tmp_path / "out"
    res = run_cli("simulate", "--config", cfg_path, "--out", str(out), "--seedless")
    assert res.returncode == 0, res.stderr
    summary = json.loads(res.stdout)
    assert summary["complete"] is True
    body = (out / "trajectory.csv").read_text().splitlines()
    assert body[0] == "t,x,y,u,v,H"
    assert body[1].split(",")[3:] == ["", "", ""]  # open loop: empty u,v,H
    run_meta = json.loads((out / "run.json").read_text())
    assert run_meta["command"] == "simulate"
    assert run_meta["config"]["integration"]["dt"] == 0.02
    assert (out / "manifold.csv").exists()
    assert (out / "summary.json").exists()


def test_simulate_zero_length_run_header_only(tmp_path):
    cfg = sim_cfg()
    cfg["integration"]["t_end"] = 0.0
    cfg_path = write_cfg(tmp_path, "sim0.json", cfg)
    out = tmp_path / "out0"
    res = run_cli("simulate", "--config", cfg_path, "--out", str(out))
    assert res.returncode == 0
    assert (out / "trajectory.csv").read_text() == "t,x,y,u,v,H\n"


def test_simulate_rerun_reproduces_fixed_step_bitwise(tmp_path):
    cfg_path = write_cfg(tmp_path, "sim.json", sim_cfg())
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run_cli("simulate", "--config", cfg_path, "--out", str(out1)).returncode == 0
    # replay from the resolved run.json config
    resolved = json.loads((out1 / "run.json").read_text())["config"]
    cfg2_path = write_cfg(tmp_path, "sim2.json", resolved)
    assert run_cli("simulate", "--config", cfg2_path, "--out", str(out2)).returncode == 0
    assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()


def test_simulate_stationary_on_manifold_at_one_over_r(tmp_path):
    # place the equilibrium exactly on the manifold: x = 1/r on the branch
    from canard.manifold import manifold_roots
    from canard.model import DecisionParamsReduced

    p = DecisionParamsReduced(**REDUCED)
    root = manifold_roots(27.0, p).roots[0][0]
    cfg = sim_cfg()
    cfg["system"]["params"]["r"] = 1.0 / root
    cfg["initial_state"] = [root, 27.0]
    cfg["integration"] = {"method": "rk45-adaptive", "t_end": 20.0,
                          "rtol": 1e-10, "atol": 1e-13}
    cfg_path = write_cfg(tmp_path, "simeq.json", cfg)
    res = run_cli("simulate", "--config", cfg_path, "--out", str(tmp_path / "oeq"))
    assert res.returncode == 0
    summary = json.loads(res.stdout)
    assert summary["final_state"][0] == pytest.approx(root, abs=1e-10)
    assert summary["final_state"][1] == pytest.approx(27.0, abs=1e-10)


def test_unknown_key_rejected_with_path(tmp_path):
    cfg = sim_cfg()
    cfg["integration"]["rtool"] = 1e-6
    cfg_path = write_cfg(tmp_path, "bad.json", cfg)
    res = run_cli("simulate", "--config", cfg_path, "--out", str(tmp_path / "ob"))
    assert res.returncode == 2
    assert "rtool" in res.stderr and "unknown key" in res.stderr


def test_invalid_params_exit_code_two(tmp_path):
    cfg = sim_cfg()
    cfg["system"]["params"]["d"] = 0.9
    cfg_path = write_cfg(tmp_path, "bad2.json", cfg)
    res = run_cli("simulate", "--config", cfg_path, "--out", str(tmp_path / "oc"))
    assert res.returncode == 2


def test_folds_report(tmp_path):
    cfg = {"schema_version": 1,
           "model": {"kind": "reduced", "params": dict(REDUCED)}}
    cfg_path = write_cfg(tmp_path, "folds.json", cfg)
    out = tmp_path / "of"
    res = run_cli("folds", "--config", cfg_path, "--out", str(out))
    assert res.returncode == 0
    report = json.loads((out / "folds.json").read_text())
    assert report["n_folds"] == 2
    left = report["folds"][0]
    assert left["k"] == 1
    assert left["x_star"] == pytest.approx(0.616286, abs=1e-5)
    assert left["a_c"] == pytest.approx(1.64218, abs=1e-4)
    assert left["residual_f"] <= 1e-10


def test_folds_empty_region_exit_zero(tmp_path):
    params = {"alpha": 2.5, "beta": 1.0, "gamma": 4.25, "b": 30.0,
              "c": 3.0, "d": 1.3, "r": 1.6156, "epsilon": 0.01}
    cfg = {"schema_version": 1, "model": {"kind": "reduced", "params": params}}
    cfg_path = write_cfg(tmp_path, "folds0.json", cfg)
    res = run_cli("folds", "--config", cfg_path, "--out", str(tmp_path / "of0"))
    assert res.returncode == 0
    assert json.loads(res.stdout)["n_folds"] == 0


def test_folds_config_error_nonzero_exit(tmp_path):
    cfg = {"schema_version": 1,
           "model": {"kind": "reduced", "params": {**REDUCED, "d": 1.0}}}
    cfg_path = write_cfg(tmp_path, "foldsbad.json", cfg)
    res = run_cli("folds", "--config", cfg_path, "--out", str(tmp_path / "ofb"))
    assert res.returncode == 2
    assert "config error" in res.stderr


def test_expand_reports_jets(tmp_path):
    cfg = {"schema_version": 1,
           "model": {"kind": "reduced", "params": dict(REDUCED)},
           "fold_index": 0, "k_max": 2}
    cfg_path = write_cfg(tmp_path, "exp.json", cfg)
    out = tmp_path / "oe"
    res = run_cli("expand", "--config", cfg_path, "--out", str(out))
    assert res.returncode == 0
    report = json.loads((out / "expansion.json").read_text())
    assert report["normal_form"]["k"] == 1
    assert report["normal_form"]["a_c"] == pytest.approx(1.64218, abs=1e-4)
    assert [j["k"] for j in report["jets"]] == [1, 2]


def ctrl_cfg(mode="fast_slow", gain=1000.0, t_end=120.0):
    return {
        "schema_version": 1,
        "system": {"kind": "reduced", "params": dict(REDUCED)},
        "initial_state": [0.8, 28.0],
        "integration": {"method": "rk45-adaptive", "t_end": t_end,
                        "rtol": 1e-8, "atol": 1e-10, "sample_stride": 4},
        "controllers": [{"fold": {"auto": 0}, "gain": gain, "c_c": 3.0,
                         "mode": mode}],
        "convergence_tol": 1e-6,
    }


def test_control_off_is_bitwise_identical_to_simulate(tmp_path):
    base = sim_cfg()
    base["integration"] = {"method": "rk4-fixed", "dt": 0.02, "t_end": 5.0,
                           "sample_stride": 5}
    sim_path = write_cfg(tmp_path, "sim.json", base)
    ctl = dict(base)
    ctl["controllers"] = [{"fold": {"auto": 0}, "gain": 1000.0, "c_c": 3.0,
                           "mode": "off"}]
    ctl_path = write_cfg(tmp_path, "ctl.json", ctl)
    out_s, out_c = tmp_path / "os", tmp_path / "oc"
    assert run_cli("simulate", "--config", sim_path, "--out", str(out_s)).returncode == 0
    assert run_cli("control", "--config", ctl_path, "--out", str(out_c)).returncode == 0
    assert (out_s / "trajectory.csv").read_bytes() == (out_c / "trajectory.csv").read_bytes()


def test_control_writes_report_and_overlays(tmp_path):
    cfg_path = write_cfg(tmp_path, "ctl.json", ctrl_cfg())
    out = tmp_path / "octl"
    res = run_cli("control", "--config", cfg_path, "--out", str(out))
    assert res.returncode == 0, res.stderr
    report = json.loads((out / "report.json").read_text())
    assert report["time_to_tol"] is not None
    assert report["unrecovered_divergences"] == 0
    assert (out / "gamma_h.csv").exists()
    assert (out / "manifold.csv").exists()
    body = (out / "trajectory.csv").read_text().splitlines()
    assert body[1].split(",")[3] != ""  # control columns filled


def sweep_cfg():
    return {
        "schema_version": 1,
        "plane": {"param_x": "alpha", "param_y": "gamma",
                  "range_x": [0.4, 2.6], "range_y": [3.8, 4.6],
                  "nx": 5, "ny": 4},
        "fixed": {"beta": 1.0, "c": 3.0, "d": 1.3, "b": 30.0},
        "x_grid": 500,
    }


def test_sweep_workers_deterministic(tmp_path):
    cfg_path = write_cfg(tmp_path, "sweep.json", sweep_cfg())
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    r1 = run_cli("sweep", "--config", cfg_path, "--out", str(out1), "--workers", "1")
    r2 = run_cli("sweep", "--config", cfg_path, "--out", str(out2), "--workers", "3")
    assert r1.returncode == 0 and r2.returncode == 0
    assert (out1 / "region.csv").read_bytes() == (out2 / "region.csv").read_bytes()


def test_sweep_env_var_overrides_workers(tmp_path):
    cfg_path = write_cfg(tmp_path, "sweep.json", sweep_cfg())
    out = tmp_path / "we"
    res = run_cli("sweep", "--config", cfg_path, "--out", str(out), "--workers", "1",
                  env_extra={"CANARD_WORKERS": "2"})
    assert res.returncode == 0
    assert json.loads(res.stdout)["workers"] == 2


def test_sweep_resume_completes_remaining_cells_only(tmp_path):
    cfg_path = write_cfg(tmp_path, "sweep.json", sweep_cfg())
    out = tmp_path / "wr"
    assert run_cli("sweep", "--config", cfg_path, "--out", str(out)).returncode == 0
    cache = (out / "cells.jsonl").read_text().splitlines()
    # drop half the cache and poison the kept rows' class to witness reuse
    kept = []
    for line in cache[: len(cache) // 2]:
        obj = json.loads(line)
        obj["class"] = "error"
        kept.append(json.dumps(obj))
    (out / "cells.jsonl").write_text("\n".join(kept) + "\n")
    res = run_cli("sweep", "--config", cfg_path, "--out", str(out))
    assert res.returncode == 0
    assert json.loads(res.stdout)["reused_cells"] == len(kept)
    reread = [json.loads(l) for l in (out / "cells.jsonl").read_text().splitlines()]
    n_err = sum(1 for obj in reread if obj["class"] == "error")
    assert n_err == len(kept)  # cached rows kept verbatim, the rest recomputed


def test_sweep_resume_ignores_cache_for_different_config(tmp_path):
    cfg_path = write_cfg(tmp_path, "sweep.json", sweep_cfg())
    out = tmp_path / "wd"
    assert run_cli("sweep", "--config", cfg_path, "--out", str(out)).returncode == 0
    other = sweep_cfg()
    other["plane"]["nx"] = 4
    cfg2 = write_cfg(tmp_path, "sweep2.json", other)
    res = run_cli("sweep", "--config", cfg2, "--out", str(out))
    assert res.returncode == 0
    assert json.loads(res.stdout)["reused_cells"] == 0


def test_seedless_guard_trips_on_rng_use():
    from canard.cli import _seedless_guard
    import random

    with _seedless_guard(True):
        with pytest.raises(AssertionError):
            random.random()
    # restored afterwards
    assert isinstance(random.random(), float)


def test_missing_config_file_is_config_error(tmp_path):
    res = run_cli("simulate", "--config", str(tmp_path / "nope.json"),
                  "--out", str(tmp_path / "o"))
    assert res.returncode == 2


def test_wrong_schema_version(tmp_path):
    cfg = sim_cfg()
    cfg["schema_version"] = 99
    cfg_path = write_cfg(tmp_path, "v.json", cfg)
    res = run_cli("simulate", "--config", cfg_path, "--out", str(tmp_path / "ov"))
    assert res.returncode == 2
    assert "schema_version" in res.stderr
