"""Command-line front end: simulate, folds, expand, control, sweep.

Every command takes a JSON config (``--config``) validated against a strict
whitelist (unknown keys are rejected with their field path, so a typo can't
silently fall back to a default) and an output directory (``--out``).  Each
run writes ``run.json`` holding the fully resolved config; re-running that
config reproduces the outputs bitwise for fixed-step integration and within
tolerance for adaptive runs.  Exit codes: 0 success, 2 config error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import math
import os
import sys

import numpy as np

from . import control as ctl
from . import expansion, integrator, manifold, model
from .sweep import CellResult, SweepSpec, export_region_map, sweep as run_sweep, worker_count

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# -- config validation helpers -------------------------------------------------

def _check_keys(obj: dict, allowed: set, required: set, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{path + '.' if path else ''}{key}: missing required key")


def _number(obj, path: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    return float(obj)


def _pair(obj, path: str) -> tuple[float, float]:
    if not isinstance(obj, (list, tuple)) or len(obj) != 2:
        raise ConfigError(f"{path}: expected a pair [a, b]")
    return _number(obj[0], path + "[0]"), _number(obj[1], path + "[1]")


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: must be {SCHEMA_VERSION}")
    return cfg


# -- system construction -------------------------------------------------------

_FULL_FIELDS = ("alpha1", "alpha2", "beta1", "beta2", "gamma1", "gamma2",
                "eta1", "eta2", "b", "c", "d", "r", "epsilon")
_REDUCED_FIELDS = ("alpha", "beta", "gamma", "b", "c", "d", "r", "epsilon")
_NF_FIELDS = ("a_c", "b_c", "k", "sigma", "epsilon", "slow_offset")


def _parse_params(kind: str, obj: dict, path: str):
    if kind == "full":
        _check_keys(obj, set(_FULL_FIELDS), set(_FULL_FIELDS), path)
        vals = {k: _number(obj[k], f"{path}.{k}") for k in _FULL_FIELDS}
        cls = model.DecisionParamsFull
    elif kind == "reduced":
        _check_keys(obj, set(_REDUCED_FIELDS), set(_REDUCED_FIELDS), path)
        vals = {k: _number(obj[k], f"{path}.{k}") for k in _REDUCED_FIELDS}
        cls = model.DecisionParamsReduced
    elif kind in ("normal_form", "perturbed_normal_form"):
        _check_keys(obj, set(_NF_FIELDS), set(_NF_FIELDS) - {"slow_offset"}, path)
        vals = {k: _number(obj[k], f"{path}.{k}") for k in obj}
        vals.setdefault("slow_offset", 0.0)
        vals["k"] = int(vals["k"])
        vals["sigma"] = int(vals["sigma"])
        cls = model.NormalFormParams
    else:
        raise ConfigError(f"{path}: unknown system kind {kind!r}")
    try:
        return cls(**vals)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_system(obj: dict, path: str = "system"):
    _check_keys(obj, {"kind", "params", "perturbation"}, {"kind", "params"}, path)
    kind = obj["kind"]
    params = _parse_params(kind, obj["params"], f"{path}.params")
    pert = None
    if kind == "perturbed_normal_form":
        pobj = obj.get("perturbation")
        if pobj is None:
            raise ConfigError(f"{path}.perturbation: required for perturbed_normal_form")
        _check_keys(pobj, {"delta_a", "delta_b"}, {"delta_a", "delta_b"}, f"{path}.perturbation")
        pert = model.PerturbationSpec(_number(pobj["delta_a"], f"{path}.perturbation.delta_a"),
                                      _number(pobj["delta_b"], f"{path}.perturbation.delta_b"))
    elif "perturbation" in obj:
        raise ConfigError(f"{path}.perturbation: only valid for perturbed_normal_form")
    if kind == "full":
        system = model.full_system(params)
    elif kind == "reduced":
        system = model.reduced_system(params)
    elif kind == "normal_form":
        system = model.normal_form_system(params)
    else:
        system = model.perturbed_normal_form_system(params, pert)
    return kind, params, pert, system


_INTEGRATION_DEFAULTS = {
    "method": "rk45-adaptive", "t0": 0.0, "t_end": 1.0, "dt": 1e-3,
    "rtol": 1e-8, "atol": 1e-10, "dt_min": 1e-12, "dt_max": math.inf,
    "dt_init": 1e-4, "sample_stride": 1,
}


def _parse_integration(obj: dict, path: str = "integration") -> integrator.IntegrationConfig:
    allowed = set(_INTEGRATION_DEFAULTS)
    _check_keys(obj, allowed, {"t_end"}, path)
    vals = dict(_INTEGRATION_DEFAULTS)
    vals.update(obj)
    if vals["method"] not in ("rk4-fixed", "rk45-adaptive"):
        raise ConfigError(f"{path}.method: must be rk4-fixed or rk45-adaptive")
    try:
        return integrator.IntegrationConfig(
            method=vals["method"], t0=float(vals["t0"]), t_end=float(vals["t_end"]),
            dt=float(vals["dt"]), rtol=float(vals["rtol"]), atol=float(vals["atol"]),
            dt_min=float(vals["dt_min"]), dt_max=float(vals["dt_max"]),
            dt_init=float(vals["dt_init"]), sample_stride=int(vals["sample_stride"]))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _resolved_integration(icfg: integrator.IntegrationConfig) -> dict:
    return {"method": icfg.method, "t0": icfg.t0, "t_end": icfg.t_end, "dt": icfg.dt,
            "rtol": icfg.rtol, "atol": icfg.atol, "dt_min": icfg.dt_min,
            "dt_max": icfg.dt_max if math.isfinite(icfg.dt_max) else 1e308,
            "dt_init": icfg.dt_init, "sample_stride": icfg.sample_stride}


# -- output writers -------------------------------------------------------------

def _write_run_json(out_dir: str, command: str, resolved: dict) -> None:
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump({"command": command, "schema_version": SCHEMA_VERSION,
                   "config": resolved}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trajectory_csv(path: str, traj: integrator.Trajectory, with_control: bool,
                          zero_length: bool = False) -> None:
    with open(path, "w") as fh:
        fh.write("t,x,y,u,v,H\n")
        n = 0 if zero_length else len(traj.times)
        for i in range(n):
            if with_control and traj.controls is not None:
                u = _fmt(traj.controls[i, 0])
                v = _fmt(traj.controls[i, 1])
                h = _fmt(traj.hamiltonian[i])
            else:
                u = v = h = ""
            fh.write(f"{_fmt(traj.times[i])},{_fmt(traj.states[i, 0])},"
                     f"{_fmt(traj.states[i, 1])},{u},{v},{h}\n")


def _write_manifold_csv(path: str, params, n: int = 600) -> None:
    lo, hi = manifold.scan_window(params)
    xs = np.linspace(lo, hi, n)
    ys = manifold.manifold_graph(params, xs)
    with open(path, "w") as fh:
        fh.write("x,y,stability\n")
        for x, y in zip(xs, ys):
            if math.isnan(y):
                continue
            _, fx, _ = manifold.fast_field_partials(params, float(x), float(y))
            tag = "attracting" if fx < 0 else "repelling"
            fh.write(f"{_fmt(x)},{_fmt(y)},{tag}\n")


def _write_gamma_h_csv(path: str, controllers, n: int = 800) -> None:
    """Target level sets as polylines (left branch down, right branch up)."""
    with open(path, "w") as fh:
        fh.write("ctrl,x,y\n")
        for idx, cfg in enumerate(controllers):
            nf = cfg.nf
            eps = nf.epsilon
            x0 = 1.0 / cfg.r if (cfg.mode == "fast_only" and cfg.r is not None) else cfg.x_star
            # vertical extent: from the turning depth to just past the apex
            depth = (cfg.c_c / 2.0 + eps) * nf.sigma
            dys = np.linspace(-depth, nf.sigma * eps, n)
            left, right = [], []
            for dy in dys:
                expo = -2.0 * dy / (nf.sigma * eps)
                hterm = 2.0 * nf.sigma * eps * cfg.h * math.exp(expo) if abs(expo) < 700 else 0.0
                val = (hterm + eps * nf.b_c / 2.0 - nf.b_c * dy) / nf.a_c
                if val < 0.0:
                    continue
                dx = val ** (1.0 / (2 * nf.k))
                left.append((x0 - dx, cfg.y_star + dy))
                right.append((x0 + dx, cfg.y_star + dy))
            for x, y in list(reversed(left)) + right:
                fh.write(f"{idx},{_fmt(x)},{_fmt(y)}\n")


def _traj_summary(traj: integrator.Trajectory, extra_events=()) -> dict:
    events = [{"time": e.time, "kind": e.kind, "detail": e.detail}
              for e in list(traj.events) + list(extra_events)]
    if len(traj.times):
        final = [float(traj.states[-1, 0]), float(traj.states[-1, 1])]
        y_min, y_max = float(traj.y.min()), float(traj.y.max())
    else:
        final, y_min, y_max = None, None, None
    return {"final_state": final, "y_min": y_min, "y_max": y_max,
            "n_samples": int(len(traj.times)), "complete": traj.complete,
            "error": traj.error, "events": events}


def _emit_summary(out_dir: str, summary: dict) -> None:
    text = json.dumps(summary, indent=2, sort_keys=True)
    print(text)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        fh.write(text + "\n")


# -- seedless guard --------------------------------------------------------------

@contextlib.contextmanager
def _seedless_guard(enabled: bool):
    """Assert that no RNG is consulted: common entry points raise if called."""
    if not enabled:
        yield
        return
    import random as _random

    def _trip(*_a, **_k):
        raise AssertionError("--seedless: random number generator was consulted")

    rand_names = ["random", "uniform", "randint", "randrange", "choice", "choices",
                  "shuffle", "sample", "gauss", "normalvariate", "betavariate",
                  "expovariate", "vonmisesvariate", "seed"]
    np_names = ["random", "rand", "randn", "randint", "normal", "uniform",
                "choice", "shuffle", "permutation", "standard_normal", "seed",
                "default_rng"]
    saved_r = {n: getattr(_random, n) for n in rand_names}
    saved_n = {n: getattr(np.random, n) for n in np_names}
    try:
        for n in rand_names:
            setattr(_random, n, _trip)
        for n in np_names:
            setattr(np.random, n, _trip)
        yield
    finally:
        for n, f in saved_r.items():
            setattr(_random, n, f)
        for n, f in saved_n.items():
            setattr(np.random, n, f)


# -- simulate --------------------------------------------------------------------

def _resolved_system(kind: str, params, pert) -> dict:
    if kind == "full":
        pdict = {k: getattr(params, k) for k in _FULL_FIELDS}
    elif kind == "reduced":
        pdict = {k: getattr(params, k) for k in _REDUCED_FIELDS}
    else:
        pdict = {k: getattr(params, k) for k in _NF_FIELDS}
    out = {"kind": kind, "params": pdict}
    if pert is not None:
        out["perturbation"] = {"delta_a": pert.delta_a, "delta_b": pert.delta_b}
    return out


def cmd_simulate(cfg: dict, out_dir: str, args) -> int:
    _check_keys(cfg, {"schema_version", "system", "initial_state", "integration", "layer"},
                {"system", "initial_state", "integration"}, "")
    kind, params, pert, system = _parse_system(cfg["system"])
    x0, y0 = _pair(cfg["initial_state"], "initial_state")
    icfg = _parse_integration(cfg["integration"])
    layer = bool(cfg.get("layer", False))
    resolved = {"schema_version": SCHEMA_VERSION,
                "system": _resolved_system(kind, params, pert),
                "initial_state": [x0, y0],
                "integration": _resolved_integration(icfg),
                "layer": layer}
    _write_run_json(out_dir, "simulate", resolved)
    with _seedless_guard(args.seedless):
        if layer:
            traj = integrator.integrate_layer(system, model.State(x0, y0), icfg)
        else:
            traj = integrator.integrate(system, model.State(x0, y0), icfg)
    _write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), traj, with_control=False,
                          zero_length=icfg.t_end == icfg.t0)
    if kind in ("full", "reduced"):
        _write_manifold_csv(os.path.join(out_dir, "manifold.csv"), params)
    _emit_summary(out_dir, _traj_summary(traj))
    return EXIT_OK if traj.complete else EXIT_NUMERICAL


# -- folds / expand ---------------------------------------------------------------

def _parse_model_block(cfg: dict):
    obj = cfg.get("model")
    if obj is None:
        raise ConfigError("model: missing required key")
    _check_keys(obj, {"kind", "params"}, {"kind", "params"}, "model")
    if obj["kind"] not in ("full", "reduced"):
        raise ConfigError("model.kind: must be full or reduced")
    params = _parse_params(obj["kind"], obj["params"], "model.params")
    return obj["kind"], params


def _fold_record(fp: manifold.FoldPoint) -> dict:
    return {"x_star": fp.x_star, "y_star": fp.y_star, "k": fp.k,
            "a_c": fp.a_c, "b_c": fp.b_c, "sigma": fp.sigma,
            "residual_f": fp.residual_f, "residual_fx": fp.residual_fx}


def cmd_folds(cfg: dict, out_dir: str, args) -> int:
    _check_keys(cfg, {"schema_version", "model", "y_range", "x_grid", "expand"},
                {"model"}, "")
    kind, params = _parse_model_block(cfg)
    y_range = cfg.get("y_range")
    if y_range is not None:
        y_range = _pair(y_range, "y_range")
    x_grid = int(cfg.get("x_grid", 2000))
    do_expand = bool(cfg.get("expand", True))
    resolved = {"schema_version": SCHEMA_VERSION,
                "model": {"kind": kind, "params": cfg["model"]["params"]},
                "y_range": list(y_range) if y_range else None,
                "x_grid": x_grid, "expand": do_expand}
    _write_run_json(out_dir, "folds", resolved)
    with _seedless_guard(args.seedless):
        folds = manifold.find_folds(params, y_range=y_range, n_grid=x_grid)
        if do_expand:
            for fp in folds:
                expansion.expand_at_fold(fp, params)
    report = {"n_folds": len(folds), "folds": [_fold_record(fp) for fp in folds]}
    with open(os.path.join(out_dir, "folds.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifold_csv(os.path.join(out_dir, "manifold.csv"), params)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_expand(cfg: dict, out_dir: str, args) -> int:
    _check_keys(cfg, {"schema_version", "model", "fold_index", "k_max", "force_k", "x_grid"},
                {"model"}, "")
    kind, params = _parse_model_block(cfg)
    fold_index = int(cfg.get("fold_index", 0))
    k_max = int(cfg.get("k_max", 3))
    force_k = cfg.get("force_k")
    x_grid = int(cfg.get("x_grid", 2000))
    resolved = {"schema_version": SCHEMA_VERSION,
                "model": {"kind": kind, "params": cfg["model"]["params"]},
                "fold_index": fold_index, "k_max": k_max,
                "force_k": force_k, "x_grid": x_grid}
    _write_run_json(out_dir, "expand", resolved)
    with _seedless_guard(args.seedless):
        folds = manifold.find_folds(params, n_grid=x_grid)
        if not folds:
            raise NumericalError("no fold points found")
        if not 0 <= fold_index < len(folds):
            raise ConfigError(f"fold_index: out of range (found {len(folds)} folds)")
        fp = folds[fold_index]
        nf = expansion.expand_at_fold(fp, params, k_max=k_max,
                                      force_k=int(force_k) if force_k else None)
        jets = []
        for kk in range(1, k_max + 1):
            if 2 * kk > 6:
                break
            jet = expansion.expand_at_fold(
                manifold.FoldPoint(fp.x_star, fp.y_star), params, force_k=kk)
            jets.append({"k": kk, "a_c": jet.a_c})
    report = {"fold": _fold_record(fp),
              "normal_form": {"a_c": nf.a_c, "b_c": nf.b_c, "k": nf.k,
                              "sigma": nf.sigma, "epsilon": nf.epsilon},
              "jets": jets}
    with open(os.path.join(out_dir, "expansion.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# -- control ----------------------------------------------------------------------

_CTRL_KEYS = {"fold", "gain", "c_c", "mode", "x_radius", "schedule"}


def _parse_controller(obj: dict, idx: int, system_kind: str, params,
                      folds_cache: dict) -> ctl.ControllerConfig:
    path = f"controllers[{idx}]"
    _check_keys(obj, _CTRL_KEYS, {"fold", "gain", "c_c", "mode"}, path)
    mode = obj["mode"]
    if mode not in ("fast_only", "fast_slow", "off"):
        raise ConfigError(f"{path}.mode: unknown mode {mode!r}")
    fold_obj = obj["fold"]
    if not isinstance(fold_obj, dict):
        raise ConfigError(f"{path}.fold: expected an object")
    if "auto" in fold_obj:
        _check_keys(fold_obj, {"auto"}, {"auto"}, f"{path}.fold")
        if system_kind not in ("full", "reduced"):
            raise ConfigError(f"{path}.fold.auto: only valid for decision-model systems")
        if "folds" not in folds_cache:
            folds = manifold.find_folds(params)
            for fp in folds:
                expansion.expand_at_fold(fp, params)
            folds_cache["folds"] = folds
        folds = folds_cache["folds"]
        fold_index = int(fold_obj["auto"])
        if not 0 <= fold_index < len(folds):
            raise ConfigError(f"{path}.fold.auto: out of range (found {len(folds)} folds)")
        fp = folds[fold_index]
        nf = model.NormalFormParams(a_c=fp.a_c, b_c=fp.b_c, k=fp.k, sigma=fp.sigma,
                                    epsilon=params.epsilon)
        x_star, y_star = fp.x_star, fp.y_star
    else:
        fields = {"x_star", "y_star", "a_c", "b_c", "k", "sigma"}
        _check_keys(fold_obj, fields, fields, f"{path}.fold")
        eps = params.epsilon
        try:
            nf = model.NormalFormParams(
                a_c=_number(fold_obj["a_c"], f"{path}.fold.a_c"),
                b_c=_number(fold_obj["b_c"], f"{path}.fold.b_c"),
                k=int(fold_obj["k"]), sigma=int(fold_obj["sigma"]), epsilon=eps)
        except ValueError as exc:
            raise ConfigError(f"{path}.fold: {exc}") from exc
        x_star = _number(fold_obj["x_star"], f"{path}.fold.x_star")
        y_star = _number(fold_obj["y_star"], f"{path}.fold.y_star")
    schedule = []
    for j, entry in enumerate(obj.get("schedule", [])):
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise ConfigError(f"{path}.schedule[{j}]: expected [time, mode]")
        schedule.append((_number(entry[0], f"{path}.schedule[{j}][0]"), entry[1]))
    r = getattr(params, "r", None)
    try:
        return ctl.ControllerConfig(
            nf=nf, x_star=x_star, y_star=y_star,
            B_c=_number(obj["gain"], f"{path}.gain"),
            c_c=_number(obj["c_c"], f"{path}.c_c"),
            mode=mode, r=r,
            x_radius=float(obj.get("x_radius", ctl.X_RADIUS_DEFAULT)),
            schedule=schedule)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _convergence_report(traj: integrator.Trajectory, controllers, icfg, tol: float,
                        region_events) -> dict:
    herr = np.abs(traj.hamiltonian - controllers[0].h) if traj.hamiltonian is not None \
        else np.full(len(traj.times), np.nan)
    finite = np.isfinite(herr)
    below = traj.times[finite & (herr < tol)]
    time_to_tol = float(below[0]) if len(below) else None
    # L monotonicity against the integrator tolerance budget
    L = 0.5 * np.square(np.where(finite, herr, np.nan))
    dL = L[1:] - L[:-1]
    thr = 10.0 * (icfg.rtol * np.fmax(L[:-1], L[1:]) + icfg.atol)
    viol = int(np.nansum((dL > thr) & np.isfinite(dL)))
    # divergence episodes: |H-h| rising above tol after having been below
    diverged = 0
    unrecovered = 0
    was_below = False
    above = False
    for ok, val in zip(finite, herr):
        if not ok:
            continue
        if val < tol:
            was_below = True
            above = False
        elif was_below and not above:
            above = True
            diverged += 1
    if above:
        unrecovered = 1
    half = traj.times >= (traj.times[0] + 0.5 * (traj.times[-1] - traj.times[0]))
    sup_final = herr[half & finite]
    report = {
        "convergence_tol": tol,
        "time_to_tol": time_to_tol,
        "l_violations": viol,
        "region_exits": sum(1 for e in region_events if e.kind == "region_exit"),
        "divergence_episodes": diverged,
        "unrecovered_divergences": unrecovered,
        "sup_h_err_final_half": float(np.max(sup_final)) if len(sup_final) else None,
    }
    # steady-cycle statistics from the final half (median-crossing period)
    tt, xx, yy = traj.times[half], traj.x[half], traj.y[half]
    if len(tt) > 16:
        ym = 0.5 * (yy.max() + yy.min())
        up = np.nonzero((yy[:-1] < ym) & (yy[1:] >= ym))[0]
        if len(up) >= 2:
            i0, i1 = up[-2], up[-1]
            period = float(tt[i1] - tt[i0])
            mean_x = float(np.trapezoid(xx[i0:i1 + 1], tt[i0:i1 + 1]) / period)
            report["cycle"] = {"period": period, "mean_x": mean_x}
        else:
            report["cycle"] = None
    else:
        report["cycle"] = None
    return report


def cmd_control(cfg: dict, out_dir: str, args) -> int:
    _check_keys(cfg, {"schema_version", "system", "initial_state", "integration",
                      "controllers", "convergence_tol"},
                {"system", "initial_state", "integration", "controllers"}, "")
    kind, params, pert, system = _parse_system(cfg["system"])
    x0, y0 = _pair(cfg["initial_state"], "initial_state")
    icfg = _parse_integration(cfg["integration"])
    tol = float(cfg.get("convergence_tol", 1e-6))
    ctrl_list = cfg["controllers"]
    if not isinstance(ctrl_list, list) or not ctrl_list:
        raise ConfigError("controllers: expected a non-empty list")
    folds_cache: dict = {}
    controllers = [_parse_controller(obj, i, kind, params, folds_cache)
                   for i, obj in enumerate(ctrl_list)]
    resolved = {"schema_version": SCHEMA_VERSION,
                "system": _resolved_system(kind, params, pert),
                "initial_state": [x0, y0],
                "integration": _resolved_integration(icfg),
                "convergence_tol": tol,
                "controllers": [{
                    "fold": {"x_star": c.x_star, "y_star": c.y_star, "a_c": c.nf.a_c,
                             "b_c": c.nf.b_c, "k": c.nf.k, "sigma": c.nf.sigma},
                    "gain": c.B_c, "c_c": c.c_c, "mode": c.mode,
                    "x_radius": c.x_radius,
                    "schedule": [[t, m] for t, m in c.schedule]} for c in controllers]}
    _write_run_json(out_dir, "control", resolved)

    all_off = all(c.mode == "off" and not c.schedule for c in controllers)
    with _seedless_guard(args.seedless):
        if all_off:
            traj = integrator.integrate(system, model.State(x0, y0), icfg)
            _write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), traj,
                                  with_control=False, zero_length=icfg.t_end == icfg.t0)
            if kind in ("full", "reduced"):
                _write_manifold_csv(os.path.join(out_dir, "manifold.csv"), params)
            _emit_summary(out_dir, _traj_summary(traj))
            return EXIT_OK if traj.complete else EXIT_NUMERICAL
        closed = ctl.ControlledSystem(system, controllers)
        traj = integrator.integrate(closed, model.State(x0, y0), icfg,
                                   breakpoints=closed.schedule_times())
    _write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), traj, with_control=True)
    if kind in ("full", "reduced"):
        _write_manifold_csv(os.path.join(out_dir, "manifold.csv"), params)
    _write_gamma_h_csv(os.path.join(out_dir, "gamma_h.csv"), controllers)
    report = _convergence_report(traj, controllers, icfg, tol, closed.events)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit_summary(out_dir, _traj_summary(traj, closed.events))
    return EXIT_OK if traj.complete else EXIT_NUMERICAL


# -- sweep ------------------------------------------------------------------------

def cmd_sweep(cfg: dict, out_dir: str, args) -> int:
    _check_keys(cfg, {"schema_version", "plane", "fixed", "y_scan", "x_grid"},
                {"plane", "fixed"}, "")
    plane = cfg["plane"]
    _check_keys(plane, {"param_x", "param_y", "range_x", "range_y", "nx", "ny"},
                {"param_x", "param_y", "range_x", "range_y", "nx", "ny"}, "plane")
    fixed = cfg["fixed"]
    if not isinstance(fixed, dict):
        raise ConfigError("fixed: expected an object")
    for key, val in fixed.items():
        _number(val, f"fixed.{key}")
    y_scan = _pair(cfg.get("y_scan", [0.0, 60.0]), "y_scan")
    x_grid = int(cfg.get("x_grid", 800))
    try:
        spec = SweepSpec(
            param_x=plane["param_x"], param_y=plane["param_y"],
            range_x=_pair(plane["range_x"], "plane.range_x"),
            range_y=_pair(plane["range_y"], "plane.range_y"),
            nx=int(plane["nx"]), ny=int(plane["ny"]),
            fixed={k: float(v) for k, v in fixed.items()},
            y_scan=y_scan, x_grid=x_grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    resolved = {"schema_version": SCHEMA_VERSION,
                "plane": {"param_x": spec.param_x, "param_y": spec.param_y,
                          "range_x": list(spec.range_x), "range_y": list(spec.range_y),
                          "nx": spec.nx, "ny": spec.ny},
                "fixed": spec.fixed, "y_scan": list(spec.y_scan), "x_grid": spec.x_grid}
    cache_path = os.path.join(out_dir, "cells.jsonl")
    done = {}
    run_path = os.path.join(out_dir, "run.json")
    if os.path.exists(cache_path) and os.path.exists(run_path):
        with open(run_path) as fh:
            previous = json.load(fh)
        if previous.get("config") == resolved:
            done = _load_cells(cache_path)
    _write_run_json(out_dir, "sweep", resolved)
    workers = worker_count(args.workers)
    with _seedless_guard(args.seedless):
        region = run_sweep(spec, workers=workers, done=done)
    with open(cache_path, "w") as fh:
        for cell in region.cells:
            fh.write(json.dumps({"ix": cell.ix, "iy": cell.iy, "px": cell.px,
                                 "py": cell.py, "class": cell.klass,
                                 "n_folds": cell.n_folds,
                                 "folds": [list(f) for f in cell.folds]}) + "\n")
    export_region_map(region, os.path.join(out_dir, "region.csv"),
                               os.path.join(out_dir, "summary.json"))
    summary = {"histogram": region.histogram(), "cells": len(region.cells),
               "reused_cells": len(done), "workers": workers}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _load_cells(path: str) -> dict:
    done = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            cell = CellResult(
                ix=int(obj["ix"]), iy=int(obj["iy"]), px=float(obj["px"]),
                py=float(obj["py"]), klass=obj["class"], n_folds=int(obj["n_folds"]),
                folds=tuple(tuple(f) for f in obj["folds"]))
            done[(cell.ix, cell.iy)] = cell
    return done


# -- entry point ------------------------------------------------------------------

_COMMANDS = {
    "simulate": cmd_simulate,
    "folds": cmd_folds,
    "expand": cmd_expand,
    "control": cmd_control,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="canard",
        description="Fast-slow decision-model toolbox: simulation, fold analysis, "
                    "canard stabilization, bifurcation sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--workers", type=int, default=None,
                        help="parallel workers (sweep only; CANARD_WORKERS overrides)")
        sp.add_argument("--seedless", action="store_true",
                        help="assert that no RNG is consulted during the run")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        try:
            os.makedirs(args.out, exist_ok=True)
        except OSError as exc:
            print(f"i/o error: {exc}", file=sys.stderr)
            return EXIT_IO
        return _COMMANDS[args.command](cfg, args.out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (manifold.FoldSearchError, expansion.DegenerateFoldError,
            expansion.FoldConditionError, model.PoleError,
            integrator.StepUnderflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
