"""Seeded Monte Carlo experiments: c0/c1 sweeps, success maps and the demo run.

Every trial draws its scene from ``trial_seed(cfg.seed, trial)`` alone, so a
result row can be recomputed in isolation (see :func:`reproduce_row`).  The
same scene is shared by all grid points of a trial (common random numbers),
which keeps the comparison between grid points free of scene-to-scene
variance.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..baseline import lambda_scale, run_admm
from ..clup import SolverError, as_problem, calibrate, run_clup, write_history_csv
from ..extract import analyze
from ..linop import ForwardOperator, HankelLift
from ..scene import sample_scene, synthesize
from .config import ExperimentConfig

log = logging.getLogger(__name__)

ROW_FIELDS = ("experiment", "solver", "grid_index", "trial", "seed", "snr_db", "c0", "c1",
              "M", "P", "L", "J", "lam", "nmse_x", "nmse_g", "success", "tau_err", "nu_err",
              "r_min", "s_min", "outer_iterations", "iterations", "converged", "status",
              "wall_ms")

# columns that legitimately differ between a run and its reproduction
VOLATILE_FIELDS = ("wall_ms",)


def trial_seed(base: int, trial: int, stream: int = 0) -> int:
    """64-bit scene seed for ``trial``; ``stream=1`` is reserved for held-out trials."""
    ss = np.random.SeedSequence([int(base), int(stream), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


def make_instance(cfg: ExperimentConfig, seed: int, snr_db="scene", J=None, L=None):
    """Scene, measurements, operator and lift for one trial."""
    changes = {"seed": seed}
    if snr_db != "scene":
        changes["snr_db"] = snr_db
    if J is not None:
        changes["J"] = J
    if L is not None:
        changes["L"] = L
    scfg = dataclasses.replace(cfg.scene, **changes)
    scene = sample_scene(scfg)
    meas = synthesize(scene)
    op = ForwardOperator.from_scene(scene)
    lift = HankelLift.for_pulses(scfg.M, scfg.P, cfg.extract.p1)
    return scene, meas, op, lift


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return ";".join(format(float(e), ".17g") for e in v)
    return str(v)


def _base_row(experiment, solver, grid_index, trial, seed, scene, **extra):
    c = scene.config
    row = dict.fromkeys(ROW_FIELDS)
    row.update(experiment=experiment, solver=solver, grid_index=grid_index, trial=trial,
               seed=seed, snr_db=c.snr_db, M=c.M, P=c.P, L=c.L, J=c.J)
    row.update(extra)
    return row


def _score_into(row, x_hat, scene, cfg, lift):
    rep = analyze(x_hat, scene, cfg.extract.n_tau, cfg.extract.n_nu, lift)
    row.update(nmse_x=rep.nmse_x, nmse_g=rep.nmse_g, success=rep.success,
               tau_err=rep.tau_err, nu_err=rep.nu_err)
    return rep


def _failed(row, exc):
    row.update(status=f"failed: {exc}", success=False, nmse_x=math.nan, nmse_g=math.nan,
               converged=False)
    log.warning("trial %s (%s, grid point %s) failed: %s", row["trial"], row["solver"],
                row["grid_index"], exc)
    return row


def clup_row(cfg, scene, meas, op, lift, params, row, reuse=None, reuse_s=False):
    """Run CLuP on one instance and fill ``row``; returns the calibration for reuse."""
    t0 = time.perf_counter()
    row.update(c0=params.c0, c1=params.c1)
    cal = None
    try:
        pb = as_problem(meas.y, op, lift)
        cal = calibrate(pb.y, pb, params, reuse=reuse, reuse_s=reuse_s)
        st = run_clup(pb.y, pb, params, calibration=cal)
        _score_into(row, st.x_hat, scene, cfg, lift)
        row.update(r_min=cal.r_min, s_min=cal.s_min, outer_iterations=st.outer_iterations,
                   iterations=st.inner_iterations, converged=st.converged, status="ok")
    except (SolverError, np.linalg.LinAlgError) as exc:
        _failed(row, exc)
    row["wall_ms"] = 1e3 * (time.perf_counter() - t0)
    return cal


def admm_row(cfg, scene, meas, op, lift, lam, row):
    t0 = time.perf_counter()
    row["lam"] = lam
    try:
        res = run_admm(meas.y, op, cfg.admm.params(1.0, lam), lift)
        _score_into(row, res.x, scene, cfg, lift)
        row.update(outer_iterations=1, iterations=res.iterations, converged=res.converged,
                   status="ok")
    except (SolverError, np.linalg.LinAlgError) as exc:
        _failed(row, exc)
    row["wall_ms"] = 1e3 * (time.perf_counter() - t0)


# -- units of work (top-level so they pickle into worker processes) -------------

def _sweep_unit(cfg: ExperimentConfig, snr_index: int, trial: int):
    param = "c0" if cfg.kind == "sweep_c0" else "c1"
    values = getattr(cfg.grid, param)
    snr = cfg.grid.snr_db[snr_index]
    seed = trial_seed(cfg.seed, trial)
    scene, meas, op, lift = make_instance(cfg, seed, snr)
    rows, cal = [], None
    for k, v in enumerate(values):
        params = dataclasses.replace(cfg.clup, **{param: v})
        row = _base_row(cfg.kind, "clup", snr_index * len(values) + k, trial, seed, scene)
        new = clup_row(cfg, scene, meas, op, lift, params, row, reuse=cal,
                       reuse_s=(param == "c1" and cal is not None))
        cal = cal or new
        rows.append(row)
    return rows


def _cells(cfg: ExperimentConfig):
    snrs = cfg.grid.snr_db or (cfg.scene.snr_db,)
    out = []
    for si, snr in enumerate(snrs):
        for li, L in enumerate(cfg.grid.L):
            for ji, J in enumerate(cfg.grid.J):
                out.append((len(out), snr, L, J))
    return out


def _select_lambda_unit(cfg: ExperimentConfig, cell):
    """ADMM penalty factor maximizing success on held-out trials of one cell."""
    _, snr, L, J = cell
    if not cfg.admm.select_lambda:
        return cfg.admm.lam_factor
    stats = []
    for f in cfg.admm.lam_grid:
        nm, ok = [], 0
        for h in range(cfg.admm.holdout_trials):
            scene, meas, op, lift = make_instance(cfg, trial_seed(cfg.seed, h, stream=1),
                                                  snr, J, L)
            row = _base_row("holdout", "admm", -1, h, 0, scene)
            admm_row(cfg, scene, meas, op, lift, f * lambda_scale(meas.y, op), row)
            ok += bool(row["success"])
            nm.append(row["nmse_x"])
        stats.append((-ok, float(np.nanmean(nm)) if not np.all(np.isnan(nm)) else math.inf, f))
    return min(stats)[2]


def _phase_unit(cfg: ExperimentConfig, cell, trial: int, lam_factor):
    gi, snr, L, J = cell
    seed = trial_seed(cfg.seed, trial)
    scene, meas, op, lift = make_instance(cfg, seed, snr, J, L)
    rows = []
    for solver in cfg.grid.solvers:
        row = _base_row(cfg.kind, solver, gi, trial, seed, scene)
        if solver == "clup":
            clup_row(cfg, scene, meas, op, lift, cfg.clup, row)
        else:
            admm_row(cfg, scene, meas, op, lift, lam_factor * lambda_scale(meas.y, op), row)
        rows.append(row)
    return rows


def _call(args):
    fn, a = args
    return fn(*a)


def _map(cfg: ExperimentConfig, fn, arglist):
    """Run ``fn(*args)`` for each entry, in order, across ``cfg.workers`` processes."""
    jobs = [(fn, a) for a in arglist]
    if cfg.workers <= 1 or len(jobs) <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(_call, jobs, chunksize=1))


def _sorted(rows):
    return sorted(rows, key=lambda r: (r["grid_index"], r["trial"], r["solver"]))


# -- experiments -----------------------------------------------------------------

def run_sweep(cfg: ExperimentConfig):
    units = [(cfg, si, t) for si in range(len(cfg.grid.snr_db)) for t in range(cfg.trials)]
    rows = [r for chunk in _map(cfg, _sweep_unit, units) for r in chunk]
    return _sorted(rows)


def run_sweep_c0(cfg: ExperimentConfig):
    return run_sweep(cfg.replace(kind="sweep_c0"))


def run_sweep_c1(cfg: ExperimentConfig):
    return run_sweep(cfg.replace(kind="sweep_c1"))


def run_phase_map(cfg: ExperimentConfig):
    """Rows for every (SNR, L, J) cell, trial and solver, plus the chosen ADMM factors."""
    cells = _cells(cfg)
    factors = {}
    if "admm" in cfg.grid.solvers:
        chosen = _map(cfg, _select_lambda_unit, [(cfg, c) for c in cells])
        factors = {c[0]: f for c, f in zip(cells, chosen)}
    units = [(cfg, c, t, factors.get(c[0])) for c in cells for t in range(cfg.trials)]
    rows = [r for chunk in _map(cfg, _phase_unit, units) for r in chunk]
    return _sorted(rows), factors


def reproduce_row(cfg: ExperimentConfig, row: dict) -> dict:
    """Recompute a single result row from its recorded seed and parameters."""
    snr = _parse(row["snr_db"])
    seed = int(row["seed"])
    J, L = int(row["J"]), int(row["L"])
    scene, meas, op, lift = make_instance(cfg, seed, snr, J, L)
    out = _base_row(row["experiment"], row["solver"], int(row["grid_index"]),
                    int(row["trial"]), seed, scene)
    if row["solver"] == "clup":
        params = dataclasses.replace(cfg.clup, c0=float(row["c0"]), c1=float(row["c1"]))
        clup_row(cfg, scene, meas, op, lift, params, out)
    else:
        admm_row(cfg, scene, meas, op, lift, float(row["lam"]), out)
    return out


def _parse(v):
    if v in ("", None):
        return None
    return float(v)


def rows_equal(a: dict, b: dict) -> bool:
    """Compare two rows by their serialized form, ignoring timing columns."""
    return all(_fmt(a.get(k)) == _fmt(b.get(k)) for k in ROW_FIELDS if k not in VOLATILE_FIELDS)


# -- summaries ---------------------------------------------------------------

def summarize(rows, keys):
    """Mean/std NMSE and success rate grouped by the given row columns."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        nm = np.array([r["nmse_x"] for r in ok], float)
        out.append({**dict(zip(keys, key)), "trials": len(rs), "failed": len(rs) - len(ok),
                    "mean_nmse": float(nm.mean()) if nm.size else math.nan,
                    "std_nmse": float(nm.std()) if nm.size else math.nan,
                    "success_rate": float(np.mean([bool(r["success"]) for r in rs]))})
    return out


def sweep_report(rows, param: str) -> dict:
    summ = summarize(rows, ("snr_db", param))
    snrs = sorted({s["snr_db"] for s in summ}, key=lambda v: -math.inf if v is None else -v)
    curves, argmin = {}, {}
    for snr in snrs:
        pts = sorted((s for s in summ if s["snr_db"] == snr), key=lambda s: s[param])
        name = "noiseless" if snr is None else format(snr, "g")
        curves[name] = {"grid": [s[param] for s in pts],
                        "mean_nmse": [s["mean_nmse"] for s in pts],
                        "std_nmse": [s["std_nmse"] for s in pts]}
        means = np.array(curves[name]["mean_nmse"])
        argmin[name] = (curves[name]["grid"][int(np.nanargmin(means))]
                        if np.any(np.isfinite(means)) else None)
    return {"parameter": param, "curves": curves, "argmin": argmin,
            "between_snr_variance": between_snr_variance(curves)}


def between_snr_variance(curves: dict) -> float:
    """Variance across SNR curves of the mean NMSE, averaged over the grid."""
    M = np.array([c["mean_nmse"] for c in curves.values()], float)
    if M.shape[0] < 2:
        return 0.0
    return float(np.nanmean(np.var(M, axis=0)))


def phase_report(rows, cfg: ExperimentConfig, factors: dict) -> dict:
    cells = _cells(cfg)
    grids = {}
    for solver in cfg.grid.solvers:
        rs = [r for r in rows if r["solver"] == solver]
        rate = {}
        for r in rs:
            rate.setdefault(r["grid_index"], []).append(bool(r["success"]))
        per_snr = {}
        for gi, snr, L, J in cells:
            name = "noiseless" if snr is None else format(snr, "g")
            g = per_snr.setdefault(name, np.full((len(cfg.grid.L), len(cfg.grid.J)), np.nan))
            g[cfg.grid.L.index(L), cfg.grid.J.index(J)] = np.mean(rate.get(gi, [np.nan]))
        grids[solver] = {k: v.tolist() for k, v in per_snr.items()}
    lam = {}
    for gi, snr, L, J in cells:
        if gi in factors:
            lam[f"snr={snr},L={L},J={J}"] = factors[gi]
    return {"rows_are": "L", "columns_are": "J", "L": list(cfg.grid.L), "J": list(cfg.grid.J),
            "success": grids, "admm_lambda_factor": lam}


# -- persistence -----------------------------------------------------------------

def write_results_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in ROW_FIELDS])


def read_results_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=_json_default)


def run_demo(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Single-scene pipeline: CLuP, MUSIC, reflectivities, message, artifacts."""
    seed = int(cfg.seed)
    scene, meas, op, lift = make_instance(cfg, seed)
    pb = as_problem(meas.y, op, lift)
    t0 = time.perf_counter()
    cal = calibrate(pb.y, pb, cfg.clup)
    st = run_clup(pb.y, pb, cfg.clup, truth=scene.x_true, calibration=cal)
    t1 = time.perf_counter()
    rep = analyze(st.x_hat, scene, cfg.extract.n_tau, cfg.extract.n_nu, lift)
    t2 = time.perf_counter()
    rep.timings_ms = {"solve": 1e3 * (t1 - t0), "extract": 1e3 * (t2 - t1)}
    row = _base_row("demo", "clup", 0, 0, seed, scene, c0=cfg.clup.c0, c1=cfg.clup.c1,
                    nmse_x=rep.nmse_x, nmse_g=rep.nmse_g, success=rep.success,
                    tau_err=rep.tau_err, nu_err=rep.nu_err, r_min=cal.r_min, s_min=cal.s_min,
                    outer_iterations=st.outer_iterations, iterations=st.inner_iterations,
                    converged=st.converged, status="ok", wall_ms=1e3 * (t1 - t0))
    report = {
        "experiment": "demo",
        "config": cfg.to_dict(),
        "truth": {"tau": scene.targets.tau.tolist(), "nu": scene.targets.nu.tolist(),
                  "beta": [[b.real, b.imag] for b in scene.targets.beta]},
        "calibration": {"r_min": cal.r_min, "s_min": cal.s_min, "r": cal.r, "s": cal.s},
        "realized_snr_db": (None if meas.snr_db is None else meas.realized_snr_db),
        "outer_iterations": st.outer_iterations,
        "converged": st.converged,
        "recovery": rep.to_dict(),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "report.json"), report)
        write_results_csv(os.path.join(out_dir, "results.csv"), [row])
        write_history_csv(os.path.join(out_dir, "history.csv"), st.history,
                          extra={"solver": "clup"})
        if rep.spectrum is not None:
            rep.spectrum.to_csv(os.path.join(out_dir, "spectrum.csv"))
    report["row"] = row
    report["_report"] = rep
    return report


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Dispatch on ``cfg.kind``; writes ``results.csv`` and ``report.json`` when
    ``out_dir`` is given.  Returns ``(rows, report)``."""
    if cfg.kind == "demo":
        rep = run_demo(cfg, out_dir)
        return [rep["row"]], {k: v for k, v in rep.items() if not k.startswith("_")}
    if cfg.kind in ("sweep_c0", "sweep_c1"):
        rows = run_sweep(cfg)
        report = sweep_report(rows, "c0" if cfg.kind == "sweep_c0" else "c1")
    else:
        rows, factors = run_phase_map(cfg)
        report = phase_report(rows, cfg, factors)
    report = {"experiment": cfg.kind, "config": cfg.to_dict(), "trials": cfg.trials,
              "failed_rows": sum(r["status"] != "ok" for r in rows), **report}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_results_csv(os.path.join(out_dir, "results.csv"), rows)
        write_json(os.path.join(out_dir, "report.json"), report)
    return rows, report
