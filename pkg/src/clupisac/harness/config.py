"""Experiment configuration: JSON schema, defaults and validation.

A config file is a JSON object with the sections below; every section and
key is optional and unknown keys are rejected.

    {
      "kind": "sweep_c0",            # demo | sweep_c0 | sweep_c1 | phase_map | baseline_compare
      "seed": 0, "trials": 20, "workers": 1, "output": "results",
      "scene":   {"M": 15, "P": 9, "L": 2, "Q": 1, "J": 2, "snr_db": 37,
                  "min_sep_tau": null, "min_sep_nu": null},
      "clup":    {"c0": 1.0, "c1": 1.0, "max_outer": 50, "outer_tol": 1e-6,
                  "init": "adjoint", "s_radius": "deployed", "inner": {...}},
      "admm":    {"lam_factor": 0.1, "select_lambda": true,
                  "lam_grid": [0.01, 0.1, 1.0], "holdout_trials": 2,
                  "rho": 1.0, "max_iters": 3000, "tol": 1e-6},
      "grid":    {"snr_db": [...], "c0": [...], "c1": [...], "J": [...], "L": [...],
                  "solvers": ["clup", "admm"]},
      "extract": {"n_tau": 200, "n_nu": 200, "p1": null}
    }

``snr_db`` may be ``"noiseless"`` (or null) anywhere an SNR is accepted.
Missing separations default to one resolution cell, ``1/M`` and ``1/P``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from ..baseline import AdmmParams
from ..clup import ClupParams, InnerSolverParams
from ..linop import default_split
from ..scene import ConfigError, SceneConfig

KINDS = ("demo", "sweep_c0", "sweep_c1", "phase_map", "baseline_compare")
SOLVERS = ("clup", "admm")


def _frange(lo, hi, step):
    n = int(round((hi - lo) / step))
    return tuple(round(lo + k * step, 10) for k in range(n + 1))


# Defaults per experiment kind: scene overrides and grids.
KIND_DEFAULTS = {
    "demo": {"scene": {"snr_db": 37.0}},
    "sweep_c0": {"grid": {"snr_db": (37.0, 31.0, 28.0), "c0": _frange(1.0, 2.6, 0.2)}},
    "sweep_c1": {"grid": {"snr_db": (37.0, 31.0, 28.0), "c1": _frange(1.0, 2.6, 0.2)}},
    "phase_map": {"scene": {"M": 11, "P": 9, "snr_db": 37.0},
                  "grid": {"snr_db": (37.0, 28.0), "J": (1, 2, 3, 4, 5, 6), "L": (1, 2, 3, 4),
                           "solvers": SOLVERS}},
    "baseline_compare": {"scene": {"M": 11, "P": 9, "L": 1, "snr_db": 37.0},
                         "grid": {"snr_db": (37.0, 28.0), "J": (1, 2, 3, 4, 5, 6), "L": (1,),
                                  "solvers": SOLVERS}},
}


@dataclass(frozen=True)
class AdmmConfig:
    """ADMM settings; the penalty is ``lam_factor * ||A^H y||_inf`` per instance."""

    lam_factor: float = 0.1
    select_lambda: bool = True
    lam_grid: tuple = (0.01, 0.1, 1.0)
    holdout_trials: int = 2
    rho: float = 1.0
    max_iters: int = 3000
    tol: float = 1e-6

    def params(self, scale: float, factor: float | None = None) -> AdmmParams:
        f = self.lam_factor if factor is None else factor
        return AdmmParams(lam=f * max(scale, 1e-300), rho=self.rho,
                          max_iters=self.max_iters, tol=self.tol)


@dataclass(frozen=True)
class Grid:
    snr_db: tuple = ()
    c0: tuple = ()
    c1: tuple = ()
    J: tuple = ()
    L: tuple = ()
    solvers: tuple = ("clup",)


@dataclass(frozen=True)
class ExtractConfig:
    n_tau: int = 200
    n_nu: int = 200
    p1: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "demo"
    scene: SceneConfig = field(default_factory=SceneConfig)
    clup: ClupParams = field(default_factory=ClupParams)
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    grid: Grid = field(default_factory=Grid)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    trials: int = 20
    seed: int = 0
    workers: int = 1
    output: str = "results"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scene"].pop("seed")
        snr = d["scene"]["snr_db"]
        d["scene"]["snr_db"] = "noiseless" if snr is None else snr
        d["grid"] = {k: ["noiseless" if v is None else v for v in vals]
                     for k, vals in d["grid"].items() if vals}
        for k in ("lam_grid",):
            d["admm"][k] = list(d["admm"][k])
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


# -- parsing -------------------------------------------------------------------

def _keys(section: str, data, cls_or_keys):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a JSON object, got {type(data).__name__}")
    allowed = (set(f.name for f in dataclasses.fields(cls_or_keys))
               if dataclasses.is_dataclass(cls_or_keys) else set(cls_or_keys))
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")


def _int(where, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{where}: must be >= {lo}, got {v}")
    return v


def _num(where, v, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}: expected a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"{where}: must be > 0, got {v!r}")
    return float(v)


def _snr(where, v):
    if v is None or v == "noiseless":
        return None
    return _num(where, v)


def _list(where, v, conv):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{where}: expected a list, got {v!r}")
    if not v:
        raise ConfigError(f"{where}: grid must be non-empty")
    return tuple(conv(f"{where}[{i}]", x) for i, x in enumerate(v))


def _scene(data: dict, defaults: dict, seed: int) -> SceneConfig:
    _keys("scene", data, ("M", "P", "L", "Q", "J", "snr_db", "min_sep_tau", "min_sep_nu"))
    merged = {**defaults, **data}
    kw = {}
    for k in ("M", "P", "J"):
        if k in merged:
            kw[k] = _int(f"scene.{k}", merged[k], 1)
    for k in ("L", "Q"):
        if k in merged:
            kw[k] = _int(f"scene.{k}", merged[k], 0)
    if "snr_db" in merged:
        kw["snr_db"] = _snr("scene.snr_db", merged["snr_db"])
    M = kw.get("M", SceneConfig.M)
    P = kw.get("P", SceneConfig.P)
    for k, cell in (("min_sep_tau", 1.0 / M), ("min_sep_nu", 1.0 / P)):
        v = merged.get(k)
        kw[k] = cell if v is None else _num(f"scene.{k}", v)
    try:
        return SceneConfig(seed=seed, **kw)
    except ConfigError as exc:
        raise ConfigError(f"scene.{exc}") from None


def _clup(data: dict) -> ClupParams:
    _keys("clup", data, ClupParams)
    kw = dict(data)
    inner = kw.pop("inner", {})
    _keys("clup.inner", inner, InnerSolverParams)
    try:
        for k in ("max_iters", "check_every"):
            if k in inner:
                inner[k] = _int(f"clup.inner.{k}", inner[k], 1)
        for k in ("tol", "feas_tol", "rho"):
            if k in inner:
                inner[k] = _num(f"clup.inner.{k}", inner[k], positive=True)
        inner_p = InnerSolverParams(**inner)
    except ValueError as exc:
        raise ConfigError(f"clup.inner: {exc}") from None
    for k in ("c0", "c1", "outer_tol"):
        if k in kw:
            kw[k] = _num(f"clup.{k}", kw[k])
    if "max_outer" in kw:
        kw["max_outer"] = _int("clup.max_outer", kw["max_outer"], 1)
    try:
        return ClupParams(inner=inner_p, **kw)
    except ValueError as exc:
        raise ConfigError(f"clup: {exc}") from None


def _admm(data: dict) -> AdmmConfig:
    _keys("admm", data, AdmmConfig)
    kw = dict(data)
    for k in ("lam_factor", "rho", "tol"):
        if k in kw:
            kw[k] = _num(f"admm.{k}", kw[k], positive=True)
    for k in ("max_iters", "holdout_trials"):
        if k in kw:
            kw[k] = _int(f"admm.{k}", kw[k], 1)
    if "lam_grid" in kw:
        kw["lam_grid"] = _list("admm.lam_grid", kw["lam_grid"],
                               lambda w, v: _num(w, v, positive=True))
    if "select_lambda" in kw and not isinstance(kw["select_lambda"], bool):
        raise ConfigError(f"admm.select_lambda: expected true/false, got {kw['select_lambda']!r}")
    return AdmmConfig(**kw)


def _grid(data: dict, defaults: dict) -> Grid:
    _keys("grid", data, Grid)
    merged = {**defaults, **data}
    kw = {}
    if "snr_db" in merged:
        kw["snr_db"] = _list("grid.snr_db", merged["snr_db"], _snr)
    for k in ("c0", "c1"):
        if k in merged:
            kw[k] = _list(f"grid.{k}", merged[k], _num)
            bad = [v for v in kw[k] if v < 1]
            if bad:
                raise ConfigError(f"grid.{k}: values must be >= 1, got {bad}")
    if "J" in merged:
        kw["J"] = _list("grid.J", merged["J"], lambda w, v: _int(w, v, 1))
    if "L" in merged:
        kw["L"] = _list("grid.L", merged["L"], lambda w, v: _int(w, v, 0))
    if "solvers" in merged:
        def solver(w, v):
            if v not in SOLVERS:
                raise ConfigError(f"{w}: solver must be one of {SOLVERS}, got {v!r}")
            return v
        kw["solvers"] = _list("grid.solvers", merged["solvers"], solver)
    return Grid(**kw)


def _extract(data: dict, P: int) -> ExtractConfig:
    _keys("extract", data, ExtractConfig)
    n_tau = _int("extract.n_tau", data.get("n_tau", 200), 8)
    n_nu = _int("extract.n_nu", data.get("n_nu", 200), 8)
    p1 = data.get("p1")
    p1 = default_split(P)[0] if p1 is None else _int("extract.p1", p1, 1)
    if p1 > P:
        raise ConfigError(f"extract.p1: must satisfy 1 <= p1 <= P = {P}, got {p1}")
    return ExtractConfig(n_tau, n_nu, p1)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate a parsed JSON document and fill defaults."""
    _keys("config", doc, ExperimentConfig)
    kind = doc.get("kind", "demo")
    if kind not in KINDS:
        raise ConfigError(f"kind: must be one of {', '.join(KINDS)}, got {kind!r}")
    defaults = KIND_DEFAULTS[kind]
    seed = _int("seed", doc.get("seed", 0), 0)
    if seed >= 2**63:
        raise ConfigError(f"seed: must be < 2**63, got {seed}")
    trials = _int("trials", doc.get("trials", 20), 1)
    workers = _int("workers", doc.get("workers", 1), 1)
    output = doc.get("output", "results")
    if not isinstance(output, str) or not output:
        raise ConfigError(f"output: expected a non-empty path string, got {output!r}")
    scene = _scene(doc.get("scene", {}), defaults.get("scene", {}), seed)
    grid = _grid(doc.get("grid", {}), defaults.get("grid", {}))
    cfg = ExperimentConfig(kind=kind, scene=scene, clup=_clup(doc.get("clup", {})),
                           admm=_admm(doc.get("admm", {})), grid=grid,
                           extract=_extract(doc.get("extract", {}), scene.P),
                           trials=trials, seed=seed, workers=workers, output=output)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks that depend on the experiment kind."""
    g = cfg.grid
    need = {"sweep_c0": ("snr_db", "c0"), "sweep_c1": ("snr_db", "c1"),
            "phase_map": ("J", "L", "solvers"), "baseline_compare": ("J", "L", "solvers")}
    for k in need.get(cfg.kind, ()):
        if not getattr(g, k):
            raise ConfigError(f"grid.{k}: grid must be non-empty for kind {cfg.kind!r}")
    sc = cfg.scene
    if cfg.kind in ("phase_map", "baseline_compare"):
        for J in g.J:
            if J >= sc.M:
                raise ConfigError(f"grid.J: J < M required (J={J}, M={sc.M})")
        lmax = math.ceil((sc.P + 1) / 2)
        for L in g.L:
            if L >= lmax:
                raise ConfigError(f"grid.L: L < ceil((P+1)/2) = {lmax} required (L={L})")
    p2 = sc.P + 1 - cfg.extract.p1
    Ls = g.L if cfg.kind in ("phase_map", "baseline_compare") else (sc.L,)
    for L in Ls:
        if L >= p2:
            raise ConfigError(f"extract.p1: leaves p2 = {p2} Hankel columns, "
                              f"need more than L = {L}")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from None
    return config_from_dict(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
