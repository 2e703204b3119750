"""Ground-truth scenes and synthetic frequency-domain ISAC measurements.

Measurements are indexed by frequency sample ``n = 0..M-1`` and pulse/frame
``p = 0..P-1`` and flattened as ``n + p*M``.  The unknown vector stacks the
radar channel blocks and the message coefficients,

    x = [h_r,0; ...; h_r,P-1; v_0; ...; v_P-1],   x_tilde = x / sqrt(N),

with ``N = (M + J) P``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAX_REJECTION_ATTEMPTS = 10_000


class ConfigError(ValueError):
    """Invalid scene or experiment configuration."""


class InfeasibleSeparationError(RuntimeError):
    """Rejection sampling could not meet the requested separation floors."""


@dataclass(frozen=True)
class SceneConfig:
    M: int = 15
    P: int = 9
    L: int = 2
    Q: int = 1
    J: int = 2
    snr_db: float | None = None  # None means noiseless
    min_sep_tau: float = 0.0
    min_sep_nu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("M", "P", "J"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or isinstance(val, bool) or val < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {val!r}")
        for name in ("L", "Q"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or isinstance(val, bool) or val < 0:
                raise ConfigError(f"{name}: must be a nonnegative integer, got {val!r}")
        if self.J >= self.M:
            raise ConfigError(f"J: J < M required (J={self.J}, M={self.M})")
        lmax = math.ceil((self.P + 1) / 2)
        if self.L >= lmax:
            raise ConfigError(f"L: L < ceil((P+1)/2) = {lmax} required (L={self.L})")
        for name in ("min_sep_tau", "min_sep_nu"):
            val = getattr(self, name)
            if not 0.0 <= val < 0.5:
                raise ConfigError(f"{name}: must lie in [0, 0.5), got {val!r}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ConfigError(f"snr_db: must be finite or 'noiseless', got {self.snr_db!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed: must be a 64-bit unsigned integer, got {self.seed!r}")

    @property
    def N(self) -> int:
        return (self.M + self.J) * self.P

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None


@dataclass(frozen=True)
class RadarTargets:
    beta: np.ndarray
    tau: np.ndarray
    nu: np.ndarray

    @property
    def L(self) -> int:
        return len(self.beta)


@dataclass(frozen=True)
class CommPaths:
    alpha: np.ndarray
    tau_c: np.ndarray
    nu_c: np.ndarray

    @property
    def Q(self) -> int:
        return len(self.alpha)


def steering_vector(tau: float, M: int) -> np.ndarray:
    """Delay steering vector ``exp(-j 2 pi tau m)``, ``m = 0..M-1``."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau!r}")
    if M < 1:
        raise ValueError(f"M must be positive, got {M!r}")
    return np.exp(-2j * np.pi * tau * np.arange(M))


def radar_channel_block(targets: RadarTargets, p: int, M: int) -> np.ndarray:
    h = np.zeros(M, dtype=complex)
    for beta, tau, nu in zip(targets.beta, targets.tau, targets.nu):
        h += beta * steering_vector(tau, M) * np.exp(-2j * np.pi * nu * p)
    return h


def comm_response_block(paths: CommPaths, p: int, M: int) -> np.ndarray:
    """Known comm frequency response multiplying the message at pulse ``p``."""
    m = np.arange(M)
    h = np.zeros(M, dtype=complex)
    for alpha, tau, nu in zip(paths.alpha, paths.tau_c, paths.nu_c):
        h += alpha * np.exp(-2j * np.pi * (m * tau + p * nu))
    return h


def wrap_distance(a, b):
    """Distance on the unit circle [0, 1)."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


def _separated(vals: np.ndarray, floor: float) -> bool:
    if floor <= 0.0 or len(vals) < 2:
        return True
    i, j = np.triu_indices(len(vals), k=1)
    return bool(np.all(wrap_distance(vals[i], vals[j]) >= floor))


def _draw_params(rng, count, sep_tau, sep_nu):
    for _ in range(MAX_REJECTION_ATTEMPTS):
        tau = rng.random(count)
        nu = rng.random(count)
        if _separated(tau, sep_tau) and _separated(nu, sep_nu):
            return tau, nu
    raise InfeasibleSeparationError(
        f"could not place {count} components with separations "
        f"({sep_tau}, {sep_nu}) in {MAX_REJECTION_ATTEMPTS} attempts")


def _cgauss(rng, size):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


@dataclass(frozen=True)
class Scene:
    """A sampled ground truth: channels, known waveform/basis, and message."""

    config: SceneConfig
    targets: RadarTargets
    paths: CommPaths
    s: np.ndarray  # waveform spectrum, length M
    D: np.ndarray  # subspace basis blocks, shape (P, M, J), real
    v: np.ndarray  # message coefficients, length J*P

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def P(self) -> int:
        return self.config.P

    @property
    def J(self) -> int:
        return self.config.J

    @property
    def N(self) -> int:
        return self.config.N

    @property
    def h_r(self) -> np.ndarray:
        return np.concatenate([radar_channel_block(self.targets, p, self.M)
                               for p in range(self.P)])

    @property
    def Hc(self) -> np.ndarray:
        """Comm frequency responses, shape (P, M)."""
        return np.stack([comm_response_block(self.paths, p, self.M) for p in range(self.P)])

    @property
    def g(self) -> np.ndarray:
        """Message symbols ``g = D v``, flattened like the measurements."""
        return np.einsum("pmj,pj->pm", self.D, self.v.reshape(self.P, self.J)).ravel()

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.h_r, self.v])

    @property
    def x_true(self) -> np.ndarray:
        return self.x / np.sqrt(self.N)

    def D_block_diag(self) -> np.ndarray:
        """Dense block-diagonal basis of shape (M P, J P)."""
        out = np.zeros((self.M * self.P, self.J * self.P))
        for p in range(self.P):
            out[p * self.M:(p + 1) * self.M, p * self.J:(p + 1) * self.J] = self.D[p]
        return out


def sample_scene(config: SceneConfig, rng: np.random.Generator | None = None) -> Scene:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    M, P, L, Q, J = config.M, config.P, config.L, config.Q, config.J

    tau, nu = _draw_params(rng, L, config.min_sep_tau, config.min_sep_nu)
    beta = _cgauss(rng, L)
    if L:
        beta = beta / np.abs(beta).sum()
    tau_c, nu_c = _draw_params(rng, Q, config.min_sep_tau, config.min_sep_nu)
    alpha = _cgauss(rng, Q) / np.sqrt(max(Q, 1))

    s = _cgauss(rng, M)
    while np.any(s == 0):  # measure-zero event, keeps every row informative
        s = _cgauss(rng, M)
    D = rng.standard_normal((P, M, J))
    v = np.exp(0.5j * np.pi * (rng.integers(0, 4, J * P) + 0.5))
    v = v / np.linalg.norm(v)

    targets = RadarTargets(beta=beta, tau=tau, nu=nu)
    scene = Scene(config, targets, CommPaths(alpha, tau_c, nu_c), s, D, v)

    # Box feasibility of x_tilde: |Re|, |Im| <= 1/sqrt(N)  <=>  |Re x|, |Im x| <= 1.
    x = scene.x
    peak = max(np.abs(x.real).max(initial=0.0), np.abs(x.imag).max(initial=0.0))
    if peak > 1.0:
        targets = RadarTargets(beta=beta / peak, tau=tau, nu=nu)
        scene = Scene(config, targets, scene.paths, s, D, v / peak)
    return scene


@dataclass(frozen=True)
class MeasurementSet:
    y: np.ndarray
    sigma: float
    snr_db: float | None
    x_true: np.ndarray
    noise: np.ndarray = field(repr=False)

    @property
    def realized_snr_db(self) -> float:
        N = len(self.x_true)
        sig = np.sum(np.abs(self.x_true) ** 2) * N
        nse = np.sum(np.abs(self.noise) ** 2)
        return float("inf") if nse == 0 else float(10 * np.log10(sig / nse))


def noise_sigma(x: np.ndarray, n_meas: int, snr_db: float) -> float:
    """Per-sample noise std so that E||sigma n||^2 = ||x||^2 / 10^(snr/10)."""
    return float(np.linalg.norm(x) / np.sqrt(n_meas * 10.0 ** (snr_db / 10.0)))


def synthesize(scene: Scene, rng: np.random.Generator | None = None) -> MeasurementSet:
    """Noisy measurements ``y = sqrt(N) A(x_tilde) + xi``."""
    from .linop import ForwardOperator

    op = ForwardOperator.from_scene(scene)
    x_true = scene.x_true
    clean = op.forward(x_true)
    cfg = scene.config
    if cfg.noiseless:
        return MeasurementSet(clean, 0.0, None, x_true, np.zeros_like(clean))
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    sigma = noise_sigma(scene.x, len(clean), cfg.snr_db)
    noise = sigma * _cgauss(rng, len(clean))
    return MeasurementSet(clean + noise, sigma, cfg.snr_db, x_true, noise)


# -- JSON snapshots -----------------------------------------------------------

def _enc(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return np.stack([a.real, a.imag], axis=-1).tolist()
    return a.tolist()


def _dec_complex(data):
    a = np.asarray(data, dtype=float)
    if a.size == 0:
        return np.zeros(a.shape[:-1] if a.ndim > 1 else (0,), dtype=complex)
    return a[..., 0] + 1j * a[..., 1]


def scene_to_dict(scene: Scene, meas: MeasurementSet | None = None) -> dict:
    cfg = asdict(scene.config)
    if cfg["snr_db"] is None:
        cfg["snr_db"] = "noiseless"
    doc = {
        "config": cfg,
        "targets": {"beta": _enc(scene.targets.beta), "tau": _enc(scene.targets.tau),
                    "nu": _enc(scene.targets.nu)},
        "paths": {"alpha": _enc(scene.paths.alpha), "tau_c": _enc(scene.paths.tau_c),
                  "nu_c": _enc(scene.paths.nu_c)},
        "s": _enc(scene.s),
        "D": _enc(scene.D),
        "v": _enc(scene.v),
    }
    if meas is not None:
        doc["measurements"] = {
            "y": _enc(meas.y), "sigma": meas.sigma,
            "snr_db": "noiseless" if meas.snr_db is None else meas.snr_db,
            "x_true": _enc(meas.x_true), "noise": _enc(meas.noise),
        }
    return doc


def scene_from_dict(doc: dict) -> tuple[Scene, MeasurementSet | None]:
    cfg = dict(doc["config"])
    if cfg.get("snr_db") == "noiseless":
        cfg["snr_db"] = None
    config = SceneConfig(**cfg)
    t, pth = doc["targets"], doc["paths"]
    scene = Scene(
        config,
        RadarTargets(_dec_complex(t["beta"]), np.asarray(t["tau"], float),
                     np.asarray(t["nu"], float)),
        CommPaths(_dec_complex(pth["alpha"]), np.asarray(pth["tau_c"], float),
                  np.asarray(pth["nu_c"], float)),
        _dec_complex(doc["s"]),
        np.asarray(doc["D"], float).reshape(config.P, config.M, config.J),
        _dec_complex(doc["v"]),
    )
    meas = None
    if "measurements" in doc:
        m = doc["measurements"]
        snr = None if m["snr_db"] == "noiseless" else float(m["snr_db"])
        meas = MeasurementSet(_dec_complex(m["y"]), float(m["sigma"]), snr,
                              _dec_complex(m["x_true"]), _dec_complex(m["noise"]))
    return scene, meas


def save_scene(path, scene: Scene, meas: MeasurementSet | None = None) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene, meas), indent=1))


def load_scene(path) -> tuple[Scene, MeasurementSet | None]:
    return scene_from_dict(json.loads(Path(path).read_text()))
