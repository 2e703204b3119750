"""Post-processing of a recovered unknown vector.

Hankel-MUSIC delay/Doppler estimation, reflectivity least squares, message
decoding and scoring against a ground-truth scene.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .linop import HankelLift
from .scene import ConfigError, Scene, wrap_distance

SUCCESS_NMSE = 0.1


@dataclass(frozen=True, eq=False)
class PseudoSpectrum:
    grid_tau: np.ndarray
    grid_nu: np.ndarray
    values: np.ndarray  # shape (len(grid_tau), len(grid_nu))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "nu", "value"])
            for i, t in enumerate(self.grid_tau):
                for j, n in enumerate(self.grid_nu):
                    w.writerow([format(t, ".17g"), format(n, ".17g"),
                                format(self.values[i, j], ".17g")])


def _delay_grid(taus, M):
    return np.exp(-2j * np.pi * np.outer(np.arange(M), taus))  # (M, n_tau)


def music_spectrum(H, L: int, M: int, n_tau: int = 200, n_nu: int = 200) -> PseudoSpectrum:
    """MUSIC pseudo-spectrum ``1 / ||U_n^H b(tau, nu)||^2`` of a Hankel lift.

    ``b(tau, nu) = d(nu) kron a(tau)`` normalized, where ``d`` has ``p1``
    entries ``exp(-j 2 pi nu k)``.  The noise-subspace energy is evaluated as
    ``1 - ||U_s^H b||^2`` using the ``L`` dominant left singular vectors.
    """
    H = np.asarray(H, dtype=complex)
    rows, p2 = H.shape
    if rows % M:
        raise ConfigError(f"Hankel rows {rows} not a multiple of M={M}")
    p1 = rows // M
    if L < 0 or L >= p2 or L >= rows:
        raise ConfigError(f"MUSIC needs 0 <= L < min(p1*M, p2) (L={L}, p1*M={rows}, p2={p2})")
    grid_tau = np.arange(n_tau) / n_tau
    grid_nu = np.arange(n_nu) / n_nu
    U, _, _ = np.linalg.svd(H, full_matrices=False)
    Us = U[:, :L]
    At = _delay_grid(grid_tau, M)          # (M, n_tau)
    Dn = _delay_grid(grid_nu, p1).T        # (n_nu, p1)
    energy = np.zeros((n_tau, n_nu))
    for l in range(L):
        W = Us[:, l].reshape(p1, M).conj()  # block k holds the entries paired with z^k
        proj = (Dn @ W @ At).T              # (n_tau, n_nu) = u_l^H (d kron a)
        energy += np.abs(proj) ** 2
    energy /= p1 * M
    noise = np.maximum(1.0 - energy, np.finfo(float).eps)
    return PseudoSpectrum(grid_tau, grid_nu, 1.0 / noise)


@dataclass
class Peaks:
    taus: np.ndarray
    nus: np.ndarray
    cells: list
    values: np.ndarray
    complete: bool

    def as_list(self):
        return list(zip(self.taus.tolist(), self.nus.tolist()))


def _parabolic_offset(vm, v0, vp):
    den = vm - 2.0 * v0 + vp
    if den >= 0 or not np.isfinite(den):
        return 0.0
    return float(np.clip(0.5 * (vm - vp) / den, -0.5, 0.5))


def pick_peaks(spec: PseudoSpectrum, L: int, refine: bool = True) -> Peaks:
    """The ``L`` largest toroidal local maxima (8-neighbour), optionally refined.

    Ties are broken by lexicographic cell index.  Refinement is one
    quadratic interpolation step per axis on the log spectrum.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    V = spec.values
    is_max = np.ones(V.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_max &= V >= np.roll(np.roll(V, di, axis=0), dj, axis=1)
    cand = np.argwhere(is_max)
    order = sorted(range(len(cand)), key=lambda k: (-V[tuple(cand[k])], tuple(cand[k])))
    chosen = [tuple(int(c) for c in cand[k]) for k in order[:L]]
    nt, nn = V.shape
    dt = spec.grid_tau[1] - spec.grid_tau[0] if nt > 1 else 1.0
    dn = spec.grid_nu[1] - spec.grid_nu[0] if nn > 1 else 1.0
    taus, nus, vals = [], [], []
    logV = np.log(V)
    for i, j in chosen:
        ti, nj = spec.grid_tau[i], spec.grid_nu[j]
        if refine:
            if nt > 2:
                ti += dt * _parabolic_offset(logV[(i - 1) % nt, j], logV[i, j], logV[(i + 1) % nt, j])
            if nn > 2:
                nj += dn * _parabolic_offset(logV[i, (j - 1) % nn], logV[i, j], logV[i, (j + 1) % nn])
        taus.append(ti % 1.0)
        nus.append(nj % 1.0)
        vals.append(V[i, j])
    return Peaks(np.array(taus), np.array(nus), chosen, np.array(vals), len(chosen) == L)


@dataclass
class ReflectivityFit:
    beta: np.ndarray
    residual: float
    rank_deficient: bool


def radar_design(taus, nus, M: int, P: int) -> np.ndarray:
    """Columns ``vec_p(a(tau_l) exp(-j 2 pi nu_l p))``, shape (M P, L)."""
    taus = np.asarray(taus, float)
    nus = np.asarray(nus, float)
    m = np.arange(M)
    p = np.arange(P)
    cols = np.exp(-2j * np.pi * (p[:, None, None] * nus + m[None, :, None] * taus))
    return cols.reshape(M * P, len(taus))


def fit_reflectivities(h_r_hat, taus, nus, M: int, P: int) -> ReflectivityFit:
    """Least-squares reflectivities for fixed delays/Dopplers (QR, min-norm fallback)."""
    h = np.asarray(h_r_hat, dtype=complex)
    if len(taus) == 0:
        return ReflectivityFit(np.zeros(0, complex), float(np.linalg.norm(h)), False)
    B = radar_design(taus, nus, M, P)
    Qm, R = np.linalg.qr(B)
    diag = np.abs(np.diag(R))
    deficient = bool(diag.min() <= 1e-10 * max(diag.max(), 1e-300))
    if deficient:
        beta = np.linalg.lstsq(B, h, rcond=None)[0]
    else:
        beta = np.linalg.solve(R, Qm.conj().T @ h)
    return ReflectivityFit(beta, float(np.linalg.norm(h - B @ beta)), deficient)


def decode_message(x_hat, D, M: int | None = None, P: int | None = None) -> np.ndarray:
    """Message symbols ``g = D v`` from a normalized estimate ``x_hat``.

    ``D`` holds the per-pulse bases with shape (P, M, J).
    """
    D = np.asarray(D, dtype=float)
    P_, M_, J = D.shape
    x_hat = np.asarray(x_hat, dtype=complex)
    N = (M_ + J) * P_
    if x_hat.shape != (N,):
        raise ValueError(f"x_hat: expected shape ({N},), got {x_hat.shape}")
    v = math.sqrt(N) * x_hat[M_ * P_:]
    return np.einsum("pmj,pj->pm", D, v.reshape(P_, J)).ravel()


def frame_norms(g, M: int, P: int) -> np.ndarray:
    """Per-frame message norms ``||g_p||``."""
    return np.linalg.norm(np.asarray(g).reshape(P, M), axis=1)


def match_targets(tau_hat, nu_hat, tau, nu):
    """Greedy minimal toroidal-distance pairing of estimates to truth.

    Returns ``pairs`` as a list of (truth index, estimate index).
    """
    tau_hat, nu_hat = np.asarray(tau_hat), np.asarray(nu_hat)
    tau, nu = np.asarray(tau), np.asarray(nu)
    if len(tau) == 0 or len(tau_hat) == 0:
        return []
    dist = np.hypot(wrap_distance(tau[:, None], tau_hat[None, :]),
                    wrap_distance(nu[:, None], nu_hat[None, :]))
    pairs = []
    used_t, used_e = set(), set()
    for flat in np.argsort(dist, axis=None, kind="stable"):
        t, e = np.unravel_index(flat, dist.shape)
        if t in used_t or e in used_e:
            continue
        pairs.append((int(t), int(e)))
        used_t.add(t)
        used_e.add(e)
    return sorted(pairs)


@dataclass
class RecoveryReport:
    nmse_x: float
    nmse_g: float
    success: bool
    tau_hat: list = field(default_factory=list)
    nu_hat: list = field(default_factory=list)
    beta_hat: list = field(default_factory=list)
    tau_err: list = field(default_factory=list)
    nu_err: list = field(default_factory=list)
    matched_truth: list = field(default_factory=list)
    g_hat: np.ndarray | None = field(default=None, repr=False)
    frame_norms_hat: list = field(default_factory=list)
    frame_norms_true: list = field(default_factory=list)
    spectrum: PseudoSpectrum | None = field(default=None, repr=False)
    timings_ms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("g_hat", "spectrum", "beta_hat")}
        d["beta_hat"] = [[b.real, b.imag] for b in np.asarray(self.beta_hat, complex)]
        if self.g_hat is not None:
            d["g_hat"] = np.stack([self.g_hat.real, self.g_hat.imag], axis=-1).tolist()
        return d

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _nmse(est, ref):
    den = np.linalg.norm(ref)
    num = np.linalg.norm(np.asarray(est) - ref)
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return float(num / den)


def score(x_hat, scene: Scene, tau_hat=(), nu_hat=(), beta_hat=()) -> RecoveryReport:
    """NMSE of the unknowns and of the message, plus target matching."""
    x_hat = np.asarray(x_hat, dtype=complex)
    x_true = scene.x_true
    nmse_x = _nmse(x_hat, x_true)
    g_hat = decode_message(x_hat, scene.D)
    g = scene.g
    rep = RecoveryReport(nmse_x=nmse_x, nmse_g=_nmse(g_hat, g), success=bool(nmse_x < SUCCESS_NMSE),
                         g_hat=g_hat,
                         frame_norms_hat=frame_norms(g_hat, scene.M, scene.P).tolist(),
                         frame_norms_true=frame_norms(g, scene.M, scene.P).tolist())
    tau_hat = np.asarray(tau_hat, float)
    nu_hat = np.asarray(nu_hat, float)
    beta_hat = np.asarray(beta_hat, complex)
    pairs = match_targets(tau_hat, nu_hat, scene.targets.tau, scene.targets.nu)
    for t, e in pairs:
        rep.matched_truth.append(t)
        rep.tau_hat.append(float(tau_hat[e]))
        rep.nu_hat.append(float(nu_hat[e]))
        if len(beta_hat) > e:
            rep.beta_hat.append(complex(beta_hat[e]))
        rep.tau_err.append(float(wrap_distance(tau_hat[e], scene.targets.tau[t])))
        rep.nu_err.append(float(wrap_distance(nu_hat[e], scene.targets.nu[t])))
    return rep


def analyze(x_hat, scene: Scene, n_tau: int = 200, n_nu: int = 200,
            lift: HankelLift | None = None) -> RecoveryReport:
    """Full post-processing: lift, MUSIC, peaks, reflectivities, scoring."""
    M, P, L = scene.M, scene.P, scene.config.L
    lift = lift or HankelLift.for_pulses(M, P)
    h_hat = math.sqrt(scene.N) * np.asarray(x_hat, complex)[:M * P]
    spec = None
    taus = nus = np.zeros(0)
    beta = np.zeros(0, complex)
    if L > 0:
        spec = music_spectrum(lift.lift(h_hat), L, M, n_tau, n_nu)
        peaks = pick_peaks(spec, L)
        taus, nus = peaks.taus, peaks.nus
        beta = fit_reflectivities(h_hat, taus, nus, M, P).beta
    rep = score(x_hat, scene, taus, nus, beta)
    rep.spectrum = spec
    return rep
