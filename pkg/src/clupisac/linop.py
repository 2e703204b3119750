"""Forward measurement operator and the block-Hankel lift of the radar channel."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .scene import ConfigError, Scene


def index_map(n: int, p: int, M: int, P: int | None = None) -> int:
    """Flat measurement index of frequency sample ``n`` in pulse ``p``."""
    if not 0 <= n < M or p < 0 or (P is not None and p >= P):
        raise IndexError(f"(n={n}, p={p}) out of range for M={M}, P={P}")
    return n + p * M


@dataclass(frozen=True, eq=False)
class ForwardOperator:
    """Linear map from the stacked unknown ``[h_r; v]`` to the measurements.

    ``(A x)[n + pM] = scale * (s[n] h_r,p[n] + Hc[p, n] (D_p v_p)[n])``.
    With ``scale = sqrt(N)`` the operator acts directly on the normalized
    unknown ``x_tilde``.
    """

    s: np.ndarray   # (M,)
    Hc: np.ndarray  # (P, M)
    D: np.ndarray   # (P, M, J)
    scale: float

    @classmethod
    def from_scene(cls, scene: Scene, scale: float | None = None) -> "ForwardOperator":
        if scale is None:
            scale = math.sqrt(scene.N)
        return cls(np.asarray(scene.s, complex), scene.Hc, np.asarray(scene.D, float),
                   float(scale))

    @property
    def M(self) -> int:
        return self.s.shape[0]

    @property
    def P(self) -> int:
        return self.Hc.shape[0]

    @property
    def J(self) -> int:
        return self.D.shape[2]

    @property
    def n_hr(self) -> int:
        return self.M * self.P

    @property
    def shape(self) -> tuple[int, int]:
        return self.M * self.P, (self.M + self.J) * self.P

    def _check(self, a, size, what):
        a = np.asarray(a, dtype=complex)
        if a.shape != (size,):
            raise ValueError(f"{what}: expected shape ({size},), got {a.shape}")
        return a

    def forward(self, x) -> np.ndarray:
        M, P, J = self.M, self.P, self.J
        x = self._check(x, self.shape[1], "x")
        h = x[:M * P].reshape(P, M)
        v = x[M * P:].reshape(P, J)
        g = np.einsum("pmj,pj->pm", self.D, v)
        return (self.scale * (self.s[None, :] * h + self.Hc * g)).ravel()

    def adjoint(self, u) -> np.ndarray:
        M, P = self.M, self.P
        u = self._check(u, self.shape[0], "u").reshape(P, M)
        h = np.conj(self.s)[None, :] * u
        v = np.einsum("pmj,pm->pj", self.D, np.conj(self.Hc) * u)
        return self.scale * np.concatenate([h.ravel(), v.ravel()])

    def dense(self) -> np.ndarray:
        M, P, J = self.M, self.P, self.J
        A = np.zeros(self.shape, dtype=complex)
        rows = np.arange(M * P)
        A[rows, rows] = np.tile(self.s, P)
        for p in range(P):
            blk = self.Hc[p][:, None] * self.D[p]
            A[p * M:(p + 1) * M, M * P + p * J:M * P + (p + 1) * J] = blk
        return self.scale * A

    def norm_estimate(self, iters: int = 200, seed: int = 0) -> float:
        """Spectral norm by power iteration on A^H A."""
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(self.shape[1]) + 1j * rng.standard_normal(self.shape[1])
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(iters):
            w = self.adjoint(self.forward(x))
            lam = np.linalg.norm(w)
            if lam == 0:
                return 0.0
            x = w / lam
        return float(np.sqrt(lam))


def apply_forward(op: ForwardOperator, x) -> np.ndarray:
    return op.forward(x)


def apply_adjoint(op: ForwardOperator, u) -> np.ndarray:
    return op.adjoint(u)


def materialize_dense(op: ForwardOperator) -> np.ndarray:
    return op.dense()


def save_operator(path, op: ForwardOperator) -> None:
    """Write an ``.npz`` snapshot: dense ``A`` plus its defining factors."""
    np.savez(path, A=op.dense(), s=op.s, Hc=op.Hc, D=op.D, scale=op.scale,
             dims=np.array([op.M, op.P, op.J]))


def load_operator(path) -> tuple[ForwardOperator, np.ndarray]:
    with np.load(path) as f:
        op = ForwardOperator(f["s"], f["Hc"], f["D"], float(f["scale"]))
        return op, f["A"]


def save_operator_json(path, op: ForwardOperator) -> None:
    A = op.dense()
    doc = {"dims": {"M": op.M, "P": op.P, "J": op.J}, "scale": op.scale,
           "A": np.stack([A.real, A.imag], axis=-1).tolist()}
    Path(path).write_text(json.dumps(doc))


# -- Hankel lift ---------------------------------------------------------------

def default_split(P: int) -> tuple[int, int]:
    p1 = math.ceil((P + 1) / 2)
    return p1, P + 1 - p1


@dataclass(frozen=True)
class HankelLift:
    """Block-Hankel lift of P stacked M-vectors into a (p1 M) x p2 matrix.

    Block (i, j) equals pulse block ``i + j``.
    """

    M: int
    p1: int
    p2: int

    def __post_init__(self):
        if self.M < 1 or self.p1 < 1 or self.p2 < 1:
            raise ConfigError(f"invalid Hankel dims M={self.M}, p1={self.p1}, p2={self.p2}")

    @classmethod
    def for_pulses(cls, M: int, P: int, p1: int | None = None,
                   p2: int | None = None) -> "HankelLift":
        if p1 is None and p2 is None:
            p1, p2 = default_split(P)
        elif p2 is None:
            p2 = P + 1 - p1
        elif p1 is None:
            p1 = P + 1 - p2
        if p1 + p2 != P + 1:
            raise ConfigError(f"p1 + p2 must equal P + 1 (p1={p1}, p2={p2}, P={P})")
        return cls(M, p1, p2)

    @property
    def P(self) -> int:
        return self.p1 + self.p2 - 1

    @property
    def size(self) -> int:
        return self.M * self.P

    @property
    def shape(self) -> tuple[int, int]:
        return self.p1 * self.M, self.p2

    def lift(self, h) -> np.ndarray:
        h = np.ascontiguousarray(h, dtype=complex)
        if h.shape != (self.size,):
            raise ValueError(f"h: expected shape ({self.size},), got {h.shape}")
        return K.hankel_lift(h, self.M, self.p1, self.p2)

    def adjoint(self, G) -> np.ndarray:
        G = np.ascontiguousarray(G, dtype=complex)
        if G.shape != self.shape:
            raise ValueError(f"G: expected shape {self.shape}, got {G.shape}")
        return K.hankel_adjoint(G, self.M, self.p1, self.p2)

    def weights(self) -> np.ndarray:
        """Diagonal of the Gram operator H* H."""
        return K.hankel_weights(self.M, self.p1, self.p2)


def _lift_from_split(p1, p2, length, what):
    if p1 < 1 or p2 < 1:
        raise ConfigError(f"p1, p2 must be positive (p1={p1}, p2={p2})")
    P = p1 + p2 - 1
    if length % P:
        raise ConfigError(f"{what} length {length} is not a multiple of P = p1 + p2 - 1 = {P}")
    return HankelLift(length // P, p1, p2)


def hankel_lift(h_r, p1: int, p2: int, P: int | None = None) -> np.ndarray:
    """Lift the stacked radar channel ``h_r`` (length M P) into (p1 M) x p2."""
    if P is not None and p1 + p2 != P + 1:
        raise ConfigError(f"p1 + p2 must equal P + 1 (p1={p1}, p2={p2}, P={P})")
    h_r = np.asarray(h_r)
    return _lift_from_split(p1, p2, h_r.shape[0], "h_r").lift(h_r)


def hankel_adjoint(G, p1: int, p2: int) -> np.ndarray:
    G = np.asarray(G)
    if G.ndim != 2 or G.shape[1] != p2 or G.shape[0] % p1:
        raise ValueError(f"G shape {G.shape} incompatible with p1={p1}, p2={p2}")
    return HankelLift(G.shape[0] // p1, p1, p2).adjoint(G)
