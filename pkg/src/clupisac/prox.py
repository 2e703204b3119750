"""Exact Euclidean projections onto the constraint sets of the CLuP subproblem.

* box:            |Re x_i| <= b and |Im x_i| <= b
* residual ball:  ||y - A x|| <= r
* nuclear ball:   ||X||_* <= s
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K

SVD_CUTOFF = 1e-12
ROOT_TOL = 1e-10


class InfeasibleError(ValueError):
    """The requested constraint set is empty."""


def project_box(x, b: float) -> np.ndarray:
    if b <= 0:
        raise ValueError(f"box bound must be positive, got {b!r}")
    return K.box(np.asarray(x, dtype=complex), float(b))


def project_l1_simplex(sigma, s: float) -> np.ndarray:
    """Project nonnegative ``sigma`` onto {w >= 0, sum(w) <= s}."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    return K.simplex(sigma, float(s))


def project_nuclear_ball(X, s: float) -> np.ndarray:
    if s < 0:
        raise ValueError(f"nuclear budget must be nonnegative, got {s!r}")
    return K.nuclear_project(np.ascontiguousarray(X, dtype=complex), float(s))


def singular_value_threshold(X, t: float) -> np.ndarray:
    """Proximal operator of ``t * ||.||_*``."""
    return K.svt(np.ascontiguousarray(X, dtype=complex), float(t))


def nuclear_norm(X) -> float:
    return float(K.nuclear_norm(np.ascontiguousarray(X, dtype=complex)))


class ProjectionToolkit:
    """Cached thin SVD of a dense operator for residual-ball projections.

    Parameters
    ----------
    A : (m, n) complex array
        Dense forward operator.
    y : (m,) complex array
        Measurements defining the ball center.
    cutoff : float
        Singular values below ``cutoff * sigma_max`` are treated as zero.
    """

    def __init__(self, A, y, cutoff: float = SVD_CUTOFF, tol: float = ROOT_TOL):
        A = np.asarray(A, dtype=complex)
        y = np.asarray(y, dtype=complex)
        if y.shape != (A.shape[0],):
            raise ValueError(f"y has shape {y.shape}, operator has {A.shape[0]} rows")
        U, S, Vh = np.linalg.svd(A, full_matrices=False)
        keep = S > cutoff * (S[0] if S.size else 0.0)
        self.A = A
        self.y = y
        self.U = U[:, keep]
        self.S = np.ascontiguousarray(S[keep])
        self.Vh = np.ascontiguousarray(Vh[keep])
        self.V = np.ascontiguousarray(self.Vh.conj().T)
        self.beta = self.U.conj().T @ y
        self.yperp2 = float(np.linalg.norm(y - self.U @ self.beta) ** 2)
        self.tol = tol

    @property
    def min_residual(self) -> float:
        """Smallest achievable ``||y - A x||`` without any other constraint."""
        return float(np.sqrt(self.yperp2))

    @property
    def opnorm(self) -> float:
        return float(self.S[0]) if self.S.size else 0.0

    def residual(self, x) -> float:
        return float(np.linalg.norm(self.y - self.A @ np.asarray(x, dtype=complex)))

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.Vh

    def project_residual(self, x, r: float, return_multiplier: bool = False):
        if r < self.min_residual * (1.0 - 1e-12) - 1e-300:
            raise InfeasibleError(
                f"residual ball of radius {r:.3e} is empty (minimum residual "
                f"{self.min_residual:.3e})")
        x = np.ascontiguousarray(x, dtype=complex)
        out, lam = K.ball_project(x, self.Vh, self.V, self.S, self.beta, self.yperp2,
                                  float(r), self.tol)
        return (out, lam) if return_multiplier else out


def project_residual_ball(x, y, r: float, A) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``{x : ||y - A x|| <= r}``."""
    return ProjectionToolkit(A, y).project_residual(x, r)
