"""ADMM comparison solver: nuclear-norm penalized least squares over the box.

    min_x  0.5 ||y - A x||^2 + lam ||H(x_hr)||_*   s.t.  |Re x_i|, |Im x_i| <= 1/sqrt(n)

Target parameters are then extracted from the lift exactly as for CLuP, so a
comparison isolates the solver.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .clup import SolverError
from .linop import ForwardOperator, HankelLift

log = logging.getLogger(__name__)

BURN_IN = 50


class DivergenceError(SolverError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class AdmmParams:
    lam: float = 0.1
    rho: float = 1.0
    max_iters: int = 3000
    tol: float = 1e-6
    diverge_window: int = 100

    def __post_init__(self):
        if self.lam <= 0 or self.rho <= 0:
            raise ValueError(f"lam and rho must be positive (lam={self.lam}, rho={self.rho})")
        if self.max_iters < 1 or self.tol <= 0:
            raise ValueError("max_iters must be positive and tol > 0")


@dataclass
class AdmmResult:
    x: np.ndarray
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    history: list = field(default_factory=list, repr=False)
    al_increases: int = 0


def _dense_and_lift(A, lift):
    if isinstance(A, ForwardOperator):
        return A.dense(), lift or HankelLift.for_pulses(A.M, A.P)
    if lift is None:
        raise ValueError("a HankelLift is required with a dense operator")
    return np.asarray(A, dtype=complex), lift


def lambda_scale(y, A) -> float:
    """``||A^H y||_inf``, the natural scale of the penalty weight."""
    Ad = A.dense() if isinstance(A, ForwardOperator) else np.asarray(A)
    return float(np.abs(Ad.conj().T @ np.asarray(y)).max())


def run_admm(y, A, params: AdmmParams | None = None, lift: HankelLift | None = None) -> AdmmResult:
    params = params or AdmmParams()
    Ad, lift = _dense_and_lift(A, lift)
    y = np.ascontiguousarray(y, dtype=complex)
    n = Ad.shape[1]
    gram = Ad.conj().T @ Ad
    diag = np.ones(n)
    diag[:lift.size] += lift.weights()
    Minv = np.ascontiguousarray(np.linalg.inv(gram + params.rho * np.diag(diag)))
    w, status, it, pr, du, prim, al = K.admm_nuclear_penalty(
        np.ascontiguousarray(Ad), y, Minv, float(params.lam), float(params.rho),
        1.0 / math.sqrt(n), lift.M, lift.p1, lift.p2, int(params.max_iters),
        float(params.tol), int(params.diverge_window))
    history = [{"iteration": k + 1, "objective": float(al[k]), "primal_residual": float(prim[k])}
               for k in range(len(prim))]
    if status == K.DIVERGED:
        raise DivergenceError(f"ADMM primal residual grew for {params.diverge_window} "
                              f"consecutive iterations (stopped at {it})", history)
    rises = int(np.sum(np.diff(al[BURN_IN:]) > 1e-12 * np.maximum(1.0, np.abs(al[BURN_IN + 1:]))))
    if rises:
        log.info("ADMM augmented Lagrangian rose on %d iterations after burn-in", rises)
    if status != K.CONVERGED:
        log.info("ADMM stopped at the iteration cap (primal %.2e, dual %.2e)", pr, du)
    return AdmmResult(w.copy(), status == K.CONVERGED, int(it), float(pr), float(du),
                      history, rises)
