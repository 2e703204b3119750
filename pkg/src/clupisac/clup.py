"""Controlled loosening-up (CLuP) with a nuclear-norm restriction on the Hankel lift.

Each outer step solves the convex program

    max  Re<x_prev, x>
    s.t. ||y - A x|| <= r,  ||H(x_hr)||_* <= s,  |Re x_i|, |Im x_i| <= 1/sqrt(n)

and renormalizes the solution to give the next direction ``x_prev``.  The
radius and nuclear budget are calibrated as ``r = c0 * r_min`` and
``s = c1 * s_min``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from . import _kernels as K
from .linop import ForwardOperator, HankelLift
from .prox import ProjectionToolkit

log = logging.getLogger(__name__)

R_MIN_REL_TOL = 1e-12
R_MIN_MAX_ITERS = 100_000


class SolverError(RuntimeError):
    """An iterative solver failed to produce a usable result."""


@dataclass
class InnerSolverParams:
    max_iters: int = 2000
    tol: float = 1e-7          # primal and dual residual of the splitting
    feas_tol: float = 1e-6     # residual-ball and nuclear-ball violation of the returned x
    rho: float = 1.0           # initial penalty
    adapt: bool = True         # residual balancing every ``check_every`` iterations
    adapt_limit: int = 20      # at most this many penalty changes per call
    check_every: int = 10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tol <= 0 or self.feas_tol <= 0 or self.rho <= 0:
            raise ValueError("tolerances and rho must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be positive")
        if self.adapt_limit < 0:
            raise ValueError("adapt_limit must be non-negative")


@dataclass
class ClupParams:
    c0: float = 1.0
    c1: float = 1.0
    max_outer: int = 50
    outer_tol: float = 1e-6
    init: str = "adjoint"        # "adjoint" or "random"
    s_radius: str = "deployed"   # nuclear calibration at r = c0 r_min ("deployed") or r_min
    inner: InnerSolverParams = field(default_factory=InnerSolverParams)

    def __post_init__(self):
        if isinstance(self.inner, dict):
            self.inner = InnerSolverParams(**self.inner)
        if self.c0 < 1 or self.c1 < 1:
            raise ValueError(f"c0 and c1 must be >= 1 (c0={self.c0}, c1={self.c1})")
        if self.max_outer < 1 or self.outer_tol <= 0:
            raise ValueError("max_outer must be positive and outer_tol > 0")
        if self.init not in ("adjoint", "random"):
            raise ValueError(f"init must be 'adjoint' or 'random', got {self.init!r}")
        if self.s_radius not in ("deployed", "minimum"):
            raise ValueError(f"s_radius must be 'deployed' or 'minimum', got {self.s_radius!r}")


class Problem:
    """Measurements, dense operator, cached projections and Hankel lift.

    ``A`` may be a :class:`ForwardOperator` (the lift then defaults to the
    balanced split over its pulses) or a dense matrix whose first
    ``lift.M * lift.P`` unknowns form the radar block.
    """

    def __init__(self, y, A, lift: HankelLift | None = None):
        if isinstance(A, ForwardOperator):
            if lift is None:
                lift = HankelLift.for_pulses(A.M, A.P)
            dense = A.dense()
            self.op = A
        else:
            if lift is None:
                raise ValueError("a HankelLift is required with a dense operator")
            dense = np.asarray(A, dtype=complex)
            self.op = None
        if lift.size > dense.shape[1]:
            raise ValueError("Hankel lift is larger than the unknown vector")
        self.lift = lift
        self.tk = ProjectionToolkit(dense, y)
        self.A = np.ascontiguousarray(self.tk.A)
        self.y = self.tk.y
        self.n = dense.shape[1]
        self.b = 1.0 / math.sqrt(self.n)

    def residual(self, x) -> float:
        return self.tk.residual(x)

    def nuclear(self, x) -> float:
        h = np.ascontiguousarray(x[:self.lift.size])
        return float(K.nuclear_norm(K.hankel_lift(h, self.lift.M, self.lift.p1, self.lift.p2)))


def as_problem(y, A, lift=None) -> Problem:
    if isinstance(A, Problem):
        return A
    return Problem(y, A, lift)


# -- calibration ---------------------------------------------------------------

def compute_r_min(y, A, lift=None, return_x: bool = False, method: str = "bvls"):
    """Smallest residual ``||y - A x||`` over the box.

    ``method="bvls"`` solves the bounded least-squares problem exactly in its
    real form with an active-set method.  ``method="pg"`` runs accelerated
    projected gradient with step ``1/||A||^2``; it is kept as an independent
    cross-check and stops at the iteration cap with a warning, since every
    iterate is box-feasible and so its residual is always attainable.
    """
    pb = as_problem(y, A, lift)
    if pb.tk.opnorm == 0.0 or not np.any(pb.y):
        x = np.zeros(pb.n, complex)
        r = float(np.linalg.norm(pb.y))
        return (r, x) if return_x else r
    if method == "bvls":
        Ar, Ai = pb.A.real, pb.A.imag
        real_A = np.block([[Ar, -Ai], [Ai, Ar]])
        real_y = np.concatenate([pb.y.real, pb.y.imag])
        sol = lsq_linear(real_A, real_y, bounds=(-pb.b, pb.b), method="bvls", tol=1e-14)
        if sol.status == 0:
            raise SolverError(f"r_min: bounded least squares did not converge in {sol.nit} "
                              "iterations")
        x = sol.x[:pb.n] + 1j * sol.x[pb.n:]
        x = K.box(x, pb.b)
        r = pb.residual(x)
    elif method == "pg":
        step = 1.0 / pb.tk.opnorm ** 2
        abs_tol = 1e-13 * max(1.0, float(np.linalg.norm(pb.y)))
        x, r, it, status = K.projected_gradient_box(pb.A, pb.y, pb.b, step, R_MIN_REL_TOL,
                                                    abs_tol, R_MIN_MAX_ITERS)
        if status != K.CONVERGED:
            log.warning("r_min: projected gradient stopped at the cap of %d iterations "
                        "(residual %.3e)", it + 1, r)
    else:
        raise ValueError(f"unknown r_min method {method!r}")
    log.debug("r_min = %.6e (%s)", r, method)
    return (float(r), x) if return_x else float(r)


def _new_state(pb: Problem):
    n = pb.n
    G = pb.lift.shape
    z = np.zeros(n, complex)
    return (z, z.copy(), z.copy(), np.zeros(G, complex), z.copy(), z.copy(),
            np.zeros(G, complex))


def _copy_state(state):
    return tuple(a.copy() for a in state)


@dataclass
class InnerResult:
    x: np.ndarray
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    residual_excess: float
    nuclear_excess: float
    rho: float
    state: tuple = field(repr=False, default=None)


def _splitting(pb: Problem, c, nuclear_objective, r, s, params: InnerSolverParams,
               state=None, rho=None) -> InnerResult:
    if r < pb.tk.min_residual * (1 - 1e-12):
        raise SolverError(f"residual radius {r:.3e} below the attainable minimum "
                          f"{pb.tk.min_residual:.3e}")
    state = _new_state(pb) if state is None else state
    rho = params.rho if rho is None else rho
    lift = pb.lift
    status, it, pr, du, rho, res_ex, nuc_ex = K.three_set_splitting(
        np.ascontiguousarray(c, dtype=complex), bool(nuclear_objective), float(s),
        pb.tk.Vh, pb.tk.V, pb.tk.S, pb.tk.beta, pb.tk.yperp2, float(r), pb.b,
        lift.M, lift.p1, lift.p2, state, float(rho), int(params.max_iters),
        float(params.tol), float(params.feas_tol), pb.tk.tol, int(params.check_every),
        int(params.adapt_limit) if params.adapt else 0)
    x = state[2].copy()  # box copy: exactly box-feasible
    if not np.all(np.isfinite(x)):
        raise SolverError("splitting produced non-finite iterates")
    return InnerResult(x, status == K.CONVERGED, int(it), float(pr), float(du),
                       float(res_ex), float(nuc_ex), float(rho), state)


def compute_s_min(y, A, r: float, params: InnerSolverParams | None = None, lift=None,
                  return_x: bool = False, anchor=None):
    """Smallest ``||H(x_hr)||_*`` over the residual ball of radius ``r`` and the box.

    ``anchor`` is an optional point known to lie in both sets (the minimizer
    behind ``r_min`` is one).  It is used only when the splitting output cannot
    be made exactly feasible by alternating projections.
    """
    pb = as_problem(y, A, lift)
    params = params or InnerSolverParams()
    res = _splitting(pb, np.zeros(pb.n, complex), True, r, 0.0, params)
    if not res.converged:
        log.warning("s_min: splitting stopped at %d iterations (primal %.2e, dual %.2e, "
                    "residual excess %.2e)", res.iterations, res.primal_residual,
                    res.dual_residual, res.residual_excess)
    # Report the nuclear norm of a point that is exactly feasible for the ball
    # and the box, so s = c1 * s_min with c1 >= 1 never yields an empty set.
    res.x = _feasible_witness(pb, res.x, r, anchor=anchor)
    res.residual_excess = max(pb.residual(res.x) - r, 0.0)
    s = pb.nuclear(res.x)
    return (s, res) if return_x else s


def _feasible_witness(pb: Problem, x, r, max_iters: int = 2000, anchor=None):
    """Dykstra alternating projections onto residual ball and box, starting at x."""
    w = pb.tk.project_residual(x, r)
    if K.box_excess(w, pb.b) <= 0.0:
        return w
    p = np.zeros_like(w)
    q = np.zeros_like(w)
    cur = x
    for _ in range(max_iters):
        b_pt = K.box(cur + p, pb.b)
        p = cur + p - b_pt
        cur = pb.tk.project_residual(b_pt + q, r)
        q = b_pt + q - cur
        if K.box_excess(cur, pb.b) <= 1e-14:
            return K.box(cur, pb.b)
    cur = K.box(cur, pb.b)
    if anchor is not None:
        return _pull_to_feasible(pb, cur, np.asarray(anchor, complex), r, math.inf)
    log.warning("s_min: could not certify a box-feasible witness; using box projection")
    return cur


def solve_inner(x_prev, y, A, r: float, s: float, params: InnerSolverParams | None = None,
                lift=None, state=None, rho=None, witness=None) -> InnerResult:
    """One CLuP step: maximize ``Re<x_prev, x>`` over the three constraint sets.

    If the splitting stops at its iteration cap and ``witness`` (a point known
    to satisfy all three constraints) is given, the returned ``x`` is the
    farthest point from the witness towards the last iterate that is still
    feasible.  ``converged`` stays False in that case.
    """
    pb = as_problem(y, A, lift)
    params = params or InnerSolverParams()
    x_prev = np.asarray(x_prev, dtype=complex)
    if x_prev.shape != (pb.n,):
        raise ValueError(f"x_prev: expected shape ({pb.n},), got {x_prev.shape}")
    res = _splitting(pb, x_prev, False, r, s, params, state=state, rho=rho)
    if not res.converged and witness is not None:
        res.x = _pull_to_feasible(pb, res.x, np.asarray(witness, complex), r, s)
        res.residual_excess = max(pb.residual(res.x) - r, 0.0)
        res.nuclear_excess = max(pb.nuclear(res.x) - s, 0.0)
    return res


def _pull_to_feasible(pb: Problem, x, witness, r, s, steps: int = 60):
    def feasible(t):
        z = witness + t * (x - witness)
        if pb.residual(z) > r * (1 + 1e-12) + 1e-12:
            return False
        return math.isinf(s) or pb.nuclear(z) <= s + 1e-12

    if feasible(1.0):
        return x
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return witness + lo * (x - witness)


# -- outer loop ----------------------------------------------------------------

@dataclass
class Calibration:
    r_min: float
    s_min: float
    r: float
    s: float
    witness: np.ndarray | None = field(default=None, repr=False)
    r_min_x: np.ndarray | None = field(default=None, repr=False)


def calibrate(y, A, params: ClupParams, lift=None, reuse: Calibration | None = None,
              reuse_s: bool = False) -> Calibration:
    """Budgets ``r = c0 r_min`` and ``s = c1 s_min``.

    ``reuse`` supplies an earlier calibration of the same instance: its
    ``r_min`` is always kept, and with ``reuse_s`` its ``s_min`` and witness
    are kept too (valid when the nuclear radius is unchanged, as in a c1
    sweep at fixed c0).
    """
    pb = as_problem(y, A, lift)
    if reuse is None:
        r_min, r_x = compute_r_min(pb.y, pb, return_x=True)
    else:
        r_min, r_x = reuse.r_min, reuse.r_min_x
    r = params.c0 * r_min
    if reuse is not None and reuse_s:
        s_min, witness = reuse.s_min, reuse.witness
    else:
        r_s = r if params.s_radius == "deployed" else r_min
        s_min, res = compute_s_min(pb.y, pb, r_s, params.inner, return_x=True, anchor=r_x)
        witness = res.x
    return Calibration(r_min, s_min, r, params.c1 * s_min, witness, r_x)


@dataclass
class ClupState:
    x_prev: np.ndarray
    x_hat: np.ndarray
    r: float
    s: float
    r_min: float
    s_min: float
    history: list = field(default_factory=list)
    converged: bool = False
    outer_iterations: int = 0
    inner_iterations: int = 0
    nonmonotone_steps: int = 0


HISTORY_FIELDS = ("iteration", "objective", "residual", "nuclear", "residual_excess",
                  "nuclear_excess", "box_excess", "inner_iterations", "inner_converged",
                  "nmse")


def run_clup(y, A, params: ClupParams | None = None, x0=None, truth=None, lift=None,
             rng: np.random.Generator | None = None,
             calibration: Calibration | None = None) -> ClupState:
    """Calibrate the budgets and iterate CLuP steps until the direction settles.

    Returns the final inner solution in normalized units together with the
    per-iteration history.  ``truth`` (normalized) adds an NMSE column.
    """
    params = params or ClupParams()
    pb = as_problem(y, A, lift)
    cal = calibration or calibrate(pb.y, pb, params)

    if x0 is not None:
        x = np.asarray(x0, dtype=complex)
    elif params.init == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        x = rng.standard_normal(pb.n) + 1j * rng.standard_normal(pb.n)
    else:
        x = pb.A.conj().T @ pb.y
    nx = np.linalg.norm(x)
    if nx == 0:
        # y = 0: the zero vector is the only sensible direction-free start
        x = np.full(pb.n, 1.0 + 0j)
        nx = np.linalg.norm(x)
    x = x / nx

    st = ClupState(x_prev=x, x_hat=np.zeros(pb.n, complex), r=cal.r, s=cal.s,
                   r_min=cal.r_min, s_min=cal.s_min)
    tn = None if truth is None else np.linalg.norm(truth)
    state, rho = None, None
    witness = cal.witness
    last_obj = math.inf
    for i in range(1, params.max_outer + 1):
        try:
            res = solve_inner(x, pb.y, pb, cal.r, cal.s, params.inner, state=state, rho=rho,
                              witness=witness)
        except SolverError as exc:
            raise SolverError(f"CLuP outer iteration {i}: {exc}") from exc
        state, rho = res.state, res.rho
        if res.converged:
            witness = res.x
        st.inner_iterations += res.iterations
        x_hat = res.x
        obj = -float(np.real(np.vdot(x, x_hat)))
        row = {
            "iteration": i,
            "objective": obj,
            "residual": pb.residual(x_hat),
            "nuclear": pb.nuclear(x_hat),
            "residual_excess": res.residual_excess,
            "nuclear_excess": res.nuclear_excess,
            "box_excess": float(K.box_excess(x_hat, pb.b)),
            "inner_iterations": res.iterations,
            "inner_converged": res.converged,
            "nmse": (float(np.linalg.norm(x_hat - truth) / tn) if tn else math.nan),
        }
        st.history.append(row)
        if not res.converged:
            log.warning("CLuP outer iteration %d: inner splitting hit the iteration cap "
                        "(residual excess %.2e, nuclear excess %.2e)", i,
                        res.residual_excess, res.nuclear_excess)
        if obj > last_obj + 1e-9 and res.converged:
            st.nonmonotone_steps += 1
            log.info("CLuP outer iteration %d: objective rose %.3e -> %.3e", i, last_obj, obj)
        last_obj = obj

        st.x_hat = x_hat
        nrm = np.linalg.norm(x_hat)
        if nrm == 0:
            st.outer_iterations = i
            st.converged = True
            break
        x_next = x_hat / nrm
        step = np.linalg.norm(x_next - x)
        x = x_next
        st.x_prev = x
        st.outer_iterations = i
        if step <= params.outer_tol:
            st.converged = True
            break
    return st


def write_history_csv(path, history, extra: dict | None = None) -> None:
    """Write solver history rows; ``extra`` columns are prepended to every row."""
    extra = extra or {}
    fields = list(extra) + list(HISTORY_FIELDS)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in history:
            out = dict(extra)
            for k in HISTORY_FIELDS:
                v = row.get(k, "")
                out[k] = format(v, ".17g") if isinstance(v, float) else v
            w.writerow(out)
