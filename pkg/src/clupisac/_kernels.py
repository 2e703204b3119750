"""Hot numeric kernels.

Every function here is written once in a numba-compatible numpy subset.
By default they are compiled with ``numba.njit``; setting the environment
variable ``CLUP_ISAC_PURE_NUMPY=1`` (or running without numba installed)
leaves them as plain Python/numpy functions.  Both paths execute the same
source, so they agree up to floating-point reassociation inside BLAS/LAPACK.

The flag is read once at import time.
"""

import os

import numpy as np

_FLAG = "CLUP_ISAC_PURE_NUMPY"

if os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}:
    USING_NUMBA = False
else:
    try:
        import numba

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False

if USING_NUMBA:
    jit = numba.njit(cache=True, nogil=True)
else:

    def jit(func):
        return func


# status codes shared by the iterative kernels
CONVERGED = 0
MAX_ITERS = 1
DIVERGED = 2


@jit
def box(x, b):
    re = np.minimum(np.maximum(x.real, -b), b)
    im = np.minimum(np.maximum(x.imag, -b), b)
    return re + 1j * im


@jit
def box_excess(x, b):
    worst = 0.0
    for i in range(x.shape[0]):
        e = max(abs(x[i].real), abs(x[i].imag)) - b
        if e > worst:
            worst = e
    return worst


@jit
def simplex(sig, s):
    """Euclidean projection of a nonnegative vector onto {w >= 0, sum(w) <= s}."""
    if sig.sum() <= s:
        return sig.copy()
    if s <= 0.0:
        return np.zeros_like(sig)
    u = np.sort(sig)[::-1]
    css = np.cumsum(u)
    theta = u[0] - s  # always valid for k = 0, even when rounding hides the margin
    for k in range(1, u.shape[0]):
        t = (css[k] - s) / (k + 1.0)
        if u[k] - t > 0.0:
            theta = t
    return np.maximum(sig - theta, 0.0)


@jit
def nuclear_project(X, s):
    U, sig, Vh = np.linalg.svd(X, full_matrices=False)
    w = simplex(sig, s)
    return (U * w) @ Vh


@jit
def svt(X, t):
    U, sig, Vh = np.linalg.svd(X, full_matrices=False)
    w = np.maximum(sig - t, 0.0)
    return (U * w) @ Vh


@jit
def nuclear_norm(X):
    _, sig, _ = np.linalg.svd(X, full_matrices=False)
    return sig.sum()


@jit
def hankel_lift(h, M, p1, p2):
    # column j of the lift is the contiguous slice h[j*M : (j+p1)*M]
    G = np.empty((p1 * M, p2), dtype=np.complex128)
    for j in range(p2):
        G[:, j] = h[j * M:(j + p1) * M]
    return G


@jit
def hankel_adjoint(G, M, p1, p2):
    out = np.zeros((p1 + p2 - 1) * M, dtype=np.complex128)
    for j in range(p2):
        out[j * M:(j + p1) * M] += G[:, j]
    return out


@jit
def hankel_weights(M, p1, p2):
    """Diagonal of H*H: anti-diagonal multiplicity of each pulse, repeated M times."""
    P = p1 + p2 - 1
    w = np.zeros(P * M)
    for q in range(P):
        cnt = min(q, p1 - 1) - max(0, q - p2 + 1) + 1
        w[q * M:(q + 1) * M] = cnt
    return w


@jit
def _ball_residual(lam, d2, S2, yperp2):
    den = 1.0 + lam * S2
    return np.sqrt(np.sum(d2 / (den * den)) + yperp2)


@jit
def residual_norm(x, Vh, S, beta, yperp2):
    d = beta - S * (Vh @ x)
    return np.sqrt(np.sum(d.real ** 2 + d.imag ** 2) + yperp2)


@jit
def ball_project(x, Vh, V, S, beta, yperp2, r, tol):
    """Project ``x`` onto {x : ||y - A x|| <= r} given a thin SVD of A.

    ``beta = U^H y`` and ``yperp2`` is the squared norm of the part of y
    outside range(A).  Returns the projection and the multiplier (0 if the
    input was already feasible, inf for the affine limit r^2 <= yperp2).
    """
    d = beta - S * (Vh @ x)
    d2 = d.real ** 2 + d.imag ** 2
    S2 = S * S
    if np.sqrt(np.sum(d2) + yperp2) <= r:
        return x.copy(), 0.0
    if r * r <= yperp2 * (1.0 + 1e-12) + 1e-300:
        return x + V @ (d / S), np.inf
    lo = 0.0
    hi = 1.0
    while _ball_residual(hi, d2, S2, yperp2) > r and hi < 1e300:
        lo = hi
        hi *= 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _ball_residual(mid, d2, S2, yperp2) > r:
            lo = mid
        else:
            hi = mid
        if r - _ball_residual(hi, d2, S2, yperp2) <= tol:
            break
        if hi - lo <= 1e-15 * hi:
            break
    coef = hi * S * d / (1.0 + hi * S2)
    return x + V @ coef, hi


@jit
def three_set_splitting(c, nuclear_objective, s, Vh, V, S, beta, yperp2, r, b,
                        M, p1, p2, state, rho, max_iters, tol, feas_tol,
                        ball_tol, check_every, adapt_limit):
    """Consensus ADMM over the residual ball, nuclear set and box.

    Solves, for the hr-block lift H,

        min  -Re<c, x> + [nuclear_objective] * ||H(x_hr)||_*
        s.t. ||y - A x|| <= r,  x in box(b),  ||H(x_hr)||_* <= s  (if not nuclear_objective)

    with variables z (free consensus copy), x1 (ball), x2 (box), Z (nuclear)
    and scaled duals u1, u2, U.  ``state`` is a tuple of those seven arrays,
    updated in place so that callers can warm-start.

    The penalty is rebalanced at most ``adapt_limit`` times; an unbounded
    schedule can cycle on the degenerate vertices a linear objective produces.

    Returns (status, iterations, primal_res, dual_res, rho, res_excess,
    nuc_excess).
    """
    z, x1, x2, Z, u1, u2, U = state
    n = z.shape[0]
    nh = (p1 + p2 - 1) * M
    w = hankel_weights(M, p1, p2)
    pr = np.inf
    du = np.inf
    res_ex = np.inf
    nuc_ex = np.inf
    status = MAX_ITERS
    it = 0
    n_adapt = 0
    for it in range(1, max_iters + 1):
        rhs = x1 + u1 + x2 + u2 + c / rho
        rhs[:nh] += hankel_adjoint(Z + U, M, p1, p2)
        z[:] = 0.5 * rhs
        z[:nh] = rhs[:nh] / (2.0 + w)
        Hz = hankel_lift(z[:nh], M, p1, p2)

        x1_new, _ = ball_project(z - u1, Vh, V, S, beta, yperp2, r, ball_tol)
        x2_new = box(z - u2, b)
        if nuclear_objective:
            Z_new = svt(Hz - U, 1.0 / rho)
        else:
            Z_new = nuclear_project(Hz - U, s)

        e1 = x1_new - z
        e2 = x2_new - z
        eZ = Z_new - Hz
        pr = np.sqrt(np.sum(np.abs(e1) ** 2) + np.sum(np.abs(e2) ** 2)
                     + np.sum(np.abs(eZ) ** 2))
        du = rho * np.sqrt(np.sum(np.abs(x1_new - x1) ** 2)
                           + np.sum(np.abs(x2_new - x2) ** 2)
                           + np.sum(np.abs(Z_new - Z) ** 2))
        x1[:] = x1_new
        x2[:] = x2_new
        Z[:, :] = Z_new
        u1 += e1
        u2 += e2
        U += eZ

        if it % check_every == 0 or it == max_iters:
            if pr <= tol and du <= tol:
                res_ex = residual_norm(x2, Vh, S, beta, yperp2) - r
                if nuclear_objective:
                    nuc_ex = 0.0
                else:
                    nuc_ex = nuclear_norm(hankel_lift(x2[:nh], M, p1, p2)) - s
                if res_ex <= feas_tol and nuc_ex <= feas_tol:
                    status = CONVERGED
                    break
            if n_adapt < adapt_limit:
                if pr > 10.0 * du:
                    n_adapt += 1
                    rho *= 2.0
                    u1 *= 0.5
                    u2 *= 0.5
                    U *= 0.5
                elif du > 10.0 * pr:
                    n_adapt += 1
                    rho *= 0.5
                    u1 *= 2.0
                    u2 *= 2.0
                    U *= 2.0
    if status != CONVERGED:
        res_ex = residual_norm(x2, Vh, S, beta, yperp2) - r
        if nuclear_objective:
            nuc_ex = 0.0
        else:
            nuc_ex = nuclear_norm(hankel_lift(x2[:nh], M, p1, p2)) - s
    return status, it, pr, du, rho, max(res_ex, 0.0), max(nuc_ex, 0.0)


@jit
def projected_gradient_box(A, y, b, step, rel_tol, abs_tol, max_iters):
    """min ||y - A x|| over the box by accelerated projected gradient.

    Momentum is reset whenever the objective rises.  Stops when the residual
    drops below ``abs_tol`` or the projected-gradient step falls below
    ``rel_tol`` relative to ``||x||``.  Every iterate is box-feasible, so the
    returned residual is always attainable.  Returns (x, residual, iters, status).
    """
    AH = np.ascontiguousarray(A.conj().T)
    n = A.shape[1]
    x = np.zeros(n, dtype=np.complex128)
    z = x.copy()
    t = 1.0
    res = A @ x - y
    f = np.sum(res.real ** 2 + res.imag ** 2)
    status = MAX_ITERS
    it = 0
    for it in range(max_iters):
        if f <= abs_tol * abs_tol:
            status = CONVERGED
            break
        rz = A @ z - y
        x_new = box(z - step * (AH @ rz), b)
        res = A @ x_new - y
        f_new = np.sum(res.real ** 2 + res.imag ** 2)
        dx = np.sqrt(np.sum(np.abs(x_new - x) ** 2))
        if f_new > f:
            # restart from the last accepted point with plain gradient step
            t = 1.0
            z = x.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x = x_new
        f = f_new
        t = t_new
        if dx <= rel_tol * np.sqrt(np.sum(np.abs(x) ** 2)):
            status = CONVERGED
            break
    return x, np.sqrt(f), it, status


@jit
def _svt_with_norm(X, t):
    U, sig, Vh = np.linalg.svd(X, full_matrices=False)
    w = np.maximum(sig - t, 0.0)
    return (U * w) @ Vh, w.sum()


@jit
def admm_nuclear_penalty(A, y, Minv, lam, rho, b, M, p1, p2, max_iters, tol,
                         diverge_window):
    """ADMM for  min 0.5||y - A x||^2 + lam ||H(x_hr)||_*  over the box.

    Splitting: Z = H(x_hr) (singular value thresholding) and w = x (box).
    ``Minv`` is the inverse of  A^H A + rho * diag(1 + H^H H, 1)  for the
    fixed penalty ``rho``.  Returns (w, status, iters, primal_res, dual_res,
    primal history, augmented Lagrangian history).
    """
    n = A.shape[1]
    nh = (p1 + p2 - 1) * M
    AHy = np.ascontiguousarray(A.conj().T) @ y
    x = np.zeros(n, dtype=np.complex128)
    w = np.zeros(n, dtype=np.complex128)
    u = np.zeros(n, dtype=np.complex128)
    Z = np.zeros((p1 * M, p2), dtype=np.complex128)
    U = np.zeros((p1 * M, p2), dtype=np.complex128)
    hist = np.zeros(max_iters)
    al = np.zeros(max_iters)
    status = MAX_ITERS
    growth = 0
    pr = np.inf
    du = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        rhs = AHy + rho * (w - u)
        rhs[:nh] += rho * hankel_adjoint(Z - U, M, p1, p2)
        x = Minv @ rhs
        Hx = hankel_lift(x[:nh], M, p1, p2)
        Z_new, znuc = _svt_with_norm(Hx + U, lam / rho)
        w_new = box(x + u, b)
        eZ = Hx - Z_new
        ew = x - w_new
        pr = np.sqrt(np.sum(np.abs(eZ) ** 2) + np.sum(np.abs(ew) ** 2))
        du = rho * np.sqrt(np.sum(np.abs(Z_new - Z) ** 2) + np.sum(np.abs(w_new - w) ** 2))
        res = y - A @ x
        al[it - 1] = (0.5 * np.sum(np.abs(res) ** 2) + lam * znuc
                      + 0.5 * rho * (np.sum(np.abs(eZ + U) ** 2) - np.sum(np.abs(U) ** 2)
                                     + np.sum(np.abs(ew + u) ** 2) - np.sum(np.abs(u) ** 2)))
        Z = Z_new
        w = w_new
        U += eZ
        u += ew
        hist[it - 1] = pr
        if it > 1 and pr > hist[it - 2]:
            growth += 1
        else:
            growth = 0
        if growth >= diverge_window:
            status = DIVERGED
            break
        if pr <= tol and du <= tol:
            status = CONVERGED
            break
    return w, status, it, pr, du, hist[:it], al[:it]
