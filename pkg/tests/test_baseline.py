import logging

import numpy as np
import pytest

from clupisac.baseline import AdmmParams, DivergenceError, lambda_scale, run_admm
from clupisac.linop import ForwardOperator, HankelLift
from clupisac.scene import SceneConfig, sample_scene, synthesize


def test_params_validation():
    with pytest.raises(ValueError):
        AdmmParams(lam=0.0)
    with pytest.raises(ValueError):
        AdmmParams(rho=-1.0)


def test_small_penalty_square_case_is_least_squares():
    rng = np.random.default_rng(0)
    M, P = 2, 3
    n = M * P
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    b = 1 / np.sqrt(n)
    x_true = 0.5 * b * (rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n))
    y = A @ x_true
    res = run_admm(y, A, AdmmParams(lam=1e-12, max_iters=20000, tol=1e-12),
                   lift=HankelLift.for_pulses(M, P))
    np.testing.assert_allclose(res.x, np.linalg.solve(A, y), atol=1e-6)


def test_huge_penalty_kills_lift():
    sc = sample_scene(SceneConfig(M=11, P=9, L=1, J=2, seed=0))
    ms = synthesize(sc)
    op = ForwardOperator.from_scene(sc)
    lam = 1e4 * lambda_scale(ms.y, op)
    res = run_admm(ms.y, op, AdmmParams(lam=lam))
    lift = HankelLift.for_pulses(11, 9)
    assert np.linalg.svd(lift.lift(res.x[:99]), compute_uv=False).sum() <= 1e-4


def test_converged_residuals_and_history(caplog):
    sc = sample_scene(SceneConfig(M=11, P=9, L=1, J=2, snr_db=37.0, seed=2))
    ms = synthesize(sc)
    op = ForwardOperator.from_scene(sc)
    with caplog.at_level(logging.INFO):
        res = run_admm(ms.y, op, AdmmParams(lam=0.01 * lambda_scale(ms.y, op),
                                            max_iters=20000))
    assert res.converged
    assert res.primal_residual <= 1e-6 and res.dual_residual <= 1e-6
    assert len(res.history) == res.iterations
    assert {"iteration", "objective"} <= set(res.history[0])
    nmse = np.linalg.norm(res.x - sc.x_true) / np.linalg.norm(sc.x_true)
    assert nmse < 0.5


def test_divergence_raises_with_history():
    sc = sample_scene(SceneConfig(M=11, P=9, L=1, J=2, snr_db=37.0, seed=2))
    ms = synthesize(sc)
    op = ForwardOperator.from_scene(sc)
    # a one-iteration growth window flags the first rise of the primal residual
    with pytest.raises(DivergenceError) as info:
        run_admm(ms.y, op, AdmmParams(lam=1.0, diverge_window=1))
    assert len(info.value.history) > 0
