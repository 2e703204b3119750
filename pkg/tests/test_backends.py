"""The pure-numpy fallback runs the same kernels as the compiled path."""

import json
import os
import subprocess
import sys

import numpy as np

SCRIPT = r'''
import json
import numpy as np
from clupisac import _kernels as K
from clupisac.clup import ClupParams, InnerSolverParams, run_clup
from clupisac.linop import ForwardOperator, HankelLift
from clupisac.scene import SceneConfig, sample_scene, synthesize

rng = np.random.default_rng(0)
lift = HankelLift.for_pulses(3, 4)
h = rng.standard_normal(12) + 1j * rng.standard_normal(12)
G = lift.lift(h)
sc = sample_scene(SceneConfig(M=5, P=3, L=1, J=1, seed=1))
ms = synthesize(sc)
st = run_clup(ms.y, ForwardOperator.from_scene(sc), ClupParams(max_outer=3))
print(json.dumps({
    "numba": K.USING_NUMBA,
    "lift": np.abs(G).tolist(),
    "adj": np.abs(lift.adjoint(G)).tolist(),
    "proj": np.abs(K.nuclear_project(G, 0.7)).tolist(),
    "simplex": K.simplex(np.array([3.0, 1.0, 0.5]), 2.0).tolist(),
    "x": np.abs(st.x_hat).tolist(),
}))
'''


def _run(pure):
    env = dict(os.environ)
    env.pop("CLUP_ISAC_PURE_NUMPY", None)
    if pure:
        env["CLUP_ISAC_PURE_NUMPY"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, check=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def test_fallback_matches_compiled():
    fast, slow = _run(False), _run(True)
    assert fast["numba"] and not slow["numba"]
    for key in ("lift", "adj", "proj", "simplex"):
        np.testing.assert_allclose(fast[key], slow[key], atol=1e-12)
    np.testing.assert_allclose(fast["x"], slow["x"], atol=1e-6)
