import os
import subprocess
import sys

import numpy as np
import pytest

from sasolver import kernels
from sasolver.coefficients import DEFAULT_RULE


def _one_step_args(lam_a=-0.5, lam_b=0.25, tau2=0.0, nodes=(-0.5,)):
    return ([lam_a], [lam_b], [0.8], np.array([nodes]), [len(nodes)], [0, 1], [lam_a], [lam_b], [tau2],
            DEFAULT_RULE.nodes, DEFAULT_RULE.weights)


def test_python_backend_one_node_closed_form():
    w = kernels.weights_table(*_one_step_args(tau2=0.49), backend="python")
    assert w.shape == (1, 1)
    assert w[0, 0] == pytest.approx(0.8 * -np.expm1(-1.49 * 0.75), rel=1e-14)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.weights_table(*_one_step_args(), backend="fortran")


def test_env_var_forces_python_fallback():
    env = dict(os.environ, SASOLVER_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import sasolver.kernels as k; print(k.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernel not built")
def test_compiled_backend_matches_on_multi_segment_step():
    args = ([-1.0], [0.5], [0.9], np.array([[-1.0, -1.4, -2.1]]), [3], [0, 3], [-1.0, -0.3, 0.1],
            [-0.3, 0.1, 0.5], [0.25, 1.0, 0.0], DEFAULT_RULE.nodes, DEFAULT_RULE.weights)
    a = kernels.weights_table(*args, backend="python")
    b = kernels.weights_table(*args, backend="cython")
    np.testing.assert_allclose(a, b, rtol=1e-13)
