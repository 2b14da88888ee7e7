"""The compiled kernels and their numpy twins must agree."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from odsd import _kernels as K
from odsd.numerics import sym_eig


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_jacobi_matches_lapack(rng, n):
    A = rng.standard_normal((n, n))
    M = A + A.T
    w, V = K.jacobi_eigh(M)
    np.testing.assert_allclose(np.sort(w)[::-1], sym_eig(M).values, atol=1e-10)
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, M, atol=1e-10)


def test_lloyd_twins_agree(rng):
    X = rng.standard_normal((200, 3))
    init = X[[0, 50, 100, 150]].copy()
    Cj, lj, ij = K._lloyd_jit(X, init)
    Cn, ln, in_ = K._lloyd_numpy(X, init)
    np.testing.assert_array_equal(lj, ln)
    np.testing.assert_allclose(Cj, Cn, atol=1e-12)
    assert ij == in_


def test_hartigan_twins_agree(rng):
    X = rng.standard_normal((120, 2))
    labels = rng.integers(0, 4, size=120).astype(np.int64)
    np.testing.assert_array_equal(K._hartigan_jit(X, labels.copy(), 50), K._hartigan_numpy(X, labels.copy(), 50))


SCRIPT = """
import json, numpy as np
from odsd import _jit
from odsd.numerics import kmeans, sym_eig
X = np.random.default_rng(5).standard_normal((80, 3))
r = kmeans(X, 4, rng_seed=2)
A = np.random.default_rng(6).standard_normal((6, 6))
e = sym_eig(A + A.T)
print(json.dumps({"jit": _jit.JIT_ENABLED, "labels": r.labels.tolist(), "obj": r.objective,
                  "values": e.values.tolist()}))
"""


def _run(disable):
    env = dict(os.environ, ODSD_DISABLE_JIT="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_env_flag_selects_backend_with_same_results():
    fast, slow = _run(False), _run(True)
    assert slow["jit"] is False
    assert fast["labels"] == slow["labels"]
    assert fast["obj"] == pytest.approx(slow["obj"], rel=1e-12)
    np.testing.assert_allclose(fast["values"], slow["values"], atol=1e-12)
