"""The compiled kernels and the NumPy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from amidlab import kernels

compiled = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")


def _terms(rng, n):
    return rng.random(n), rng.random(n), rng.normal(size=n), rng.uniform(0.05, 1, n)


@compiled
def test_enumeration_parity(rng):
    for n in (1, 4, 11):
        args = _terms(rng, n)
        assert kernels.enumerate_expectation(*args) == pytest.approx(kernels.py_enumerate_expectation(*args), abs=1e-12)


@compiled
def test_mc_parity(rng):
    args = _terms(rng, 7)
    u = rng.random((200, 7))
    np.testing.assert_allclose(kernels.compiled_mc_estimates(*args, u), kernels.py_mc_estimates(*args, u), atol=1e-13)


@compiled
def test_similarity_parity(rng):
    left, right = rng.normal(size=(3, 5, 4)), rng.normal(size=(6, 5, 4))
    lm = rng.random((3, 5)) < 0.7
    rm = rng.random((6, 5)) < 0.7
    rm[0] = False
    got = kernels.similarity_max(left, right, lm, rm)
    np.testing.assert_allclose(got, kernels.py_similarity_max(left, right, lm, rm), atol=1e-12)
    assert np.all(got[:, 0] == 0.0)


def test_enumeration_expectation_is_linear(rng):
    coef, base, kappa, prob = _terms(rng, 6)
    expect = coef @ base + coef @ (kappa * prob)
    assert kernels.enumerate_expectation(coef, base, kappa, prob) == pytest.approx(expect, abs=1e-12)


def test_enumeration_size_limit(rng):
    with pytest.raises(ValueError):
        kernels.enumerate_expectation(*_terms(rng, kernels.MAX_ENUM_PAIRS + 1))


def test_pure_python_switch():
    env = dict(os.environ, AMIDLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from amidlab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
