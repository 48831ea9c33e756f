"""Hot numeric kernels with a compiled core and a numpy fallback.

The compiled extension ``amidlab._ckernels`` is used when it imports and
``AMIDLAB_PURE_PYTHON`` is not set.  Both backends take identical inputs
(including pre-drawn uniforms for Monte Carlo), so their outputs agree up to
floating-point summation order.
"""

from __future__ import annotations

import os

import numpy as np

MAX_ENUM_PAIRS = 20


def _f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def py_enumerate_expectation(coef, base, kappa, prob) -> float:
    coef, base, kappa, prob = map(_f64, (coef, base, kappa, prob))
    n = coef.size
    masks = np.arange(1 << n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    weights = np.where(bits, prob, 1.0 - prob).prod(axis=1)
    estimates = coef @ base + bits.astype(np.float64) @ (coef * kappa)
    return float(weights @ estimates)


def py_mc_estimates(coef, base, kappa, prob, uniforms) -> np.ndarray:
    coef, base, kappa, prob, uniforms = map(_f64, (coef, base, kappa, prob, uniforms))
    observed = (uniforms < prob).astype(np.float64)
    return coef @ base + observed @ (coef * kappa)


def py_similarity_max(left, right, left_mask, right_mask) -> np.ndarray:
    left, right = _f64(left), _f64(right)
    lm = np.asarray(left_mask, dtype=bool)
    rm = np.asarray(right_mask, dtype=bool)
    scores = np.einsum("itk,jsk->ijts", left, right)
    valid = lm[:, None, :, None] & rm[None, :, None, :]
    scores = np.where(valid, scores, -np.inf)
    best = scores.reshape(scores.shape[0], scores.shape[1], -1).max(axis=2, initial=-np.inf)
    return np.where(np.isfinite(best), best, 0.0)


try:
    if os.environ.get("AMIDLAB_PURE_PYTHON") == "1":
        raise ImportError("pure-python backend forced")
    from . import _ckernels as _c
except ImportError:
    _c = None

BACKEND = "compiled" if _c is not None else "python"


def enumerate_expectation(coef, base, kappa, prob) -> float:
    """Exact expectation of sum_i coef_i*(base_i + o_i*kappa_i), o_i ~ Bernoulli(prob_i)."""
    if np.size(coef) > MAX_ENUM_PAIRS:
        raise ValueError(f"enumeration refuses more than {MAX_ENUM_PAIRS} pairs (got {np.size(coef)})")
    if _c is None:
        return py_enumerate_expectation(coef, base, kappa, prob)
    return float(_c.enumerate_expectation(_f64(coef), _f64(base), _f64(kappa), _f64(prob)))


def mc_estimates(coef, base, kappa, prob, uniforms) -> np.ndarray:
    """Estimator value per row of uniforms.

    The numpy version (one vectorised comparison plus a BLAS product) beats the
    compiled loop here, so it is used on both backends; ``compiled_mc_estimates``
    exposes the extension for parity checks and the benchmark.
    """
    return py_mc_estimates(coef, base, kappa, prob, uniforms)


def compiled_mc_estimates(coef, base, kappa, prob, uniforms) -> np.ndarray:
    if _c is None:
        raise RuntimeError("compiled extension not available")
    return _c.mc_estimates(_f64(coef), _f64(base), _f64(kappa), _f64(prob), _f64(uniforms))


def similarity_max(left, right, left_mask, right_mask) -> np.ndarray:
    """Pairwise max dot product between valid rows of two batches of sequences."""
    if _c is None:
        return py_similarity_max(left, right, left_mask, right_mask)
    return _c.similarity_max(
        _f64(left),
        _f64(right),
        np.ascontiguousarray(left_mask, dtype=np.uint8),
        np.ascontiguousarray(right_mask, dtype=np.uint8),
    )
