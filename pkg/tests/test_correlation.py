# tests/test_correlation.py
from __future__ import annotations

import numpy as np
import pytest

from correlation import (
    CorrelationSpec,
    cholesky_loadings,
    correlate,
    recursive_loadings,
    reduced_loadings,
)
from errors import DegenerateCorrelation, DimensionMismatch, NotPositiveDefinite


def test_recursive_matches_cholesky(base_spec):
    rec = recursive_loadings(base_spec)
    chol = cholesky_loadings(base_spec)
    np.testing.assert_allclose(rec.entries, chol.entries, atol=1e-12)


def _random_specs(count: int, seed: int):
    """Positive-definite specs with the smallest eigenvalue kept away from zero."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        rhos = [float(x) for x in rng.uniform(-0.9, 0.9, 6)]
        spec_matrix = CorrelationSpec.independent().matrix()
        iu = np.triu_indices(4, 1)
        spec_matrix[iu] = rhos
        spec_matrix.T[iu] = rhos
        if np.linalg.eigvalsh(spec_matrix).min() > 1e-2:
            out.append(CorrelationSpec(*rhos))
    return out


def test_recursive_matches_cholesky_on_random_specs():
    for spec in _random_specs(500, seed=17):
        rec = recursive_loadings(spec)
        chol = cholesky_loadings(spec)
        np.testing.assert_allclose(rec.entries, chol.entries, atol=1e-12, err_msg=repr(spec))


def test_loadings_reproduce_correlation(base_spec):
    for build in (recursive_loadings, cholesky_loadings):
        L = build(base_spec)
        np.testing.assert_allclose(L.covariance(), base_spec.matrix(), atol=1e-12)


def test_stock_chi_loading(base_spec):
    # (0.1 - 0.6 * 0.7) / sqrt(1 - 0.36)
    assert recursive_loadings(base_spec).entries[2, 1] == pytest.approx(-0.4, abs=1e-12)


def test_independent_is_identity():
    L = recursive_loadings(CorrelationSpec.independent())
    np.testing.assert_array_equal(L.entries, np.eye(4))


def test_reduced_loadings(base_spec):
    spec = base_spec.martingale_consistent()
    L = reduced_loadings(spec)
    assert L.drivers == ("W_0", "W_2", "W_3")
    np.testing.assert_array_equal(L.entries[L.rows.index("W_S")], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(L.covariance(), spec.matrix(), atol=1e-12)


def test_reduced_needs_unit_rho_rs(base_spec):
    with pytest.raises(DegenerateCorrelation):
        reduced_loadings(base_spec)


def test_recursive_rejects_unit_rho_rs(base_spec):
    with pytest.raises(DegenerateCorrelation):
        recursive_loadings(base_spec.martingale_consistent())


def test_range_checked():
    with pytest.raises(ValueError, match="rho_rS"):
        CorrelationSpec(1.5, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        CorrelationSpec(0.9, 0.9, 0.0, -0.9, 0.0, 0.0)


def test_correlate(base_spec):
    L = cholesky_loadings(base_spec)
    dz = np.arange(8.0).reshape(4, 2)
    np.testing.assert_allclose(correlate(L, dz), L.entries @ dz)
    with pytest.raises(DimensionMismatch):
        correlate(L, np.zeros(3))


def test_correlated_sample_moments(base_spec):
    rng = np.random.default_rng(7)
    L = cholesky_loadings(base_spec)
    dw = correlate(L, rng.standard_normal((4, 200_000)))
    np.testing.assert_allclose(np.corrcoef(dw), base_spec.matrix(), atol=0.01)
