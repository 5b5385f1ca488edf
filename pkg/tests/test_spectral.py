import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ksdsynth.errors import ConfigError
from ksdsynth.fixtures import PAPER_GAIN_TABLE2, scalar_system
from ksdsynth.model import Dimensions, DelaySystem
from ksdsynth.basis import IntervalBasis, poly
from ksdsynth.spectral import SpectralConfig, cheb_nodes, diff_matrix, lagrange_matrix, spectral_abscissa


def lambert_root(guess=0.0 + 1.3j):
    """Newton on lambda + exp(-lambda) = 0."""
    z = guess
    for _ in range(50):
        z -= (z + np.exp(-z)) / (1 - np.exp(-z))
    return z


def test_lti_scalar():
    r = spectral_abscissa(scalar_system(), np.zeros((1, 1)))
    assert r.sa == pytest.approx(-1.0, abs=1e-8)
    assert r.converged is True


def test_single_delay_against_newton():
    root = lambert_root()
    assert abs(root + np.exp(-root)) < 1e-14
    r = spectral_abscissa(scalar_system(a0=0.0, a1=-1.0), np.zeros((1, 1)))
    assert r.sa == pytest.approx(root.real, abs=1e-3)
    assert r.sa == pytest.approx(-0.3181, abs=1e-3)
    assert min(abs(r.eigenvalues - root)) < 1e-8


def test_benchmark_reference_gain(s4):
    r = spectral_abscissa(s4, PAPER_GAIN_TABLE2)
    assert -0.78 <= r.sa <= -0.66
    assert r.converged


def test_open_loop_unstable(s4):
    assert spectral_abscissa(s4, np.zeros((1, 2))).sa > 0


@pytest.mark.parametrize("case", ["scalar_delay", "benchmark"])
def test_refinement_differences_shrink(case, s4):
    if case == "benchmark":
        sys, K = s4, PAPER_GAIN_TABLE2
    else:
        sys, K = scalar_system(a0=-0.5, a1=-1.0, r=1.3), np.zeros((1, 1))
    Ns = (8, 16, 32, 64)
    sas = [spectral_abscissa(sys, K, SpectralConfig(N=N, refine=False)).sa for N in Ns]
    diffs = [abs(b - a) for a, b in zip(sas, sas[1:])]
    for a, b in zip(diffs, diffs[1:]):
        assert b <= a or b < 1e-11


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_delay_free_matches_dense_eigensolver(seed, n):
    rng = np.random.default_rng(seed)
    A0 = rng.standard_normal((n, n)) - 2.0 * np.eye(n)
    B0 = rng.standard_normal((n, 1))
    K = rng.standard_normal((1, n)) * 0.3
    sys = DelaySystem(Dimensions(n, 1, 1, 1, 1), (1.0,), (A0, np.zeros((n, n))), (B0, np.zeros((n, 1))),
                      (np.zeros((1, n)),) * 2, (np.zeros((1, 1)),) * 2, np.zeros((n, 1)), np.zeros((1, 1)),
                      (IntervalBasis(-1.0, 0.0, (poly(0),)),), ({},))
    ref = np.linalg.eigvals(A0 + B0 @ K)
    # default node count with refinement; at N=16 a spurious collocation mode
    # can sit right of a strongly damped true root
    r = spectral_abscissa(sys, K, SpectralConfig(count=500))
    assert r.sa == pytest.approx(ref.real.max(), abs=1e-8)
    for lam in ref:
        assert min(abs(r.eigenvalues - lam)) < 1e-8


def test_building_blocks():
    x, w = cheb_nodes(12, -1.0, 0.0)
    assert x[0] == -1.0 and x[-1] == 0.0 and np.all(np.diff(x) > 0)
    D = diff_matrix(x, w)
    np.testing.assert_allclose(D @ x ** 3, 3 * x ** 2, atol=1e-10)
    t = np.array([-0.33, -0.5, 0.0])
    L = lagrange_matrix(x, w, t)
    np.testing.assert_allclose(L @ np.exp(x), np.exp(t), atol=1e-10)
    np.testing.assert_array_equal(L[-1], np.eye(13)[-1])


def test_config_validation():
    with pytest.raises(ConfigError):
        SpectralConfig(N=4)
    with pytest.raises(ConfigError):
        SpectralConfig(count=0)


def test_result_json(s4):
    r = spectral_abscissa(scalar_system(), np.zeros((1, 1)), SpectralConfig(refine=False, count=3))
    assert r.converged is None
    out = json.loads(json.dumps(r.to_json()))
    assert set(out) == {"sa", "converged", "eigenvalues", "refinement"}
    assert len(out["eigenvalues"]) == 3
