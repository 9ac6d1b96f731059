import numpy as np
import pytest

from tracedenoise.diagnostics import (
    LinearProbe, TraceEstimate, expected_trace, frobenius_trace_residual, identity_suite, mc_trace_term,
    recorrupt_pair, verify_norm_expansion,
)
from tracedenoise.errors import ConfigError, ContractError, DimensionError

SIGMA = 0.1


def test_norm_expansion_special_cases(rng):
    a = rng.standard_normal((6, 6))
    assert verify_norm_expansion(a, a) < 1e-12
    assert verify_norm_expansion(a, -a) < 1e-12


def test_norm_expansion_random_pairs():
    r = np.random.default_rng(1)
    assert max(verify_norm_expansion(*r.standard_normal((2, 9, 9))) for _ in range(1000)) < 1e-10


def test_norm_expansion_shape_mismatch():
    with pytest.raises(DimensionError):
        verify_norm_expansion(np.zeros((2, 2)), np.zeros((3, 3)))


def test_frobenius_trace_residual_small(rng):
    assert frobenius_trace_residual(rng.standard_normal((12, 12))) < 1e-12


def test_identity_suite():
    worst = identity_suite(trials=1000, seed=0)
    assert set(worst) == {"frobenius_trace", "norm_expansion", "mse_decomposition"}
    assert max(worst.values()) < 1e-10


@pytest.mark.parametrize("scenario", ["n2n", "nac", "r2r"])
def test_vanishing_scenarios(scenario):
    probe = LinearProbe.random(32, seed=3)
    est = mc_trace_term(scenario, probe, SIGMA, trials=20_000, seed=5)
    assert est.trials == 20_000
    assert abs(est.mean) < 3 * est.se


def test_correlated_identity_probe_gives_d_sigma_squared():
    d = 64
    est = mc_trace_term("correlated", LinearProbe.identity(d), SIGMA, trials=20_000, seed=2)
    assert est.z > 10
    assert est.mean == pytest.approx(d * SIGMA ** 2, rel=0.05)
    assert expected_trace("correlated", LinearProbe.identity(d), SIGMA) == pytest.approx(d * SIGMA ** 2)


def test_r2r_with_general_invertible_d():
    d = 16
    r = np.random.default_rng(8)
    D = np.eye(d) + 0.3 * r.standard_normal((d, d)) / np.sqrt(d)
    est = mc_trace_term("r2r", LinearProbe.random(d, seed=1), SIGMA, trials=20_000, seed=3, D=D)
    assert abs(est.mean) < 3 * est.se


def test_standard_error_scaling():
    probe = LinearProbe.identity(16)
    small = mc_trace_term("n2n", probe, SIGMA, trials=5_000, seed=4)
    large = mc_trace_term("n2n", probe, SIGMA, trials=20_000, seed=4)
    assert large.se / small.se == pytest.approx(0.5, rel=0.2)


def test_standard_error_definition():
    est = mc_trace_term("n2n", LinearProbe.identity(4), SIGMA, trials=400, seed=0)
    assert isinstance(est, TraceEstimate) and est.se > 0


def test_estimate_is_seed_deterministic():
    probe = LinearProbe.identity(8)
    a = mc_trace_term("r2r", probe, SIGMA, trials=25_000, seed=6)
    b = mc_trace_term("r2r", probe, SIGMA, trials=25_000, seed=6)
    assert a == b


def test_mc_contracts():
    probe = LinearProbe.identity(4)
    with pytest.raises(ConfigError):
        mc_trace_term("n2v", probe, SIGMA, trials=100, seed=0)
    with pytest.raises(ContractError):
        mc_trace_term("n2n", probe, SIGMA, trials=99, seed=0)
    with pytest.raises(DimensionError):
        mc_trace_term("n2n", probe, SIGMA, trials=100, seed=0, clean=np.zeros(5))


def test_probe_validation():
    with pytest.raises(DimensionError):
        LinearProbe(np.zeros((2, 3)), np.zeros(2))
    p = LinearProbe(np.eye(3), 0.5)
    np.testing.assert_allclose(p(np.zeros((1, 3))), [[0.5, 0.5, 0.5]])


def test_recorrupt_pair_sums_to_twice_y(rng):
    y = rng.random((8, 8, 3))
    hat, tilde = recorrupt_pair(y, SIGMA, seed=1)
    np.testing.assert_allclose(hat + tilde, 2 * y, rtol=0, atol=1e-15)


def test_recorrupted_noises_independent():
    n_draws = 100_000
    x = np.zeros(n_draws)
    n = SIGMA * np.random.default_rng(0).standard_normal(n_draws)
    y = x + n
    hat, tilde = recorrupt_pair(y, SIGMA, seed=11)
    # the added perturbations are perfectly anti-correlated
    assert np.cov(hat - y, tilde - y)[0, 1] == pytest.approx(-SIGMA ** 2, rel=0.02)
    # the total noises n + m and n - m are uncorrelated
    assert abs(np.cov(hat - x, tilde - x)[0, 1]) < 3 * 2 * SIGMA ** 2 / np.sqrt(n_draws)
    assert np.var(hat - x) == pytest.approx(2 * SIGMA ** 2, rel=0.02)


def test_recorrupt_pair_general_d(rng):
    y = rng.random((2, 2))
    D = np.diag([1.0, 2.0, 0.5, 4.0])
    hat, tilde = recorrupt_pair(y, SIGMA, seed=2, D=D)
    m = (hat - y).reshape(-1) / np.diag(D)
    np.testing.assert_allclose((y - tilde).reshape(-1), m / np.diag(D))
