import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracedenoise.autodiff import backward
from tracedenoise.errors import ConfigError, ContractError, DimensionError
from tracedenoise.losses import (
    ABLATIONS, LossConfig, ablation, decomposition_residual, fine_tune_loss, lambda_schedule,
    mse_pair_loss, trace_constraint_loss,
)
from tracedenoise.network import build_network, denoise_image
from tracedenoise.sampling import Downsampler, downsample_pair, estimate_clean_subs

from conftest import network_fd_grads, rel_error, zero_network


def mse_loop(d1, y2, d2, y1):
    """Scalar-loop reference for the symmetric pair MSE."""
    fwd = bwd = 0.0
    for idx in np.ndindex(d1.shape):
        fwd += (d1[idx] - y2[idx]) ** 2
        bwd += (d2[idx] - y1[idx]) ** 2
    n = d1.size
    return 0.5 * (fwd / n + bwd / n)


def trace_loop(xh, y_other, d_self):
    acc = 0.0
    for idx in np.ndindex(xh.shape):
        acc += (xh[idx] - y_other[idx]) * (d_self[idx] - xh[idx])
    return abs(acc / xh.size)


# configuration ---------------------------------------------------------------

def test_mutual_requires_trcl():
    with pytest.raises(ConfigError):
        LossConfig(trcl=False, mutual=True)


def test_ablation_ladder_flags():
    assert [(c.trcl, c.mutual, c.residual) for c in ABLATIONS.values()] == [
        (False, False, False), (True, False, False), (True, True, False), (True, True, True)]
    assert [c.label for c in ABLATIONS.values()] == ["S1", "S2", "S3", "S4"]
    assert ablation("s4", lambda0=2.0).lambda0 == 2.0
    with pytest.raises(ConfigError):
        ablation("S5")


# pair MSE -------------------------------------------------------------------------

def test_mse_identity_and_equal_pair(rng):
    y = rng.random((6, 6, 3))
    assert mse_pair_loss(zero_network(3), y, y).item() == 0.0


def test_mse_constant_offset():
    c = 0.125
    net = zero_network(3)
    net.params["conv3.bias"].data[:] = -c  # residual: denoise(y) = y + c
    y = np.random.default_rng(0).random((4, 4, 3))
    assert mse_pair_loss(net, y, y).item() == pytest.approx(c * c, abs=1e-15)


def test_mse_matches_loop(rng):
    net = build_network(3, 8, seed=1)
    y1, y2 = rng.random((2, 6, 5, 3))
    want = mse_loop(denoise_image(net, y1), y2, denoise_image(net, y2), y1)
    assert abs(mse_pair_loss(net, y1, y2).item() - want) < 1e-12


def test_mse_one_directional(rng):
    net = build_network(1, 4, seed=2)
    y1, y2 = rng.random((2, 4, 4, 1))
    want = np.mean((denoise_image(net, y1) - y2) ** 2)
    assert mse_pair_loss(net, y1, y2, symmetric=False).item() == pytest.approx(want, abs=1e-14)


def test_mse_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        mse_pair_loss(build_network(3, 4), rng.random((4, 4, 3)), rng.random((4, 6, 3)))


# trace loss ---------------------------------------------------------------------

def test_trace_zero_when_estimate_equals_target(rng):
    net = build_network(3, 4, seed=0)
    y1, y2, x2 = rng.random((3, 4, 4, 3))
    assert trace_constraint_loss(net, y1, y2, y2, x2, mutual=False).item() == 0.0


def test_mutual_trace_zero_when_outputs_equal_estimates(rng):
    net = zero_network(3)  # denoise(y) = y
    y1, y2 = rng.random((2, 4, 4, 3))
    assert trace_constraint_loss(net, y1, y2, y1, y2, mutual=True).item() == 0.0


def test_trace_matches_loop(rng):
    net = build_network(3, 8, seed=4)
    y1, y2, x1, x2 = rng.random((4, 5, 6, 3))
    d1, d2 = denoise_image(net, y1), denoise_image(net, y2)
    plain = trace_loop(x1, y2, d1)
    mutual = 0.5 * plain + 0.5 * trace_loop(x2, y1, d2)
    assert abs(trace_constraint_loss(net, y1, y2, x1, x2, mutual=False).item() - plain) < 1e-12
    assert abs(trace_constraint_loss(net, y1, y2, x1, x2, mutual=True).item() - mutual) < 1e-12


def test_mutual_with_symmetric_operands_equals_plain(rng):
    net = build_network(3, 4, seed=5)
    y, x = rng.random((2, 4, 4, 3))
    plain = trace_constraint_loss(net, y, y, x, x, mutual=False).item()
    assert trace_constraint_loss(net, y, y, x, x, mutual=True).item() == plain


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_trace_loss_nonnegative(seed, mutual):
    r = np.random.default_rng(seed)
    net = build_network(1, 3, seed=seed)
    ops = r.standard_normal((4, 3, 3, 1))
    assert trace_constraint_loss(net, *ops, mutual=mutual).item() >= 0.0


def test_trace_shape_mismatch(rng):
    net = build_network(3, 4)
    y = rng.random((4, 4, 3))
    with pytest.raises(DimensionError):
        trace_constraint_loss(net, y, y, y, rng.random((2, 4, 3)))


# fine-tune loss --------------------------------------------------------------------

def test_lambda_zero_is_mse_bitwise(rng):
    y = rng.random((12, 12, 3))
    d = Downsampler()
    net = build_network(3, 8, seed=1)
    y1, y2 = downsample_pair(d, y)
    ref = mse_pair_loss(net, y1, y2).item()
    assert fine_tune_loss(net, y, d, ABLATIONS["S4"], 0.0).item() == ref
    off = LossConfig(trcl=False, mutual=False, residual=True)
    assert fine_tune_loss(net, y, d, off, 3.0).item() == ref


def test_fine_tune_is_sum_of_components(rng):
    y = rng.random((12, 10, 3))
    d = Downsampler()
    for label in ("S2", "S3", "S4"):
        cfg = ABLATIONS[label]
        net = build_network(3, 8, seed=2, mode=cfg.output_mode)
        y1, y2 = downsample_pair(d, y)
        x1, x2 = estimate_clean_subs(d, net, y)
        parts = mse_pair_loss(net, y1, y2).item() + trace_constraint_loss(net, y1, y2, x1, x2, cfg.mutual).item()
        assert abs(fine_tune_loss(net, y, d, cfg, 1.0).item() - parts) < 1e-12


def test_fine_tune_mode_mismatch(rng):
    net = build_network(3, 4, mode="direct")
    with pytest.raises(ConfigError):
        fine_tune_loss(net, rng.random((8, 8, 3)), Downsampler(), ABLATIONS["S4"], 1.0)


def test_fine_tune_negative_lambda(rng):
    with pytest.raises(ContractError):
        fine_tune_loss(build_network(3, 4), rng.random((8, 8, 3)), Downsampler(), ABLATIONS["S4"], -1.0)


def test_fine_tune_gradient_with_estimates_held_fixed(rng):
    y = rng.random((8, 8, 3))
    d = Downsampler()
    cfg = ABLATIONS["S4"]
    net = build_network(3, 4, seed=3)
    lam = 0.7
    y1, y2 = downsample_pair(d, y)
    x1, x2 = estimate_clean_subs(d, net, y)

    net.zero_grad()
    backward(fine_tune_loss(net, y, d, cfg, lam))
    analytic = net.grads()

    def fixed(n):
        return mse_pair_loss(n, y1, y2) + trace_constraint_loss(n, y1, y2, x1, x2, True) * lam

    numeric = network_fd_grads(net, fixed)
    for k in analytic:
        assert rel_error(analytic[k], numeric[k]) < 1e-4, k


# schedule ----------------------------------------------------------------------------

def test_lambda_schedule_endpoints():
    assert lambda_schedule(0, 800, 1.5) == 1.5
    assert lambda_schedule(800, 800, 1.5) == 0.0
    assert lambda_schedule(400, 800, 1.5) == pytest.approx(0.75, abs=1e-15)


def test_lambda_schedule_monotone():
    vals = [lambda_schedule(t, 37, 2.0) for t in range(38)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("t,total", [(5, 4), (-1, 4), (0, 0)])
def test_lambda_schedule_contract(t, total):
    with pytest.raises(ContractError):
        lambda_schedule(t, total, 1.0)


# decomposition ----------------------------------------------------------------------

def test_decomposition_special_cases(rng):
    x1, y2 = rng.standard_normal((2, 5, 5))
    assert decomposition_residual(x1, x1, y2) < 1e-12
    assert decomposition_residual(y2, x1, y2) < 1e-12


def test_decomposition_random_triples():
    r = np.random.default_rng(11)
    worst = max(decomposition_residual(*r.standard_normal((3, 8, 8))) for _ in range(1000))
    assert worst < 1e-10


def test_decomposition_shape_mismatch():
    with pytest.raises(DimensionError):
        decomposition_residual(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 2)))
