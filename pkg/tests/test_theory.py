import math

import numpy as np
import pytest
from scipy import integrate

from pfalign.errors import ContractError
from pfalign.feedback import PFA, PFA_O, FeedbackAlgorithm, init_feedback
from pfalign.netcore import build_network, one_hot
from pfalign.rng import make_rng
from pfalign.theory import (
    align_product_feedback,
    brain_connectivity_sim,
    empirical_spectrum,
    mp_cdf,
    mp_density,
    mp_edges,
    predicted_angle,
    prop2_check,
    prop3_sweep,
)


def test_mp_edges():
    assert mp_edges(0.25) == (0.25, 2.25)
    with pytest.raises(ContractError):
        mp_density(1.0, 1.5)
    with pytest.raises(ContractError):
        mp_density(1.0, 0.0)


@pytest.mark.parametrize("lam", [0.04, 0.25, 0.5, 0.9])
def test_mp_density_moments(lam):
    lo, hi = mp_edges(lam)
    mass, _ = integrate.quad(lambda v: mp_density(v, lam), lo, hi, limit=200)
    first, _ = integrate.quad(lambda v: v * mp_density(v, lam), lo, hi, limit=200)
    assert abs(mass - 1.0) < 1e-6
    assert abs(first - 1.0) < 1e-6
    assert mp_density(lo - 0.01, lam) == 0.0
    assert mp_density(hi + 0.01, lam) == 0.0


def test_mp_cdf_matches_density_integral():
    lam = 0.3
    lo, hi = mp_edges(lam)
    for v in np.linspace(lo + 0.05, hi - 0.05, 5):
        direct, _ = integrate.quad(lambda t: mp_density(t, lam), lo, v, limit=200)
        assert mp_cdf(v, lam) == pytest.approx(direct, abs=1e-8)
    assert mp_cdf(lo - 1, lam) == 0.0
    assert mp_cdf(hi + 1, lam) == 1.0


def test_spectrum_tiny_lambda():
    rep = empirical_spectrum(256, 0.01, seed=0)
    assert rep.n_bar == 25600
    assert rep.eigenvalues.min() > 0.7 and rep.eigenvalues.max() < 1.3
    assert abs(rep.eigenvalues.mean() - 1.0) < 0.02


def test_spectrum_orthogonal_is_flat():
    rep = empirical_spectrum(128, 0.25, seed=0, orthogonal=True)
    assert np.max(np.abs(rep.eigenvalues - 1.0)) < 1e-10


def test_spectrum_square_reaches_zero():
    rep = empirical_spectrum(256, 1.0, seed=0)
    assert rep.eigenvalues.min() < 0.01
    assert np.all(rep.eigenvalues >= 0.0)


def test_predicted_angles():
    assert predicted_angle(1.0) == pytest.approx(45.0)
    assert predicted_angle(0.1) == pytest.approx(17.548, abs=1e-3)
    assert predicted_angle(1e-8) < 0.01
    values = [predicted_angle(lam) for lam in (0.04, 0.1, 0.25, 0.5, 1.0)]
    assert values == sorted(values)


def test_prop3_small_sweep_and_seed_streams():
    sweep = prop3_sweep(128, 128, [1.0, 0.25], trials=3, seed=4)
    assert len(sweep.rows()) == 2
    assert sweep.simulated[0] > sweep.simulated[1]
    again = prop3_sweep(128, 128, [0.25], trials=3, seed=4)
    assert again.simulated[0] == sweep.simulated[1]


def small_net(seed):
    return build_network((12,), [{"units": 16}, {"units": 14}, {"units": 5}], make_rng(seed, "init"))


def test_prop2_aligned_pfa_o_matches_bp():
    net = small_net(0)
    rng = make_rng(0, "data")
    state = align_product_feedback(net, init_feedback(net, FeedbackAlgorithm(PFA_O, 3), 0))
    rep = prop2_check(net, state, rng.standard_normal((8, 12)), one_hot(rng.integers(0, 5, 8), 5))
    assert max(rep.max_abs_diff) < 1e-10
    assert rep.decreased


def test_prop2_descent_over_seeds():
    failures = 0
    for seed in range(100):
        net = small_net(seed)
        rng = make_rng(seed, "data")
        state = align_product_feedback(net, init_feedback(net, FeedbackAlgorithm(PFA_O, 2), seed))
        rep = prop2_check(net, state, rng.standard_normal((8, 12)), one_hot(rng.integers(0, 5, 8), 5))
        failures += not rep.decreased
    assert failures == 0


def test_prop2_unaligned_differs():
    net = small_net(1)
    rng = make_rng(1, "data")
    state = init_feedback(net, FeedbackAlgorithm(PFA_O, 3), 1)
    rep = prop2_check(net, state, rng.standard_normal((8, 12)), one_hot(rng.integers(0, 5, 8), 5))
    assert max(rep.max_abs_diff) > 1e-3


def test_align_conv_layers():
    net = build_network((2, 5, 5), [
        {"type": "conv", "channels": 3, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "dense", "units": 4},
    ], make_rng(0, "init"))
    state = align_product_feedback(net, init_feedback(net, FeedbackAlgorithm(PFA_O, 2), 0))
    rng = make_rng(0, "x")
    rep = prop2_check(net, state, rng.standard_normal((3, 2, 5, 5)), one_hot(rng.integers(0, 4, 3), 4))
    assert max(rep.max_abs_diff) < 1e-10


def test_brain_limits():
    r, angle = brain_connectivity_sim(10000, 1.0, 1.0, seed=0)
    assert r == pytest.approx(1.0)
    assert angle == pytest.approx(0.0, abs=1e-6)
    assert brain_connectivity_sim(10000, 0.0, 0.36, seed=0) == (0.0, 90.0)
    with pytest.raises(ContractError):
        brain_connectivity_sim(10, 1.5, 0.3)


def test_brain_expected_correlation():
    # r = p * rho / sqrt(p) for unit-variance fwd and fb on linked pairs
    expected = 0.31 * 0.36 / math.sqrt(0.31)
    r, _ = brain_connectivity_sim(200000, seed=2)
    assert abs(r - expected) < 0.01
