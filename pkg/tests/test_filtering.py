import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gammabridge import filtering as fl
from gammabridge import mixing_law as ml
from gammabridge.pathgen import ProcessParams
from gammabridge.specfun import bridge_transition_log_pdf

TWO_ATOM = ml.discrete([2.0, 4.0], [0.5, 0.5])

# E[tau | zeta_t = x] and P(tau > 2 | zeta_t = x) under an Exp(1) prior,
# by mpmath quadrature of the continuous posterior
EXP_POSTERIOR = [
    (0.3, 1.0, 2.4741924798828748, 0.60688058297924473),
    (0.7, 0.5, 1.2640611584428324, 0.10440194906832477),
    (0.05, 2.0, 4.5258981331544847, 1.0),
]


def test_two_atom_worked_example():
    # weights proportional to (1 - x)^r (r - 1)
    post = fl.posterior_tau(0.5, 1.0, TWO_ATOM)
    np.testing.assert_allclose(post.component.atom_locations, [2.0, 4.0])
    np.testing.assert_allclose(post.component.atom_weights, [4 / 7, 3 / 7], rtol=1e-14)
    assert post.mean() == pytest.approx(20 / 7, rel=1e-14)
    assert post.survival(2.5) == pytest.approx(3 / 7, rel=1e-14)
    assert post.quantile(0.5) == 2.0 and post.quantile(0.6) == 4.0


@pytest.mark.parametrize("x,t,mean,surv2", EXP_POSTERIOR)
def test_gridded_exponential_against_quadrature(x, t, mean, surv2):
    post = fl.posterior_tau(x, t, ml.exponential(1.0))
    assert post.mean() == pytest.approx(mean, rel=2e-4)
    # survival is resolved only to one grid cell
    assert post.survival(2.0) == pytest.approx(surv2, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(min_value=1e-6, max_value=0.999), r=st.floats(min_value=0.2, max_value=30.0), frac=st.floats(0.01, 0.99))
def test_dirac_posterior_is_dirac(x, r, frac):
    post = fl.posterior_tau(x, frac * r, ml.dirac(r))
    np.testing.assert_array_equal(post.component.atom_locations, [r])
    assert post.component.atom_weights[0] == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(min_value=0.0, max_value=0.995), t=st.floats(min_value=0.01, max_value=5.0))
def test_phi_normalizes_against_prior_tail(x, t):
    law = ml.exponential(1.0)
    loc, w = law.support
    tail = loc > t
    vals = fl.phi(x, t, loc[tail], law)
    assert np.all(vals >= 0)
    # phi is a density with respect to the prior itself
    assert math.fsum(vals * w[tail]) == pytest.approx(1.0, abs=1e-12)


def test_stopped_branch_restricts_prior():
    law = ml.discrete([0.5, 1.0, 3.0], [0.2, 0.3, 0.5])
    post = fl.posterior_tau(1.0, 2.0, law)
    assert post.stopped
    np.testing.assert_allclose(post.component.atom_weights, [0.4, 0.6])
    assert post.survival(2.5) == 0.0


def test_stopped_with_zero_prior_mass_raises():
    with pytest.raises(fl.PreconditionError, match="F"):
        fl.posterior_tau(1.0, 1.0, TWO_ATOM)


def test_near_endpoint_mapping_is_logged(caplog):
    law = ml.discrete([0.5, 3.0], [0.5, 0.5])
    with caplog.at_level(logging.WARNING):
        assert fl.is_stopped(1.0 - 1e-14, delta=1e-12)
    assert "treated as stopped" in caplog.text
    assert not fl.is_stopped(1.0 - 1e-14)
    assert fl.posterior_tau(1.0 - 1e-14, 1.0, law, delta=1e-12).stopped


@pytest.mark.parametrize("x,t", [(-0.1, 1.0), (1.1, 1.0), (0.5, 0.0)])
def test_posterior_preconditions(x, t):
    with pytest.raises(fl.PreconditionError):
        fl.posterior_tau(x, t, TWO_ATOM)


def test_path_information():
    law = ml.discrete([0.5, 3.0], [0.5, 0.5])
    post = fl.posterior_given_path(1.0, 1.0, law, tau_if_stopped=0.5)
    assert post.tau_observed == 0.5 and post.mean() == 0.5
    assert fl.path_information_estimate(lambda r: r * r, 1.0, 1.0, law, 0.5) == 0.25
    with pytest.raises(fl.PreconditionError):
        fl.posterior_given_path(1.0, 0.4, law, tau_if_stopped=0.5)
    with pytest.raises(fl.PreconditionError):
        fl.posterior_given_path(1.0, 1.0, law)
    assert fl.path_information_estimate(lambda r: r, 1.0, 0.5, TWO_ATOM) == pytest.approx(20 / 7)


@settings(max_examples=40, deadline=None)
@given(
    x=st.floats(min_value=0.01, max_value=0.99),
    t=st.floats(min_value=0.05, max_value=1.5),
    kappa=st.floats(min_value=0.25, max_value=4.0),
)
def test_kappa_is_a_time_change(x, t, kappa):
    # shape kappa * time: the kappa-posterior equals the unit posterior on rescaled time
    law = ml.discrete([1.7, 2.5, 4.0], [0.3, 0.3, 0.4])
    scaled = ml.discrete([kappa * 1.7, kappa * 2.5, kappa * 4.0], [0.3, 0.3, 0.4])
    a = fl.posterior_tau(x, t, law, ProcessParams(kappa=kappa))
    b = fl.posterior_tau(x, kappa * t, scaled)
    np.testing.assert_allclose(a.component.atom_weights, b.component.atom_weights, rtol=1e-10)


def test_endpoint_scaling():
    # a only rescales the observation
    a = fl.posterior_tau(1.5, 1.0, TWO_ATOM, ProcessParams(endpoint_a=3.0))
    np.testing.assert_allclose(a.component.atom_weights, [4 / 7, 3 / 7], rtol=1e-13)


def test_conditional_expectation_and_survival():
    assert fl.conditional_expectation(lambda r: 1 / r, 0.5, 1.0, TWO_ATOM) == pytest.approx(4 / 7 / 2 + 3 / 7 / 4)
    assert fl.survival_probability(0.5, 1.0, 3.0, TWO_ATOM) == pytest.approx(3 / 7)
    with pytest.raises(fl.PreconditionError):
        fl.survival_probability(0.5, 1.0, 0.5, TWO_ATOM)


# ----------------------------------------------------------- predictive law


def test_predictive_two_atom_hand_value():
    law = ml.discrete([1.5, 3.0], [0.5, 0.5])
    pred = fl.predictive_law(0.4, 1.0, 2.0, law)
    w15 = 0.6**1.5 * 0.5  # (1-x)^r Gamma(r)/Gamma(r-1) at r = 1.5
    w3 = 0.6**3 * 2.0
    assert pred.atom_at_one == pytest.approx(w15 / (w15 + w3), rel=1e-13)
    assert pred.atom_at_one == pytest.approx(fl.phi(0.4, 1.0, 1.5, law) * 0.5, rel=1e-13)
    assert pred.atom_at_one + pred.continuous_mass == pytest.approx(1.0, abs=1e-12)


def test_predictive_dirac_inside_window_is_all_atom():
    pred = fl.predictive_law(0.3, 1.0, 2.0, ml.dirac(1.5))
    assert pred.atom_at_one == 1.0 and pred.continuous_mass == 0.0


def test_predictive_dirac_beyond_window_is_transition_density():
    x, t, u, r = 0.3, 1.0, 2.0, 3.5
    pred = fl.predictive_law(x, t, u, ml.dirac(r))
    y = np.linspace(0.31, 0.99, 15)
    np.testing.assert_allclose(pred.density(y), np.exp(bridge_transition_log_pdf(y, x, t, u, r)), rtol=1e-11)
    assert pred.atom_at_one == 0.0


def test_predictive_density_integrates_to_continuous_mass():
    law = ml.discrete([1.5, 3.0, 5.0], [0.3, 0.3, 0.4])
    pred = fl.predictive_law(0.4, 1.0, 2.0, law)
    total, _ = integrate.quad(lambda y: float(pred.density(np.array([y]))[0]), 0.4, 1.0, limit=200)
    assert total == pytest.approx(pred.continuous_mass, rel=1e-7)
    assert float(pred.cdf(np.array([1.0]))[0]) == pytest.approx(1.0, abs=1e-12)


def test_predictive_preconditions():
    with pytest.raises(fl.PreconditionError):
        fl.predictive_law(0.4, 1.0, 1.0, TWO_ATOM)
    with pytest.raises(fl.PreconditionError):
        fl.predictive_law(1.0, 1.0, 2.0, TWO_ATOM)


def test_bin_probabilities_match_single_observation():
    law = ml.discrete([1.5, 3.0], [0.5, 0.5])
    edges = np.linspace(0.4, 1.0, 7)
    pred = fl.predictive_law(0.4, 1.0, 2.0, law)
    got = fl.predictive_bin_probabilities(np.array([0.4]), 1.0, 2.0, law, edges)
    np.testing.assert_allclose(got[:-1], pred.bin_probabilities(edges), atol=1e-13)
    assert got[-1] == pytest.approx(pred.atom_at_one)
    assert got.sum() == pytest.approx(1.0, abs=1e-12)
