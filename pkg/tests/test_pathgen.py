import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from gammabridge import mixing_law as ml
from gammabridge import pathgen as pg
from gammabridge import streams
from gammabridge.harness import jump_time_cdf_vec, ks_gate


def rng(tag="test", index=0, seed=7):
    return streams.stream(seed, tag, index)


def test_streams_are_tagged_and_reproducible():
    a = rng("tau").random(5)
    np.testing.assert_array_equal(a, rng("tau").random(5))
    assert not np.array_equal(a, rng("path").random(5))
    assert not np.array_equal(a, rng("tau", 1).random(5))
    with pytest.raises(ValueError):
        streams.stream(-1, "tau")
    assert list(streams.chunks(45_000)) == [(0, 0, 20_000), (1, 20_000, 40_000), (2, 40_000, 45_000)]
    assert streams.derive_seed(1, "a") != streams.derive_seed(1, "b")


def test_grid_helpers():
    g = pg.make_grid(2.5, 0.05)
    assert g.size == 51 and 1.0 in g and 2.0 in g and g[-1] == 2.5
    g = pg.make_grid(2.0, n=3, extra=(1.0, 5.0))
    np.testing.assert_allclose(g, [0, 2 / 3, 1.0, 4 / 3, 2.0])
    for bad in ([0.5, 1.0], [0.0, 1.0, 1.0], [0.0]):
        with pytest.raises(pg.SamplerError):
            pg.check_grid(bad)
    with pytest.raises(pg.SamplerError):
        pg.ProcessParams(eta=0.0)


def test_gamma_path_moments_and_law():
    params = pg.ProcessParams(eta=2.0, kappa=3.0)
    ens = pg.sample_gamma_path(np.array([0.0, 0.5, 1.0]), params, rng(), 100_000)
    g1 = ens.values[:, -1]
    # Gamma(kappa t, rate eta): mean 1.5, variance 0.75
    assert abs(g1.mean() - 1.5) < 4 * math.sqrt(0.75 / g1.size)
    assert ks_gate(g1, stats.gamma(3.0, scale=0.5).cdf).passed
    assert np.all(np.diff(ens.values, axis=1) >= 0)


def test_log_gamma_variates_small_shape():
    # E log G = digamma(alpha), Var log G = trigamma(alpha)
    alpha = 0.01
    lg = pg.log_gamma_variates(np.full(100_000, alpha), rng())
    assert np.all(np.isfinite(lg))
    se = math.sqrt(special.polygamma(1, alpha) / lg.size)
    assert abs(lg.mean() - special.digamma(alpha)) < 4 * se


@pytest.mark.parametrize("sampler", ["normalized", "markov", "jumps"])
def test_bridge_marginals_with_general_params(sampler):
    # eta drops out of the bridge; kappa enters as a time scale, a as a value scale
    params = pg.ProcessParams(eta=3.0, kappa=2.0, endpoint_a=2.0)
    grid = np.array([0.0, 0.7, 1.5])
    if sampler == "normalized":
        ens = pg.sample_bridge_normalized(grid, 1.5, params, rng(sampler), 50_000)
    elif sampler == "markov":
        ens = pg.sample_bridge_markov(grid, 1.5, params, rng(sampler), 50_000)
    else:
        ens = pg.sample_bridge_jumps_ensemble(grid, 1.5, 1e-6, params, rng(sampler), 50_000)
    z = ens.column(0.7) / 2.0
    assert ks_gate(z, stats.beta(1.4, 1.6).cdf).passed
    assert np.all(ens.column(1.5) == 2.0)


@pytest.mark.parametrize("r", [1.0, 1.37])
def test_single_paths_pin_exactly(r):
    grid = pg.make_grid(2.0, 0.25)
    for sampler in (pg.sample_bridge_normalized, pg.sample_bridge_markov):
        path = sampler(grid, r, pg.ProcessParams(), rng())
        path.check()
        assert path.pin == (r, 1.0)
        assert r in path.times
        assert np.all(path.values[path.times < r] < 1.0)


def test_grid_must_cover_length():
    with pytest.raises(pg.SamplerError):
        pg.sample_bridge_normalized(np.array([0.0, 1.0]), 2.0, pg.ProcessParams(), rng())


def test_markov_start_state():
    vals = pg.sample_bridge_markov(np.array([0.5, 1.0, 2.0]), 2.0, pg.ProcessParams(), rng(), 100, start=(0.5, 0.3))
    assert vals.shape == (100, 3)
    assert np.all(vals[:, 0] == 0.3) and np.all(vals[:, 1] >= 0.3) and np.all(vals[:, -1] == 1.0)
    with pytest.raises(pg.SamplerError):
        pg.sample_bridge_markov(np.array([0.5, 1.0]), 2.0, pg.ProcessParams(), rng(), 5, start=(0.5, 1.0))


def test_jump_set():
    params = pg.ProcessParams(eta=1.0)
    js = pg.sample_bridge_jumps(2.0, 1e-4, params, rng())
    assert np.all(js.sizes > 1e-4) and np.all(np.diff(js.sizes) <= 0)
    assert np.all((js.times >= 0) & (js.times <= 2.0))
    vals = js.evaluate(np.array([0.0, 1.0, 2.0, 3.0]))
    assert vals[0] == 0.0 and vals[2] == 1.0 and vals[3] == 1.0
    # mass of jumps below epsilon: r kappa (1 - e^{-eta eps}) / eta
    assert js.truncated_mass == pytest.approx(2.0 * (-math.expm1(-1e-4)))
    with pytest.raises(pg.SamplerError, match="cap"):
        pg.sample_bridge_jumps(1.0, 1e-300, params, rng(), cap=10)


def test_random_length_ensemble_is_thread_independent():
    law = ml.discrete([1.0, 2.0], [0.5, 0.5])
    grid = pg.make_grid(2.5, 0.1)
    a = pg.random_length_ensemble(grid, law, pg.ProcessParams(), 5, 45_000, threads=1)
    b = pg.random_length_ensemble(grid, law, pg.ProcessParams(), 5, 45_000, threads=3)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.taus, b.taus)


def test_tau_stream_is_independent_of_sampler_and_grid():
    law = ml.exponential(1.0)
    a = pg.random_length_ensemble(pg.make_grid(3.0, 0.5), law, pg.ProcessParams(), 9, 1000)
    b = pg.random_length_ensemble(pg.make_grid(2.0, 0.1), law, pg.ProcessParams(), 9, 1000, sampler="jumps")
    np.testing.assert_array_equal(a.taus, b.taus)


def test_ensemble_path_inserts_pin():
    law = ml.dirac(1.23)
    ens = pg.random_length_ensemble(pg.make_grid(2.0, 0.5), law, pg.ProcessParams(), 1, 3)
    p = ens.path(0)
    p.check()
    assert 1.23 in p.times and p.times.size == ens.grid.size + 1


def test_jump_time_cdf():
    law = ml.dirac(2.0)
    assert pg.jump_time_cdf(law, 0.5) == pytest.approx(0.25)
    assert pg.jump_time_cdf(law, 2.0) == 1.0
    two = ml.discrete([1.0, 2.0], [0.5, 0.5])
    # F(t) + t E[1/tau; tau > t] at t = 1.5: 0.5 + 1.5 * 0.25
    assert pg.jump_time_cdf(two, 1.5) == pytest.approx(0.875)
    ts = np.linspace(0, 3, 31)
    np.testing.assert_allclose(jump_time_cdf_vec(two, ts), [pg.jump_time_cdf(two, t) for t in ts], atol=1e-15)


def test_jump_times_match_law():
    law = ml.discrete([1.0, 2.0], [0.5, 0.5])
    times = pg.jump_time_ensemble(law, pg.ProcessParams(), 3, 20_000)
    assert ks_gate(times, lambda s: jump_time_cdf_vec(law, s)).passed


laws = st.sampled_from(
    [ml.dirac(0.7), ml.discrete([0.4, 1.1, 2.0], [0.2, 0.5, 0.3]), ml.exponential(2.0), ml.uniform(0.5, 1.5, nodes=64)]
)


@settings(max_examples=25, deadline=None)
@given(law=laws, seed=st.integers(min_value=0, max_value=2**64 - 1), kappa=st.floats(0.3, 3.0), a=st.floats(0.5, 5.0))
def test_random_length_paths_invariants(law, seed, kappa, a):
    params = pg.ProcessParams(kappa=kappa, endpoint_a=a)
    grid = pg.make_grid(2.5, 0.1)
    ens = pg.random_length_ensemble(grid, law, params, seed, 200)
    v = ens.values
    assert np.all(v[:, 0] == 0) and np.all(np.diff(v, axis=1) >= 0) and np.all(v <= a)
    after = grid[None, :] >= ens.taus[:, None]
    assert np.all(v[after] == a) and np.all(v[~after] < a)
    for i in range(3):
        ens.path(i).check()
