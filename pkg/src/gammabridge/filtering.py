"""Bayesian inference on the bridge length tau from an observed value.

Given zeta_t = x, the posterior of tau is either the prior restricted to
(0, t] (when x equals the endpoint, i.e. the bridge has already been
pinned) or the prior tail on (t, inf) reweighted by

    phi(x, t, r) ∝ (1 - x)^r Gamma(r) / Gamma(r - t).

With general parameters the kernel uses kappa * t, kappa * r and x / a.
All weights are normalized in log space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mixing_law import MixingLaw, cdf
from .pathgen import ProcessParams
from .specfun import bridge_transition_log_pdf, log_gamma_ratio, regularized_incomplete_beta

log = logging.getLogger(__name__)

DEFAULT_PARAMS = ProcessParams()
DEFAULT_STOP_DELTA = 1e-12


class PreconditionError(ValueError):
    """Observation incompatible with the prior (e.g. F(t) = 0 with x = 1)."""


def _tail(law: MixingLaw, t: float):
    loc, w = law.support
    mask = loc > t
    return loc[mask], w[mask]


def log_kernel(x, t: float, r, params: ProcessParams = DEFAULT_PARAMS):
    """Unnormalized log phi: kappa r log(1 - x/a) + log Gamma(kappa r)/Gamma(kappa (r - t))."""
    k, a = params.kappa, params.endpoint_a
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    return k * r * np.log1p(-x / a) + log_gamma_ratio(k * r, k * t)


def posterior_tail_weights(x, t: float, law: MixingLaw, params: ProcessParams = DEFAULT_PARAMS):
    """Tail locations r > t and posterior masses phi(x, t, r) P(tau = r).

    ``x`` may be a scalar or a 1-d array in [0, a); for an array the
    weights come back as a (len(x), n_tail) matrix with unit row sums.
    """
    r, w = _tail(law, t)
    if r.size == 0:
        raise PreconditionError(f"the prior has no mass beyond t = {t}")
    x_arr = np.asarray(x, dtype=float)
    a = params.endpoint_a
    if np.any(x_arr < 0) or np.any(x_arr >= a):
        raise PreconditionError("unstopped observations must lie in [0, a)")
    lk = np.log(w) + log_kernel(x_arr[..., None], t, r, params)
    lk -= np.max(lk, axis=-1, keepdims=True)
    post = np.exp(lk)
    post /= post.sum(axis=-1, keepdims=True)
    return r, post


def phi(x: float, t: float, r, law: MixingLaw, params: ProcessParams = DEFAULT_PARAMS):
    """Normalized reweighting factor phi(x, t, r) for r > t.

    Integrating phi against the prior over (t, inf) gives 1.
    """
    x_arr = np.asarray(x, dtype=float)
    # the kernel extends continuously to x = 0
    if np.any(x_arr < 0) or np.any(x_arr >= params.endpoint_a):
        raise PreconditionError("phi needs 0 <= x < a")
    rr = np.asarray(r, dtype=float)
    if np.any(rr <= t):
        raise PreconditionError("phi is defined for r > t")
    tail_r, tail_w = _tail(law, t)
    if tail_r.size == 0:
        raise PreconditionError(f"the prior has no mass beyond t = {t}")
    ln_norm_terms = np.log(tail_w) + log_kernel(x, t, tail_r, params)
    m = ln_norm_terms.max()
    ln_norm = m + math.log(math.fsum(np.exp(ln_norm_terms - m)))
    out = np.exp(log_kernel(x, t, rr, params) - ln_norm)
    return float(out) if np.ndim(out) == 0 else out


def _sub_law(locs, weights, law: MixingLaw, name: str) -> MixingLaw:
    atoms = np.isin(locs, law.atom_locations)
    keep = weights > 0
    total = math.fsum(weights[keep])
    w = weights / total
    return MixingLaw(
        locs[atoms & keep], w[atoms & keep], locs[~atoms & keep], w[~atoms & keep], name=name
    )


@dataclass(frozen=True, eq=False)
class TauPosterior:
    t: float
    x: float
    stopped_weight: float
    component: MixingLaw
    tau_observed: float | None = None

    @property
    def stopped(self) -> bool:
        return self.stopped_weight == 1.0

    def expectation(self, g: Callable) -> float:
        loc, w = self.component.support
        vals = np.asarray(g(loc), dtype=float)
        if vals.shape == ():
            vals = np.full(loc.shape, float(vals))
        if not np.all(np.isfinite(vals)):
            bad = float(loc[~np.isfinite(vals)][0])
            raise ValueError(f"g is not finite at r = {bad!r}")
        return math.fsum(vals * w)

    def mean(self) -> float:
        return self.expectation(lambda r: r)

    def survival(self, u: float) -> float:
        if self.stopped:
            return 0.0
        loc, w = self.component.support
        return math.fsum(w[loc > u])

    def quantile(self, q: float) -> float:
        loc, w = self.component.support
        idx = np.searchsorted(np.cumsum(w), q * math.fsum(w), side="left")
        return float(loc[min(idx, loc.size - 1)])

    def to_dict(self) -> dict:
        comp = self.component
        return {
            "observation": {"t": self.t, "x": self.x, "tau": self.tau_observed},
            "stopped_weight": self.stopped_weight,
            "atoms": [[float(r), float(w)] for r, w in zip(comp.atom_locations, comp.atom_weights)],
            "grid": [float(r) for r in comp.grid_nodes],
            "weights": [float(w) for w in comp.grid_weights],
        }


def is_stopped(x: float, params: ProcessParams = DEFAULT_PARAMS, delta: float | None = None) -> bool:
    """Whether an observation selects the stopped branch.

    Simulated data carry the endpoint verbatim, so the default test is
    exact equality. For external data pass ``delta``: values at or above
    a (1 - delta) count as stopped, and the mapping is logged.
    """
    a = params.endpoint_a
    if x == a:
        return True
    if delta is not None and x >= a * (1.0 - delta):
        log.warning("observation %r within relative %g of the endpoint treated as stopped", x, delta)
        return True
    return False


def posterior_tau(
    x: float,
    t: float,
    law: MixingLaw,
    params: ProcessParams = DEFAULT_PARAMS,
    delta: float | None = None,
) -> TauPosterior:
    """Conditional law of tau given zeta_t = x."""
    a = params.endpoint_a
    if t <= 0:
        raise PreconditionError("t must be positive")
    if not (0 <= x <= a):
        raise PreconditionError(f"x must lie in [0, {a}]")
    if is_stopped(x, params, delta):
        f_t = cdf(law, t)
        if f_t <= 0:
            raise PreconditionError(f"F({t}) = 0: a stopped observation is impossible under this prior")
        loc, w = law.support
        mask = loc <= t
        return TauPosterior(t, float(x), 1.0, _sub_law(loc[mask], w[mask], law, "stopped"))
    r, post = posterior_tail_weights(x, t, law, params)
    return TauPosterior(t, float(x), 0.0, _sub_law(r, post, law, "unstopped"))


def conditional_expectation(
    g: Callable, x: float, t: float, law: MixingLaw, params: ProcessParams = DEFAULT_PARAMS
) -> float:
    """E[g(tau) | zeta_t = x]."""
    return posterior_tau(x, t, law, params).expectation(g)


def survival_probability(
    x: float, t: float, u: float, law: MixingLaw, params: ProcessParams = DEFAULT_PARAMS
) -> float:
    """P(tau > u | zeta_t = x) for u > t."""
    if u <= t:
        raise PreconditionError("need u > t")
    return posterior_tau(x, t, law, params).survival(u)


def path_information_estimate(
    g: Callable,
    t: float,
    x: float,
    law: MixingLaw,
    tau_if_stopped: float | None = None,
    params: ProcessParams = DEFAULT_PARAMS,
) -> float:
    """E[g(tau) | path up to t]: on a stopped path tau itself is known."""
    stopped = is_stopped(x, params)
    if stopped != (tau_if_stopped is not None):
        raise PreconditionError("tau must be supplied exactly when the observation is stopped")
    if stopped:
        if not (0 < tau_if_stopped <= t):
            raise PreconditionError("a stopped observation needs 0 < tau <= t")
        return float(g(tau_if_stopped))
    return conditional_expectation(g, x, t, law, params)


def posterior_given_path(
    t: float,
    x: float,
    law: MixingLaw,
    tau_if_stopped: float | None = None,
    params: ProcessParams = DEFAULT_PARAMS,
) -> TauPosterior:
    """Posterior of tau given the path up to t; a Dirac at tau once stopped."""
    stopped = is_stopped(x, params)
    if stopped != (tau_if_stopped is not None):
        raise PreconditionError("tau must be supplied exactly when the observation is stopped")
    if not stopped:
        return posterior_tau(x, t, law, params)
    if not (0 < tau_if_stopped <= t):
        raise PreconditionError("a stopped observation needs 0 < tau <= t")
    return TauPosterior(t, float(x), 1.0, MixingLaw([tau_if_stopped], [1.0], name="dirac"), float(tau_if_stopped))


@dataclass(frozen=True, eq=False)
class PredictiveLaw:
    """Law of zeta_u given zeta_t = x < a: atom at a plus a density on (x, a).

    The continuous part is the mixture over r > u of transition densities
    with weights ``mix_weights``; it is kept analytically and only put on
    a grid for output.
    """

    t: float
    x: float
    u: float
    atom_at_one: float
    mix_r: np.ndarray
    mix_weights: np.ndarray
    params: ProcessParams = DEFAULT_PARAMS

    @property
    def continuous_mass(self) -> float:
        return math.fsum(self.mix_weights)

    def _z(self, y):
        a = self.params.endpoint_a
        y = np.asarray(y, dtype=float)
        return np.clip((y / a - self.x / a) / (1.0 - self.x / a), 0.0, 1.0)

    def continuous_cdf(self, y) -> np.ndarray:
        """Mass of the continuous part on (x, y]."""
        z = self._z(y)
        if self.mix_r.size == 0:
            return np.zeros_like(z)
        k = self.params.kappa
        ib = regularized_incomplete_beta(
            z[..., None], k * (self.u - self.t), k * (self.mix_r - self.u)
        )
        return np.asarray(ib) @ self.mix_weights

    def cdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = self.continuous_cdf(y)
        return np.where(y >= self.params.endpoint_a, out + self.atom_at_one, out)

    def density(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        a, k = self.params.endpoint_a, self.params.kappa
        out = np.zeros(y.shape)
        for r, w in zip(self.mix_r, self.mix_weights):
            lp = bridge_transition_log_pdf(y / a, self.x / a, k * self.t, k * self.u, k * r)
            out += w * np.exp(lp) / a
        return out

    def bin_probabilities(self, edges) -> np.ndarray:
        """Continuous mass in each bin [e_i, e_{i+1}); the atom is reported separately."""
        c = self.continuous_cdf(np.asarray(edges, dtype=float))
        return np.diff(c)

    def grid(self, n: int = 201):
        a = self.params.endpoint_a
        y = self.x + (a - self.x) * (np.arange(1, n + 1) / (n + 1))
        return y, self.density(y)

    def to_dict(self, n: int = 201) -> dict:
        y, dens = self.grid(n)
        return {
            "observation": {"t": self.t, "x": self.x},
            "horizon": self.u,
            "stopped_weight": 0.0,
            "atoms": [[self.params.endpoint_a, self.atom_at_one]],
            "grid": [float(v) for v in y],
            "weights": [float(v) for v in dens],
            "mixture": [[float(r), float(w)] for r, w in zip(self.mix_r, self.mix_weights)],
            "continuous_mass": self.continuous_mass,
        }


def predictive_law(
    x: float, t: float, u: float, law: MixingLaw, params: ProcessParams = DEFAULT_PARAMS
) -> PredictiveLaw:
    """Law of zeta_u given zeta_t = x with 0 < x < a and u > t.

    Posterior mass on (t, u] becomes the atom at the endpoint; mass beyond
    u spreads over (x, a) through the transition kernel.
    """
    if u <= t:
        raise PreconditionError("need u > t")
    if not (0 < x < params.endpoint_a):
        raise PreconditionError("the predictive law needs an unstopped observation 0 < x < a")
    r, post = posterior_tail_weights(x, t, law, params)
    beyond = r > u
    atom = math.fsum(post[~beyond])
    pl = PredictiveLaw(t, float(x), float(u), atom, r[beyond], post[beyond], params)
    if abs(pl.atom_at_one + pl.continuous_mass - 1.0) > 1e-10:
        raise AssertionError("predictive law does not carry unit mass")
    return pl


def predictive_bin_probabilities(x_samples, t, u, law, edges, params: ProcessParams = DEFAULT_PARAMS):
    """Average over observations of the predictive bin masses; last entry is the atom.

    Used to compare against Monte Carlo histograms conditioned on x falling
    in a bin, which makes the comparison exact regardless of bin width.
    """
    x_samples = np.asarray(x_samples, dtype=float)
    r, post = posterior_tail_weights(x_samples, t, law, params)
    beyond = r > u
    atom = post[:, ~beyond].sum(axis=1)
    a, k = params.endpoint_a, params.kappa
    edges = np.asarray(edges, dtype=float)
    out = np.zeros(edges.size)
    if np.any(beyond):
        xs = x_samples[:, None, None] / a
        z = np.clip((edges[None, :, None] / a - xs) / (1.0 - xs), 0.0, 1.0)
        ib = regularized_incomplete_beta(z, k * (u - t), k * (r[beyond][None, None, :] - u))
        mass = np.einsum("nel,nl->ne", ib, post[:, beyond])
        out[:-1] = np.diff(mass, axis=1).mean(axis=0)
    out[-1] = atom.mean()
    return out
