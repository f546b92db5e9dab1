"""Samplers for gamma paths, gamma bridges and random-length bridges.

Three bridge algorithms are provided:

* ``normalized``: simulate gamma increments and divide by the terminal value;
* ``markov``: chain the Beta transition kernel step by step;
* ``jumps``: keep the jumps of size > epsilon of the Poisson representation
  and normalize by their sum.

Samplers return a :class:`Path` when ``size`` is None and an
:class:`Ensemble` (values on a shared grid) otherwise. Gamma variates are
drawn in log space so that tiny shapes never underflow to zero; the
values before the pin are capped just below the endpoint so the event
``value == a`` coincides exactly with ``tau <= t``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .mixing_law import MixingLaw, cdf, integrate_tail, sample_tau

DEFAULT_JUMP_CAP = 10_000_000


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessParams:
    """Rate ``eta``, shape rate ``kappa`` and bridge endpoint ``endpoint_a``."""

    eta: float = 1.0
    kappa: float = 1.0
    endpoint_a: float = 1.0

    def __post_init__(self):
        for name in ("eta", "kappa", "endpoint_a"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise SamplerError(f"{name} must be a positive finite number, got {v!r}")

    def to_dict(self) -> dict:
        return {"eta": self.eta, "kappa": self.kappa, "endpoint_a": self.endpoint_a}


@dataclass(frozen=True, eq=False)
class Path:
    times: np.ndarray
    values: np.ndarray
    pin: tuple[float, float] | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise SamplerError("times and values must be 1-d of equal length")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def check(self) -> None:
        """Raise if the path violates its invariants."""
        if self.times[0] != 0 or np.any(np.diff(self.times) <= 0):
            raise SamplerError("times must start at 0 and increase strictly")
        if np.any(np.diff(self.values) < 0) or np.any(self.values < 0):
            raise SamplerError("values must be nonnegative and nondecreasing")
        if self.pin is not None:
            r, a = self.pin
            after = self.times >= r
            if np.any(self.values[after] != a) or np.any(self.values[~after] >= a):
                raise SamplerError("pinned value must be reached exactly at the pin time")
            if self.values[0] != 0 or np.any(self.values > a):
                raise SamplerError("bridge values must start at 0 and stay in [0, a]")


@dataclass(eq=False)
class Ensemble:
    """N paths recorded on a shared grid; ``taus`` holds each pin time."""

    grid: np.ndarray
    values: np.ndarray
    taus: np.ndarray | None = None
    params: ProcessParams = field(default_factory=ProcessParams)

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(self.grid == t)
        if idx.size == 0:
            raise SamplerError(f"time {t} is not on the grid")
        return self.values[:, idx[0]]

    def path(self, i: int) -> Path:
        """Path i, with its pin time inserted into the grid if it falls between nodes."""
        times, values = self.grid, self.values[i]
        if self.taus is None:
            return Path(times, values)
        tau = float(self.taus[i])
        a = self.params.endpoint_a
        if tau <= times[-1] and tau not in times:
            k = int(np.searchsorted(times, tau))
            times = np.insert(times, k, tau)
            values = np.insert(values, k, a)
        return Path(times, values, pin=(tau, a))


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise SamplerError("grid needs at least two times")
    if grid[0] != 0 or np.any(np.diff(grid) <= 0) or not np.all(np.isfinite(grid)):
        raise SamplerError("grid must start at 0 and increase strictly")
    return grid


def make_grid(end: float, step: float | None = None, n: int | None = None, extra=()) -> np.ndarray:
    """Uniform grid on [0, end]; ``extra`` times (e.g. atom locations) are merged in."""
    if n is None:
        if step is None:
            raise SamplerError("give either step or n")
        n = max(1, int(round(end / step)))
    grid = end * np.arange(n + 1) / n
    if len(extra):
        grid = np.union1d(grid, [e for e in extra if 0 < e <= end])
    return check_grid(grid)


def log_gamma_variates(shape, rng: np.random.Generator) -> np.ndarray:
    """log of Gamma(shape, 1) variates; -inf where shape == 0.

    For shape < 1 uses G = G' * U^(1/shape) with G' ~ Gamma(shape + 1).
    """
    shape = np.asarray(shape, dtype=float)
    out = np.full(shape.shape, -np.inf)
    small = (shape > 0) & (shape < 1)
    large = shape >= 1
    if np.any(small):
        a = shape[small]
        g = rng.gamma(a + 1.0)
        u = rng.random(a.shape)
        out[small] = np.log(g) + np.log1p(-u) / a
    if np.any(large):
        out[large] = np.log(rng.gamma(shape[large]))
    return out


def _finish_bridge(grid, taus, ratios, a):
    # ratios: zeta / a on the grid for t < tau; exact pin afterwards
    below = np.nextafter(a, 0.0)
    vals = np.minimum(a * ratios, below)
    vals = np.where(grid[None, :] >= taus[:, None], a, vals)
    vals[:, 0] = np.where(taus > 0, 0.0, a)
    return vals


def _normalized_values(grid, taus, params: ProcessParams, rng) -> np.ndarray:
    clipped = np.minimum(grid[None, :], taus[:, None])
    dt = np.diff(clipped, axis=1)
    extra = taus - clipped[:, -1]
    shapes = params.kappa * np.concatenate([dt, extra[:, None]], axis=1)
    logs = log_gamma_variates(shapes, rng)
    # eta only rescales every increment and cancels in the ratio
    cum = np.logaddexp.accumulate(logs, axis=1)
    total = cum[:, -1]
    ratios = np.exp(cum[:, :-1] - total[:, None])
    ratios = np.concatenate([np.zeros((len(taus), 1)), ratios], axis=1)
    return _finish_bridge(grid, taus, ratios, params.endpoint_a)


def sample_gamma_path(grid, params: ProcessParams, rng: np.random.Generator, size: int | None = None):
    """Gamma process on the grid: independent Gamma(kappa dt, rate eta) increments."""
    grid = check_grid(grid)
    n = 1 if size is None else int(size)
    dt = np.diff(grid)
    inc = rng.gamma(params.kappa * np.broadcast_to(dt, (n, dt.size))) / params.eta
    vals = np.concatenate([np.zeros((n, 1)), np.cumsum(inc, axis=1)], axis=1)
    if size is None:
        return Path(grid, vals[0])
    return Ensemble(grid, vals, None, params)


def _pinned_grid(grid, r):
    grid = check_grid(grid)
    if grid[-1] < r:
        raise SamplerError(f"grid must cover the bridge length {r}")
    return grid


def sample_bridge_normalized(grid, r: float, params: ProcessParams, rng, size: int | None = None):
    """a * gamma_{t ^ r} / gamma_r on the grid."""
    grid = _pinned_grid(grid, r)
    n = 1 if size is None else int(size)
    taus = np.full(n, float(r))
    vals = _normalized_values(grid, taus, params, rng)
    if size is None:
        return Ensemble(grid, vals, taus, params).path(0)
    return Ensemble(grid, vals, taus, params)


def sample_bridge_markov(
    grid, r: float, params: ProcessParams, rng, size: int | None = None, start: tuple[float, float] | None = None
):
    """Sequential sampler using the Beta transition kernel.

    With ``start=(t0, x0)`` the chain begins from value x0 at time t0 =
    grid[0] and the raw value array is returned (shape (size, len(grid))).
    Time enters only through kappa * t, which is how kappa != 1 is handled.
    """
    grid = np.asarray(grid, dtype=float)
    a = params.endpoint_a
    if start is None:
        grid = _pinned_grid(grid, r)
        t0, x0 = 0.0, 0.0
    else:
        t0, x0 = float(start[0]), float(start[1])
        if grid[0] != t0 or np.any(np.diff(grid) <= 0):
            raise SamplerError("grid must start at the start time and increase")
        if not (0 <= x0 < a) or not (t0 < r):
            raise SamplerError("start must be an unpinned state before r")
    n = 1 if size is None else int(size)
    k = params.kappa
    # log of the remaining fraction 1 - zeta/a
    log_rest = np.full(n, math.log1p(-x0 / a))
    vals = np.empty((n, grid.size))
    vals[:, 0] = x0
    below = np.nextafter(a, 0.0)
    for j in range(1, grid.size):
        s, s_next = grid[j - 1], grid[j]
        if s >= r:
            vals[:, j] = a
            continue
        if s_next >= r:
            vals[:, j:] = a
            break
        l1 = log_gamma_variates(np.full(n, k * (s_next - s)), rng)
        l2 = log_gamma_variates(np.full(n, k * (r - s_next)), rng)
        # 1 - B with B ~ Beta(k ds, k (r - s_next)) equals 1 / (1 + G1/G2)
        log_rest = log_rest - np.logaddexp(0.0, l1 - l2)
        vals[:, j] = np.minimum(-a * np.expm1(log_rest), below)
    if start is not None:
        return vals[0] if size is None else vals
    taus = np.full(n, float(r))
    ens = Ensemble(grid, vals, taus, params)
    return ens.path(0) if size is None else ens


@dataclass(frozen=True, eq=False)
class JumpSet:
    sizes: np.ndarray
    times: np.ndarray
    r: float
    epsilon: float
    truncated_mass: float
    endpoint_a: float = 1.0

    def evaluate(self, t) -> np.ndarray:
        """Normalized bridge value a * sum_{U_k <= t} J_k / sum J_k."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        total = math.fsum(self.sizes)
        out = np.array([math.fsum(self.sizes[self.times <= s]) / total for s in t])
        out = np.where(t >= self.r, 1.0, np.minimum(out, np.nextafter(1.0, 0.0)))
        return self.endpoint_a * out


def _envelope(epsilon: float, eta: float):
    # envelope for x^-1 e^{-eta x} on (eps, inf): 1/x on (eps, s], e^{-eta x}/s beyond
    s = max(epsilon, 1.0 / eta)
    m1 = math.log(s / epsilon)
    m2 = math.exp(-eta * s) / (eta * s)
    return s, m1, m2


def _jump_proposals(count: int, epsilon: float, eta: float, rng):
    s, m1, m2 = _envelope(epsilon, eta)
    first = rng.random(count) < m1 / (m1 + m2)
    u = rng.random(count)
    x = np.where(first, epsilon * np.exp(u * m1), s - np.log1p(-u) / eta)
    accept_prob = np.where(first, np.exp(-eta * x), s / x)
    keep = rng.random(count) < accept_prob
    return x, keep


def expected_envelope_count(r: float, epsilon: float, params: ProcessParams) -> float:
    _, m1, m2 = _envelope(epsilon, params.eta)
    return r * params.kappa * (m1 + m2)


def sample_bridge_jumps(
    r: float, epsilon: float, params: ProcessParams, rng, cap: int = DEFAULT_JUMP_CAP
) -> JumpSet:
    """Jumps larger than epsilon of a gamma process on [0, r].

    A Poisson number of envelope proposals is thinned to the Levy intensity
    (kappa / x) e^{-eta x}, so accepted jumps form the exact Poisson process
    restricted to (epsilon, inf). Jump times are uniform on [0, r].
    """
    if epsilon <= 0 or r <= 0:
        raise SamplerError("epsilon and r must be positive")
    mean = expected_envelope_count(r, epsilon, params)
    if mean > cap:
        raise SamplerError(f"expected {mean:.3g} proposals exceeds the cap {cap}; raise epsilon")
    while True:
        count = rng.poisson(mean)
        x, keep = _jump_proposals(count, epsilon, params.eta, rng)
        sizes = x[keep]
        if sizes.size:
            break
    times = rng.random(sizes.size) * r
    order = np.argsort(-sizes, kind="stable")
    truncated = r * params.kappa * (-math.expm1(-params.eta * epsilon)) / params.eta
    return JumpSet(sizes[order], times[order], float(r), float(epsilon), truncated, params.endpoint_a)


def _jumps_values(grid, taus, epsilon, params: ProcessParams, rng, cap=DEFAULT_JUMP_CAP):
    """Jump-representation bridges of lengths ``taus`` on a shared grid.

    Also returns, per path, the time of its largest jump.
    """
    n = taus.size
    s, m1, m2 = _envelope(epsilon, params.eta)
    means = taus * params.kappa * (m1 + m2)
    if means.max() > cap:
        raise SamplerError("expected jump count exceeds the cap; raise epsilon")
    sizes_sum = np.zeros(n)
    partial = np.zeros((n, grid.size))
    largest = np.zeros(n)
    largest_time = np.zeros(n)
    todo = np.arange(n)
    while todo.size:
        counts = rng.poisson(means[todo])
        owner = np.repeat(todo, counts)
        x, keep = _jump_proposals(owner.size, epsilon, params.eta, rng)
        owner, x = owner[keep], x[keep]
        u = rng.random(x.size) * taus[owner]
        got = np.bincount(owner, minlength=n)
        done = todo[got[todo] > 0]
        sel = np.isin(owner, done)
        owner, x, u = owner[sel], x[sel], u[sel]
        sizes_sum[done] = np.bincount(owner, weights=x, minlength=n)[done]
        for j, t in enumerate(grid):
            part = np.bincount(owner, weights=x * (u <= t), minlength=n)
            partial[done, j] = part[done]
        if owner.size:
            # largest jump per path: sort by (owner, size)
            order = np.lexsort((x, owner))
            last = np.r_[owner[order][1:] != owner[order][:-1], True]
            idx = order[last]
            largest[owner[idx]] = x[idx]
            largest_time[owner[idx]] = u[idx]
        todo = todo[got[todo] == 0]
    ratios = partial / sizes_sum[:, None]
    return _finish_bridge(grid, taus, ratios, params.endpoint_a), largest_time


def sample_bridge_jumps_ensemble(grid, r: float, epsilon: float, params: ProcessParams, rng, size: int):
    grid = _pinned_grid(grid, r)
    taus = np.full(int(size), float(r))
    vals, _ = _jumps_values(grid, taus, epsilon, params, rng)
    return Ensemble(grid, vals, taus, params)


def sample_random_length_bridge(grid, law: MixingLaw, params: ProcessParams, tau_rng, path_rng):
    """One bridge whose length is drawn from ``law``; returns (tau, Path).

    tau and the path use separate streams so they are independent.
    """
    grid = check_grid(grid)
    tau = sample_tau(law, tau_rng)
    vals = _normalized_values(grid, np.array([tau]), params, path_rng)
    return tau, Ensemble(grid, vals, np.array([tau]), params).path(0)


SAMPLERS = ("normalized", "markov", "jumps")


def _chunk(grid, law, params, seed, k, n, sampler, epsilon):
    taus = sample_tau(law, streams.stream(seed, streams.TAU, k), size=n)
    taus = np.atleast_1d(taus)
    rng = streams.stream(seed, streams.PATH, k)
    if sampler == "normalized":
        return taus, _normalized_values(grid, taus, params, rng)
    if sampler == "jumps":
        return taus, _jumps_values(grid, taus, epsilon, params, streams.stream(seed, streams.JUMPS, k))[0]
    raise SamplerError(f"sampler {sampler!r} does not support random lengths")


def random_length_ensemble(
    grid,
    law: MixingLaw,
    params: ProcessParams,
    seed: int,
    n: int,
    threads: int = 1,
    sampler: str = "normalized",
    epsilon: float = 1e-6,
) -> Ensemble:
    """N random-length bridges, generated in fixed-size chunks.

    Chunk k uses streams (seed, tag, k), so the output does not depend on
    ``threads``.
    """
    grid = check_grid(grid)
    parts = list(streams.chunks(int(n)))
    work = lambda p: _chunk(grid, law, params, seed, p[0], p[2] - p[1], sampler, epsilon)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, parts))
    else:
        results = [work(p) for p in parts]
    taus = np.concatenate([r[0] for r in results])
    vals = np.concatenate([r[1] for r in results], axis=0)
    return Ensemble(grid, vals, taus, params)


def jump_time_ensemble(law: MixingLaw, params: ProcessParams, seed: int, n: int, epsilon: float = 1e-6):
    """Time of the largest jump for N random-length bridges (one per path)."""
    times = []
    grid = np.array([0.0])
    for k, lo, hi in streams.chunks(int(n)):
        taus = np.atleast_1d(sample_tau(law, streams.stream(seed, streams.TAU, k), size=hi - lo))
        _, t = _jumps_values(grid, taus, epsilon, params, streams.stream(seed, streams.JUMPS, k))
        times.append(t)
    return np.concatenate(times)


def jump_time_cdf(law: MixingLaw, t: float) -> float:
    """P(U <= t) for a jump time U of the random-length bridge."""
    if t <= 0:
        return 0.0
    return min(1.0, cdf(law, t) + t * integrate_tail(law, t, lambda r: 1.0 / r))
