"""Prior law of the random bridge length tau.

A law is a finite set of atoms plus an optional gridded density part
(quadrature nodes with cell masses). Every integral against the law is
therefore a finite weighted sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

MIN_LOCATION = 1e-9
MASS_TOL = 1e-12
TRUNCATION_TOL = 1e-6
DEFAULT_NODES = 512


class LawError(ValueError):
    """Invalid mixing-law construction or query."""


@dataclass(frozen=True, eq=False)
class MixingLaw:
    atom_locations: np.ndarray
    atom_weights: np.ndarray
    grid_nodes: np.ndarray = field(default_factory=lambda: np.empty(0))
    grid_weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    truncated_mass: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        for attr in ("atom_locations", "atom_weights", "grid_nodes", "grid_weights"):
            arr = np.array(getattr(self, attr), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        locs, w = self.atom_locations, self.atom_weights
        nodes, gw = self.grid_nodes, self.grid_weights
        if locs.shape != w.shape or nodes.shape != gw.shape:
            raise LawError("locations and weights must have equal lengths")
        if locs.size + nodes.size == 0:
            raise LawError("a mixing law needs at least one atom or grid node")
        if not (np.all(np.isfinite(locs)) and np.all(np.isfinite(nodes))):
            raise LawError("locations must be finite")
        if np.any(locs < MIN_LOCATION) or np.any(nodes < MIN_LOCATION):
            raise LawError(f"tau must be strictly positive (>= {MIN_LOCATION})")
        if np.any(np.diff(locs) <= 0) or np.any(np.diff(nodes) <= 0):
            raise LawError("locations must be strictly increasing")
        if np.any(w <= 0) or np.any(w > 1) or np.any(gw < 0):
            raise LawError("atom weights must lie in (0, 1], grid weights >= 0")
        total = math.fsum(w) + math.fsum(gw)
        if abs(total - 1.0) > MASS_TOL:
            raise LawError(f"total mass is {total!r}, expected 1")

    @property
    def total_mass(self) -> float:
        return math.fsum(self.atom_weights) + math.fsum(self.grid_weights)

    @property
    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """All point masses (atoms and grid nodes), sorted by location."""
        loc = np.concatenate([self.atom_locations, self.grid_nodes])
        w = np.concatenate([self.atom_weights, self.grid_weights])
        order = np.argsort(loc, kind="stable")
        return loc[order], w[order]

    @property
    def is_dirac(self) -> bool:
        return self.atom_locations.size == 1 and self.grid_nodes.size == 0

    @property
    def upper(self) -> float:
        return float(self.support[0][-1])

    def cdf(self, t: float) -> float:
        return cdf(self, t)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "atoms": [[float(r), float(w)] for r, w in zip(self.atom_locations, self.atom_weights)],
            "grid": [float(r) for r in self.grid_nodes],
            "weights": [float(w) for w in self.grid_weights],
            "truncated_mass": float(self.truncated_mass),
        }


def _normalized(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return w / math.fsum(w)


def dirac(r: float) -> MixingLaw:
    return MixingLaw([r], [1.0], name="dirac")


def discrete(locations, weights) -> MixingLaw:
    """Finitely many atoms; weights are renormalized and must be positive."""
    loc = np.asarray(locations, dtype=float)
    w = np.asarray(weights, dtype=float)
    if loc.shape != w.shape or loc.ndim != 1:
        raise LawError("locations and weights must be 1-d and of equal length")
    if np.any(w <= 0):
        raise LawError("atom weights must be positive")
    order = np.argsort(loc)
    return MixingLaw(loc[order], _normalized(w[order]), name="discrete")


def from_grid(nodes, weights, truncated_mass: float = 0.0, name: str = "grid") -> MixingLaw:
    nodes = np.asarray(nodes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise LawError("grid weights must be nonnegative")
    return MixingLaw(
        np.empty(0), np.empty(0), nodes, _normalized(weights), truncated_mass, name=name
    )


def gridded(
    dist_cdf: Callable[[np.ndarray], np.ndarray],
    upper: float,
    lower: float | None = None,
    nodes: int = DEFAULT_NODES,
    name: str = "gridded",
    spacing: str = "geometric",
) -> MixingLaw:
    """Discretize an absolutely continuous law on (0, upper].

    Cell edges are geometric from ``lower`` to ``upper`` (the first cell is
    (0, lower]); each cell's mass sits at its midpoint. Mass above
    ``upper`` must be below ``TRUNCATION_TOL`` and is reported, then the
    weights are renormalized.
    """
    if upper <= 0 or nodes < 2:
        raise LawError("need upper > 0 and at least two nodes")
    if spacing == "geometric":
        lower = upper * 1e-5 if lower is None else lower
        if not (MIN_LOCATION <= lower < upper):
            raise LawError("need MIN_LOCATION <= lower < upper")
        inner = np.geomspace(lower, upper, nodes)
        edges = np.concatenate([[0.0], inner])
    elif spacing == "linear":
        lower = 0.0 if lower is None else lower
        edges = np.linspace(lower, upper, nodes + 1)
    else:
        raise LawError(f"unknown spacing {spacing!r}")
    probs = np.asarray(dist_cdf(edges), dtype=float)
    tail = 1.0 - probs[-1]
    if tail > TRUNCATION_TOL:
        raise LawError(
            f"mass {tail:.3g} beyond truncation {upper} exceeds {TRUNCATION_TOL}; raise the upper bound"
        )
    cell = np.diff(probs)
    mids = 0.5 * (edges[:-1] + edges[1:])
    keep = cell > 0
    return from_grid(mids[keep], cell[keep], truncated_mass=max(tail, 0.0), name=name)


def exponential(rate: float = 1.0, upper: float | None = None, nodes: int = DEFAULT_NODES, lower=None):
    if rate <= 0:
        raise LawError("rate must be positive")
    upper = 20.0 / rate if upper is None else upper
    return gridded(lambda x: -np.expm1(-rate * x), upper, lower, nodes, name="exponential")


def uniform(low: float, high: float, nodes: int = DEFAULT_NODES):
    if not (0 <= low < high):
        raise LawError("need 0 <= low < high")
    return gridded(
        lambda x: np.clip((x - low) / (high - low), 0.0, 1.0),
        high,
        max(low, MIN_LOCATION) if low > 0 else None,
        nodes,
        name="uniform",
        spacing="linear" if low > 0 else "geometric",
    )


def gamma(shape: float, rate: float = 1.0, upper: float | None = None, nodes: int = DEFAULT_NODES, lower=None):
    if shape <= 0 or rate <= 0:
        raise LawError("shape and rate must be positive")
    if upper is None:
        # crude bound, then grow until the tail is small enough
        upper = (shape + 10.0 * math.sqrt(shape) + 20.0) / rate
        while special.gammaincc(shape, rate * upper) > TRUNCATION_TOL / 10:
            upper *= 1.5
    return gridded(lambda x: special.gammainc(shape, rate * x), upper, lower, nodes, name="gamma")


def cdf(law: MixingLaw, t: float) -> float:
    """P(tau <= t); right-continuous."""
    if t < 0:
        return 0.0
    loc, w = law.support
    return min(1.0, math.fsum(w[loc <= t]))


def integrate_tail(law: MixingLaw, t: float, f: Callable) -> float:
    """Integral of f over (t, inf) against the law; f gets an array of locations."""
    loc, w = law.support
    mask = loc > t
    if not np.any(mask):
        return 0.0
    r = loc[mask]
    vals = np.asarray(f(r), dtype=float)
    if vals.shape == ():
        vals = np.full(r.shape, float(vals))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        raise LawError(f"integrand is not finite at r = {float(r[bad][0])!r}")
    return math.fsum(vals * w[mask])


def tail_moment(law: MixingLaw, alpha: float) -> float:
    """E[tau^alpha]."""
    if alpha <= 0:
        raise LawError("alpha must be positive")
    loc, w = law.support
    return math.fsum(w * loc**alpha)


def sample_tau(law: MixingLaw, rng: np.random.Generator, size=None):
    """Draw from the atom/grid mixture by inverting its cumulative weights."""
    loc, w = law.support
    cum = np.cumsum(w)
    cum[-1] = 1.0
    u = rng.random(size)
    idx = np.searchsorted(cum, u, side="right")
    idx = np.minimum(idx, loc.size - 1)
    out = loc[idx]
    return float(out) if np.ndim(out) == 0 else out


def from_spec(spec: dict) -> MixingLaw:
    """Build a law from its config-file description."""
    kind = spec.get("family")
    params = {k: v for k, v in spec.items() if k != "family"}
    if kind == "dirac":
        return dirac(float(params["r"]))
    if kind in ("discrete", "atoms"):
        atoms = params["atoms"]
        return discrete([a[0] for a in atoms], [a[1] for a in atoms])
    if kind == "grid":
        return from_grid(params["grid"], params["weights"])
    if kind == "exponential":
        return exponential(**params)
    if kind == "uniform":
        return uniform(**params)
    if kind == "gamma":
        return gamma(**params)
    raise LawError(f"unknown law family {kind!r}")
