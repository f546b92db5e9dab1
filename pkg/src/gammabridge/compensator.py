"""Drift (compensator) of the random-length bridge and martingale residuals.

Two drifts are available:

* ``h``: the drift when tau is known, (a - x) / (tau - s) before tau;
* ``f``: the drift in the bridge's own filtration,
  (a - x) * sum_{r > s} phi(x, s, r) / (r - s) P(tau = r).

``residual = value - integral of drift`` should be a martingale stopped at
tau. Integration is trapezoidal on the grid, except that the step ending
at (or containing) the pin uses the left value only, and in ``f`` mode so
does every step ending at an atom of the prior, where the drift jumps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .filtering import DEFAULT_PARAMS, PreconditionError, posterior_tail_weights
from .mixing_law import MixingLaw
from .pathgen import Ensemble, Path, ProcessParams

MODES = ("h", "f")
ZERO_INCREMENT = 1e-12


def h_drift(x, tau, s, endpoint_a: float = 1.0):
    """(a - x) / (tau - s) for s < tau, else 0."""
    x, tau, s = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, tau, s)))
    out = np.zeros(x.shape)
    live = s < tau
    out[live] = (endpoint_a - x[live]) * (1.0 / (tau[live] - s[live]))
    return float(out) if out.ndim == 0 else out


def f_drift(x, s: float, law: MixingLaw, params: ProcessParams = DEFAULT_PARAMS):
    """Drift of the bridge given only its own past; zero once the endpoint is reached."""
    a = params.endpoint_a
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > a):
        raise PreconditionError("x must lie in [0, a]")
    flat = np.atleast_1d(x).ravel()
    out = np.zeros(flat.shape)
    live = flat < a
    if np.any(live):
        r, post = posterior_tail_weights(flat[live], s, law, params)
        inv_gap = 1.0 / (r - s)
        out[live] = (a - flat[live]) * (post * inv_gap).sum(axis=-1)
    out = out.reshape(x.shape)
    return float(out) if out.ndim == 0 else out


def integrated_drift_bound(law: MixingLaw, t: float) -> float:
    """E[int_0^t Z ds] = E[(t ^ tau) / tau], never above 1."""
    loc, w = law.support
    return math.fsum(w * np.minimum(t, loc) / loc)


def _drift_matrix(grid, values, taus, law, mode, params):
    a = params.endpoint_a
    n, g = values.shape
    drift = np.zeros((n, g))
    for j, s in enumerate(grid):
        live = s < taus
        if not np.any(live):
            continue
        if mode == "h":
            drift[live, j] = h_drift(values[live, j], taus[live], s, a)
        else:
            drift[live, j] = f_drift(values[live, j], s, law, params)
    return drift


def integrate_drift(grid, values, taus, law: MixingLaw | None, mode: str, params=DEFAULT_PARAMS):
    """Cumulative drift integral on the grid for every path."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "f" and law is None:
        raise ValueError("f mode needs the prior law")
    grid = np.asarray(grid, dtype=float)
    drift = _drift_matrix(grid, values, taus, law, mode, params)
    atoms = set(law.atom_locations.tolist()) if (mode == "f" and law is not None) else set()
    n, g = values.shape
    cum = np.zeros((n, g))
    for j in range(g - 1):
        s0, s1 = grid[j], grid[j + 1]
        left, right = drift[:, j], drift[:, j + 1]
        h = s1 - s0
        if s1 in atoms:
            step = left * h
        else:
            step = 0.5 * (left + right) * h
        pin_inside = (s0 < taus) & (taus <= s1)
        step = np.where(pin_inside, left * (np.minimum(taus, s1) - s0), step)
        step = np.where(s0 >= taus, 0.0, step)
        cum[:, j + 1] = cum[:, j] + step
    return cum


@dataclass(eq=False)
class DriftReport:
    grid: np.ndarray
    values: np.ndarray
    drift_integral: np.ndarray
    taus: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.values - self.drift_integral

    def increments(self) -> np.ndarray:
        return np.diff(self.residual, axis=1)

    def summary(self) -> dict:
        """Per-step mean residual increment, its standard error and their ratio."""
        inc = self.increments()
        n = inc.shape[0]
        mean = inc.mean(axis=0)
        se = inc.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        # steps that cancel exactly (e.g. the left-rule step into the pin) leave only rounding
        mean = np.where(np.abs(mean) < ZERO_INCREMENT, 0.0, mean)
        z = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0), np.where(mean == 0, 0.0, np.inf))
        start = self.values[:, :-1]
        corr = np.zeros_like(mean)
        for j in range(inc.shape[1]):
            a, b = inc[:, j], start[:, j]
            if a.std() > 0 and b.std() > 0:
                corr[j] = np.corrcoef(a, b)[0, 1]
        # slope of increment on start value over its heteroskedasticity-robust SE;
        # increment variance depends strongly on the start value near a pin
        centered = start - start.mean(axis=0)
        cross = inc * centered
        den = np.sqrt((cross**2).sum(axis=0))
        corr_z = np.where(den > 0, cross.sum(axis=0) / np.where(den > 0, den, 1.0), 0.0)
        return {
            "n_paths": int(n),
            "times": [float(v) for v in self.grid[1:]],
            "mean_increment": [float(v) for v in mean],
            "standard_error": [float(v) for v in se],
            "abs_mean_over_se": [float(v) for v in z],
            "max_abs_mean_over_se": float(z.max()),
            "increment_start_correlation": [float(v) for v in corr],
            "max_abs_correlation": float(np.abs(corr).max()),
            "correlation_z": [float(v) for v in corr_z],
            "max_abs_correlation_z": float(np.abs(corr_z).max()),
        }

    def write_csv(self, path, header: str = "") -> None:
        n, g = self.values.shape
        cols = (
            np.repeat(np.arange(n), g).tolist(),
            np.tile(self.grid, n).tolist(),
            self.values.ravel().tolist(),
            self.drift_integral.ravel().tolist(),
            self.residual.ravel().tolist(),
        )
        # repr of Python floats is the shortest round-tripping form
        rows = [f"{i},{t!r},{v!r},{d!r},{e!r}" for i, t, v, d, e in zip(*cols)]
        with open(path, "w", newline="\n") as fh:
            if header:
                fh.write(header)
            fh.write("path_id,time,value,drift_integral,residual\n")
            fh.write("\n".join(rows) + "\n")

    def summary_json(self, extra: dict | None = None) -> str:
        doc = dict(extra or {})
        doc["summary"] = self.summary()
        return json.dumps(doc, indent=2, sort_keys=True)


def compensate_ensemble(ens: Ensemble, law: MixingLaw | None, mode: str) -> DriftReport:
    if ens.taus is None:
        raise PreconditionError("compensation needs pinned paths with known pin times")
    cum = integrate_drift(ens.grid, ens.values, ens.taus, law, mode, ens.params)
    return DriftReport(ens.grid, ens.values, cum, ens.taus)


def compensate_path(path: Path, law: MixingLaw | None, mode: str, params=DEFAULT_PARAMS) -> DriftReport:
    """Residual along one path (on its own, possibly pin-augmented, grid)."""
    if path.pin is not None:
        tau = path.pin[0]
    elif mode == "h":
        raise PreconditionError("the path carries no pin; h mode needs tau")
    else:
        hit = np.flatnonzero(path.values == params.endpoint_a)
        tau = path.times[hit[0]] if hit.size else np.inf
    taus = np.array([tau])
    cum = integrate_drift(path.times, path.values[None, :], taus, law, mode, params)
    return DriftReport(path.times, path.values[None, :], cum, taus)
