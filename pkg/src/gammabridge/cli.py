"""Command-line front end.

    gammabridge simulate|filter|predict|compensate|validate [--config FILE]
        [--seed N] [--out DIR] [--threads N] [command options]

The config is one JSON document with sections ``process``, ``law``,
``grid`` and ``run`` plus a top-level ``seed``; flags override file
fields. Every output embeds the config hash and seed, and re-running a
command with the same config reproduces its outputs byte for byte.

Exit codes: 0 success, 1 a validation gate failed, 2 bad config or
inadmissible observation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import re
import sys
from pathlib import Path as FsPath
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import harness
from . import mixing_law as ml
from .compensator import compensate_ensemble, integrated_drift_bound
from .filtering import PreconditionError, posterior_given_path, posterior_tau, predictive_law
from .mixing_law import LawError
from .pathgen import ProcessParams, SamplerError, check_grid, make_grid, random_length_ensemble

log = logging.getLogger("gammabridge")

EXIT_OK, EXIT_GATE, EXIT_CONFIG = 0, 1, 2
U64 = 2**64 - 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProcessConfig(_Strict):
    eta: float = Field(1.0, gt=0, allow_inf_nan=False)
    kappa: float = Field(1.0, gt=0, allow_inf_nan=False)
    endpoint_a: float = Field(1.0, gt=0, allow_inf_nan=False)


class GridConfig(_Strict):
    end: Optional[float] = Field(None, gt=0, allow_inf_nan=False)
    step: Optional[float] = Field(None, gt=0, allow_inf_nan=False)
    n: Optional[int] = Field(None, ge=1)
    times: Optional[list[float]] = None
    include_atoms: bool = False

    @model_validator(mode="after")
    def _one_form(self):
        if self.times is not None:
            if any(v is not None for v in (self.end, self.step, self.n)):
                raise ValueError("give either times or end with step/n, not both")
            check_grid(self.times)
        elif self.end is None or (self.step is None) == (self.n is None):
            raise ValueError("give end together with exactly one of step or n")
        return self


class Observation(_Strict):
    t: float = Field(gt=0, allow_inf_nan=False)
    x: float = Field(ge=0, allow_inf_nan=False)
    tau: Optional[float] = Field(None, gt=0, allow_inf_nan=False)


class RunSection(_Strict):
    n: int = Field(1000, ge=1)
    threads: int = Field(1, ge=1)
    sampler: Literal["normalized", "jumps"] = "normalized"
    epsilon: float = Field(1e-6, gt=0)
    observation: Optional[Observation] = None
    u: Optional[float] = Field(None, gt=0)
    mode: Literal["h", "f"] = "f"
    quantiles: list[float] = [0.05, 0.25, 0.5, 0.75, 0.95]
    horizons: list[float] = []
    check_times: Optional[list[float]] = None
    # the TV tolerances are calibrated at the default sizes, so the suite only scales up
    scale: float = Field(1.0, ge=1.0)
    negative_controls: bool = True

    @field_validator("quantiles")
    @classmethod
    def _unit(cls, v):
        if any(not (0 < q < 1) for q in v):
            raise ValueError("quantiles must lie in (0, 1)")
        return v


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, le=U64)
    process: ProcessConfig = ProcessConfig()
    law: dict = {"family": "discrete", "atoms": [[1.0, 0.5], [2.0, 0.5]]}
    grid: GridConfig = GridConfig(end=2.5, step=0.05)
    run: RunSection = RunSection()

    @field_validator("law")
    @classmethod
    def _law(cls, v):
        try:
            ml.from_spec(v)
        except (LawError, KeyError, TypeError) as exc:
            raise ValueError(f"invalid law: {exc}") from None
        return v

    def params(self) -> ProcessParams:
        return ProcessParams(**self.process.model_dump())

    def mixing_law(self) -> ml.MixingLaw:
        return ml.from_spec(self.law)

    def time_grid(self) -> np.ndarray:
        g = self.grid
        if g.times is not None:
            grid = check_grid(g.times)
            if g.include_atoms:
                grid = np.union1d(grid, [r for r in self.mixing_law().atom_locations if 0 < r <= grid[-1]])
            return grid
        extra = tuple(self.mixing_law().atom_locations) if g.include_atoms else ()
        return make_grid(g.end, g.step, g.n, extra=extra)

    def simulation_doc(self) -> dict:
        """The part of the config that determines simulated paths (threads excluded)."""
        doc = self.model_dump(mode="json")
        keep = {k: doc["run"][k] for k in ("n", "sampler", "epsilon")}
        return {"seed": doc["seed"], "process": doc["process"], "law": doc["law"], "grid": doc["grid"], "run": keep}

    def sha256(self) -> str:
        return hashlib.sha256(canonical(self.simulation_doc()).encode()).hexdigest()


class ConfigError(Exception):
    pass


def canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _line_of(text: str, loc) -> int | None:
    """Best-effort line number of a field path inside the JSON text."""
    pos = 0
    for part in loc:
        if isinstance(part, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(part))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if pos else None


def load_config(path: str | None, overrides: dict) -> RunConfig:
    text, raw = "", {}
    if path:
        try:
            text = FsPath(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}:1: the config must be a JSON object")
    for dotted, value in overrides.items():
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            field = ".".join(str(p) for p in err["loc"]) or "<root>"
            line = _line_of(text, err["loc"]) if text else None
            where = f"{path}:{line}" if line else (path or "<flags>")
            lines.append(f"{where}: field '{field}': {err['msg']}")
        raise ConfigError("\n".join(lines)) from None


# ------------------------------------------------------------------ output


def _write(path: FsPath, text: str) -> str:
    path.write_text(text, newline="\n")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _stamp(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config_sha256": cfg.sha256(), "seed": cfg.seed}


def _header(cfg: RunConfig) -> str:
    return f"# config_sha256={cfg.sha256()} seed={cfg.seed}\n"


def paths_csv_rows(ens) -> list[str]:
    """Rows path_id,time,value on the grid, plus a row at each pin time between nodes."""
    n, g = ens.values.shape
    ids = np.repeat(np.arange(n), g)
    times = np.tile(ens.grid, n)
    vals = ens.values.ravel()
    off = (ens.taus <= ens.grid[-1]) & ~np.isin(ens.taus, ens.grid)
    extra_ids = np.flatnonzero(off)
    ids = np.concatenate([ids, extra_ids])
    times = np.concatenate([times, ens.taus[off]])
    vals = np.concatenate([vals, np.full(extra_ids.size, ens.params.endpoint_a)])
    order = np.lexsort((times, ids))
    return [f"{i},{t!r},{v!r}" for i, t, v in zip(ids[order].tolist(), times[order].tolist(), vals[order].tolist())]


def _ensemble(cfg: RunConfig, grid=None):
    grid = cfg.time_grid() if grid is None else grid
    return random_length_ensemble(
        grid, cfg.mixing_law(), cfg.params(), cfg.seed, cfg.run.n, cfg.run.threads, cfg.run.sampler, cfg.run.epsilon
    )


def stopped_fraction_check(ens, law, times) -> list[dict]:
    """Fraction of paths at the endpoint against F(t), with its binomial SE."""
    rows = []
    n = len(ens)
    for t in times:
        frac = float(np.mean(ens.column(t) == ens.params.endpoint_a))
        f = ml.cdf(law, t)
        se = math.sqrt(f * (1 - f) / n)
        z = abs(frac - f) / se if se > 0 else (0.0 if frac == f else math.inf)
        rows.append({"t": float(t), "stopped_fraction": frac, "prior_cdf": f, "se": se, "z": z, "within_3se": bool(z <= 3)})
    return rows


def cmd_simulate(cfg: RunConfig, out: FsPath) -> int:
    law = cfg.mixing_law()
    ens = _ensemble(cfg)
    grid = ens.grid
    checks = cfg.run.check_times
    if checks is None:
        g = grid.size - 1
        checks = sorted({float(grid[g // 4]), float(grid[g // 2]), float(grid[(3 * g) // 4])} - {0.0})
    missing = [t for t in checks if t not in grid]
    if missing:
        raise ConfigError(f"field 'run.check_times': times {missing} are not on the grid")
    body = _header(cfg) + "path_id,time,value\n" + "\n".join(paths_csv_rows(ens)) + "\n"
    digest = _write(out / "paths.csv", body)
    manifest = _stamp(cfg, "simulate")
    manifest.update(
        {
            "config": cfg.simulation_doc(),
            "n_paths": len(ens),
            "grid": [float(v) for v in grid],
            "law": law.to_dict(),
            "stopped_fraction": stopped_fraction_check(ens, law, checks),
            "files": {"paths.csv": digest},
        }
    )
    _write(out / "manifest.json", _json(manifest))
    log.info("wrote %d paths to %s", len(ens), out / "paths.csv")
    return EXIT_OK


def _observation(cfg: RunConfig) -> Observation:
    if cfg.run.observation is None:
        raise ConfigError("field 'run.observation': an observation (t, x[, tau]) is required")
    return cfg.run.observation


def cmd_filter(cfg: RunConfig, out: FsPath) -> int:
    obs = _observation(cfg)
    law, params = cfg.mixing_law(), cfg.params()
    if obs.tau is None:
        post = posterior_tau(obs.x, obs.t, law, params)
    else:
        post = posterior_given_path(obs.t, obs.x, law, obs.tau, params)
    summary = {
        "mean": post.mean(),
        "quantiles": {repr(q): post.quantile(q) for q in cfg.run.quantiles},
        "survival": {repr(h): post.survival(h) for h in cfg.run.horizons},
    }
    doc = _stamp(cfg, "filter")
    doc.update({"posterior": post.to_dict(), "summary": summary})
    _write(out / "posterior.json", _json(doc))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, out: FsPath) -> int:
    obs = _observation(cfg)
    if cfg.run.u is None:
        raise ConfigError("field 'run.u': the prediction horizon u is required")
    pred = predictive_law(obs.x, obs.t, cfg.run.u, cfg.mixing_law(), cfg.params())
    doc = _stamp(cfg, "predict")
    doc["predictive"] = pred.to_dict()
    _write(out / "predictive.json", _json(doc))
    return EXIT_OK


def cmd_compensate(cfg: RunConfig, out: FsPath) -> int:
    law = cfg.mixing_law()
    ens = _ensemble(cfg)
    rep = compensate_ensemble(ens, law, cfg.run.mode)
    rep.write_csv(out / "drift.csv", header=_header(cfg))
    extra = {k: v for k, v in _stamp(cfg, "compensate").items() if k != "command"}
    extra["integrated_drift_bound"] = {repr(float(t)): integrated_drift_bound(law, float(t)) for t in ens.grid}
    _write(out / "drift_summary.json", rep.summary_json(extra) + "\n")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: FsPath) -> int:
    results = harness.run_suite(cfg.seed, cfg.run.scale, cfg.run.negative_controls, log=log.info)
    extra = _stamp(cfg, "validate")
    extra.update({"scale": cfg.run.scale, "negative_controls": cfg.run.negative_controls})
    _write(out / "gate_report.json", harness.report_json(results, extra) + "\n")
    print(harness.format_table(results))
    if harness.suite_failed(results):
        print("FAILED: at least one gate failed", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "predict": cmd_predict,
    "compensate": cmd_compensate,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gammabridge", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="64-bit unsigned seed")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--threads", type=int, help="worker threads; outputs do not depend on it")
        p.add_argument("--n", type=int, help="number of paths")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("filter", "predict"):
            p.add_argument("--t", type=float, help="observation time")
            p.add_argument("--x", type=float, help="observed value")
        if name == "filter":
            p.add_argument("--tau", type=float, help="pin time, when the observation is stopped")
            p.add_argument("--horizon", type=float, action="append", help="survival horizon (repeatable)")
        if name == "predict":
            p.add_argument("--u", type=float, help="prediction horizon")
        if name == "compensate":
            p.add_argument("--mode", choices=("h", "f"))
        if name == "validate":
            p.add_argument("--negative-controls", dest="negative_controls", action=argparse.BooleanOptionalAction)
            p.add_argument("--scale", type=float, help="multiply default sample sizes (>= 1)")
    return parser


def _overrides(args) -> dict:
    ov = {}
    for flag, key in (("seed", "seed"), ("threads", "run.threads"), ("n", "run.n"), ("u", "run.u"), ("mode", "run.mode"),
                      ("scale", "run.scale"), ("negative_controls", "run.negative_controls"), ("horizon", "run.horizons")):
        val = getattr(args, flag, None)
        if val is not None:
            ov[key] = val
    for flag in ("t", "x", "tau"):
        val = getattr(args, flag, None)
        if val is not None:
            ov[f"run.observation.{flag}"] = val
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        out = FsPath(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, SamplerError, LawError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
