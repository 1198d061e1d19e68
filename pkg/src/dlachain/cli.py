"""Command-line entry point.

Usage::

    dlachain <subcommand> [--config FILE] [--key value ...]

Subcommands are ``simulate``, ``ensemble``, ``bounds``, ``dla`` and ``ends``.
A config file holds ``key = value`` lines (``#`` starts a comment, lists are
comma separated); command-line flags override it. The resolved configuration
is echoed at the top of every output file.

Exit codes: 0 success, 2 validation error, 3 resource cap, 4 invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from . import bounds, chain_core, estimators, wedge_dla
from .errors import DlachainError, ValidationError

OUTPUT_DIR_ENV = "DLACHAIN_OUTPUT_DIR"
SUBCOMMANDS = ("simulate", "ensemble", "bounds", "dla", "ends")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    alpha: Optional[float] = None
    c: float = 1.0
    allow_degenerate_c0: bool = False
    horizon: int = 10_000
    trajectories: int = 1_000
    seed: int = 0
    eps: float = 0.05
    s_scale: float = 0.5
    checkpoints: Optional[tuple] = None
    with_coupling: bool = True
    out: Optional[str] = None
    format: str = "csv"
    particles: int = 2_000
    launch_margin: int = wedge_dla.LAUNCH_MARGIN
    step_budget: int = wedge_dla.STEP_BUDGET
    resample_cap: int = wedge_dla.RESAMPLE_CAP
    radii: Optional[tuple] = None
    sites: Optional[str] = None
    pgm: bool = False
    max_work: int = estimators.MAX_WORK

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return build_config(parse_config_text(text))

    def as_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f in fields(self) if (v := getattr(self, f.name)) is not None}


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT_KEYS = {"horizon", "trajectories", "seed", "particles", "launch_margin",
             "step_budget", "resample_cap", "max_work"}
_FLOAT_KEYS = {"alpha", "c", "eps", "s_scale"}
_BOOL_KEYS = {"allow_degenerate_c0", "with_coupling", "pgm"}


def _convert(key: str, raw):
    if key not in _FIELDS:
        raise ValidationError(key, "unknown configuration key")
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if key == "checkpoints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if key == "radii":
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ValidationError(key, f"cannot parse {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = _convert(key, raw)
    return values


def _require(cfg: RunConfig, *keys: str):
    for key in keys:
        if getattr(cfg, key) is None:
            raise ValidationError(key, f"required by '{cfg.subcommand}'")


def build_config(values: dict) -> RunConfig:
    """Validate every parameter domain and return the resolved config."""
    values = {k: _convert(k, v) for k, v in values.items()}
    sub = values.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ValidationError("subcommand", f"must be one of {SUBCOMMANDS}, got {sub!r}")
    if values.get("out") is None and os.environ.get(OUTPUT_DIR_ENV):
        values["out"] = os.environ[OUTPUT_DIR_ENV]
    cfg = RunConfig(**values)

    if sub in ("simulate", "ensemble", "bounds", "dla"):
        _require(cfg, "alpha")
    if sub in ("simulate", "ensemble", "bounds"):
        chain_core.ChainParams(cfg.alpha, cfg.c, cfg.allow_degenerate_c0)
    if sub == "dla":
        wedge_dla.WedgeGeometry(cfg.alpha)
    if sub == "ends":
        _require(cfg, "sites")
    if sub != "bounds":
        _require(cfg, "out")
    if cfg.format not in ("csv", "json"):
        raise ValidationError("format", f"must be 'csv' or 'json', got {cfg.format!r}")
    if sub == "bounds" and cfg.format == "csv":
        # bounds only has a JSON form
        cfg = RunConfig(**{**values, "format": "json"})
    for key in ("horizon", "trajectories", "particles", "launch_margin", "step_budget", "max_work"):
        if getattr(cfg, key) < 1:
            raise ValidationError(key, f"must be >= 1, got {getattr(cfg, key)}")
    if cfg.resample_cap < 0:
        raise ValidationError("resample_cap", f"must be >= 0, got {cfg.resample_cap}")
    if not 0 <= cfg.seed < 2**64:
        raise ValidationError("seed", f"must lie in [0, 2**64), got {cfg.seed}")
    if not 0.0 < cfg.eps < 1.0:
        raise ValidationError("eps", f"must lie in (0, 1), got {cfg.eps}")
    if not cfg.s_scale > 0.0:
        raise ValidationError("s_scale", f"must be > 0, got {cfg.s_scale}")
    if cfg.checkpoints is not None:
        cps = cfg.checkpoints
        if not cps or list(cps) != sorted(set(cps)) or cps[0] < 1 or cps[-1] > cfg.horizon:
            raise ValidationError("checkpoints", f"must be sorted, distinct and within [1, {cfg.horizon}]")
    if cfg.radii is not None and any(r < 0 for r in cfg.radii):
        raise ValidationError("radii", "must be non-negative")
    return cfg


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlachain", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file; flags override it")
        for key in _FIELDS:
            if key == "subcommand":
                continue
            flag = "--" + key.replace("_", "-")
            if key in _BOOL_KEYS:
                p.add_argument(flag, dest=key, default=None, nargs="?", const="true")
            else:
                p.add_argument(flag, dest=key, default=None)
    return parser


def parse_config(argv=None) -> RunConfig:
    args = vars(_parser().parse_args(argv))
    values = {}
    config_path = args.pop("config")
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ValidationError("config", str(exc)) from None
        values.update(parse_config_text(text))
        if values.get("subcommand", args["subcommand"]) != args["subcommand"]:
            raise ValidationError("subcommand", "config file names a different subcommand")
    values.update({k: v for k, v in args.items() if v is not None})
    return build_config(values)


# ---------------------------------------------------------------------------
# output


def _atomic_write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _echo(cfg: RunConfig) -> str:
    return "".join(f"# {line}\n" for line in cfg.to_text().splitlines())


def _csv(cfg: RunConfig, header, rows) -> str:
    buf = io.StringIO()
    buf.write(_echo(cfg))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _json(cfg: RunConfig, payload: dict) -> str:
    return json.dumps({"config": cfg.as_dict(), **payload}, indent=2) + "\n"


def _run_simulate(cfg: RunConfig) -> tuple[dict, str]:
    params = chain_core.ChainParams(cfg.alpha, cfg.c, cfg.allow_degenerate_c0)
    traj = chain_core.simulate(params, cfg.horizon, cfg.seed, with_coupling=cfg.with_coupling)
    if cfg.format == "json":
        files = {"trajectory.json": _json(cfg, traj.to_dict())}
    else:
        files = {"trajectory.csv": _echo(cfg) + traj.to_csv()}
    return files, f"simulate: D_{cfg.horizon} = {traj.d[-1]}"


def _default_checkpoints(horizon: int) -> tuple:
    cps = [10**k for k in range(1, 19) if 10**k < horizon]
    return tuple(cps + [horizon])


def _run_ensemble(cfg: RunConfig) -> tuple[dict, str]:
    params = chain_core.ChainParams(cfg.alpha, cfg.c, cfg.allow_degenerate_c0)
    profile = bounds.derive_profile(cfg.alpha)
    spec = estimators.EnsembleSpec(
        params=params,
        horizon=cfg.horizon,
        trajectories=cfg.trajectories,
        base_seed=cfg.seed,
        checkpoints=cfg.checkpoints or _default_checkpoints(cfg.horizon),
        eps=cfg.eps,
        delta=profile.delta,
        delta_bar=profile.delta_bar,
        s_scale=cfg.s_scale,
        beta=profile.beta,
    )
    summary = estimators.run_ensemble(spec, max_work=cfg.max_work)
    rows = summary.rows()
    header = list(rows[0])
    files = {
        "ensemble.json": _json(cfg, summary.to_dict()),
        "checkpoints.csv": _csv(cfg, header, [[repr(r[h]) for h in header] for r in rows]),
    }
    last = rows[-1]
    return files, (f"ensemble: {summary.trajectories} trajectories, "
                   f"P(D_{last['n']} >= s n^beta) = {last['p_ge_threshold']:.6g}")


def _run_bounds(cfg: RunConfig) -> tuple[dict, str]:
    profile = bounds.derive_profile(cfg.alpha, cfg.c)
    payload = profile.to_dict()
    line = json.dumps(payload, separators=(",", ":"))
    files = {"bounds.json": _json(cfg, payload)} if cfg.out else {}
    return files, line


def _ends_report(sites, radii) -> dict:
    return {repr(float(r)): wedge_dla.ends_estimate(sites, r) for r in radii}


def _default_radii(agg_extent: int) -> tuple:
    radii = [0.0]
    r = 8.0
    while r < agg_extent:
        radii.append(r)
        r *= 2
    return tuple(radii)


def _run_dla(cfg: RunConfig) -> tuple[dict, str]:
    geom = wedge_dla.WedgeGeometry(cfg.alpha)
    agg = wedge_dla.grow(geom, cfg.particles, cfg.seed, cfg.launch_margin,
                         cfg.step_budget, cfg.resample_cap)
    agg.check_invariants()
    sites = [(k, x, y) for k, (x, y) in enumerate(agg.particles)]
    tips = [(k, l, "" if r is None else r, l if r is None else l - r) for k, l, r in agg.tip_history]
    radii = cfg.radii or _default_radii(agg.l_tip)
    files = {
        "sites.csv": _csv(cfg, ["k", "x", "y"], sites),
        "tips.csv": _csv(cfg, ["k", "L", "R", "gap"], tips),
        "ends.json": _json(cfg, {"ends": _ends_report(agg, radii)}),
    }
    if cfg.pgm:
        files["occupancy.pgm"] = agg.occupancy_pgm()
    gap = wedge_dla.tip_gap(agg)
    return files, f"dla: {agg.size} sites, L = {gap.l_tip}, R = {gap.r_tip}"


def read_sites(path) -> list:
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        try:
            return [(int(r["x"]), int(r["y"])) for r in rows]
        except (KeyError, TypeError, ValueError):
            raise ValidationError("sites", f"{path} is not a k,x,y site table") from None


def _run_ends(cfg: RunConfig) -> tuple[dict, str]:
    try:
        sites = read_sites(cfg.sites)
    except OSError as exc:
        raise ValidationError("sites", str(exc)) from None
    extent = max((abs(x) + abs(y) for x, y in sites), default=0)
    radii = cfg.radii or _default_radii(extent)
    report = _ends_report(sites, radii)
    return {"ends.json": _json(cfg, {"ends": report})}, f"ends: {len(sites)} sites, {len(radii)} radii"


_RUNNERS = {
    "simulate": _run_simulate,
    "ensemble": _run_ensemble,
    "bounds": _run_bounds,
    "dla": _run_dla,
    "ends": _run_ends,
}


def run(cfg: RunConfig) -> int:
    files, summary = _RUNNERS[cfg.subcommand](cfg)
    # everything is computed before the first write
    for name, data in files.items():
        _atomic_write(Path(cfg.out) / name, data)
    print(summary)
    return 0


def main(argv=None) -> int:
    try:
        return run(parse_config(argv))
    except DlachainError as exc:
        print(f"dlachain: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
