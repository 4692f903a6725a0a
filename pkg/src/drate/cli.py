"""Batch command-line front end.

Subcommands: ``estimate`` (single-dataset ATE runs), ``simulate`` (Monte Carlo
tables), ``curve`` (constant-propensity variance-factor curves), and
``calibrate`` (treatment-offset calibration). Everything but the output path,
seed override, and worker count lives in a JSON config, so a run is
reproducible from a single artifact.

Exit codes: 0 success, 2 usage/validation error, 3 runtime/fit failure.
Primary outputs are written atomically (temp file + rename) and are
byte-identical across re-runs with the same config and seed; only the
metadata sidecar's timing fields may differ.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .aipw import estimate_all
from .data import ColumnSchema, EstimatorId, IndexDirections, load_dataset
from .efficiency import variance_factor_curve
from .errors import ConfigError, DataError, DrateError
from .kernels import FixedBandwidth, KernelConfig, KernelPlan, RuleOfThumb, SmootherRole
from .simulation import (
    OrScenario,
    PsScenario,
    ScenarioConfig,
    calibrate_offset,
    make_ps_direction,
    report_csv_text,
    run_monte_carlo,
    warp_covariates,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _kernel_plan(raw: dict | None) -> KernelPlan:
    if not raw:
        return KernelPlan()
    plan = {}
    for key, role in (
        ("ps_index", SmootherRole.PS_INDEX),
        ("or_treated", SmootherRole.OR_TREATED),
        ("or_control", SmootherRole.OR_CONTROL),
        ("ps_multivariate", SmootherRole.PS_MULTIVARIATE),
        ("or_multivariate", SmootherRole.OR_MULTIVARIATE),
    ):
        spec = raw.get(key)
        if spec is None:
            plan[key] = KernelConfig(role)
            continue
        if "fixed" in spec:
            rule: RuleOfThumb | FixedBandwidth = FixedBandwidth(float(spec["fixed"]))
        else:
            rule = RuleOfThumb(float(spec.get("c", 1.0)))
        plan[key] = KernelConfig(role, rule)
    return KernelPlan(**plan)


def _scenario_config(raw: dict, seed_override: int | None) -> ScenarioConfig:
    known = {
        "n",
        "dim",
        "reps",
        "seed",
        "slopes",
        "mean_treated",
        "mean_control",
        "index_tilt",
        "target_untreated",
        "estimator_set",
        "ps_misspec",
        "or_misspec",
        "kernel",
        "calibration_draws",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown scenario field(s): {sorted(unknown)}")
    kwargs = dict(raw)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    if "slopes" in kwargs:
        kwargs["slopes"] = tuple(float(v) for v in kwargs["slopes"])
    if "estimator_set" in kwargs:
        kwargs["estimator_set"] = tuple(int(v) for v in kwargs["estimator_set"])
    if "ps_misspec" in kwargs and kwargs["ps_misspec"] is not None:
        kwargs["ps_misspec"] = PsScenario(**kwargs["ps_misspec"])
    if "or_misspec" in kwargs and kwargs["or_misspec"] is not None:
        kwargs["or_misspec"] = OrScenario(**kwargs["or_misspec"])
    kwargs["kernel"] = _kernel_plan(kwargs.get("kernel"))
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad scenario config: {exc}") from exc


def _cmd_simulate(args: argparse.Namespace) -> int:
    raw = _load_config(args.config)
    cfg = _scenario_config(raw, args.seed)
    started = time.time()
    report = run_monte_carlo(cfg, jobs=args.jobs)
    out = Path(args.out)
    _atomic_write(out, report_csv_text(report))
    meta = {
        "config": _jsonable(cfg),
        "offset": report.offset,
        "seed": cfg.seed,
        "wall_seconds": time.time() - started,
        "failures": len(report.failures),
        "failure_samples": list(report.failures[:10]),
        "degenerate_std": {r.estimator: r.degenerate_std for r in report.rows},
    }
    _atomic_write(out.with_suffix(out.suffix + ".meta.json"), json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def _jsonable(obj) -> object:
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (SmootherRole,)):
        return obj.value
    return obj


def _cmd_curve(args: argparse.Namespace) -> int:
    raw = _load_config(args.config)
    p_stars = raw.get("p_star", [0.25, 0.5, 0.75])
    if isinstance(p_stars, (int, float)):
        p_stars = [p_stars]
    grid = raw.get("grid", {})
    lo = float(grid.get("lo", 0.05))
    hi = float(grid.get("hi", 0.95))
    step = float(grid.get("step", 0.01))
    out_dir = Path(args.out)
    try:
        tables = {float(p): variance_factor_curve(float(p), lo, hi, step) for p in p_stars}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for p_star, rows in tables.items():
        lines = ["g,f"] + [f"{g!r},{f!r}" for g, f in rows]
        _atomic_write(out_dir / f"curve_pstar_{p_star}.csv", "\n".join(lines) + "\n")
    print(f"wrote {len(tables)} curve file(s) to {out_dir}")
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace) -> int:
    raw = _load_config(args.config)
    slopes = raw.get("slopes")
    tilt = raw.get("index_tilt", 1.0)
    target = raw.get("target_untreated")
    if slopes is None or target is None:
        raise ConfigError("calibrate config needs 'slopes' and 'target_untreated'")
    draws = int(raw.get("draws", 400_000))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    try:
        direction = make_ps_direction(np.asarray(slopes, dtype=float), float(tilt))
        offset = calibrate_offset(direction, float(target), draws=draws, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    record = {
        "offset": offset,
        "target_untreated": target,
        "index_tilt": tilt,
        "draws": draws,
        "seed": seed,
    }
    text = json.dumps(record, indent=2) + "\n"
    if args.out:
        _atomic_write(Path(args.out), text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def _cmd_estimate(args: argparse.Namespace) -> int:
    raw = _load_config(args.config)
    for key in ("dataset", "schema", "estimators"):
        if key not in raw:
            raise ConfigError(f"estimate config needs {key!r}")
    schema_raw = raw["schema"]
    try:
        schema = ColumnSchema(
            treatment=schema_raw["treatment"],
            outcome=schema_raw["outcome"],
            covariates=tuple(schema_raw["covariates"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad schema: {exc}") from exc
    try:
        estimators = [EstimatorId(int(k)) for k in raw["estimators"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    obs = load_dataset(raw["dataset"], schema)

    directions = None
    if "directions" in raw and raw["directions"] is not None:
        d = raw["directions"]
        try:
            directions = IndexDirections(
                ps=np.asarray(d["ps"], dtype=float),
                or_treated=np.asarray(d["or_treated"], dtype=float),
                or_control=np.asarray(d["or_control"], dtype=float),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad directions: {exc}") from exc
    elif any(e.ps_backend.value == "semiparametric" or e.or_backend.value == "semiparametric" for e in estimators):
        raise ConfigError("semiparametric estimators need a 'directions' config entry")

    design_names = {"identity": None, "warped": warp_covariates}
    try:
        ps_design = design_names[raw.get("ps_design", "identity")]
        or_design = design_names[raw.get("or_design", "identity")]
    except KeyError as exc:
        raise ConfigError(f"unknown design map {exc}; use 'identity' or 'warped'") from exc

    results = estimate_all(
        obs,
        estimators,
        directions=directions,
        kernel_plan=_kernel_plan(raw.get("kernel")),
        ps_design=ps_design,
        or_design=or_design,
        intercept=bool(raw.get("intercept", True)),
    )
    records = []
    for e in estimators:
        res = results[e.id]
        if isinstance(res, Exception):
            raise res
        records.append(res.to_record())
    _atomic_write(Path(args.out), json.dumps(records, indent=2) + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drate",
        description="Doubly robust ATE estimation, Monte Carlo tables, and efficiency curves.",
    )
    parser.add_argument("--version", action="version", version=f"drate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=out_required, help="output path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for replicates")

    p_est = sub.add_parser("estimate", help="estimate the ATE on a dataset CSV")
    common(p_est)
    p_est.set_defaults(func=_cmd_estimate)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    common(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_curve = sub.add_parser("curve", help="emit constant-propensity variance-factor curves")
    common(p_curve)
    p_curve.set_defaults(func=_cmd_curve)

    p_cal = sub.add_parser("calibrate", help="calibrate the treatment offset for a target share")
    common(p_cal, out_required=False)
    p_cal.set_defaults(func=_cmd_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DrateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
