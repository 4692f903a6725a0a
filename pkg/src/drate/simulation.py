"""Monte Carlo engine: the synthetic study design, replication loop, and tables.

The generative model draws standard-normal covariates, linear potential
outcomes with unit-variance Gaussian noise, and a logistic treatment rule on a
unit-norm index. Two scalar knobs shape a scenario: ``index_tilt`` rotates the
propensity index away from the outcome slope direction, and
``target_untreated`` fixes the untreated share through a calibrated intercept.

Misspecification axes:

* ``global_z``   - fitted parametric models regress on nonlinearly warped
                   covariates and fitted single-index models use the swapped
                   index; the truth is unchanged.
* ``wrong_index`` - only the single-index direction is swapped.
* ``local``      - the truth itself is perturbed by delta * shape(x); fitted
                   models keep their correct form, which the perturbation has
                   made (locally) wrong.

Replicates are independent tasks with deterministic per-replicate RNG
substreams; aggregation reduces in replicate order, so a report is a pure
function of its config regardless of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import EstimatorId, IndexDirections, ObservationSet
from .efficiency import GenerativeTruth
from .errors import ConfigError, DrateError
from .kernels import EPS_CLIP, KernelPlan
from .aipw import estimate_all
from .parametric import PERTURBATION_SHAPES

__all__ = [
    "McReport",
    "McRow",
    "OrScenario",
    "PsScenario",
    "ScenarioConfig",
    "calibrate_offset",
    "generate_sample",
    "make_ps_direction",
    "report_csv_text",
    "run_monte_carlo",
    "scenario_truth",
    "warp_covariates",
    "write_report_csv",
]

# Substream tags so calibration and oracle draws never collide with replicates.
_CALIBRATION_TAG = 10**9 + 7
_CHECK_TAG = 10**9 + 9

_MODES = ("correct", "global_z", "wrong_index", "local")


@dataclass(frozen=True)
class PsScenario:
    """Treatment-model misspecification switch for a scenario."""

    mode: str = "correct"
    delta: float = 0.0
    shape: str = "sin_x1"

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ConfigError(f"ps_misspec mode must be one of {_MODES}, got {self.mode!r}")
        if self.mode == "local" and self.shape not in PERTURBATION_SHAPES:
            raise ConfigError(f"unknown perturbation shape {self.shape!r}")


@dataclass(frozen=True)
class OrScenario:
    """Outcome-model misspecification switch for a scenario."""

    mode: str = "correct"
    delta_treated: float = 0.0
    delta_control: float = 0.0
    shape_treated: str = "sin_x1"
    shape_control: str = "sin_x1"

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ConfigError(f"or_misspec mode must be one of {_MODES}, got {self.mode!r}")
        if self.mode == "local":
            for name in (self.shape_treated, self.shape_control):
                if name not in PERTURBATION_SHAPES:
                    raise ConfigError(f"unknown perturbation shape {name!r}")


_DEFAULT_SLOPES = (0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that determines a Monte Carlo run, including the seed."""

    n: int = 1000
    dim: int = 10
    reps: int = 1000
    seed: int = 0
    slopes: tuple[float, ...] = _DEFAULT_SLOPES
    mean_treated: float = 10.0
    mean_control: float = 5.0
    index_tilt: float = 1.0
    target_untreated: float = 0.5
    estimator_set: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9)
    ps_misspec: PsScenario = field(default_factory=PsScenario)
    or_misspec: OrScenario = field(default_factory=OrScenario)
    kernel: KernelPlan = field(default_factory=KernelPlan)
    calibration_draws: int = 400_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        object.__setattr__(self, "estimator_set", tuple(int(k) for k in self.estimator_set))
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if self.n < 2 * self.dim:
            raise ConfigError(f"n must be >= 2*dim, got n={self.n}, dim={self.dim}")
        if not 0.05 < self.target_untreated < 0.95:
            raise ConfigError(
                f"target_untreated must lie in (0.05, 0.95), got {self.target_untreated}"
            )
        if len(self.slopes) != self.dim:
            raise ConfigError(f"slopes must have length dim={self.dim}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        for k in self.estimator_set:
            EstimatorId(k)  # raises on ids outside 1..9
        self._check_estimator_compatibility()

    def _check_estimator_compatibility(self) -> None:
        # Globally misspecifying a nonparametric fit is meaningless: there is
        # no model to get wrong, so those estimators are excluded by design.
        if self.ps_misspec.mode in ("global_z", "wrong_index"):
            bad = sorted(set(self.estimator_set) & {3, 4, 8})
            if bad:
                raise ConfigError(
                    f"estimators {bad} use a nonparametric PS fit and cannot run "
                    f"under ps_misspec mode {self.ps_misspec.mode!r}"
                )
        if self.or_misspec.mode in ("global_z", "wrong_index"):
            bad = sorted(set(self.estimator_set) & {2, 4, 7})
            if bad:
                raise ConfigError(
                    f"estimators {bad} use a nonparametric OR fit and cannot run "
                    f"under or_misspec mode {self.or_misspec.mode!r}"
                )
        if self.ps_misspec.mode == "global_z" and self.dim != 10:
            raise ConfigError("the warped-covariate misspecification requires dim = 10")
        if self.or_misspec.mode == "global_z" and self.dim != 10:
            raise ConfigError("the warped-covariate misspecification requires dim = 10")

    @property
    def true_ate(self) -> float:
        return self.mean_treated - self.mean_control


def make_ps_direction(slopes: np.ndarray, tilt: float) -> np.ndarray:
    """Unit-norm propensity index: the slope direction tilted into the last axis.

    With tilt t the angle to the slope direction is arccos(1/sqrt(1+t^2)):
    t=0 aligns them, t=1 gives 45 degrees, and large t makes them orthogonal.
    Requires the last slope coordinate to be zero so the norm is exactly one.
    """
    slopes = np.asarray(slopes, dtype=float).ravel()
    norm = float(np.linalg.norm(slopes))
    if norm == 0.0:
        raise ValueError("slope vector must be nonzero")
    if slopes[-1] != 0.0:
        raise ValueError("last slope coordinate must be 0 for an exact unit-norm index")
    raw = slopes / norm
    raw = raw.copy()
    raw[-1] = tilt
    return raw / math.sqrt(1.0 + tilt * tilt)


def calibrate_offset(
    direction: np.ndarray,
    target_untreated: float,
    draws: int = 400_000,
    seed: int = 0,
) -> float:
    """Logistic intercept hitting the target untreated share, by bisection.

    Uses one fixed Monte Carlo sample of projected covariates (common random
    numbers), so the untreated share is smooth and monotone in the offset and
    bisection on [-10, 10] converges cleanly.
    """
    if not 0.05 < target_untreated < 0.95:
        raise ValueError(f"target_untreated must lie in (0.05, 0.95), got {target_untreated}")
    if draws < 10**5:
        raise ValueError(f"need at least 1e5 calibration draws, got {draws}")
    direction = np.asarray(direction, dtype=float).ravel()
    rng = np.random.default_rng(np.random.SeedSequence([seed, _CALIBRATION_TAG]))
    x = rng.standard_normal((draws, direction.size))
    index = x @ direction

    def untreated_share(offset: float) -> float:
        return float(np.mean(1.0 - expit(index + offset)))

    lo, hi = -10.0, 10.0
    share_lo = untreated_share(lo)  # ~1: decreasing in offset
    share_hi = untreated_share(hi)  # ~0
    if not (share_hi < target_untreated < share_lo):
        raise DrateError(
            f"target untreated share {target_untreated} not bracketed by offsets in [-10, 10]"
        )
    mid = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        share = untreated_share(mid)
        if abs(share - target_untreated) < 1e-4 or (hi - lo) < 1e-12:
            break
        if share > target_untreated:
            lo = mid
        else:
            hi = mid
    return mid


def warp_covariates(x: np.ndarray) -> np.ndarray:
    """Nonlinear ten-column covariate map used for global parametric misspecification.

    Requires exactly ten columns. Column pattern, repeated over coordinate
    blocks (1-4, 5-8, 9-10):

        exp(a/3), b/(1+exp(a)) + 10, (a*c/25 + 0.6)^3, (b+d+20)^2
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != 10:
        raise ValueError(f"warp_covariates requires 10 covariates, got {x.shape[1]}")
    c = [x[:, j] for j in range(10)]
    z = np.column_stack(
        [
            np.exp(c[0] / 3.0),
            c[1] / (1.0 + np.exp(c[0])) + 10.0,
            (c[0] * c[2] / 25.0 + 0.6) ** 3,
            (c[1] + c[3] + 20.0) ** 2,
            np.exp(c[4] / 3.0),
            c[5] / (1.0 + np.exp(c[4])) + 10.0,
            (c[4] * c[6] / 25.0 + 0.6) ** 3,
            (c[5] + c[7] + 20.0) ** 2,
            np.exp(c[8] / 3.0),
            c[9] / (1.0 + np.exp(c[8])) + 10.0,
        ]
    )
    return z[0] if single else z


@dataclass(frozen=True)
class DrawTruth:
    """Oracle values retained alongside a generated sample."""

    propensity: np.ndarray
    outcome_treated: np.ndarray  # m1 at the sample points
    outcome_control: np.ndarray
    y_treated: np.ndarray  # potential outcomes
    y_control: np.ndarray
    n_saturated: int  # perturbed-propensity values pulled back into range


def _true_regressions(cfg: ScenarioConfig, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    slopes = np.asarray(cfg.slopes)
    base = x @ slopes
    m1 = cfg.mean_treated + base
    m0 = cfg.mean_control + base
    if cfg.or_misspec.mode == "local":
        m1 = m1 + cfg.or_misspec.delta_treated * PERTURBATION_SHAPES[cfg.or_misspec.shape_treated](x)
        m0 = m0 + cfg.or_misspec.delta_control * PERTURBATION_SHAPES[cfg.or_misspec.shape_control](x)
    return m1, m0


def _true_propensity(
    cfg: ScenarioConfig, direction: np.ndarray, offset: float, x: np.ndarray
) -> tuple[np.ndarray, int]:
    p = expit(x @ direction + offset)
    saturated = 0
    if cfg.ps_misspec.mode == "local":
        shape = PERTURBATION_SHAPES[cfg.ps_misspec.shape]
        raw = p * (1.0 + cfg.ps_misspec.delta * shape(x))
        # The multiplicative perturbation can exit (0, 1) in the Gaussian
        # tails; saturate into the admissible band and count, so the perturbed
        # truth stays a valid propensity on unbounded support.
        p = np.clip(raw, EPS_CLIP, 1.0 - EPS_CLIP)
        saturated = int(np.sum(p != raw))
    return p, saturated


def generate_sample(
    cfg: ScenarioConfig, offset: float, rep_index: int
) -> tuple[ObservationSet, DrawTruth]:
    """One replicate's sample plus its oracle truth, from substream (seed, rep)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, rep_index]))
    direction = make_ps_direction(cfg.slopes, cfg.index_tilt)
    x = rng.standard_normal((cfg.n, cfg.dim))
    p, saturated = _true_propensity(cfg, direction, offset, x)
    d = (rng.random(cfg.n) < p).astype(float)
    m1, m0 = _true_regressions(cfg, x)
    y1 = m1 + rng.standard_normal(cfg.n)
    y0 = m0 + rng.standard_normal(cfg.n)
    y = d * y1 + (1.0 - d) * y0
    obs = ObservationSet(x, d, y)
    truth = DrawTruth(
        propensity=p,
        outcome_treated=m1,
        outcome_control=m0,
        y_treated=y1,
        y_control=y0,
        n_saturated=saturated,
    )
    return obs, truth


def scenario_truth(cfg: ScenarioConfig, offset: float) -> GenerativeTruth:
    """The scenario's generative model in the form the MC variance oracle takes."""
    direction = make_ps_direction(cfg.slopes, cfg.index_tilt)
    local_or = cfg.or_misspec.mode == "local"

    def draw(rng: np.random.Generator, k: int) -> np.ndarray:
        return rng.standard_normal((k, cfg.dim))

    return GenerativeTruth(
        draw_covariates=draw,
        propensity=lambda x: _true_propensity(cfg, direction, offset, x)[0],
        outcome_treated=lambda x: _true_regressions(cfg, x)[0],
        outcome_control=lambda x: _true_regressions(cfg, x)[1],
        var_treated=lambda x: np.ones(x.shape[0]),
        var_control=lambda x: np.ones(x.shape[0]),
        mean_treated=None if local_or else cfg.mean_treated,
        mean_control=None if local_or else cfg.mean_control,
    )


def _scenario_directions(cfg: ScenarioConfig) -> IndexDirections:
    slopes = np.asarray(cfg.slopes)
    outcome_dir = slopes / np.linalg.norm(slopes)
    ps_dir = make_ps_direction(cfg.slopes, cfg.index_tilt)
    fitted_ps = outcome_dir if cfg.ps_misspec.mode in ("global_z", "wrong_index") else ps_dir
    fitted_or = ps_dir if cfg.or_misspec.mode in ("global_z", "wrong_index") else outcome_dir
    return IndexDirections(ps=fitted_ps, or_treated=fitted_or, or_control=fitted_or)


def _replicate(cfg: ScenarioConfig, offset: float, rep_index: int) -> dict[int, object]:
    """Estimate every configured estimator on replicate ``rep_index``.

    Returns estimator id -> (delta_hat, clipped_count) or an error string.
    """
    obs, _ = generate_sample(cfg, offset, rep_index)
    directions = _scenario_directions(cfg)
    ps_design = warp_covariates if cfg.ps_misspec.mode == "global_z" else None
    or_design = warp_covariates if cfg.or_misspec.mode == "global_z" else None
    try:
        results = estimate_all(
            obs,
            cfg.estimator_set,
            directions=directions,
            kernel_plan=cfg.kernel,
            ps_design=ps_design,
            or_design=or_design,
        )
    except DrateError as exc:  # e.g. single-arm draw: every estimator fails
        return {k: f"{type(exc).__name__}: {exc}" for k in cfg.estimator_set}
    out: dict[int, object] = {}
    for k, res in results.items():
        if isinstance(res, Exception):
            out[k] = f"{type(res).__name__}: {res}"
        else:
            out[k] = (res.delta_hat, res.clipped_count)
    return out


@dataclass(frozen=True)
class McRow:
    """One estimator's row of a Monte Carlo table."""

    estimator: int
    bias: float
    std: float
    mse: float
    reps_failed: int
    clips: int
    degenerate_std: bool = False  # single successful replicate: std reported as 0


@dataclass(frozen=True)
class McReport:
    """Bias/std/mse per estimator over the replication loop."""

    rows: tuple[McRow, ...]
    config: ScenarioConfig
    offset: float
    failures: tuple[str, ...] = ()

    def row(self, estimator: int) -> McRow:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(f"no row for estimator {estimator}")


class SimulationError(DrateError):
    """Raised when the replicate failure rate exceeds the 5% budget."""


def _aggregate(
    cfg: ScenarioConfig, per_rep: list[dict[int, object]]
) -> tuple[tuple[McRow, ...], tuple[str, ...]]:
    rows = []
    failures: list[str] = []
    for k in cfg.estimator_set:
        deltas: list[float] = []
        clips = 0
        failed = 0
        for rep_out in per_rep:
            res = rep_out[k]
            if isinstance(res, str):
                failed += 1
                failures.append(f"estimator {k}: {res}")
            else:
                delta, clip_count = res
                deltas.append(float(delta))
                clips += int(clip_count)
        r_ok = len(deltas)
        if r_ok == 0:
            rows.append(McRow(k, math.nan, math.nan, math.nan, failed, clips, True))
            continue
        mean = math.fsum(deltas) / r_ok
        bias = mean - cfg.true_ate
        mse = math.fsum((v - cfg.true_ate) ** 2 for v in deltas) / r_ok
        if r_ok > 1:
            var = math.fsum((v - mean) ** 2 for v in deltas) / (r_ok - 1)
            std = math.sqrt(var)
            degenerate = False
        else:
            std = 0.0
            degenerate = True
        rows.append(McRow(k, bias, std, mse, failed, clips, degenerate))
    return tuple(rows), tuple(failures)


def run_monte_carlo(cfg: ScenarioConfig, jobs: int = 1) -> McReport:
    """Run the full replication loop and aggregate the table.

    Replicates whose fits error are excluded and counted; more than 5% failed
    replicates aborts with diagnostics. The report is a pure function of the
    config, independent of ``jobs``.
    """
    direction = make_ps_direction(cfg.slopes, cfg.index_tilt)
    offset = calibrate_offset(
        direction, cfg.target_untreated, draws=cfg.calibration_draws, seed=cfg.seed
    )
    indices = range(cfg.reps)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(
                pool.map(_replicate_task, ((cfg, offset, i) for i in indices), chunksize=4)
            )
    else:
        per_rep = [_replicate(cfg, offset, i) for i in indices]

    rows, failures = _aggregate(cfg, per_rep)
    worst_failed = max((r.reps_failed for r in rows), default=0)
    if worst_failed > 0.05 * cfg.reps:
        detail = "; ".join(failures[:5])
        raise SimulationError(
            f"{worst_failed}/{cfg.reps} replicates failed (>5%): {detail}"
        )
    return McReport(rows=rows, config=cfg, offset=offset, failures=failures)


def _replicate_task(args: tuple[ScenarioConfig, float, int]) -> dict[int, object]:
    cfg, offset, rep_index = args
    return _replicate(cfg, offset, rep_index)


def report_csv_text(report: McReport) -> str:
    """Table CSV: one row per estimator, full-precision floats, LF endings."""
    lines = ["estimator,bias,std,mse,reps_failed,clips"]
    for r in report.rows:
        lines.append(
            f"{r.estimator},{r.bias!r},{r.std!r},{r.mse!r},{r.reps_failed},{r.clips}"
        )
    return "\n".join(lines) + "\n"


def write_report_csv(report: McReport, path: str | Path) -> None:
    Path(path).write_text(report_csv_text(report), encoding="utf-8")


def untreated_share_check(
    direction: np.ndarray, offset: float, draws: int = 10**6, seed: int = 1
) -> float:
    """Independent MC re-estimate of the untreated share at a calibrated offset."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _CHECK_TAG]))
    x = rng.standard_normal((draws, np.asarray(direction).size))
    return float(np.mean(1.0 - expit(x @ np.asarray(direction) + offset)))
