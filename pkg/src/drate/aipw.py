"""Augmented inverse-propensity-weighted ATE assembly for all nine backend pairs.

The two arm means are sample averages of

    treated:  d*y/p + (1 - d/p) * m1
    control:  (1-d)*y/(1-p) + (1 - (1-d)/(1-p)) * m0

accumulated with compensated summation in fixed row order, so results are
reproducible to the last bit across runs. Kernel nuisances are smoothed
leave-one-in: a sample point contributes to its own prediction.

Propensity values from every backend are clipped into
[EPS_CLIP, 1 - EPS_CLIP] at assembly time and the clip count is reported on
the result, never silent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .data import Backend, EstimateResult, EstimatorId, IndexDirections, ObservationSet
from .errors import EmptyArmError, NonFiniteNuisanceError
from .kernels import (
    EPS_CLIP,
    KernelPlan,
    fit_index_propensity,
    fit_index_regression,
    fit_multivariate_propensity,
    fit_multivariate_regression,
)
from .parametric import fit_linear, fit_logistic

__all__ = [
    "NuisanceFit",
    "NuisanceValues",
    "aipw_mean_control",
    "aipw_mean_treated",
    "estimate_all",
    "estimate_ate",
    "estimate_ate_with_nuisances",
    "evaluate_nuisances",
]

DesignMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted (or user-supplied) nuisance functions with their backend tags.

    Each callable maps an (n, p) covariate block to n values. Backend tags are
    None for oracle functions supplied directly by the caller.
    """

    propensity: Callable[[np.ndarray], np.ndarray]
    outcome_treated: Callable[[np.ndarray], np.ndarray]
    outcome_control: Callable[[np.ndarray], np.ndarray]
    ps_backend: Backend | None = None
    or_backend: Backend | None = None


@dataclass(frozen=True)
class NuisanceValues:
    """Nuisance functions materialized at the sample points, propensity clipped."""

    propensity: np.ndarray
    outcome_treated: np.ndarray
    outcome_control: np.ndarray
    clipped_count: int


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = np.nonzero(~np.isfinite(values))[0]
    if bad.size:
        raise NonFiniteNuisanceError(f"{what} is non-finite at row {int(bad[0])}")


def evaluate_nuisances(obs: ObservationSet, fit: NuisanceFit, clip: bool = True) -> NuisanceValues:
    """Evaluate the three nuisance functions at every sample point.

    ``clip=False`` skips the propensity clip, for callers probing algebraic
    identities of the estimating equation itself.
    """
    p_raw = np.asarray(fit.propensity(obs.covariates), dtype=float).ravel()
    m1 = np.asarray(fit.outcome_treated(obs.covariates), dtype=float).ravel()
    m0 = np.asarray(fit.outcome_control(obs.covariates), dtype=float).ravel()
    _check_finite(p_raw, "propensity")
    _check_finite(m1, "treated outcome regression")
    _check_finite(m0, "control outcome regression")
    if not clip:
        return NuisanceValues(p_raw, m1, m0, 0)
    p = np.clip(p_raw, EPS_CLIP, 1.0 - EPS_CLIP)
    clipped = int(np.sum(p != p_raw))
    return NuisanceValues(p, m1, m0, clipped)


def _theta1(obs: ObservationSet, vals: NuisanceValues) -> float:
    d = obs.treatments
    y = obs.outcomes
    terms = d * y / vals.propensity + (1.0 - d / vals.propensity) * vals.outcome_treated
    return math.fsum(terms.tolist()) / obs.n


def _theta0(obs: ObservationSet, vals: NuisanceValues) -> float:
    d1m = 1.0 - obs.treatments
    y = obs.outcomes
    q = 1.0 - vals.propensity
    terms = d1m * y / q + (1.0 - d1m / q) * vals.outcome_control
    return math.fsum(terms.tolist()) / obs.n


def aipw_mean_treated(obs: ObservationSet, fit: NuisanceFit, clip: bool = True) -> float:
    """AIPW estimate of the mean treated potential outcome."""
    return _theta1(obs, evaluate_nuisances(obs, fit, clip=clip))


def aipw_mean_control(obs: ObservationSet, fit: NuisanceFit, clip: bool = True) -> float:
    """AIPW estimate of the mean control potential outcome."""
    return _theta0(obs, evaluate_nuisances(obs, fit, clip=clip))


def _result(
    obs: ObservationSet, vals: NuisanceValues, estimator: EstimatorId | None
) -> EstimateResult:
    return EstimateResult(
        theta1_hat=_theta1(obs, vals),
        theta0_hat=_theta0(obs, vals),
        estimator=estimator,
        clipped_count=vals.clipped_count,
    )


def estimate_ate_with_nuisances(
    obs: ObservationSet,
    propensity: Callable[[np.ndarray], np.ndarray],
    outcome_treated: Callable[[np.ndarray], np.ndarray],
    outcome_control: Callable[[np.ndarray], np.ndarray],
) -> EstimateResult:
    """ATE from caller-supplied (possibly deliberately wrong) nuisance functions.

    This is the hook for double-robustness experiments: feed one correct and
    one wrong nuisance and the estimate stays consistent.
    """
    fit = NuisanceFit(propensity, outcome_treated, outcome_control)
    return _result(obs, evaluate_nuisances(obs, fit), estimator=None)


def _require_both_arms(obs: ObservationSet) -> None:
    if obs.n_treated == 0:
        raise EmptyArmError("treated arm is empty; cannot estimate the treated mean")
    if obs.n_control == 0:
        raise EmptyArmError("control arm is empty; cannot estimate the control mean")


def _tagged(tag: str, exc: Exception) -> Exception:
    return type(exc)(f"{tag}: {exc}")


def _parametric_design(x: np.ndarray, design_map: DesignMap | None, intercept: bool) -> np.ndarray:
    z = design_map(x) if design_map is not None else x
    if intercept:
        return np.column_stack([np.ones(z.shape[0]), z])
    return z


def _fit_ps_values(
    obs: ObservationSet,
    backend: Backend,
    directions: IndexDirections | None,
    plan: KernelPlan,
    design_map: DesignMap | None,
    intercept: bool,
) -> tuple[np.ndarray, int]:
    """Propensity values at the sample points (clipped) plus the clip count."""
    tag = f"PS backend ({backend.value})"
    try:
        if backend is Backend.PARAMETRIC:
            design = _parametric_design(obs.covariates, design_map, intercept)
            fit = fit_logistic(ObservationSet(design, obs.treatments, obs.outcomes))
            raw = fit.predict(design)
            under = np.zeros(obs.n, dtype=bool)
        elif backend is Backend.SEMIPARAMETRIC:
            if directions is None:
                raise ValueError("semiparametric PS requires index directions")
            sm = fit_index_propensity(obs, directions.ps, plan.ps_index)
            raw, under = sm.predict_raw(obs.covariates)
        else:
            sm = fit_multivariate_propensity(obs, plan.ps_multivariate)
            raw, under = sm.predict_raw(obs.covariates)
    except Exception as exc:  # tag the failing nuisance for the caller
        raise _tagged(tag, exc) from exc
    clipped = np.clip(raw, EPS_CLIP, 1.0 - EPS_CLIP)
    clipped = np.where(under, raw, clipped)
    return clipped, int(np.sum((clipped != raw) & ~under))


def _fit_or_values(
    obs: ObservationSet,
    backend: Backend,
    arm: str,
    directions: IndexDirections | None,
    plan: KernelPlan,
    design_map: DesignMap | None,
    intercept: bool,
) -> np.ndarray:
    tag = f"OR backend ({backend.value}, {arm})"
    try:
        if backend is Backend.PARAMETRIC:
            design = _parametric_design(obs.covariates, design_map, intercept)
            fit = fit_linear(ObservationSet(design, obs.treatments, obs.outcomes), arm)
            return fit.predict(design)
        if backend is Backend.SEMIPARAMETRIC:
            if directions is None:
                raise ValueError("semiparametric OR requires index directions")
            direction = directions.or_treated if arm == "treated" else directions.or_control
            config = plan.or_treated if arm == "treated" else plan.or_control
            sm = fit_index_regression(obs, direction, arm, config)
            return sm.predict(obs.covariates)
        sm = fit_multivariate_regression(obs, arm, plan.or_multivariate)
        return sm.predict(obs.covariates)
    except Exception as exc:
        raise _tagged(tag, exc) from exc


def estimate_all(
    obs: ObservationSet,
    estimators: Iterable[EstimatorId | int],
    directions: IndexDirections | None = None,
    kernel_plan: KernelPlan | None = None,
    ps_design: DesignMap | None = None,
    or_design: DesignMap | None = None,
    intercept: bool = True,
) -> Mapping[int, EstimateResult | Exception]:
    """Run several estimators on one sample, fitting each backend only once.

    Parametric backends regress on the (optionally design-mapped) covariates
    with an intercept column appended by default. Returns a dict mapping
    estimator id to an EstimateResult, or to the exception a required backend
    raised (other estimators proceed).
    """
    ids = [e if isinstance(e, EstimatorId) else EstimatorId(e) for e in estimators]
    _require_both_arms(obs)
    plan = kernel_plan or KernelPlan()

    ps_needed = {e.ps_backend for e in ids}
    or_needed = {e.or_backend for e in ids}

    ps_vals: dict[Backend, tuple[np.ndarray, int] | Exception] = {}
    for backend in sorted(ps_needed, key=lambda b: b.value):
        try:
            ps_vals[backend] = _fit_ps_values(obs, backend, directions, plan, ps_design, intercept)
        except Exception as exc:
            ps_vals[backend] = exc

    or_vals: dict[Backend, tuple[np.ndarray, np.ndarray] | Exception] = {}
    for backend in sorted(or_needed, key=lambda b: b.value):
        try:
            m1 = _fit_or_values(obs, backend, "treated", directions, plan, or_design, intercept)
            m0 = _fit_or_values(obs, backend, "control", directions, plan, or_design, intercept)
            or_vals[backend] = (m1, m0)
        except Exception as exc:
            or_vals[backend] = exc

    out: dict[int, EstimateResult | Exception] = {}
    for e in ids:
        ps = ps_vals[e.ps_backend]
        ors = or_vals[e.or_backend]
        if isinstance(ps, Exception):
            out[e.id] = ps
            continue
        if isinstance(ors, Exception):
            out[e.id] = ors
            continue
        p, clip_count = ps
        m1, m0 = ors
        vals = NuisanceValues(p, m1, m0, clip_count)
        try:
            _check_finite(vals.outcome_treated, "treated outcome regression")
            _check_finite(vals.outcome_control, "control outcome regression")
            out[e.id] = _result(obs, vals, e)
        except Exception as exc:
            out[e.id] = exc
    return out


def estimate_ate(
    obs: ObservationSet,
    estimator: EstimatorId | int,
    directions: IndexDirections | None = None,
    kernel_plan: KernelPlan | None = None,
    ps_design: DesignMap | None = None,
    or_design: DesignMap | None = None,
    intercept: bool = True,
) -> EstimateResult:
    """Fit the two nuisances named by ``estimator`` and assemble the ATE."""
    eid = estimator if isinstance(estimator, EstimatorId) else EstimatorId(estimator)
    result = estimate_all(obs, [eid], directions, kernel_plan, ps_design, or_design, intercept)[
        eid.id
    ]
    if isinstance(result, Exception):
        raise result
    return result
