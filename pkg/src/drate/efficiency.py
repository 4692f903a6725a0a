"""Variance theory: the efficiency bound, super-efficiency curves, and MC checks.

The efficiency bound for the ATE is

    E[ Var(Y(1)|X)/p(X) + Var(Y(0)|X)/(1-p(X))
       + (m1(X) - E[Y(1)] - m0(X) + E[Y(0)])^2 ].

It is computed here two ways: a Monte Carlo oracle over a known generative
model and a plug-in sample analog over fitted nuisances. A closed form for
the variance change under a constant misspecified propensity covers the one
case where the misspecification penalty has an exact expression; everything
else is checked empirically through `compare_variance`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import chi2

from .aipw import NuisanceFit, NuisanceValues, _theta0, _theta1, evaluate_nuisances
from .data import ObservationSet
from .errors import EmptyArmError

__all__ = [
    "GenerativeTruth",
    "VarianceRatio",
    "VarianceReport",
    "compare_variance",
    "constant_ps_variance_factor",
    "constant_ps_variance_gap",
    "efficiency_bound_mc",
    "efficiency_bound_plugin",
    "variance_factor_curve",
]


@dataclass(frozen=True)
class GenerativeTruth:
    """A fully known data-generating model, the input to the MC oracle."""

    draw_covariates: Callable[[np.random.Generator, int], np.ndarray]
    propensity: Callable[[np.ndarray], np.ndarray]
    outcome_treated: Callable[[np.ndarray], np.ndarray]
    outcome_control: Callable[[np.ndarray], np.ndarray]
    var_treated: Callable[[np.ndarray], np.ndarray]
    var_control: Callable[[np.ndarray], np.ndarray]
    mean_treated: float | None = None  # E[Y(1)] when known in closed form
    mean_control: float | None = None


@dataclass(frozen=True)
class VarianceReport:
    """The efficiency bound split into its three nonnegative components."""

    bound: float
    source: str  # "mc_oracle" or "plug_in"
    n_draws: int
    ipw_treated: float
    ipw_control: float
    heterogeneity: float
    mc_stderr: float | None = None

    def components(self) -> tuple[float, float, float]:
        return (self.ipw_treated, self.ipw_control, self.heterogeneity)

    def to_record(self) -> dict:
        return {
            "bound": self.bound,
            "source": self.source,
            "n_draws": self.n_draws,
            "ipw_treated": self.ipw_treated,
            "ipw_control": self.ipw_control,
            "heterogeneity": self.heterogeneity,
            "mc_stderr": self.mc_stderr,
        }


def efficiency_bound_mc(truth: GenerativeTruth, draws: int, seed: int) -> VarianceReport:
    """Monte Carlo average of the bound's integrand over fresh covariate draws."""
    if draws < 1000:
        raise ValueError(f"need at least 1000 draws for the MC oracle, got {draws}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = truth.draw_covariates(rng, draws)
    p = np.asarray(truth.propensity(x), dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        bad = float(p[np.argmax((p <= 0.0) | (p >= 1.0))])
        raise ValueError(f"propensity {bad!r} outside (0, 1) at an oracle draw")
    m1 = np.asarray(truth.outcome_treated(x), dtype=float)
    m0 = np.asarray(truth.outcome_control(x), dtype=float)
    ey1 = float(np.mean(m1)) if truth.mean_treated is None else truth.mean_treated
    ey0 = float(np.mean(m0)) if truth.mean_control is None else truth.mean_control

    term1 = truth.var_treated(x) / p
    term0 = truth.var_control(x) / (1.0 - p)
    het = (m1 - ey1 - m0 + ey0) ** 2
    integrand = term1 + term0 + het
    c1 = float(np.mean(term1))
    c0 = float(np.mean(term0))
    ch = float(np.mean(het))
    stderr = float(np.std(integrand, ddof=1) / math.sqrt(draws))
    return VarianceReport(
        bound=c1 + c0 + ch,
        source="mc_oracle",
        n_draws=draws,
        ipw_treated=c1,
        ipw_control=c0,
        heterogeneity=ch,
        mc_stderr=stderr,
    )


def efficiency_bound_plugin(obs: ObservationSet, fit: NuisanceFit) -> VarianceReport:
    """Sample analog of the bound from fitted nuisances.

    Conditional variances are replaced by within-arm squared residuals
    re-weighted by the inverse (clipped) propensity, and the potential-outcome
    means by the AIPW arm means from the same fit.
    """
    if obs.n_treated == 0 or obs.n_control == 0:
        raise EmptyArmError("plug-in bound needs both arms nonempty")
    vals = evaluate_nuisances(obs, fit)
    return plugin_bound_from_values(obs, vals)


def plugin_bound_from_values(obs: ObservationSet, vals: NuisanceValues) -> VarianceReport:
    d = obs.treatments
    y = obs.outcomes
    p = vals.propensity
    theta1 = _theta1(obs, vals)
    theta0 = _theta0(obs, vals)
    c1 = float(np.mean(d * (y - vals.outcome_treated) ** 2 / p**2))
    c0 = float(np.mean((1.0 - d) * (y - vals.outcome_control) ** 2 / (1.0 - p) ** 2))
    ch = float(np.mean((vals.outcome_treated - theta1 - vals.outcome_control + theta0) ** 2))
    return VarianceReport(
        bound=c1 + c0 + ch,
        source="plug_in",
        n_draws=0,
        ipw_treated=c1,
        ipw_control=c0,
        heterogeneity=ch,
    )


def _check_unit_interval(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie strictly in (0, 1), got {value}")


def constant_ps_variance_factor(true_ps: float, assumed_ps: float) -> float:
    """Sign of this factor tells whether a constant wrong propensity hurts.

    f(g) = p*/g^2 + (1-p*)/(1-g)^2 - 1/p* - 1/(1-p*), evaluated at the true
    constant propensity p* and the assumed constant g. Negative values mark
    the super-efficiency region; zero means the bound is attained.
    """
    _check_unit_interval("true_ps", true_ps)
    _check_unit_interval("assumed_ps", assumed_ps)
    p, g = true_ps, assumed_ps
    # grouped so the two halves cancel exactly at g == p
    return (p / g**2 - 1.0 / p) + ((1.0 - p) / (1.0 - g) ** 2 - 1.0 / (1.0 - p))


def constant_ps_variance_gap(true_ps: float, assumed_ps: float, mean_var_treated: float) -> float:
    """Exact asymptotic-variance gap in the constant-propensity special case.

    Valid when the true and assumed propensities are constants, the two arms
    share a conditional outcome variance, and the covariates are centered (so
    the parametric correction terms vanish); the caller asserts those
    hypotheses. Returns E[Var(Y(1)|X)] * f(g).
    """
    return mean_var_treated * constant_ps_variance_factor(true_ps, assumed_ps)


def variance_factor_curve(
    true_ps: float, lo: float, hi: float, step: float
) -> list[tuple[float, float]]:
    """Tabulate (g, f(g)) over the grid lo, lo+step, ..., hi."""
    _check_unit_interval("true_ps", true_ps)
    _check_unit_interval("grid lo", lo)
    _check_unit_interval("grid hi", hi)
    if step <= 0:
        raise ValueError(f"grid step must be > 0, got {step}")
    if hi < lo:
        raise ValueError(f"empty grid: hi {hi} < lo {lo}")
    if step > hi - lo:
        raise ValueError(f"grid step {step} is larger than the interval [{lo}, {hi}]")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    rows = []
    for k in range(count):
        g = lo + k * step
        rows.append((g, constant_ps_variance_factor(true_ps, g)))
    return rows


@dataclass(frozen=True)
class VarianceRatio:
    """Empirical variance of sqrt(n) * estimate against a theoretical bound."""

    empirical: float  # n * sample variance of the replicate estimates
    bound: float
    ratio: float
    ci_low: float
    ci_high: float
    replications: int

    def to_record(self) -> dict:
        return {
            "empirical": self.empirical,
            "bound": self.bound,
            "ratio": self.ratio,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "replications": self.replications,
        }


def compare_variance(estimates: np.ndarray, bound: float, n: int) -> VarianceRatio:
    """Ratio of the empirical variance of sqrt(n) * estimate to ``bound``.

    The two-sided 95% interval is chi-square based and assumes the replicate
    estimates are approximately normal, which the CLT arguments behind the
    estimators justify; treat it as approximate.
    """
    estimates = np.asarray(estimates, dtype=float).ravel()
    r = estimates.size
    if r < 30:
        raise ValueError(f"need at least 30 replications, got {r}")
    if not bound > 0:
        raise ValueError(f"bound must be > 0, got {bound}")
    if np.all(estimates == estimates[0]):
        emp = 0.0  # identical replicates: variance is exactly zero
    else:
        emp = float(n * np.var(estimates, ddof=1))
    ratio = emp / bound
    lo = (r - 1) * emp / (chi2.ppf(0.975, r - 1) * bound)
    hi = (r - 1) * emp / (chi2.ppf(0.025, r - 1) * bound)
    return VarianceRatio(
        empirical=emp, bound=bound, ratio=ratio, ci_low=float(lo), ci_high=float(hi), replications=r
    )
