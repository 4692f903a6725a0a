"""Parametric nuisance fits: logistic propensity MLE and linear outcome regressions.

No intercept is added implicitly anywhere in this module; callers who want one
append a constant column to the design. The local-misspecification helpers
perturb a known truth multiplicatively (propensity) or additively (regression).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import ObservationSet
from .errors import (
    DegenerateTargetError,
    EmptyArmError,
    PerturbationRangeError,
    RankDeficiencyError,
    SeparationError,
)

__all__ = [
    "LinearFit",
    "LogisticFit",
    "MisspecMode",
    "MisspecSpec",
    "PERTURBATION_SHAPES",
    "apply_local_misspec",
    "fit_linear",
    "fit_logistic",
    "predict_propensity_param",
]

GRAD_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 30
SEPARATION_NORM = 1e4
# Fitted probabilities reproducing every label this closely mean the
# likelihood supremum is not attained (complete separation): the score can
# vanish below GRAD_TOL long before the iterate norm blows up.
SEPARATION_RESID = 1e-4


@dataclass(frozen=True)
class LogisticFit:
    """A logistic-regression MLE with its observed information at the optimum."""

    beta_hat: np.ndarray
    information: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Propensity at one point (1-d x) or a batch (rows of a 2-d x)."""
        return predict_propensity_param(self, x)

    def to_record(self) -> dict:
        return {
            "beta_hat": [float(b) for b in self.beta_hat],
            "converged": self.converged,
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
        }


@dataclass(frozen=True)
class LinearFit:
    """A per-arm least-squares outcome regression."""

    gamma_hat: np.ndarray
    sigma2_hat: float
    arm: str  # "treated" or "control"
    n_arm: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.gamma_hat


def _loglik(eta: np.ndarray, d: np.ndarray) -> float:
    # sum d*eta - log(1 + exp(eta)), computed without overflow
    return float(np.sum(d * eta) - np.sum(np.logaddexp(0.0, eta)))


def fit_logistic(obs: ObservationSet, target: np.ndarray | None = None) -> LogisticFit:
    """Newton-Raphson logistic MLE of the target on the raw covariate design.

    Starts at beta = 0 and iterates until the score has sup-norm below 1e-8 or
    100 iterations, halving any step (up to 30 times) that fails to increase
    the log-likelihood. Raises on degenerate targets, rank-deficient designs,
    and complete separation (iterate sup-norm exceeding 1e4).
    """
    x = obs.covariates
    d = obs.treatments if target is None else np.asarray(target, dtype=float).ravel()
    n, p = x.shape
    if d.shape[0] != n:
        raise ValueError(f"target length {d.shape[0]} != n {n}")
    if np.all(d == d[0]):
        raise DegenerateTargetError("degenerate target: all responses equal")
    if np.linalg.matrix_rank(x) < p:
        raise RankDeficiencyError("design matrix is rank deficient")

    beta = np.zeros(p)
    eta = x @ beta
    ll = _loglik(eta, d)
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        probs = expit(eta)
        grad = x.T @ (d - probs)
        if float(np.max(np.abs(grad))) < GRAD_TOL:
            converged = True
            iterations -= 1
            break
        w = probs * (1.0 - probs)
        info = x.T @ (x * w[:, None])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular information matrix") from exc

        new_beta = beta + step
        new_eta = x @ new_beta
        new_ll = _loglik(new_eta, d)
        halvings = 0
        while new_ll < ll and halvings < MAX_HALVINGS:
            step *= 0.5
            new_beta = beta + step
            new_eta = x @ new_beta
            new_ll = _loglik(new_eta, d)
            halvings += 1
        beta, eta, ll = new_beta, new_eta, new_ll
        if float(np.max(np.abs(beta))) > SEPARATION_NORM:
            raise SeparationError(
                "separation: no finite maximizer (iterate norm exceeded 1e4)"
            )
    else:
        probs = expit(eta)
        grad = x.T @ (d - probs)
        converged = float(np.max(np.abs(grad))) < GRAD_TOL

    probs = expit(eta)
    if float(np.max(np.abs(d - probs))) < SEPARATION_RESID:
        raise SeparationError(
            "separation: fitted probabilities reproduce every label; no finite maximizer"
        )
    w = probs * (1.0 - probs)
    information = x.T @ (x * w[:, None])
    information = 0.5 * (information + information.T)
    return LogisticFit(
        beta_hat=beta,
        information=information,
        converged=converged,
        iterations=iterations,
        log_likelihood=ll,
    )


def predict_propensity_param(fit: LogisticFit, x: np.ndarray) -> np.ndarray | float:
    """Numerically stable logistic evaluation exp(x'b)/(1+exp(x'b))."""
    x = np.asarray(x, dtype=float)
    eta = x @ fit.beta_hat
    return expit(eta)


def fit_linear(obs: ObservationSet, arm: str) -> LinearFit:
    """Least-squares outcome regression on one arm via SVD.

    ``sigma2_hat`` is RSS / n_arm (maximum-likelihood divisor).
    """
    if arm not in ("treated", "control"):
        raise ValueError(f"arm must be 'treated' or 'control', got {arm!r}")
    mask = obs.treated_mask if arm == "treated" else ~obs.treated_mask
    xa = obs.covariates[mask]
    ya = obs.outcomes[mask]
    n_arm, p = xa.shape
    if n_arm == 0:
        raise EmptyArmError(f"{arm} arm is empty")
    if n_arm < p:
        raise EmptyArmError(f"{arm} arm has {n_arm} rows, fewer than p={p}")
    gamma, _, rank, _ = np.linalg.lstsq(xa, ya, rcond=None)
    if rank < p:
        raise RankDeficiencyError(f"{arm}-arm design is rank deficient")
    resid = ya - xa @ gamma
    sigma2 = float(resid @ resid) / n_arm
    return LinearFit(gamma_hat=gamma, sigma2_hat=sigma2, arm=arm, n_arm=n_arm)


class MisspecMode(Enum):
    NONE = "none"
    GLOBAL_Z = "global_z"
    LOCAL_PS = "local_ps"
    LOCAL_OR = "local_or"


def _shape_sin_x1(x: np.ndarray) -> np.ndarray:
    return np.sin(x[..., 0])


def _shape_x1_squared(x: np.ndarray) -> np.ndarray:
    return x[..., 0] ** 2


def _shape_tanh_x1x2(x: np.ndarray) -> np.ndarray:
    return np.tanh(x[..., 0] * x[..., 1])


# Named perturbation menu; keeps locally misspecified experiments reproducible.
PERTURBATION_SHAPES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin_x1": _shape_sin_x1,
    "x1_squared": _shape_x1_squared,
    "tanh_x1x2": _shape_tanh_x1x2,
}


@dataclass(frozen=True)
class MisspecSpec:
    """How a nuisance truth is perturbed (or which covariate map misfits it)."""

    mode: MisspecMode
    delta: float = 0.0
    shape: str = "sin_x1"

    def __post_init__(self) -> None:
        if self.mode in (MisspecMode.LOCAL_PS, MisspecMode.LOCAL_OR):
            if self.shape not in PERTURBATION_SHAPES:
                raise ValueError(
                    f"unknown perturbation shape {self.shape!r}; choose from {sorted(PERTURBATION_SHAPES)}"
                )


def apply_local_misspec(
    truth: Callable[[np.ndarray], np.ndarray], spec: MisspecSpec
) -> Callable[[np.ndarray], np.ndarray]:
    """Return the locally perturbed version of a known nuisance function.

    LOCAL_PS gives x -> truth(x) * (1 + delta * s(x)) and raises
    :class:`PerturbationRangeError` when an evaluation leaves (0, 1).
    LOCAL_OR gives x -> truth(x) + delta * s(x). The returned function is pure.
    """
    if spec.mode not in (MisspecMode.LOCAL_PS, MisspecMode.LOCAL_OR):
        raise ValueError(f"apply_local_misspec requires a local mode, got {spec.mode}")
    shape = PERTURBATION_SHAPES[spec.shape]
    delta = float(spec.delta)

    if spec.mode == MisspecMode.LOCAL_OR:

        def perturbed_or(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            return np.asarray(truth(x), dtype=float) + delta * shape(x)

        return perturbed_or

    def perturbed_ps(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vals = np.asarray(truth(x), dtype=float) * (1.0 + delta * shape(x))
        bad = (vals <= 0.0) | (vals >= 1.0)
        if np.any(bad):
            worst = float(np.atleast_1d(vals)[np.argmax(np.atleast_1d(bad))])
            raise PerturbationRangeError(
                f"perturbed propensity {worst!r} outside (0, 1) on the evaluation domain"
            )
        return vals

    return perturbed_ps


def score_sup_norm(obs: ObservationSet, fit: LogisticFit, target: np.ndarray | None = None) -> float:
    """Sup-norm of the logistic score sum_i x_i (d_i - p(x_i; beta_hat))."""
    d = obs.treatments if target is None else np.asarray(target, dtype=float).ravel()
    probs = expit(obs.covariates @ fit.beta_hat)
    return float(np.max(np.abs(obs.covariates.T @ (d - probs))))
