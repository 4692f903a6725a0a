"""Nadaraya-Watson nuisance smoothers: single-index and full-covariate variants.

Both use Gaussian kernels. Propensity predictions are clipped into
[EPS_CLIP, 1 - EPS_CLIP] with every clip counted; a kernel denominator that
underflows below DENOM_UNDERFLOW falls back to the arm (or global treated)
mean instead of erroring, so isolated far-out queries cannot abort a long
Monte Carlo run.

Inner sums always run in fixed training-row order via numpy reductions;
callers parallelize over queries only, keeping results deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import ObservationSet
from .errors import EmptyArmError

__all__ = [
    "EPS_CLIP",
    "FixedBandwidth",
    "IndexSmoother",
    "KernelConfig",
    "KernelPlan",
    "MultivariateSmoother",
    "RuleOfThumb",
    "SmootherRole",
    "resolve_bandwidth",
]

EPS_CLIP = 0.01
DENOM_UNDERFLOW = 1e-300

# Exponent for single-index bandwidths: interior of the (1/4, 1/3) window the
# smoother's rate conditions leave open.
INDEX_EXPONENT = -0.3

_QUERY_CHUNK = 256


class SmootherRole(Enum):
    PS_INDEX = "ps_index"
    OR_TREATED = "or_treated"
    OR_CONTROL = "or_control"
    PS_MULTIVARIATE = "ps_multivariate"
    OR_MULTIVARIATE = "or_multivariate"

    @property
    def is_multivariate(self) -> bool:
        return self in (SmootherRole.PS_MULTIVARIATE, SmootherRole.OR_MULTIVARIATE)


@dataclass(frozen=True)
class RuleOfThumb:
    """Bandwidth c * scale * n^rate, with the rate set by the smoother role."""

    c: float = 1.0

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError(f"rule-of-thumb constant must be > 0, got {self.c}")


@dataclass(frozen=True)
class FixedBandwidth:
    h: float

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise ValueError(f"fixed bandwidth must be > 0, got {self.h}")


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth rule for one smoother role (kernel family is implied: Gaussian)."""

    role: SmootherRole
    rule: RuleOfThumb | FixedBandwidth = field(default_factory=RuleOfThumb)


def resolve_bandwidth(config: KernelConfig, data_scale: float, n: int, p: int = 1) -> float:
    """Concrete bandwidth for a smoother.

    Single-index roles use c * scale * n^(-0.3); multivariate roles use
    c * scale * n^(-1/(p+4)). Fixed rules pass through verbatim.
    """
    if isinstance(config.rule, FixedBandwidth):
        return config.rule.h
    if n < 2:
        raise ValueError(f"need n >= 2 to resolve a bandwidth, got n={n}")
    if not data_scale > 0:
        raise ValueError(f"data scale must be > 0, got {data_scale}")
    if config.role.is_multivariate:
        h = config.rule.c * data_scale * n ** (-1.0 / (p + 4))
    else:
        h = config.rule.c * data_scale * n**INDEX_EXPONENT
    if not h > 0:
        raise ValueError(f"resolved bandwidth must be > 0, got {h}")
    return h


@dataclass(frozen=True)
class KernelPlan:
    """Bandwidth rules for all five smoother roles."""

    ps_index: KernelConfig = field(default_factory=lambda: KernelConfig(SmootherRole.PS_INDEX))
    or_treated: KernelConfig = field(default_factory=lambda: KernelConfig(SmootherRole.OR_TREATED))
    or_control: KernelConfig = field(default_factory=lambda: KernelConfig(SmootherRole.OR_CONTROL))
    ps_multivariate: KernelConfig = field(
        default_factory=lambda: KernelConfig(SmootherRole.PS_MULTIVARIATE)
    )
    or_multivariate: KernelConfig = field(
        default_factory=lambda: KernelConfig(SmootherRole.OR_MULTIVARIATE)
    )

    @classmethod
    def with_constants(
        cls, index_c: float = 1.0, multivariate_c: float = 1.0
    ) -> "KernelPlan":
        return cls(
            ps_index=KernelConfig(SmootherRole.PS_INDEX, RuleOfThumb(index_c)),
            or_treated=KernelConfig(SmootherRole.OR_TREATED, RuleOfThumb(index_c)),
            or_control=KernelConfig(SmootherRole.OR_CONTROL, RuleOfThumb(index_c)),
            ps_multivariate=KernelConfig(SmootherRole.PS_MULTIVARIATE, RuleOfThumb(multivariate_c)),
            or_multivariate=KernelConfig(SmootherRole.OR_MULTIVARIATE, RuleOfThumb(multivariate_c)),
        )


def index_scale(values: np.ndarray) -> float:
    """Sample standard deviation of a 1-d smoothing variable."""
    return float(np.std(values, ddof=1))


def covariate_scale(x: np.ndarray) -> float:
    """Geometric mean of per-coordinate sample standard deviations."""
    stds = np.std(x, axis=0, ddof=1)
    if np.any(stds <= 0):
        raise ValueError("every covariate needs positive spread for a rule-of-thumb bandwidth")
    return float(np.exp(np.mean(np.log(stds))))


def kernel_matrix_1d(query_u: np.ndarray, train_u: np.ndarray, h: float) -> np.ndarray:
    """(k, n) matrix of (1/h) * phi((u_q - u_t)/h) with phi the standard normal."""
    diff = (query_u[:, None] - train_u[None, :]) / h
    return np.exp(-0.5 * diff * diff) / (h * math.sqrt(2.0 * math.pi))


def kernel_matrix_nd(query_x: np.ndarray, train_x: np.ndarray, h: float) -> np.ndarray:
    """(k, n) product-Gaussian matrix h^-p (2 pi)^(-p/2) exp(-|u-v|^2 / (2 h^2))."""
    k, p = query_x.shape
    n = train_x.shape[0]
    scale = h ** (-p) * (2.0 * math.pi) ** (-p / 2.0)
    out = np.empty((k, n))
    inv_two_h2 = 1.0 / (2.0 * h * h)
    for start in range(0, k, _QUERY_CHUNK):
        stop = min(start + _QUERY_CHUNK, k)
        diff = query_x[start:stop, None, :] - train_x[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        out[start:stop] = scale * np.exp(-sq * inv_two_h2)
    return out


def _nw_ratio(
    kmat: np.ndarray, values: np.ndarray, fallback: float
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-weighted average of values per query row, with underflow fallback.

    Returns (predictions, underflow_mask).
    """
    denom = np.sum(kmat, axis=1)
    numer = np.sum(kmat * values[None, :], axis=1)
    under = denom < DENOM_UNDERFLOW
    safe = np.where(under, 1.0, denom)
    preds = np.where(under, fallback, numer / safe)
    return preds, under


def _clip_propensity(raw: np.ndarray, skip: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip raw propensities into [EPS_CLIP, 1-EPS_CLIP], except where skip is set."""
    clipped = np.clip(raw, EPS_CLIP, 1.0 - EPS_CLIP)
    clipped = np.where(skip, raw, clipped)
    n_clipped = int(np.sum((clipped != raw) & ~skip))
    return clipped, n_clipped


@dataclass(frozen=True)
class IndexSmoother:
    """Nadaraya-Watson smoother on a one-dimensional projection of the covariates.

    For the propensity target the weighted average runs over the full sample;
    for an outcome target it runs over that arm only. Predictions depend on x
    only through direction' x.
    """

    direction: np.ndarray
    projected_train: np.ndarray
    train_values: np.ndarray  # d for propensity targets, arm outcomes otherwise
    bandwidth: float
    target: str  # "propensity", "treated_outcome", "control_outcome"
    fallback: float

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.atleast_2d(x) @ self.direction

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Smoothed value at each row of x (no clipping)."""
        values, _ = self.predict_detailed(self.project(x))
        return values

    def predict_detailed(self, query_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        kmat = kernel_matrix_1d(query_u, self.projected_train, self.bandwidth)
        return _nw_ratio(kmat, self.train_values, self.fallback)

    def predict_raw(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unclipped values at covariate rows, plus the underflow-fallback mask."""
        return self.predict_detailed(self.project(x))

    def predict_propensity(self, x: np.ndarray) -> tuple[np.ndarray, int]:
        """Clipped propensities plus the number of clipped queries."""
        if self.target != "propensity":
            raise ValueError("predict_propensity requires a propensity-target smoother")
        raw, under = self.predict_raw(x)
        return _clip_propensity(raw, under)


@dataclass(frozen=True)
class MultivariateSmoother:
    """Nadaraya-Watson smoother on the full covariate vector (product Gaussian)."""

    train_x: np.ndarray
    train_values: np.ndarray
    bandwidth: float
    target: str
    fallback: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        values, _ = self.predict_raw(x)
        return values

    def predict_raw(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unclipped values at covariate rows, plus the underflow-fallback mask."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        kmat = kernel_matrix_nd(x, self.train_x, self.bandwidth)
        return _nw_ratio(kmat, self.train_values, self.fallback)

    def predict_propensity(self, x: np.ndarray) -> tuple[np.ndarray, int]:
        if self.target != "propensity":
            raise ValueError("predict_propensity requires a propensity-target smoother")
        raw, under = self.predict_raw(x)
        return _clip_propensity(raw, under)


def _arm_arrays(obs: ObservationSet, arm: str) -> tuple[np.ndarray, np.ndarray]:
    mask = obs.treated_mask if arm == "treated" else ~obs.treated_mask
    if not np.any(mask):
        raise EmptyArmError(f"{arm} arm is empty; cannot smooth its outcomes")
    return obs.covariates[mask], obs.outcomes[mask]


def fit_index_propensity(
    obs: ObservationSet, direction: np.ndarray, config: KernelConfig | None = None
) -> IndexSmoother:
    """Treated-fraction smoother on direction' x over the whole sample."""
    config = config or KernelConfig(SmootherRole.PS_INDEX)
    direction = np.asarray(direction, dtype=float).ravel()
    proj = obs.covariates @ direction
    h = resolve_bandwidth(config, index_scale(proj), obs.n)
    return IndexSmoother(
        direction=direction,
        projected_train=proj,
        train_values=obs.treatments.astype(float),
        bandwidth=h,
        target="propensity",
        fallback=float(np.mean(obs.treatments)),
    )


def fit_index_regression(
    obs: ObservationSet, direction: np.ndarray, arm: str, config: KernelConfig | None = None
) -> IndexSmoother:
    """Per-arm outcome smoother on direction' x."""
    role = SmootherRole.OR_TREATED if arm == "treated" else SmootherRole.OR_CONTROL
    config = config or KernelConfig(role)
    direction = np.asarray(direction, dtype=float).ravel()
    xa, ya = _arm_arrays(obs, arm)
    proj_all = obs.covariates @ direction
    proj_arm = xa @ direction
    # Bandwidth scale comes from the full-sample index spread so both arms
    # smooth on a common scale.
    h = resolve_bandwidth(config, index_scale(proj_all), obs.n)
    return IndexSmoother(
        direction=direction,
        projected_train=proj_arm,
        train_values=ya,
        bandwidth=h,
        target=f"{arm}_outcome",
        fallback=float(np.mean(ya)),
    )


def fit_multivariate_propensity(
    obs: ObservationSet, config: KernelConfig | None = None
) -> MultivariateSmoother:
    """Treated-fraction smoother on the full covariate vector."""
    config = config or KernelConfig(SmootherRole.PS_MULTIVARIATE)
    h = resolve_bandwidth(config, covariate_scale(obs.covariates), obs.n, obs.p)
    return MultivariateSmoother(
        train_x=obs.covariates,
        train_values=obs.treatments.astype(float),
        bandwidth=h,
        target="propensity",
        fallback=float(np.mean(obs.treatments)),
    )


def fit_multivariate_regression(
    obs: ObservationSet, arm: str, config: KernelConfig | None = None
) -> MultivariateSmoother:
    """Per-arm outcome smoother on the full covariate vector."""
    config = config or KernelConfig(SmootherRole.OR_MULTIVARIATE)
    xa, ya = _arm_arrays(obs, arm)
    h = resolve_bandwidth(config, covariate_scale(obs.covariates), obs.n, obs.p)
    return MultivariateSmoother(
        train_x=xa,
        train_values=ya,
        bandwidth=h,
        target=f"{arm}_outcome",
        fallback=float(np.mean(ya)),
    )
