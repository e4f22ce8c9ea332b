"""Simplex weight estimation for linear opinion pools.

The maximum-likelihood weights come from an EM fixed point on the mixture
likelihood of truth-bin probabilities; the adaptive variant adds a symmetric
Dirichlet penalty whose concentration decays over the season so early weeks
stay close to uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pmf import bin_index
from .validation import ParamsMixin, check_forecast_array, check_truths

__all__ = [
    "WeightFit",
    "AdaptivePrior",
    "em_pool_weights",
    "truth_bin_masses",
    "fit_static_weights",
    "fit_adaptive_weights",
    "EqualPool",
    "StaticPool",
    "AdaptivePool",
]

EM_TOL = 1e-8
EM_MAX_ITER = 10_000


@dataclass(frozen=True)
class WeightFit:
    """Converged simplex weights plus fit metadata."""

    weights: np.ndarray
    n_iter: int
    converged: bool
    log_posterior: float
    degenerate: bool = False


@dataclass(frozen=True)
class AdaptivePrior:
    """Week-indexed symmetric Dirichlet concentration schedule.

    Concentration is 1 + delta * (T - t) / T: strong tempering toward equal
    weights early in the season, fading to a flat prior by the final week.
    Always >= 1, so the MAP update never clips at zero.
    """

    week_index: int
    season_weeks: int
    delta: float = 5.0

    def __post_init__(self) -> None:
        if self.week_index < 1:
            raise ValueError("week_index must be >= 1")
        if self.season_weeks < 1:
            raise ValueError("season_weeks must be >= 1")
        if self.delta < 0.0:
            raise ValueError("delta must be >= 0")

    @property
    def concentration(self) -> float:
        frac = (self.season_weeks - self.week_index) / self.season_weeks
        return 1.0 + self.delta * max(frac, 0.0)


def _objective(denom: np.ndarray, pi: np.ndarray, alpha: float) -> float:
    ll = float(np.log(denom).sum())
    if alpha != 1.0:
        ll += (alpha - 1.0) * float(np.log(pi).sum())
    return ll


def em_pool_weights(
    f,
    alpha: float = 1.0,
    init=None,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> WeightFit:
    """EM fixed point for mixture weights on the simplex.

    ``f[j, c]`` is the probability component c placed on the bin realized at
    observation j (0 when the component was missing). Observations where
    every component has zero mass are dropped; if nothing remains the
    likelihood is degenerate and equal weights are returned with a flag.

    The (penalized, for alpha > 1) objective is checked to be non-decreasing
    at every iteration.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 2:
        raise ValueError(f"expected (n_obs, n_models) mass matrix, got {f.shape}")
    if alpha < 1.0:
        raise ValueError("concentration must be >= 1")
    n_models = f.shape[1]
    if n_models < 1:
        raise ValueError("need at least one model")
    equal = np.full(n_models, 1.0 / n_models)

    keep = f.sum(axis=1) > 0.0
    f = f[keep]
    n_obs = f.shape[0]
    if n_obs == 0:
        return WeightFit(equal, 0, True, 0.0, degenerate=True)

    pi = equal.copy() if init is None else np.asarray(init, dtype=float).copy()
    if pi.shape != (n_models,) or np.any(pi <= 0.0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("init must be an interior simplex point")

    denom = f @ pi
    obj = _objective(denom, pi, alpha)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        resp = (f * pi) / denom[:, None]
        mass = resp.sum(axis=0) + (alpha - 1.0)
        np.maximum(mass, 0.0, out=mass)
        new_pi = mass / mass.sum()
        new_denom = f @ new_pi
        new_obj = _objective(new_denom, new_pi, alpha)
        if new_obj < obj - 1e-9:
            raise RuntimeError(
                f"EM objective decreased at iteration {n_iter}: {obj} -> {new_obj}"
            )
        delta = float(np.max(np.abs(new_pi - pi)))
        pi, denom, obj = new_pi, new_denom, new_obj
        if delta < tol:
            converged = True
            break
    return WeightFit(pi, n_iter, converged, obj)


def truth_bin_masses(F, y) -> np.ndarray:
    """Per-observation probability each component placed on the truth bin.

    Missing forecasts contribute zero mass.
    """
    arr, available = check_forecast_array(F)
    truths = check_truths(y, arr.shape[0])
    out = np.zeros(arr.shape[:2])
    for j, t in enumerate(truths):
        b = bin_index(t)
        for c in np.flatnonzero(available[j]):
            out[j, c] = arr[j, c, b]
    return out


def fit_static_weights(F, y, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER) -> WeightFit:
    """Season-start weights: maximum-likelihood fit on past observations.

    With no past observations at all (a first season) this is the equal
    weighting, returned as a degenerate fit.
    """
    arr = np.asarray(F, dtype=float)
    if arr.shape[0] == 0:
        n_models = arr.shape[1]
        return WeightFit(np.full(n_models, 1.0 / n_models), 0, True, 0.0, degenerate=True)
    return em_pool_weights(truth_bin_masses(F, y), alpha=1.0, tol=tol, max_iter=max_iter)


def fit_adaptive_weights(
    F, y, prior: AdaptivePrior, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER
) -> WeightFit:
    """Within-season weights under the tempering Dirichlet prior.

    Week one always returns equal weights; later weeks run the penalized EM
    on observations scored so far.
    """
    arr = np.asarray(F, dtype=float)
    n_models = arr.shape[1]
    if prior.week_index == 1 or arr.shape[0] == 0:
        return WeightFit(np.full(n_models, 1.0 / n_models), 0, True, 0.0, degenerate=True)
    return em_pool_weights(
        truth_bin_masses(F, y), alpha=prior.concentration, tol=tol, max_iter=max_iter
    )


def _pool_rows(arr: np.ndarray, available: np.ndarray, weights: np.ndarray) -> np.ndarray:
    out = np.full((arr.shape[0], arr.shape[2]), np.nan)
    for j in range(arr.shape[0]):
        idx = np.flatnonzero(available[j])
        if idx.size == 0:
            continue
        w = weights[idx]
        total = w.sum()
        w = w / total if total > 0.0 else np.full(idx.size, 1.0 / idx.size)
        out[j] = w @ arr[j, idx]
    return out


class EqualPool(ParamsMixin):
    """Equal-weight linear pool over whichever components are present."""

    def fit(self, F, y=None):
        arr, _ = check_forecast_array(F)
        self.n_models_ = arr.shape[1]
        self.weights_ = np.full(self.n_models_, 1.0 / self.n_models_)
        return self

    def predict(self, F) -> np.ndarray:
        arr, available = check_forecast_array(F)
        return _pool_rows(arr, available, np.ones(arr.shape[1]))


class StaticPool(ParamsMixin):
    """Linear pool with maximum-likelihood weights fit once on past data."""

    def __init__(self, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, F, y):
        result = fit_static_weights(F, y, tol=self.tol, max_iter=self.max_iter)
        self.weights_ = result.weights
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged
        self.degenerate_ = result.degenerate
        self.n_models_ = result.weights.shape[0]
        return self

    def predict(self, F) -> np.ndarray:
        arr, available = check_forecast_array(F)
        if arr.shape[1] != self.n_models_:
            raise ValueError(f"fitted for {self.n_models_} models, got {arr.shape[1]}")
        return _pool_rows(arr, available, self.weights_)


class AdaptivePool(StaticPool):
    """Linear pool with Dirichlet-penalized weights, refit as weeks accrue."""

    def __init__(
        self, concentration: float = 1.0, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER
    ):
        super().__init__(tol=tol, max_iter=max_iter)
        self.concentration = concentration

    def fit(self, F, y):
        arr = np.asarray(F, dtype=float)
        if arr.shape[0] == 0:
            n_models = arr.shape[1]
            result = WeightFit(np.full(n_models, 1.0 / n_models), 0, True, 0.0, True)
        else:
            result = em_pool_weights(
                truth_bin_masses(F, y),
                alpha=self.concentration,
                tol=self.tol,
                max_iter=self.max_iter,
            )
        self.weights_ = result.weights
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged
        self.degenerate_ = result.degenerate
        self.n_models_ = result.weights.shape[0]
        return self
