"""Estimator front end following the scikit-learn fit/predict protocol.

Design matrices put the two spatial coordinates first: a row is
``[coord_x, coord_y, x1, ..., xp]``.  Fitted attributes carry trailing
underscores as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .pipeline import ForestConfig, forest_fit, predict, psccm_fit


def _split_design(X):
    return X[:, :2], X[:, 2:]


class _TreeFusionRegressor(RegressorMixin, BaseEstimator):
    """Shared plumbing: parameter handling and design-matrix splitting."""

    def __init__(self, n_trees=10, lambda_grid=None, n_lambda=30,
                 lambda_min_ratio=1e-4, rho_grid=None, n_rho=10, rho_min=1e-6,
                 rho_max=1e2, degree=5, smoothness=1, mesh_resolution=4,
                 mesh=None, domain=None, weight_floor=1e-8, tol=1e-7,
                 max_iter=10000, trial_tree_bias=4.0, trial_rho=None,
                 trial_refit=True, trial_aggregate="median", random_state=0):
        self.n_trees = n_trees
        self.lambda_grid = lambda_grid
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.rho_grid = rho_grid
        self.n_rho = n_rho
        self.rho_min = rho_min
        self.rho_max = rho_max
        self.degree = degree
        self.smoothness = smoothness
        self.mesh_resolution = mesh_resolution
        self.mesh = mesh
        self.domain = domain
        self.weight_floor = weight_floor
        self.tol = tol
        self.max_iter = max_iter
        self.trial_tree_bias = trial_tree_bias
        self.trial_rho = trial_rho
        self.trial_refit = trial_refit
        self.trial_aggregate = trial_aggregate
        self.random_state = random_state

    def _config(self) -> ForestConfig:
        return ForestConfig(
            n_trees=self.n_trees,
            seed=self.random_state,
            lambda_grid=self.lambda_grid,
            n_lambda=self.n_lambda,
            lambda_min_ratio=self.lambda_min_ratio,
            rho_grid=self.rho_grid,
            n_rho=self.n_rho,
            rho_min=self.rho_min,
            rho_max=self.rho_max,
            degree=self.degree,
            smoothness=self.smoothness,
            mesh_resolution=self.mesh_resolution,
            mesh=self.mesh,
            domain=self.domain,
            weight_floor=self.weight_floor,
            tol=self.tol,
            max_iter=self.max_iter,
            trial_tree_bias=self.trial_tree_bias,
            trial_rho=self.trial_rho,
            trial_refit=self.trial_refit,
            trial_aggregate=self.trial_aggregate,
        )

    def _fit(self, X, y, fitter):
        X, y = check_X_y(X, y, ensure_min_features=3, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        locations, covariates = _split_design(X)
        self.result_ = fitter((locations, covariates, y), self._config())
        self.beta_ = self.result_.beta
        self.g_ = self.result_.g
        self.clusters_ = self.result_.clusters
        self.lambda_ = self.result_.lambda_
        self.rho_ = self.result_.rho_
        self.n_iter_ = self.result_.n_iter
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        locations, covariates = _split_design(X)
        return predict(self.result_, locations, covariates)


class ShaplmRegressor(_TreeFusionRegressor):
    """Additive partial linear model with a smooth spatial intercept and
    spatially clustered covariate coefficients.

    Parameters mirror the pipeline configuration; ``random_state`` seeds
    the random spanning trees.  After ``fit``, ``beta_`` holds per-site
    coefficients, ``g_`` the smooth surface at the training sites,
    ``clusters_`` the per-covariate partition labels, and ``lambda_`` /
    ``rho_`` the selected penalties.
    """

    def fit(self, X, y):
        return self._fit(X, y, forest_fit)


class PsccmRegressor(_TreeFusionRegressor):
    """Baseline that fuses the intercept like any other coefficient instead
    of modelling it with a smooth surface.

    Exposes ``intercept_clusters_`` alongside the covariate clusters;
    ``rho_`` is None since there is no smoothness penalty.
    """

    def fit(self, X, y):
        self._fit(X, y, psccm_fit)
        self.intercept_clusters_ = self.result_.intercept_clusters
        return self
