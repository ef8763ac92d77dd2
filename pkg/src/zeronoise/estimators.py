"""scikit-learn style wrappers around the functional API.

Only operations with a natural fit/predict reading are wrapped; everything
else stays a plain function.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dynamics import classify_equilibrium, find_equilibria
from .integrate import SimParams
from .measures import Grid, occupation_estimate


class OccupationMeasureEstimator(BaseEstimator):
    """Fit an occupation measure from initial states.

    ``fit(X)`` treats each row of ``X`` as the start of one path when
    ``X`` has ``n_paths`` rows, otherwise the first row starts every path.
    """

    def __init__(self, model=None, epsilon=0.1, dt=1e-3, t_final=100.0, burn_in=10.0,
                 n_paths=8, master_seed=0, grid=None, reservoir_size=4096, threads=None):
        self.model = model
        self.epsilon = epsilon
        self.dt = dt
        self.t_final = t_final
        self.burn_in = burn_in
        self.n_paths = n_paths
        self.master_seed = master_seed
        self.grid = grid
        self.reservoir_size = reservoir_size
        self.threads = threads

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=1)
        if X.shape[1] != self.model.m:
            raise ValueError(f"X has {X.shape[1]} features, the model has {self.model.m}")
        x0 = X if X.shape[0] == self.n_paths else X[0]
        params = SimParams(dt=self.dt, t_final=self.t_final, burn_in=self.burn_in,
                           epsilon=self.epsilon)
        grid = self.grid
        if grid is not None and not isinstance(grid, Grid):
            grid = Grid(*grid)
        self.measure_ = occupation_estimate(self.model, x0, params, self.master_seed, self.n_paths,
                                            grid=grid, reservoir_size=self.reservoir_size,
                                            threads=self.threads)
        self.grid_ = self.measure_.grid
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Histogram density at each row (0 outside the grid)."""
        check_is_fitted(self, "measure_")
        X = check_array(X)
        flat, inside = self.grid_.cell_index(X)
        out = np.zeros(X.shape[0])
        out[inside] = self.measure_.masses[flat] / np.prod(self.grid_.widths)
        return out


class EquilibriumFinder(BaseEstimator):
    """Newton search from seed rows; ``predict`` returns the nearest equilibrium."""

    def __init__(self, model=None, newton_tol=1e-12, max_iter=60):
        self.model = model
        self.newton_tol = newton_tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X)
        roots = find_equilibria(self.model, X, self.newton_tol, self.max_iter)
        self.equilibria_ = np.array(roots).reshape(-1, self.model.m)
        self.classifications_ = [classify_equilibrium(self.model, x) for x in roots]
        self.n_failed_ = roots.n_failed
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "equilibria_")
        X = check_array(X)
        if not len(self.equilibria_):
            raise ValueError("no equilibria were found during fit")
        d = np.linalg.norm(X[:, None, :] - self.equilibria_[None], axis=-1)
        return np.argmin(d, axis=1)
