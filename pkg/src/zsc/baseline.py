"""Scaled optimizer cost: a linear map from analytic plan cost to executed cost."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

SCALED_COST_SIZES = (100, 500, 1000, 5000, 50000)


class ScaledCostBaseline(BaseEstimator, RegressorMixin):
    """Least-squares ``cost_units ~ coef_ * analytic_cost + intercept_``.

    A constant analytic cost makes the slope unidentifiable; the fit then falls
    back to the intercept-only model and sets ``degenerate_``.
    """

    def fit(self, X, y):
        X, y = check_X_y(np.asarray(X, dtype=float).reshape(-1, 1), y, y_numeric=True)
        if len(y) < 2:
            raise ValueError("the scaled-cost baseline needs at least two samples")
        x = X[:, 0]
        self.degenerate_ = bool(np.ptp(x) == 0)
        if self.degenerate_:
            self.coef_, self.intercept_ = 0.0, float(np.mean(y))
        else:
            A = np.column_stack([x, np.ones_like(x)])
            (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
            self.coef_, self.intercept_ = float(a), float(b)
        self.n_samples_ = len(y)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        x = check_array(np.asarray(X, dtype=float).reshape(-1, 1))[:, 0]
        return np.maximum(self.coef_ * x + self.intercept_, 0.0)


def fit_scaled_cost_baseline(analytic_costs, cost_units, n: int) -> ScaledCostBaseline:
    """Fit on the first ``n`` target-database samples."""
    if n < 2:
        raise ValueError("n must be >= 2")
    analytic_costs = np.asarray(analytic_costs, dtype=float)
    if len(analytic_costs) < n:
        raise ValueError(f"only {len(analytic_costs)} samples available, {n} requested")
    return ScaledCostBaseline().fit(analytic_costs[:n], np.asarray(cost_units, dtype=float)[:n])
