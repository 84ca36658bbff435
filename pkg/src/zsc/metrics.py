"""Q-error and its summary quantiles."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


def qerror(predicted: float, actual: float) -> float:
    """max(p/a, a/p); both inputs must be positive."""
    if not (predicted > 0 and actual > 0):
        raise ValueError(f"q-error needs positive inputs, got ({predicted}, {actual})")
    return max(predicted / actual, actual / predicted)


def cost_qerrors(predicted_cost, actual_cost) -> np.ndarray:
    """Vectorized q-error over ``1 + cost`` with negative predictions clipped to 0."""
    p = 1.0 + np.maximum(np.asarray(predicted_cost, dtype=float), 0.0)
    a = 1.0 + np.asarray(actual_cost, dtype=float)
    if np.any(a <= 0):
        raise ValueError("actual costs must be > -1")
    return np.maximum(p / a, a / p)


@dataclass
class Metrics:
    median: float
    p95: float
    max: float
    count: int

    @classmethod
    def from_qerrors(cls, q) -> "Metrics":
        q = np.asarray(q, dtype=float)
        if q.size == 0:
            raise ValueError("no q-errors to summarize")
        # type-7 (linear interpolation) quantiles
        med, p95 = np.quantile(q, [0.5, 0.95])
        return cls(float(med), float(p95), float(q.max()), int(q.size))

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list[str]:
        return [f"{self.median:.2f}", f"{self.p95:.2f}", f"{self.max:.2f}"]


def evaluate(model, graphs, costs) -> Metrics:
    """Metrics of ``model.predict`` (cost units) against executed costs."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot evaluate on an empty sample set")
    return Metrics.from_qerrors(cost_qerrors(model.predict(graphs), costs))
