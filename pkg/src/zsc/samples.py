"""Line-delimited training samples (``sample_v1``)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError
from .plan import PhysicalPlan

SAMPLE_FORMAT = "sample_v1"


@dataclass
class Sample:
    database: str
    query_id: int
    plan: PhysicalPlan  # annotated with estimated and actual cardinalities
    cost_units: float
    wall_time_ms: float | None = None

    @property
    def analytic_cost(self) -> float:
        return sum(n.analytic_cost or 0.0 for n in self.plan.ops())

    def to_dict(self) -> dict:
        d = {"format": SAMPLE_FORMAT, "database": self.database, "query_id": self.query_id,
             "plan": self.plan.to_dict(), "cost_units": self.cost_units}
        if self.wall_time_ms is not None:
            d["wall_time_ms"] = self.wall_time_ms
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        if d.get("format") != SAMPLE_FORMAT:
            raise ConfigurationError(f"expected {SAMPLE_FORMAT} record, got {d.get('format')!r}")
        return cls(d["database"], int(d["query_id"]), PhysicalPlan.from_dict(d["plan"]),
                   float(d["cost_units"]), d.get("wall_time_ms"))


def save_samples(samples, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
    return path


def load_samples(path) -> list[Sample]:
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Sample.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigurationError(f"{path}:{lineno}: bad sample record: {exc}") from None
    return out
