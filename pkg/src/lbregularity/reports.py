"""Check reports and their JSON/CSV serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class CheckReport:
    """Outcome of one numerical check.

    ``violations`` counts failures of hypothesis-guarded inequalities;
    ``empirical_sup`` records a measured constant; ``stability_ratio`` is
    sup(2n samples) / sup(n samples) - 1 when the check measures it.
    """

    check_name: str
    params: dict = field(default_factory=dict)
    samples: int = 0
    violations: int | None = None
    empirical_sup: float | None = None
    stability_ratio: float | None = None
    passed: bool = True
    seed: int | None = None
    paper_ref: str = ""
    details: dict = field(default_factory=dict)

    @property
    def sup_or_violations(self):
        return self.violations if self.violations is not None else self.empirical_sup

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sup_or_violations"] = self.sup_or_violations
        d["proposition"] = self.paper_ref
        return _clean(d)

    def to_json(self, path: Path | str | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
