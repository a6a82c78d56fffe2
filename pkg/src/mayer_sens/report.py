"""Verification reports: residual records with an attributable tolerance each."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"
VERDICTS = (PASS, FAIL, INCONCLUSIVE)


@dataclass
class Node:
    t: float | None
    residual: float
    tolerance: float
    label: str = ""

    @property
    def ok(self) -> bool:
        return bool(self.residual <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "t": _num(self.t),
            "residual": _num(self.residual),
            "tolerance": _num(self.tolerance),
            "label": self.label,
        }


@dataclass
class VerificationReport:
    label: str
    check: str
    nodes: list[Node] = field(default_factory=list)
    verdict: str = PASS
    fitted_constants: dict[str, Any] = field(default_factory=dict)
    premise: str = ""
    notes: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    def add(self, t, residual, tolerance, label=""):
        self.nodes.append(Node(t, float(residual) + 0.0, float(tolerance), label))

    def finalize(self, verdict=None):
        """Set the verdict from the nodes unless one is forced."""
        if verdict is None:
            verdict = PASS if all(n.ok for n in self.nodes) else FAIL
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {verdict!r}")
        self.verdict = verdict
        return self

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    @property
    def failures(self) -> list[Node]:
        return [n for n in self.nodes if not n.ok]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "check": self.check,
            "premise": self.premise,
            "nodes": [n.to_dict() for n in self.nodes],
            "fitted_constants": _clean(self.fitted_constants),
            "verdict": self.verdict,
            "notes": list(self.notes),
            "details": _clean(self.details),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def summary_line(self) -> str:
        worst = max((n.residual / n.tolerance for n in self.nodes if n.tolerance > 0),
                    default=0.0)
        return f"{self.check:<34} {self.verdict:<14} worst residual/tol = {worst:.3g}"


def _num(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int,)):
        return obj
    return _num(obj)


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
