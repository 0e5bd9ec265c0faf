"""Structured run reports with deterministic serialization.

Reports are plain data: a pipeline name, input digest, parameters, a
list of residual entries (each naming the claim it checks), and a
verdict.  Serialization sorts keys and excludes wall-clock timing from
the content hash, so identical inputs give byte-identical files; timing
is only written when explicitly supplied.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["PipelineReport", "digest_arrays"]

VERDICTS = ("PASS", "FAIL", "FLAT", "NOT-FLAT", "INCONCLUSIVE")


def _canonical(obj):
    """Round-trip floats through repr so the JSON form is unambiguous."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if obj is None or isinstance(obj, (str, bool)):
        return obj
    raise TypeError(f"cannot serialize {type(obj)!r} into a report")


def digest_arrays(*parts):
    """Stable hex digest of arrays, scalars and strings."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, str):
            h.update(p.encode("utf-8"))
        elif isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        else:
            h.update(repr(p).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


@dataclass
class PipelineReport:
    pipeline: str
    inputs_digest: str = ""
    params: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)
    verdict: str = "PASS"
    timing: float | None = None
    notes: list = field(default_factory=list)

    def add_residual(self, name, value, checks, tolerance=None, passed=None):
        """Record one named residual and the claim it checks."""
        entry = {"name": str(name), "value": _canonical(value), "checks": str(checks)}
        if tolerance is not None:
            entry["tolerance"] = float(tolerance)
            if passed is None and np.isscalar(value):
                passed = bool(abs(float(value)) <= float(tolerance))
        if passed is not None:
            entry["passed"] = bool(passed)
        self.residuals.append(entry)
        return entry

    def residual(self, name):
        """Entry recorded under ``name`` (most recent wins)."""
        for r in reversed(self.residuals):
            if r["name"] == name:
                return r
        raise KeyError(name)

    def note(self, text):
        self.notes.append(str(text))

    def set_verdict(self, verdict):
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {verdict!r}")
        self.verdict = verdict

    def failed_entries(self):
        return [r for r in self.residuals if r.get("passed") is False]

    def payload(self):
        body = {
            "pipeline": self.pipeline,
            "inputs_digest": self.inputs_digest,
            "params": _canonical(self.params),
            "residuals": _canonical(self.residuals),
            "verdict": self.verdict,
            "notes": list(self.notes),
        }
        body["content_hash"] = hashlib.sha256(
            json.dumps(body, sort_keys=True).encode("utf-8")
        ).hexdigest()
        if self.timing is not None:
            body["timing"] = float(self.timing)
        return body

    def to_json(self):
        return json.dumps(self.payload(), sort_keys=True, indent=2) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
