"""Tolerance configuration: library defaults plus optional YAML overrides.

Every quantitative default used by the pipelines lives here so a single
file can override any of them.  The on-disk form is a YAML mapping from
the names below to numbers; unknown names are rejected rather than
silently ignored.
"""

from __future__ import annotations

import yaml

__all__ = ["DEFAULTS", "load_tolerances"]

DEFAULTS = {
    # stabilization
    "mollify_min_slope_smooth": 1.9,
    "mollify_min_slope_kink": 0.9,
    # curvature gates
    "riemann_threshold": 0.0,      # 0 means auto: max(10 h^2, 1e-6)
    "bianchi_rel": 1e-8,
    # flatness
    "pullback_tol": 1e-4,
    # geodesics / distance
    "ivp_rtol": 1e-9,
    "ivp_atol": 1e-11,
    "distance_rel_tol": 1e-10,
    # splitting
    "tol_eik": 5e-3,
    "tol_hess": 5e-3,
    "tol_iso": 1e-2,
    "tol_sum": 1e-3,
    "tau": 1e-3,
    # refinement studies
    "min_slope": 1.5,
}


def load_tolerances(path=None):
    """Defaults merged with a YAML override file, validated by name."""
    merged = dict(DEFAULTS)
    if path is None:
        return merged
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return merged
    if not isinstance(data, dict):
        raise ValueError("tolerance file must be a mapping of name: value")
    for key, value in data.items():
        if key not in DEFAULTS:
            raise ValueError(f"unknown tolerance name {key!r}")
        try:
            merged[key] = float(value)
        except (TypeError, ValueError):
            raise ValueError(
                f"tolerance {key!r} must be a number, got {value!r}"
            ) from None
    return merged
