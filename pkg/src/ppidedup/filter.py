"""Biophysical filtering of candidate interfaces: method, resolution, BSA."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .interface import Interface
from .sasa import PROBE_RADIUS, buried_surface_area
from .structure import Structure

__all__ = ["FilterCriteria", "FilterReport", "filter_interfaces", "method_allowed"]

log = logging.getLogger(__name__)

CRITERIA = ("method", "resolution", "bsa")


@dataclass(frozen=True)
class FilterCriteria:
    """Retention thresholds.

    ``allowed_methods=None`` accepts any method and ``max_resolution=None``
    disables the resolution check; otherwise a missing resolution fails.
    """

    allowed_methods: frozenset[str] | None = frozenset({"x-ray diffraction", "electron microscopy"})
    max_resolution: float | None = 3.5
    min_bsa: float = 500.0

    def __post_init__(self):
        if self.max_resolution is not None and not self.max_resolution > 0:
            raise ValueError("max_resolution must be positive")
        if not self.min_bsa >= 0:
            raise ValueError("min_bsa must be non-negative")
        if self.allowed_methods is not None:
            object.__setattr__(self, "allowed_methods",
                               frozenset(m.strip().lower() for m in self.allowed_methods))

    @classmethod
    def permissive(cls) -> "FilterCriteria":
        return cls(allowed_methods=None, max_resolution=None, min_bsa=0.0)


@dataclass
class FilterReport:
    total: int = 0
    passed: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CRITERIA, 0))
    retained: int = 0
    records: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "retained": self.retained,
            "passed": dict(self.passed),
            "fraction_passed": {
                k: (v / self.total if self.total else None) for k, v in self.passed.items()
            },
            "interfaces": self.records,
        }


def method_allowed(method: str | None, allowed: frozenset[str] | None) -> bool:
    """Multi-method entries ("X-RAY DIFFRACTION; NEUTRON DIFFRACTION") pass
    when any listed method is allowed."""
    if allowed is None:
        return True
    if not method:
        return False
    parts = [p.strip().lower() for p in method.replace(",", ";").split(";")]
    return any(p in allowed for p in parts if p)


def filter_interfaces(interfaces: Sequence[Interface], structures: Mapping[str, Structure],
                      criteria: FilterCriteria, probe: float = PROBE_RADIUS,
                      n_points: int = 960) -> tuple[list[Interface], FilterReport]:
    """Keep interfaces whose source entry and geometry pass every criterion.

    Every criterion is evaluated for every interface so the report tallies
    are independent of each other.
    """
    report = FilterReport(total=len(interfaces))
    retained = []
    sasa_cache: dict[str, dict[str, float]] = {}
    for iface in interfaces:
        structure = structures[iface.source]
        reasons = []

        if not method_allowed(structure.method, criteria.allowed_methods):
            reasons.append("method")
            if structure.method is None:
                log.info("%s: no experimental method recorded", iface.source)

        res = structure.resolution
        if criteria.max_resolution is not None:
            if res is None or not math.isfinite(res) or res > criteria.max_resolution:
                reasons.append("resolution")
                if res is None:
                    log.info("%s: no resolution recorded", iface.source)

        cache = sasa_cache.setdefault(iface.source, {})
        bsa = buried_surface_area(structure, list(iface.chains), probe, n_points, single=cache)
        if bsa < criteria.min_bsa:
            reasons.append("bsa")

        for c in CRITERIA:
            if c not in reasons:
                report.passed[c] += 1
        ok = not reasons
        if ok:
            retained.append(iface)
            report.retained += 1
        report.records.append({
            "id": iface.id,
            "passed": ok,
            "reasons": reasons,
            "method": structure.method,
            "resolution": res,
            "bsa": bsa,
        })
    return retained, report
