"""Mass initialization policies: uniform, prior-match boosting, intensity mapping.

All policies return new clouds; coordinates and cardinalities never change.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import PointCloud
from .errors import IndexOutOfRange, MissingIntensities, NonPositive, ParseError


@dataclass(frozen=True)
class PriorMatchSet:
    """Point tuples declared to correspond across clouds, with a confidence weight.

    ``matches`` holds (cloud_index, point_index) pairs; one pair per
    participating cloud. Weight multiplies the base mass of every listed point.
    """

    matches: Tuple[Tuple[int, int], ...]
    weight: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "matches",
                           tuple((int(c), int(p)) for c, p in self.matches))
        if self.weight < 1:
            raise ValueError("prior weight must be >= 1")


def set_uniform_masses(cloud: PointCloud, value: float = 1.0) -> PointCloud:
    if value <= 0:
        raise NonPositive(f"mass value must be positive, got {value}")
    return cloud.with_masses(np.full(cloud.n, float(value)))


def apply_prior_matches(clouds: Sequence[PointCloud],
                        priors: Sequence[PriorMatchSet]) -> List[PointCloud]:
    """Multiply the masses of points named by prior matches by their weights."""
    factors = [np.ones(c.n) for c in clouds]
    for prior in priors:
        for ci, pi in prior.matches:
            if not 0 <= ci < len(clouds):
                raise IndexOutOfRange(f"cloud index {ci} out of range")
            if not 0 <= pi < clouds[ci].n:
                raise IndexOutOfRange(f"point index {pi} out of range for cloud {ci}")
            factors[ci][pi] *= prior.weight
    return [c.with_masses(c.masses * f) for c, f in zip(clouds, factors)]


def masses_from_intensity(cloud: PointCloud, lo: float, hi: float) -> PointCloud:
    """Linear map intensity -> mass = lo + (hi - lo) * intensity, clamped."""
    if cloud.intensities is None:
        raise MissingIntensities("cloud has no intensities")
    if lo <= 0 or hi <= 0:
        raise NonPositive("mass bounds must be positive")
    lo, hi = float(lo), float(hi)
    masses = lo + (hi - lo) * cloud.intensities
    lo_b, hi_b = min(lo, hi), max(lo, hi)
    return cloud.with_masses(np.clip(masses, lo_b, hi_b))


def load_priors(path) -> List[PriorMatchSet]:
    """Parse a priors file: lines of `cloud_index point_index group_id weight`;
    rows sharing group_id form one match tuple."""
    groups = {}
    weights = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError("expected 4 fields: cloud point group weight",
                                 path=str(path), line=ln)
            try:
                ci, pi, gid = int(fields[0]), int(fields[1]), fields[2]
                w = float(fields[3])
            except ValueError as e:
                raise ParseError(f"bad field: {e}", path=str(path), line=ln)
            groups.setdefault(gid, []).append((ci, pi))
            prev = weights.setdefault(gid, w)
            if prev != w:
                raise ParseError(f"group {gid} has conflicting weights",
                                 path=str(path), line=ln)
    return [PriorMatchSet(tuple(m), weights[g]) for g, m in groups.items()]
