"""Synthetic benchmark instances: a built-in surface cloud, randomized rigid
copies, point removal, and uniform outlier injection with correspondence
bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import PointCloud, RigidTransform, apply_transform
from .errors import BadSpec
from .optimizer import AlignConfig


def generate_surface_cloud(n: int = 5045, seed: int = 0) -> PointCloud:
    """Deterministic asymmetric test surface: a bumpy hemisphere shell plus a
    cubic side patch. The bumps and the patch kill every rotational symmetry,
    and the patch provides genuine cubic curvature for signature tests."""
    if n < 20:
        raise BadSpec(f"generator needs n >= 20, got {n}")
    rng = np.random.default_rng(seed)
    n_dome = (2 * n) // 3
    n_patch = n - n_dome
    # hemisphere with an angular bump pattern (asymmetric radius modulation)
    phi = rng.uniform(0.0, 2.0 * np.pi, n_dome)
    # uniform-on-sphere z, restricted to the upper half
    cz = rng.uniform(0.0, 1.0, n_dome)
    sz = np.sqrt(1.0 - cz ** 2)
    r = 1.0 + 0.12 * np.sin(3.0 * phi) * cz + 0.08 * np.cos(phi + 1.0) * sz
    dome = np.stack([r * sz * np.cos(phi), r * sz * np.sin(phi), r * cz], axis=1)
    # cubic patch hanging off the +x side
    px = rng.uniform(-0.6, 0.6, n_patch)
    py = rng.uniform(-0.6, 0.6, n_patch)
    pz = 0.5 * px ** 3 - 0.35 * py ** 3 + 0.2 * px * py
    patch = np.stack([1.1 + 0.4 * px, py, pz], axis=1)
    return PointCloud.from_points(np.vstack([dome, patch]))


@dataclass(frozen=True)
class ScenarioSpec:
    """One benchmark cell: how to build and perturb an instance."""

    name: str = "noise"
    param: float = 0.0  # the swept value, echoed into the CSV
    base_cloud: Optional[PointCloud] = None  # built-in generator when None
    base_n: int = 5045
    n_copies: int = 3
    max_rotation_deg: float = 24.0
    noise_fraction: float = 0.0
    removal_fraction: float = 0.0
    repetitions: int = 10
    seed: int = 0
    config: AlignConfig = field(default_factory=AlignConfig)

    def __post_init__(self):
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise BadSpec(f"noise_fraction {self.noise_fraction} outside [0, 1]")
        if not 0.0 <= self.removal_fraction <= 0.5:
            raise BadSpec(f"removal_fraction {self.removal_fraction} outside [0, 0.5]")
        if self.repetitions < 1:
            raise BadSpec("repetitions must be >= 1")
        if self.n_copies < 2:
            raise BadSpec("need at least 2 copies")
        if self.max_rotation_deg < 0:
            raise BadSpec("max_rotation_deg must be non-negative")


@dataclass(frozen=True)
class Instance:
    """A realized scenario: perturbed copies plus ground truth."""

    clouds: Tuple[PointCloud, ...]
    truth: Tuple[RigidTransform, ...]  # transforms that re-align each copy
    orig_index: Tuple[np.ndarray, ...]  # per copy: original index, -1 = outlier

    def common_indices(self) -> List[np.ndarray]:
        """Per-copy row indices of originals surviving in EVERY copy, ordered
        by original index; rows correspond across copies."""
        surviving = None
        for oi in self.orig_index:
            s = set(oi[oi >= 0].tolist())
            surviving = s if surviving is None else (surviving & s)
        common = np.array(sorted(surviving), dtype=np.int64)
        rows = []
        for oi in self.orig_index:
            lookup = {int(o): r for r, o in enumerate(oi) if o >= 0}
            rows.append(np.array([lookup[int(o)] for o in common], dtype=np.int64))
        return rows


def _random_rigid(rng: np.random.Generator, max_rotation_deg: float,
                  translation_scale: float) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.radians(max_rotation_deg))
    t = rng.uniform(-translation_scale, translation_scale, 3)
    return RigidTransform(angle * axis, t)


def make_instance(spec: ScenarioSpec) -> Instance:
    """Build one randomized instance of the scenario.

    Each copy is the base cloud under its own rigid motion (rotation angle
    uniform in [0, max], translation uniform within 0.2 x diameter), then
    loses floor(removal * N) random points and gains floor(noise * N) uniform
    unit-mass outliers inside its bounding sphere.
    """
    base = spec.base_cloud
    if base is None:
        base = generate_surface_cloud(spec.base_n, seed=spec.seed)
    if base.dim != 3:
        raise BadSpec("synthetic scenarios are defined for 3D clouds")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xB19]))
    tscale = 0.2 * base.diameter()
    n = base.n
    clouds: List[PointCloud] = []
    truths: List[RigidTransform] = []
    indices: List[np.ndarray] = []
    n_remove = int(np.floor(spec.removal_fraction * n))
    n_noise = int(np.floor(spec.noise_fraction * n))
    for _ in range(spec.n_copies):
        motion = _random_rigid(rng, spec.max_rotation_deg, tscale)
        pts = apply_transform(motion, base.points)
        keep = np.sort(rng.permutation(n)[:n - n_remove])
        pts = pts[keep]
        oi = keep.astype(np.int64)
        if n_noise > 0:
            c = pts.mean(axis=0)
            radius = float(np.sqrt(((pts - c) ** 2).sum(axis=1).max()))
            # uniform inside the copy's bounding sphere
            dirs = rng.normal(size=(n_noise, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            rad = radius * rng.uniform(0.0, 1.0, n_noise) ** (1.0 / 3.0)
            pts = np.vstack([pts, c + dirs * rad[:, None]])
            oi = np.concatenate([oi, np.full(n_noise, -1, np.int64)])
        clouds.append(PointCloud.from_points(pts))
        truths.append(motion.inverse())
        indices.append(oi)
    return Instance(tuple(clouds), tuple(truths), tuple(indices))
