"""Evaluation metrics for groupwise alignment results."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .core import (PointCloud, RigidTransform, apply_transform,
                   matrix_to_axis_angle)
from .errors import CardinalityMismatch, EmptyInput


def e3d(clouds: Sequence[PointCloud], transforms: Sequence[RigidTransform],
        indices: Optional[Sequence[np.ndarray]] = None) -> float:
    """Pairwise-averaged relative alignment error.

    Average over unordered cloud pairs (i < j) of
    ||A_i - A_j||_F / ||A_i||_F, where A_k is cloud k's transformed coordinate
    matrix restricted to corresponding rows. Row correspondence is by index;
    ``indices`` optionally selects each cloud's rows (same length everywhere),
    used to restrict the metric to surviving original points.
    """
    if len(clouds) < 2:
        raise EmptyInput("need at least two clouds")
    if len(clouds) != len(transforms):
        raise ValueError("one transform per cloud required")
    mats = []
    for k, (c, T) in enumerate(zip(clouds, transforms)):
        pts = c.points if indices is None else c.points[np.asarray(indices[k])]
        mats.append(apply_transform(T, pts))
    n0 = mats[0].shape[0]
    if any(m.shape[0] != n0 for m in mats):
        raise CardinalityMismatch("clouds must expose equal point counts")
    if n0 == 0:
        raise EmptyInput("no corresponding points")
    total = 0.0
    pairs = 0
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            total += np.linalg.norm(mats[i] - mats[j]) / np.linalg.norm(mats[i])
            pairs += 1
    return total / pairs


def transform_error(estimated: RigidTransform, truth: RigidTransform
                    ) -> Tuple[float, float]:
    """(geodesic rotation error in degrees, translation error in data units)."""
    Re, Rt = estimated.matrix(), truth.matrix()
    if estimated.dim != truth.dim:
        raise ValueError("transform dimensions differ")
    if estimated.dim == 2:
        rel = Re @ Rt.T
        ang = abs(float(np.arctan2(rel[1, 0], rel[0, 0])))
    else:
        ang = float(np.linalg.norm(matrix_to_axis_angle(Re @ Rt.T)))
    terr = float(np.linalg.norm(estimated.translation - truth.translation))
    return float(np.degrees(ang)), terr
