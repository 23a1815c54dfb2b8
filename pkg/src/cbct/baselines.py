"""SIRT with a nonnegativity constraint, the iterative reference method.

Classical simultaneous iterative reconstruction:

    x <- max(0, x + C * W^T( R * (y - W x) ))

with R and C the inverse row/column sums of the system matrix, estimated by
projecting a unit volume and backprojecting unit data with the same operator
pair used in the iteration.  Exactly one forward and one backprojection per
iteration (the recorded residual reuses the iteration's forward pass).
"""

from __future__ import annotations

import numpy as np

from .geometry import ConeBeamGeometry, ProjectionData, Volume
from .projector import _backproject_arrays, _forward_arrays, back_project, forward_project

__all__ = ["sirt_plus"]

_WEIGHT_EPS = 1e-12


def sirt_plus(
    projections: ProjectionData,
    geometry: ConeBeamGeometry,
    n_iter: int,
    record_every: int = 1,
) -> tuple[Volume, list]:
    """Run ``n_iter`` SIRT iterations with a nonnegativity clamp.

    Starts from a zero volume.  Rows/columns with (near-)zero sums get zero
    weight; the one-time weight precomputation does not enter the projector
    call counters (the iteration loop costs exactly one forward and one
    backprojection per iteration).  Returns the final volume and a residual
    history: entries ``(k, ||y - W x_k||)`` where ``x_k`` is the iterate
    after k updates, for every ``record_every``-th k starting at 0.  The
    residual of the final iterate is not recorded (it would cost an extra
    forward projection).
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")

    n = geometry.n_voxels
    shape_proj = (geometry.n_angles, geometry.n_detector, geometry.n_detector)
    row_sums = _forward_arrays(np.ones((n, n, n)), geometry)
    col_sums = _backproject_arrays(np.ones(shape_proj), geometry, fdk_weighting=False)
    inv_rows = np.where(row_sums > _WEIGHT_EPS, 1.0 / np.maximum(row_sums, _WEIGHT_EPS), 0.0)
    inv_cols = np.where(col_sums > _WEIGHT_EPS, 1.0 / np.maximum(col_sums, _WEIGHT_EPS), 0.0)

    x = np.zeros((n, n, n), dtype=np.float64)
    history = []
    for it in range(n_iter):
        forward = forward_project(Volume(x, geometry), geometry).data
        residual = projections.data - forward
        if it % record_every == 0:
            history.append((it, float(np.linalg.norm(residual))))
        correction = back_project(ProjectionData(inv_rows * residual, geometry), geometry).data
        x += inv_cols * correction
        np.maximum(x, 0.0, out=x)
    return Volume(x, geometry), history
