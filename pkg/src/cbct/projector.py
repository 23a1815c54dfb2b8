"""Discretized cone-beam transform and its voxel-driven backprojector.

The forward operator samples the volume along each source-to-pixel ray
(trilinear interpolation, step = half a voxel, scaled by step length).  The
backprojector is voxel-driven: each voxel center is projected onto the
detector and the data is gathered with bilinear interpolation.  The pair is
deliberately unmatched (standard for FDK); the residual adjoint mismatch is
bounded by tests.

Both operators carry a per-(voxel, angle) weight ``K / U^2`` where ``U`` is
the source-to-voxel distance along the central ray:

* plain mode (``fdk_weighting=False``): ``K = voxel_size^3 * d^2 / pixel_size^2``,
  the ray-footprint scale that makes the backprojector approximate the true
  transpose of the forward operator (used by SIRT-type iterations);
* FDK mode (``fdk_weighting=True``): ``K = pi * pixel_size * d * R / n_angles``,
  the Feldkamp distance weight with the full-circle angular normalization and
  the detector-pitch convolution factor folded in, so that the FDK pipeline
  returns attenuation units.

Out-of-detector projections of voxels contribute zero.  Both kernels are
data-parallel with disjoint output partitions (rays / voxels) and leave their
inputs untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .geometry import ConeBeamGeometry, GeometryError, ProjectionData, Volume

__all__ = ["forward_project", "back_project", "counters", "ProjectorCounters"]


@dataclass
class ProjectorCounters:
    """Cumulative projector invocation counts, for cost-model reporting."""

    forward_calls: int = 0
    backproject_calls: int = 0

    def reset(self) -> None:
        self.forward_calls = 0
        self.backproject_calls = 0


#: Module-level counters incremented by every operator call.
counters = ProjectorCounters()


@njit(inline="always", cache=True)
def _trilinear(vol, fz, fy, fx):
    # fz/fy/fx are continuous voxel indices; outside the grid reads as zero.
    n = vol.shape[0]
    iz = int(math.floor(fz))
    iy = int(math.floor(fy))
    ix = int(math.floor(fx))
    wz = fz - iz
    wy = fy - iy
    wx = fx - ix
    acc = 0.0
    for dz in range(2):
        z = iz + dz
        if z < 0 or z >= n:
            continue
        cz = wz if dz == 1 else 1.0 - wz
        for dy in range(2):
            y = iy + dy
            if y < 0 or y >= n:
                continue
            cy = wy if dy == 1 else 1.0 - wy
            for dx in range(2):
                x = ix + dx
                if x < 0 or x >= n:
                    continue
                cx = wx if dx == 1 else 1.0 - wx
                acc += cz * cy * cx * vol[z, y, x]
    return acc


@njit(inline="always", cache=True)
def _bilinear(img, fr, fc):
    # fr/fc are continuous pixel indices into a 2-D image; outside reads as zero.
    nr, nc = img.shape
    ir = int(math.floor(fr))
    ic = int(math.floor(fc))
    wr = fr - ir
    wc = fc - ic
    acc = 0.0
    for dr in range(2):
        r = ir + dr
        if r < 0 or r >= nr:
            continue
        cr = wr if dr == 1 else 1.0 - wr
        for dc in range(2):
            c = ic + dc
            if c < 0 or c >= nc:
                continue
            cc = wc if dc == 1 else 1.0 - wc
            acc += cr * cc * img[r, c]
    return acc


@njit(parallel=True, cache=True)
def _forward_kernel(vol, voxel_size, src_r, det_r, cos_t, sin_t, n_det, pixel_size, step, out):
    n = vol.shape[0]
    half = 0.5 * n * voxel_size
    n_angles = cos_t.shape[0]
    inv_vs = 1.0 / voxel_size
    for a in prange(n_angles):
        cb = cos_t[a]
        sb = sin_t[a]
        sx = src_r * cb
        sy = src_r * sb
        dcx = -det_r * cb
        dcy = -det_r * sb
        for r in range(n_det):
            v = (r - (n_det - 1) * 0.5) * pixel_size
            for c in range(n_det):
                u = (c - (n_det - 1) * 0.5) * pixel_size
                # pixel center = detector center + u*e_u + v*e_v
                px = dcx - u * sb
                py = dcy + u * cb
                pz = v
                dx = px - sx
                dy = py - sy
                dz = pz
                length = math.sqrt(dx * dx + dy * dy + dz * dz)
                dx /= length
                dy /= length
                dz /= length
                # clip the ray to the volume cube [-half, half]^3
                t0 = 0.0
                t1 = length
                miss = False
                for axis in range(3):
                    if axis == 0:
                        o = sx
                        d = dx
                    elif axis == 1:
                        o = sy
                        d = dy
                    else:
                        o = 0.0
                        d = dz
                    if d != 0.0:
                        ta = (-half - o) / d
                        tb = (half - o) / d
                        if ta > tb:
                            ta, tb = tb, ta
                        if ta > t0:
                            t0 = ta
                        if tb < t1:
                            t1 = tb
                    elif o < -half or o > half:
                        miss = True
                        break
                if miss or t0 >= t1:
                    out[a, r, c] = 0.0
                    continue
                total = 0.0
                t = t0 + 0.5 * step
                while t < t1:
                    x = sx + t * dx
                    y = sy + t * dy
                    z = t * dz
                    total += _trilinear(
                        vol,
                        (z + half) * inv_vs - 0.5,
                        (y + half) * inv_vs - 0.5,
                        (x + half) * inv_vs - 0.5,
                    )
                    t += step
                out[a, r, c] = total * step


@njit(parallel=True, cache=True)
def _backproject_kernel(proj, n_vox, voxel_size, src_r, sdd, cos_t, sin_t, n_det, pixel_size, weight_const, out):
    half = 0.5 * n_vox * voxel_size
    n_angles = proj.shape[0]
    inv_px = 1.0 / pixel_size
    half_det = (n_det - 1) * 0.5
    for iz in prange(n_vox):
        z = (iz + 0.5) * voxel_size - half
        for iy in range(n_vox):
            y = (iy + 0.5) * voxel_size - half
            for ix in range(n_vox):
                x = (ix + 0.5) * voxel_size - half
                acc = 0.0
                for a in range(n_angles):
                    cb = cos_t[a]
                    sb = sin_t[a]
                    # distance from source to the voxel along the central ray
                    big_u = src_r - (x * cb + y * sb)
                    if big_u <= 1e-12:
                        continue
                    u = sdd * (y * cb - x * sb) / big_u
                    v = sdd * z / big_u
                    val = _bilinear(proj[a], v * inv_px + half_det, u * inv_px + half_det)
                    acc += val * weight_const / (big_u * big_u)
                out[iz, iy, ix] = acc


def _check_consistent(data_geometry: ConeBeamGeometry, geometry: ConeBeamGeometry) -> None:
    if data_geometry != geometry:
        raise GeometryError("input carries a different geometry than the one supplied")


def _forward_arrays(vol_data: np.ndarray, geometry: ConeBeamGeometry) -> np.ndarray:
    """Uncounted forward projection on a raw array (setup/internal use)."""
    out = np.empty(
        (geometry.n_angles, geometry.n_detector, geometry.n_detector), dtype=np.float64
    )
    _forward_kernel(
        np.ascontiguousarray(vol_data, dtype=np.float64),
        geometry.voxel_size,
        geometry.source_radius,
        geometry.detector_radius,
        np.cos(geometry.angles),
        np.sin(geometry.angles),
        geometry.n_detector,
        geometry.pixel_size,
        0.5 * geometry.voxel_size,
        out,
    )
    return out


def _backproject_arrays(
    proj_data: np.ndarray, geometry: ConeBeamGeometry, fdk_weighting: bool
) -> np.ndarray:
    """Uncounted backprojection on a raw array (setup/internal use)."""
    d = geometry.source_to_detector
    if fdk_weighting:
        weight_const = (
            math.pi * geometry.pixel_size * d * geometry.source_radius / geometry.n_angles
        )
    else:
        weight_const = geometry.voxel_size**3 * d**2 / geometry.pixel_size**2
    out = np.empty((geometry.n_voxels,) * 3, dtype=np.float64)
    _backproject_kernel(
        np.ascontiguousarray(proj_data, dtype=np.float64),
        geometry.n_voxels,
        geometry.voxel_size,
        geometry.source_radius,
        d,
        np.cos(geometry.angles),
        np.sin(geometry.angles),
        geometry.n_detector,
        geometry.pixel_size,
        weight_const,
        out,
    )
    return out


def forward_project(volume: Volume, geometry: ConeBeamGeometry) -> ProjectionData:
    """Cone-beam forward projection: line integrals from source to each pixel.

    Linear in the volume.  Sampling step is half a voxel; samples outside the
    volume contribute zero.
    """
    _check_consistent(volume.geometry, geometry)
    counters.forward_calls += 1
    return ProjectionData(_forward_arrays(volume.data, geometry), geometry)


def back_project(
    projections: ProjectionData, geometry: ConeBeamGeometry, fdk_weighting: bool = False
) -> Volume:
    """Voxel-driven backprojection; see the module docstring for the weighting.

    Linear in the projections.  With ``fdk_weighting`` the Feldkamp distance
    weight and full-circle normalization are applied (used by the FDK
    pipeline); without it the result approximates the transpose of
    :func:`forward_project`.
    """
    _check_consistent(projections.geometry, geometry)
    counters.backproject_calls += 1
    return Volume(
        _backproject_arrays(projections.data, geometry, fdk_weighting), geometry
    )
