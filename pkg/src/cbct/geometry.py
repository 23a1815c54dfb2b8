"""Circular cone-beam acquisition geometry and the data containers tied to it.

Conventions used throughout the package:

* World coordinates are in cm, origin at the rotation center.  The rotation
  axis is z.
* At rotation angle ``beta`` the point source sits at
  ``(R cos(beta), R sin(beta), 0)`` with ``R = source_radius``; the flat
  detector is centered at ``(-D cos(beta), -D sin(beta), 0)`` with
  ``D = detector_radius``, perpendicular to the source-center axis.
  Detector axes: ``e_u = (-sin(beta), cos(beta), 0)``, ``e_v = (0, 0, 1)``.
* Volumes are ``(N, N, N)`` arrays in C order indexed ``[z, y, x]``; voxel
  ``(iz, iy, ix)`` is centered at ``((i + 0.5) * voxel_size - L/2)`` per axis
  with ``L = n_voxels * voxel_size``.
* Projections are ``(n_angles, n_detector, n_detector)`` arrays indexed
  ``[angle, row, col]`` where row moves along v (= z) and col along u.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "ConeBeamGeometry",
    "Volume",
    "ProjectionData",
    "make_geometry",
    "cone_angle",
    "GeometryError",
]


class GeometryError(ValueError):
    """Raised for invalid or inconsistent acquisition geometry."""


@dataclass(frozen=True)
class ConeBeamGeometry:
    """Circular cone-beam scan description. Immutable; safe to share.

    Attributes
    ----------
    n_voxels : int
        Volume is n_voxels^3.
    voxel_size : float
        Isotropic voxel pitch in cm.
    n_detector : int
        Detector is n_detector x n_detector pixels.
    pixel_size : float
        Detector pixel pitch in cm.
    n_angles : int
        Number of projection angles.
    source_radius : float
        Source to rotation-center distance in cm.
    detector_radius : float
        Rotation-center to detector distance in cm.
    angles : ndarray
        Rotation angles in radians, strictly increasing, equispaced on
        [0, 2*pi) with the endpoint excluded.
    """

    n_voxels: int
    voxel_size: float
    n_detector: int
    pixel_size: float
    n_angles: int
    source_radius: float
    detector_radius: float
    angles: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_voxels < 4:
            raise GeometryError(f"n_voxels must be >= 4, got {self.n_voxels}")
        if self.n_angles < 1:
            raise GeometryError(f"n_angles must be >= 1, got {self.n_angles}")
        for name in ("voxel_size", "pixel_size", "source_radius", "detector_radius"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be strictly positive")
        angles = np.asarray(self.angles, dtype=np.float64)
        object.__setattr__(self, "angles", angles)
        if angles.shape != (self.n_angles,):
            raise GeometryError("angles length does not match n_angles")
        if self.n_angles > 1 and not np.all(np.diff(angles) > 0):
            raise GeometryError("angles must be strictly increasing")
        if angles[0] < 0 or angles[-1] >= 2 * math.pi:
            raise GeometryError("angles must lie in [0, 2*pi)")
        expected = angles[0] + np.arange(self.n_angles) * (2 * math.pi / self.n_angles)
        if not np.allclose(angles, expected, rtol=0, atol=1e-9):
            raise GeometryError("angles must be equispaced over one full circle")

    @property
    def phys_size(self) -> float:
        """Side length of the reconstruction cube in cm."""
        return self.n_voxels * self.voxel_size

    @property
    def source_to_detector(self) -> float:
        """Source-to-detector-plane distance in cm."""
        return self.source_radius + self.detector_radius

    @property
    def magnification(self) -> float:
        """Geometric magnification of the isocenter plane onto the detector."""
        return self.source_to_detector / self.source_radius

    def detector_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical (u, v) coordinates of pixel centers, each length n_detector."""
        idx = np.arange(self.n_detector) - (self.n_detector - 1) / 2.0
        return idx * self.pixel_size, idx * self.pixel_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["angles"] = self.angles.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConeBeamGeometry":
        d = dict(d)
        d["angles"] = np.asarray(d["angles"], dtype=np.float64)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConeBeamGeometry":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConeBeamGeometry):
            return NotImplemented
        return (
            self.n_voxels == other.n_voxels
            and self.voxel_size == other.voxel_size
            and self.n_detector == other.n_detector
            and self.pixel_size == other.pixel_size
            and self.n_angles == other.n_angles
            and self.source_radius == other.source_radius
            and self.detector_radius == other.detector_radius
            and np.array_equal(self.angles, other.angles)
        )


@dataclass
class Volume:
    """Attenuation volume (cm^-1) on the geometry's voxel grid, C order [z, y, x]."""

    data: np.ndarray
    geometry: ConeBeamGeometry

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        n = self.geometry.n_voxels
        if self.data.shape != (n, n, n):
            raise GeometryError(
                f"volume shape {self.data.shape} does not match geometry N={n}"
            )
        if not np.all(np.isfinite(self.data)):
            raise GeometryError("volume contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class ProjectionData:
    """Line-integral data (dimensionless), shape (n_angles, n_detector, n_detector)."""

    data: np.ndarray
    geometry: ConeBeamGeometry

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        g = self.geometry
        if self.data.shape != (g.n_angles, g.n_detector, g.n_detector):
            raise GeometryError(
                f"projection shape {self.data.shape} does not match geometry "
                f"({g.n_angles}, {g.n_detector}, {g.n_detector})"
            )
        if not np.all(np.isfinite(self.data)):
            raise GeometryError("projection data contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


# Source must clear the bounding sphere of the reconstruction cube
# (half diagonal = sqrt(3)/2 of the cube side).
_MIN_SOURCE_FACTOR = 0.5 * math.sqrt(3.0)


def make_geometry(
    n_voxels: int,
    n_angles: int,
    source_radius_factor: float,
    phys_size: float,
    detector_radius: float | None = None,
) -> ConeBeamGeometry:
    """Build the standard acquisition geometry for a cubic volume.

    The source circle radius is ``source_radius_factor * phys_size``.  The
    detector is an ``n_voxels``-square flat panel sized to the magnified
    central cross-section of the volume, i.e. the panel height equals
    ``phys_size`` scaled by the isocenter magnification.  (Voxels very close
    to the source can project slightly beyond the panel; out-of-panel
    contributions are treated as zero by the operators.)

    Parameters
    ----------
    n_voxels : int
        Grid size N; the detector gets N x N pixels as well.
    n_angles : int
        Projections equispaced at ``k * 2*pi / n_angles``, k = 0..n_angles-1.
    source_radius_factor : float
        Source radius as a multiple of phys_size.  Must exceed sqrt(3)/2 so
        the source stays outside the volume's bounding sphere.
    phys_size : float
        Physical side length of the volume cube in cm.
    detector_radius : float, optional
        Center-to-detector distance in cm; defaults to the source radius.
    """
    if n_voxels < 4:
        raise GeometryError(f"n_voxels must be >= 4, got {n_voxels}")
    if phys_size <= 0:
        raise GeometryError("phys_size must be strictly positive")
    if source_radius_factor <= _MIN_SOURCE_FACTOR:
        raise GeometryError(
            "source_radius_factor must exceed sqrt(3)/2 ~= 0.866 so the source "
            f"lies outside the reconstruction sphere, got {source_radius_factor}"
        )
    source_radius = source_radius_factor * phys_size
    if detector_radius is None:
        detector_radius = source_radius
    voxel_size = phys_size / n_voxels
    magnification = (source_radius + detector_radius) / source_radius
    pixel_size = voxel_size * magnification
    angles = np.arange(n_angles) * (2 * math.pi / n_angles)
    return ConeBeamGeometry(
        n_voxels=n_voxels,
        voxel_size=voxel_size,
        n_detector=n_voxels,
        pixel_size=pixel_size,
        n_angles=n_angles,
        source_radius=source_radius,
        detector_radius=detector_radius,
        angles=angles,
    )


def cone_angle(geometry: ConeBeamGeometry) -> float:
    """Full cone opening angle in degrees.

    Measured at the source, subtending the detector height:
    ``2 * atan(0.5 * n_detector * pixel_size / source_to_detector)``.
    """
    half_height = 0.5 * geometry.n_detector * geometry.pixel_size
    return math.degrees(2.0 * math.atan(half_height / geometry.source_to_detector))
