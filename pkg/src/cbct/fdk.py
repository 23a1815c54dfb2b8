"""FDK reconstruction pipeline: reweighting, 1-D row filtering, weighted
backprojection, classical ramp filters, and the exponential filter binning.

A spatial-domain filter has ``2 * n_detector`` taps with the zero-lag tap at
index ``n_detector``.  Filtering is a plain discrete convolution per detector
row ("same" output, centered on the zero-lag tap); the detector-pitch factor
that turns the discrete convolution into a continuous one is folded into the
FDK backprojection weight, see :mod:`cbct.projector`.

Exponential binning approximates a filter by one coefficient per bin, with
bin widths growing geometrically away from the center: the center tap is its
own bin and each side is partitioned into widths 1, 1, 1, 2, 4, 8, ...
(last bin truncated at the boundary).  In the default "mirrored" mode the
left and right bins at equal rank share one coefficient, which yields 13
coefficients for a 1024-pixel detector; "independent" mode keeps separate
left/right coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .geometry import ConeBeamGeometry, GeometryError, ProjectionData, Volume
from .projector import back_project

__all__ = [
    "Filter",
    "ExpBinning",
    "BinnedFilter",
    "reweight",
    "filter_1d",
    "fdk",
    "ramlak_filter",
    "hann_filter",
    "make_binning",
    "expand",
]

BINNING_MODES = ("mirrored", "independent")


@dataclass
class Filter:
    """Spatial-domain 1-D filter: 2N real taps, zero lag at index N."""

    taps: np.ndarray

    def __post_init__(self):
        self.taps = np.ascontiguousarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 1 or self.taps.size % 2 != 0 or self.taps.size < 8:
            raise ValueError(f"filter must be a 1-D array of 2N taps, got shape {self.taps.shape}")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("filter taps must be finite")

    @property
    def n_detector(self) -> int:
        return self.taps.size // 2

    def to_dict(self) -> dict:
        return {"taps": self.taps.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Filter":
        return cls(np.asarray(d["taps"], dtype=np.float64))


@dataclass
class BinnedFilter:
    """Exponentially binned filter coefficients, one value per bin."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 1 or self.coeffs.size < 1:
            raise ValueError("binned filter coefficients must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("binned filter coefficients must be finite")

    @property
    def n_bins(self) -> int:
        return self.coeffs.size

    def to_dict(self) -> dict:
        return {"coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BinnedFilter":
        return cls(np.asarray(d["coeffs"], dtype=np.float64))


def _side_widths(n_taps: int) -> list[int]:
    """Bin widths for one side of the filter, from the center outward."""
    widths: list[int] = []
    remaining = n_taps
    n_unit = 0
    nominal = 1
    while remaining > 0:
        if n_unit < 3:
            w = 1
            n_unit += 1
        else:
            nominal = 2 if nominal == 1 else nominal * 2
            w = nominal
        w = min(w, remaining)
        widths.append(w)
        remaining -= w
    return widths


@dataclass
class ExpBinning:
    """Partition of the 2N filter taps into exponentially widening bins.

    ``bin_of_tap[i]`` gives the coefficient index owning tap ``i``;
    ``segments[j]`` lists the contiguous (start, stop) tap ranges owned by
    coefficient ``j``.
    """

    n_detector: int
    mode: str
    n_bins: int
    bin_of_tap: np.ndarray = field(repr=False)
    segments: tuple = field(repr=False)

    @property
    def n_taps(self) -> int:
        return 2 * self.n_detector

    def to_dict(self) -> dict:
        return {"n_detector": self.n_detector, "mode": self.mode, "n_bins": self.n_bins}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpBinning":
        binning = make_binning(d["n_detector"], mode=d.get("mode", "mirrored"))
        if "n_bins" in d and d["n_bins"] != binning.n_bins:
            raise ValueError(
                f"stored n_bins={d['n_bins']} does not match reconstructed {binning.n_bins}"
            )
        return binning


def make_binning(n_detector: int, mode: str = "mirrored") -> ExpBinning:
    """Build the exponential binning for a 2*n_detector tap filter.

    Parameters
    ----------
    n_detector : int
        Detector width N; the filter has 2N taps with the center at index N.
    mode : {"mirrored", "independent"}
        "mirrored" shares one coefficient per left/right bin pair (default;
        gives n_bins = 13 at N = 1024), "independent" keeps the sides
        separate.
    """
    if n_detector < 4:
        raise ValueError(f"n_detector must be >= 4, got {n_detector}")
    if mode not in BINNING_MODES:
        raise ValueError(f"mode must be one of {BINNING_MODES}, got {mode!r}")
    center = n_detector
    widths_left = _side_widths(n_detector)        # taps center-1 .. 0
    widths_right = _side_widths(n_detector - 1)   # taps center+1 .. 2N-1

    if mode == "mirrored":
        n_bins = 1 + max(len(widths_left), len(widths_right))
    else:
        n_bins = 1 + len(widths_left) + len(widths_right)

    bin_of_tap = np.empty(2 * n_detector, dtype=np.int64)
    bin_of_tap[center] = 0
    pos = center - 1
    for j, w in enumerate(widths_left):
        bin_of_tap[pos - w + 1 : pos + 1] = 1 + j
        pos -= w
    pos = center + 1
    for j, w in enumerate(widths_right):
        idx = 1 + j if mode == "mirrored" else 1 + len(widths_left) + j
        bin_of_tap[pos : pos + w] = idx
        pos += w

    segments = []
    for j in range(n_bins):
        (taps,) = np.nonzero(bin_of_tap == j)
        runs = []
        start = taps[0]
        prev = taps[0]
        for t in taps[1:]:
            if t != prev + 1:
                runs.append((int(start), int(prev) + 1))
                start = t
            prev = t
        runs.append((int(start), int(prev) + 1))
        segments.append(tuple(runs))

    return ExpBinning(
        n_detector=n_detector,
        mode=mode,
        n_bins=n_bins,
        bin_of_tap=bin_of_tap,
        segments=tuple(segments),
    )


def expand(binning: ExpBinning, binned_filter: BinnedFilter) -> Filter:
    """Piecewise-constant expansion: tap i takes the coefficient of its bin.

    Linear in the coefficients; expanding a unit vector yields the indicator
    of the corresponding bin.
    """
    if binned_filter.n_bins != binning.n_bins:
        raise ValueError(
            f"binned filter has {binned_filter.n_bins} coefficients, "
            f"binning expects {binning.n_bins}"
        )
    return Filter(binned_filter.coeffs[binning.bin_of_tap])


def ramlak_filter(n_detector: int, pixel_size: float) -> Filter:
    """Ram-Lak (ramp) filter taps at the detector sampling.

    Center tap ``1 / (4 * pixel_size**2)``, odd taps ``-1 / (pi*k*pixel_size)**2``,
    even taps zero; the band limit is the detector Nyquist frequency.
    """
    if n_detector < 4:
        raise ValueError(f"n_detector must be >= 4, got {n_detector}")
    taps = np.zeros(2 * n_detector, dtype=np.float64)
    k = np.arange(1, n_detector, 2)
    odd = -1.0 / (math.pi * k * pixel_size) ** 2
    taps[n_detector] = 1.0 / (4.0 * pixel_size**2)
    taps[n_detector + k] = odd
    taps[n_detector - k] = odd
    return Filter(taps)


def hann_filter(n_detector: int, pixel_size: float) -> Filter:
    """Hann-windowed ramp filter taps at the detector sampling.

    Defined through the frequency response ``|f| * (0.5 + 0.5*cos(pi*f/f_max))``
    sampled at the DFT frequencies of the 2N-tap grid (f_max = Nyquist) and
    transformed back to the spatial domain.
    """
    if n_detector < 4:
        raise ValueError(f"n_detector must be >= 4, got {n_detector}")
    n_taps = 2 * n_detector
    freqs = np.fft.rfftfreq(n_taps, d=pixel_size)
    f_max = 0.5 / pixel_size
    response = freqs * (0.5 + 0.5 * np.cos(math.pi * freqs / f_max))
    taps = np.fft.irfft(response / pixel_size, n=n_taps)
    return Filter(np.roll(taps, n_detector))


def reweight(projections: ProjectionData, geometry: ConeBeamGeometry) -> ProjectionData:
    """Cosine reweighting that makes cone-beam rows behave like fan-beam data.

    Each pixel is scaled by ``d / sqrt(d^2 + u^2 + v^2)`` with ``d`` the
    source-to-detector distance and (u, v) the physical pixel coordinates.
    """
    if projections.geometry != geometry:
        raise GeometryError("projection data does not match the supplied geometry")
    d = geometry.source_to_detector
    u, v = geometry.detector_coords()
    w = d / np.sqrt(d**2 + u[np.newaxis, :] ** 2 + v[:, np.newaxis] ** 2)
    return ProjectionData(projections.data * w[np.newaxis, :, :], geometry)


def filter_1d(projections: ProjectionData, filt: Filter) -> ProjectionData:
    """Convolve every detector row (fixed angle and v) with the filter taps.

    Plain discrete convolution, "same" output of row length, zero-padded FFT
    implementation (deterministic across calls).
    """
    n_det = projections.geometry.n_detector
    if filt.taps.size != 2 * n_det:
        raise ValueError(
            f"filter has {filt.taps.size} taps, geometry requires {2 * n_det}"
        )
    full = fftconvolve(projections.data, filt.taps[np.newaxis, np.newaxis, :], axes=2)
    return ProjectionData(full[:, :, n_det : 2 * n_det], projections.geometry)


def fdk(projections: ProjectionData, geometry: ConeBeamGeometry, filt: Filter) -> Volume:
    """Feldkamp reconstruction: reweight, filter rows, weighted backprojection.

    Bilinear in (projections, filter); returns attenuation units for data
    consistent with the geometry.
    """
    weighted = reweight(projections, geometry)
    filtered = filter_1d(weighted, filt)
    return back_project(filtered, geometry, fdk_weighting=True)
