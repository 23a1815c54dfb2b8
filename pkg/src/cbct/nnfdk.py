"""Learned-filter FDK: a two-layer perceptron whose hidden weights are
exponentially binned FDK filters.

For parameters ``theta = (hidden filters h^k, hidden biases b_k, output
weights xi, output bias b_o)`` the volume-path reconstruction is

    sigma( sum_k xi_k * sigma( FDK(y, expand(h^k)) - b_k ) - b_o )

applied voxelwise, followed by the inverse of the training target scaling.
Because FDK is bilinear, the same value is obtained per voxel by evaluating
the network on that voxel's feature row (one entry per binned-filter unit
reconstruction); :func:`reconstruct` and :func:`eval_network` are tested
against each other through :func:`compute_features`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .fdk import BinnedFilter, ExpBinning, expand, fdk, filter_1d, make_binning, reweight
from .geometry import ConeBeamGeometry, GeometryError, ProjectionData, Volume
from .projector import back_project

__all__ = [
    "Scaling",
    "NetworkParams",
    "FeatureVolumes",
    "sigmoid",
    "eval_network",
    "compute_features",
    "reconstruct",
]

PARAMS_FORMAT = "cbct-network-params-v1"

#: Margins of the sigmoid output range that training targets are mapped to;
#: keeps finite pre-images for the extreme targets.
TARGET_LOW = 0.05
TARGET_HIGH = 0.95


@dataclass(frozen=True)
class Scaling:
    """Value-normalization metadata stored with trained parameters.

    Training targets are mapped affinely from [out_min, out_max] onto
    [TARGET_LOW, TARGET_HIGH]; network outputs are mapped back at
    reconstruction time.  Inputs are passed through unscaled (in_shift = 0,
    in_scale = 1 by convention; the hidden filters absorb input scale).
    """

    in_shift: float = 0.0
    in_scale: float = 1.0
    out_min: float = TARGET_LOW
    out_max: float = TARGET_HIGH

    def scale_targets(self, values: np.ndarray) -> np.ndarray:
        span = self.out_max - self.out_min
        if span <= 0:
            span = 1.0
        return TARGET_LOW + (values - self.out_min) * (TARGET_HIGH - TARGET_LOW) / span

    def unscale_outputs(self, values: np.ndarray) -> np.ndarray:
        span = self.out_max - self.out_min
        if span <= 0:
            span = 1.0
        return self.out_min + (values - TARGET_LOW) * span / (TARGET_HIGH - TARGET_LOW)

    @classmethod
    def from_targets(cls, targets: np.ndarray) -> "Scaling":
        return cls(out_min=float(np.min(targets)), out_max=float(np.max(targets)))


def _identity_scaling() -> Scaling:
    # [TARGET_LOW, TARGET_HIGH] -> itself: unscale is the identity.
    return Scaling()


@dataclass
class NetworkParams:
    """Trainable parameters of the learned-filter reconstruction network.

    Parameter count is ``(n_bins + 2) * n_hidden + 1`` (scaling metadata not
    counted).  The flat parameter-vector ordering used by the trainer and the
    Jacobian is ``[h^1 ... h^{n_hidden}, b_1 ... b_{n_hidden},
    xi_1 ... xi_{n_hidden}, b_o]``.
    """

    n_hidden: int
    hidden_filters: np.ndarray  # (n_hidden, n_bins)
    hidden_biases: np.ndarray  # (n_hidden,)
    output_weights: np.ndarray  # (n_hidden,)
    output_bias: float
    scaling: Scaling = field(default_factory=_identity_scaling)
    binning_mode: str = "mirrored"

    def __post_init__(self):
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")
        self.hidden_filters = np.ascontiguousarray(self.hidden_filters, dtype=np.float64)
        self.hidden_biases = np.ascontiguousarray(self.hidden_biases, dtype=np.float64)
        self.output_weights = np.ascontiguousarray(self.output_weights, dtype=np.float64)
        self.output_bias = float(self.output_bias)
        if self.hidden_filters.ndim != 2 or self.hidden_filters.shape[0] != self.n_hidden:
            raise ValueError(
                f"hidden_filters must have shape (n_hidden, n_bins), got {self.hidden_filters.shape}"
            )
        if self.hidden_biases.shape != (self.n_hidden,):
            raise ValueError("hidden_biases length must equal n_hidden")
        if self.output_weights.shape != (self.n_hidden,):
            raise ValueError("output_weights length must equal n_hidden")
        for arr in (self.hidden_filters, self.hidden_biases, self.output_weights):
            if not np.all(np.isfinite(arr)):
                raise ValueError("network parameters must be finite")
        if not np.isfinite(self.output_bias):
            raise ValueError("network parameters must be finite")

    @property
    def n_bins(self) -> int:
        return self.hidden_filters.shape[1]

    @property
    def n_params(self) -> int:
        return (self.n_bins + 2) * self.n_hidden + 1

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.hidden_filters.ravel(),
                self.hidden_biases,
                self.output_weights,
                [self.output_bias],
            ]
        )

    def replace_vector(self, theta: np.ndarray) -> "NetworkParams":
        """New params with the flat parameter vector replaced, metadata kept."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected parameter vector of length {self.n_params}")
        nh, nb = self.n_hidden, self.n_bins
        return NetworkParams(
            n_hidden=nh,
            hidden_filters=theta[: nh * nb].reshape(nh, nb).copy(),
            hidden_biases=theta[nh * nb : nh * nb + nh].copy(),
            output_weights=theta[nh * nb + nh : nh * nb + 2 * nh].copy(),
            output_bias=float(theta[-1]),
            scaling=self.scaling,
            binning_mode=self.binning_mode,
        )

    def to_dict(self) -> dict:
        return {
            "format": PARAMS_FORMAT,
            "n_hidden": self.n_hidden,
            "n_bins": self.n_bins,
            "binning_mode": self.binning_mode,
            "hidden_filters": self.hidden_filters.tolist(),
            "hidden_biases": self.hidden_biases.tolist(),
            "output_weights": self.output_weights.tolist(),
            "output_bias": self.output_bias,
            "scaling": {
                "in_shift": self.scaling.in_shift,
                "in_scale": self.scaling.in_scale,
                "out_min": self.scaling.out_min,
                "out_max": self.scaling.out_max,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkParams":
        if d.get("format") != PARAMS_FORMAT:
            raise ValueError(f"unsupported network parameter format: {d.get('format')!r}")
        return cls(
            n_hidden=int(d["n_hidden"]),
            hidden_filters=np.asarray(d["hidden_filters"], dtype=np.float64),
            hidden_biases=np.asarray(d["hidden_biases"], dtype=np.float64),
            output_weights=np.asarray(d["output_weights"], dtype=np.float64),
            output_bias=float(d["output_bias"]),
            scaling=Scaling(**d["scaling"]),
            binning_mode=d.get("binning_mode", "mirrored"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "NetworkParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FeatureVolumes:
    """One FDK reconstruction per binned-filter unit vector.

    ``data[j]`` is the reconstruction with the indicator filter of bin j;
    the feature row of voxel v is ``data[:, vz, vy, vx]``.
    """

    data: np.ndarray  # (n_bins, N, N, N)
    geometry: ConeBeamGeometry

    def __post_init__(self):
        n = self.geometry.n_voxels
        if self.data.ndim != 4 or self.data.shape[1:] != (n, n, n):
            raise GeometryError(
                f"feature volumes shape {self.data.shape} does not match geometry N={n}"
            )
        if not np.all(np.isfinite(self.data)):
            raise GeometryError("feature volumes contain non-finite values")

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    def rows(self) -> np.ndarray:
        """Feature matrix of shape (N^3, n_bins), voxels in C order."""
        return self.data.reshape(self.n_bins, -1).T


def sigmoid(t):
    """Logistic function 1 / (1 + exp(-t)), stable for large |t|."""
    return expit(t)


def _forward_raw(params: NetworkParams, z: np.ndarray) -> np.ndarray:
    """Network output before inverse target scaling; z is (..., n_bins)."""
    hidden = sigmoid(z @ params.hidden_filters.T - params.hidden_biases)
    return sigmoid(hidden @ params.output_weights - params.output_bias)


def eval_network(params: NetworkParams, z: np.ndarray) -> np.ndarray:
    """Evaluate the network on feature rows, returning attenuation values.

    ``z`` is a single feature row of length n_bins or a batch (..., n_bins);
    the inverse output scaling is applied to the sigmoid output.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.n_bins:
        raise ValueError(
            f"feature row length {z.shape[-1]} does not match n_bins={params.n_bins}"
        )
    return params.scaling.unscale_outputs(_forward_raw(params, z))


def compute_features(
    projections: ProjectionData, geometry: ConeBeamGeometry, binning: ExpBinning
) -> FeatureVolumes:
    """FDK reconstructions with every binned-filter unit vector.

    The reweighting is shared; each bin costs one row filtering plus one
    weighted backprojection.
    """
    if binning.n_detector != geometry.n_detector:
        raise GeometryError(
            f"binning built for N={binning.n_detector}, geometry has N={geometry.n_detector}"
        )
    weighted = reweight(projections, geometry)
    n = geometry.n_voxels
    out = np.empty((binning.n_bins, n, n, n), dtype=np.float64)
    for j in range(binning.n_bins):
        unit = np.zeros(binning.n_bins)
        unit[j] = 1.0
        filtered = filter_1d(weighted, expand(binning, BinnedFilter(unit)))
        out[j] = back_project(filtered, geometry, fdk_weighting=True).data
    return FeatureVolumes(out, geometry)


def reconstruct(
    params: NetworkParams,
    projections: ProjectionData,
    geometry: ConeBeamGeometry,
    binning: ExpBinning | None = None,
) -> Volume:
    """Full-volume reconstruction: one FDK pass per hidden node, then the
    voxelwise sigmoid combination and inverse target scaling.
    """
    if binning is None:
        binning = make_binning(geometry.n_detector, mode=params.binning_mode)
    if params.n_bins != binning.n_bins:
        raise ValueError(
            f"network has {params.n_bins} filter coefficients but the binning "
            f"for N={geometry.n_detector} has {binning.n_bins}"
        )
    combined = np.zeros((geometry.n_voxels,) * 3, dtype=np.float64)
    for k in range(params.n_hidden):
        filt = expand(binning, BinnedFilter(params.hidden_filters[k]))
        node = fdk(projections, geometry, filt)
        combined += params.output_weights[k] * sigmoid(node.data - params.hidden_biases[k])
    raw = sigmoid(combined - params.output_bias)
    return Volume(params.scaling.unscale_outputs(raw), geometry)
