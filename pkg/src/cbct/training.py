"""Training-set construction and Levenberg-Marquardt fitting of the
learned-filter network.

Training pairs couple a voxel's feature row (one value per binned-filter
reconstruction) with the corresponding voxel of a high-quality reference,
drawn uniformly without replacement from a region of interest around the
scanned object.  The loss is half the summed squared error on scaled targets;
it is minimized with a damped Gauss-Newton (Levenberg-Marquardt) iteration
in which only updates that lower the training loss are accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.ndimage import maximum_filter
from scipy.special import expit

from .fdk import ExpBinning
from .geometry import ProjectionData, Volume
from .nnfdk import NetworkParams, Scaling, _forward_raw, compute_features

__all__ = [
    "TrainingPair",
    "TrainingSet",
    "SampleBudget",
    "LMAConfig",
    "TrainingHistory",
    "roi_mask",
    "build_sets",
    "loss",
    "jacobian",
    "train",
]


@dataclass(frozen=True)
class TrainingPair:
    """A single (feature row, scaled target voxel) sample."""

    z: np.ndarray
    o: float


@dataclass
class TrainingSet:
    """Batch of training pairs: feature matrix (n, n_bins) and targets (n,)."""

    z: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        self.o = np.ascontiguousarray(self.o, dtype=np.float64)
        if self.z.ndim != 2 or self.o.shape != (self.z.shape[0],):
            raise ValueError(
                f"inconsistent training set shapes {self.z.shape} / {self.o.shape}"
            )
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.o))):
            raise ValueError("training set contains non-finite values")

    def __len__(self) -> int:
        return self.z.shape[0]

    def pair(self, j: int) -> TrainingPair:
        return TrainingPair(self.z[j], float(self.o[j]))


@dataclass(frozen=True)
class SampleBudget:
    """How many unique pairs to draw, and from how many datasets per role."""

    n_train: int
    n_val: int
    n_train_datasets: int = 1
    n_val_datasets: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_train", "n_val", "n_train_datasets", "n_val_datasets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n_train % self.n_train_datasets != 0:
            raise ValueError("n_train must be divisible by n_train_datasets (equal draw per dataset)")
        if self.n_val % self.n_val_datasets != 0:
            raise ValueError("n_val must be divisible by n_val_datasets (equal draw per dataset)")


@dataclass(frozen=True)
class LMAConfig:
    """Step control and stopping parameters of the trainer.

    Defaults follow the standard recipe: initial damping 1e5, damping factor
    10, at most 100 consecutive rejected updates, and validation patience of
    100 accepted updates.  The gradient floor and damping ceiling bound the
    "gradient too small" / "step parameter too big" stops.
    """

    lambda0: float = 1e5
    factor: float = 10.0
    max_rejects: int = 100
    patience: int = 100
    gradient_floor: float = 1e-10
    lambda_ceiling: float = 1e20

    def __post_init__(self):
        if not self.factor > 1:
            raise ValueError("factor must be > 1")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        for name in ("max_rejects", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass
class TrainingHistory:
    """Per-candidate-step record of the trainer, plus the stop condition."""

    steps: list = field(default_factory=list)
    stop_reason: str = ""
    best_val_loss: float = math.nan
    n_accepted: int = 0

    def record(self, step, lam, train_loss, val_loss, accepted):
        self.steps.append(
            {
                "step": step,
                "lambda": lam,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "accepted": accepted,
            }
        )

    def accepted_losses(self) -> list:
        return [s["train_loss"] for s in self.steps if s["accepted"]]

    def to_tsv(self) -> str:
        lines = ["step\tlambda\ttrain_loss\tval_loss\taccepted"]
        for s in self.steps:
            lines.append(
                f"{s['step']}\t{s['lambda']:.6e}\t{s['train_loss']:.12e}"
                f"\t{s['val_loss']:.12e}\t{int(s['accepted'])}"
            )
        lines.append(f"# stop_reason={self.stop_reason} best_val_loss={self.best_val_loss:.12e}")
        return "\n".join(lines) + "\n"


def roi_mask(hq_volume: Volume | np.ndarray, threshold_frac: float = 0.1) -> np.ndarray:
    """Object support of the reference volume dilated by a 0.2N-voxel buffer.

    The support is ``|x| > threshold_frac * max|x|``; the dilation uses a
    cubic box of half-width ``ceil(0.2 * N)`` clipped to the grid.  Raises on
    an all-zero volume (empty region of interest).
    """
    data = hq_volume.data if isinstance(hq_volume, Volume) else np.asarray(hq_volume)
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {data.shape}")
    peak = np.max(np.abs(data))
    if peak == 0:
        raise ValueError("reference volume is identically zero: empty region of interest")
    support = np.abs(data) > threshold_frac * peak
    if not support.any():
        raise ValueError("thresholded support is empty: empty region of interest")
    radius = math.ceil(0.2 * data.shape[0])
    return maximum_filter(support.astype(np.uint8), size=2 * radius + 1) > 0


def _draw_pairs(features, hq, indices) -> tuple[np.ndarray, np.ndarray]:
    z = features.data.reshape(features.n_bins, -1)[:, indices].T
    o = hq.data.reshape(-1)[indices]
    return z, o


def build_sets(
    datasets: list[tuple[ProjectionData, Volume]],
    budget: SampleBudget,
    binning: ExpBinning,
) -> tuple[TrainingSet, TrainingSet, Scaling]:
    """Draw training and validation pairs from (projections, reference) datasets.

    The dataset list holds the training datasets followed by the validation
    datasets (``budget.n_train_datasets + budget.n_val_datasets`` entries).
    As a special case a single dataset with one dataset per role draws both
    sets from it with disjoint voxels.  Draws are uniform over the reference
    ROI, unique within each dataset, equally many per dataset, and fully
    determined by ``budget.rng_seed``.  Targets are scaled to the sigmoid
    output range; the scaling (computed from the training targets) is
    returned for storage with the trained network.
    """
    n_td, n_vd = budget.n_train_datasets, budget.n_val_datasets
    shared = len(datasets) == 1 and n_td == 1 and n_vd == 1
    if not shared and len(datasets) != n_td + n_vd:
        raise ValueError(
            f"expected {n_td + n_vd} datasets ({n_td} training + {n_vd} validation) "
            f"or a single shared dataset, got {len(datasets)}"
        )
    rng = np.random.default_rng(budget.rng_seed)
    train_z, train_o, val_z, val_o = [], [], [], []

    def prepare(index):
        proj, hq = datasets[index]
        feats = compute_features(proj, proj.geometry, binning)
        roi = np.flatnonzero(roi_mask(hq).reshape(-1))
        return feats, hq, roi

    if shared:
        per_train, per_val = budget.n_train, budget.n_val
        feats, hq, roi = prepare(0)
        if roi.size < per_train + per_val:
            raise ValueError(
                f"dataset 0: ROI has {roi.size} voxels, budget needs {per_train + per_val}"
            )
        picked = rng.choice(roi, size=per_train + per_val, replace=False)
        z, o = _draw_pairs(feats, hq, picked[:per_train])
        train_z.append(z)
        train_o.append(o)
        z, o = _draw_pairs(feats, hq, picked[per_train:])
        val_z.append(z)
        val_o.append(o)
    else:
        per_train = budget.n_train // n_td
        per_val = budget.n_val // n_vd
        for i in range(n_td + n_vd):
            is_train = i < n_td
            count = per_train if is_train else per_val
            feats, hq, roi = prepare(i)
            if roi.size < count:
                raise ValueError(
                    f"dataset {i}: ROI has {roi.size} voxels, budget needs {count}"
                )
            picked = rng.choice(roi, size=count, replace=False)
            z, o = _draw_pairs(feats, hq, picked)
            if is_train:
                train_z.append(z)
                train_o.append(o)
            else:
                val_z.append(z)
                val_o.append(o)

    train_o_raw = np.concatenate(train_o)
    scaling = Scaling.from_targets(train_o_raw)
    train = TrainingSet(np.concatenate(train_z), scaling.scale_targets(train_o_raw))
    val = TrainingSet(np.concatenate(val_z), scaling.scale_targets(np.concatenate(val_o)))
    return train, val, scaling


def loss(params: NetworkParams, training_set: TrainingSet) -> float:
    """Half summed squared error of the raw network output on scaled targets."""
    residual = training_set.o - _forward_raw(params, training_set.z)
    return 0.5 * float(residual @ residual)


def jacobian(params: NetworkParams, training_set: TrainingSet) -> np.ndarray:
    """Jacobian of the raw network output w.r.t. the flat parameter vector.

    Row j holds the derivatives for pair j; columns follow the ordering
    documented on :class:`~cbct.nnfdk.NetworkParams` (hidden filters, hidden
    biases, output weights, output bias).
    """
    z = training_set.z
    n = z.shape[0]
    nh, nb = params.n_hidden, params.n_bins
    hidden = expit(z @ params.hidden_filters.T - params.hidden_biases)
    out = expit(hidden @ params.output_weights - params.output_bias)
    d_out = out * (1.0 - out)  # sigma'(S), shape (n,)
    d_hidden = hidden * (1.0 - hidden)  # sigma'(g_k), shape (n, nh)
    core = d_out[:, None] * params.output_weights[None, :] * d_hidden  # (n, nh)

    J = np.empty((n, params.n_params), dtype=np.float64)
    for k in range(nh):
        J[:, k * nb : (k + 1) * nb] = core[:, k : k + 1] * z
    J[:, nh * nb : nh * nb + nh] = -core
    J[:, nh * nb + nh : nh * nb + 2 * nh] = d_out[:, None] * hidden
    J[:, -1] = -d_out
    return J


def _nguyen_widrow_init(
    n_hidden: int, feature_min: np.ndarray, feature_max: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Nguyen-Widrow hidden-layer initialization adapted to raw feature ranges.

    The method assumes inputs in [-1, 1]; weights and biases are computed for
    range-normalized inputs and then folded back so the network consumes raw
    features directly.  The output layer is drawn uniform in [-0.5, 0.5].
    """
    n_in = feature_min.size
    beta = 0.7 * n_hidden ** (1.0 / n_in)
    w = rng.uniform(-1.0, 1.0, size=(n_hidden, n_in))
    w *= beta / np.linalg.norm(w, axis=1, keepdims=True)
    b = beta * np.linspace(-1.0, 1.0, n_hidden) * np.sign(w[:, 0])

    center = 0.5 * (feature_max + feature_min)
    half_range = 0.5 * (feature_max - feature_min)
    half_range[half_range == 0] = 1.0
    w_raw = w / half_range[None, :]
    b_raw = b + (w * (center / half_range)[None, :]).sum(axis=1)

    xi = rng.uniform(-0.5, 0.5, size=n_hidden)
    b_o = float(rng.uniform(-0.5, 0.5))
    return w_raw, b_raw, xi, b_o


def train(
    train_set: TrainingSet,
    val_set: TrainingSet,
    config: LMAConfig,
    n_hidden: int,
    rng_seed: int,
    scaling: Scaling | None = None,
    binning_mode: str = "mirrored",
) -> tuple[NetworkParams, TrainingHistory]:
    """Fit the network with the damped Gauss-Newton (Levenberg-Marquardt) loop.

    Each iteration solves ``(J^T J + lambda I) t = J^T r`` (the normal system
    is symmetric positive definite for lambda > 0, solved by Cholesky) and
    accepts the update only if it strictly lowers the training loss; on
    acceptance lambda shrinks by ``config.factor``, otherwise it grows and the
    solve is retried.  Training stops when the gradient norm falls below the
    floor, lambda exceeds the ceiling, ``max_rejects`` consecutive updates
    were rejected, or the validation loss has not improved for ``patience``
    accepted updates.  The returned parameters are the iterate with the
    lowest validation loss (which may be the initialization).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_set.z.shape[1] != val_set.z.shape[1]:
        raise ValueError("training and validation feature widths differ")

    rng = np.random.default_rng(rng_seed)
    w, b, xi, b_o = _nguyen_widrow_init(
        n_hidden, train_set.z.min(axis=0), train_set.z.max(axis=0), rng
    )
    params = NetworkParams(
        n_hidden=n_hidden,
        hidden_filters=w,
        hidden_biases=b,
        output_weights=xi,
        output_bias=b_o,
        scaling=scaling if scaling is not None else Scaling(),
        binning_mode=binning_mode,
    )

    history = TrainingHistory()
    theta = params.to_vector()
    train_loss = loss(params, train_set)
    best_val = loss(params, val_set)
    best_theta = theta.copy()
    lam = config.lambda0
    patience_used = 0
    consecutive_rejects = 0
    step = 0
    identity = np.eye(theta.size)
    stop = ""

    while not stop:
        residual = train_set.o - _forward_raw(params, train_set.z)
        J = jacobian(params, train_set)
        gradient = -(J.T @ residual)  # dL/dtheta
        if np.linalg.norm(gradient) < config.gradient_floor:
            stop = "gradient_floor"
            break
        normal = J.T @ J
        rhs = J.T @ residual  # = -gradient

        accepted = False
        while not accepted and not stop:
            step += 1
            try:
                update = scipy.linalg.cho_solve(
                    scipy.linalg.cho_factor(normal + lam * identity), rhs
                )
                candidate = params.replace_vector(theta + update)
                candidate_loss = loss(candidate, train_set)
            except (scipy.linalg.LinAlgError, np.linalg.LinAlgError, ValueError):
                candidate = None
                candidate_loss = math.inf

            if candidate is not None and candidate_loss < train_loss:
                accepted = True
                consecutive_rejects = 0
                theta = theta + update
                params = candidate
                train_loss = candidate_loss
                lam = lam / config.factor
                val_loss = loss(params, val_set)
                history.record(step, lam, train_loss, val_loss, True)
                history.n_accepted += 1
                if val_loss < best_val:
                    best_val = val_loss
                    best_theta = theta.copy()
                    patience_used = 0
                else:
                    patience_used += 1
                    if patience_used >= config.patience:
                        stop = "validation_patience"
            else:
                consecutive_rejects += 1
                lam = lam * config.factor
                history.record(step, lam, candidate_loss, math.nan, False)
                if consecutive_rejects >= config.max_rejects:
                    stop = "max_rejects"
                elif lam > config.lambda_ceiling:
                    stop = "lambda_ceiling"

    history.stop_reason = stop
    history.best_val_loss = best_val
    return params.replace_vector(best_theta), history
