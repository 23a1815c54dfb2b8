"""Self-describing array container: raw little-endian float32 + JSON sidecar.

Every array is stored as ``<base>.raw`` (C-order, little-endian, 32-bit
floats) next to ``<base>.json`` carrying shape, dtype, units, the acquisition
geometry and the hash of the producing configuration, so any output can be
reproduced and inspected with standard tools.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .geometry import ConeBeamGeometry

__all__ = ["save_array", "load_array", "config_hash"]

_FORMAT = "cbct-array-v1"


def config_hash(config: dict) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def save_array(
    base: str | Path,
    array: np.ndarray,
    kind: str,
    units: str = "",
    geometry: ConeBeamGeometry | None = None,
    config: dict | None = None,
    extra: dict | None = None,
) -> Path:
    """Write ``base.raw`` + ``base.json``; returns the raw file path."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype="<f4")
    raw_path = base.with_suffix(".raw")
    data.tofile(raw_path)
    meta = {
        "format": _FORMAT,
        "shape": list(data.shape),
        "dtype": "float32",
        "byte_order": "little",
        "order": "C",
        "kind": kind,
        "units": units,
    }
    if geometry is not None:
        meta["geometry"] = geometry.to_dict()
    if config is not None:
        meta["config"] = config
        meta["config_hash"] = config_hash(config)
    if extra:
        meta.update(extra)
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    return raw_path


def load_array(base: str | Path) -> tuple[np.ndarray, dict]:
    """Read ``base.raw`` + ``base.json``; returns (float64 array, metadata)."""
    base = Path(base)
    with open(base.with_suffix(".json")) as fh:
        meta = json.load(fh)
    if meta.get("format") != _FORMAT:
        raise ValueError(f"unsupported array container format: {meta.get('format')!r}")
    shape = tuple(meta["shape"])
    data = np.fromfile(base.with_suffix(".raw"), dtype="<f4").reshape(shape)
    return data.astype(np.float64), meta


def load_geometry(meta: dict) -> ConeBeamGeometry:
    """Rebuild the acquisition geometry stored in a sidecar."""
    if "geometry" not in meta:
        raise ValueError("sidecar has no geometry entry")
    return ConeBeamGeometry.from_dict(meta["geometry"])
