"""Command-line driver tying the pipeline together.

Subcommands: ``generate`` (phantom + simulated data), ``reconstruct``
(fdk-ramlak | fdk-hann | sirt+ | nn-fdk), ``train`` (fit a network under one
of the three data scenarios), ``evaluate`` (metric table + slice images) and
``segment``.  Every command accepts ``--config FILE`` with JSON defaults
(command-line flags win) and echoes its effective configuration into the
output sidecars, so runs are reproducible from config + seed alone.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import arrayio
from .baselines import sirt_plus
from .fdk import fdk, hann_filter, make_binning, ramlak_filter
from .geometry import GeometryError, ProjectionData, Volume, cone_angle, make_geometry
from .metrics import CLASS_NAMES, seg_metrics, segment, ssim, tse
from .nnfdk import NetworkParams, reconstruct
from .phantoms import FAMILIES, add_noise, generate_spec, ground_truth, simulate_data
from .projector import counters
from .training import LMAConfig, SampleBudget, build_sets, roi_mask, train

__all__ = ["main"]

RECON_METHODS = ("fdk-ramlak", "fdk-hann", "sirt+", "nn-fdk")


class ConfigError(Exception):
    """Invalid configuration or inputs; maps to exit code 1."""


class _ArgumentParser(argparse.ArgumentParser):
    # usage errors must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Overlay JSON config values onto arguments left at their defaults."""
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    defaults = {a.dest: a.default for a in parser._actions}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, dest) == defaults[dest]:
            setattr(args, dest, value)


def _effective_config(args: argparse.Namespace, keys: list[str]) -> dict:
    return {k: getattr(args, k) for k in keys}


def _save_slices(volume: np.ndarray, base: Path) -> None:
    """Export the central z and x slices as 8-bit grayscale PNGs."""
    from PIL import Image

    lo, hi = float(volume.min()), float(volume.max())
    span = hi - lo if hi > lo else 1.0
    n = volume.shape[0]
    for name, img in (("z0", volume[n // 2, :, :]), ("x0", volume[:, :, n // 2])):
        scaled = np.clip((img - lo) / span * 255.0, 0, 255).astype(np.uint8)
        Image.fromarray(scaled, mode="L").save(f"{base}_{name}.png")


def _load_projections(base: str) -> ProjectionData:
    data, meta = arrayio.load_array(base)
    if meta.get("kind") != "projections":
        raise ConfigError(f"{base} is not a projection container (kind={meta.get('kind')!r})")
    return ProjectionData(data, arrayio.load_geometry(meta))


def _load_volume(base: str) -> Volume:
    data, meta = arrayio.load_array(base)
    if meta.get("kind") not in ("volume", "labels"):
        raise ConfigError(f"{base} is not a volume container (kind={meta.get('kind')!r})")
    return Volume(data, arrayio.load_geometry(meta))


# ---------------------------------------------------------------- generate


def cmd_generate(args) -> int:
    keys = [
        "family", "n", "n_angles", "i0", "seed", "source_radius_factor",
        "phys_size", "detector_radius", "oversample", "attenuation",
    ]
    config = _effective_config(args, keys)
    if args.family not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}, got {args.family!r}")
    if args.oversample < 1:
        raise ConfigError("oversample must be >= 1")
    if args.i0 is not None and args.i0 < 1:
        raise ConfigError("i0 must be >= 1")
    try:
        geom = make_geometry(
            args.n, args.n_angles, args.source_radius_factor, args.phys_size,
            detector_radius=args.detector_radius,
        )
        spec = generate_spec(args.family, args.seed, phys_size=args.phys_size,
                             attenuation=args.attenuation)
    except (GeometryError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    echo = dict(config)
    echo["cone_angle_deg"] = cone_angle(geom)
    echo["n_objects"] = len(spec.objects)
    print(json.dumps(echo, indent=2))
    if args.dry_run:
        return 0

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "phantom_spec.json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
    with open(out / "geometry.json", "w") as fh:
        fh.write(geom.to_json())

    gt = ground_truth(spec, geom)
    arrayio.save_array(out / "ground_truth", gt.data, kind="volume", units="cm^-1",
                       geometry=geom, config=config)
    clean = simulate_data(spec, geom, args.oversample)
    arrayio.save_array(out / "projections_clean", clean.data, kind="projections",
                       units="dimensionless", geometry=geom, config=config)
    if args.i0 is not None:
        noisy = add_noise(clean, args.i0, seed=args.seed)
        arrayio.save_array(out / "projections_noisy", noisy.data, kind="projections",
                           units="dimensionless", geometry=geom, config=config)
    return 0


# ------------------------------------------------------------- reconstruct


def cmd_reconstruct(args) -> int:
    if args.method not in RECON_METHODS:
        raise ConfigError(f"method must be one of {RECON_METHODS}, got {args.method!r}")
    if args.method == "nn-fdk" and not args.network:
        raise ConfigError("nn-fdk reconstruction requires --network")
    proj = _load_projections(args.data)
    geom = proj.geometry
    config = _effective_config(args, ["method", "data", "iterations", "network"])

    counters.reset()
    t0 = time.perf_counter()
    extra: dict = {}
    if args.method == "fdk-ramlak":
        vol = fdk(proj, geom, ramlak_filter(geom.n_detector, geom.pixel_size))
    elif args.method == "fdk-hann":
        vol = fdk(proj, geom, hann_filter(geom.n_detector, geom.pixel_size))
    elif args.method == "sirt+":
        vol, history = sirt_plus(proj, geom, args.iterations, record_every=args.record_every)
        extra["residual_history"] = [[it, res] for it, res in history]
        with open(Path(args.out).with_suffix(".residuals.tsv"), "w") as fh:
            fh.write("iteration\tresidual\n")
            fh.writelines(f"{it}\t{res:.12e}\n" for it, res in history)
    else:
        params = NetworkParams.load(args.network)
        vol = reconstruct(params, proj, geom)
        extra["n_hidden"] = params.n_hidden
    wall = time.perf_counter() - t0

    arrayio.save_array(args.out, vol.data, kind="volume", units="cm^-1",
                       geometry=geom, config=config)
    report = {
        "method": args.method,
        "wall_time_s": wall,
        "forward_calls": counters.forward_calls,
        "backproject_calls": counters.backproject_calls,
        **extra,
    }
    with open(Path(args.out).with_suffix(".report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report))
    return 0


# ------------------------------------------------------------------- train


def _parse_dataset(pair: str):
    if ":" not in pair:
        raise ConfigError(f"dataset must be given as PROJECTIONS:REFERENCE, got {pair!r}")
    proj_base, hq_base = pair.split(":", 1)
    proj = _load_projections(proj_base)
    hq = _load_volume(hq_base)
    if hq.geometry != proj.geometry:
        raise ConfigError(f"dataset {pair!r}: projection and reference geometries differ")
    return proj, hq


def cmd_train(args) -> int:
    train_pairs = [_parse_dataset(p) for p in args.data]
    val_pairs = [_parse_dataset(p) for p in (args.val_data or [])]
    if args.scenario == 1:
        if len(train_pairs) != 1 or val_pairs:
            raise ConfigError("scenario 1 takes exactly one --data pair and no --val-data")
    elif args.scenario == 2:
        if len(train_pairs) != 1 or len(val_pairs) != 1:
            raise ConfigError("scenario 2 takes one --data pair and one --val-data pair")
    else:
        if not train_pairs or not val_pairs:
            raise ConfigError("scenario 3 takes one or more pairs for both roles")

    geom = train_pairs[0][0].geometry
    binning = make_binning(geom.n_detector, mode=args.binning_mode)
    budget = SampleBudget(
        n_train=args.n_train,
        n_val=args.n_val,
        n_train_datasets=len(train_pairs),
        n_val_datasets=max(len(val_pairs), 1),
        rng_seed=args.seed,
    )
    try:
        train_set, val_set, scaling = build_sets(train_pairs + val_pairs, budget, binning)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    lma = LMAConfig(
        lambda0=args.lambda0,
        factor=args.damping_factor,
        max_rejects=args.max_rejects,
        patience=args.patience,
    )
    params, history = train(
        train_set, val_set, lma, n_hidden=args.n_hidden, rng_seed=args.seed,
        scaling=scaling, binning_mode=args.binning_mode,
    )
    params.save(args.out)
    if args.history:
        with open(args.history, "w") as fh:
            fh.write(history.to_tsv())
    print(json.dumps({
        "out": args.out,
        "n_params": params.n_params,
        "accepted_updates": history.n_accepted,
        "stop_reason": history.stop_reason,
        "best_val_loss": history.best_val_loss,
    }))
    return 0


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    hq = _load_volume(args.hq)
    roi = roi_mask(hq)
    gold = None
    if args.gold_seg:
        gold_vol = _load_volume(args.gold_seg)
        gold = gold_vol.data.astype(np.uint8)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # fixed column order: method (recon name), problem (reference name), metrics
    header = ["recon", "problem", "tse", "ssim"]
    if gold is not None:
        for cls in sorted(CLASS_NAMES):
            if cls == 0:
                continue
            name = CLASS_NAMES[cls]
            header += [f"{name}_verr", f"{name}_ml", f"{name}_dice"]
    rows = []
    problem = Path(args.hq).name
    for recon_base in args.recon:
        vol = _load_volume(recon_base)
        if vol.data.shape != hq.data.shape:
            raise ConfigError(f"{recon_base}: shape differs from the reference")
        row = [Path(recon_base).name, problem,
               f"{tse(vol, hq, roi):.6e}",
               f"{ssim(vol.data, hq.data, roi, win_size=args.ssim_window):.6f}"]
        if gold is not None:
            scores = seg_metrics(segment(vol), gold)
            for cls in sorted(scores):
                s = scores[cls]
                row += [f"{s.volume_error:.6f}", f"{s.mislabeled:.6f}", f"{s.dice:.6f}"]
        rows.append(row)
        _save_slices(vol.data, out_dir / Path(recon_base).name)
    _save_slices(hq.data, out_dir / (Path(args.hq).name + "_reference"))

    table = "\t".join(header) + "\n" + "\n".join("\t".join(r) for r in rows) + "\n"
    sys.stdout.write(table)
    with open(out_dir / "metrics.tsv", "w") as fh:
        fh.write(table)
    return 0


# ----------------------------------------------------------------- segment


def cmd_segment(args) -> int:
    vol = _load_volume(args.volume)
    labels = segment(vol, smoothing_sigma=args.sigma)
    arrayio.save_array(args.out, labels.astype(np.float32), kind="labels",
                       units="class", geometry=vol.geometry,
                       config=_effective_config(args, ["volume", "sigma"]))
    summary = {CLASS_NAMES[c]: int((labels == c).sum()) for c in sorted(CLASS_NAMES)}
    if args.gold:
        gold = _load_volume(args.gold).data.astype(np.uint8)
        scores = seg_metrics(labels, gold)
        summary["metrics"] = {
            CLASS_NAMES[c]: {"volume_error": s.volume_error, "mislabeled": s.mislabeled,
                             "dice": s.dice}
            for c, s in scores.items()
        }
    print(json.dumps(summary))
    return 0


# -------------------------------------------------------------------- main


def _add_common(sub):
    sub.add_argument("--config", help="JSON file with default values for this command")
    sub.add_argument("--threads", type=int, default=None, help="numba thread count")


def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="cbct", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("generate", help="generate a phantom and simulated projection data")
    g.add_argument("--out-dir", default="dataset", help="output directory")
    g.add_argument("--family", default="fourshape", help=f"phantom family {FAMILIES}")
    g.add_argument("--n", type=int, default=64, help="grid size N (volume N^3, detector N^2)")
    g.add_argument("--n-angles", type=int, default=32)
    g.add_argument("--i0", type=float, default=None,
                   help="emitted photon count; omit for noise-free data only")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--source-radius-factor", type=float, default=10.0)
    g.add_argument("--phys-size", type=float, default=10.0, help="cube side in cm")
    g.add_argument("--detector-radius", type=float, default=None)
    g.add_argument("--oversample", type=float, default=1.5,
                   help="data generation oversampling factor")
    g.add_argument("--attenuation", type=float, default=0.22, help="object attenuation cm^-1")
    g.add_argument("--dry-run", action="store_true",
                   help="validate and echo the configuration without writing files")
    _add_common(g)
    g.set_defaults(func=cmd_generate)

    r = subs.add_parser("reconstruct", help="reconstruct a volume from projection data")
    r.add_argument("--method", required=True, help=f"one of {RECON_METHODS}")
    r.add_argument("--data", required=True, help="projection container base path")
    r.add_argument("--out", required=True, help="output volume base path")
    r.add_argument("--network", default=None, help="trained network file (nn-fdk)")
    r.add_argument("--iterations", type=int, default=200, help="SIRT+ iteration count")
    r.add_argument("--record-every", type=int, default=10)
    _add_common(r)
    r.set_defaults(func=cmd_reconstruct)

    t = subs.add_parser("train", help="fit a learned-filter network")
    t.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True,
                   help="1: one dataset for both roles; 2: one+one; 3: several per role")
    t.add_argument("--data", nargs="+", required=True, metavar="PROJ:HQ",
                   help="training dataset pairs (projection base : reference volume base)")
    t.add_argument("--val-data", nargs="*", default=[], metavar="PROJ:HQ",
                   help="validation dataset pairs (scenarios 2 and 3)")
    t.add_argument("--n-train", type=int, default=10000)
    t.add_argument("--n-val", type=int, default=10000)
    t.add_argument("--n-hidden", type=int, default=4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--binning-mode", default="mirrored", choices=("mirrored", "independent"))
    t.add_argument("--lambda0", type=float, default=1e5)
    t.add_argument("--damping-factor", type=float, default=10.0)
    t.add_argument("--max-rejects", type=int, default=100)
    t.add_argument("--patience", type=int, default=100)
    t.add_argument("--out", default="network.json", help="output network file")
    t.add_argument("--history", default=None, help="training history TSV file")
    _add_common(t)
    t.set_defaults(func=cmd_train)

    e = subs.add_parser("evaluate", help="metric table and slice images for reconstructions")
    e.add_argument("--recon", nargs="+", required=True, help="reconstruction base paths")
    e.add_argument("--hq", required=True, help="reference volume base path")
    e.add_argument("--gold-seg", default=None, help="gold segmentation base path")
    e.add_argument("--ssim-window", type=int, default=19)
    e.add_argument("--out-dir", default="evaluation")
    _add_common(e)
    e.set_defaults(func=cmd_evaluate)

    s = subs.add_parser("segment", help="shell/kernel segmentation of a volume")
    s.add_argument("--volume", required=True, help="volume base path")
    s.add_argument("--out", default="labels", help="output labels base path")
    s.add_argument("--gold", default=None, help="gold labels base path for metrics")
    s.add_argument("--sigma", type=float, default=1.0, help="smoothing sigma in voxels")
    _add_common(s)
    s.set_defaults(func=cmd_segment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        # overlay config-file defaults for the chosen subcommand
        chosen = parser._subparsers._group_actions[0].choices[args.command]
        _load_config(args, chosen)
        if getattr(args, "threads", None):
            import numba

            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        return args.func(args)
    except ConfigError as exc:
        print(f"cbct: configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime/numerical failure
        print(f"cbct: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
