"""Command-line entry points: synthesize data, train, render, evaluate.

Exit codes: 0 success, 1 data/training errors (single-line `error:` diagnostic
on stderr), 2 usage errors (unknown flags; argparse's convention).

Configuration precedence for train: built-in defaults < --config TOML < flags.
--threads caps the BLAS worker pool (WILDSYNTH_THREADS is the env fallback)
and must take effect before numpy loads, so the heavy imports live inside the
subcommand handlers.
"""

import argparse
import os
import sys
import time


def _parse_resize(text):
    w, h = text.lower().split("x")
    return (int(w), int(h))


def build_parser():
    parser = argparse.ArgumentParser(prog="wildsynth",
                                     description="dynamic radiance fields at desk scale")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (default: WILDSYNTH_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dynamic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["translate", "deform", "static"], default="translate")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--times", type=int, default=8)
    p.add_argument("--cameras", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", choices=["time", "view", "none"], default="time")

    p = sub.add_parser("train", help="optimize the fields on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", default=None, help="TOML file with TrainConfig keys")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-pruning", action="store_true")
    p.add_argument("--ablate", choices=["background", "flow", "deformation"], default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--loss-csv", default=None, help="default: <out>.loss.csv")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--resize", type=_parse_resize, default=None, metavar="WxH")
    for flag, typ in [
        ("rays-per-batch", int), ("samples-per-ray", int), ("warmup-prune", int),
        ("grid-resolution", int), ("grid-update-interval", int),
        ("grid-samples-per-cell", int), ("hash-levels", int), ("hash-table-log2", int),
        ("hash-base-resolution", int), ("hash-growth", float), ("hidden", int),
        ("geo-features", int), ("pos-bands", int), ("dir-bands", int), ("time-bands", int),
        ("lr-mlp", float), ("lr-encoding", float), ("lr-decay", float),
        ("max-flow", float), ("sigma-bias", float),
    ]:
        p.add_argument(f"--{flag}", type=typ, default=None)

    p = sub.add_parser("render", help="render one view from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--camera", type=int, default=0, help="camera index (sorted ids)")
    p.add_argument("--time", type=int, default=0, help="frame time index")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--depth", default=None, help="optional depth PFM")
    p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("eval", help="metrics over a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--samples", type=int, default=None)
    return parser


def _apply_threads(threads):
    n = threads if threads is not None else os.environ.get("WILDSYNTH_THREADS")
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def cmd_synth(args):
    from .sceneio import synth_scene

    ds, _ = synth_scene(args.out, preset=args.preset, resolution=args.resolution,
                        num_times=args.times, num_cameras=args.cameras,
                        seed=args.seed, holdout=args.holdout)
    print(f"wrote {len(ds.frames)} frames ({args.preset}, {args.resolution}px, "
          f"{args.times} times, {args.cameras} cameras) to {args.out}")
    return 0


_TRAIN_FLAGS = [
    "rays_per_batch", "samples_per_ray", "warmup_prune", "grid_resolution",
    "grid_update_interval", "grid_samples_per_cell", "hash_levels",
    "hash_base_resolution", "hash_growth", "hidden", "geo_features", "pos_bands",
    "dir_bands", "time_bands", "lr_mlp", "lr_encoding", "lr_decay", "max_flow",
    "sigma_bias",
]


def _train_config(args):
    from .errors import ConfigError
    from .training import TrainConfig

    overrides = {}
    if args.config is not None:
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(args.config, "rb") as f:
            doc = tomllib.load(f)
        doc = doc.get("train", doc)
        valid = set(TrainConfig.__dataclass_fields__)
        for key, val in doc.items():
            if key not in valid:
                raise ConfigError(f"unknown config key in {args.config}: {key}")
            overrides[key] = tuple(val) if key == "image_resize" and val else val
    for name in _TRAIN_FLAGS:
        val = getattr(args, name)
        if val is not None:
            overrides[name] = val
    if args.hash_table_log2 is not None:
        overrides["hash_table_size"] = 2 ** args.hash_table_log2
    if args.iters is not None:
        overrides["max_iters"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.resize is not None:
        overrides["image_resize"] = args.resize
    if args.no_pruning:
        overrides["pruning_enabled"] = False
    if args.ablate is not None:
        overrides["ablation"] = args.ablate
    if args.deterministic:
        overrides["deterministic"] = True
    return TrainConfig(**overrides)


def cmd_train(args):
    from .sceneio import load_dataset
    from .training import checkpoint_save, init_state, train_loop, write_loss_csv

    config = _train_config(args)
    dataset = load_dataset(args.data, resize=config.image_resize)
    state = init_state(dataset, config)
    t0 = time.perf_counter()
    train_loop(state, dataset, config.max_iters, log_every=args.log_every)
    wall = time.perf_counter() - t0
    checkpoint_save(state, args.out)
    csv_path = args.loss_csv if args.loss_csv is not None else f"{args.out}.loss.csv"
    write_loss_csv(state.loss_history, csv_path)
    final = state.loss_history[-1][3] if state.loss_history else float("nan")
    print(f"trained {state.iteration} iterations, final loss {final:.6f}, "
          f"wall {wall:.1f}s")
    return 0


def _pose_and_mask(dataset, camera_id, time_index):
    """Frame pose/mask for (camera, time); novel times reuse the camera's
    nearest frame (fixed-camera time synthesis)."""
    idx = dataset.frame_at(camera_id, time_index)
    if idx is None:
        candidates = [i for i, f in enumerate(dataset.frames) if f.camera_id == camera_id]
        idx = min(candidates, key=lambda i: abs(dataset.frames[i].time_index - time_index))
    frame = dataset.frames[idx]
    mask = dataset.load_mask(idx) if frame.mask_path is not None else None
    return frame.pose, mask


def cmd_render(args):
    from .errors import InputError
    from .renderer import render_image
    from .sceneio import load_dataset, write_image_srgb, write_pfm
    from .training import checkpoint_load

    state = checkpoint_load(args.ckpt)
    dataset = load_dataset(args.data, resize=state.config.image_resize)
    cam_ids = sorted(dataset.cameras)
    if not 0 <= args.camera < len(cam_ids):
        raise InputError(f"camera index {args.camera} outside [0, {len(cam_ids)})")
    if not 0 <= args.time < dataset.time_count:
        raise InputError(f"time {args.time} outside [0, {dataset.time_count})")
    cam_id = cam_ids[args.camera]
    idx0 = next(i for i, f in enumerate(dataset.frames) if f.camera_id == cam_id)
    camera = dataset.camera_for(idx0)
    pose, mask = _pose_and_mask(dataset, cam_id, args.time)
    n_samples = args.samples if args.samples is not None else state.config.samples_per_ray
    grid = state.grid if state.config.pruning_enabled else None
    rgb, depth = render_image(state.bundle, grid, camera, pose,
                              frame_index=args.time, mask=mask, n_samples=n_samples)
    write_image_srgb(args.out, rgb)
    if args.depth is not None:
        write_pfm(args.depth, depth)
    print(f"rendered camera {args.camera} time {args.time} -> {args.out}")
    return 0


def cmd_eval(args):
    from .metrics import evaluate, write_metrics_csv
    from .sceneio import load_dataset
    from .training import checkpoint_load

    state = checkpoint_load(args.ckpt)
    dataset = load_dataset(args.data, resize=state.config.image_resize)
    grid = state.grid if state.config.pruning_enabled else None
    row = evaluate(state.bundle, grid, dataset, args.split, n_samples=args.samples)
    write_metrics_csv([row], args.out)
    print(f"{row.scene} {row.split} ({row.config}): psnr {row.psnr:.2f} dB, "
          f"ssim {row.ssim:.4f} over {row.frames} frames")
    return 0


_HANDLERS = {"synth": cmd_synth, "train": cmd_train, "render": cmd_render, "eval": cmd_eval}


def main(argv=None):
    from .errors import WildsynthError

    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    try:
        return _HANDLERS[args.command](args)
    except WildsynthError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
