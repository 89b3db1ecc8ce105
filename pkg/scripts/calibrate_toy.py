#!/usr/bin/env python3
"""Calibration run for the end-to-end toy convergence target.

Synthesizes the translate scene (64px, 8 times, 3 cameras), trains the desk
scale configuration, and reports train-split and held-out-time PSNR plus
per-iteration wall times. The acceptance suite freezes the thresholds that
this run establishes.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from wildsynth.metrics import evaluate
from wildsynth.sceneio import load_dataset, synth_scene
from wildsynth.training import TrainConfig, init_state, train_loop

# desk-scale defaults for the 64px toy; the paper-scale defaults in TrainConfig
# (4096 rays, 256 samples, 2^19 tables) are sized for real footage on a GPU
TOY_TRAIN = dict(
    rays_per_batch=768,
    samples_per_ray=48,
    warmup_prune=1200,
    grid_resolution=32,
    grid_update_interval=32,
    hash_levels=8,
    hash_table_size=2 ** 15,
    hash_base_resolution=16,
    hash_growth=1.5,
    hidden=64,
    geo_features=15,
    pos_bands=6,
    dir_bands=4,
    time_bands=3,
    deterministic=True,
)


def run(args):
    out = Path(args.workdir)
    out.mkdir(parents=True, exist_ok=True)
    scene_dir = out / "toy_translate"
    if not (scene_dir / "scene.json").exists():
        synth_scene(scene_dir, preset="translate", resolution=64, num_times=8,
                    num_cameras=3, seed=0, holdout="time")
    dataset = load_dataset(scene_dir)

    overrides = dict(TOY_TRAIN)
    overrides["max_iters"] = args.iters
    overrides["seed"] = args.seed
    if args.no_pruning:
        overrides["pruning_enabled"] = False
    config = TrainConfig(**overrides)
    state = init_state(dataset, config)

    t0 = time.perf_counter()
    train_loop(state, dataset, args.iters, log_every=args.log_every)
    wall = time.perf_counter() - t0

    times = np.array([row[5] for row in state.loss_history])
    print(f"\ntotal wall {wall / 60:.1f} min over {args.iters} iters "
          f"({wall / max(args.iters, 1) * 1e3:.0f} ms/iter)")
    if not config.deterministic and len(times) > 100:
        post = times[config.warmup_prune:]
        if post.size:
            print(f"median iter: warmup {np.median(times[:config.warmup_prune]):.0f} ms, "
                  f"post-warmup {np.median(post):.0f} ms")
    print(f"occupancy fraction: {state.grid.occupancy_fraction():.3f}")

    for split in ("train", "test"):
        t1 = time.perf_counter()
        row = evaluate(state.bundle, state.grid if config.pruning_enabled else None,
                       dataset, split, n_samples=config.samples_per_ray)
        print(f"{split}: psnr {row.psnr:.2f} dB, ssim {row.ssim:.4f} "
              f"({row.frames} frames, eval {time.perf_counter() - t1:.0f}s)")
    return state


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--workdir", default="/tmp/wildsynth_calib")
    ap.add_argument("--no-pruning", action="store_true")
    ap.add_argument("--log-every", type=int, default=500)
    run(ap.parse_args())
