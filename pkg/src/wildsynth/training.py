"""Ray-batch construction from motion masks, the photometric losses, the
optimization loop, and checkpointing.

Each batch draws pixels uniformly from one random training frame and splits
them at mask threshold 0.5: static rays train the background field through
the static loss, motion-centric rays train the deformation + dynamic fields
through the scene-flow loss (center frame plus the neighbor frames rendered
through the predicted flow). The total loss is their unweighted sum.
"""

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .diffnet import AdamState, adam_step, lr_schedule
from .encoding import HashGridConfig
from .errors import CheckpointError, ConfigError, DataError, TrainingError
from .fields import FieldBundle, FieldConfig
from .renderer import (
    OccupancyGrid,
    Rays,
    generate_rays,
    occupancy_update,
    render_dynamic,
    render_dynamic_backward,
    render_static,
    render_static_backward,
)

CHECKPOINT_MAGIC = b"WNRF1"


@dataclass
class TrainConfig:
    rays_per_batch: int = 4096
    samples_per_ray: int = 256
    lr_mlp: float = 1e-3          # fully connected heads
    lr_encoding: float = 1e-2     # hash-table features
    lr_decay: float = 5e-5
    warmup_prune: int = 5000
    max_iters: int = 30000
    seed: int = 0
    pruning_enabled: bool = True
    image_resize: tuple | None = None  # (480, 270) for real footage; None = native
    deterministic: bool = False
    ablation: str | None = None   # None | background | flow | deformation
    # occupancy grid
    grid_resolution: int = 128
    grid_update_interval: int = 16
    grid_decay: float = 0.95
    grid_threshold: float = 0.01
    grid_samples_per_cell: int = 1
    # field shapes
    hidden: int = 64
    geo_features: int = 15
    hash_levels: int = 16
    hash_table_size: int = 2 ** 19
    hash_features: int = 2
    hash_base_resolution: int = 16
    hash_growth: float = 1.447
    pos_bands: int = 6
    dir_bands: int = 4
    time_bands: int = 6
    max_flow: float = 0.15
    sigma_bias: float = -5.0

    def __post_init__(self):
        if self.rays_per_batch < 2:
            raise ConfigError("rays_per_batch must be >= 2")
        for name in ("samples_per_ray", "lr_mlp", "lr_encoding", "grid_resolution"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.ablation not in (None, "background", "flow", "deformation"):
            raise ConfigError(f"unknown ablation: {self.ablation}")

    def field_config(self):
        return FieldConfig(
            hash_cfg=HashGridConfig(levels=self.hash_levels, table_size=self.hash_table_size,
                                    features=self.hash_features,
                                    base_resolution=self.hash_base_resolution,
                                    growth=self.hash_growth),
            pos_bands=self.pos_bands, dir_bands=self.dir_bands, time_bands=self.time_bands,
            hidden=self.hidden, geo_features=self.geo_features, max_flow=self.max_flow,
            sigma_bias=self.sigma_bias,
        )

    def to_dict(self):
        d = asdict(self)
        if d["image_resize"] is not None:
            d["image_resize"] = list(d["image_resize"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("image_resize") is not None:
            d["image_resize"] = tuple(d["image_resize"])
        return cls(**d)


class RayBatch:
    """One frame's worth of training rays, partitioned by the motion mask."""

    def __init__(self, frame_index, time_index, camera_id,
                 static_rays, static_gt, static_m,
                 dynamic_rays, dynamic_gt_t, dynamic_gt_prev, dynamic_gt_next, dynamic_m):
        if static_m.size and not np.all(static_m < 0.5):
            raise DataError("static rays must have mask < 0.5")
        if dynamic_m.size and not np.all(dynamic_m >= 0.5):
            raise DataError("dynamic rays must have mask >= 0.5")
        for gt in (static_gt, dynamic_gt_t, dynamic_gt_prev, dynamic_gt_next):
            if gt is not None and gt.size and (gt.min() < 0 or gt.max() > 1):
                raise DataError("ground-truth colors must lie in [0, 1]")
        self.frame_index = frame_index
        self.time_index = time_index
        self.camera_id = camera_id
        self.static_rays = static_rays
        self.static_gt = static_gt
        self.static_m = static_m
        self.dynamic_rays = dynamic_rays
        self.dynamic_gt_t = dynamic_gt_t
        self.dynamic_gt_prev = dynamic_gt_prev
        self.dynamic_gt_next = dynamic_gt_next
        self.dynamic_m = dynamic_m

    @property
    def n_static(self):
        return len(self.static_rays)

    @property
    def n_dynamic(self):
        return len(self.dynamic_rays)


class TrainState:
    def __init__(self, bundle, grid, adam, config, rng, iteration=0):
        self.bundle = bundle
        self.grid = grid
        self.adam = adam          # {"static"|"deform"|"dynamic": AdamState}
        self.config = config
        self.rng = rng
        self.iteration = iteration
        self.loss_history = []    # rows: (iter, l_static, l_sceneflow, l_total, lr, wall_ms)


def init_state(dataset, config):
    fc = config.field_config()
    bundle = FieldBundle.create(fc, fc, fc, scene_box=dataset.scene_box,
                                time_count=dataset.time_count, dtype=np.float32,
                                seed=config.seed, ablation=config.ablation)
    grid = OccupancyGrid(resolution=config.grid_resolution,
                         warmup_iters=config.warmup_prune,
                         update_interval=config.grid_update_interval,
                         decay=config.grid_decay, threshold=config.grid_threshold,
                         samples_per_cell=config.grid_samples_per_cell)
    adam = {label: AdamState(store) for label, store in bundle.param_stores().items()}
    return TrainState(bundle, grid, adam, config, np.random.default_rng(config.seed))


def sample_ray_batch(dataset, state):
    """Uniform pixels from one random training frame, split by mask at 0.5.

    Dynamic rays carry same-pixel ground truth from the same-camera neighbor
    frames when those frames exist in the training split.
    """
    cfg = state.config
    rng = state.rng
    train_idx = dataset.split_indices("train")
    if not train_idx:
        raise DataError("training split is empty")
    fi = train_idx[int(rng.integers(len(train_idx)))]
    frame = dataset.frames[fi]
    cam = dataset.camera_for(fi)
    img = dataset.load_image(fi)
    mask = dataset.load_mask(fi)
    h, w = img.shape[:2]

    pix = rng.integers(0, h * w, size=cfg.rays_per_batch)
    m = mask.reshape(-1)[pix]
    if cfg.ablation == "background":
        m = np.ones_like(m)  # every ray renders through the dynamic model
    gt = img.reshape(-1, 3)[pix]
    rays = generate_rays(cam, frame.pose, pix % w, pix // w)

    dyn = m >= 0.5
    train_set = set(train_idx)

    def neighbor_gt(offset):
        ni = dataset.frame_at(frame.camera_id, frame.time_index + offset)
        if ni is None or ni not in train_set:
            return None
        return dataset.load_image(ni).reshape(-1, 3)[pix[dyn]]

    return RayBatch(
        frame_index=fi, time_index=frame.time_index, camera_id=frame.camera_id,
        static_rays=rays.select(~dyn), static_gt=gt[~dyn], static_m=m[~dyn],
        dynamic_rays=rays.select(dyn), dynamic_gt_t=gt[dyn],
        dynamic_gt_prev=neighbor_gt(-1), dynamic_gt_next=neighbor_gt(+1),
        dynamic_m=m[dyn],
    )


# ---------------------------------------------------------------------------
# losses (mean per ray so magnitudes are batch-size invariant)

def loss_static(pred, gt):
    """Mean over rays of the channel-summed squared error. Empty set -> 0."""
    pred = np.asarray(pred)
    if pred.size == 0:
        return 0.0
    return float(((pred - np.asarray(gt)) ** 2).sum(axis=-1).mean())


def loss_sceneflow(pred_t, pred_prev, pred_next, gt_t, gt_prev, gt_next):
    """Mean over dynamic rays of the sum of the present photometric terms
    (center frame, previous frame, next frame)."""
    if pred_t is None or np.asarray(pred_t).size == 0:
        return 0.0
    per_ray = ((np.asarray(pred_t) - np.asarray(gt_t)) ** 2).sum(axis=-1)
    for pred, gt in ((pred_prev, gt_prev), (pred_next, gt_next)):
        if pred is not None and gt is not None:
            per_ray = per_ray + ((np.asarray(pred) - np.asarray(gt)) ** 2).sum(axis=-1)
    return float(per_ray.mean())


def loss_total(l_static, l_sceneflow):
    """Unweighted sum of the two losses."""
    return l_static + l_sceneflow


def _lr_for(cfg, iteration):
    # hash-table sections are named grid.lNN, MLP sections trunk./color./mlp.
    def rate(section_name):
        base = cfg.lr_encoding if section_name.startswith("grid.") else cfg.lr_mlp
        return lr_schedule(base, iteration, cfg.lr_decay)

    return rate


def train_step(state, dataset):
    """One optimization step: batch -> render -> losses -> backward -> Adam ->
    occupancy update. Appends a loss-history row and bumps the iteration."""
    t0 = time.perf_counter()
    cfg = state.config
    bundle = state.bundle
    it = state.iteration
    batch = sample_ray_batch(dataset, state)
    grid = state.grid if cfg.pruning_enabled else None

    l_s = 0.0
    if batch.n_static:
        out_s, tape_s = render_static(bundle, batch.static_rays,
                                      n_samples=cfg.samples_per_ray, grid=grid,
                                      want_tape=True)
        l_s = loss_static(out_s.color, batch.static_gt)
        d_color = (2.0 / batch.n_static) * (out_s.color - batch.static_gt)
        render_static_backward(bundle, tape_s, d_color.astype(out_s.color.dtype))

    l_sf = 0.0
    if batch.n_dynamic:
        want_prev = batch.dynamic_gt_prev is not None and cfg.ablation != "flow"
        want_next = batch.dynamic_gt_next is not None and cfg.ablation != "flow"
        res = render_dynamic(bundle, batch.dynamic_rays, frame_index=batch.time_index,
                             n_samples=cfg.samples_per_ray, grid=grid, want_tape=True,
                             want_prev=want_prev, want_next=want_next)
        pred_prev = res.out_prev.color if res.out_prev is not None else None
        pred_next = res.out_next.color if res.out_next is not None else None
        gt_prev = batch.dynamic_gt_prev if want_prev else None
        gt_next = batch.dynamic_gt_next if want_next else None
        l_sf = loss_sceneflow(res.out_t.color, pred_prev, pred_next,
                              batch.dynamic_gt_t, gt_prev, gt_next)
        scale = 2.0 / batch.n_dynamic
        dc_t = (scale * (res.out_t.color - batch.dynamic_gt_t)).astype(np.float32)
        dc_p = (scale * (pred_prev - gt_prev)).astype(np.float32) \
            if pred_prev is not None and gt_prev is not None else None
        dc_n = (scale * (pred_next - gt_next)).astype(np.float32) \
            if pred_next is not None and gt_next is not None else None
        render_dynamic_backward(bundle, res.tape, dc_t, dc_p, dc_n)

    l_total = loss_total(l_s, l_sf)
    if not np.isfinite(l_total):
        raise TrainingError(
            f"non-finite loss at iteration {it} (frame {batch.frame_index}, "
            f"time {batch.time_index})")

    rate = _lr_for(cfg, it)
    for label, store in bundle.param_stores().items():
        adam_step(state.adam[label], store, rate)

    if cfg.pruning_enabled:
        occupancy_update(state.grid, bundle, it, rng=state.rng)

    state.iteration = it + 1
    wall_ms = 0.0 if cfg.deterministic else (time.perf_counter() - t0) * 1e3
    state.loss_history.append(
        (it, l_s, l_sf, l_total, lr_schedule(cfg.lr_mlp, it, cfg.lr_decay), wall_ms))
    return state


def train_loop(state, dataset, iters, log_every=0):
    for _ in range(iters):
        train_step(state, dataset)
        if log_every and state.iteration % log_every == 0:
            it, l_s, l_sf, l_t, lr, _ = state.loss_history[-1]
            print(f"iter {it:6d}  loss {l_t:.5f}  (static {l_s:.5f}  flow {l_sf:.5f}  "
                  f"lr {lr:.2e}  occ {state.grid.occupancy_fraction():.2f})")
    return state


def write_loss_csv(history, path):
    with open(path, "w") as f:
        f.write("iter,l_static,l_sceneflow,l_total,lr,wall_ms\n")
        for it, l_s, l_sf, l_t, lr, wall in history:
            f.write(f"{it},{float(l_s)!r},{float(l_sf)!r},{float(l_t)!r},"
                    f"{float(lr)!r},{float(wall)!r}\n")


# ---------------------------------------------------------------------------
# checkpointing: magic + manifest JSON + little-endian f32 blobs

def _rng_state_to_json(rng):
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": format(st["state"]["state"], "x"),
        "inc": format(st["state"]["inc"], "x"),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _rng_state_from_json(d):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"], 16), "inc": int(d["inc"], 16)},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }
    return rng


def _section_stream(state):
    """(name, array) pairs in manifest order: per store, values then Adam moments."""
    for label, store in state.bundle.param_stores().items():
        adam = state.adam[label]
        for sec in store.sections:
            yield f"{label}:{sec.name}", sec.values
            yield f"{label}:{sec.name}#m", adam.m[sec.name]
            yield f"{label}:{sec.name}#v", adam.v[sec.name]
    yield "grid:density_cache", state.grid.density_cache


def checkpoint_save(state, path):
    manifest = {
        "magic": CHECKPOINT_MAGIC.decode(),
        "version": 1,
        "iteration": state.iteration,
        "config": state.config.to_dict(),
        "time_count": state.bundle.time_count,
        "scene_box": [[float(v) for v in row] for row in state.bundle.scene_box],
        "adam_steps": {label: a.step_count for label, a in state.adam.items()},
        "rng_state": _rng_state_to_json(state.rng),
        "sections": [{"name": name, "shape": list(arr.shape)}
                     for name, arr in _section_stream(state)],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for _, arr in _section_stream(state):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def checkpoint_load(path):
    """Rebuild a TrainState; raises CheckpointError before touching any state
    if the file is corrupt or truncated."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if raw[:5] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    mlen = int.from_bytes(raw[5:13], "little")
    try:
        manifest = json.loads(raw[13 : 13 + mlen])
    except json.JSONDecodeError:
        raise CheckpointError(f"corrupt checkpoint manifest in {path}") from None
    config = TrainConfig.from_dict(manifest["config"])

    # parse every blob before constructing any state
    arrays = {}
    offset = 13 + mlen
    for sec in manifest["sections"]:
        shape = tuple(sec["shape"])
        nbytes = int(np.prod(shape)) * 4
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"truncated checkpoint: section {sec['name']}")
        arrays[sec["name"]] = np.frombuffer(chunk, "<f4").reshape(shape)
        offset += nbytes

    class _BoxDataset:
        scene_box = np.array(manifest["scene_box"])
        time_count = manifest["time_count"]

    state = init_state(_BoxDataset(), config)
    state.iteration = manifest["iteration"]
    state.rng = _rng_state_from_json(manifest["rng_state"])
    for label, store in state.bundle.param_stores().items():
        adam = state.adam[label]
        adam.step_count = manifest["adam_steps"][label]
        for sec in store.sections:
            for suffix, dest in (("", sec.values), ("#m", adam.m[sec.name]),
                                 ("#v", adam.v[sec.name])):
                key = f"{label}:{sec.name}{suffix}"
                if key not in arrays:
                    raise CheckpointError(f"checkpoint missing section {key}")
                if arrays[key].shape != dest.shape:
                    raise CheckpointError(f"shape mismatch for section {key}")
                dest[...] = arrays[key]
    cache = arrays.get("grid:density_cache")
    if cache is None or cache.shape != state.grid.density_cache.shape:
        raise CheckpointError("checkpoint missing or mismatched grid:density_cache")
    state.grid.density_cache[...] = cache
    if state.iteration < state.grid.warmup_iters:
        state.grid.occupied[:] = True
    else:
        state.grid.occupied = state.grid.density_cache > state.grid.threshold
    return state
