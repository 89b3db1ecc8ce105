"""Ray generation, quadrature sampling, emission-absorption compositing,
occupancy-grid pruning, and static/dynamic blending.

Compositing follows the standard quadrature form: alpha_i = 1 - exp(-sigma_i
delta_i), transmittance tau accumulates the running product of (1 - alpha),
weights w_i = tau_i - tau_{i+1} so that sum(w) telescopes to 1 - tau_final at
machine precision. Pruned samples keep their array slots with sigma = 0, which
preserves shapes, gradients, and exact equivalence when the pruned density is
exactly zero.
"""

import numpy as np

from .encoding import freq_encode
from .errors import ConfigError, DataError, InputError

DEPTH_OPACITY_FLOOR = 1e-3  # below this opacity the expected depth reports far


class Ray:
    """Single ray in scene units."""

    __slots__ = ("origin", "direction", "near", "far")

    def __init__(self, origin, direction, near, far):
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        if not (far > near >= 0):
            raise ConfigError(f"require far > near >= 0, got near={near} far={far}")
        if abs(np.linalg.norm(direction) - 1.0) > 1e-5:
            raise InputError("ray direction must be unit length")
        self.origin = origin
        self.direction = direction
        self.near = float(near)
        self.far = float(far)


class Rays:
    """Struct-of-arrays ray batch: origins/dirs (R, 3), near/far (R,)."""

    __slots__ = ("origins", "dirs", "near", "far")

    def __init__(self, origins, dirs, near, far):
        self.origins = np.asarray(origins, dtype=np.float64)
        self.dirs = np.asarray(dirs, dtype=np.float64)
        self.near = np.asarray(near, dtype=np.float64)
        self.far = np.asarray(far, dtype=np.float64)

    @classmethod
    def from_list(cls, rays):
        return cls(
            np.stack([r.origin for r in rays]),
            np.stack([r.direction for r in rays]),
            np.array([r.near for r in rays]),
            np.array([r.far for r in rays]),
        )

    @classmethod
    def single(cls, ray):
        return cls.from_list([ray])

    def __len__(self):
        return self.origins.shape[0]

    def select(self, mask_or_idx):
        return Rays(self.origins[mask_or_idx], self.dirs[mask_or_idx],
                    self.near[mask_or_idx], self.far[mask_or_idx])


def generate_ray(camera, pose, u, v):
    """Pinhole ray through pixel center (u + .5, v + .5); camera looks down -z."""
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise InputError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height}")
    pose = np.asarray(pose, dtype=np.float64)
    rot = pose[:3, :3]
    if abs(np.linalg.det(rot)) < 1e-8:
        raise DataError("degenerate pose: rotation is not invertible")
    d_cam = np.array([(u + 0.5 - camera.cx) / camera.fx,
                      (v + 0.5 - camera.cy) / camera.fy,
                      -1.0])
    d = rot @ d_cam
    d = d / np.linalg.norm(d)
    return Ray(pose[:3, 3].copy(), d, camera.near, camera.far)


def generate_rays(camera, pose, us, vs):
    """Vectorized generate_ray for pixel index arrays us, vs."""
    pose = np.asarray(pose, dtype=np.float64)
    rot = pose[:3, :3]
    if abs(np.linalg.det(rot)) < 1e-8:
        raise DataError("degenerate pose: rotation is not invertible")
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    d_cam = np.stack([(us + 0.5 - camera.cx) / camera.fx,
                      (vs + 0.5 - camera.cy) / camera.fy,
                      -np.ones_like(us)], axis=-1)
    d = d_cam @ rot.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    n = us.shape[0]
    origins = np.broadcast_to(pose[:3, 3], (n, 3)).copy()
    return Rays(origins, d, np.full(n, camera.near), np.full(n, camera.far))


def camera_rays(camera, pose):
    """All pixel rays of a camera in row-major (v, u) order."""
    vs, us = np.mgrid[0 : camera.height, 0 : camera.width]
    return generate_rays(camera, pose, us.ravel(), vs.ravel())


class SampleSet:
    """Quadrature points along a ray batch.

    depths/deltas/keep: (R, N); positions: (R, N, 3) in scene units.
    """

    __slots__ = ("depths", "deltas", "positions", "keep")

    def __init__(self, depths, deltas, positions, keep=None):
        self.depths = depths
        self.deltas = deltas
        self.positions = positions
        self.keep = keep if keep is not None else np.ones(depths.shape, dtype=bool)


def sample_points(rays, n, mode="midpoint", rng=None):
    """Place n quadrature points per ray between near and far.

    midpoint: deterministic bin centers, every delta equal to the bin width.
    stratified: one uniform draw per bin; deltas are forward differences with
    the last delta closing the gap to far.
    """
    if isinstance(rays, Ray):
        rays = Rays.single(rays)
    if n < 1:
        raise ConfigError("need at least one sample per ray")
    span = (rays.far - rays.near)[:, None]  # (R, 1)
    if mode == "midpoint":
        frac = (np.arange(n) + 0.5) / n
        depths = rays.near[:, None] + frac[None, :] * span
        deltas = np.broadcast_to(span / n, depths.shape).copy()
    elif mode == "stratified":
        if rng is None:
            raise ConfigError("stratified sampling needs an rng")
        frac = (np.arange(n) + rng.uniform(size=(len(rays), n))) / n
        depths = rays.near[:, None] + frac * span
        deltas = np.empty_like(depths)
        deltas[:, :-1] = np.diff(depths, axis=1)
        deltas[:, -1] = rays.far - depths[:, -1]
    else:
        raise ConfigError(f"unknown sampling mode: {mode}")
    positions = rays.origins[:, None, :] + depths[..., None] * rays.dirs[:, None, :]
    return SampleSet(depths, deltas, positions)


class RenderOutput:
    """Composited ray colors plus per-sample weights/transmittance diagnostics."""

    __slots__ = ("color", "weights", "transmittance", "expected_depth", "opacity")

    def __init__(self, color, weights, transmittance, expected_depth, opacity):
        self.color = color              # (R, 3)
        self.weights = weights          # (R, N)
        self.transmittance = transmittance  # (R, N), tau before sample i; tau_0 = 1
        self.expected_depth = expected_depth  # (R,)
        self.opacity = opacity          # (R,) = sum(weights) = 1 - tau_final


class CompositeCtx:
    __slots__ = ("deltas", "trans", "alphas", "colors", "weights")

    def __init__(self, deltas, trans, alphas, colors, weights):
        self.deltas = deltas
        self.trans = trans
        self.alphas = alphas
        self.colors = colors
        self.weights = weights


def composite(sigmas, colors, deltas, depths=None, far=None):
    """Emission-absorption quadrature over (R, N) samples.

    Returns (RenderOutput, ctx) where ctx feeds composite_backward. depths/far
    fill the expected-depth channel when provided (rays with opacity below
    DEPTH_OPACITY_FLOOR report far).
    """
    sigmas = np.asarray(sigmas)
    colors = np.asarray(colors)
    deltas = np.asarray(deltas)
    if np.any(sigmas < 0):
        raise ConfigError("composite requires sigma >= 0 (field activation contract)")
    surv = np.exp(-sigmas * deltas)        # (R, N) per-segment survival
    alphas = 1.0 - surv
    trans = np.cumprod(surv, axis=1)       # tau after sample i
    trans_before = np.empty_like(trans)    # tau before sample i (tau_0 = 1)
    trans_before[:, 0] = 1.0
    trans_before[:, 1:] = trans[:, :-1]
    weights = trans_before - trans         # telescopes exactly: sum = 1 - tau_final
    color = (weights[..., None] * colors).sum(axis=1)
    opacity = weights.sum(axis=1)
    if depths is not None:
        expected = (weights * depths).sum(axis=1) + trans[:, -1] * far
        expected = np.where(opacity < DEPTH_OPACITY_FLOOR, far, expected)
    else:
        expected = np.full(sigmas.shape[0], np.nan)
    out = RenderOutput(color, weights, trans_before, expected, opacity)
    return out, CompositeCtx(deltas, trans_before, alphas, colors, weights)


def composite_backward(ctx, d_color):
    """Gradients of composite color w.r.t. (sigmas, colors) given dL/d_color (R, 3)."""
    d_color = np.asarray(d_color)
    d_colors = ctx.weights[..., None] * d_color[:, None, :]  # (R, N, 3)
    q = (ctx.colors * d_color[:, None, :]).sum(axis=-1)      # (R, N) c_j . dC
    wq = ctx.weights * q
    # suffix sum over j > i
    suffix = np.zeros_like(wq)
    suffix[:, :-1] = np.cumsum(wq[:, ::-1], axis=1)[:, ::-1][:, 1:]
    d_sigmas = ctx.deltas * (ctx.trans * (1.0 - ctx.alphas) * q - suffix)
    return d_sigmas, d_colors


def blend(c_static, c_dynamic, m):
    """Mask-thresholded selection: dynamic wins at m >= 0.5, no mixing."""
    c_static = np.asarray(c_static)
    c_dynamic = np.asarray(c_dynamic)
    m = np.asarray(m)
    if m.ndim == c_static.ndim - 1:
        m = m[..., None]
    return np.where(m >= 0.5, c_dynamic, c_static)


# ---------------------------------------------------------------------------
# occupancy grid

class OccupancyGrid:
    """Dense density cache over the unit cube driving sample pruning.

    All cells count as occupied during warm-up; afterwards the cache is a
    decayed running max of jittered density probes (both fields, several
    times) and a cell is occupied while its cache exceeds the threshold.
    """

    def __init__(self, resolution=128, warmup_iters=5000, update_interval=16,
                 decay=0.95, threshold=0.01, samples_per_cell=1, jitter_cells=1.0):
        if resolution < 1:
            raise ConfigError("grid resolution must be >= 1")
        self.resolution = int(resolution)
        self.warmup_iters = int(warmup_iters)
        self.update_interval = int(update_interval)
        self.decay = float(decay)
        self.threshold = float(threshold)
        self.samples_per_cell = int(samples_per_cell)
        self.jitter_cells = float(jitter_cells)
        n = self.resolution
        self.occupied = np.ones((n, n, n), dtype=bool)
        self.density_cache = np.zeros((n, n, n), dtype=np.float32)
        self._centers = None

    def cell_centers(self):
        if self._centers is None:
            n = self.resolution
            axis = (np.arange(n) + 0.5) / n
            gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
            # flat order matches cell_index: (ix * n + iy) * n + iz
            self._centers = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        return self._centers

    def cell_index(self, positions):
        """Flat cell ids for normalized positions (clipped into the grid)."""
        n = self.resolution
        cells = np.clip((positions * n).astype(np.int64), 0, n - 1)
        return (cells[..., 0] * n + cells[..., 1]) * n + cells[..., 2]

    def occupied_flat(self):
        return self.occupied.reshape(-1)

    def occupancy_fraction(self):
        return float(self.occupied.mean())


def _probe_density(bundle, pts, rng, n_times):
    """Max density of both fields at pts (dynamic probed at n_times random times).

    Probes the fields directly at the sample point; the +-1.5 cell jitter in
    occupancy_update covers the small trained deformation offsets.
    """
    chunk = 1 << 16
    dtype = np.float32
    best = np.zeros(pts.shape[0], dtype=dtype)
    d_dummy = np.zeros((min(chunk, pts.shape[0]), 3))
    d_dummy[:, 2] = -1.0
    times = rng.uniform(0.0, 1.0, size=n_times) if bundle.dynamic is not None else []
    for start in range(0, pts.shape[0], chunk):
        p = pts[start : start + chunk]
        d = d_dummy[: p.shape[0]]
        if bundle.static is not None:
            sigma, _, _ = bundle.static.query(p, d)
            np.maximum(best[start : start + chunk], sigma, out=best[start : start + chunk])
        if bundle.dynamic is not None:
            for t in times:
                sample, _ = bundle.dynamic.query(p, d, float(t))
                np.maximum(best[start : start + chunk], sample.sigma,
                           out=best[start : start + chunk])
    return best


def occupancy_update(grid, bundle, iteration, rng=None, force=False):
    """Refresh the density cache and occupancy mask between training steps."""
    if iteration < grid.warmup_iters:
        grid.occupied[:] = True
        return grid
    if not force and (iteration - grid.warmup_iters) % grid.update_interval != 0:
        return grid
    if rng is None:
        rng = np.random.default_rng(0)
    n = grid.resolution
    cell = 1.0 / n
    centers = grid.cell_centers()
    amp = (0.5 + grid.jitter_cells) * cell
    best = np.zeros(centers.shape[0], dtype=np.float32)
    for _ in range(grid.samples_per_cell):
        pts = np.clip(centers + rng.uniform(-amp, amp, size=centers.shape), 0.0, 1.0)
        np.maximum(best, _probe_density(bundle, pts, rng, n_times=4), out=best)
    cache = grid.density_cache.reshape(-1)
    np.maximum(grid.decay * cache, best, out=cache)
    grid.occupied = (grid.density_cache > grid.threshold)
    return grid


def occupancy_filter(grid, samples):
    """Clear keep-flags of samples in unoccupied cells; geometry untouched."""
    occ = grid.occupied_flat()[grid.cell_index(samples.positions)]
    samples.keep = samples.keep & occ
    return samples


# ---------------------------------------------------------------------------
# render drivers

class StaticRenderTape:
    __slots__ = ("kidx", "field_tape", "ctx", "shape")

    def __init__(self, kidx, field_tape, ctx, shape):
        self.kidx = kidx
        self.field_tape = field_tape
        self.ctx = ctx
        self.shape = shape


def _keep_mask(bundle, grid, positions_norm, shape):
    if grid is None:
        return None, np.arange(shape[0] * shape[1])
    occ = grid.occupied_flat()[grid.cell_index(positions_norm.reshape(-1, 3))]
    return occ, np.nonzero(occ)[0]


def _ray_dir_features(field, rays, n_samples, kidx, dtype):
    """Per-ray freq_encode(d) repeated over samples (None for analytic fields)."""
    cfg = getattr(field, "cfg", None)
    if cfg is None:
        return None
    fd = freq_encode(rays.dirs.astype(dtype), cfg.dir_freq).astype(dtype, copy=False)
    return np.repeat(fd, n_samples, axis=0)[kidx]


def _scatter(dtype, shape, kidx, sigma_k, rgb_k):
    sigma = np.zeros(shape[0] * shape[1], dtype=dtype)
    rgb = np.zeros((shape[0] * shape[1], 3), dtype=dtype)
    sigma[kidx] = sigma_k
    rgb[kidx] = rgb_k
    return sigma.reshape(shape), rgb.reshape(shape + (3,))


def render_static(bundle, rays, n_samples=256, grid=None, mode="midpoint",
                  rng=None, want_tape=False):
    """Composite the static field along a ray batch. Pruned samples add sigma=0."""
    if isinstance(rays, Ray):
        rays = Rays.single(rays)
    ss = sample_points(rays, n_samples, mode=mode, rng=rng)
    shape = ss.depths.shape
    pnorm = bundle.normalize(ss.positions)
    _, kidx = _keep_mask(bundle, grid, pnorm, shape)
    x = pnorm.reshape(-1, 3)[kidx]
    d = np.repeat(rays.dirs, n_samples, axis=0)[kidx]
    dtype = bundle.static.store.dtype if hasattr(bundle.static, "store") else np.float64
    d_feat = _ray_dir_features(bundle.static, rays, n_samples, kidx, dtype)
    sigma_k, rgb_k, ftape = bundle.static.query(x, d, d_feat=d_feat)
    sigma, rgb = _scatter(dtype, shape, kidx, sigma_k, rgb_k)
    out, ctx = composite(sigma, rgb, ss.deltas.astype(dtype),
                         depths=ss.depths.astype(dtype), far=rays.far.astype(dtype))
    if want_tape:
        return out, StaticRenderTape(kidx, ftape, ctx, shape)
    return out


def render_static_backward(bundle, tape, d_color):
    """Backprop a color gradient through composite and the static field."""
    d_sigma, d_rgb = composite_backward(tape.ctx, d_color)
    bundle.static.backward(tape.field_tape,
                           d_sigma.reshape(-1)[tape.kidx],
                           d_rgb.reshape(-1, 3)[tape.kidx])


class DynamicRenderTape:
    __slots__ = ("kidx", "shape", "deform_tape", "deform_inside", "center_tape",
                 "ctx_t", "prev", "next")

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw.get(k))


class _NeighborTape:
    __slots__ = ("tape", "ctx", "inside")

    def __init__(self, tape, ctx, inside):
        self.tape = tape
        self.ctx = ctx
        self.inside = inside


class DynamicRender:
    """Outputs of render_dynamic at t and (when present) its frame neighbors."""

    __slots__ = ("out_t", "out_prev", "out_next", "tape")

    def __init__(self, out_t, out_prev, out_next, tape=None):
        self.out_t = out_t
        self.out_prev = out_prev
        self.out_next = out_next
        self.tape = tape


def render_dynamic(bundle, rays, frame_index, n_samples=256, grid=None,
                   mode="midpoint", rng=None, want_tape=False,
                   want_prev=True, want_next=True):
    """Deform sample points, composite the dynamic field at t, and re-composite
    at the neighbor frames through the predicted scene flow."""
    if isinstance(rays, Ray):
        rays = Rays.single(rays)
    if not 0 <= frame_index < bundle.time_count:
        raise InputError(f"frame index {frame_index} outside [0, {bundle.time_count})")
    t = bundle.frame_time(frame_index)
    dt = bundle.time_delta()
    has_prev = want_prev and frame_index > 0
    has_next = want_next and frame_index < bundle.time_count - 1

    ss = sample_points(rays, n_samples, mode=mode, rng=rng)
    shape = ss.depths.shape
    pnorm = bundle.normalize(ss.positions)
    _, kidx = _keep_mask(bundle, grid, pnorm, shape)
    dtype = bundle.dynamic.store.dtype if hasattr(bundle.dynamic, "store") else np.float64
    x = pnorm.reshape(-1, 3)[kidx].astype(dtype)
    d = np.repeat(rays.dirs, n_samples, axis=0)[kidx].astype(dtype)
    deltas = ss.deltas.astype(dtype)
    depths = ss.depths.astype(dtype)
    far = rays.far.astype(dtype)

    deform_feat = _ray_dir_features(bundle.deform, rays, n_samples, kidx, dtype) \
        if bundle.deform is not None else None
    dyn_feat = _ray_dir_features(bundle.dynamic, rays, n_samples, kidx, dtype)
    if bundle.deform is not None and bundle.ablation != "deformation":
        delta, dtape = bundle.deform.query(x, d, t, d_feat=deform_feat)
        raw = x + delta
        x_star = np.clip(raw, 0.0, 1.0)
        inside = (raw == x_star)
    else:
        dtape, x_star, inside = None, x, None

    sample, center_tape = bundle.dynamic.query(x_star, d, t, d_feat=dyn_feat)
    sigma, rgb = _scatter(dtype, shape, kidx, sample.sigma, sample.rgb)
    out_t, ctx_t = composite(sigma, rgb, deltas, depths=depths, far=far)

    def neighbor(sf, t_n):
        raw_n = x_star + sf
        x_n = np.clip(raw_n, 0.0, 1.0)
        smp, qt = bundle.dynamic.query(x_n, d, t_n, d_feat=dyn_feat)
        s_n, c_n = _scatter(dtype, shape, kidx, smp.sigma, smp.rgb)
        o, ctx = composite(s_n, c_n, deltas, depths=depths, far=far)
        return o, _NeighborTape(qt, ctx, raw_n == x_n)

    out_prev = out_next = None
    prev_t = next_t = None
    if has_prev:
        out_prev, prev_t = neighbor(sample.sf_backward, t - dt)
    if has_next:
        out_next, next_t = neighbor(sample.sf_forward, t + dt)

    tape = None
    if want_tape:
        tape = DynamicRenderTape(kidx=kidx, shape=shape, deform_tape=dtape,
                                 deform_inside=inside, center_tape=center_tape,
                                 ctx_t=ctx_t, prev=prev_t, next=next_t)
    return DynamicRender(out_t, out_prev, out_next, tape)


def render_dynamic_backward(bundle, tape, d_color_t, d_color_prev=None, d_color_next=None):
    """Backprop photometric gradients at t and the neighbor frames.

    Neighbor paths feed the center query's scene-flow heads (through the
    advected positions) and everything funnels into the deformation net.
    """
    kidx = tape.kidx
    n_kept = kidx.shape[0]
    dtype = bundle.dynamic.store.dtype
    dx_star = np.zeros((n_kept, 3), dtype=dtype)
    dsf_b = dsf_f = None

    def neighbor_back(nt, d_color):
        d_sig, d_rgb = composite_backward(nt.ctx, d_color)
        dxn = bundle.dynamic.backward(nt.tape,
                                      d_sig.reshape(-1)[kidx],
                                      d_rgb.reshape(-1, 3)[kidx])
        dxn = dxn * nt.inside  # clamp saturation stops the gradient
        return dxn

    if d_color_next is not None and tape.next is not None:
        dxn = neighbor_back(tape.next, d_color_next)
        dx_star += dxn
        dsf_f = dxn
    if d_color_prev is not None and tape.prev is not None:
        dxp = neighbor_back(tape.prev, d_color_prev)
        dx_star += dxp
        dsf_b = dxp

    d_sig, d_rgb = composite_backward(tape.ctx_t, d_color_t)
    dx_star += bundle.dynamic.backward(tape.center_tape,
                                       d_sig.reshape(-1)[kidx],
                                       d_rgb.reshape(-1, 3)[kidx],
                                       dsf_backward=dsf_b, dsf_forward=dsf_f)

    if tape.deform_tape is not None:
        bundle.deform.backward(tape.deform_tape, dx_star * tape.deform_inside)


def render_image(bundle, grid, camera, pose, frame_index=0, mask=None,
                 n_samples=256, chunk=8192):
    """Full-frame driver: per-pixel rays, static + (masked) dynamic, blended.

    mask is an (H, W) float array in [0, 1] aligned with the camera, or None
    for a pure static render (M = 0 everywhere). Under the "background"
    ablation every pixel renders through the dynamic field (M forced to 1).
    Returns (rgb (H, W, 3) linear, depth (H, W)).
    """
    h, w = camera.height, camera.width
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (h, w):
            raise DataError(f"mask shape {mask.shape} does not match image {h}x{w}")
        m_flat = mask.reshape(-1)
    else:
        m_flat = np.zeros(h * w)
    if bundle.ablation == "background":
        m_flat = np.ones(h * w)

    rays = camera_rays(camera, pose)
    rgb = np.zeros((h * w, 3), dtype=np.float32)
    depth = np.zeros(h * w, dtype=np.float32)

    dyn_mask = (m_flat >= 0.5) & (bundle.dynamic is not None)
    for flat_idx, is_dyn in ((np.nonzero(~dyn_mask)[0], False), (np.nonzero(dyn_mask)[0], True)):
        for start in range(0, flat_idx.shape[0], chunk):
            idx = flat_idx[start : start + chunk]
            sub = rays.select(idx)
            if is_dyn:
                res = render_dynamic(bundle, sub, frame_index, n_samples=n_samples,
                                     grid=grid, want_prev=False, want_next=False)
                out = res.out_t
            else:
                out = render_static(bundle, sub, n_samples=n_samples, grid=grid)
            rgb[idx] = out.color
            depth[idx] = out.expected_depth
    return rgb.reshape(h, w, 3), depth.reshape(h, w)
