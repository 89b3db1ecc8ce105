"""Input featurization: NeRF-style frequency encoding and multiresolution hash grids.

Frequency encoding is stateless. The hash grid owns trainable per-level feature
tables registered as ParamStore sections; its backward scatter-adds into the
table gradients and also returns d/d(position) so deformation and scene-flow
offsets can be trained through it. The per-level interpolation loops are numba
kernels (serial, so the scatter order and therefore training is deterministic).
"""

import math

import numpy as np
from numba import njit

from .errors import ConfigError

# spatial hash primes (x component deliberately unmixed)
_PRIMES = (1, 2654435761, 805459861)

# corner offsets of a voxel, bit a of corner index = offset along axis a
_CORNERS = np.array(
    [[(c >> a) & 1 for a in range(3)] for c in range(8)], dtype=np.int64
)  # (8, 3)


class FreqConfig:
    """Sin/cos frequency bands 2^k * pi, k = 0..num_bands-1."""

    def __init__(self, num_bands, include_input=True):
        if num_bands < 0:
            raise ConfigError("num_bands must be >= 0")
        self.num_bands = int(num_bands)
        self.include_input = bool(include_input)

    def output_width(self, in_dim):
        return in_dim * (2 * self.num_bands + (1 if self.include_input else 0))


def freq_encode(x, cfg):
    """x: (..., d) in [-1, 1] -> (..., d*(2L [+ d])).

    Layout: [x (if included), sin(2^0 pi x), cos(2^0 pi x), sin(2^1 pi x), ...],
    each band covering all input dims.
    """
    x = np.asarray(x)
    parts = [x] if cfg.include_input else []
    for k in range(cfg.num_bands):
        ang = (math.pi * (2.0 ** k)) * x
        parts.append(np.sin(ang))
        parts.append(np.cos(ang))
    if not parts:
        return x[..., :0]
    return np.concatenate(parts, axis=-1)


def freq_encode_backward(x, cfg, dy):
    """d(freq_encode)/dx^T @ dy, recomputing the trig terms."""
    x = np.asarray(x)
    d = x.shape[-1]
    dx = np.zeros_like(x)
    ofs = 0
    if cfg.include_input:
        dx += dy[..., :d]
        ofs = d
    for k in range(cfg.num_bands):
        scale = math.pi * (2.0 ** k)
        ang = scale * x
        dx += scale * np.cos(ang) * dy[..., ofs : ofs + d]
        dx -= scale * np.sin(ang) * dy[..., ofs + d : ofs + 2 * d]
        ofs += 2 * d
    return dx


class HashGridConfig:
    """Multiresolution feature grid shape parameters."""

    def __init__(self, levels=16, table_size=2 ** 19, features=2,
                 base_resolution=16, growth=1.447):
        if table_size < 1 or (table_size & (table_size - 1)) != 0:
            raise ConfigError("table_size must be a power of two")
        if base_resolution < 2:
            raise ConfigError("base_resolution must be >= 2")
        if growth <= 1.0:
            raise ConfigError("growth factor must be > 1")
        if levels < 1 or features < 1:
            raise ConfigError("levels and features must be >= 1")
        self.levels = int(levels)
        self.table_size = int(table_size)
        self.features = int(features)
        self.base_resolution = int(base_resolution)
        self.growth = float(growth)

    @property
    def output_width(self):
        return self.levels * self.features


def level_resolution(cfg, level):
    """Vertices per axis at a level: floor(base * growth^level)."""
    if not 0 <= level < cfg.levels:
        raise ConfigError(f"level {level} out of range [0, {cfg.levels})")
    return int(math.floor(cfg.base_resolution * cfg.growth ** level))


def hash_index(cells, resolution, cfg):
    """Table rows for integer vertex coords (..., 3) at a given level resolution.

    Dense row-major indexing when the level's full grid fits in the table,
    otherwise the xor-of-primes spatial hash masked to table_size - 1. Dense
    indices and hashed indices are both < table_size, so the two regimes share
    one table layout.
    """
    cells = np.asarray(cells, dtype=np.int64)
    if resolution ** 3 <= cfg.table_size:
        return cells[..., 0] + cells[..., 1] * resolution + cells[..., 2] * (resolution ** 2)
    h = cells[..., 0] * _PRIMES[0]
    h = h ^ (cells[..., 1] * _PRIMES[1])
    h = h ^ (cells[..., 2] * _PRIMES[2])
    return h & (cfg.table_size - 1)


@njit(cache=True)
def _encode_level(x, table, res, tsize, out, idx, weights, frac):
    """Trilinear gather for one level; fills out/idx/weights/frac in place."""
    b = x.shape[0]
    f = table.shape[1]
    dense = res * res * res <= tsize
    mask = tsize - 1
    r1 = res - 1
    for i in range(b):
        fx = x[i, 0] * r1
        fy = x[i, 1] * r1
        fz = x[i, 2] * r1
        cx = int(np.floor(fx))
        cy = int(np.floor(fy))
        cz = int(np.floor(fz))
        if cx < 0:
            cx = 0
        elif cx > res - 2:
            cx = res - 2
        if cy < 0:
            cy = 0
        elif cy > res - 2:
            cy = res - 2
        if cz < 0:
            cz = 0
        elif cz > res - 2:
            cz = res - 2
        rx = fx - cx
        ry = fy - cy
        rz = fz - cz
        frac[i, 0] = rx
        frac[i, 1] = ry
        frac[i, 2] = rz
        for fi in range(f):
            out[i, fi] = 0.0
        for corner in range(8):
            bx = corner & 1
            by = (corner >> 1) & 1
            bz = (corner >> 2) & 1
            if dense:
                tid = (cx + bx) + (cy + by) * res + (cz + bz) * res * res
            else:
                tid = (((cx + bx) * 1) ^ ((cy + by) * 2654435761)
                       ^ ((cz + bz) * 805459861)) & mask
            w = (rx if bx else 1.0 - rx) * (ry if by else 1.0 - ry) \
                * (rz if bz else 1.0 - rz)
            idx[i, corner] = tid
            weights[i, corner] = w
            for fi in range(f):
                out[i, fi] += w * table[tid, fi]


@njit(cache=True)
def _backward_level(idx, weights, frac, dy, table, grads, res, dx):
    """Scatter-add dL/d(table) and accumulate dL/dx for one level."""
    b = idx.shape[0]
    f = grads.shape[1]
    r1 = res - 1
    for i in range(b):
        rx = frac[i, 0]
        ry = frac[i, 1]
        rz = frac[i, 2]
        for corner in range(8):
            bx = corner & 1
            by = (corner >> 1) & 1
            bz = (corner >> 2) & 1
            tid = idx[i, corner]
            w = weights[i, corner]
            gc = 0.0
            for fi in range(f):
                d = dy[i, fi]
                grads[tid, fi] += w * d
                gc += table[tid, fi] * d
            wx = rx if bx else 1.0 - rx
            wy = ry if by else 1.0 - ry
            wz = rz if bz else 1.0 - rz
            sx = 1.0 if bx else -1.0
            sy = 1.0 if by else -1.0
            sz = 1.0 if bz else -1.0
            dx[i, 0] += gc * sx * wy * wz * r1
            dx[i, 1] += gc * wx * sy * wz * r1
            dx[i, 2] += gc * wx * wy * sz * r1


class HashLevelTape:
    __slots__ = ("idx", "weights", "fracs", "resolution")

    def __init__(self, idx, weights, fracs, resolution):
        self.idx = idx          # (B, 8) table rows
        self.weights = weights  # (B, 8) trilinear weights
        self.fracs = fracs      # (B, 3) in-voxel coordinates
        self.resolution = resolution


class HashGridTable:
    """Trainable multiresolution grid bound to sections ``{prefix}.l{level}``.

    backward() re-gathers features from the live table, so it must run before
    the next parameter update (the trainer's forward/backward pairing).
    """

    def __init__(self, cfg, prefix):
        self.cfg = cfg
        self.prefix = prefix
        self.section_names = [f"{prefix}.l{l:02d}" for l in range(cfg.levels)]
        self.resolutions = [level_resolution(cfg, l) for l in range(cfg.levels)]

    def register(self, store, rng):
        for name in self.section_names:
            init = rng.uniform(-1e-4, 1e-4, size=(self.cfg.table_size, self.cfg.features))
            store.add(name, init)

    @property
    def output_width(self):
        return self.cfg.output_width

    def encode(self, store, x):
        """x: (B, 3) in [0, 1]^3 -> ((B, levels*features), tape).

        Per level: trilinear interpolation of the 8 corner features of the
        enclosing voxel; indices follow hash_index (dense or xor-of-primes).
        """
        x = np.ascontiguousarray(x, dtype=store.dtype)
        b = x.shape[0]
        f = self.cfg.features
        out = np.empty((b, self.cfg.levels * f), dtype=store.dtype)
        tapes = []
        for l, res in enumerate(self.resolutions):
            table = store.get(self.section_names[l]).values
            idx = np.empty((b, 8), dtype=np.int32)
            weights = np.empty((b, 8), dtype=store.dtype)
            frac = np.empty((b, 3), dtype=store.dtype)
            _encode_level(x, table, res, self.cfg.table_size,
                          out[:, l * f : (l + 1) * f], idx, weights, frac)
            tapes.append(HashLevelTape(idx, weights, frac, res))
        return out, tapes

    def backward(self, store, tapes, dy):
        """Scatter-add table gradients; return d/dx (B, 3)."""
        dy = np.ascontiguousarray(dy, dtype=store.dtype)
        f = self.cfg.features
        b = dy.shape[0]
        dx = np.zeros((b, 3), dtype=store.dtype)
        for l, tape in enumerate(tapes):
            sec = store.get(self.section_names[l])
            _backward_level(tape.idx, tape.weights, tape.fracs,
                            dy[:, l * f : (l + 1) * f], sec.values, sec.grads,
                            tape.resolution, dx)
        return dx
