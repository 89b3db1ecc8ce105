"""Closed-form density/color fields for oracle scenes (homogeneous slabs,
spheres). They satisfy the same query protocol as the learned static field so
the render path under test is identical; they are not trainable."""

import numpy as np

from .errors import UsageError


class AnalyticStaticField:
    """Static field defined by sigma(x) and color(x, d) callables on [0,1]^3."""

    def __init__(self, sigma_fn, color_fn):
        self.sigma_fn = sigma_fn
        self.color_fn = color_fn

    def query(self, x, d, d_feat=None):
        x = np.asarray(x, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        sigma = np.asarray(self.sigma_fn(x), dtype=np.float64)
        rgb = np.asarray(self.color_fn(x, d), dtype=np.float64)
        return sigma, rgb, None

    def backward(self, *_args, **_kw):
        raise UsageError("analytic fields are not trainable")


def box_density(lo, hi, sigma0):
    """Constant density inside an axis-aligned box, exactly zero outside."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    def sigma(x):
        inside = np.all((x >= lo) & (x < hi), axis=-1)
        return np.where(inside, sigma0, 0.0)

    return sigma


def ball_density(center, radius, sigma0):
    """Constant density inside a ball, exactly zero outside."""
    center = np.asarray(center, dtype=np.float64)

    def sigma(x):
        r2 = ((x - center) ** 2).sum(axis=-1)
        return np.where(r2 < radius * radius, sigma0, 0.0)

    return sigma


def const_color(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)

    def color(x, d):
        return np.broadcast_to(rgb, x.shape[:-1] + (3,)).copy()

    return color


def ball_cell_overlap_oracle(center, radius, resolution):
    """Occupancy oracle: True for grid cells that intersect the ball.

    A cell intersects iff the distance from the ball center to the cell (as an
    axis-aligned box) is below the radius. Used to verify that a converged
    occupancy grid is a superset of the ball's support.
    """
    n = resolution
    axis = np.arange(n) / n
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    lo = np.stack([gx, gy, gz], axis=-1)
    hi = lo + 1.0 / n
    nearest = np.clip(np.asarray(center, dtype=np.float64), lo, hi)
    d2 = ((nearest - center) ** 2).sum(axis=-1)
    return d2 < radius * radius
