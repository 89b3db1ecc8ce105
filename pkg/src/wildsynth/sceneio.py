"""Dataset model, directory format, COLMAP text import, prior-file ingestion,
and the synthetic dynamic-scene generator with analytic ground truth.

Directory layout:
    scene.json
    images/*.png          8-bit sRGB (1/2.2 gamma encode of linear radiance)
    masks/*.png           8-bit grayscale, M = value / 255
    priors/depth/*.pfm    optional depth priors (ingestion only)
    priors/flow/*.flo     optional flow priors (ingestion only)

Pose convention: 4x4 camera-to-world, right-handed, camera looks down -z,
image v grows along +y of the camera frame.
"""

import json
import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, FormatError, UnsupportedModelError
from .renderer import camera_rays

GAMMA = 2.2


# ---------------------------------------------------------------------------
# image / buffer io

def write_image_srgb(path, linear):
    """Linear [0,1] HxWx3 -> 8-bit PNG with 1/2.2 encode."""
    enc = np.clip(linear, 0.0, 1.0) ** (1.0 / GAMMA)
    Image.fromarray((enc * 255.0 + 0.5).astype(np.uint8), "RGB").save(path)


def read_image_linear(path, resize=None):
    """8-bit PNG -> linear float32 HxWx3. resize is (width, height) or None."""
    try:
        img = Image.open(path).convert("RGB")
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}") from None
    if resize is not None:
        img = img.resize(resize, Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr ** GAMMA


def write_mask(path, mask):
    Image.fromarray((np.clip(mask, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8), "L").save(path)


def read_mask(path, resize=None):
    try:
        img = Image.open(path).convert("L")
    except FileNotFoundError:
        raise DataError(f"mask file not found: {path}") from None
    if resize is not None:
        img = img.resize(resize, Image.NEAREST)
    return np.asarray(img, dtype=np.float32) / 255.0


def write_pfm(path, data, scale=-1.0):
    """Portable Float Map: 'Pf'/'PF' header, negative scale = little endian,
    rows stored bottom to top."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ConfigError("PFM data must be HxW or HxWx3")
    h, w = data.shape[:2]
    dt = "<f4" if scale < 0 else ">f4"
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(f"{scale}\n".encode())
        f.write(np.ascontiguousarray(data[::-1], dtype=dt).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise FormatError(f"not a PFM file (header {header!r}): {path}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dt = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise FormatError(f"truncated PFM payload: {path}")
        data = np.frombuffer(raw, dt).reshape((h, w, channels) if channels == 3 else (h, w))
    return np.ascontiguousarray(data[::-1]).astype(np.float32)


FLO_MAGIC = 202021.25


def write_flo(path, flow):
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ConfigError("flow must be HxWx2")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path):
    with open(path, "rb") as f:
        magic = struct.unpack("<f", f.read(4))[0]
        if magic != FLO_MAGIC:
            raise FormatError(f"not a .flo file (magic {magic}): {path}")
        w, h = struct.unpack("<ii", f.read(8))
        raw = f.read(w * h * 2 * 4)
        if len(raw) != w * h * 2 * 4:
            raise FormatError(f"truncated .flo payload: {path}")
        return np.frombuffer(raw, "<f4").reshape(h, w, 2).copy()


def load_prior(path, kind):
    """Ingest an off-the-shelf prior buffer; no loss attaches to it here."""
    if kind == "depth_pfm":
        return read_pfm(path)
    if kind == "flow_flo":
        return read_flo(path)
    raise ConfigError(f"unknown prior kind: {kind}")


# ---------------------------------------------------------------------------
# dataset model

class CameraModel:
    __slots__ = ("fx", "fy", "cx", "cy", "width", "height", "near", "far")

    def __init__(self, fx, fy, cx, cy, width, height, near, far):
        if fx <= 0 or fy <= 0:
            raise DataError("focal lengths must be positive")
        if not near < far:
            raise DataError("camera near must be below far")
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.width = int(width)
        self.height = int(height)
        self.near = float(near)
        self.far = float(far)

    def resized(self, width, height):
        sx, sy = width / self.width, height / self.height
        return CameraModel(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                           width, height, self.near, self.far)

    def to_dict(self, cam_id):
        return {"id": cam_id, "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "near": self.near, "far": self.far}


class FrameRecord:
    __slots__ = ("image_path", "mask_path", "pose", "time_index", "camera_id")

    def __init__(self, image_path, mask_path, pose, time_index, camera_id):
        self.image_path = image_path
        self.mask_path = mask_path
        self.pose = np.asarray(pose, dtype=np.float64).reshape(4, 4)
        self.time_index = time_index
        self.camera_id = camera_id


def _check_rotation(pose, what):
    rot = pose[:3, :3]
    err = np.abs(rot.T @ rot - np.eye(3)).max()
    if err > 1e-4:
        raise DataError(f"{what}: pose rotation is not orthonormal (err {err:.2e})")


class SceneDataset:
    """Cameras, frames, normalization box, and train/test split tags."""

    def __init__(self, root, cameras, frames, scene_box, time_count, splits, resize=None):
        self.root = Path(root) if root is not None else None
        self.cameras = cameras
        self.frames = frames
        self.scene_box = np.asarray(scene_box, dtype=np.float64)
        self.time_count = int(time_count)
        self.splits = splits
        self.resize = resize
        self._image_cache = {}
        self._mask_cache = {}
        self._frame_at = {(f.camera_id, f.time_index): i for i, f in enumerate(frames)}
        self.validate()

    def validate(self):
        if self.scene_box.shape != (2, 3) or np.any(self.scene_box[1] <= self.scene_box[0]):
            raise DataError("scene_box must be [[min],[max]] with max > min")
        if self.time_count < 1:
            raise DataError("time_count must be >= 1")
        if not self.frames:
            raise DataError("dataset has no frames")
        for i, f in enumerate(self.frames):
            what = f"frame {i} ({f.image_path})"
            if f.camera_id not in self.cameras:
                raise DataError(f"{what}: unknown camera {f.camera_id!r}")
            if f.time_index is None or not 0 <= f.time_index < self.time_count:
                raise DataError(f"{what}: time index {f.time_index} outside "
                                f"[0, {self.time_count})")
            _check_rotation(f.pose, what)
            if self.root is not None:
                img = self.root / f.image_path
                if not img.exists():
                    raise DataError(f"{what}: missing image file {img}")
                if f.mask_path is not None and not (self.root / f.mask_path).exists():
                    raise DataError(f"{what}: missing mask file {self.root / f.mask_path}")
        for name, idxs in self.splits.items():
            for i in idxs:
                if not 0 <= i < len(self.frames):
                    raise DataError(f"split {name!r} references missing frame {i}")

    def camera_for(self, frame_index):
        cam = self.cameras[self.frames[frame_index].camera_id]
        if self.resize is not None:
            cam = cam.resized(*self.resize)
        return cam

    def load_image(self, frame_index):
        if frame_index not in self._image_cache:
            path = self.root / self.frames[frame_index].image_path
            self._image_cache[frame_index] = read_image_linear(path, resize=self.resize)
        return self._image_cache[frame_index]

    def load_mask(self, frame_index):
        """Motion mask in [0, 1]; a frame without a mask file is an error."""
        f = self.frames[frame_index]
        if f.mask_path is None:
            raise DataError(f"frame {frame_index} ({f.image_path}) has no motion mask")
        if frame_index not in self._mask_cache:
            self._mask_cache[frame_index] = read_mask(self.root / f.mask_path,
                                                      resize=self.resize)
        return self._mask_cache[frame_index]

    def split_indices(self, name):
        if name not in self.splits:
            raise DataError(f"dataset has no split {name!r}")
        return list(self.splits[name])

    def frame_at(self, camera_id, time_index):
        """Frame index for (camera, time), or None."""
        return self._frame_at.get((camera_id, time_index))


def save_dataset(root, cameras, frames, scene_box, time_count, splits):
    """Write scene.json (images/masks are written by the caller)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {
        "cameras": [cam.to_dict(cid) for cid, cam in sorted(cameras.items())],
        "frames": [
            {
                "file": f.image_path,
                "mask": f.mask_path,
                "pose": [float(v) for v in f.pose.reshape(-1)],
                "time": int(f.time_index),
                "camera": f.camera_id,
            }
            for f in frames
        ],
        "time_count": int(time_count),
        "scene_box": [[float(v) for v in row] for row in np.asarray(scene_box)],
        "splits": {k: [int(i) for i in v] for k, v in splits.items()},
    }
    with open(root / "scene.json", "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)


def load_dataset(root, resize=None):
    """Parse and validate a scene directory."""
    root = Path(root)
    path = root / "scene.json"
    if not path.exists():
        raise DataError(f"missing scene.json in {root}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed scene.json: {e}") from None
    try:
        cameras = {
            c["id"]: CameraModel(c["fx"], c["fy"], c["cx"], c["cy"],
                                 c["width"], c["height"], c["near"], c["far"])
            for c in doc["cameras"]
        }
        frames = [
            FrameRecord(fr["file"], fr.get("mask"), np.array(fr["pose"]).reshape(4, 4),
                        fr["time"], fr["camera"])
            for fr in doc["frames"]
        ]
        return SceneDataset(root, cameras, frames, np.array(doc["scene_box"]),
                            doc["time_count"], doc["splits"], resize=resize)
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"malformed scene.json: {e}") from None


# ---------------------------------------------------------------------------
# COLMAP text import

def quat_to_rot(q):
    """(w, x, y, z), not necessarily normalized -> 3x3 rotation."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(rot):
    """3x3 rotation -> (w, x, y, z) with w >= 0."""
    m = np.asarray(rot, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def import_colmap(root, near=0.1, far=10.0):
    """Parse COLMAP text output (cameras.txt, images.txt).

    Returns (cameras dict, frames) with world-to-camera (q, t) lines converted
    to camera-to-world poses. Frames carry no time index (time_index None);
    callers assign times before building a SceneDataset.
    """
    root = Path(root)
    cam_file = root / "cameras.txt"
    img_file = root / "images.txt"
    if not cam_file.exists() or not img_file.exists():
        raise DataError(f"COLMAP text files not found in {root}")

    cameras = {}
    for line in cam_file.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        cam_id, model = parts[0], parts[1]
        width, height = int(parts[2]), int(parts[3])
        params = [float(p) for p in parts[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = params[:4]
        elif model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise UnsupportedModelError(f"unsupported COLMAP camera model: {model}")
        cameras[cam_id] = CameraModel(fx, fy, cx, cy, width, height, near, far)

    frames = []
    lines = iter(l for l in img_file.read_text().splitlines()
                 if not l.lstrip().startswith("#"))
    for line in lines:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 10:
            raise DataError(f"malformed images.txt line: {line!r}")
        next(lines, None)  # consume the (possibly empty) 2D-point line
        q = np.array([float(v) for v in parts[1:5]])
        t = np.array([float(v) for v in parts[5:8]])
        cam_id, name = parts[8], parts[9]
        rot_w2c = quat_to_rot(q)
        pose = np.eye(4)
        pose[:3, :3] = rot_w2c.T
        pose[:3, 3] = -rot_w2c.T @ t
        frames.append(FrameRecord(name, None, pose, None, cam_id))
    return cameras, frames


def export_colmap(root, cameras, frames):
    """Inverse of import_colmap, for round-trip tests and interop."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "cameras.txt", "w") as f:
        f.write("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n")
        for cid, cam in sorted(cameras.items()):
            f.write(f"{cid} PINHOLE {cam.width} {cam.height} "
                    f"{cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r}\n")
    with open(root / "images.txt", "w") as f:
        f.write("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n")
        for i, fr in enumerate(frames):
            rot_w2c = fr.pose[:3, :3].T
            t = -rot_w2c @ fr.pose[:3, 3]
            q = rot_to_quat(rot_w2c)
            vals = " ".join(repr(float(v)) for v in (*q, *t))
            f.write(f"{i + 1} {vals} {fr.camera_id} {fr.image_path}\n")
            f.write("\n")  # empty 2D-point line


# ---------------------------------------------------------------------------
# synthetic scene generator

def _look_at(eye, target, up=(0.0, 0.0, 1.0)):
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    z_cam = -forward
    y_approx = -np.asarray(up, dtype=np.float64)  # image v grows downward
    x_cam = np.cross(y_approx, z_cam)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(z_cam, x_cam)
    pose = np.eye(4)
    pose[:3, 0] = x_cam
    pose[:3, 1] = y_cam
    pose[:3, 2] = z_cam
    pose[:3, 3] = eye
    return pose


class SynthOracle:
    """Analytic ray tracer behind a generated scene: exact images, masks, depth."""

    PLANE_EXTENT = 1.2
    SPHERE_RADIUS = 0.22
    LIGHT = np.array([0.37, -0.31, 0.87]) / np.linalg.norm([0.37, -0.31, 0.87])
    SPHERE_COLOR = np.array([0.82, 0.34, 0.22])

    def __init__(self, preset, num_times, seed):
        self.preset = preset
        self.num_times = num_times
        rng = np.random.default_rng(seed)
        self.tex_phase = rng.uniform(0, 2 * math.pi, size=4)
        self.tex_freq = rng.uniform(1.5, 3.5, size=4)

    def plane_color(self, x, y):
        p = self.tex_phase
        f = self.tex_freq
        r = 0.5 + 0.32 * np.sin(f[0] * x + p[0]) * np.cos(f[1] * y + p[1])
        g = 0.5 + 0.32 * np.sin(f[2] * (x + y) + p[2])
        b = 0.5 + 0.32 * np.cos(f[3] * (x - y) + p[3])
        return np.stack([r, g, b], axis=-1)

    def sphere_state(self, t_norm):
        """(center, semi_axes) at normalized time."""
        if self.preset == "translate":
            center = np.array([-0.35, -0.12, 0.30]) + t_norm * np.array([0.70, 0.24, 0.0])
            axes = np.full(3, self.SPHERE_RADIUS)
        elif self.preset == "deform":
            center = np.array([0.0, 0.0, 0.32])
            r = self.SPHERE_RADIUS
            s = math.sin(math.pi * t_norm)
            axes = np.array([r * (1 + 0.5 * s), r * (1 - 0.33 * s),
                             r * (1 + 0.28 * math.sin(2 * math.pi * t_norm))])
        elif self.preset == "static":
            return None, None
        else:
            raise ConfigError(f"unknown preset: {self.preset}")
        return center, axes

    def render_frame(self, camera, pose, t_norm):
        """Exact (linear rgb, depth, mask) for one camera at one time."""
        rays = camera_rays(camera, pose)
        o, d = rays.origins, rays.dirs
        n = len(rays)
        hit_t = np.full(n, np.inf)
        color = np.zeros((n, 3))

        # ground patch at z = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = -o[:, 2] / d[:, 2]
        px = o[:, 0] + tp * d[:, 0]
        py = o[:, 1] + tp * d[:, 1]
        plane_ok = (d[:, 2] < 0) & (tp > 0) & \
            (np.abs(px) <= self.PLANE_EXTENT) & (np.abs(py) <= self.PLANE_EXTENT)
        hit_t[plane_ok] = tp[plane_ok]
        color[plane_ok] = self.plane_color(px[plane_ok], py[plane_ok])

        sphere_hit = np.zeros(n, dtype=bool)
        center, axes = self.sphere_state(t_norm)
        if center is not None:
            oo = (o - center) / axes
            dd = d / axes
            a = (dd * dd).sum(axis=1)
            b = 2.0 * (oo * dd).sum(axis=1)
            c = (oo * oo).sum(axis=1) - 1.0
            disc = b * b - 4 * a * c
            ok = disc >= 0
            ts = np.full(n, np.inf)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t0 = (-b - sq) / (2 * a)
            t1 = (-b + sq) / (2 * a)
            ts = np.where(ok & (t0 > 1e-6), t0, np.where(ok & (t1 > 1e-6), t1, np.inf))
            sphere_hit = ts < hit_t
            pt = o[sphere_hit] + ts[sphere_hit, None] * d[sphere_hit]
            normal = (pt - center) / (axes ** 2)
            normal /= np.linalg.norm(normal, axis=1, keepdims=True)
            lambert = 0.35 + 0.65 * np.clip(normal @ self.LIGHT, 0, None)
            color[sphere_hit] = self.SPHERE_COLOR * lambert[:, None]
            hit_t[sphere_hit] = ts[sphere_hit]

        depth = np.where(np.isfinite(hit_t), hit_t, camera.far)
        mask = sphere_hit & (self.num_times > 1)
        h, w = camera.height, camera.width
        return (color.reshape(h, w, 3).astype(np.float32),
                depth.reshape(h, w).astype(np.float32),
                mask.reshape(h, w).astype(np.float32))


def _content_box(preset):
    ext = SynthOracle.PLANE_EXTENT
    hi_z = 0.75 if preset != "static" else 0.1
    return np.array([[-ext - 0.05, -ext - 0.05, -0.05], [ext + 0.05, ext + 0.05, hi_z]])


def _camera_arc(num_cameras, resolution, preset):
    """Cameras on an azimuth arc looking at the scene center."""
    target = np.array([0.0, 0.0, 0.25])
    radius, height = 2.9, 1.55
    if num_cameras == 1:
        azimuths = [math.radians(-90.0)]
    else:
        azimuths = [math.radians(-90 - 28 + 56 * i / (num_cameras - 1))
                    for i in range(num_cameras)]
    content = _content_box(preset)
    corners = np.array([[content[i][0], content[j][1], content[k][2]]
                        for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    cameras, poses = {}, {}
    for i, az in enumerate(azimuths):
        eye = np.array([radius * math.cos(az), radius * math.sin(az), height])
        dists = np.linalg.norm(corners - eye, axis=1)
        near = max(0.05, dists.min() - 0.15)
        far = dists.max() + 0.15
        cam_id = f"cam{i}"
        cameras[cam_id] = CameraModel(0.9 * resolution, 0.9 * resolution,
                                      resolution / 2.0, resolution / 2.0,
                                      resolution, resolution, near, far)
        poses[cam_id] = _look_at(eye, target)
    return cameras, poses


def _frusta_box(cameras, poses):
    """Axis-aligned hull of camera centers and far-plane frustum corners,
    expanded 12.5% per side so normalization keeps a >= 5% margin."""
    pts = []
    for cam_id, cam in cameras.items():
        pose = poses[cam_id]
        pts.append(pose[:3, 3][None, :])
        # far points lie on a sphere, so corners alone under-estimate: sample a
        # dense pixel grid of directions
        us = np.linspace(0, cam.width - 1, 33)
        vs = np.linspace(0, cam.height - 1, 33)
        uu, vv = np.meshgrid(us, vs)
        d_cam = np.stack([(uu.ravel() + 0.5 - cam.cx) / cam.fx,
                          (vv.ravel() + 0.5 - cam.cy) / cam.fy,
                          -np.ones(uu.size)], axis=-1)
        d = d_cam @ pose[:3, :3].T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        pts.append(pose[:3, 3] + cam.far * d)
    pts = np.concatenate(pts, axis=0)
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2
    half = (pts.max(axis=0) - pts.min(axis=0)) / 2 * 1.125
    return np.stack([center - half, center + half])


def synth_scene(out_dir, preset="translate", resolution=64, num_times=8,
                num_cameras=3, seed=0, holdout="time"):
    """Generate a synthetic dynamic scene with analytic ground truth.

    Writes a loadable dataset directory (images, exact motion masks, exact
    depth priors, scene.json) and returns (SceneDataset, SynthOracle).
    holdout: "time" holds out the middle time index for every camera, "view"
    holds out the last camera, "none" puts everything in train.
    """
    if resolution < 16:
        raise ConfigError("resolution must be >= 16")
    if num_times < 1 or num_cameras < 1:
        raise ConfigError("need at least one time and one camera")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(exist_ok=True)
    (out_dir / "priors" / "depth").mkdir(parents=True, exist_ok=True)

    oracle = SynthOracle(preset, num_times, seed)
    cameras, poses = _camera_arc(num_cameras, resolution, preset)
    scene_box = _frusta_box(cameras, poses)

    frames = []
    for t in range(num_times):
        t_norm = t / (num_times - 1) if num_times > 1 else 0.0
        for cam_id in sorted(cameras):
            cam = cameras[cam_id]
            rgb, depth, mask = oracle.render_frame(cam, poses[cam_id], t_norm)
            stem = f"t{t:03d}_{cam_id}"
            write_image_srgb(out_dir / "images" / f"{stem}.png", rgb)
            write_mask(out_dir / "masks" / f"{stem}.png", mask)
            write_pfm(out_dir / "priors" / "depth" / f"{stem}.pfm", depth)
            frames.append(FrameRecord(f"images/{stem}.png", f"masks/{stem}.png",
                                      poses[cam_id], t, cam_id))

    indices = list(range(len(frames)))
    if holdout == "time" and num_times >= 3:
        t_hold = num_times // 2
        test = [i for i in indices if frames[i].time_index == t_hold]
    elif holdout == "view" and num_cameras >= 2:
        last_cam = sorted(cameras)[-1]
        test = [i for i in indices if frames[i].camera_id == last_cam]
    else:
        test = []
    train = [i for i in indices if i not in set(test)]
    splits = {"train": train, "test": test}

    save_dataset(out_dir, cameras, frames, scene_box, num_times, splits)
    return load_dataset(out_dir), oracle
