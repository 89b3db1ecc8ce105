"""Reconstruction-quality measures (PSNR, single-scale SSIM on BT.601 luma)
and the per-scene evaluation harness."""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import UsageError
from .renderer import render_image

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a, b, max_val=1.0):
    """10 log10(max^2 / MSE) in dB; identical images cap at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(max_val * max_val / mse)


def _luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    return img


def _gaussian_kernel():
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return k / k.sum()


def _valid_filter(img, kernel):
    half = len(kernel) // 2
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]  # crop to windows fully inside the image


def ssim(a, b):
    """Single-scale SSIM over an 11x11 Gaussian window (sigma 1.5), averaged
    over windows fully inside the image. Inputs are [0, 1] images; color inputs
    are converted to BT.601 luma first."""
    a = _luma(a)
    b = _luma(b)
    if a.shape != b.shape:
        raise UsageError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise UsageError(f"ssim: image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    k = _gaussian_kernel()
    mu_a = _valid_filter(a, k)
    mu_b = _valid_filter(b, k)
    var_a = _valid_filter(a * a, k) - mu_a ** 2
    var_b = _valid_filter(b * b, k) - mu_b ** 2
    cov = _valid_filter(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


@dataclass
class MetricsRow:
    scene: str
    split: str
    config: str
    psnr: float
    ssim: float
    frames: int


def evaluate(bundle, grid, dataset, split, n_samples=None):
    """Render every frame of a split at its recorded camera/time and compare to
    ground truth. Returns one MetricsRow (dataset = one scene)."""
    indices = dataset.split_indices(split)
    if not indices:
        raise UsageError(f"split {split!r} is empty")
    psnrs, ssims = [], []
    for i in indices:
        frame = dataset.frames[i]
        cam = dataset.camera_for(i)
        mask = dataset.load_mask(i) if frame.mask_path is not None else None
        kwargs = {} if n_samples is None else {"n_samples": n_samples}
        rgb, _ = render_image(bundle, grid, cam, frame.pose,
                              frame_index=frame.time_index, mask=mask, **kwargs)
        gt = dataset.load_image(i)
        psnrs.append(psnr(rgb, gt))
        ssims.append(ssim(rgb, gt))
    scene = dataset.root.name if dataset.root is not None else "scene"
    config = bundle.ablation if bundle.ablation else "full"
    return MetricsRow(scene=scene, split=split, config=config,
                      psnr=float(np.mean(psnrs)), ssim=float(np.mean(ssims)),
                      frames=len(indices))


CSV_HEADER = "scene,split,config,psnr,ssim,lpips,frames"


def write_metrics_csv(rows, path):
    """CSV in the shape of the paper-style tables; the lpips column is reserved
    but empty (needs a pretrained perceptual net, out of scope)."""
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in rows:
            f.write(f"{r.scene},{r.split},{r.config},{r.psnr:.4f},{r.ssim:.6f},,{r.frames}\n")
    return Path(path)
