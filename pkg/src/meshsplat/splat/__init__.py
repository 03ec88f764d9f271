"""Tile-based software Gaussian splatter and mesh map rasterizer.

Public surface: ``render`` (color/alpha/normal/depth/semantic channels),
``sort_keys`` (exact or u16-quantized depth ordering), canonical
front/back ``deformation_maps``, ``relight``, and image IO.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..assets import Camera, DeformationMap, RiggedTemplate, ValidationError, look_at
from ..gstexture import WorldGaussians
from . import images, meshraster, projection, tiles
from .images import read_pgm, read_ppm, write_pgm, write_png, write_ppm
from .meshraster import (
    RasterCache,
    deformation_maps,
    map_bounds,
    map_caches,
    rasterize_mesh_camera,
    rasterize_mesh_map,
)
from .projection import Projected, backproject_mean_grads, camera_center, project_gaussians
from .tiles import TILE, composite, composite_backward

CHANNELS = ("color", "normal", "semantic", "depth")
U16_BINS = 65535


@dataclass
class RenderTarget:
    """Composited output channels; absent channels are None."""

    width: int
    height: int
    color: np.ndarray | None = None      # [H,W,3]
    alpha: np.ndarray | None = None      # [H,W]
    normal: np.ndarray | None = None     # [H,W,3]
    depth: np.ndarray | None = None      # [H,W]
    semantic: np.ndarray | None = None   # [H,W,3]


def quantized_depth_keys(depth: np.ndarray, near: float, far: float) -> np.ndarray:
    """UInt16 sort keys over [near, far]; one bin is (far-near)/65535."""
    if not near < far:
        raise ValidationError("need near < far")
    k = np.floor((depth - near) / (far - near) * U16_BINS)
    return np.clip(k, 0, U16_BINS).astype(np.uint16)


def sort_keys(gaussians: WorldGaussians, camera: Camera, mode: str = "exact_f32") -> np.ndarray:
    """Front-to-back permutation of the visible Gaussians.

    Gaussians outside (near, far) are culled from the permutation, not an
    error. Ties (equal depth or equal quantized key) keep index order.
    """
    proj = project_gaussians(gaussians.means, gaussians.rot_mats, gaussians.scales, camera)
    idx = np.nonzero(proj.visible)[0]
    depth = proj.depth[idx]
    if mode == "exact_f32":
        key = depth.astype(np.float32)
    elif mode == "quant_u16":
        key = quantized_depth_keys(depth, camera.near, camera.far)
    else:
        raise ValueError(f"unknown sort mode '{mode}'")
    order = np.lexsort((idx, key))
    return idx[order]


def _gather_values(gaussians: WorldGaussians, proj: Projected, idx: np.ndarray, channels):
    cols = []
    layout = {}
    at = 0
    for ch in channels:
        if ch == "alpha":
            continue
        if ch == "color":
            cols.append(gaussians.color[idx])
        elif ch == "normal":
            cols.append(gaussians.normal[idx])
        elif ch == "semantic":
            if gaussians.semantic is None:
                raise ValidationError("semantic channel requested but Gaussians carry no labels")
            cols.append(gaussians.semantic[idx])
        elif ch == "depth":
            cols.append(proj.depth[idx, None].astype(np.float32))
        else:
            raise ValueError(f"unknown channel '{ch}'")
        n = cols[-1].shape[1]
        layout[ch] = (at, at + n)
        at += n
    values = np.concatenate(cols, axis=1) if cols else np.zeros((idx.size, 0), dtype=np.float32)
    return values, layout


def render(
    gaussians: WorldGaussians,
    camera: Camera,
    channels=("color", "alpha"),
    sort_mode: str = "exact_f32",
    threads: int = 1,
    return_cache: bool = False,
):
    """Splat world Gaussians through the camera into the requested channels.

    Background is transparent black. All channels share one binning and
    compositing pass; ``sort_mode`` selects exact f32 depth ordering or
    the u16-quantized deployment ordering.
    """
    if not np.isfinite(gaussians.opacity).all():
        bad = np.nonzero(~np.isfinite(gaussians.opacity))[0]
        raise ValidationError(f"non-finite opacity at indices {bad[:16].tolist()}")
    proj = project_gaussians(gaussians.means, gaussians.rot_mats, gaussians.scales, camera)
    idx = np.nonzero(proj.visible)[0]
    values, layout = _gather_values(gaussians, proj, idx, channels)

    depth = proj.depth[idx]
    if sort_mode == "exact_f32":
        order_key = depth.astype(np.float32).astype(np.float64)
    elif sort_mode == "quant_u16":
        order_key = quantized_depth_keys(depth, camera.near, camera.far).astype(np.float64)
    else:
        raise ValueError(f"unknown sort mode '{sort_mode}'")

    W, H = camera.resolution
    out, cache = composite(
        proj.means2d[idx],
        proj.conic[idx],
        gaussians.opacity[idx],
        values,
        order_key,
        proj.radius[idx],
        W,
        H,
        keep_cache=return_cache,
        threads=threads,
    )
    target = RenderTarget(width=W, height=H, alpha=out[:, :, -1])
    for ch, (a, b) in layout.items():
        block = out[:, :, a:b]
        setattr(target, ch, block[:, :, 0] if b - a == 1 else block)
    if return_cache:
        return target, (proj, idx, values, layout, cache)
    return target


def relight(
    color: np.ndarray,
    normal: np.ndarray,
    light_dir,
    light_rgb=(1.0, 1.0, 1.0),
    ambient: float = 0.0,
) -> np.ndarray:
    """Lambertian shading of a rendered image using its normal map.

    out = color * (ambient + light_rgb * max(0, n . l)), clamped to [0,1];
    ``light_dir`` points from the surface toward the light.
    """
    if color.shape[:2] != normal.shape[:2]:
        raise ValidationError("color and normal images must share resolution")
    l = np.asarray(light_dir, dtype=np.float64)
    l = l / np.linalg.norm(l)
    ndotl = np.maximum(normal.astype(np.float64) @ l, 0.0)
    shade = ambient + np.asarray(light_rgb, dtype=np.float64) * ndotl[..., None]
    return np.clip(color.astype(np.float64) * shade, 0.0, 1.0).astype(np.float32)


def write_image(target, path, fmt: str | None = None) -> None:
    """Write a render target's color (or a raw array) as PPM or PNG."""
    img = target.color if isinstance(target, RenderTarget) else np.asarray(target)
    if img is None:
        raise ValidationError("render target has no color channel")
    if fmt is None:
        fmt = "png" if str(path).lower().endswith(".png") else "ppm"
    if fmt == "ppm":
        write_ppm(img, path)
    elif fmt == "png":
        write_png(img, path)
    else:
        raise ValueError(f"unknown image format '{fmt}'")


def map_camera(template: RiggedTemplate, side: str, resolution: int | tuple[int, int] = 512,
               distance: float = 5.0) -> Camera:
    """Orthographic camera matching the canonical front/back map framing."""
    bounds = map_bounds(template.vertices)
    xmin, xmax, zmin, zmax = (float(v) for v in bounds)
    zmid = 0.5 * (zmin + zmax)
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    if side == "front":
        eye = (0.0, distance, zmid)
        mode = "ortho-front"
    elif side == "back":
        eye = (0.0, -distance, zmid)
        mode = "ortho-back"
    else:
        raise ValueError("side must be 'front' or 'back'")
    cam = Camera(
        mode=mode,
        resolution=resolution,
        params=np.array([xmax - xmin, zmax - zmin, 0.0, 0.0], dtype=np.float32),
        extrinsic=look_at(eye, (0.0, 0.0, zmid)),
        near=0.01,
        far=2.0 * distance,
    )
    cam.validate()
    return cam


__all__ = [
    "RenderTarget", "render", "sort_keys", "quantized_depth_keys", "relight", "write_image",
    "deformation_maps", "rasterize_mesh_map", "rasterize_mesh_camera", "map_bounds",
    "map_caches", "map_camera", "RasterCache", "Projected", "project_gaussians",
    "backproject_mean_grads", "camera_center", "composite", "composite_backward",
    "write_ppm", "read_ppm", "write_pgm", "read_pgm", "write_png", "TILE", "U16_BINS",
    "images", "meshraster", "projection", "tiles", "CHANNELS",
]
