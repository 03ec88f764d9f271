"""Z-buffered triangle rasterization with barycentric attribute
interpolation, used for the canonical front/back deformation maps and for
mesh renders under a scene camera.

Interpolation uses screen-space barycentric weights, so for a fixed mesh
every output pixel is an exact fixed linear combination of three vertex
attributes; the returned cache exposes that sparse structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..assets import Camera, DeformationMap, RiggedTemplate

MAP_MARGIN = 0.05  # fractional bbox margin for front/back maps


@dataclass
class RasterCache:
    """Per-pixel linear structure: value(px) = sum_k weight_k * attr[vidx_k]."""

    pix_rows: np.ndarray   # [P] row of each covered pixel
    pix_cols: np.ndarray   # [P]
    vidx: np.ndarray       # [P,3] vertex indices
    weights: np.ndarray    # [P,3] barycentric weights
    height: int
    width: int
    n_verts: int

    def apply(self, attrs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Interpolate [V,3] attributes to an image + coverage mask."""
        img = np.zeros((self.height, self.width, attrs.shape[1]), dtype=np.float32)
        vals = np.einsum("pk,pkc->pc", self.weights, attrs.astype(np.float64)[self.vidx])
        img[self.pix_rows, self.pix_cols] = vals.astype(np.float32)
        mask = np.zeros((self.height, self.width), dtype=bool)
        mask[self.pix_rows, self.pix_cols] = True
        return img, mask

    def backward(self, d_img: np.ndarray) -> np.ndarray:
        """Scatter image gradients back to vertex attributes."""
        d_attrs = np.zeros((self.n_verts, d_img.shape[2]))
        g = d_img.astype(np.float64)[self.pix_rows, self.pix_cols]  # [P,C]
        for k in range(3):
            np.add.at(d_attrs, self.vidx[:, k], self.weights[:, k : k + 1] * g)
        return d_attrs


def _rasterize(pts2d: np.ndarray, z: np.ndarray, faces: np.ndarray, width: int, height: int,
               front_facing_only: bool = False) -> RasterCache:
    """Core scanline fill; z smaller = closer. Pixel centers at +0.5."""
    zbuf = np.full((height, width), np.inf)
    fbuf = np.full((height, width), -1, dtype=np.int64)
    wbuf = np.zeros((height, width, 3))

    tris = faces.astype(np.int64)
    p = pts2d.astype(np.float64)
    for fi in range(tris.shape[0]):
        ia, ib, ic = tris[fi]
        a, b, c = p[ia], p[ib], p[ic]
        denom = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if front_facing_only and denom >= 0:
            continue
        if abs(denom) < 1e-12:
            continue
        x0 = max(int(np.floor(min(a[0], b[0], c[0]) - 0.5)), 0)
        x1 = min(int(np.ceil(max(a[0], b[0], c[0]) + 0.5)), width - 1)
        y0 = max(int(np.floor(min(a[1], b[1], c[1]) - 0.5)), 0)
        y1 = min(int(np.ceil(max(a[1], b[1], c[1]) + 0.5)), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w0 = ((b[0] - gx) * (c[1] - gy) - (b[1] - gy) * (c[0] - gx)) / denom
        w1 = ((c[0] - gx) * (a[1] - gy) - (c[1] - gy) * (a[0] - gx)) / denom
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        zi = w0 * z[ia] + w1 * z[ib] + w2 * z[ic]
        sub_z = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        closer = inside & (zi < sub_z)
        sub_z[closer] = zi[closer]
        fbuf[y0 : y1 + 1, x0 : x1 + 1][closer] = fi
        wsub = wbuf[y0 : y1 + 1, x0 : x1 + 1]
        wsub[closer] = np.stack([w0[closer], w1[closer], w2[closer]], axis=-1)

    rows, cols = np.nonzero(fbuf >= 0)
    covered = fbuf[rows, cols]
    return RasterCache(
        pix_rows=rows,
        pix_cols=cols,
        vidx=tris[covered],
        weights=wbuf[rows, cols],
        height=height,
        width=width,
        n_verts=pts2d.shape[0],
    )


def map_bounds(verts: np.ndarray, margin: float = MAP_MARGIN) -> np.ndarray:
    """(xmin, xmax, zmin, zmax) of the canonical bbox plus margin."""
    xmin, xmax = float(verts[:, 0].min()), float(verts[:, 0].max())
    zmin, zmax = float(verts[:, 2].min()), float(verts[:, 2].max())
    mx = margin * max(xmax - xmin, 1e-6)
    mz = margin * max(zmax - zmin, 1e-6)
    return np.array([xmin - mx, xmax + mx, zmin - mz, zmax + mz], dtype=np.float32)


def map_projection(verts: np.ndarray, bounds: np.ndarray, resolution: int | tuple[int, int]):
    """World (x, z) to map pixel coordinates, shared by front and back."""
    if isinstance(resolution, int):
        w = h = resolution
    else:
        w, h = resolution
    xmin, xmax, zmin, zmax = (float(v) for v in bounds)
    px = (verts[:, 0] - xmin) / (xmax - xmin) * w
    py = (zmax - verts[:, 2]) / (zmax - zmin) * h
    return np.stack([px, py], axis=1), w, h


def rasterize_mesh_map(
    verts: np.ndarray,
    faces: np.ndarray,
    attrs: np.ndarray,
    side: str,
    resolution: int | tuple[int, int] = 512,
    bounds: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, RasterCache]:
    """Orthographic attribute map along +y (front) or -y (back).

    Front and back share the same pixel layout; only the depth test
    flips, so a closed mesh produces identical silhouettes on both sides.
    Returns (map [H,W,3], mask [H,W], cache).
    """
    if side not in ("front", "back"):
        raise ValueError("side must be 'front' or 'back'")
    if faces.size == 0:
        raise ValueError("mesh must be non-empty")
    if bounds is None:
        bounds = map_bounds(verts)
    pts2d, w, h = map_projection(verts.astype(np.float64), bounds, resolution)
    depth = -verts[:, 1] if side == "front" else verts[:, 1]
    cache = _rasterize(pts2d, depth.astype(np.float64), faces, w, h)
    img, mask = cache.apply(attrs)
    return img, mask, cache


def deformation_maps(
    template_or_verts,
    attrs: np.ndarray,
    faces: np.ndarray | None = None,
    resolution: int | tuple[int, int] = 512,
    bounds: np.ndarray | None = None,
) -> DeformationMap:
    """Rasterize a per-vertex 3-vector field to both canonical map sides."""
    if isinstance(template_or_verts, RiggedTemplate):
        verts = template_or_verts.vertices
        faces = template_or_verts.faces
    else:
        verts = template_or_verts
        if faces is None:
            raise ValueError("faces required when passing raw vertices")
    if bounds is None:
        bounds = map_bounds(verts)
    front, fmask, _ = rasterize_mesh_map(verts, faces, attrs, "front", resolution, bounds)
    back, bmask, _ = rasterize_mesh_map(verts, faces, attrs, "back", resolution, bounds)
    return DeformationMap(front=front, back=back, front_mask=fmask, back_mask=bmask,
                          bounds=np.asarray(bounds, dtype=np.float32))


def map_caches(
    template: RiggedTemplate,
    resolution: int | tuple[int, int] = 512,
    bounds: np.ndarray | None = None,
) -> tuple[RasterCache, RasterCache, np.ndarray]:
    """Front/back canonical raster structure, precomputed once per template."""
    verts = template.vertices
    if bounds is None:
        bounds = map_bounds(verts)
    pts2d, w, h = map_projection(verts.astype(np.float64), bounds, resolution)
    front = _rasterize(pts2d, (-verts[:, 1]).astype(np.float64), template.faces, w, h)
    back = _rasterize(pts2d, verts[:, 1].astype(np.float64), template.faces, w, h)
    return front, back, np.asarray(bounds, dtype=np.float32)


def rasterize_mesh_camera(
    verts: np.ndarray,
    faces: np.ndarray,
    attrs: np.ndarray,
    camera: Camera,
) -> tuple[np.ndarray, np.ndarray, RasterCache]:
    """Mesh attribute render under a scene camera (z-buffered)."""
    camera.validate()
    W, H = camera.resolution
    Rc = camera.extrinsic[:3, :3].astype(np.float64)
    tc = camera.extrinsic[:3, 3].astype(np.float64)
    x_cam = verts.astype(np.float64) @ Rc.T + tc
    z = x_cam[:, 2]
    if camera.mode == "perspective":
        fx, fy, cx, cy = (float(v) for v in camera.params)
        zs = np.where(np.abs(z) < 1e-9, 1e-9, z)
        pts2d = np.stack([fx * x_cam[:, 0] / zs + cx, fy * x_cam[:, 1] / zs + cy], axis=1)
        # drop faces with any vertex behind the near plane
        behind = z <= camera.near
        keep = ~behind[faces.astype(np.int64)].any(axis=1)
        faces = faces[keep]
    else:
        ex, ey = float(camera.params[0]), float(camera.params[1])
        pts2d = np.stack([W / ex * x_cam[:, 0] + 0.5 * W, H / ey * x_cam[:, 1] + 0.5 * H], axis=1)
    cache = _rasterize(pts2d, z, faces, W, H)
    img, mask = cache.apply(attrs)
    return img, mask, cache
