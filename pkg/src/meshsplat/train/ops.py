"""Custom differentiable ops bridging the autodiff engine to the
rasterizers, plus semantic label construction.

Per-step linearization: triangle rotations, normals, projection
Jacobians, compositing order, and 2D covariances are computed once from
a plain forward pass and treated as constants inside the graph; only the
contracted gradient paths (channel values, opacities, means through the
weight exponent, and linear raster weights) flow.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from ..assets import Camera, GaussianTexture, RiggedTemplate
from ..splat import composite, composite_backward, meshraster, project_gaussians, quantized_depth_keys
from .engine import Function, Tensor


class PointsAffine(Function):
    """y_i = A_i[:, :3] x_i + A_i[:, 3] with constant per-point matrices."""

    def forward(self, x, mats=None):
        self.lin = mats[:, :3, :3]
        return (np.einsum("vab,vb->va", self.lin, x) + mats[:, :3, 3]).astype(x.dtype)

    def backward(self, g):
        return (np.einsum("vab,va->vb", self.lin, g).astype(g.dtype),)


def points_affine(x: Tensor, mats: np.ndarray) -> Tensor:
    return PointsAffine.apply(x, mats=mats)


class RotateRows(Function):
    """y_i = R_i x_i with constant per-row rotations."""

    def forward(self, x, rots=None):
        self.rots = rots
        return np.einsum("gab,gb->ga", rots, x).astype(x.dtype)

    def backward(self, g):
        return (np.einsum("gab,ga->gb", self.rots, g).astype(g.dtype),)


def rotate_rows(x: Tensor, rots: np.ndarray) -> Tensor:
    return RotateRows.apply(x, rots=rots)


class MeshMapApply(Function):
    """Linear rasterization of per-vertex attributes through a fixed
    pixel-to-triangle cache."""

    def forward(self, attrs, cache=None):
        self.cache = cache
        img, _ = cache.apply(attrs)
        return img.astype(attrs.dtype)

    def backward(self, g):
        return (self.cache.backward(g).astype(g.dtype),)


def mesh_map_apply(attrs: Tensor, cache: meshraster.RasterCache) -> Tensor:
    return MeshMapApply.apply(attrs, cache=cache)


class ConvGaussianSame(Function):
    """Depthwise separable blur, zero-padded 'same'. The kernel is
    symmetric, so backward is the same blur of the upstream gradient."""

    def forward(self, img, kernel=None):
        self.kernel = kernel
        return self._blur(img, kernel)

    @staticmethod
    def _blur(img, kernel):
        out = correlate1d(img, kernel, axis=0, mode="constant", cval=0.0)
        return correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)

    def backward(self, g):
        return (self._blur(g, self.kernel),)


def conv_gaussian(img: Tensor, kernel: np.ndarray) -> Tensor:
    return ConvGaussianSame.apply(img, kernel=np.asarray(kernel, dtype=img.data.dtype))


class SplatRender(Function):
    """Differentiable splat of (means3d, values, opacity) -> [H, W, C+1].

    The last output channel is alpha. Rotations and scales fix the
    footprint (no covariance gradient); mean gradients flow through the
    weight exponent and return to 3D via the projection Jacobian.
    """

    def forward(self, means3d, values, opacity, camera=None, rot_mats=None, scales=None,
                sort_mode="exact_f32", threads=1):
        proj = project_gaussians(means3d, rot_mats, scales, camera)
        idx = np.nonzero(proj.visible)[0]
        depth = proj.depth[idx]
        if sort_mode == "quant_u16":
            key = quantized_depth_keys(depth, camera.near, camera.far).astype(np.float64)
        else:
            key = depth.astype(np.float32).astype(np.float64)
        W, H = camera.resolution
        out, cache = composite(
            proj.means2d[idx], proj.conic[idx], opacity[idx], values[idx],
            key, proj.radius[idx], W, H, keep_cache=True, threads=threads,
        )
        self.proj = proj
        self.idx = idx
        self.cache = cache
        self.sub = (proj.means2d[idx], proj.conic[idx], opacity[idx], values[idx])
        self.full_shapes = (means3d.shape, values.shape, opacity.shape)
        return out.astype(means3d.dtype)

    def backward(self, g):
        means2d, conic, opacity, values = self.sub
        d_values, _d_alpha_value, d_opacity, d_means2d = composite_backward(
            self.cache, means2d, conic, opacity, values, g
        )
        s_means, s_values, s_opacity = self.full_shapes
        gm = np.zeros(s_means, dtype=g.dtype)
        gv = np.zeros(s_values, dtype=g.dtype)
        go = np.zeros(s_opacity, dtype=g.dtype)
        jac = self.proj.jac[self.idx]
        gm[self.idx] = np.einsum("nab,na->nb", jac, d_means2d)
        gv[self.idx] = d_values
        go[self.idx] = d_opacity
        return gm, gv, go


def splat_render(
    means3d: Tensor,
    values: Tensor,
    opacity: Tensor,
    camera: Camera,
    rot_mats: np.ndarray,
    scales: np.ndarray,
    sort_mode: str = "exact_f32",
    threads: int = 1,
) -> Tensor:
    return SplatRender.apply(
        means3d, values, opacity,
        camera=camera, rot_mats=rot_mats, scales=scales, sort_mode=sort_mode, threads=threads,
    )


def bary_points(posed: Tensor, faces: np.ndarray, face_idx: np.ndarray, uv: np.ndarray) -> Tensor:
    """Differentiable barycentric surface points on the posed mesh."""
    tri = faces.astype(np.int64)[face_idx.astype(np.int64)]
    dtype = posed.data.dtype
    u = uv[:, 0:1].astype(dtype)
    v = uv[:, 1:2].astype(dtype)
    w = (1.0 - uv[:, 0:1] - uv[:, 1:2]).astype(dtype)
    return posed[tri[:, 0]] * u + posed[tri[:, 1]] * v + posed[tri[:, 2]] * w


# ---------------------------------------------------------------------------
# semantic labels


def semantic_label(template: RiggedTemplate, tau: float) -> np.ndarray:
    """Per-vertex label e = seg_color + sin(tau * position), componentwise."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return (template.seg_colors.astype(np.float64)
            + np.sin(tau * template.vertices.astype(np.float64))).astype(np.float32)


def gaussian_semantic(template: RiggedTemplate, texture: GaussianTexture, tau: float) -> np.ndarray:
    """Semantic label per Gaussian: barycentric blend of its parent
    triangle's vertex labels."""
    labels = semantic_label(template, tau)
    tri = template.faces.astype(np.int64)[texture.face_idx.astype(np.int64)]
    u = texture.uv[:, 0:1]
    v = texture.uv[:, 1:2]
    w = 1.0 - u - v
    return (labels[tri[:, 0]] * u + labels[tri[:, 1]] * v + labels[tri[:, 2]] * w).astype(np.float32)
