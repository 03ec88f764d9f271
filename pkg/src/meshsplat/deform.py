"""Student-side animation stack: positional encoding, the dual-MLP
non-rigid deformation field (cloth branch masked to cloth vertices, body
branch everywhere), mapping networks and blend-shape compensation, and
the per-frame pose-to-image pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container, splat
from .assets import (
    Camera,
    FrameInput,
    GaussianTexture,
    RiggedTemplate,
    ValidationError,
)
from .gstexture import WorldGaussians, local_to_world
from .skinning import lbs_forward, pose_skeleton
from .splat import RenderTarget

MAGIC_BUNDLE = b"MSPLSTU\0"

PE_BANDS = 6
EMBED_DIM = 32
HIDDEN = 128
LAYERS = 5
MAP_HIDDEN = 64
N_HEAD = 8
N_BODY = 20


def positional_encode(v: np.ndarray, bands: int = PE_BANDS) -> np.ndarray:
    """Sinusoidal encoding with the raw coordinate included.

    [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(...)];
    output dim is d * (1 + 2L).
    """
    if bands < 0:
        raise ValueError("bands must be >= 0")
    v = np.atleast_2d(v)
    parts = [v]
    for l in range(bands):
        w = (2.0 ** l) * np.pi * v
        parts.append(np.sin(w))
        parts.append(np.cos(w))
    return np.concatenate(parts, axis=-1)


def pe_dim(d: int, bands: int) -> int:
    return d * (1 + 2 * bands)


# ---------------------------------------------------------------------------
# MLPs stored as flat (weight, bias) lists


def mlp_init(dims: list[int], rng: np.random.Generator, zero_last: bool = True):
    """He-uniform layers; the output layer starts at zero so a fresh
    network is an exact identity residual."""
    layers = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])).astype(np.float32)
        b = np.zeros(dims[i + 1], dtype=np.float32)
        if zero_last and i == len(dims) - 2:
            w[:] = 0.0
        layers.append((w, b))
    return layers


def mlp_forward(layers, x: np.ndarray) -> np.ndarray:
    """ReLU MLP; weights may be stored in half precision."""
    h = x.astype(np.float32)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = h @ w.astype(np.float32) + b.astype(np.float32)
        if i != last:
            h = np.maximum(h, 0.0)
    return h


@dataclass
class StudentBundle:
    """Trainable student state: deformation MLPs, mapping nets, blend
    shapes, and the per-frame embedding table."""

    body_mlp: list            # S_b, 5 layers
    cloth_mlp: list           # S_c, 5 layers, output masked to cloth
    head_map: list            # expression -> head coefficients
    body_map: list            # pose -> body coefficients
    blend_pos: np.ndarray     # [G,3,n]
    blend_col: np.ndarray     # [G,3,n]
    z_table: np.ndarray       # [T,embed_dim]
    pe_bands: int = PE_BANDS
    theta_dim: int = 63
    eps_dim: int = 10
    embed_dim: int = EMBED_DIM
    n_head: int = N_HEAD
    n_body: int = N_BODY
    precision: str = "fp32"
    meta: dict = field(default_factory=dict)

    @property
    def n_coeffs(self) -> int:
        return self.n_head + self.n_body

    @property
    def input_dim(self) -> int:
        return pe_dim(3, self.pe_bands) + self.theta_dim + self.embed_dim

    def validate_for(self, template: RiggedTemplate, texture: GaussianTexture | None = None) -> None:
        if self.theta_dim != template.theta_dim:
            raise ValidationError(
                f"bundle pose dim {self.theta_dim} != template {template.theta_dim}"
            )
        if self.eps_dim != template.num_expressions:
            raise ValidationError(
                f"bundle expression dim {self.eps_dim} != template {template.num_expressions}"
            )
        if texture is not None and self.blend_pos.shape[0] != texture.num_gaussians:
            raise ValidationError(
                f"blend shapes cover {self.blend_pos.shape[0]} Gaussians, texture has {texture.num_gaussians}"
            )


def init_bundle(
    template: RiggedTemplate,
    texture: GaussianTexture,
    n_frames: int,
    seed: int = 0,
    hidden: int = HIDDEN,
    layers: int = LAYERS,
    map_hidden: int = MAP_HIDDEN,
    n_head: int = N_HEAD,
    n_body: int = N_BODY,
    embed_dim: int = EMBED_DIM,
    pe_bands: int = PE_BANDS,
) -> StudentBundle:
    rng = np.random.default_rng(seed)
    in_dim = pe_dim(3, pe_bands) + template.theta_dim + embed_dim
    dims = [in_dim] + [hidden] * (layers - 1) + [3]
    G = texture.num_gaussians
    n = n_head + n_body
    # deform MLPs start as the identity residual (zero output layer); the
    # mapping nets keep live outputs so the bilinear blend-shape product
    # U @ z has a gradient path from the start (U, C hold the zeros)
    return StudentBundle(
        body_mlp=mlp_init(dims, rng),
        cloth_mlp=mlp_init(dims, rng),
        head_map=mlp_init([template.num_expressions, map_hidden, n_head], rng, zero_last=False),
        body_map=mlp_init([template.theta_dim, map_hidden, n_body], rng, zero_last=False),
        blend_pos=np.zeros((G, 3, n), dtype=np.float32),
        blend_col=np.zeros((G, 3, n), dtype=np.float32),
        z_table=np.zeros((max(n_frames, 1), embed_dim), dtype=np.float32),
        pe_bands=pe_bands,
        theta_dim=template.theta_dim,
        eps_dim=template.num_expressions,
        embed_dim=embed_dim,
        n_head=n_head,
        n_body=n_body,
    )


def resolve_embedding(bundle: StudentBundle, frame: FrameInput, frame_index: int | None = None) -> np.ndarray:
    """Frame embedding: the frame's own, its table entry, or z_0 for
    novel poses."""
    if frame.z is not None:
        return frame.z.astype(np.float32)
    if frame_index is not None and 0 <= frame_index < bundle.z_table.shape[0]:
        return bundle.z_table[frame_index].astype(np.float32)
    return bundle.z_table[0].astype(np.float32)


def student_inputs(bundle: StudentBundle, template: RiggedTemplate, frame: FrameInput, z: np.ndarray) -> np.ndarray:
    """Per-vertex network input: encoded canonical position, pose, embedding."""
    if frame.theta.shape[0] != bundle.theta_dim:
        raise ValidationError(f"theta dim {frame.theta.shape[0]} != bundle {bundle.theta_dim}")
    if z.shape[0] != bundle.embed_dim:
        raise ValidationError(f"embedding dim {z.shape[0]} != bundle {bundle.embed_dim}")
    pe = positional_encode(template.vertices, bundle.pe_bands)
    V = pe.shape[0]
    theta = np.broadcast_to(frame.theta, (V, bundle.theta_dim))
    zz = np.broadcast_to(z, (V, bundle.embed_dim))
    return np.concatenate([pe, theta, zz], axis=1).astype(np.float32)


def student_deform(
    bundle: StudentBundle,
    template: RiggedTemplate,
    frame: FrameInput,
    frame_index: int | None = None,
) -> np.ndarray:
    """Canonical-space non-rigid deltas: cloth branch masked by the cloth
    flag plus the body branch."""
    z = resolve_embedding(bundle, frame, frame_index)
    g = student_inputs(bundle, template, frame, z)
    body = mlp_forward(bundle.body_mlp, g)
    cloth = mlp_forward(bundle.cloth_mlp, g)
    m = template.cloth_mask.astype(np.float32)[:, None]
    return cloth * m + body


def blend_coeffs(bundle: StudentBundle, frame: FrameInput) -> np.ndarray:
    """Head coefficients from expression, body coefficients from pose,
    concatenated head-first."""
    if frame.epsilon.shape[0] != bundle.eps_dim:
        raise ValidationError(f"epsilon dim {frame.epsilon.shape[0]} != bundle {bundle.eps_dim}")
    if frame.theta.shape[0] != bundle.theta_dim:
        raise ValidationError(f"theta dim {frame.theta.shape[0]} != bundle {bundle.theta_dim}")
    z_h = mlp_forward(bundle.head_map, frame.epsilon[None])[0]
    z_b = mlp_forward(bundle.body_map, frame.theta[None])[0]
    return np.concatenate([z_h, z_b]).astype(np.float32)


def blend_shape_apply(shapes: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """delta = shapes @ coeffs per row; linear in both arguments."""
    if shapes.shape[-1] != coeffs.shape[-1]:
        raise ValidationError(f"blend dims differ: {shapes.shape[-1]} vs {coeffs.shape[-1]}")
    return np.einsum("gcn,n->gc", shapes.astype(np.float32), coeffs.astype(np.float32))


@dataclass
class AnimateResult:
    target: RenderTarget
    posed_verts: np.ndarray
    vertex_delta: np.ndarray
    world: WorldGaussians
    coeffs: np.ndarray | None
    delta_u: np.ndarray | None
    delta_c: np.ndarray | None


def expression_offsets(template: RiggedTemplate, epsilon: np.ndarray) -> np.ndarray:
    if template.num_expressions == 0:
        return np.zeros_like(template.vertices)
    return np.einsum("e,evd->vd", epsilon.astype(np.float64), template.expression_basis.astype(np.float64)).astype(np.float32)


def animate_frame(
    template: RiggedTemplate,
    texture: GaussianTexture,
    bundle: StudentBundle | None,
    frame: FrameInput,
    camera: Camera,
    channels=("color", "alpha"),
    frame_index: int | None = None,
    extra_vertex_delta: np.ndarray | None = None,
    gaussian_semantic: np.ndarray | None = None,
    sort_mode: str = "exact_f32",
    threads: int = 1,
) -> AnimateResult:
    """Full per-frame pipeline: expression offsets and non-rigid deltas in
    canonical space, skinning, triangle-frame binding with blend-shape
    residuals, then splatting. Intermediates are returned for inspection.
    """
    frame.validate_for(template)
    if bundle is not None:
        bundle.validate_for(template, texture)
    delta = expression_offsets(template, frame.epsilon)
    if bundle is not None:
        delta = delta + student_deform(bundle, template, frame, frame_index)
    if extra_vertex_delta is not None:
        delta = delta + extra_vertex_delta.astype(np.float32)

    skeleton = pose_skeleton(template, frame)
    posed = lbs_forward(template, skeleton, delta)

    coeffs = delta_u = delta_c = None
    if bundle is not None:
        coeffs = blend_coeffs(bundle, frame)
        delta_u = blend_shape_apply(bundle.blend_pos, coeffs)
        delta_c = blend_shape_apply(bundle.blend_col, coeffs)

    if camera.mode == "perspective":
        view = {"view_origin": splat.camera_center(camera)}
    else:
        view = {"view_dir": splat.projection.view_direction(camera)}
    world = local_to_world(
        texture, posed, template.faces,
        delta_u=delta_u, delta_c=delta_c, semantic=gaussian_semantic, **view,
    )
    target = splat.render(world, camera, channels=channels, sort_mode=sort_mode, threads=threads)
    return AnimateResult(
        target=target,
        posed_verts=posed,
        vertex_delta=delta,
        world=world,
        coeffs=coeffs,
        delta_u=delta_u,
        delta_c=delta_c,
    )


# ---------------------------------------------------------------------------
# bundle file format


def _net_sections(prefix, layers, out, dtype):
    for i, (w, b) in enumerate(layers):
        out[f"{prefix}.{i}.w"] = np.ascontiguousarray(w, dtype=dtype)
        out[f"{prefix}.{i}.b"] = np.ascontiguousarray(b, dtype=dtype)


def _net_from_sections(prefix, sections):
    layers = []
    i = 0
    while f"{prefix}.{i}.w" in sections:
        layers.append((sections[f"{prefix}.{i}.w"], sections[f"{prefix}.{i}.b"]))
        i += 1
    if not layers:
        raise container.ContainerError(f"missing section '{prefix}.0.w'")
    return layers


def save_bundle(bundle: StudentBundle, path) -> None:
    dtype = np.float16 if bundle.precision == "fp16" else np.float32
    sections: dict[str, np.ndarray] = {}
    _net_sections("sb", bundle.body_mlp, sections, dtype)
    _net_sections("sc", bundle.cloth_mlp, sections, dtype)
    _net_sections("maph", bundle.head_map, sections, dtype)
    _net_sections("mapb", bundle.body_map, sections, dtype)
    sections["blend_pos"] = np.ascontiguousarray(bundle.blend_pos, dtype=np.float32)
    sections["blend_col"] = np.ascontiguousarray(bundle.blend_col, dtype=np.float32)
    sections["z_table"] = np.ascontiguousarray(bundle.z_table, dtype=np.float32)
    sections["meta"] = np.array(
        [bundle.pe_bands, bundle.theta_dim, bundle.eps_dim, bundle.embed_dim,
         bundle.n_head, bundle.n_body, 1 if bundle.precision == "fp16" else 0],
        dtype=np.int32,
    )
    container.write_sections(path, MAGIC_BUNDLE, sections)


def load_bundle(path) -> StudentBundle:
    s = container.read_sections(path, MAGIC_BUNDLE)
    meta = container.require(s, "meta", path)
    return StudentBundle(
        body_mlp=_net_from_sections("sb", s),
        cloth_mlp=_net_from_sections("sc", s),
        head_map=_net_from_sections("maph", s),
        body_map=_net_from_sections("mapb", s),
        blend_pos=container.require(s, "blend_pos", path),
        blend_col=container.require(s, "blend_col", path),
        z_table=container.require(s, "z_table", path),
        pe_bands=int(meta[0]),
        theta_dim=int(meta[1]),
        eps_dim=int(meta[2]),
        embed_dim=int(meta[3]),
        n_head=int(meta[4]),
        n_body=int(meta[5]),
        precision="fp16" if meta[6] else "fp32",
    )
