"""The two training stages.

Baking distills teacher deformation maps into the student MLPs while
refining Gaussian local attributes against teacher renders; fine-tuning
freezes the deformation field and fits the mapping networks and blend
shapes. Both stages assemble a per-frame graph over the autodiff engine
and step Adam with per-group learning rates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import deform, splat
from ..assets import (
    Camera,
    FrameInput,
    GaussianTexture,
    MotionSequence,
    RiggedTemplate,
    ValidationError,
)
from ..gstexture import sh_basis, surface_points, triangle_frames
from ..rotations import matrix_to_quat, quat_multiply, quat_to_matrix
from ..skinning import blend_vertex_matrices, pose_skeleton, skinning_matrices
from . import losses, ops
from .engine import Tensor, concat, constant, mlp_apply
from .optim import Adam

SEM_ALPHA_THRESHOLD = 1e-3
NORMAL_MASK_THRESHOLD = 0.5


@dataclass
class LossWeights:
    """Loss term weights. The perceptual term is kept for config fidelity
    but forced to zero at use (no pretrained feature network here)."""

    ssim: float = 0.2
    lpips: float = 0.01
    nor: float = 0.02
    non: float = 0.1
    sem: float = 1.0

    def validate(self) -> None:
        for name in ("ssim", "lpips", "nor", "non", "sem"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name} must be nonnegative")


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 1
    lrs: dict = field(default_factory=dict)
    # frame embeddings exist to absorb registration error; decay keeps
    # them from shortcutting pose-dependent structure the MLPs should own
    weight_decay: dict = field(default_factory=lambda: {"embeddings": 1.0})
    seed: int = 0
    map_resolution: int = 128
    tau: float = 25.0
    weights: LossWeights = field(default_factory=LossWeights)
    freeze_blend_shapes: bool = True     # bake stage
    freeze_deform_field: bool = True     # finetune stage
    # embeddings absorb registration error; with exactly-registered
    # synthetic poses they only offer a memorization shortcut, so runs on
    # synthetic data may freeze them at zero
    freeze_embeddings: bool = False
    checkpoint_every: int = 200
    log_every: int = 25
    threads: int = 1

    def validate(self) -> None:
        if self.iterations <= 0:
            raise ValidationError("iterations must be positive")
        if self.batch_size <= 0:
            raise ValidationError("batch size must be positive")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        self.weights.validate()


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last good checkpoint."""

    def __init__(self, iteration: int, bundle, texture):
        self.iteration = iteration
        self.bundle = bundle
        self.texture = texture
        super().__init__(f"loss diverged at iteration {iteration}; last good checkpoint attached")


def format_log_line(rec: dict) -> str:
    keys = ["iter", "l1", "dssim", "nor", "non", "sem", "total", "wall_ms"]
    return " ".join(f"{k}={rec[k]:.6g}" if isinstance(rec[k], float) else f"{k}={rec[k]}" for k in keys if k in rec)


def write_train_log(history: list[dict], path) -> None:
    with open(path, "w") as f:
        for rec in history:
            f.write(format_log_line(rec) + "\n")


# ---------------------------------------------------------------------------
# per-frame constant preparation


@dataclass
class FramePrep:
    """Pose-dependent constants for one training frame."""

    frame: FrameInput
    camera: Camera
    blend_mats: np.ndarray     # [V,4,4]
    expr_delta: np.ndarray     # [V,3]
    rot_g: np.ndarray          # [G,3,3] triangle rotations per Gaussian
    normal_g: np.ndarray       # [G,3] world normals (triangle frame column 0)
    world_rot_g: np.ndarray    # [G,3,3] triangle x local rotation
    scale_g: np.ndarray        # [G,3] world scales
    basis_g: np.ndarray        # [G,B] SH basis at the forward view direction
    normals_value: np.ndarray  # [G,3] composited normal channel values
    posed_np: np.ndarray       # [V,3] forward posed vertices


def prepare_frame(
    template: RiggedTemplate,
    texture: GaussianTexture,
    bundle: deform.StudentBundle,
    frame: FrameInput,
    camera: Camera,
    delta_np: np.ndarray,
) -> FramePrep:
    """Linearize the frame: everything the graph treats as constant."""
    skeleton = pose_skeleton(template, frame)
    mats = blend_vertex_matrices(template.skin_idx, template.skin_w,
                                 skinning_matrices(template, skeleton)).astype(np.float64)
    expr = deform.expression_offsets(template, frame.epsilon)
    v_can = template.vertices.astype(np.float64) + expr + delta_np
    posed = np.einsum("vab,vb->va", mats[:, :3, :3], v_can) + mats[:, :3, 3]

    R_face, e_face, _ = triangle_frames(posed, template.faces)
    f = texture.face_idx.astype(np.int64)
    rot_g = R_face[f]
    normal_g = rot_g[:, :, 0]
    local_rot = quat_to_matrix(texture.rotation.astype(np.float64))
    world_rot = rot_g @ local_rot
    scale_g = e_face[f][:, None] * np.exp(texture.log_scale.astype(np.float64))

    p_np = surface_points(posed, template.faces, texture.face_idx, texture.uv.astype(np.float64))
    means_np = p_np + texture.gamma.astype(np.float64)[:, None] * normal_g
    if camera.mode == "perspective":
        d = means_np - splat.camera_center(camera).astype(np.float64)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    else:
        d = np.broadcast_to(splat.projection.view_direction(camera).astype(np.float64), means_np.shape)
    local_dir = np.einsum("gba,gb->ga", rot_g, d)
    basis = sh_basis(local_dir, texture.sh_degree)

    return FramePrep(
        frame=frame,
        camera=camera,
        blend_mats=mats,
        expr_delta=expr.astype(np.float64),
        rot_g=rot_g,
        normal_g=normal_g,
        world_rot_g=world_rot,
        scale_g=scale_g,
        basis_g=basis,
        normals_value=world_rot[:, :, 0],
        posed_np=posed,
    )


def student_delta_graph(
    params: dict,
    template: RiggedTemplate,
    bundle: deform.StudentBundle,
    frame: FrameInput,
    frame_index: int,
    dtype=np.float32,
) -> Tensor:
    """Differentiable student deformation for one frame."""
    pe = deform.positional_encode(template.vertices, bundle.pe_bands).astype(dtype)
    V = pe.shape[0]
    theta = np.broadcast_to(frame.theta.astype(dtype), (V, bundle.theta_dim))
    base = constant(np.concatenate([pe, theta], axis=1))
    z_row = params["z_table"][np.array([frame_index])]  # [1, Z]
    z_b = z_row.broadcast_to((V, bundle.embed_dim))
    g = concat([base, z_b], axis=1)
    body = mlp_apply(params["sb"], g)
    cloth = mlp_apply(params["sc"], g)
    mask = constant(template.cloth_mask.astype(dtype)[:, None])
    return cloth * mask + body


def _tensor_net(layers, requires_grad=True, dtype=np.float32):
    return [
        (Tensor(np.array(w, dtype=dtype), requires_grad), Tensor(np.array(b, dtype=dtype), requires_grad))
        for (w, b) in layers
    ]


def _net_arrays(tensors):
    return [(w.data.astype(np.float32), b.data.astype(np.float32)) for (w, b) in tensors]


def _flatten_nets(nets):
    out = []
    for net in nets:
        for w, b in net:
            out.extend([w, b])
    return out


# ---------------------------------------------------------------------------
# baking


def bake(
    template: RiggedTemplate,
    texture: GaussianTexture,
    bundle: deform.StudentBundle,
    teacher,
    sequence: MotionSequence,
    config: TrainConfig,
) -> tuple[deform.StudentBundle, GaussianTexture, list[dict]]:
    """Distill the teacher into the student field and refine local
    attributes. Returns (bundle, texture, history); the inputs are not
    mutated. Blend shapes stay frozen at zero during this stage.
    """
    config.validate()
    bundle.validate_for(template, texture)
    weights = config.weights
    lam_lpips = 0.0  # forced; config keeps the field for fidelity
    del lam_lpips
    if len(teacher.frames) != len(sequence):
        raise ValidationError(
            f"teacher supplies {len(teacher.frames)} frames, sequence has {len(sequence)}"
        )

    front_cache, back_cache, bounds = splat.map_caches(template, config.map_resolution)
    for t, tf in enumerate(teacher.frames):
        if tf.dmap is None:
            raise ValidationError(f"teacher frame {t} carries no deformation maps")
        if tf.dmap.front.shape[0] != front_cache.height or tf.dmap.front.shape[1] != front_cache.width:
            raise ValidationError(
                f"teacher frame {t}: map resolution {tf.dmap.front.shape[:2]} != config {config.map_resolution}"
            )
    student_front_mask = np.zeros((front_cache.height, front_cache.width), dtype=bool)
    student_front_mask[front_cache.pix_rows, front_cache.pix_cols] = True
    student_back_mask = np.zeros((back_cache.height, back_cache.width), dtype=bool)
    student_back_mask[back_cache.pix_rows, back_cache.pix_cols] = True
    mask_warnings = []
    for t, tf in enumerate(teacher.frames):
        d = max(losses.mask_disagreement(student_front_mask, tf.dmap.front_mask),
                losses.mask_disagreement(student_back_mask, tf.dmap.back_mask))
        if d > 0.2:
            mask_warnings.append((t, d))

    sem_labels = ops.semantic_label(template, config.tau)
    sem_g = ops.gaussian_semantic(template, texture, config.tau)

    params = {
        "sb": _tensor_net(bundle.body_mlp),
        "sc": _tensor_net(bundle.cloth_mlp),
        "z_table": Tensor(np.array(bundle.z_table, dtype=np.float32),
                          requires_grad=not config.freeze_embeddings),
        "o": Tensor(np.array(texture.opacity_logit, dtype=np.float32), True),
        "sh": Tensor(np.array(texture.sh, dtype=np.float32), True),
        "gamma": Tensor(np.array(texture.gamma, dtype=np.float32), True),
        # rotation/scale are registered parameter groups, but the splat
        # backward is restricted to color/opacity/mean, so they hold still
        "rot": Tensor(np.array(texture.rotation, dtype=np.float32), True),
        "log_scale": Tensor(np.array(texture.log_scale, dtype=np.float32), True),
    }
    groups = {
        "mlp": _flatten_nets([params["sb"], params["sc"]]),
        "attributes": [params["o"], params["sh"], params["gamma"], params["rot"], params["log_scale"]],
    }
    if not config.freeze_embeddings:
        groups["embeddings"] = [params["z_table"]]
    opt = Adam(groups, lrs=config.lrs, weight_decay=config.weight_decay)

    def snapshot():
        b = replace(
            bundle,
            body_mlp=_net_arrays(params["sb"]),
            cloth_mlp=_net_arrays(params["sc"]),
            z_table=params["z_table"].data.copy(),
        )
        tex = replace(
            texture,
            opacity_logit=params["o"].data.copy(),
            sh=params["sh"].data.copy(),
            gamma=params["gamma"].data.copy(),
            rotation=params["rot"].data.copy(),
            log_scale=params["log_scale"].data.copy(),
        )
        return b, tex

    history: list[dict] = []
    if mask_warnings:
        history.append({"iter": -1, "warning": f"mask disagreement on {len(mask_warnings)} frames",
                        "frames": [t for t, _ in mask_warnings]})
    last_good = snapshot()
    T = len(sequence)

    for it in range(config.iterations):
        t0 = time.perf_counter()
        opt.zero_grad()
        rec = {"iter": it, "l1": 0.0, "dssim": 0.0, "nor": 0.0, "non": 0.0, "sem": 0.0, "total": 0.0}
        for bi in range(config.batch_size):
            t = (it * config.batch_size + bi) % T
            frame = sequence.frames[t]
            camera = sequence.camera_for(t)
            tf = teacher.frames[t]

            delta_t = student_delta_graph(params, template, bundle, frame, t)
            delta_np = delta_t.data.astype(np.float64)
            prep = prepare_frame(template, texture, bundle, frame, camera, delta_np)

            parts = {}
            loss = None
            if weights.non > 0:
                map_f = ops.mesh_map_apply(delta_t, front_cache)
                map_b = ops.mesh_map_apply(delta_t, back_cache)
                l_non = losses.loss_nonrigid(map_f, map_b, tf.dmap)
                parts["non"] = l_non
                loss = l_non * weights.non

            posed = ops.points_affine(constant(
                (template.vertices.astype(np.float64) + prep.expr_delta).astype(np.float32)) + delta_t,
                prep.blend_mats.astype(np.float32))
            p = ops.bary_points(posed, template.faces, texture.face_idx, texture.uv)
            gamma_off = params["gamma"].reshape(-1, 1) * constant(prep.normal_g.astype(np.float32))
            means = p + gamma_off

            color = (params["sh"] * constant(prep.basis_g.astype(np.float32)[:, None, :])).sum(axis=2) + 0.5
            color = color.clamp(0.0, 1.0)
            opacity = params["o"].sigmoid()
            values = concat([
                color,
                constant(prep.normals_value.astype(np.float32)),
                constant(sem_g),
            ], axis=1)

            img = ops.splat_render(
                means, values, opacity, camera,
                prep.world_rot_g.astype(np.float32), prep.scale_g.astype(np.float32),
                threads=config.threads,
            )
            color_img = img[:, :, 0:3]
            normal_img = img[:, :, 3:6]
            sem_img = img[:, :, 6:9]

            l1 = losses.loss_l1(color_img, tf.gt_color)
            parts["l1"] = l1
            l_rec = l1
            if weights.ssim > 0:
                d = losses.loss_dssim(color_img, tf.gt_color)
                parts["dssim"] = d
                l_rec = l_rec + d * weights.ssim
            if weights.nor > 0:
                n = losses.loss_normal(normal_img, tf.gt_normal, tf.gt_mask)
                parts["nor"] = n
                l_rec = l_rec + n * weights.nor
            loss = l_rec if loss is None else loss + l_rec

            if weights.sem > 0:
                mesh_sem, mesh_mask, _ = splat.rasterize_mesh_camera(
                    prep.posed_np, template.faces, sem_labels, camera)
                alpha_fwd = img.data[:, :, -1]
                union = mesh_mask | (alpha_fwd > SEM_ALPHA_THRESHOLD)
                l_sem = losses.loss_semantic(sem_img, mesh_sem, union)
                parts["sem"] = l_sem
                loss = loss + l_sem * weights.sem

            total = float(loss.data)
            if not np.isfinite(total):
                raise TrainingDiverged(it, *last_good)
            loss.backward()
            for key in ("l1", "dssim", "nor", "non", "sem"):
                if key in parts:
                    rec[key] += float(parts[key].data) / config.batch_size
            rec["total"] += total / config.batch_size

        opt.step()
        rec["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        history.append(rec)
        if (it + 1) % config.checkpoint_every == 0:
            last_good = snapshot()

    new_bundle, new_texture = snapshot()
    return new_bundle, new_texture, history


# ---------------------------------------------------------------------------
# fine-tuning


def finetune(
    template: RiggedTemplate,
    texture: GaussianTexture,
    bundle: deform.StudentBundle,
    gt_frames: list,
    sequence: MotionSequence,
    config: TrainConfig,
) -> tuple[deform.StudentBundle, list[dict]]:
    """Freeze the deformation field; fit mapping networks and the two
    blend shapes against rendered ground truth (L1 + D-SSIM + normal)."""
    config.validate()
    bundle.validate_for(template, texture)
    weights = config.weights
    if len(gt_frames) != len(sequence):
        raise ValidationError(f"{len(gt_frames)} gt frames for {len(sequence)} sequence frames")

    G = texture.num_gaussians
    n = bundle.n_coeffs
    params = {
        "maph": _tensor_net(bundle.head_map),
        "mapb": _tensor_net(bundle.body_map),
        "U": Tensor(np.array(bundle.blend_pos, dtype=np.float32), True),
        "C": Tensor(np.array(bundle.blend_col, dtype=np.float32), True),
    }
    opt = Adam(
        {
            "mlp": _flatten_nets([params["maph"], params["mapb"]]),
            "blend": [params["U"], params["C"]],
        },
        lrs=config.lrs,
        weight_decay=config.weight_decay,
    )

    def snapshot():
        return replace(
            bundle,
            head_map=_net_arrays(params["maph"]),
            body_map=_net_arrays(params["mapb"]),
            blend_pos=params["U"].data.copy(),
            blend_col=params["C"].data.copy(),
        )

    # the deformation field is frozen: frame constants are reusable
    preps: list[FramePrep] = []
    sh_colors: list[np.ndarray] = []
    for t, frame in enumerate(sequence.frames):
        delta_np = deform.student_deform(bundle, template, frame, frame_index=t).astype(np.float64)
        prep = prepare_frame(template, texture, bundle, frame, sequence.camera_for(t), delta_np)
        preps.append(prep)
        base_color = np.einsum("gcb,gb->gc", texture.sh.astype(np.float64), prep.basis_g) + 0.5
        sh_colors.append(base_color.astype(np.float32))

    opacity_np = texture.opacity().astype(np.float32)
    base_means = []
    for prep in preps:
        p = surface_points(prep.posed_np, template.faces, texture.face_idx, texture.uv.astype(np.float64))
        base_means.append((p + texture.gamma.astype(np.float64)[:, None] * prep.normal_g).astype(np.float32))

    history: list[dict] = []
    last_good = snapshot()
    T = len(sequence)
    for it in range(config.iterations):
        t0 = time.perf_counter()
        opt.zero_grad()
        rec = {"iter": it, "l1": 0.0, "dssim": 0.0, "nor": 0.0, "non": 0.0, "sem": 0.0, "total": 0.0}
        for bi in range(config.batch_size):
            t = (it * config.batch_size + bi) % T
            frame = sequence.frames[t]
            prep = preps[t]
            gt = gt_frames[t]

            z_h = mlp_apply(params["maph"], constant(frame.epsilon[None].astype(np.float32)))
            z_b = mlp_apply(params["mapb"], constant(frame.theta[None].astype(np.float32)))
            coeffs = concat([z_h, z_b], axis=1).reshape(n)

            du = (params["U"] * coeffs.broadcast_to((G, 3, n))).sum(axis=2)
            dc = (params["C"] * coeffs.broadcast_to((G, 3, n))).sum(axis=2)

            means = constant(base_means[t]) + ops.rotate_rows(du, prep.rot_g.astype(np.float32))
            color = (constant(sh_colors[t]) + dc).clamp(0.0, 1.0)
            values = concat([color, constant(prep.normals_value.astype(np.float32))], axis=1)

            img = ops.splat_render(
                means, values, constant(opacity_np), prep.camera,
                prep.world_rot_g.astype(np.float32), prep.scale_g.astype(np.float32),
                threads=config.threads,
            )
            color_img = img[:, :, 0:3]
            normal_img = img[:, :, 3:6]

            l1 = losses.loss_l1(color_img, gt.gt_color)
            loss = l1
            rec["l1"] += float(l1.data) / config.batch_size
            if weights.ssim > 0:
                d = losses.loss_dssim(color_img, gt.gt_color)
                rec["dssim"] += float(d.data) / config.batch_size
                loss = loss + d * weights.ssim
            if weights.nor > 0 and gt.gt_normal is not None:
                nrm = losses.loss_normal(normal_img, gt.gt_normal, gt.gt_mask)
                rec["nor"] += float(nrm.data) / config.batch_size
                loss = loss + nrm * weights.nor

            total = float(loss.data)
            if not np.isfinite(total):
                raise TrainingDiverged(it, last_good, texture)
            loss.backward()
            rec["total"] += total / config.batch_size

        opt.step()
        rec["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        history.append(rec)
        if (it + 1) % config.checkpoint_every == 0:
            last_good = snapshot()

    return snapshot(), history


def evaluate_nonrigid(
    template: RiggedTemplate,
    bundle: deform.StudentBundle,
    teacher,
    sequence: MotionSequence,
    map_resolution: int = 128,
) -> float:
    """Mean front+back map L1 against a teacher over a (held-out)
    sequence, driving novel frames with the z_0 convention."""
    front_cache, back_cache, _ = splat.map_caches(template, map_resolution)
    total = 0.0
    for t, frame in enumerate(sequence.frames):
        novel = FrameInput(frame.theta, frame.epsilon, frame.root, bundle.z_table[0])
        delta = deform.student_deform(bundle, template, novel).astype(np.float64)
        sf, _ = front_cache.apply(delta)
        sb, _ = back_cache.apply(delta)
        tf = teacher.frames[t]
        l = losses.loss_nonrigid(constant(sf.astype(np.float64)), constant(sb.astype(np.float64)), tf.dmap)
        total += float(l.data)
    return total / len(sequence)
