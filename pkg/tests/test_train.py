import dataclasses

import numpy as np
import pytest

from meshsplat import assets, deform, gstexture, splat, teacher, train
from meshsplat.train import engine, losses, ops


# ---------------------------------------------------------------------------
# losses


def test_losses_zero_on_identical_inputs():
    rng = np.random.default_rng(0)
    img = rng.random((24, 24, 3))
    pred = engine.Tensor(img.copy(), requires_grad=True)
    l1 = losses.loss_l1(pred, img)
    assert float(l1.data) == 0.0
    l1.backward()
    assert np.all(pred.grad == 0)

    pred = engine.Tensor(img.copy(), requires_grad=True)
    d = losses.loss_dssim(pred, img)
    assert abs(float(d.data)) < 1e-12
    assert abs(float(losses.ssim(engine.constant(img), img).data) - 1.0) < 1e-12


def test_l1_constant_offset_closed_form():
    rng = np.random.default_rng(1)
    gt = rng.random((16, 16, 3)) * 0.5
    pred = engine.constant(gt + 0.1)
    assert abs(float(losses.loss_l1(pred, gt).data) - 0.1) < 1e-9


def test_dssim_positive_for_different_images():
    rng = np.random.default_rng(2)
    a = rng.random((20, 20, 3))
    b = rng.random((20, 20, 3))
    assert float(losses.loss_dssim(engine.constant(a), b).data) > 0.0


def test_normal_loss_masked_mean():
    pred = np.zeros((8, 8, 3))
    gt = np.zeros((8, 8, 3))
    gt[:4, :, 0] = 0.5
    mask = np.zeros((8, 8), bool)
    mask[:4] = True
    val = losses.loss_normal(engine.constant(pred), gt, mask)
    # mean L1 over masked pixels and 3 channels: 0.5 / 3
    assert abs(float(val.data) - 0.5 / 3.0) < 1e-9


def test_nonrigid_constant_offset_normalization(clothed_rig):
    res = 48
    bounds = splat.map_bounds(clothed_rig.vertices)
    zero = np.zeros_like(clothed_rig.vertices)
    dmap = splat.deformation_maps(clothed_rig, zero, resolution=res, bounds=bounds)
    c = 0.37
    front_cache, back_cache, _ = splat.map_caches(clothed_rig, res, bounds)
    student_f = engine.constant(dmap.front + c)  # offset the front side only
    student_b = engine.constant(dmap.back)
    val = float(losses.loss_nonrigid(student_f, student_b, dmap).data)
    nf = int(dmap.front_mask.sum())
    nb = int(dmap.back_mask.sum())
    assert abs(val - c * nf / (nf + nb)) < 1e-6
    del front_cache, back_cache


def test_nonrigid_zero_when_equal(clothed_rig):
    rng = np.random.default_rng(3)
    delta = rng.normal(size=clothed_rig.vertices.shape).astype(np.float32)
    dmap = splat.deformation_maps(clothed_rig, delta, resolution=32)
    val = losses.loss_nonrigid(engine.constant(dmap.front), engine.constant(dmap.back), dmap)
    assert float(val.data) == 0.0


def test_mask_disagreement_fraction():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    a[:2] = True
    b[:2] = True
    assert losses.mask_disagreement(a, b) == 0.0
    b[2] = True
    assert abs(losses.mask_disagreement(a, b) - 4 / 12) < 1e-9


def test_semantic_loss_zero_when_equal():
    rng = np.random.default_rng(4)
    img = rng.random((16, 16, 3))
    mask = rng.random((16, 16)) > 0.5
    assert float(losses.loss_semantic(engine.constant(img), img, mask).data) == 0.0


# ---------------------------------------------------------------------------
# semantic labels


def test_semantic_label_zero_position_gives_color(clothed_rig):
    t = dataclasses.replace(clothed_rig, vertices=np.zeros_like(clothed_rig.vertices))
    e = ops.semantic_label(t, tau=25.0)
    assert np.abs(e - t.seg_colors).max() < 1e-7


def test_semantic_label_tau_scaling(clothed_rig):
    v = clothed_rig.vertices[17]
    e1 = ops.semantic_label(clothed_rig, tau=10.0)[17]
    e2 = ops.semantic_label(clothed_rig, tau=20.0)[17]
    expect1 = clothed_rig.seg_colors[17] + np.sin(10.0 * v)
    expect2 = clothed_rig.seg_colors[17] + np.sin(20.0 * v)
    assert np.abs(e1 - expect1).max() < 1e-6
    assert np.abs(e2 - expect2).max() < 1e-6


def test_gaussian_semantic_barycentric(clothed_rig):
    tex = gstexture.init_texture(clothed_rig, 1, 1, seed=0)
    # move gaussian 0 to the barycenter of its face
    tex = dataclasses.replace(tex, uv=tex.uv.copy())
    tex.uv[0] = (1 / 3, 1 / 3)
    labels = ops.semantic_label(clothed_rig, tau=25.0)
    g = ops.gaussian_semantic(clothed_rig, tex, tau=25.0)
    corners = clothed_rig.faces[tex.face_idx[0]].astype(int)
    assert np.abs(g[0] - labels[corners].mean(axis=0)).max() < 1e-5


def test_semantic_label_requires_positive_tau(clothed_rig):
    with pytest.raises(ValueError):
        ops.semantic_label(clothed_rig, tau=0.0)


# ---------------------------------------------------------------------------
# grad_check behavior


def test_grad_check_reports_wrong_gradients():
    def f(params):
        (x,) = params
        loss = float((x ** 2).sum())
        return loss, [2.0 * x + 0.5]  # deliberately wrong

    r = train.grad_check(f, [np.array([1.0, 2.0, 3.0])], tol=1e-3)
    assert not r.ok
    assert len(r.failures) == 3


def test_grad_check_passes_correct_gradients():
    def f(params):
        (x,) = params
        return float((x ** 2).sum()), [2.0 * x]

    r = train.grad_check(f, [np.array([1.0, 2.0, 3.0])], tol=1e-3)
    assert r.ok


# ---------------------------------------------------------------------------
# quantization


def test_quantize_zero_weights_identical(clothed_rig, clothed_texture):
    b = deform.init_bundle(clothed_rig, clothed_texture, n_frames=2, seed=0)
    zeroed = dataclasses.replace(
        b,
        body_mlp=[(np.zeros_like(w), np.zeros_like(bb)) for w, bb in b.body_mlp],
        cloth_mlp=[(np.zeros_like(w), np.zeros_like(bb)) for w, bb in b.cloth_mlp],
        head_map=[(np.zeros_like(w), np.zeros_like(bb)) for w, bb in b.head_map],
        body_map=[(np.zeros_like(w), np.zeros_like(bb)) for w, bb in b.body_map],
    )
    q, report = train.quantize_bundle(zeroed)
    assert report.max_rel == 0.0
    x = np.random.default_rng(0).normal(size=(5, b.input_dim)).astype(np.float32)
    assert np.array_equal(deform.mlp_forward(q.body_mlp, x), deform.mlp_forward(zeroed.body_mlp, x))


def test_quantize_reports_deviation_within_bound(clothed_rig, clothed_texture):
    rng = np.random.default_rng(1)
    b = deform.init_bundle(clothed_rig, clothed_texture, n_frames=2, seed=1)
    b = dataclasses.replace(
        b,
        body_mlp=[(rng.normal(scale=1.0 / np.sqrt(w.shape[0]), size=w.shape).astype(np.float32),
                   rng.normal(scale=0.1, size=bb.shape).astype(np.float32)) for w, bb in b.body_mlp],
        cloth_mlp=[(rng.normal(scale=1.0 / np.sqrt(w.shape[0]), size=w.shape).astype(np.float32),
                    rng.normal(scale=0.1, size=bb.shape).astype(np.float32)) for w, bb in b.cloth_mlp],
    )
    q, report = train.quantize_bundle(b)
    assert report.ok, report.summary()
    assert 0.0 < report.max_rel < report.bound
    assert q.precision == "fp16"


def test_quantize_idempotent(clothed_rig, clothed_texture):
    rng = np.random.default_rng(2)
    b = deform.init_bundle(clothed_rig, clothed_texture, n_frames=2, seed=2)
    b = dataclasses.replace(b, body_mlp=[
        (rng.normal(size=w.shape).astype(np.float32) * 0.1, rng.normal(size=bb.shape).astype(np.float32) * 0.1)
        for w, bb in b.body_mlp
    ])
    q1, _ = train.quantize_bundle(b)
    q2, _ = train.quantize_bundle(q1)
    for (w1, b1), (w2, b2) in zip(q1.body_mlp, q2.body_mlp):
        assert np.array_equal(w1, w2)
        assert w1.dtype == w2.dtype == np.float16
        assert np.array_equal(b1, b2)


# ---------------------------------------------------------------------------
# training-stage behaviors (tiny runs)


@pytest.fixture(scope="module")
def tiny_setup():
    t = assets.make_capsule_rig(4, cloth=True, seed=3)
    tex = gstexture.init_texture(t, 1, 1, seed=2)
    mot = assets.make_swing_motion(t, 3, seed=1, resolution=(48, 48))
    src = teacher.procedural_teacher(t, tex, mot, field="sway", amplitude=0.2, seed=4,
                                     map_resolution=48)
    return t, tex, mot, src


def _bundle_for(t, tex, mot, seed=5):
    return deform.init_bundle(t, tex, n_frames=len(mot), seed=seed)


def test_bake_reproducible_bit_identical(tiny_setup):
    t, tex, mot, src = tiny_setup
    cfg = train.TrainConfig(iterations=6, map_resolution=48, seed=0,
                            weights=train.LossWeights(sem=0.0))
    b1, tex1, h1 = train.bake(t, tex, _bundle_for(t, tex, mot), src, mot, cfg)
    b2, tex2, h2 = train.bake(t, tex, _bundle_for(t, tex, mot), src, mot, cfg)
    assert [r["total"] for r in h1] == [r["total"] for r in h2]
    for (w1, bb1), (w2, bb2) in zip(b1.body_mlp, b2.body_mlp):
        assert np.array_equal(w1, w2)
    assert np.array_equal(tex1.sh, tex2.sh)


def test_bake_gradient_isolation_lambda_zero(tiny_setup):
    # with non/sem weights at zero the first-step parameter state matches
    # a run whose teacher maps are replaced by garbage (those paths are
    # never evaluated)
    t, tex, mot, src = tiny_setup
    cfg = train.TrainConfig(iterations=2, map_resolution=48, seed=0,
                            weights=train.LossWeights(non=0.0, sem=0.0))
    doctored = teacher.TeacherSource(
        frames=[teacher.TeacherFrame(
            dmap=dataclasses.replace(f.dmap, front=f.dmap.front + 123.0),
            gt_color=f.gt_color, gt_normal=f.gt_normal, gt_mask=f.gt_mask) for f in src.frames],
        provenance="doctored", map_resolution=src.map_resolution)
    b1, _, _ = train.bake(t, tex, _bundle_for(t, tex, mot), src, mot, cfg)
    b2, _, _ = train.bake(t, tex, _bundle_for(t, tex, mot), doctored, mot, cfg)
    for (w1, bb1), (w2, bb2) in zip(b1.body_mlp, b2.body_mlp):
        assert np.array_equal(w1, w2)
        assert np.array_equal(bb1, bb2)


def test_bake_nan_teacher_aborts_with_checkpoint(tiny_setup):
    t, tex, mot, src = tiny_setup
    bad = teacher.TeacherSource(
        frames=[teacher.TeacherFrame(
            dmap=f.dmap, gt_color=np.full_like(f.gt_color, np.nan),
            gt_normal=f.gt_normal, gt_mask=f.gt_mask) for f in src.frames],
        provenance="nan", map_resolution=src.map_resolution)
    cfg = train.TrainConfig(iterations=3, map_resolution=48, seed=0,
                            weights=train.LossWeights(sem=0.0))
    with pytest.raises(train.TrainingDiverged) as ei:
        train.bake(t, tex, _bundle_for(t, tex, mot), bad, mot, cfg)
    assert ei.value.bundle is not None
    assert ei.value.texture is not None
    assert ei.value.iteration == 0


def test_bake_requires_matching_map_resolution(tiny_setup):
    t, tex, mot, src = tiny_setup
    cfg = train.TrainConfig(iterations=1, map_resolution=64)
    with pytest.raises(assets.ValidationError, match="resolution"):
        train.bake(t, tex, _bundle_for(t, tex, mot), src, mot, cfg)


def test_bake_mask_disagreement_warning(tiny_setup):
    t, tex, mot, src = tiny_setup
    shrunk = []
    for f in src.frames:
        fm = f.dmap.front_mask.copy()
        fm[: fm.shape[0] // 2] = False  # drop half the valid pixels
        shrunk.append(teacher.TeacherFrame(
            dmap=dataclasses.replace(f.dmap, front_mask=fm),
            gt_color=f.gt_color, gt_normal=f.gt_normal, gt_mask=f.gt_mask))
    bad = teacher.TeacherSource(shrunk, "shrunk", src.map_resolution)
    cfg = train.TrainConfig(iterations=1, map_resolution=48, seed=0,
                            weights=train.LossWeights(sem=0.0))
    _, _, hist = train.bake(t, tex, _bundle_for(t, tex, mot), bad, mot, cfg)
    assert any("warning" in rec for rec in hist)


def test_finetune_fixed_point_when_gt_matches(tiny_setup):
    t, tex, mot, src = tiny_setup
    bundle = _bundle_for(t, tex, mot)
    # ground truth = the model's own pre-finetune renders
    gently = []
    for i, frame in enumerate(mot.frames):
        res = deform.animate_frame(t, tex, bundle, frame, mot.camera_for(i),
                                   channels=("color", "alpha", "normal"), frame_index=i)
        gently.append(teacher.TeacherFrame(
            dmap=None, gt_color=res.target.color,
            gt_normal=res.target.normal, gt_mask=res.target.alpha > 0.5))
    cfg = train.TrainConfig(iterations=12, map_resolution=48, seed=0)
    tuned, hist = train.finetune(t, tex, bundle, gently, mot, cfg)
    assert hist[0]["l1"] < 1e-6
    assert np.abs(tuned.blend_pos).max() < 1e-4
    assert np.abs(tuned.blend_col).max() < 1e-4


def test_train_log_format(tiny_setup, tmp_path):
    t, tex, mot, src = tiny_setup
    cfg = train.TrainConfig(iterations=2, map_resolution=48, seed=0,
                            weights=train.LossWeights(sem=0.0))
    _, _, hist = train.bake(t, tex, _bundle_for(t, tex, mot), src, mot, cfg)
    p = tmp_path / "log.txt"
    train.write_train_log([h for h in hist if "total" in h], p)
    lines = p.read_text().strip().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("iter=0 ")
    assert "non=" in lines[0] and "wall_ms=" in lines[0]


def test_loss_weights_validation():
    with pytest.raises(assets.ValidationError):
        train.LossWeights(ssim=-0.1).validate()
    with pytest.raises(assets.ValidationError):
        train.TrainConfig(iterations=0).validate()
