#!/usr/bin/env python3
"""Smoke test for the layersplat_py extension module.

Builds the cdylib with cargo (unless LAYERSPLAT_SKIP_BUILD is set), imports
it, and exercises the main types and operations end to end: the synthetic
benchmark, baseline unprojection, rendering, metrics, a short fit, scale
alignment, scene file round-trips, and the gradient checker.
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile

import numpy as np

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_and_import():
    if not os.environ.get("LAYERSPLAT_SKIP_BUILD"):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "layersplat-py"],
            cwd=REPO,
            check=True,
        )
    libdir = os.path.join(REPO, "target", "release")
    src = os.path.join(libdir, "liblayersplat_py.so")
    if not os.path.exists(src):  # macOS fallback
        src = os.path.join(libdir, "liblayersplat_py.dylib")
    stage = tempfile.mkdtemp(prefix="layersplat_py_")
    shutil.copy(src, os.path.join(stage, "layersplat_py.so"))
    sys.path.insert(0, stage)
    import layersplat_py

    return layersplat_py


def main():
    lp = build_and_import()
    print("module:", lp.__name__)

    # synthetic benchmark
    bench = lp.make_two_plane(width=48, height=32, focal=48.0, seed=7)
    cam = bench["camera"]
    source = bench["source"]
    depth = bench["depth"]
    assert source.shape == (32, 48, 3)
    assert depth.shape == (32, 48)
    assert cam.width == 48 and cam.height == 32
    print("benchmark: source", source.shape, "depth levels", sorted(set(depth.flat))[:4])

    # ground-truth scene renders the stored source view exactly
    gt = bench["gt_scene"]
    colour, alpha, _ = lp.render_scene(gt, cam, bench["source_pose"])
    assert np.array_equal(colour, source), "gt render must reproduce the stored source"
    assert 0.0 <= alpha.min() and alpha.max() <= 1.0

    # tiled renderer matches the reference path
    ref_colour, _, _ = lp.render_scene(gt, cam, bench["source_pose"], reference=True)
    assert np.abs(colour - ref_colour).max() < 1e-6

    # baseline unprojection reproduces the source view closely
    base = lp.unproject_baseline(
        source, depth, cam, s0=2.0 * math.log(0.7 * 2.0 / 48.0)
    )
    assert len(base) == 48 * 32
    base_render, _, _ = lp.render_scene(base, cam, lp.Pose.identity())
    m = lp.eval_pair(base_render, source, crop_fraction=0.05)
    print(f"baseline source-view psnr: {m['psnr_db']:.2f} dB")
    assert m["psnr_db"] > 35.0

    # metric sanity: closed forms
    a = np.full((16, 16, 3), 0.5)
    b = np.full((16, 16, 3), 0.6)
    assert abs(lp.psnr(a, b) - 20.0) < 1e-9
    assert lp.psnr(a, a) == float("inf")
    c1 = np.full((32, 24, 3), 0.2)
    c2 = np.full((32, 24, 3), 0.8)
    assert abs(lp.ssim(c1, c2) - 0.47066) < 1e-5
    loss, grad = lp.photometric_loss(c1, c2)
    assert abs(loss - 0.31497) < 1e-5 and grad.shape == c1.shape

    # short fit on the benchmark
    images = [img for img, _ in bench["targets"]]
    poses = [pose for _, pose in bench["targets"]]
    scene, history, metrics = lp.fit_layered_scene(
        source, depth, images, poses, cam, steps=60, learning_rate=1e-2, padding=2
    )
    print(f"fit: loss {history[0]:.4f} -> {history[-1]:.4f}, "
          f"target psnr {metrics[0]['psnr_db']:.2f} dB")
    assert history[-1] < history[0]
    assert metrics[0]["psnr_db"] > 25.0

    held_img, held_pose = bench["heldout"]
    held_render, _, _ = lp.render_scene(scene, cam, held_pose)
    held = lp.eval_pair(held_render, held_img)
    print(f"fit: held-out psnr {held['psnr_db']:.2f} dB")

    # scale alignment
    pred = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    ref = [2.0 * d for d in pred]
    assert abs(lp.scale_lsq(pred, ref) - 2.0) < 1e-12
    scale, inliers = lp.scale_ransac(pred + [1.0], ref + [50.0], seed=1)
    assert abs(scale - 2.0) < 1e-9 and len(inliers) == 6

    # scene file + ply round trips
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "scene.fl3d")
        base.save(path)
        back = lp.Scene.load(path)
        assert len(back) == len(base)
        ply = os.path.join(d, "scene.ply")
        back.export_ply(ply)
        again = lp.Scene.import_ply(ply)
        assert np.abs(again.means() - back.means()).max() < 1e-5

    # analytic gradients agree with finite differences
    report = lp.gradcheck(seed=3, gaussians=15, degree=1)
    print("gradcheck:", {k: f"{v:.2e}" for k, v in report.items()})
    for cls, rel in report.items():
        tol = 1e-3 if cls == "rotation" else 1e-4
        assert rel < tol, f"{cls} gradient check failed: {rel}"

    print("smoke test passed")


if __name__ == "__main__":
    main()
