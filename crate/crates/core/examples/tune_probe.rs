use layersplat::geometry::{CameraIntrinsics, Pose};
use layersplat::render::{render, RenderOptions};
use layersplat::scene::{Gaussian3D, GaussianScene};
use layersplat::sh::ShCoefficients;
use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn perf_scene(seed: u64, n: usize, f: f64) -> GaussianScene {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut scene = GaussianScene::with_capacity(0, n);
    for _ in 0..n {
        let z = rng.random_range(1.5..8.0);
        let mean = Vector3::new(rng.random_range(-0.65..0.65) * z, rng.random_range(-0.45..0.45) * z, z);
        let sigma_px = rng.random_range(0.6..1.5);
        let var = (sigma_px * z / f).powi(2);
        scene.push(Gaussian3D {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: Vector3::new(var, var, var),
            opacity: rng.random_range(0.3..0.95),
            colour: ShCoefficients::from_rgb([rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]),
        }).unwrap();
    }
    scene
}

fn main() {
    let cam = CameraIntrinsics::new(300.0, 300.0, 192.0, 128.0, 384, 256).unwrap();
    let scene = perf_scene(42, 200_000, 300.0);
    let opts = RenderOptions::default();
    let t = Instant::now();
    let splats = layersplat::render::prepare_scene_timing(&scene, &cam, &Pose::identity(), &opts);
    eprintln!("prepare: {:?} ({} splats kept)", t.elapsed(), splats);
    let t = Instant::now();
    let _ = render(&scene, &cam, &Pose::identity(), &opts).unwrap();
    eprintln!("full render: {:?}", t.elapsed());
}
