//! Command-line surface tying the pipeline together.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. `eval` and `align`
//! print machine-readable JSON on stdout; progress goes to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use layersplat::align::{scale_lsq, scale_ransac, DepthPair, RansacConfig};
use layersplat::baseline::{unproject_baseline, BaselineHyper, ScaleMode};
use layersplat::error::{Error, Result};
use layersplat::fit::{fit_scene, FitConfig, LrMultipliers};
use layersplat::geometry::{CameraIntrinsics, Pose};
use layersplat::grad::{finite_diff_check, WeightedColourLoss};
use layersplat::image::ImageRgb;
use layersplat::io;
use layersplat::io::trajectory::pose_from_rows;
use layersplat::layered::build_layered_scene;
use layersplat::metrics::eval_pair;
use layersplat::render::{render, RenderOptions};
use layersplat::scene::ParamClass;
use layersplat::synthetic::{make_two_plane, SyntheticConfig};

const THREADS_ENV: &str = "LAYERSPLAT_THREADS";

#[derive(Parser)]
#[command(
    name = "layersplat",
    version,
    about = "Layered per-pixel Gaussian scenes: unprojection, fitting, rendering, evaluation"
)]
struct Cli {
    /// Seed for randomized commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread count (falls back to LAYERSPLAT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rasterizer tile size in pixels.
    #[arg(long, global = true, default_value_t = 16)]
    tile_size: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CameraArgs {
    /// Focal length in pixels (fy defaults to fx).
    #[arg(long)]
    fx: f64,
    #[arg(long)]
    fy: Option<f64>,
    /// Principal point; defaults to the image center.
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
}

impl CameraArgs {
    fn build(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.fx,
            self.fy.unwrap_or(self.fx),
            self.cx.unwrap_or(width as f64 / 2.0),
            self.cy.unwrap_or(height as f64 / 2.0),
            width,
            height,
        )
    }
}

#[derive(Args, Clone)]
struct RenderArgs {
    /// Background colour as "r,g,b" in [0, 1].
    #[arg(long, default_value = "0,0,0")]
    background: String,
    #[arg(long, default_value_t = 0.01)]
    z_near: f64,
    #[arg(long, default_value_t = 0.99)]
    alpha_max: f64,
    /// Early-exit transmittance threshold.
    #[arg(long, default_value_t = 1e-4)]
    early_exit: f64,
    /// Anti-alias blur added to projected covariances, px^2.
    #[arg(long, default_value_t = 0.3)]
    blur: f64,
}

impl RenderArgs {
    fn build(&self, tile_size: usize) -> Result<RenderOptions> {
        let parts: Vec<f64> = self
            .background
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Domain(format!("bad background component {t:?}")))
            })
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::Domain("background must have three components".into()));
        }
        Ok(RenderOptions {
            tile_size,
            background: [parts[0], parts[1], parts[2]],
            z_near: self.z_near,
            alpha_max: self.alpha_max,
            early_exit_transmittance: self.early_exit,
            blur: self.blur,
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Unproject an image at its depth map into a Gaussian scene file.
    Unproject {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[command(flatten)]
        camera: CameraArgs,
        #[arg(long)]
        out: PathBuf,
        /// Colour gain.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Log scale variance.
        #[arg(long, default_value_t = -4.5)]
        s0: f64,
        /// Opacity logit.
        #[arg(long, default_value_t = 4.0)]
        sigma0: f64,
        /// Reference depth for the depth-dependent mode, meters.
        #[arg(long, default_value_t = 10.0)]
        d0: f64,
        /// Scale Gaussians proportionally to depth.
        #[arg(long)]
        depth_dependent: bool,
    },
    /// Render a scene file from a camera.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional 8-bit alpha map output.
        #[arg(long)]
        alpha_out: Option<PathBuf>,
        /// Optional 8-bit normalized expected-depth output.
        #[arg(long)]
        depth_out: Option<PathBuf>,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[command(flatten)]
        camera: Option<CameraArgs>,
        /// Camera-from-world pose as 12 comma-separated row-major values of
        /// the 3x4 matrix; identity if omitted.
        #[arg(long)]
        pose: Option<String>,
        /// Trajectory file to take the camera from (with --frame).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Frame id inside --trajectory.
        #[arg(long)]
        frame: Option<String>,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Fit the layered representation to target views.
    Fit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        /// Target list: one line per view, "image_path" plus 12 row-major
        /// camera-from-world values. Paths are relative to this file.
        #[arg(long)]
        targets: PathBuf,
        #[command(flatten)]
        camera: CameraArgs,
        /// Output params file; the loss CSV and metrics JSON derive their
        /// names from it unless overridden.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Also write the final Gaussian scene.
        #[arg(long)]
        scene_out: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 2)]
        k_layers: usize,
        #[arg(long, default_value_t = 4)]
        padding: usize,
        #[arg(long, default_value_t = 0)]
        sh_degree: usize,
        /// Gradient clip by global norm; 0 disables.
        #[arg(long, default_value_t = 10.0)]
        clip_norm: f64,
        /// Per-class learning-rate multipliers.
        #[arg(long, default_value_t = 1.0)]
        lr_mult_opacity: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_mult_delta: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_mult_offset: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_mult_scale: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_mult_rotation: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_mult_colour: f64,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// PSNR/SSIM between two image directories (paired by file name).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Border crop fraction per side.
        #[arg(long, default_value_t = 0.05)]
        crop: f64,
    },
    /// Estimate the scale aligning predicted depths with reference depths.
    Align {
        /// Text file with one "d_pred d_ref" pair per line.
        #[arg(long, conflicts_with_all = ["depth", "points"])]
        pairs: Option<PathBuf>,
        /// Depth map (with --points).
        #[arg(long, requires = "points")]
        depth: Option<PathBuf>,
        /// Sparse reference points: one "x y d_ref" per line, pixel indices.
        #[arg(long, requires = "depth")]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        sample_size: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
    /// Verify analytic renderer gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        gaussians: usize,
        #[arg(long, default_value_t = 3)]
        scenes: usize,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance_rotation: f64,
    },
    /// Export a scene file to a community splat PLY.
    ExportPly {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the seeded synthetic two-plane benchmark.
    MakeSynthetic {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 96.0)]
        focal: f64,
        #[arg(long, default_value_t = 2.0)]
        front_depth: f64,
        #[arg(long, default_value_t = 4.0)]
        back_depth: f64,
        #[arg(long, default_value_t = 0.12)]
        baseline_step: f64,
        #[arg(long, default_value_t = 3)]
        n_targets: usize,
    },
}

fn parse_pose(text: &str) -> Result<Pose> {
    let vals: Vec<f64> = text
        .split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Domain(format!("bad pose value {t:?}"))))
        .collect::<Result<_>>()?;
    if vals.len() != 12 {
        return Err(Error::Domain(format!("pose needs 12 values, got {}", vals.len())));
    }
    pose_from_rows(&vals, 0)
}

/// Target-list lines: image path plus 12 row-major camera-from-world values.
fn load_targets(path: &Path) -> Result<Vec<(ImageRgb, Pose)>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 13 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected image path plus 12 pose values, found {} fields", tokens.len()),
            });
        }
        let vals: Vec<f64> = tokens[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad pose value {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        let img = io::load_image_rgb(base.join(tokens[0]))?;
        out.push((img, pose_from_rows(&vals, line_no)?));
    }
    if out.is_empty() {
        return Err(Error::Format(format!("no targets found in {}", path.display())));
    }
    Ok(out)
}

fn cmd_unproject(
    image: &Path,
    depth: &Path,
    camera: &CameraArgs,
    out: &Path,
    hyper: BaselineHyper,
) -> Result<()> {
    let img = io::load_image_rgb(image)?;
    let depth = io::read_depth(depth)?;
    let cam = camera.build(img.width(), img.height())?;
    let scene = unproject_baseline(&img, &depth, &cam, &hyper)?;
    io::write_scene(out, &scene)?;
    eprintln!("wrote {} gaussians to {}", scene.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    scene_path: &Path,
    out: &Path,
    alpha_out: Option<&Path>,
    depth_out: Option<&Path>,
    width: usize,
    height: usize,
    camera: Option<&CameraArgs>,
    pose_text: Option<&str>,
    trajectory: Option<&Path>,
    frame: Option<&str>,
    opts: &RenderOptions,
) -> Result<()> {
    let scene = io::read_scene(scene_path)?;
    let (cam, pose) = match (trajectory, frame) {
        (Some(tr), Some(frame)) => {
            let frames = io::load_trajectory(tr, width, height)?;
            let f = frames
                .into_iter()
                .find(|f| f.frame_id == frame)
                .ok_or_else(|| Error::Format(format!("frame {frame:?} not in trajectory")))?;
            (f.cam, f.pose)
        }
        (None, None) => {
            let camera = camera.ok_or_else(|| {
                Error::Domain("either --fx or --trajectory/--frame is required".into())
            })?;
            let pose = match pose_text {
                Some(t) => parse_pose(t)?,
                None => Pose::identity(),
            };
            (camera.build(width, height)?, pose)
        }
        _ => {
            return Err(Error::Domain("--trajectory and --frame go together".into()));
        }
    };
    let output = render(&scene, &cam, &pose, opts)?;
    io::save_image_rgb(out, &output.colour)?;
    if let Some(p) = alpha_out {
        io::save_image_gray(p, &output.alpha, 0.0, 1.0)?;
    }
    if let Some(p) = depth_out {
        let max = output.expected_depth.data().iter().cloned().fold(0.0, f64::max);
        io::save_image_gray(p, &output.expected_depth, 0.0, max.max(1e-9))?;
    }
    eprintln!("rendered {} gaussians to {}", scene.len(), out.display());
    Ok(())
}

struct FitCliOptions {
    steps: usize,
    lr: f64,
    k_layers: usize,
    padding: usize,
    sh_degree: usize,
    clip_norm: f64,
    multipliers: LrMultipliers,
    render: RenderOptions,
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    image: &Path,
    depth_path: &Path,
    targets_path: &Path,
    camera: &CameraArgs,
    out: &Path,
    loss_csv: Option<PathBuf>,
    metrics_out: Option<PathBuf>,
    scene_out: Option<PathBuf>,
    cli: FitCliOptions,
) -> Result<()> {
    let source = io::load_image_rgb(image)?;
    let depth = io::read_depth(depth_path)?;
    let cam = camera.build(source.width(), source.height())?;
    let targets = load_targets(targets_path)?;
    let cfg = FitConfig {
        learning_rate: cli.lr,
        steps: cli.steps,
        seed: cli.seed,
        k_layers: cli.k_layers,
        padding: cli.padding,
        sh_degree: cli.sh_degree,
        lr_multipliers: cli.multipliers,
        grad_clip_norm: if cli.clip_norm > 0.0 { Some(cli.clip_norm) } else { None },
        render: cli.render,
        ..Default::default()
    };
    eprintln!(
        "fitting {} layers over {}x{}+{}px padding for {} steps on {} targets",
        cfg.k_layers,
        cam.width,
        cam.height,
        cfg.padding,
        cfg.steps,
        targets.len()
    );
    let outcome = fit_scene(&source, &depth, &targets, &cam, &cfg)?;
    io::write_params(out, &outcome.raw)?;

    let csv_path = loss_csv.unwrap_or_else(|| out.with_extension("loss.csv"));
    let mut csv = String::from("step,loss\n");
    for (i, l) in outcome.loss_history.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(&csv_path, csv)?;

    let metrics_path = metrics_out.unwrap_or_else(|| out.with_extension("metrics.json"));
    let report = json!({
        "targets": outcome.target_metrics,
        "final_loss": outcome.loss_history.last(),
    });
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&report)?.as_bytes())?;

    if let Some(scene_path) = scene_out {
        let scene =
            build_layered_scene(&depth, &outcome.raw, &cam, &Pose::identity(), &cfg.activation)?;
        io::write_scene(&scene_path, &scene)?;
    }
    for (i, m) in outcome.target_metrics.iter().enumerate() {
        eprintln!("target {i}: psnr {:.2} dB, ssim {:.4}", m.psnr_db, m.ssim);
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(pred_dir: &Path, gt_dir: &Path, crop: f64) -> Result<()> {
    let mut names: Vec<String> = std::fs::read_dir(pred_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| {
            e.path().extension().and_then(|x| x.to_str()).is_some_and(|x| x.eq_ignore_ascii_case("png"))
        })
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Format(format!("no png images in {}", pred_dir.display())));
    }
    let mut per_image = Vec::new();
    let (mut psnr_sum, mut ssim_sum, mut finite) = (0.0, 0.0, 0usize);
    for name in &names {
        let gt_path = gt_dir.join(name);
        if !gt_path.exists() {
            return Err(Error::Format(format!("missing ground truth for {name}")));
        }
        let pred = io::load_image_rgb(pred_dir.join(name))?;
        let gt = io::load_image_rgb(&gt_path)?;
        let m = eval_pair(&pred, &gt, crop)?;
        if m.psnr_db.is_finite() {
            psnr_sum += m.psnr_db;
            finite += 1;
        }
        ssim_sum += m.ssim;
        per_image.push(json!({ "name": name, "psnr_db": m.psnr_db, "ssim": m.ssim }));
        eprintln!("{name}: psnr {:.2} dB, ssim {:.4}", m.psnr_db, m.ssim);
    }
    let report = json!({
        "crop_fraction": crop,
        "count": names.len(),
        "mean_psnr_db": if finite > 0 { psnr_sum / finite as f64 } else { f64::INFINITY },
        "mean_ssim": ssim_sum / names.len() as f64,
        "images": per_image,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn load_pairs_file(path: &Path) -> Result<Vec<DepthPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 'd_pred d_ref', found {} fields", tokens.len()),
            });
        }
        let parse = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse { line: idx + 1, msg: format!("bad number {t:?}") })
        };
        pairs.push(DepthPair::new(parse(tokens[0])?, parse(tokens[1])?)?);
    }
    Ok(pairs)
}

fn load_point_pairs(depth_path: &Path, points_path: &Path) -> Result<Vec<DepthPair>> {
    let depth = io::read_depth(depth_path)?;
    let text = std::fs::read_to_string(points_path)?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 'x y d_ref', found {} fields", tokens.len()),
            });
        }
        let x: usize = tokens[0]
            .parse()
            .map_err(|_| Error::Parse { line: idx + 1, msg: format!("bad x {:?}", tokens[0]) })?;
        let y: usize = tokens[1]
            .parse()
            .map_err(|_| Error::Parse { line: idx + 1, msg: format!("bad y {:?}", tokens[1]) })?;
        let d_ref: f64 = tokens[2]
            .parse()
            .map_err(|_| Error::Parse { line: idx + 1, msg: format!("bad depth {:?}", tokens[2]) })?;
        if x >= depth.width() || y >= depth.height() {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("point ({x}, {y}) outside depth map"),
            });
        }
        pairs.push(DepthPair::new(depth.get(x, y), d_ref)?);
    }
    Ok(pairs)
}

fn cmd_align(pairs: Vec<DepthPair>, cfg: &RansacConfig) -> Result<()> {
    let (scale, inliers) = scale_ransac(&pairs, cfg)?;
    let lsq = scale_lsq(&pairs)?;
    let report = json!({
        "scale": scale,
        "inlier_count": inliers.len(),
        "pair_count": pairs.len(),
        "lsq_scale_all_pairs": lsq,
        "inliers": inliers,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_gradcheck(
    seed: u64,
    gaussians: usize,
    scenes: usize,
    degree: usize,
    step: f64,
    tolerance: f64,
    tolerance_rotation: f64,
    tile_size: usize,
) -> Result<bool> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let cam = CameraIntrinsics::new(80.0, 80.0, 48.0, 32.0, 96, 64)?;
    let opts = RenderOptions { tile_size, ..Default::default() };
    let mut all_ok = true;
    for i in 0..scenes {
        let scene_seed = seed.wrapping_add(i as u64);
        let scene = layersplat::grad::random_check_scene(scene_seed, gaussians, degree);
        let mut rng = StdRng::seed_from_u64(scene_seed ^ 0x5eed);
        let mut weights = ImageRgb::zeros(cam.width, cam.height);
        for v in weights.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let loss = WeightedColourLoss { weights };
        let report = finite_diff_check(&scene, &cam, &Pose::identity(), &opts, &loss, step)?;
        for check in &report.checks {
            let tol =
                if check.class == ParamClass::Rotation { tolerance_rotation } else { tolerance };
            let ok = check.rel_err < tol;
            all_ok &= ok;
            println!(
                "scene {i} ({gaussians} gaussians, seed {scene_seed}): {:<9} rel err {:.3e} (tol {:.0e}) {}",
                check.class.name(),
                check.rel_err,
                tol,
                if ok { "ok" } else { "FAIL" }
            );
            if !ok {
                println!(
                    "  worst: gaussian {} component {}: analytic {:.6e} vs numeric {:.6e}",
                    check.worst_gaussian,
                    check.worst_component,
                    check.analytic_at_worst,
                    check.numeric_at_worst
                );
            }
        }
    }
    Ok(all_ok)
}

#[allow(clippy::too_many_arguments)]
fn cmd_make_synthetic(
    out: &Path,
    seed: u64,
    width: usize,
    height: usize,
    focal: f64,
    front_depth: f64,
    back_depth: f64,
    baseline_step: f64,
    n_targets: usize,
) -> Result<()> {
    let cfg = SyntheticConfig {
        width,
        height,
        focal,
        seed,
        front_depth,
        back_depth,
        baseline_step,
        n_targets,
    };
    let scene = make_two_plane(&cfg)?;
    std::fs::create_dir_all(out)?;
    io::save_image_rgb(out.join("source.png"), &scene.source)?;
    io::write_pfm(out.join("depth.pfm"), &scene.depth)?;
    io::write_scene(out.join("gt_scene.fl3d"), &scene.gt_scene)?;

    let pose_line = |pose: &Pose| -> String {
        let r = pose.rotation_matrix();
        let t = pose.translation();
        (0..3)
            .map(|row| format!("{} {} {} {}", r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut targets_txt = String::new();
    for (i, (img, pose)) in scene.targets.iter().enumerate() {
        let name = format!("target_{i}.png");
        io::save_image_rgb(out.join(&name), img)?;
        targets_txt.push_str(&format!("{name} {}\n", pose_line(pose)));
    }
    std::fs::write(out.join("targets.txt"), targets_txt)?;

    io::save_image_rgb(out.join("heldout.png"), &scene.heldout.0)?;
    std::fs::write(
        out.join("heldout.txt"),
        format!("heldout.png {}\n", pose_line(&scene.heldout.1)),
    )?;

    let meta = json!({
        "width": width,
        "height": height,
        "fx": scene.cam.fx,
        "fy": scene.cam.fy,
        "cx": scene.cam.cx,
        "cy": scene.cam.cy,
        "seed": seed,
        "front_depth": front_depth,
        "back_depth": back_depth,
        "baseline_step": baseline_step,
        "heldout_shift": baseline_step * 1.5,
    });
    std::fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    eprintln!(
        "wrote benchmark ({} gt gaussians, {} targets) to {}",
        scene.gt_scene.len(),
        scene.targets.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let tile_size = cli.tile_size;
    match cli.cmd {
        Cmd::Unproject { image, depth, camera, out, alpha, s0, sigma0, d0, depth_dependent } => {
            let hyper = BaselineHyper {
                alpha_colour: alpha,
                s0,
                sigma0,
                d0,
                mode: if depth_dependent { ScaleMode::DepthDependent } else { ScaleMode::Fixed },
            };
            cmd_unproject(&image, &depth, &camera, &out, hyper)?;
            Ok(true)
        }
        Cmd::Render {
            scene,
            out,
            alpha_out,
            depth_out,
            width,
            height,
            camera,
            pose,
            trajectory,
            frame,
            render,
        } => {
            let opts = render.build(tile_size)?;
            cmd_render(
                &scene,
                &out,
                alpha_out.as_deref(),
                depth_out.as_deref(),
                width,
                height,
                camera.as_ref(),
                pose.as_deref(),
                trajectory.as_deref(),
                frame.as_deref(),
                &opts,
            )?;
            Ok(true)
        }
        Cmd::Fit {
            image,
            depth,
            targets,
            camera,
            out,
            loss_csv,
            metrics_out,
            scene_out,
            steps,
            lr,
            k_layers,
            padding,
            sh_degree,
            clip_norm,
            lr_mult_opacity,
            lr_mult_delta,
            lr_mult_offset,
            lr_mult_scale,
            lr_mult_rotation,
            lr_mult_colour,
            render,
        } => {
            let opts = render.build(tile_size)?;
            cmd_fit(
                &image,
                &depth,
                &targets,
                &camera,
                &out,
                loss_csv,
                metrics_out,
                scene_out,
                FitCliOptions {
                    steps,
                    lr,
                    k_layers,
                    padding,
                    sh_degree,
                    clip_norm,
                    multipliers: LrMultipliers {
                        opacity: lr_mult_opacity,
                        delta_depth: lr_mult_delta,
                        offset: lr_mult_offset,
                        scale: lr_mult_scale,
                        rotation: lr_mult_rotation,
                        colour: lr_mult_colour,
                    },
                    render: opts,
                    seed: cli.seed,
                },
            )?;
            Ok(true)
        }
        Cmd::Eval { pred, gt, crop } => {
            cmd_eval(&pred, &gt, crop)?;
            Ok(true)
        }
        Cmd::Align { pairs, depth, points, sample_size, iterations, threshold } => {
            let pair_list = match (pairs, depth, points) {
                (Some(p), None, None) => load_pairs_file(&p)?,
                (None, Some(d), Some(pts)) => load_point_pairs(&d, &pts)?,
                _ => {
                    return Err(Error::Domain(
                        "provide either --pairs or both --depth and --points".into(),
                    ))
                }
            };
            let cfg = RansacConfig { sample_size, iterations, threshold, seed: cli.seed };
            cmd_align(pair_list, &cfg)?;
            Ok(true)
        }
        Cmd::Gradcheck {
            gaussians,
            scenes,
            degree,
            step,
            tolerance,
            tolerance_rotation,
        } => cmd_gradcheck(
            cli.seed,
            gaussians,
            scenes,
            degree,
            step,
            tolerance,
            tolerance_rotation,
            tile_size,
        ),
        Cmd::ExportPly { scene, out } => {
            let s = io::read_scene(&scene)?;
            io::export_ply(&out, &s)?;
            eprintln!("wrote {} vertices to {}", s.len(), out.display());
            Ok(true)
        }
        Cmd::MakeSynthetic {
            out,
            width,
            height,
            focal,
            front_depth,
            back_depth,
            baseline_step,
            n_targets,
        } => {
            cmd_make_synthetic(
                &out,
                cli.seed,
                width,
                height,
                focal,
                front_depth,
                back_depth,
                baseline_step,
                n_targets,
            )?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes; everything else is usage
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok())
    });
    let result = match threads {
        Some(n) if n > 0 => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot build thread pool: {e}");
                    return ExitCode::from(2);
                }
            };
            pool.install(|| run(cli))
        }
        _ => run(cli),
    };

    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
