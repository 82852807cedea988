//! Camera trajectory text format, one frame per line:
//!
//! ```text
//! frame_id fx fy cx cy 0 0 r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
//! ```
//!
//! Intrinsics are normalized by image width/height (de-normalized against a
//! target resolution on load); the 3x4 block is the camera-from-world matrix,
//! row-major. This mirrors the camera text layout shipped with the common
//! real-estate video dataset, so real sequences ingest unmodified.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Clone)]
pub struct TrajectoryFrame {
    pub frame_id: String,
    pub cam: CameraIntrinsics,
    pub pose: Pose,
}

/// Re-orthonormalize a near-rotation matrix via its SVD, preserving
/// orientation.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd requested");
    let v_t = svd.v_t.expect("svd requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        for i in 0..3 {
            u[(i, 2)] = -u[(i, 2)];
        }
        r = u * v_t;
    }
    r
}

fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    gram.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Parse a 3x4 row-major camera-from-world block into a pose, warning and
/// re-orthonormalizing mild drift, rejecting rotation error above 1e-2.
pub fn pose_from_rows(vals: &[f64], line: usize) -> Result<Pose> {
    assert_eq!(vals.len(), 12);
    let r = Matrix3::new(
        vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
    );
    let t = Vector3::new(vals[3], vals[7], vals[11]);
    let err = orthonormality_error(&r);
    if err > 1e-2 {
        return Err(Error::Parse {
            line,
            msg: format!("rotation block is not orthonormal (error {err:.2e})"),
        });
    }
    if err > 1e-4 {
        eprintln!("warning: line {line}: re-orthonormalizing rotation (error {err:.2e})");
    }
    Ok(Pose::from_matrix(&orthonormalize(&r), t))
}

/// Load a trajectory, de-normalizing intrinsics against the target
/// resolution.
pub fn load_trajectory(
    path: impl AsRef<Path>,
    target_width: usize,
    target_height: usize,
) -> Result<Vec<TrajectoryFrame>> {
    let reader = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 19 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 19 fields, found {}", tokens.len()),
            });
        }
        let frame_id = tokens[0].to_string();
        let nums: Vec<f64> = tokens[1..]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("field {} is not a number: {t:?}", i + 2),
                })
            })
            .collect::<Result<_>>()?;
        let (fx_n, fy_n, cx_n, cy_n) = (nums[0], nums[1], nums[2], nums[3]);
        for (name, v) in [("fx", fx_n), ("fy", fy_n), ("cx", cx_n), ("cy", cy_n)] {
            if !(v > 0.0 && v <= 10.0) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("normalized intrinsic {name} = {v} outside (0, 10]"),
                });
            }
        }
        let cam = CameraIntrinsics::new(
            fx_n * target_width as f64,
            fy_n * target_height as f64,
            cx_n * target_width as f64,
            cy_n * target_height as f64,
            target_width,
            target_height,
        )?;
        let pose = pose_from_rows(&nums[6..18], line_no)?;
        frames.push(TrajectoryFrame { frame_id, cam, pose });
    }
    Ok(frames)
}

/// Write frames in the same layout (intrinsics normalized by the camera's own
/// resolution).
pub fn write_trajectory(path: impl AsRef<Path>, frames: &[TrajectoryFrame]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for f in frames {
        let (wpx, hpx) = (f.cam.width as f64, f.cam.height as f64);
        let r = f.pose.rotation_matrix();
        let t = f.pose.translation();
        write!(
            w,
            "{} {} {} {} {} 0 0",
            f.frame_id,
            f.cam.fx / wpx,
            f.cam.fy / hpx,
            f.cam.cx / wpx,
            f.cam.cy / hpx
        )?;
        for row in 0..3 {
            write!(w, " {} {} {} {}", r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
