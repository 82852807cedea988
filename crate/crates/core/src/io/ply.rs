//! Splat-PLY interop using the community layout: binary little-endian
//! vertices with position, zero normals, SH coefficients (`f_dc_*` then
//! channel-major `f_rest_*`), opacity as a logit, log standard deviations,
//! and the quaternion. Re-importing recovers the scene within activation
//! round-trip error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::quat_normalize;
use crate::layered::{logistic, MAX_SCALE_VAR, MIN_SCALE_VAR, OPACITY_CEIL};
use crate::scene::{Gaussian3D, GaussianScene};
use crate::sh::{basis_count, ShCoefficients};

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Write the scene in the community splat-PLY layout.
pub fn export_ply(path: impl AsRef<Path>, scene: &GaussianScene) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let nb = basis_count(scene.sh_degree());
    let n_rest = 3 * (nb - 1);
    write!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", scene.len())?;
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        writeln!(w, "property float {name}")?;
    }
    for k in 0..n_rest {
        writeln!(w, "property float f_rest_{k}")?;
    }
    writeln!(w, "property float opacity")?;
    for k in 0..3 {
        writeln!(w, "property float scale_{k}")?;
    }
    for k in 0..4 {
        writeln!(w, "property float rot_{k}")?;
    }
    writeln!(w, "end_header")?;

    let mut buf = Vec::new();
    for i in 0..scene.len() {
        buf.clear();
        let push = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
        let mean = scene.means()[i];
        for c in 0..3 {
            push(&mut buf, mean[c]);
        }
        for _ in 0..3 {
            push(&mut buf, 0.0); // normals, unused
        }
        let coeffs = scene.coeffs_of(i);
        for ch in 0..3 {
            push(&mut buf, coeffs[ch * nb]);
        }
        for ch in 0..3 {
            for k in 1..nb {
                push(&mut buf, coeffs[ch * nb + k]);
            }
        }
        push(&mut buf, logit(scene.opacities()[i]));
        let s = scene.scales()[i];
        for c in 0..3 {
            // log standard deviation of the variance parameterization
            push(&mut buf, 0.5 * s[c].ln());
        }
        for c in scene.rotations()[i] {
            push(&mut buf, c);
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Import a splat PLY written by [`export_ply`] (or any file using the same
/// property layout).
pub fn import_ply(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let mut r = BufReader::new(File::open(path)?);
    // header is ascii lines up to end_header
    let mut header = Vec::new();
    loop {
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte).map_err(|_| Error::Format("truncated ply header".into()))?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
            if line.len() > 4096 {
                return Err(Error::Format("oversized ply header line".into()));
            }
        }
        let text = String::from_utf8_lossy(&line).trim().to_string();
        let done = text == "end_header";
        header.push(text);
        if done {
            break;
        }
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(Error::Format("not a ply file".into()));
    }
    if !header.iter().any(|l| l == "format binary_little_endian 1.0") {
        return Err(Error::Format("only binary little-endian ply is supported".into()));
    }
    let count: usize = header
        .iter()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or_else(|| Error::Format("missing vertex element".into()))?
        .trim()
        .parse()
        .map_err(|_| Error::Format("bad vertex count".into()))?;
    let props: Vec<String> = header
        .iter()
        .filter_map(|l| l.strip_prefix("property float ").map(|s| s.trim().to_string()))
        .collect();
    let n_rest = props.iter().filter(|p| p.starts_with("f_rest_")).count();
    if n_rest % 3 != 0 {
        return Err(Error::Format(format!("f_rest count {n_rest} is not divisible by 3")));
    }
    let nb = n_rest / 3 + 1;
    let degree = match nb {
        1 => 0,
        4 => 1,
        9 => 2,
        16 => 3,
        _ => return Err(Error::Format(format!("unsupported basis count {nb}"))),
    };
    let expected: Vec<String> = {
        let mut v: Vec<String> =
            ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        v.extend((0..n_rest).map(|k| format!("f_rest_{k}")));
        v.push("opacity".into());
        v.extend((0..3).map(|k| format!("scale_{k}")));
        v.extend((0..4).map(|k| format!("rot_{k}")));
        v
    };
    if props != expected {
        return Err(Error::Format("unexpected ply property layout".into()));
    }

    let stride = props.len();
    let mut scene = GaussianScene::with_capacity(degree, count);
    let mut buf = vec![0u8; stride * 4];
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated ply data at vertex {i}")))?;
        let at = |k: usize| -> f64 {
            f32::from_le_bytes(buf[k * 4..k * 4 + 4].try_into().expect("4 bytes")) as f64
        };
        let mean = Vector3::new(at(0), at(1), at(2));
        let mut coeffs = vec![0.0; 3 * nb];
        for ch in 0..3 {
            coeffs[ch * nb] = at(6 + ch);
        }
        for ch in 0..3 {
            for k in 1..nb {
                coeffs[ch * nb + k] = at(9 + ch * (nb - 1) + (k - 1));
            }
        }
        let o = 9 + n_rest;
        let opacity = logistic(at(o)).min(OPACITY_CEIL);
        let scale = Vector3::new(
            (2.0 * at(o + 1)).exp().clamp(MIN_SCALE_VAR, MAX_SCALE_VAR),
            (2.0 * at(o + 2)).exp().clamp(MIN_SCALE_VAR, MAX_SCALE_VAR),
            (2.0 * at(o + 3)).exp().clamp(MIN_SCALE_VAR, MAX_SCALE_VAR),
        );
        let rotation = quat_normalize([at(o + 4), at(o + 5), at(o + 6), at(o + 7)])?;
        scene.push(Gaussian3D {
            mean,
            rotation,
            scale,
            opacity,
            colour: ShCoefficients::new(degree, coeffs)?,
        })?;
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::test_support::random_scene;

    #[test]
    fn empty_scene_exports_valid_ply() {
        let tmp = tempfile::NamedTempFile::with_suffix(".ply").unwrap();
        export_ply(tmp.path(), &GaussianScene::new(1)).unwrap();
        let back = import_ply(tmp.path()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.sh_degree(), 1);
    }

    #[test]
    fn single_gaussian_position_survives() {
        let scene = random_scene(1, 1, 0);
        let tmp = tempfile::NamedTempFile::with_suffix(".ply").unwrap();
        export_ply(tmp.path(), &scene).unwrap();
        let back = import_ply(tmp.path()).unwrap();
        assert_eq!(back.len(), 1);
        for c in 0..3 {
            assert!((back.means()[0][c] - scene.means()[0][c]).abs() < 1e-6);
        }
    }

    #[test]
    fn export_import_roundtrip_within_activation_error() {
        let scene = random_scene(7, 200, 1);
        let tmp = tempfile::NamedTempFile::with_suffix(".ply").unwrap();
        export_ply(tmp.path(), &scene).unwrap();
        let back = import_ply(tmp.path()).unwrap();
        assert_eq!(back.len(), scene.len());
        assert_eq!(back.sh_degree(), scene.sh_degree());
        let mut max_err: f64 = 0.0;
        for i in 0..scene.len() {
            for c in 0..3 {
                max_err = max_err.max((back.means()[i][c] - scene.means()[i][c]).abs());
                // scales round-trip through log std as relative error
                let rel = (back.scales()[i][c] - scene.scales()[i][c]).abs()
                    / scene.scales()[i][c];
                max_err = max_err.max(rel);
            }
            for c in 0..4 {
                max_err = max_err.max((back.rotations()[i][c] - scene.rotations()[i][c]).abs());
            }
            max_err = max_err.max((back.opacities()[i] - scene.opacities()[i]).abs());
            for (a, b) in back.coeffs_of(i).iter().zip(scene.coeffs_of(i)) {
                max_err = max_err.max((a - b).abs());
            }
        }
        assert!(max_err < 1e-5, "round-trip error {max_err}");
    }

    #[test]
    fn foreign_layout_is_rejected() {
        let tmp = tempfile::NamedTempFile::with_suffix(".ply").unwrap();
        std::fs::write(
            tmp.path(),
            b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n",
        )
        .unwrap();
        assert!(import_ply(tmp.path()).is_err());
    }
}
