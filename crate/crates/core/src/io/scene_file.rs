//! Binary Gaussian-scene container.
//!
//! Layout (all little-endian):
//! ```text
//! magic   "FL3D"   4 bytes
//! version u16      currently 1
//! count   u32
//! degree  u32      spherical-harmonic degree
//! records count x f32: mean(3) rotation(4) scale(3) opacity(1)
//!         coeffs(3 * (degree+1)^2)
//! ```
//! Round-trips are lossless at 32-bit precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{Gaussian3D, GaussianScene};
use crate::sh::{basis_count, ShCoefficients};

pub const SCENE_MAGIC: [u8; 4] = *b"FL3D";
pub const SCENE_VERSION: u16 = 1;

pub fn write_scene_to(w: &mut impl Write, scene: &GaussianScene) -> Result<()> {
    w.write_all(&SCENE_MAGIC)?;
    w.write_all(&SCENE_VERSION.to_le_bytes())?;
    w.write_all(&(scene.len() as u32).to_le_bytes())?;
    w.write_all(&(scene.sh_degree() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity((11 + scene.coeffs_per_gaussian()) * 4);
    for i in 0..scene.len() {
        buf.clear();
        let push = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
        let mean = scene.means()[i];
        for c in 0..3 {
            push(&mut buf, mean[c]);
        }
        for c in scene.rotations()[i] {
            push(&mut buf, c);
        }
        let s = scene.scales()[i];
        for c in 0..3 {
            push(&mut buf, s[c]);
        }
        push(&mut buf, scene.opacities()[i]);
        for &c in scene.coeffs_of(i) {
            push(&mut buf, c);
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_scene(path: impl AsRef<Path>, scene: &GaussianScene) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene_to(&mut w, scene)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format(format!("truncated scene file while reading {what}")))
}

fn f32_at(buf: &[u8], idx: usize) -> f64 {
    f32::from_le_bytes(buf[idx * 4..idx * 4 + 4].try_into().expect("4 bytes")) as f64
}

pub fn read_scene_from(r: &mut impl Read) -> Result<GaussianScene> {
    let mut head = [0u8; 4];
    read_exact_or_truncated(r, &mut head, "magic")?;
    if head != SCENE_MAGIC {
        return Err(Error::Format(format!("bad scene magic {head:?}")));
    }
    let mut two = [0u8; 2];
    read_exact_or_truncated(r, &mut two, "version")?;
    let version = u16::from_le_bytes(two);
    if version != SCENE_VERSION {
        return Err(Error::Format(format!("unsupported scene version {version}")));
    }
    let mut four = [0u8; 4];
    read_exact_or_truncated(r, &mut four, "count")?;
    let count = u32::from_le_bytes(four) as usize;
    read_exact_or_truncated(r, &mut four, "sh degree")?;
    let degree = u32::from_le_bytes(four) as usize;
    if degree > crate::sh::MAX_DEGREE {
        return Err(Error::Format(format!("sh degree {degree} out of range")));
    }

    let nc = 3 * basis_count(degree);
    let record = 11 + nc;
    let mut scene = GaussianScene::with_capacity(degree, count);
    let mut buf = vec![0u8; record * 4];
    for i in 0..count {
        read_exact_or_truncated(r, &mut buf, &format!("gaussian {i}"))?;
        let mean = Vector3::new(f32_at(&buf, 0), f32_at(&buf, 1), f32_at(&buf, 2));
        let rotation = [f32_at(&buf, 3), f32_at(&buf, 4), f32_at(&buf, 5), f32_at(&buf, 6)];
        let scale = Vector3::new(f32_at(&buf, 7), f32_at(&buf, 8), f32_at(&buf, 9));
        let opacity = f32_at(&buf, 10);
        let coeffs: Vec<f64> = (0..nc).map(|k| f32_at(&buf, 11 + k)).collect();
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

pub fn read_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let mut r = BufReader::new(File::open(path)?);
    read_scene_from(&mut r)
}
