//! Depth map files: PFM (exact 32-bit floats, preferred) or 16-bit grayscale
//! PNG with a metric scale factor in a `<file>.scale` sidecar
//! (`depth_meters = pixel_value * scale`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layered::DepthMap;

/// Read a grayscale PFM file ("Pf"). Scanlines are stored bottom-to-top; a
/// negative scale marks little-endian data.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let kind = header.trim();
    if kind == "PF" {
        return Err(Error::Format("colour PFM is not supported for depth maps".into()));
    }
    if kind != "Pf" {
        return Err(Error::Format(format!("not a PFM file (header {kind:?})")));
    }
    let mut dims = String::new();
    r.read_line(&mut dims)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Format(format!("bad PFM dimension line {dims:?}")));
    }
    let width: usize =
        parts[0].parse().map_err(|_| Error::Format(format!("bad PFM width {:?}", parts[0])))?;
    let height: usize =
        parts[1].parse().map_err(|_| Error::Format(format!("bad PFM height {:?}", parts[1])))?;
    let mut scale_line = String::new();
    r.read_line(&mut scale_line)?;
    let scale: f64 = scale_line
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale line {scale_line:?}")))?;
    let little_endian = scale < 0.0;

    let mut bytes = vec![0u8; width * height * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated PFM data".into()))?;
    let mut data = vec![0.0f64; width * height];
    for y in 0..height {
        // bottom row first
        let src_row = height - 1 - y;
        for x in 0..width {
            let o = (src_row * width + x) * 4;
            let raw: [u8; 4] = bytes[o..o + 4].try_into().expect("4 bytes");
            let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
            data[y * width + x] = v as f64;
        }
    }
    DepthMap::new(width, height, data)
}

/// Write a grayscale little-endian PFM.
pub fn write_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", depth.width(), depth.height())?;
    for y in (0..depth.height()).rev() {
        for x in 0..depth.width() {
            w.write_all(&(depth.get(x, y) as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_os_string();
    p.push(".scale");
    p.into()
}

/// Read a 16-bit grayscale PNG plus its `.scale` sidecar.
pub fn read_depth_png16(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let mut scale_text = String::new();
    File::open(&side)
        .map_err(|_| Error::Format(format!("missing scale sidecar {}", side.display())))?
        .read_to_string(&mut scale_text)?;
    let scale: f64 = scale_text
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad scale sidecar value {scale_text:?}")))?;
    if !(scale > 0.0) {
        return Err(Error::Format(format!("depth scale must be positive, got {scale}")));
    }
    let img = image::open(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 * scale).collect();
    DepthMap::new(w, h, data)
}

/// Write a 16-bit PNG with the given meters-per-unit scale (and its sidecar).
pub fn write_depth_png16(path: impl AsRef<Path>, depth: &DepthMap, scale: f64) -> Result<()> {
    if !(scale > 0.0) {
        return Err(Error::Format(format!("depth scale must be positive, got {scale}")));
    }
    let path = path.as_ref();
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        depth.width() as u32,
        depth.height() as u32,
    );
    for (x, y, p) in img.enumerate_pixels_mut() {
        let v = (depth.get(x as usize, y as usize) / scale).round();
        p.0[0] = v.clamp(0.0, u16::MAX as f64) as u16;
    }
    img.save(path)?;
    let mut side = File::create(sidecar_path(path))?;
    writeln!(side, "{scale}")?;
    Ok(())
}

/// Dispatch on extension: `.pfm` or 16-bit `.png`.
pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "pfm" => read_pfm(path),
        Some(ext) if ext == "png" => read_depth_png16(path),
        other => Err(Error::Format(format!("unsupported depth extension {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_depth(seed: u64, w: usize, h: usize) -> DepthMap {
        let mut rng = StdRng::seed_from_u64(seed);
        DepthMap::new(w, h, (0..w * h).map(|_| rng.random_range(0.5..20.0)).collect()).unwrap()
    }

    #[test]
    fn pfm_roundtrip_is_exact_at_f32() {
        let depth = random_depth(1, 13, 7);
        let tmp = tempfile::NamedTempFile::with_suffix(".pfm").unwrap();
        write_pfm(tmp.path(), &depth).unwrap();
        let back = read_pfm(tmp.path()).unwrap();
        assert_eq!(back.width(), 13);
        assert_eq!(back.height(), 7);
        for (a, b) in back.data().iter().zip(depth.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        // and through the extension dispatcher
        let again = read_depth(tmp.path()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn png16_roundtrip_within_quantization() {
        let depth = random_depth(2, 9, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let scale = 25.0 / u16::MAX as f64;
        write_depth_png16(&path, &depth, scale).unwrap();
        let back = read_depth(&path).unwrap();
        for (a, b) in back.data().iter().zip(depth.data()) {
            assert!((a - b).abs() <= scale, "{a} vs {b}");
        }
    }

    #[test]
    fn png16_without_sidecar_fails() {
        let depth = random_depth(3, 4, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        write_depth_png16(&path, &depth, 0.001).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(read_depth(&path).is_err());
    }

    #[test]
    fn truncated_pfm_rejected() {
        let depth = random_depth(4, 8, 8);
        let tmp = tempfile::NamedTempFile::with_suffix(".pfm").unwrap();
        write_pfm(tmp.path(), &depth).unwrap();
        let bytes = std::fs::read(tmp.path()).unwrap();
        std::fs::write(tmp.path(), &bytes[..bytes.len() - 10]).unwrap();
        let err = read_pfm(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn colour_pfm_rejected() {
        let tmp = tempfile::NamedTempFile::with_suffix(".pfm").unwrap();
        std::fs::write(tmp.path(), b"PF\n2 2\n-1.0\n").unwrap();
        assert!(read_pfm(tmp.path()).is_err());
    }
}
