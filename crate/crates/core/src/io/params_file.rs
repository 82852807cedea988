//! Binary container for the raw layered parameter tensor.
//!
//! Layout (little-endian): magic "FL3P", version u16, k_layers u32,
//! padding u32, interior width u32, interior height u32, sh degree u32,
//! then the flat tensor as f32 in storage order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layered::{LayeredShape, RawLayeredParams};

pub const PARAMS_MAGIC: [u8; 4] = *b"FL3P";
pub const PARAMS_VERSION: u16 = 1;

pub fn write_params_to(w: &mut impl Write, params: &RawLayeredParams) -> Result<()> {
    let shape = params.shape();
    w.write_all(&PARAMS_MAGIC)?;
    w.write_all(&PARAMS_VERSION.to_le_bytes())?;
    for v in [
        shape.k_layers as u32,
        shape.padding as u32,
        shape.interior_width as u32,
        shape.interior_height as u32,
        shape.sh_degree as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(params.len() * 4);
    for v in params.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_params(path: impl AsRef<Path>, params: &RawLayeredParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params_to(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn read_params_from(r: &mut impl Read) -> Result<RawLayeredParams> {
    let truncated = |what: &str| Error::Format(format!("truncated params file while reading {what}"));
    let mut head = [0u8; 4];
    r.read_exact(&mut head).map_err(|_| truncated("magic"))?;
    if head != PARAMS_MAGIC {
        return Err(Error::Format(format!("bad params magic {head:?}")));
    }
    let mut two = [0u8; 2];
    r.read_exact(&mut two).map_err(|_| truncated("version"))?;
    let version = u16::from_le_bytes(two);
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!("unsupported params version {version}")));
    }
    let mut four = [0u8; 4];
    let mut next_u32 = |what: &str| -> Result<u32> {
        r.read_exact(&mut four).map_err(|_| truncated(what))?;
        Ok(u32::from_le_bytes(four))
    };
    let k_layers = next_u32("layer count")? as usize;
    let padding = next_u32("padding")? as usize;
    let width = next_u32("width")? as usize;
    let height = next_u32("height")? as usize;
    let degree = next_u32("sh degree")? as usize;
    if degree > crate::sh::MAX_DEGREE {
        return Err(Error::Format(format!("sh degree {degree} out of range")));
    }
    let shape = LayeredShape::new(k_layers, padding, width, height, degree)
        .map_err(|e| Error::Format(format!("invalid params shape: {e}")))?;
    let mut params = RawLayeredParams::zeros(shape);
    let mut buf = vec![0u8; params.len() * 4];
    r.read_exact(&mut buf).map_err(|_| truncated("tensor data"))?;
    for (i, v) in params.data_mut().iter_mut().enumerate() {
        *v = f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64;
    }
    if !params.is_finite() {
        return Err(Error::Format("params file contains non-finite values".into()));
    }
    Ok(params)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<RawLayeredParams> {
    let mut r = BufReader::new(File::open(path)?);
    read_params_from(&mut r)
}
