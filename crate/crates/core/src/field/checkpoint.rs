//! Parameter checkpoint file.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic          4 bytes  "NSPF"
//! version        u32      1
//! trunk_depth    u32
//! trunk_width    u32
//! skip_layer     u32      0 = no skip connection
//! head_width     u32
//! k_position     u32
//! k_direction    u32
//! k_wavelength   u32
//! lambda_min_nm  f64
//! lambda_max_nm  f64
//! bounds_min     3 × f64
//! bounds_max     3 × f64
//! n_params       u64
//! params         n_params × f32, layer-major (weights row-major, then bias)
//! ```

use std::fs;
use std::path::Path;

use super::{EncodingConfig, FieldArch, FieldParams, NeuralField};
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::renderer::Aabb;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NSPF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(field: &NeuralField) -> Vec<u8> {
    let arch = &field.params.arch;
    let enc = &field.encoding;
    let mut buf = Vec::with_capacity(128 + 4 * field.params.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        arch.trunk_depth as u32,
        arch.trunk_width as u32,
        arch.skip_layer.map_or(0, |s| s as u32),
        arch.head_width as u32,
        enc.k_position as u32,
        enc.k_direction as u32,
        enc.k_wavelength as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in [enc.wavelength_min_nm, enc.wavelength_max_nm]
        .into_iter()
        .chain(enc.bounds.min)
        .chain(enc.bounds.max)
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let flat = field.params.to_flat();
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint; `path` is only used for error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<NeuralField> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic (not an NSPF checkpoint)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let trunk_depth = r.u32()? as usize;
    let trunk_width = r.u32()? as usize;
    let skip = r.u32()? as usize;
    let head_width = r.u32()? as usize;
    let arch = FieldArch {
        trunk_depth,
        trunk_width,
        skip_layer: (skip != 0).then_some(skip),
        head_width,
    };
    let k_position = r.u32()? as usize;
    let k_direction = r.u32()? as usize;
    let k_wavelength = r.u32()? as usize;
    let wavelength_min_nm = r.f64()?;
    let wavelength_max_nm = r.f64()?;
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for v in min.iter_mut().chain(max.iter_mut()) {
        *v = r.f64()?;
    }
    let encoding = EncodingConfig {
        k_position,
        k_direction,
        k_wavelength,
        wavelength_min_nm,
        wavelength_max_nm,
        bounds: Aabb { min, max },
    };
    arch.validate()?;
    encoding.validate()?;
    let mut params = FieldParams::zeros(arch, &encoding);
    let n = r.u64()? as usize;
    if n != params.num_params() {
        return Err(Error::format(
            path,
            format!(
                "architecture needs {} parameters, header declares {n}",
                params.num_params()
            ),
        ));
    }
    let payload = r.take(4 * n)?;
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after parameters"));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    params.set_from_flat(&flat)?;
    NeuralField::new(params, encoding)
}

pub fn save_checkpoint(field: &NeuralField, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(field))
}

pub fn load_checkpoint(path: &Path) -> Result<NeuralField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> NeuralField {
        let arch = FieldArch {
            trunk_depth: 3,
            trunk_width: 6,
            skip_layer: Some(2),
            head_width: 5,
        };
        let enc = EncodingConfig {
            k_position: 2,
            bounds: Aabb {
                min: [-1.5, -2.0, -0.5],
                max: [1.5, 2.0, 3.0],
            },
            ..EncodingConfig::default()
        };
        NeuralField::initialized(arch, enc, 4).unwrap()
    }

    #[test]
    fn round_trip_at_single_precision() {
        let f = field();
        let bytes = encode_checkpoint(&f);
        assert_eq!(&bytes[..4], b"NSPF");
        let g = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(g.encoding, f.encoding);
        assert_eq!(g.params.arch, f.params.arch);
        for (a, b) in f.params.to_flat().iter().zip(g.params.to_flat()) {
            assert_eq!(*a as f32 as f64, b);
        }
        // a second pass is lossless
        assert_eq!(encode_checkpoint(&g), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&field());
        let p = Path::new("mem");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, p).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Version { found: 9, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(decode_checkpoint(&long, p).is_err());
    }
}
