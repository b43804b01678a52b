//! Artifact output: atomic writes, numeric formatting and field snapshots.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pde::{GridSpec, WavefieldGrid};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CFLW";
pub const SNAPSHOT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to `path` through a temporary file in the same directory and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Comma-separated table with a header row.
pub struct Csv {
    buf: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf, width: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

/// Header: magic, version u16, dims u16, then two u32 axis lengths (the second
/// is 0 for 1D), followed by little-endian `(re, im)` f64 pairs in row-major order.
pub fn encode_snapshot(grid: &WavefieldGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * grid.values.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.spec.dims as u16).to_le_bytes());
    let n = grid.spec.n as u32;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&(if grid.spec.dims == 2 { n } else { 0 }).to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_snapshot`]; box size and time stamp are not stored in
/// the file and must be supplied.
pub fn decode_snapshot(bytes: &[u8], half_width: f64, time: f64) -> Result<WavefieldGrid> {
    let bad = |m: &str| Error::Config(format!("invalid field snapshot: {m}"));
    if bytes.len() < HEADER_LEN || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(bad("missing CFLW header"));
    }
    let u16_at = |k: usize| u16::from_le_bytes([bytes[k], bytes[k + 1]]);
    let u32_at = |k: usize| u32::from_le_bytes([bytes[k], bytes[k + 1], bytes[k + 2], bytes[k + 3]]);
    if u16_at(4) != SNAPSHOT_VERSION {
        return Err(bad("unsupported version"));
    }
    let dims = u16_at(6) as usize;
    let n = u32_at(8) as usize;
    let n2 = u32_at(12) as usize;
    if (dims == 2 && n2 != n) || (dims == 1 && n2 != 0) {
        return Err(bad("axis lengths"));
    }
    let spec = GridSpec::new(dims, n, half_width)?;
    if bytes.len() != HEADER_LEN + 16 * spec.len() {
        return Err(bad("payload length"));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes"));
    let values = (0..spec.len())
        .map(|i| {
            let k = HEADER_LEN + 16 * i;
            Complex64::new(f(k), f(k + 8))
        })
        .collect();
    Ok(WavefieldGrid { spec, values, time })
}

pub fn write_snapshot(path: &Path, grid: &WavefieldGrid) -> Result<()> {
    atomic_write(path, &encode_snapshot(grid))
}

pub fn read_snapshot(path: &Path, half_width: f64, time: f64) -> Result<WavefieldGrid> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes, half_width, time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let spec = GridSpec::new(2, 8, 3.0).unwrap();
        let g = WavefieldGrid::from_fn(spec, |z| Complex64::new(z[0], -z[1] * 0.5));
        let bytes = encode_snapshot(&g);
        assert_eq!(&bytes[..4], b"CFLW");
        assert_eq!(bytes.len(), 16 + 16 * 64);
        let back = decode_snapshot(&bytes, 3.0, 0.0).unwrap();
        assert_eq!(back, g);
        assert!(decode_snapshot(&bytes[..40], 3.0, 0.0).is_err());
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
