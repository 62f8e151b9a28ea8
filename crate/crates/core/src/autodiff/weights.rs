//! Binary weight files.
//!
//! Layout, all little-endian: magic `RAUW`, `u32` format version, then one
//! record per parameter until end of file: `u32` name length, UTF-8 name,
//! `u32` rows, `u32` cols, `rows * cols` row-major `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RAUW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights<W: Write>(mut w: W, params: &[(String, Tensor)]) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    for (name, t) in params {
        let too_big = |what: &str| Error::WeightFormat(format!("{what} of '{name}' exceeds u32"));
        let len = u32::try_from(name.len()).map_err(|_| too_big("name length"))?;
        let rows = u32::try_from(t.rows()).map_err(|_| too_big("row count"))?;
        let cols = u32::try_from(t.cols()).map_err(|_| too_big("column count"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::WeightFormat("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != WEIGHTS_VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    loop {
        match r.read_exact(&mut b4) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(b4) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::WeightFormat("parameter name is not UTF-8".into()))?;
        r.read_exact(&mut b4)?;
        let rows = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let cols = u32::from_le_bytes(b4) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b8 = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut b8)
                .map_err(|_| Error::WeightFormat(format!("truncated payload for '{name}'")))?;
            data.push(f64::from_le_bytes(b8));
        }
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

pub fn save_weights(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    write_weights(BufWriter::new(File::create(path)?), params)
}

pub fn load_weights(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_weights(BufReader::new(File::open(path)?))
}
