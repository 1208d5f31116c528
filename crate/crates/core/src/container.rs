//! Binary matrix container.
//!
//! Layout: `rows: u64 LE`, `cols: u64 LE`, then `rows * cols` little-endian
//! `f64` values in row-major order. Nothing else, no padding.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::linalg::Matrix;

pub fn write_matrix<W: Write>(mut w: W, m: ArrayView2<f64>) -> io::Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> io::Result<Matrix> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word);
    let len = rows
        .checked_mul(cols)
        .filter(|&len| len <= (isize::MAX as u64) / 8)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "matrix shape overflows"))?
        as usize;
    let mut bytes = Vec::new();
    r.take(len as u64 * 8).read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("expected {} matrix bytes, found {}", len * 8, bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Array2::from_shape_vec((rows as usize, cols as usize), data)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn save_matrix(path: impl AsRef<Path>, m: ArrayView2<f64>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()
}

pub fn load_matrix(path: impl AsRef<Path>) -> io::Result<Matrix> {
    read_matrix(BufReader::new(File::open(path)?))
}
