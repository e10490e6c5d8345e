//! Parameter snapshot format.
//!
//! Layout: magic `BTW1`, then per parameter: name length (u16 LE), UTF-8
//! name, rank (u8), extents (u32 LE each), raw little-endian f32 data.
//! Readers reject unknown magic and truncated payloads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Scalar, Tensor, TensorError};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"BTW1";

pub fn write_snapshot<S: Scalar, W: Write>(
    mut w: W,
    params: &[(String, &Tensor<S>)],
) -> Result<(), TensorError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    for (name, t) in params {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(TensorError::Snapshot(format!("parameter name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        if t.shape().len() > u8::MAX as usize {
            return Err(TensorError::Snapshot(format!("rank too large for '{name}'")));
        }
        w.write_all(&[t.shape().len() as u8])?;
        for &e in t.shape() {
            if e > u32::MAX as usize {
                return Err(TensorError::Snapshot(format!("extent too large for '{name}'")));
            }
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| TensorError::Snapshot("missing or truncated magic".into()))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(TensorError::Snapshot(format!(
            "unknown magic {:?}, expected {:?}",
            magic, SNAPSHOT_MAGIC
        )));
    }
    let mut out = Vec::new();
    loop {
        let mut len_buf = [0u8; 2];
        match read_or_eof(&mut r, &mut len_buf)? {
            ReadState::CleanEof => break,
            ReadState::Full => {}
        }
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        read_fully(&mut r, &mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| TensorError::Snapshot("parameter name is not UTF-8".into()))?;
        let mut rank_buf = [0u8; 1];
        read_fully(&mut r, &mut rank_buf)?;
        let rank = rank_buf[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let mut e = [0u8; 4];
            read_fully(&mut r, &mut e)?;
            let ext = u32::from_le_bytes(e) as usize;
            numel = numel
                .checked_mul(ext)
                .ok_or_else(|| TensorError::Snapshot(format!("extent overflow in '{name}'")))?;
            shape.push(ext);
        }
        let mut raw = vec![0u8; numel * 4];
        read_fully(&mut r, &mut raw)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_snapshot_file<S: Scalar>(
    path: &Path,
    params: &[(String, &Tensor<S>)],
) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot_file(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, TensorError> {
    read_snapshot(BufReader::new(File::open(path)?))
}

enum ReadState {
    Full,
    CleanEof,
}

/// Fill `buf` entirely, or report a clean EOF when not a single byte is left.
fn read_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<ReadState, TensorError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(ReadState::CleanEof);
            }
            return Err(TensorError::Snapshot("truncated payload".into()));
        }
        filled += n;
    }
    Ok(ReadState::Full)
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), TensorError> {
    match read_or_eof(r, buf)? {
        ReadState::Full => Ok(()),
        ReadState::CleanEof => Err(TensorError::Snapshot("truncated payload".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            ("enc0.w".into(), Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| i as f32 * 0.5).collect()).unwrap()),
            ("enc0.b".into(), Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let params = sample();
        let refs: Vec<(String, &Tensor<f32>)> =
            params.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &refs).unwrap();
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back.len(), params.len());
        for ((n0, t0), (n1, t1)) in params.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert_eq!(t0.data(), t1.data());
        }
    }

    #[test]
    fn unknown_magic_is_rejected() {
        let err = read_snapshot(&b"NOPE"[..]).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let params = sample();
        let refs: Vec<(String, &Tensor<f32>)> =
            params.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &refs).unwrap();
        for cut in [buf.len() - 1, buf.len() - 7, 10, 5, 3] {
            let err = read_snapshot(&buf[..cut]).unwrap_err();
            assert!(matches!(err, TensorError::Snapshot(_)), "cut at {cut}: {err}");
        }
    }
}
