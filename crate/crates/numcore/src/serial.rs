//! Tensor file format: magic `LWT1`, u32 LE rank, u32 LE dims, f64 LE payload.
//! Writes go to a temp file in the same directory and are renamed into place,
//! so readers never observe a partial file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use crate::{NumError, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"LWT1";
const MAX_RANK: u32 = 16;

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 + 4 * t.rank() + 8 * t.numel());
    buf.extend_from_slice(&TENSOR_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in &t.shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = tmp_path(path);
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_tensor(&bytes).map_err(|detail| NumError::Format {
        detail: format!("{}: {}", path.display(), detail),
    })
}

fn parse_tensor(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.len() < 8 {
        return Err("truncated header".into());
    }
    if bytes[0..4] != TENSOR_MAGIC {
        return Err(format!("bad magic {:?}", &bytes[0..4]));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if rank > MAX_RANK {
        return Err(format!("rank {} out of range", rank));
    }
    let rank = rank as usize;
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err("truncated dims".into());
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 8 + 4 * i;
        shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let n: usize = shape.iter().product();
    if bytes.len() != header + 8 * n {
        return Err(format!(
            "payload is {} bytes, shape {:?} wants {}",
            bytes.len() - header,
            shape,
            8 * n
        ));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = header + 8 * i;
        data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Tensor::from_vec(shape, data).map_err(|e| e.to_string())
}

fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
