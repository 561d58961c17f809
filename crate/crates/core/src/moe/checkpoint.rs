//! Binary parameter snapshots.
//!
//! Layout (little-endian): the magic `UNRN`, a `u16` format version, then for
//! each parameter until end of input: `u32` name length, UTF-8 name bytes,
//! `u32` rank, `rank` `u32` dimensions, and the values as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::ParamStore;
use super::{MoeError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UNRN";
pub const CHECKPOINT_VERSION: u16 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MoeError + '_ {
    move |source| MoeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_checkpoint(params: &ParamStore, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, value) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for &d in value.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in value.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()
}

fn read_u32(input: &mut impl Read) -> Result<u32, MoeError> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|e| MoeError::Checkpoint(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<ParamStore, MoeError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| MoeError::Checkpoint(e.to_string()))?;
    if bytes.len() < 6 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(MoeError::Checkpoint("missing UNRN magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(MoeError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut cur = &bytes[6..];
    let mut store = ParamStore::new();
    while !cur.is_empty() {
        let name_len = read_u32(&mut cur)? as usize;
        if name_len > cur.len() {
            return Err(MoeError::Checkpoint("truncated name".into()));
        }
        let name = std::str::from_utf8(&cur[..name_len])
            .map_err(|_| MoeError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        cur = &cur[name_len..];
        let rank = read_u32(&mut cur)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut cur).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        if count * 4 > cur.len() {
            return Err(MoeError::Checkpoint(format!("truncated data for {name}")));
        }
        let data = cur[..count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        cur = &cur[count * 4..];
        let tensor =
            Tensor::new(shape, data).map_err(|e| MoeError::Checkpoint(format!("{name}: {e}")))?;
        store.push(name, tensor);
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), MoeError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_checkpoint(params, BufWriter::new(file)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, MoeError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_checkpoint(BufReader::new(file))
}
