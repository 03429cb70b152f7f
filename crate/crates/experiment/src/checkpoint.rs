use crate::{ExperimentError, Result};
use std::io::{Read, Write};
use std::path::Path;
use tensor_core::Tensor;

const MAGIC: &[u8; 8] = b"RAEARCKP";
const VERSION: u32 = 1;

/// Parsed checkpoint: named tensors, the embedded config text, and the
/// training-step counter. Round-trips bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: Vec<(String, Tensor)>,
    pub config_text: String,
    pub step: u64,
}

/// Binary layout: 8-byte magic, u32 LE version, u32 LE entry count, then
/// per entry (u32 LE name length, name bytes, u32 LE rank, rank × u64 LE
/// dims, raw f32 LE values), then the config as a u64 LE length-prefixed
/// UTF-8 block, then the u64 LE step counter.
pub fn save_checkpoint(
    tensors: &[(String, Tensor)],
    config_text: &str,
    step: u64,
    path: &Path,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let cfg = config_text.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    buf.extend_from_slice(cfg);
    buf.extend_from_slice(&step.to_le_bytes());

    let mut file = std::fs::File::create(path)
        .map_err(|e| ExperimentError::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| ExperimentError::io(path.display().to_string(), e))?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(ExperimentError::Integrity(format!(
                "truncated file while reading {what} ({} of {} bytes used)",
                self.pos,
                self.data.len()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| ExperimentError::io(path.display().to_string(), e))?;
    let mut r = Reader {
        data: &data,
        pos: 0,
    };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(ExperimentError::Format(format!(
            "bad magic {magic:02x?}"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ExperimentError::UnsupportedVersion(version));
    }
    let count = r.u32("entry count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|e| ExperimentError::Format(format!("entry {i} name: {e}")))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, "tensor data")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, values)
            .map_err(|e| ExperimentError::Format(format!("entry {name}: {e}")))?;
        tensors.push((name, tensor));
    }
    let cfg_len = r.u64("config length")? as usize;
    let config_text = String::from_utf8(r.take(cfg_len, "config")?.to_vec())
        .map_err(|e| ExperimentError::Format(format!("config text: {e}")))?;
    let step = r.u64("step counter")?;
    if r.pos != data.len() {
        return Err(ExperimentError::Integrity(format!(
            "{} trailing bytes",
            data.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        version,
        tensors,
        config_text,
        step,
    })
}

/// Latent dump: the same named-tensor container, one rank-2 entry per grid
/// (`grid.NNNN.cC` carrying the class in the name), with the dataset
/// manifest embedded as the text block.
pub fn save_latent_dump(
    grids: &[(token_stats::LatentGrid, usize)],
    manifest: &str,
    path: &Path,
) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = grids
        .iter()
        .enumerate()
        .map(|(i, (g, class))| (format!("grid.{i:04}.c{class}"), g.to_tensor()))
        .collect();
    save_checkpoint(&tensors, manifest, grids.len() as u64, path)
}

/// Reads a latent dump back into grids (grid side inferred from row count).
pub fn load_latent_dump(path: &Path) -> Result<(Vec<(token_stats::LatentGrid, usize)>, String)> {
    let ckpt = load_checkpoint(path)?;
    let mut grids = Vec::with_capacity(ckpt.tensors.len());
    for (name, tensor) in &ckpt.tensors {
        let class = name
            .rsplit(".c")
            .next()
            .and_then(|c| c.parse::<usize>().ok())
            .ok_or_else(|| ExperimentError::Format(format!("bad dump entry name {name}")))?;
        let (rows, _) = tensor
            .dims2()
            .map_err(|e| ExperimentError::Format(e.to_string()))?;
        let side = (rows as f64).sqrt() as usize;
        if side * side != rows {
            return Err(ExperimentError::Format(format!(
                "{name}: {rows} rows is not a square grid"
            )));
        }
        let grid = token_stats::LatentGrid::from_tensor(side, tensor)
            .map_err(|e| ExperimentError::Format(e.to_string()))?;
        grids.push((grid, class));
    }
    Ok((grids, ckpt.config_text))
}
