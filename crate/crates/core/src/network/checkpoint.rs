//! Single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 9 | ASCII magic `CNNFORGE1` |
//! | 4 | `u32` format version (currently 1) |
//! | 4 | `u32` length `L` of the config JSON |
//! | L | UTF-8 JSON of the [`NetworkConfig`] |
//! | 4 | `u32` number of parameter tensors `T` |
//! | per tensor | `u32` rank `r`, `r` x `u32` extents, then `prod(extents)` x `f64` |
//!
//! Tensors appear in [`Network::parameters`] order. Nothing may follow the last
//! tensor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"CNNFORGE1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(net: &Network, config: &NetworkConfig) -> Vec<u8> {
    let json = serde_json::to_vec(config).expect("config serializes");
    let params = net.parameters();
    let mut out = Vec::with_capacity(64 + json.len() + params.iter().map(|p| p.len() * 8 + 20).sum::<usize>());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.rank() as u32).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Rebuilds a network and its config from checkpoint bytes.
pub fn network_from_bytes(bytes: &[u8]) -> Result<(Network, NetworkConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32("config length")? as usize;
    let config: NetworkConfig = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    let mut net = Network::new(&config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32("tensor count")? as usize;
    let expected = net.parameters().len();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, config needs {expected}"
        )));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let rank = r.u32("tensor rank")? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Checkpoint(format!("tensor {i} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("tensor extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let len = len
            .and_then(|l| l.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {i} extents overflow")))?;
        let data = r
            .take(len, "tensor data")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push(Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    net.set_parameters(values)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((net, config))
}

pub fn save_checkpoint(path: &Path, net: &Network, config: &NetworkConfig) -> Result<()> {
    fs::write(path, checkpoint_bytes(net, config)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, NetworkConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    network_from_bytes(&bytes)
}
