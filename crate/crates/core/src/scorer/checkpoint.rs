//! Binary scorer checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! | field | size |
//! |---|---|
//! | magic `GRIP` | 4 bytes |
//! | format version | u32 |
//! | hidden width | u32 |
//! | ablation flag bits (bit 0 FiLM off, bit 1 fusion off) | u32 |
//! | layer count (6) | u32 |
//! | per layer: in dim, out dim, activation code | 3 x u32 |
//! | parameters in flat layout | f64 LE each |
//!
//! Activation codes: 0 identity, 1 relu, 2 sigmoid, 3 tanh.

use std::path::Path;

use super::ScorerParams;
use crate::error::{Error, Result};
use crate::numeric::Activation;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GRIP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &ScorerParams) -> Vec<u8> {
    let layers = params.layers();
    let mut out = Vec::with_capacity(24 + 12 * layers.len() + 8 * params.param_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, params.hidden as u32, params.flags.to_bits(), layers.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in layers {
        for v in [l.in_dim() as u32, l.out_dim() as u32, l.activation.code()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in params.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ScorerParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing GRIP magic bytes".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hidden = r.u32()? as usize;
    let flags = super::ScorerFlags::from_bits(r.u32()?)?;
    let count = r.u32()? as usize;
    if count != 6 {
        return Err(Error::Format(format!("expected 6 layers, found {count}")));
    }
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        table.push((r.u32()? as usize, r.u32()? as usize, Activation::from_code(r.u32()?)?));
    }
    let input_dim = table[0].0;
    let mut params = ScorerParams::zeros(input_dim, hidden, flags);
    for (i, (l, &(din, dout, act))) in params.layers().iter().zip(&table).enumerate() {
        if l.in_dim() != din || l.out_dim() != dout || l.activation != act {
            return Err(Error::Format(format!(
                "layer {i} is {din}x{dout} {act:?}, expected {}x{} {:?} for hidden width {hidden}",
                l.in_dim(),
                l.out_dim(),
                l.activation
            )));
        }
    }
    let flat = (0..params.param_count()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    params.set_flat(&flat)?;
    Ok(params)
}

pub fn save_checkpoint(params: &ScorerParams, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ScorerParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
