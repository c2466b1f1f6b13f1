//! Self-describing binary weight checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic  b"MMRC"
//! version u32 (currently 1)
//! seed    u64
//! dims    8 × u64  (d_in, d_out, d_model, d_state, n_units, n_layers, d_mlp, n_mlp)
//! n_arrays u32
//! per array: name_len u16, name bytes (utf-8), len u64, len × f64
//! ```
//!
//! The cascade's parameters are stored as one flat array in the canonical
//! `CascadeWeights::flatten` order; extra named arrays (e.g. a token
//! embedding) ride along. f64 bits round-trip exactly, so a loaded checkpoint
//! reproduces forward outputs bit-exactly.

use crate::network::{init_weights, CascadeDims, CascadeWeights};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MMRC";
const VERSION: u32 = 1;

pub const CASCADE_ARRAY: &str = "cascade";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub seed: u64,
    pub dims: CascadeDims,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_weights(weights: &CascadeWeights, seed: u64) -> Self {
        let mut arrays = BTreeMap::new();
        arrays.insert(CASCADE_ARRAY.to_string(), weights.flatten());
        Checkpoint { seed, dims: weights.dims, arrays }
    }

    /// Reconstructs the cascade: dims define the layout, the flat array fills it.
    pub fn to_weights(&self) -> Result<CascadeWeights> {
        let flat = self
            .arrays
            .get(CASCADE_ARRAY)
            .ok_or_else(|| Error::Format("checkpoint lacks the cascade array".into()))?;
        let mut weights = init_weights(self.dims, self.seed)?;
        weights.unflatten(flat)?;
        Ok(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in [
            self.dims.d_in,
            self.dims.d_out,
            self.dims.d_model,
            self.dims.d_state,
            self.dims.n_units,
            self.dims.n_layers,
            self.dims.d_mlp,
            self.dims.n_mlp,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, data) in &self.arrays {
            let bytes = name.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > buf.len() {
                return Err(Error::Format("checkpoint truncated".into()));
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let mut dims_raw = [0u64; 8];
        for d in dims_raw.iter_mut() {
            *d = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        }
        let dims = CascadeDims {
            d_in: dims_raw[0] as usize,
            d_out: dims_raw[1] as usize,
            d_model: dims_raw[2] as usize,
            d_state: dims_raw[3] as usize,
            n_units: dims_raw[4] as usize,
            n_layers: dims_raw[5] as usize,
            d_mlp: dims_raw[6] as usize,
            n_mlp: dims_raw[7] as usize,
        };
        let n_arrays = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let mut arrays = BTreeMap::new();
        for _ in 0..n_arrays {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Format("checkpoint array name is not utf-8".into()))?;
            let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            arrays.insert(name, data);
        }
        Ok(Checkpoint { seed, dims, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{cascade_eval, CascadeMode};

    #[test]
    fn round_trip_reproduces_forward_bits() {
        let dims = CascadeDims {
            d_in: 3,
            d_out: 2,
            d_model: 4,
            d_state: 1,
            n_units: 2,
            n_layers: 2,
            d_mlp: 4,
            n_mlp: 1,
        };
        let w = init_weights(dims, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.mmrc");
        let mut ckpt = Checkpoint::from_weights(&w, 21);
        ckpt.arrays.insert("embedding".into(), vec![0.5, -0.25, 1.0 / 3.0]);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.seed, 21);
        assert_eq!(loaded.arrays["embedding"], vec![0.5, -0.25, 1.0 / 3.0]);
        let w2 = loaded.to_weights().unwrap();
        assert_eq!(w2, w);
        let u: Vec<f64> = (0..5 * 3).map(|i| (i as f64) * 0.1 - 0.7).collect();
        let (y1, _) = cascade_eval(&w, &u, 5, CascadeMode::Sequential).unwrap();
        let (y2, _) = cascade_eval(&w2, &u, 5, CascadeMode::Sequential).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mmrc");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    }
}
