//! Self-describing binary parameter files.
//!
//! Layout, all little-endian: `b"MVPC"`, `u32` format version, `u32`
//! input_dim, output_dim, width, depth, `u8` activation (0 = GELU), `u8`
//! layer_norm, then every tensor in declaration order as `f64`s.

use std::path::Path;

use super::{Activation, MlpParams, NetSpec};
use crate::error::{Error, Result};
use crate::Tensor;

const MAGIC: &[u8; 4] = b"MVPC";
const VERSION: u32 = 1;

impl MlpParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.spec();
        let mut out = Vec::with_capacity(22 + 8 * s.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [s.input_dim, s.output_dim, s.width, s.depth] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(match s.activation {
            Activation::Gelu => 0,
        });
        out.push(u8::from(s.layer_norm));
        for t in self.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 26 || &bytes[..4] != MAGIC {
            return Err(bad("missing MVPC header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let dims: Vec<usize> = (0..4).map(|i| u32_at(8 + 4 * i) as usize).collect();
        if bytes[24] != 0 {
            return Err(bad(&format!("unknown activation code {}", bytes[24])));
        }
        let layer_norm = match bytes[25] {
            0 => false,
            1 => true,
            b => return Err(bad(&format!("layer_norm flag {b}"))),
        };
        let spec = NetSpec::new(dims[0], dims[1], dims[2], dims[3], layer_norm)
            .map_err(|e| bad(&e.to_string()))?;
        let payload = &bytes[26..];
        if payload.len() != 8 * spec.param_count() {
            return Err(bad(&format!(
                "expected {} parameters, found {} bytes",
                spec.param_count(),
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut tensors = Vec::new();
        for (i, o) in spec.layer_dims() {
            tensors.push(Tensor::matrix(i, o, values.by_ref().take(i * o).collect()));
            tensors.push(Tensor::new(vec![o], values.by_ref().take(o).collect()));
        }
        MlpParams::from_tensors(spec, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let spec = NetSpec::new(3, 2, 4, 1, true).unwrap();
        let p = MlpParams::init(spec, &mut Rng::new(0)).unwrap();
        let b = p.to_bytes();
        assert_eq!(&b[..4], b"MVPC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 4);
        assert_eq!(b[25], 1);
        assert_eq!(b.len(), 26 + 8 * spec.param_count());
        let first = f64::from_le_bytes(b[26..34].try_into().unwrap());
        assert_eq!(first, p.tensors()[0].data()[0]);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let spec = NetSpec::new(3, 2, 4, 1, false).unwrap();
        let b = MlpParams::init(spec, &mut Rng::new(0)).unwrap().to_bytes();
        assert!(MlpParams::from_bytes(&b[..b.len() - 8]).is_err());
        let mut foreign = b.clone();
        foreign[0] = b'X';
        assert!(MlpParams::from_bytes(&foreign).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(i in 1usize..6, o in 1usize..4, w in 1usize..9, d in 1usize..4, ln: bool, seed: u64) {
            let spec = NetSpec::new(i, o, w, d, ln).unwrap();
            let p = MlpParams::init(spec, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(MlpParams::from_bytes(&p.to_bytes()).unwrap(), p);
        }
    }
}
