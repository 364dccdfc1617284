//! `.fxw` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FXW1"                      4 bytes
//! arch tag        u32         0 = linear, 1 = mlp, 2 = conv_tiny
//! activation tag  u32         0 = relu, 1 = tanh
//! d               u32
//! k               u32
//! mlp:       hidden count u32, then one u32 per hidden size
//! conv_tiny: channels u32
//! param count     u64
//! params          param count × f64
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, Arch, ModelSpec, NnError, Result, Weights};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FXW1";

pub fn encode_checkpoint(weights: &Weights) -> Vec<u8> {
    let spec = weights.spec();
    let mut words: Vec<u32> = Vec::new();
    let (tag, extra): (u32, Vec<u32>) = match &spec.arch {
        Arch::Linear => (0, vec![]),
        Arch::Mlp(hidden) => {
            let mut extra = vec![hidden.len() as u32];
            extra.extend(hidden.iter().map(|&h| h as u32));
            (1, extra)
        }
        Arch::ConvTiny { channels } => (2, vec![*channels as u32]),
    };
    words.push(tag);
    words.push(match spec.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    words.push(spec.input_dim as u32);
    words.push(spec.num_classes as u32);
    words.extend(extra);

    let params = weights.params();
    let mut out = Vec::with_capacity(4 + 4 * words.len() + 8 + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
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
            NnError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Weights> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let tag = r.u32("arch tag")?;
    let activation = match r.u32("activation tag")? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(NnError::Checkpoint(format!("unknown activation tag {other}"))),
    };
    let d = r.u32("input dim")? as usize;
    let k = r.u32("class count")? as usize;
    let arch = match tag {
        0 => Arch::Linear,
        1 => {
            let n = r.u32("hidden count")? as usize;
            if n > super::MAX_HIDDEN_LAYERS {
                return Err(NnError::Checkpoint(format!("{n} hidden layers")));
            }
            let hidden = (0..n)
                .map(|_| r.u32("hidden size").map(|h| h as usize))
                .collect::<Result<Vec<_>>>()?;
            Arch::Mlp(hidden)
        }
        2 => Arch::ConvTiny {
            channels: r.u32("channels")? as usize,
        },
        other => return Err(NnError::Checkpoint(format!("unknown arch tag {other}"))),
    };
    let spec = ModelSpec::new(arch, d, k, activation)?;
    let count = r.u64("param count")? as usize;
    if count != spec.param_count() {
        return Err(NnError::ParamCount {
            expected: spec.param_count(),
            got: count,
        });
    }
    let raw = r.take(count.checked_mul(8).ok_or_else(|| NnError::Checkpoint("param count overflow".into()))?, "params")?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Weights::new(spec, params)
}

pub fn write_checkpoint(path: impl AsRef<Path>, weights: &Weights) -> Result<()> {
    fs::write(path, encode_checkpoint(weights))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Weights> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Weights {
        let spec = ModelSpec::mlp(5, &[4, 3], 3, Activation::Tanh).unwrap();
        Weights::random(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn header_layout() {
        let w = Weights::zeros(ModelSpec::linear(2, 2).unwrap()).unwrap();
        let bytes = encode_checkpoint(&w);
        assert_eq!(&bytes[..4], b"FXW1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 6);
        assert_eq!(bytes.len(), 28 + 6 * 8);
    }

    #[test]
    fn rejects_wrong_magic() {
        let mut bytes = encode_checkpoint(&sample());
        bytes[0] = b'G';
        assert!(matches!(decode_checkpoint(&bytes), Err(NnError::Checkpoint(_))));
    }

    #[test]
    fn rejects_truncation_everywhere() {
        let bytes = encode_checkpoint(&sample());
        for cut in [0, 3, 4, 10, 30, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut bytes = encode_checkpoint(&sample());
        bytes.push(0);
        assert!(decode_checkpoint(&bytes).is_err());
    }

    #[test]
    fn conv_round_trip() {
        let spec = ModelSpec::conv_tiny(7, 3, 4, Activation::Relu).unwrap();
        let w = Weights::random(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(decode_checkpoint(&encode_checkpoint(&w)).unwrap(), w);
    }
}
