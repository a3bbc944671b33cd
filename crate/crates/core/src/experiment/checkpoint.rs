//! Binary checkpoints of a [`TrainState`].
//!
//! Layout, all integers and floats little-endian:
//!
//! | field            | encoding                         |
//! |------------------|----------------------------------|
//! | magic            | `b"EOODCKPT"`                    |
//! | version          | u32                              |
//! | head kind        | u8 (0 softmax, 1 isomax, 2 isomax+) |
//! | config hash      | u64                              |
//! | seed             | u64                              |
//! | completed epochs | u64                              |
//! | width count      | u32, then one u32 per width      |
//! | classes          | u32                              |
//! | entropic scale   | f64                              |
//! | parameters       | f64 per entry, backbone then head |
//! | velocities       | same shape as parameters         |
//!
//! Tensor sizes are implied by the widths, classes and head kind.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::model::TrainState;

pub const MAGIC: &[u8; 8] = b"EOODCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn new(state: TrainState, config_hash: u64) -> Self {
        Self { state, config_hash }
    }

    pub fn head_kind(&self) -> HeadKind {
        self.state.head.kind()
    }

    /// Fails with [`Error::HeadKindMismatch`] unless the stored head is `expected`.
    pub fn expect_head(&self, expected: HeadKind) -> Result<()> {
        let found = self.head_kind();
        if found == expected {
            Ok(())
        } else {
            Err(Error::HeadKindMismatch { expected, found })
        }
    }

    /// Logs a warning when the checkpoint came from a different training config.
    pub fn warn_on_hash_mismatch(&self, expected: u64) -> bool {
        let matches = self.config_hash == expected;
        if !matches {
            log::warn!(
                "checkpoint config hash {:016x} differs from current config {:016x}",
                self.config_hash,
                expected
            );
        }
        matches
    }

    pub fn encode(&self) -> Vec<u8> {
        let s = &self.state;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(s.head.kind().code());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&s.seed.to_le_bytes());
        out.extend_from_slice(&(s.epoch as u64).to_le_bytes());
        let widths = s.backbone.widths();
        out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for &w in widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(s.head.classes() as u32).to_le_bytes());
        out.extend_from_slice(&s.head.training_scale().to_le_bytes());
        for tensor in s
            .parameters()
            .into_iter()
            .chain(s.velocities.iter().map(Vec::as_slice))
        {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let code = r.u8()?;
        let kind = HeadKind::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown head kind code {code}")))?;
        let config_hash = r.u64()?;
        let seed = r.u64()?;
        let epoch = r.u64()? as usize;
        let n_widths = r.u32()? as usize;
        if n_widths == 0 || n_widths > 64 {
            return Err(Error::Checkpoint(format!(
                "implausible layer count {n_widths}"
            )));
        }
        let widths = (0..n_widths)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let classes = r.u32()? as usize;
        let entropic_scale = r.f64()?;

        let mut state = TrainState::init(&widths, kind, classes, entropic_scale, seed)
            .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        state.epoch = epoch;
        for tensor in state.parameters_mut() {
            for v in tensor.iter_mut() {
                *v = r.f64()?;
            }
        }
        for buf in state.velocities.iter_mut() {
            for v in buf.iter_mut() {
                *v = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after offset {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Ok(Self { state, config_hash })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;
    use crate::model::SgdConfig;

    fn trained(kind: HeadKind) -> TrainState {
        let ds = gaussian_blobs(3, 2, 4.0, 0.5, 10, 0).unwrap();
        let mut s = TrainState::init(&[2, 6, 4], kind, 3, 10.0, 5).unwrap();
        let cfg = SgdConfig {
            epochs: 2,
            decay_epochs: vec![1],
            batch_size: 8,
            ..SgdConfig::default()
        };
        s.fit(&ds, &cfg, |_| {}).unwrap();
        s
    }

    #[test]
    fn round_trip_every_head() {
        for kind in HeadKind::ALL {
            let ck = Checkpoint::new(trained(kind), 0xfeed);
            let bytes = ck.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn truncation_and_version_errors() {
        let bytes = Checkpoint::new(trained(HeadKind::IsoMaxPlus), 1).encode();
        for cut in [0, 5, 12, 40, bytes.len() - 1] {
            let err = Checkpoint::decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        }
        let mut bumped = bytes.clone();
        bumped[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::decode(&bumped).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
    }

    #[test]
    fn head_kind_mismatch_is_typed() {
        let ck = Checkpoint::new(trained(HeadKind::IsoMax), 1);
        assert!(ck.expect_head(HeadKind::IsoMax).is_ok());
        assert!(matches!(
            ck.expect_head(HeadKind::SoftMax),
            Err(Error::HeadKindMismatch {
                expected: HeadKind::SoftMax,
                found: HeadKind::IsoMax
            })
        ));
    }

    #[test]
    fn hash_mismatch_only_warns() {
        let ck = Checkpoint::new(trained(HeadKind::SoftMax), 7);
        assert!(ck.warn_on_hash_mismatch(7));
        assert!(!ck.warn_on_hash_mismatch(8));
    }
}
