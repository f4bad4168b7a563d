//! Versioned binary checkpoints of trained split models.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` schema fingerprint,
//! `u64` payload length, the postcard-encoded payload, then the SHA-256 of
//! the payload. Integers are little-endian; floats are stored as their raw
//! bits, so a save/load round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::FeatureSchema;
use crate::dp::{ClipState, DpConfig};
use crate::error::{Error, Result};
use crate::nn::{ClientModel, ServerModel};
use crate::protocol::{CutPrivatizer, TrainedModels, TrainingLog};

pub const MAGIC: [u8; 8] = *b"SPLTLEAK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8;
const DIGEST_LEN: usize = 32;

/// Everything needed to resume the DP privatizer exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivatizerSnapshot {
    pub config: DpConfig,
    pub state: ClipState,
    pub seed: u64,
    pub noise_word_pos: u128,
}

impl PrivatizerSnapshot {
    pub fn capture(p: &CutPrivatizer) -> Self {
        Self {
            config: *p.config(),
            state: p.state().clone(),
            seed: p.seed(),
            noise_word_pos: p.noise_word_pos(),
        }
    }

    pub fn restore(&self) -> CutPrivatizer {
        CutPrivatizer::restore(self.config, self.state.clone(), self.seed, self.noise_word_pos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_fingerprint: u64,
    pub server: ServerModel,
    pub client: ClientModel,
    pub privatizer: Option<PrivatizerSnapshot>,
    pub log: TrainingLog,
}

impl Checkpoint {
    pub fn new(schema: &FeatureSchema, models: &TrainedModels, log: &TrainingLog) -> Self {
        Self {
            schema_fingerprint: schema.fingerprint(),
            server: models.server.clone(),
            client: models.client.clone(),
            privatizer: models.privatizer.as_ref().map(PrivatizerSnapshot::capture),
            log: log.clone(),
        }
    }

    pub fn models(&self) -> TrainedModels {
        TrainedModels {
            server: self.server.clone(),
            client: self.client.clone(),
            privatizer: self.privatizer.as_ref().map(PrivatizerSnapshot::restore),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = postcard::to_allocvec(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.schema_fingerprint.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        Ok(out)
    }

    /// Decodes and validates a checkpoint. With `schema`, the stored
    /// fingerprint must match it.
    pub fn from_bytes(bytes: &[u8], schema: Option<&FeatureSchema>) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < HEADER_LEN + DIGEST_LEN {
            return Err(bad("truncated header"));
        }
        if bytes[..8] != MAGIC {
            return Err(bad("not a splitleak checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let fingerprint = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let len = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
        if bytes.len() != HEADER_LEN + len + DIGEST_LEN {
            return Err(bad("length mismatch"));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
        if Sha256::digest(payload).as_slice() != &bytes[HEADER_LEN + len..] {
            return Err(bad("payload checksum mismatch"));
        }
        let ckpt: Checkpoint = postcard::from_bytes(payload).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.schema_fingerprint != fingerprint {
            return Err(bad("header and payload fingerprints differ"));
        }
        if let Some(s) = schema {
            if s.fingerprint() != fingerprint {
                return Err(Error::Checkpoint(format!(
                    "schema fingerprint {:016x} does not match checkpoint {fingerprint:016x}",
                    s.fingerprint()
                )));
            }
        }
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Rebuilds both models through their checked constructors so a crafted
    /// payload cannot carry inconsistent shapes.
    fn validate(&self) -> Result<()> {
        let server = ServerModel::new(
            self.server.embeddings().clone(),
            self.server.scalers().to_vec(),
            self.server.trunk().clone(),
        )?;
        let client = ClientModel::new(
            self.client.cut_width(),
            self.client.embeddings().clone(),
            self.client.head().clone(),
        )?;
        if server != self.server || client != self.client {
            return Err(Error::Checkpoint("inconsistent model dimensions".into()));
        }
        if server.cut_width() != client.cut_width() {
            return Err(Error::DimensionMismatch {
                expected: server.cut_width(),
                actual: client.cut_width(),
                context: "checkpoint cut width",
            });
        }
        for table in server.embeddings().tables().iter().chain(client.embeddings().tables()) {
            if table.data.len() != table.rows * table.dim {
                return Err(Error::Checkpoint("embedding table size mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, schema: Option<&FeatureSchema>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{demo_schema, generate_synthetic, split_train_test};
    use crate::dp::ClipMode;
    use crate::nn::Parameterized;
    use crate::protocol::{train, TrainConfig};

    fn trained(dp: bool) -> (FeatureSchema, Checkpoint) {
        let schema = demo_schema();
        let data = generate_synthetic(&schema, 300, 0.3, 11).unwrap();
        let split = split_train_test(data.len(), 0.8, 11).unwrap();
        let mut cfg = TrainConfig {
            epochs: 2,
            batch_size: 32,
            seed: 11,
            ..Default::default()
        };
        cfg.architecture.server_hidden = vec![8];
        cfg.architecture.client_hidden = vec![8, 4];
        cfg.architecture.cut_width = 4;
        cfg.architecture.embed_dim = 3;
        if dp {
            cfg.dp = Some(DpConfig {
                noise_multiplier: 0.5,
                clip: ClipMode::AdaptiveMedian,
                delta: 1e-5,
            });
        }
        let (models, log) = train(&data, &split, &cfg).unwrap();
        let ckpt = Checkpoint::new(&schema, &models, &log);
        (schema, ckpt)
    }

    fn bits(m: &impl Parameterized) -> Vec<u64> {
        m.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for dp in [false, true] {
            let (schema, ckpt) = trained(dp);
            let bytes = ckpt.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes, Some(&schema)).unwrap();
            assert_eq!(back, ckpt);
            assert_eq!(bits(&back.server), bits(&ckpt.server));
            assert_eq!(bits(&back.client), bits(&ckpt.client));
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn restored_privatizer_continues_the_noise_stream() {
        let (_, ckpt) = trained(true);
        let snap = ckpt.privatizer.clone().unwrap();
        let mut a = snap.restore();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap(), None).unwrap();
        let mut b = back.privatizer.unwrap().restore();
        let g = crate::nn::CutGradient::new(vec![0.3, -0.1, 0.7, 0.2]).unwrap();
        for _ in 0..5 {
            assert_eq!(a.process(&g).unwrap(), b.process(&g).unwrap());
        }
    }

    #[test]
    fn rejects_corruption_and_wrong_schema() {
        let (schema, ckpt) = trained(false);
        let bytes = ckpt.to_bytes().unwrap();

        let mut flipped = bytes.clone();
        let mid = HEADER_LEN + 10;
        flipped[mid] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped, None),
            Err(Error::Checkpoint(_))
        ));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic, None).is_err());

        let mut version = bytes.clone();
        version[8] = 9;
        let err = Checkpoint::from_bytes(&version, None).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");

        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], None).is_err());

        let other = schema.with_sides(&[("s_cat_a", crate::data::Side::Client)]).unwrap();
        let err = Checkpoint::from_bytes(&bytes, Some(&other)).unwrap_err().to_string();
        assert!(err.contains("fingerprint"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let (schema, ckpt) = trained(false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path, Some(&schema)).unwrap(), ckpt);
    }
}
