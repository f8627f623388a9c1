//! Checkpoint files.
//!
//! ```text
//! magic "GCDC" | version u32
//! model config as JSON: length u64, UTF-8 bytes
//! epoch u64 | adam step u64 | beta1 f64 | beta2 f64 | eps f64
//! rng: seed [u8; 32] | stream u64 | word position (low u64, high u64)
//! parameter count u64
//! params f64 x count | adam m f64 x count | adam v f64 x count
//! ```

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::Model;
use super::train::Adam;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::varint;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCDC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: Vec<f64>,
    pub adam: Adam,
    pub epoch: usize,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_model(&self) -> Result<Model> {
        Model::from_params(self.model.clone(), self.params.clone())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        varint::put_u32(w, CHECKPOINT_VERSION)?;
        let cfg = serde_json::to_vec(&self.model)?;
        varint::put_u64(w, cfg.len() as u64)?;
        w.write_all(&cfg)?;
        varint::put_u64(w, self.epoch as u64)?;
        varint::put_u64(w, self.adam.step)?;
        varint::put_f64(w, self.adam.beta1)?;
        varint::put_f64(w, self.adam.beta2)?;
        varint::put_f64(w, self.adam.eps)?;
        w.write_all(&self.rng.seed)?;
        varint::put_u64(w, self.rng.stream)?;
        varint::put_u64(w, self.rng.word_pos as u64)?;
        varint::put_u64(w, (self.rng.word_pos >> 64) as u64)?;
        varint::put_u64(w, self.params.len() as u64)?;
        for buf in [&self.params, &self.adam.m, &self.adam.v] {
            for &x in buf.iter() {
                varint::put_f64(w, x)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        varint::expect_magic(r, CHECKPOINT_MAGIC)?;
        let version = varint::get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                kind: "checkpoint",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n = varint::get_u64(r)? as usize;
        if n > 1 << 20 {
            return Err(Error::Format("model config block too large".into()));
        }
        let mut cfg = vec![0u8; n];
        r.read_exact(&mut cfg)?;
        let model: ModelConfig = serde_json::from_slice(&cfg)?;
        model.validate()?;
        let epoch = varint::get_u64(r)? as usize;
        let step = varint::get_u64(r)?;
        let (beta1, beta2, eps) = (varint::get_f64(r)?, varint::get_f64(r)?, varint::get_f64(r)?);
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let stream = varint::get_u64(r)?;
        let lo = varint::get_u64(r)? as u128;
        let hi = varint::get_u64(r)? as u128;
        let count = varint::get_u64(r)? as usize;
        if count != model.param_count() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} parameters, config implies {}",
                model.param_count()
            )));
        }
        let mut read = || -> Result<Vec<f64>> {
            (0..count).map(|_| Ok(varint::get_f64(r)?)).collect()
        };
        let params = read()?;
        let m = read()?;
        let v = read()?;
        Ok(Self {
            model,
            params,
            adam: Adam {
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            },
            epoch,
            rng: RngState {
                seed,
                stream,
                word_pos: lo | (hi << 64),
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))
    }
}
