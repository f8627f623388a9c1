//! Channel datasets: random user drops, their ground-truth channels, pilot
//! observations and retrieved neighbors.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "GCDD" | version u32
//! f_center f64 | bandwidth f64 | n_subcarriers u64 | n_antennas u64 | spacing f64
//! |omega_t| varint, omega_t varints | |omega_c| varint, omega_c varints
//! count u64
//! count x {
//!   position 3 x f64 | seed u64
//!   full channel   N_t*N_c x (re f64, im f64), row-major, antenna-major
//!   partial        |omega_t|*|omega_c| x (re f64, im f64)
//!   n_neighbors varint | indices varint...
//! }
//! ```

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::channel::{
    extract_partial, synthesize_channel, AntennaModel, ChannelMatrix, MaterialModel,
    PartialChannel, SystemConfig,
};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, NeighborQuery};
use crate::geom::Vec3;
use crate::raytracer::{TraceOptions, Tracer};
use crate::scene::Scene;
use crate::varint;

pub const DATASET_MAGIC: &[u8; 4] = b"GCDD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub position: [f64; 3],
    /// Per-sample seed; downstream randomness (placeholders, disturbances,
    /// position errors) derives from it.
    pub seed: u64,
    pub full: ChannelMatrix,
    pub partial: PartialChannel,
    pub neighbors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cfg: SystemConfig,
    pub samples: Vec<Sample>,
}

/// How user drops are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropConfig {
    pub user_height: (f64, f64),
    pub max_order: usize,
    /// Number of neighbors stored with each sample.
    pub n_neighbors: usize,
    pub material: MaterialModel,
    pub bs_antenna: AntennaModel,
    /// Attempts per sample before giving up on finding a covered position.
    pub max_attempts: usize,
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            user_height: (1.0, 2.0),
            max_order: 2,
            n_neighbors: 16,
            material: MaterialModel::default(),
            bs_antenna: AntennaModel::dipole(Vec3::z()),
            max_attempts: 10_000,
        }
    }
}

/// Seed for stream `index` of a generator family, so that per-item draws do
/// not depend on iteration or scheduling order.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random()
}

/// Draws `count` users uniformly over the area (heights uniform in
/// `user_height`), rejecting positions inside buildings and outage drops.
/// Channels come from `truth_scene`; neighbors from `features`.
pub fn generate_dataset(
    truth_scene: &Scene,
    features: &FeatureSet,
    cfg: &SystemConfig,
    drop: &DropConfig,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    cfg.validate()?;
    drop.material.validate()?;
    let tracer = Tracer::new(truth_scene);
    let opts = TraceOptions::with_order(drop.max_order);
    let bs = truth_scene.bs();
    let (lo, hi) = (truth_scene.area.min(), truth_scene.area.max());
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for _ in 0..drop.max_attempts {
                let p = Vec3::new(
                    rng.random_range(lo[0]..hi[0]),
                    rng.random_range(lo[1]..hi[1]),
                    rng.random_range(drop.user_height.0..=drop.user_height.1),
                );
                let user = AntennaModel::random_dipole(&mut rng);
                let sample_seed: u64 = rng.random();
                if truth_scene.point_in_building(p) {
                    continue;
                }
                let paths = tracer.trace(bs, p, &opts)?;
                if paths.is_empty() {
                    continue;
                }
                let full = synthesize_channel(&paths, cfg, &drop.bs_antenna, &user, &drop.material);
                let partial = extract_partial(&full, cfg)?;
                if full.power() == 0.0 || partial.power() == 0.0 {
                    continue;
                }
                let neighbors = features
                    .query_neighbors(&NeighborQuery {
                        position: [p.x, p.y],
                        n: drop.n_neighbors,
                    })
                    .indices()
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                return Ok(Sample {
                    position: p.into(),
                    seed: sample_seed,
                    full,
                    partial,
                    neighbors,
                });
            }
            Err(Error::InvalidConfig(format!(
                "no covered user position found for sample {i}"
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        cfg: cfg.clone(),
        samples,
    })
}

fn put_matrix(w: &mut impl Write, m: &Array2<Complex64>) -> std::io::Result<()> {
    for c in m.iter() {
        varint::put_f64(w, c.re)?;
        varint::put_f64(w, c.im)?;
    }
    Ok(())
}

fn get_matrix(r: &mut impl Read, shape: (usize, usize)) -> std::io::Result<Array2<Complex64>> {
    let mut v = Vec::with_capacity(shape.0 * shape.1);
    for _ in 0..shape.0 * shape.1 {
        let re = varint::get_f64(r)?;
        let im = varint::get_f64(r)?;
        v.push(Complex64::new(re, im));
    }
    Ok(Array2::from_shape_vec(shape, v).expect("length matches shape"))
}

fn put_indices(w: &mut impl Write, v: &[usize]) -> std::io::Result<()> {
    varint::write_u64(w, v.len() as u64)?;
    v.iter().try_for_each(|&i| varint::write_u64(w, i as u64))
}

fn get_indices(r: &mut impl Read) -> std::io::Result<Vec<usize>> {
    let n = varint::read_u64(r)? as usize;
    (0..n).map(|_| varint::read_u64(r).map(|v| v as usize)).collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let c = &self.cfg;
        w.write_all(DATASET_MAGIC)?;
        varint::put_u32(w, DATASET_VERSION)?;
        varint::put_f64(w, c.f_center)?;
        varint::put_f64(w, c.bandwidth)?;
        varint::put_u64(w, c.n_subcarriers as u64)?;
        varint::put_u64(w, c.n_bs_antennas as u64)?;
        varint::put_f64(w, c.antenna_spacing)?;
        put_indices(w, &c.omega_t)?;
        put_indices(w, &c.omega_c)?;
        varint::put_u64(w, self.samples.len() as u64)?;
        for s in &self.samples {
            for x in s.position {
                varint::put_f64(w, x)?;
            }
            varint::put_u64(w, s.seed)?;
            put_matrix(w, &s.full.0)?;
            put_matrix(w, &s.partial.entries)?;
            varint::write_u64(w, s.neighbors.len() as u64)?;
            for &i in &s.neighbors {
                varint::write_u64(w, u64::from(i))?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        varint::expect_magic(r, DATASET_MAGIC)?;
        let version = varint::get_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                kind: "dataset",
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let cfg = SystemConfig {
            f_center: varint::get_f64(r)?,
            bandwidth: varint::get_f64(r)?,
            n_subcarriers: varint::get_u64(r)? as usize,
            n_bs_antennas: varint::get_u64(r)? as usize,
            antenna_spacing: varint::get_f64(r)?,
            omega_t: get_indices(r)?,
            omega_c: get_indices(r)?,
        };
        cfg.validate()
            .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
        let count = varint::get_u64(r)? as usize;
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let position = [varint::get_f64(r)?, varint::get_f64(r)?, varint::get_f64(r)?];
            let seed = varint::get_u64(r)?;
            let full = ChannelMatrix(get_matrix(r, cfg.shape())?);
            let partial = PartialChannel {
                entries: get_matrix(r, cfg.pilot_shape())?,
                omega_t: cfg.omega_t.clone(),
                omega_c: cfg.omega_c.clone(),
            };
            let n = varint::read_u64(r)? as usize;
            let neighbors = (0..n)
                .map(|_| varint::read_u64(r).map(|v| v as u32))
                .collect::<std::io::Result<Vec<_>>>()?;
            samples.push(Sample {
                position,
                seed,
                full,
                partial,
                neighbors,
            });
        }
        Ok(Self { cfg, samples })
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

    /// Concatenates datasets that share one system configuration.
    pub fn concat(parts: Vec<Dataset>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut first = it.next().ok_or_else(|| Error::EmptyDataset("nothing to join".into()))?;
        for d in it {
            if d.cfg != first.cfg {
                return Err(Error::InvalidConfig("datasets use different system configs".into()));
            }
            first.samples.extend(d.samples);
        }
        Ok(first)
    }
}
