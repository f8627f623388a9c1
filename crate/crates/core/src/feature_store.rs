//! Geometric feature set over a regular virtual-user grid.
//!
//! Every grid point stores the `(length, departure direction)` of each path
//! traced from the base station. Users look up their nearest grid points by
//! 2D position only; all grid points share one height.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "GCDF" | version u32
//! origin_x f64 | origin_y f64 | step f64 | rows u64 | cols u64 | height f64
//! scene_hash [u8; 32] | count u64
//! count x { n_paths varint | n_paths x (length f64, dir_x f64, dir_y f64, dir_z f64) }
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::raytracer::{TraceOptions, Tracer};
use crate::scene::Scene;
use crate::varint;

pub const FEATURE_MAGIC: &[u8; 4] = b"GCDF";
pub const FEATURE_VERSION: u32 = 1;

/// The compact per-path record kept for retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturePath {
    pub length_m: f64,
    pub depart_dir: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub grid_origin: [f64; 2],
    pub grid_step: f64,
    /// (rows, cols); rows run along y, columns along x.
    pub grid_dims: (usize, usize),
    pub grid_height: f64,
    /// Row-major, `rows * cols` entries; empty for blocked or outage points.
    pub entries: Vec<Vec<FeaturePath>>,
    pub scene_hash: [u8; 32],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborQuery {
    pub position: [f64; 2],
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    /// `(grid index, 2D distance)`, ascending by distance then index.
    pub hits: Vec<(usize, f64)>,
    /// Set when fewer than `n` non-empty grid points exist.
    pub short: bool,
}

impl Neighbors {
    pub fn indices(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.0).collect()
    }
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, index: usize) -> [f64; 2] {
        let cols = self.grid_dims.1;
        let (r, c) = (index / cols, index % cols);
        [
            self.grid_origin[0] + c as f64 * self.grid_step,
            self.grid_origin[1] + r as f64 * self.grid_step,
        ]
    }

    pub fn non_empty_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_empty()).count()
    }

    fn distance(&self, index: usize, q: [f64; 2]) -> f64 {
        let p = self.position(index);
        let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
        (dx * dx + dy * dy).sqrt()
    }

    /// Nearest non-empty grid points by expanding square rings around the
    /// grid cell closest to the query.
    pub fn query_neighbors(&self, q: &NeighborQuery) -> Neighbors {
        let (rows, cols) = self.grid_dims;
        if q.n == 0 || rows == 0 || cols == 0 {
            return Neighbors {
                hits: vec![],
                short: q.n > 0,
            };
        }
        let to_cell = |v: f64, o: f64, n: usize| -> usize {
            let c = ((v - o) / self.grid_step).round();
            c.clamp(0.0, (n - 1) as f64) as usize
        };
        let cr = to_cell(q.position[1], self.grid_origin[1], rows) as isize;
        let cc = to_cell(q.position[0], self.grid_origin[0], cols) as isize;

        let mut found: Vec<(usize, f64)> = Vec::new();
        let max_ring = rows.max(cols) as isize;
        let visit = |r: isize, c: isize, found: &mut Vec<(usize, f64)>| {
            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                return;
            }
            let idx = r as usize * cols + c as usize;
            if !self.entries[idx].is_empty() {
                found.push((idx, self.distance(idx, q.position)));
            }
        };
        let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        for ring in 0..=max_ring {
            if ring == 0 {
                visit(cr, cc, &mut found);
            } else {
                for c in (cc - ring)..=(cc + ring) {
                    visit(cr - ring, c, &mut found);
                    visit(cr + ring, c, &mut found);
                }
                for r in (cr - ring + 1)..=(cr + ring - 1) {
                    visit(r, cc - ring, &mut found);
                    visit(r, cc + ring, &mut found);
                }
            }
            if found.len() >= q.n {
                found.sort_by(order);
                // every point beyond this ring is at least (ring + 0.5) steps away
                let bound = (ring as f64 + 0.5) * self.grid_step;
                if found[q.n - 1].1 < bound {
                    break;
                }
            }
        }
        found.sort_by(order);
        let short = found.len() < q.n;
        found.truncate(q.n);
        Neighbors { hits: found, short }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        varint::put_u32(w, FEATURE_VERSION)?;
        varint::put_f64(w, self.grid_origin[0])?;
        varint::put_f64(w, self.grid_origin[1])?;
        varint::put_f64(w, self.grid_step)?;
        varint::put_u64(w, self.grid_dims.0 as u64)?;
        varint::put_u64(w, self.grid_dims.1 as u64)?;
        varint::put_f64(w, self.grid_height)?;
        w.write_all(&self.scene_hash)?;
        varint::put_u64(w, self.entries.len() as u64)?;
        for e in &self.entries {
            varint::write_u64(w, e.len() as u64)?;
            for p in e {
                varint::put_f64(w, p.length_m)?;
                for c in p.depart_dir {
                    varint::put_f64(w, c)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        varint::expect_magic(r, FEATURE_MAGIC)?;
        let version = varint::get_u32(r)?;
        if version != FEATURE_VERSION {
            return Err(Error::Version {
                kind: "feature set",
                found: version,
                expected: FEATURE_VERSION,
            });
        }
        let grid_origin = [varint::get_f64(r)?, varint::get_f64(r)?];
        let grid_step = varint::get_f64(r)?;
        let rows = varint::get_u64(r)? as usize;
        let cols = varint::get_u64(r)? as usize;
        let grid_height = varint::get_f64(r)?;
        let mut scene_hash = [0u8; 32];
        r.read_exact(&mut scene_hash)?;
        let count = varint::get_u64(r)? as usize;
        if count != rows * cols {
            return Err(Error::Format(format!(
                "entry count {count} does not match a {rows} x {cols} grid"
            )));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let n = varint::read_u64(r)? as usize;
            let mut e = Vec::with_capacity(n);
            for _ in 0..n {
                let length_m = varint::get_f64(r)?;
                let depart_dir = [varint::get_f64(r)?, varint::get_f64(r)?, varint::get_f64(r)?];
                e.push(FeaturePath { length_m, depart_dir });
            }
            entries.push(e);
        }
        Ok(Self {
            grid_origin,
            grid_step,
            grid_dims: (rows, cols),
            grid_height,
            entries,
            scene_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a feature set, optionally checking it was built from `scene`.
    pub fn load(path: impl AsRef<Path>, scene: Option<&Scene>) -> Result<Self> {
        let fs = Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))?;
        if let Some(s) = scene {
            fs.check_scene(s)?;
        }
        Ok(fs)
    }

    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        if self.scene_hash != scene.digest() {
            return Err(Error::SceneHashMismatch);
        }
        Ok(())
    }
}

/// Traces from the base station to every grid point covering the scene area.
/// Points inside buildings keep an empty entry.
pub fn build_feature_set(
    scene: &Scene,
    grid_step: f64,
    grid_height: f64,
    max_order: usize,
) -> Result<FeatureSet> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidConfig("grid step must be positive".into()));
    }
    let lo = scene.area.min();
    let n = (scene.area.side / grid_step + 1e-9).floor() as usize + 1;
    let (rows, cols) = (n, n);
    let tracer = Tracer::new(scene);
    let bs = scene.bs();
    let opts = TraceOptions::with_order(max_order);
    let template = FeatureSet {
        grid_origin: lo,
        grid_step,
        grid_dims: (rows, cols),
        grid_height,
        entries: vec![],
        scene_hash: scene.digest(),
    };
    let entries = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let p = template.position(idx);
            let rx = Vec3::new(p[0], p[1], grid_height);
            if scene.point_in_building(rx) || rx == bs || rx.z <= scene.ground_height {
                return Ok(vec![]);
            }
            let set = tracer.trace(bs, rx, &opts)?;
            Ok(set
                .paths
                .iter()
                .map(|p| FeaturePath {
                    length_m: p.length_m,
                    depart_dir: p.depart_dir,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet { entries, ..template })
}

/// Adds an offset with both components uniform in `[-l, l]`.
pub fn apply_position_error(x: [f64; 2], l: f64, seed: u64) -> [f64; 2] {
    if !(l > 0.0) {
        return x;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [x[0] + rng.random_range(-l..=l), x[1] + rng.random_range(-l..=l)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, BuildingPrism};
    use proptest::prelude::*;
    use rand::Rng;

    fn synthetic(rows: usize, cols: usize, holes: &[usize]) -> FeatureSet {
        let mut entries = vec![
            vec![FeaturePath {
                length_m: 1.0,
                depart_dir: [1.0, 0.0, 0.0]
            }];
            rows * cols
        ];
        for &h in holes {
            entries[h].clear();
        }
        FeatureSet {
            grid_origin: [-10.0, -6.0],
            grid_step: 2.0,
            grid_dims: (rows, cols),
            grid_height: 1.5,
            entries,
            scene_hash: [0; 32],
        }
    }

    fn brute_force(fs: &FeatureSet, q: [f64; 2], n: usize) -> Vec<usize> {
        let mut all: Vec<(usize, f64)> = (0..fs.len())
            .filter(|&i| !fs.entries[i].is_empty())
            .map(|i| {
                let c = i % fs.grid_dims.1;
                let r = i / fs.grid_dims.1;
                let px = fs.grid_origin[0] + c as f64 * fs.grid_step;
                let py = fs.grid_origin[1] + r as f64 * fs.grid_step;
                let (dx, dy) = (px - q[0], py - q[1]);
                (i, (dx * dx + dy * dy).sqrt())
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.into_iter().take(n).map(|x| x.0).collect()
    }

    #[test]
    fn empty_scene_grid_has_los_everywhere() {
        let s = generate_scene(1, 0, 8.0, 10.0).unwrap();
        let fs = build_feature_set(&s, 4.0, 1.5, 1).unwrap();
        assert_eq!(fs.grid_dims, (3, 3));
        assert!(fs.entries.iter().all(|e| !e.is_empty()));
        let center = &fs.entries[4];
        assert_eq!(fs.position(4), [0.0, 0.0]);
        assert!((center[0].length_m - 8.5).abs() < 1e-9);
        for e in &fs.entries {
            for p in e {
                let n: f64 = p.depart_dir.iter().map(|c| c * c).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9 && p.length_m > 0.0);
            }
        }
        let corner = fs.position(0);
        let d = (corner[0].powi(2) + corner[1].powi(2) + 8.5f64.powi(2)).sqrt();
        assert!((fs.entries[0][0].length_m - d).abs() < 1e-9);
    }

    #[test]
    fn grid_point_inside_building_is_empty() {
        let mut s = generate_scene(1, 0, 8.0, 10.0).unwrap();
        s.buildings.push(BuildingPrism::rect(0, [3.0, 3.0], [5.0, 5.0], 20.0));
        let fs = build_feature_set(&s, 4.0, 1.5, 1).unwrap();
        assert!(fs.entries[8].is_empty());
        assert_eq!(fs.position(8), [4.0, 4.0]);
    }

    #[test]
    fn builds_are_deterministic_and_round_trip() {
        let s = generate_scene(3, 6, 60.0, 10.0).unwrap();
        let a = build_feature_set(&s, 4.0, 1.5, 2).unwrap();
        let b = build_feature_set(&s, 4.0, 1.5, 2).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_to(&mut ba).unwrap();
        b.write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = FeatureSet::read_from(&mut ba.as_slice()).unwrap();
        assert_eq!(back, a);
        back.check_scene(&s).unwrap();
        let other = generate_scene(4, 6, 60.0, 10.0).unwrap();
        assert!(matches!(back.check_scene(&other), Err(Error::SceneHashMismatch)));
    }

    #[test]
    fn exact_hit_and_midpoint_ties() {
        let fs = synthetic(4, 5, &[]);
        let p = fs.position(7);
        let hit = fs.query_neighbors(&NeighborQuery { position: p, n: 1 });
        assert_eq!(hit.hits, vec![(7, 0.0)]);
        let (a, b) = (fs.position(7), fs.position(8));
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let hit = fs.query_neighbors(&NeighborQuery { position: mid, n: 2 });
        assert_eq!(hit.hits, vec![(7, 1.0), (8, 1.0)]);
    }

    #[test]
    fn empty_points_are_skipped_and_short_flagged() {
        let fs = synthetic(2, 2, &[0, 3]);
        let r = fs.query_neighbors(&NeighborQuery { position: fs.position(0), n: 3 });
        assert!(r.short);
        assert_eq!(r.indices(), vec![1, 2]);
    }

    #[test]
    fn random_queries_match_linear_scan() {
        let holes: Vec<usize> = (0..300).filter(|i| i % 7 == 3 || i % 11 == 0).collect();
        let fs = synthetic(15, 20, &holes);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let q = [rng.random_range(-20.0..40.0), rng.random_range(-15.0..30.0)];
            let n = rng.random_range(0..20);
            let got = fs.query_neighbors(&NeighborQuery { position: q, n });
            assert_eq!(got.indices(), brute_force(&fs, q, n), "query {q:?} n {n}");
            assert!(got.hits.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn position_error_moments() {
        assert_eq!(apply_position_error([3.0, 4.0], 0.0, 9), [3.0, 4.0]);
        assert_eq!(apply_position_error([3.0, 4.0], 5.0, 9), apply_position_error([3.0, 4.0], 5.0, 9));
        let (mut sx, mut sy) = (0.0, 0.0);
        let n = 100_000;
        for seed in 0..n {
            let p = apply_position_error([0.0, 0.0], 5.0, seed);
            assert!(p[0].abs() <= 5.0 && p[1].abs() <= 5.0);
            sx += p[0];
            sy += p[1];
        }
        assert!((sx / n as f64).abs() < 0.05 && (sy / n as f64).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn result_independent_of_visit_order(qx in -12.0..40.0f64, qy in -8.0..30.0f64,
                                             n in 1usize..12, shuffle_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let fs = synthetic(12, 12, &[5, 17, 40]);
            let mut order: Vec<usize> = (0..fs.len()).filter(|&i| !fs.entries[i].is_empty()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            let mut scored: Vec<(usize, f64)> = order.iter().map(|&i| (i, fs.distance(i, [qx, qy]))).collect();
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            scored.truncate(n);
            let got = fs.query_neighbors(&NeighborQuery { position: [qx, qy], n });
            prop_assert_eq!(got.hits, scored);
        }

        #[test]
        fn nearest_is_within_half_diagonal(qx in -8.0..26.0f64, qy in -4.0..20.0f64) {
            let fs = synthetic(14, 20, &[]);
            let r = fs.query_neighbors(&NeighborQuery { position: [qx, qy], n: 1 });
            prop_assert!(r.hits[0].1 <= fs.grid_step * 2f64.sqrt() / 2.0 + 1e-12);
        }
    }
}
