//! 2.5D propagation environments: vertical building prisms over a flat
//! ground, plus the base-station position and the service area.
//!
//! Coordinates are meters in a right-handed frame with `z` up. Building
//! footprints are simple counter-clockwise polygons; a prism spans
//! `ground_height .. ground_height + height`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{self, v2, Vec2, Vec3};

/// Version written to and required from scene files.
pub const SCENE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingPrism {
    pub id: u32,
    pub footprint: Vec<[f64; 2]>,
    pub height: f64,
}

impl BuildingPrism {
    /// Axis-aligned box footprint, counter-clockwise.
    pub fn rect(id: u32, min: [f64; 2], max: [f64; 2], height: f64) -> Self {
        Self {
            id,
            footprint: vec![
                [min[0], min[1]],
                [max[0], min[1]],
                [max[0], max[1]],
                [min[0], max[1]],
            ],
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidBuilding {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.footprint.len() < 3 {
            return Err(bad("footprint needs at least 3 vertices"));
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err(bad("height must be positive"));
        }
        let n = self.footprint.len();
        for i in 0..n {
            let (a, b) = (self.footprint[i], self.footprint[(i + 1) % n]);
            if !a.iter().all(|c| c.is_finite()) {
                return Err(bad("non-finite vertex"));
            }
            if a == b {
                return Err(bad("consecutive vertices coincide"));
            }
        }
        if geom::signed_area(&self.footprint) <= 0.0 {
            return Err(bad("footprint must wind counter-clockwise"));
        }
        if geom::self_intersects(&self.footprint) {
            return Err(bad("footprint self-intersects"));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vec2 {
        let sum = self
            .footprint
            .iter()
            .fold(Vec2::zeros(), |acc, &p| acc + v2(p));
        sum / self.footprint.len() as f64
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            id: self.id,
            footprint: self.footprint.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            height: self.height,
        }
    }

    pub fn contains_xy(&self, p: Vec2) -> bool {
        geom::polygon_contains(&self.footprint, p)
    }
}

/// Axis-aligned square service area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub center: [f64; 2],
    pub side: f64,
}

impl Area {
    pub fn min(&self) -> [f64; 2] {
        [self.center[0] - 0.5 * self.side, self.center[1] - 0.5 * self.side]
    }

    pub fn max(&self) -> [f64; 2] {
        [self.center[0] + 0.5 * self.side, self.center[1] + 0.5 * self.side]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (lo, hi) = (self.min(), self.max());
        p.x >= lo[0] && p.x <= hi[0] && p.y >= lo[1] && p.y <= hi[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ground_height: f64,
    pub bs_position: [f64; 3],
    pub area: Area,
    pub buildings: Vec<BuildingPrism>,
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    format_version: u32,
    #[serde(flatten)]
    scene: Scene,
}

impl Scene {
    pub fn bs(&self) -> Vec3 {
        geom::v3(self.bs_position)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area.side > 0.0) {
            return Err(Error::InvalidScene("area side must be positive".into()));
        }
        let bs = self.bs();
        if !self.area.contains(bs.xy()) {
            return Err(Error::InvalidScene("base station lies outside the area".into()));
        }
        if !(bs.z > self.ground_height) {
            return Err(Error::InvalidScene(
                "base station must be strictly above ground".into(),
            ));
        }
        for b in &self.buildings {
            b.validate()?;
        }
        if let Some(b) = self.buildings.iter().find(|b| self.inside_prism(b, bs)) {
            return Err(Error::InvalidScene(format!(
                "building {} contains the base station",
                b.id
            )));
        }
        Ok(())
    }

    fn inside_prism(&self, b: &BuildingPrism, p: Vec3) -> bool {
        p.z > self.ground_height && p.z < self.ground_height + b.height && b.contains_xy(p.xy())
    }

    /// True iff `p` lies strictly inside any building prism.
    pub fn point_in_building(&self, p: Vec3) -> bool {
        self.buildings.iter().any(|b| self.inside_prism(b, p))
    }

    pub fn to_toml(&self) -> Result<String> {
        let doc = SceneDoc {
            format_version: SCENE_FORMAT_VERSION,
            scene: self.clone(),
        };
        toml::to_string(&doc).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: SceneDoc = toml::from_str(text)?;
        if doc.format_version != SCENE_FORMAT_VERSION {
            return Err(Error::Version {
                kind: "scene",
                found: doc.format_version,
                expected: SCENE_FORMAT_VERSION,
            });
        }
        doc.scene.validate()?;
        Ok(doc.scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 over the canonical text encoding.
    pub fn digest(&self) -> [u8; 32] {
        let text = self.to_toml().expect("scene always serializes");
        Sha256::digest(text.as_bytes()).into()
    }
}

/// Knobs for procedural scene generation. The defaults are configuration,
/// not calibrated to any particular city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGenConfig {
    /// Building height range in meters.
    pub height_range: (f64, f64),
    /// Footprint edge lengths as a fraction of the area side.
    pub size_fraction: (f64, f64),
    /// Minimum gap between footprints.
    pub gap: f64,
    /// Minimum horizontal distance from the base station to any footprint.
    pub bs_clearance: f64,
    pub attempts_per_building: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            height_range: (10.0, 60.0),
            size_fraction: (0.05, 0.15),
            gap: 2.0,
            bs_clearance: 5.0,
            attempts_per_building: 500,
        }
    }
}

/// Procedural scene with `n_buildings` randomly rotated rectangular prisms and
/// the base station at the area center, `bs_height` above ground.
pub fn generate_scene(seed: u64, n_buildings: usize, area_side: f64, bs_height: f64) -> Result<Scene> {
    generate_scene_with(seed, n_buildings, area_side, bs_height, &SceneGenConfig::default())
}

pub fn generate_scene_with(
    seed: u64,
    n_buildings: usize,
    area_side: f64,
    bs_height: f64,
    cfg: &SceneGenConfig,
) -> Result<Scene> {
    if !(area_side > 0.0) {
        return Err(Error::InvalidScene("area side must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = Area {
        center: [0.0, 0.0],
        side: area_side,
    };
    let bs = Vec2::new(0.0, 0.0);
    let half = 0.5 * area_side;
    let mut buildings: Vec<BuildingPrism> = Vec::with_capacity(n_buildings);

    for id in 0..n_buildings {
        let mut placed = false;
        for _ in 0..cfg.attempts_per_building {
            let w = area_side * rng.random_range(cfg.size_fraction.0..=cfg.size_fraction.1);
            let d = area_side * rng.random_range(cfg.size_fraction.0..=cfg.size_fraction.1);
            let angle = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let cx = rng.random_range(-half..half);
            let cy = rng.random_range(-half..half);
            let height = rng.random_range(cfg.height_range.0..=cfg.height_range.1);
            let (s, c) = angle.sin_cos();
            let footprint: Vec<[f64; 2]> = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
                .iter()
                .map(|&(u, v)| {
                    let (x, y) = (u * w, v * d);
                    [cx + c * x - s * y, cy + s * x + c * y]
                })
                .collect();
            if footprint.iter().any(|p| !area.contains(v2(*p))) {
                continue;
            }
            if geom::point_polygon_distance(&footprint, bs) < cfg.bs_clearance {
                continue;
            }
            if buildings
                .iter()
                .any(|b| geom::convex_overlap(&b.footprint, &footprint, cfg.gap))
            {
                continue;
            }
            buildings.push(BuildingPrism {
                id: id as u32,
                footprint,
                height,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Overcrowded {
                requested: n_buildings,
                placed: buildings.len(),
            });
        }
    }

    let scene = Scene {
        ground_height: 0.0,
        bs_position: [bs.x, bs.y, bs_height],
        area,
        buildings,
    };
    scene.validate()?;
    Ok(scene)
}

/// Geometric disturbance applied to a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScenePerturbation {
    /// Translate each footprint by an independent offset with both components
    /// uniform in `[-shift_scale, shift_scale]`.
    BuildingShift { shift_scale: f64 },
    /// Append small box prisms (vehicles) to the building list.
    AddVehicles { vehicles: Vec<BuildingPrism> },
}

pub fn perturb_scene(scene: &Scene, p: &ScenePerturbation, seed: u64) -> Result<Scene> {
    let mut out = scene.clone();
    match p {
        ScenePerturbation::BuildingShift { shift_scale } => {
            if !(*shift_scale >= 0.0) {
                return Err(Error::InvalidScene("shift_scale must be non-negative".into()));
            }
            if *shift_scale > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = *shift_scale;
                for b in out.buildings.iter_mut() {
                    let dx = rng.random_range(-s..=s);
                    let dy = rng.random_range(-s..=s);
                    *b = b.translated(dx, dy);
                }
            }
        }
        ScenePerturbation::AddVehicles { vehicles } => {
            out.buildings.extend(vehicles.iter().cloned());
        }
    }
    let bs = out.bs();
    if let Some(b) = out.buildings.iter().find(|b| out.inside_prism(b, bs)) {
        return Err(Error::BuildingOnBaseStation(b.id));
    }
    out.validate()?;
    Ok(out)
}

/// Place `count` car-sized boxes (4.5 m x 1.8 m x 1.5 m) in free space inside
/// the area, away from buildings and the base station.
pub fn random_vehicles(scene: &Scene, count: usize, seed: u64) -> Result<Vec<BuildingPrism>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (scene.area.min(), scene.area.max());
    let first_id = scene.buildings.iter().map(|b| b.id + 1).max().unwrap_or(0);
    let mut out: Vec<BuildingPrism> = Vec::with_capacity(count);
    for k in 0..count {
        let mut placed = false;
        for _ in 0..1000 {
            let cx = rng.random_range(lo[0] + 3.0..hi[0] - 3.0);
            let cy = rng.random_range(lo[1] + 3.0..hi[1] - 3.0);
            let (hx, hy) = if rng.random_bool(0.5) { (2.25, 0.9) } else { (0.9, 2.25) };
            let v = BuildingPrism::rect(
                first_id + k as u32,
                [cx - hx, cy - hy],
                [cx + hx, cy + hy],
                1.5,
            );
            if geom::point_polygon_distance(&v.footprint, scene.bs().xy()) < 3.0 {
                continue;
            }
            if scene
                .buildings
                .iter()
                .chain(out.iter())
                .any(|b| geom::convex_overlap(&b.footprint, &v.footprint, 1.0))
            {
                continue;
            }
            out.push(v);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Overcrowded {
                requested: count,
                placed: out.len(),
            });
        }
    }
    Ok(out)
}
