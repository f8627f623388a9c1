//! Specular multipath between two points via the image method.
//!
//! Reflecting faces are the vertical walls of every building prism and the
//! horizontal ground plane. Rooftops only block. Face ids are stable for a
//! given scene: the ground is [`GROUND_FACE`], and walls are numbered from 1
//! in building order, then footprint-edge order (edge `i` joins vertices `i`
//! and `i + 1`).
//!
//! Direction convention: `depart_dir` is the propagation direction leaving the
//! transmitter and `arrive_dir` the propagation direction entering the
//! receiver, so a line-of-sight path has `depart_dir == arrive_dir`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, v3, Vec2, Vec3};
use crate::scene::Scene;

pub mod bruteforce;

pub const GROUND_FACE: u32 = 0;
pub const MAX_SUPPORTED_ORDER: usize = 3;

/// Relative parameter margin used when testing a segment against solids, so
/// that reflection points lying on a wall do not occlude themselves.
const SEGMENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub face_id: u32,
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub length_m: f64,
    pub depart_dir: [f64; 3],
    pub arrive_dir: [f64; 3],
    pub interactions: Vec<Interaction>,
}

impl PathRecord {
    pub fn order(&self) -> usize {
        self.interactions.len()
    }

    pub fn face_ids(&self) -> Vec<u32> {
        self.interactions.iter().map(|i| i.face_id).collect()
    }

    /// Vertices of the polyline from `tx` through every reflection to `rx`.
    pub fn vertices(&self, tx: Vec3, rx: Vec3) -> Vec<Vec3> {
        let mut pts = Vec::with_capacity(self.interactions.len() + 2);
        pts.push(tx);
        pts.extend(self.interactions.iter().map(|i| v3(i.point)));
        pts.push(rx);
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub tx: [f64; 3],
    pub rx: [f64; 3],
    pub paths: Vec<PathRecord>,
}

impl PathSet {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn has_los(&self) -> bool {
        self.paths.iter().any(|p| p.order() == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub max_order: usize,
    pub ground_reflections: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            max_order: 2,
            ground_reflections: true,
        }
    }
}

impl TraceOptions {
    pub fn with_order(max_order: usize) -> Self {
        Self {
            max_order,
            ..Self::default()
        }
    }
}

/// An infinite plane `normal . x = offset` with a unit normal pointing to the
/// side from which the face can be hit.
#[derive(Debug, Clone, Copy)]
struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    #[inline]
    fn side(&self, p: Vec3) -> f64 {
        self.normal.dot(&p) - self.offset
    }

    #[inline]
    fn mirror(&self, p: Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.side(p))
    }
}

#[derive(Debug, Clone)]
enum FaceShape {
    Ground,
    Wall { a: Vec2, b: Vec2, z_lo: f64, z_hi: f64 },
}

#[derive(Debug, Clone)]
struct Face {
    id: u32,
    plane: Plane,
    shape: FaceShape,
}

impl Face {
    fn contains(&self, q: Vec3) -> bool {
        match self.shape {
            FaceShape::Ground => true,
            FaceShape::Wall { a, b, z_lo, z_hi } => {
                let ab = b - a;
                let s = (q.xy() - a).dot(&ab) / ab.norm_squared();
                (0.0..=1.0).contains(&s) && q.z >= z_lo && q.z <= z_hi
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    footprint: Vec<[f64; 2]>,
    lo: Vec2,
    hi: Vec2,
    z_lo: f64,
    z_hi: f64,
}

impl Block {
    fn blocks(&self, p: Vec3, q: Vec3) -> bool {
        let d = q - p;
        if p.x.max(q.x) < self.lo.x
            || p.x.min(q.x) > self.hi.x
            || p.y.max(q.y) < self.lo.y
            || p.y.min(q.y) > self.hi.y
            || p.z.min(q.z) >= self.z_hi
        {
            return false;
        }
        let (mut t0, mut t1) = (SEGMENT_EPS, 1.0 - SEGMENT_EPS);
        if d.z == 0.0 {
            if !(p.z > self.z_lo && p.z < self.z_hi) {
                return false;
            }
        } else {
            let ta = (self.z_lo - p.z) / d.z;
            let tb = (self.z_hi - p.z) / d.z;
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
            if t0 >= t1 {
                return false;
            }
        }
        let a = (p + d * t0).xy();
        let b = (p + d * t1).xy();
        if geom::polygon_contains(&self.footprint, a) {
            return true;
        }
        let n = self.footprint.len();
        (0..n).any(|i| {
            geom::segments_intersect(
                a,
                b,
                geom::v2(self.footprint[i]),
                geom::v2(self.footprint[(i + 1) % n]),
            )
        })
    }
}

/// Precomputed reflecting faces and blocking solids for one scene.
///
/// Build once and reuse for many traces; `Tracer` is immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct Tracer {
    faces: Vec<Face>,
    blocks: Vec<Block>,
    ground_height: f64,
}

impl Tracer {
    pub fn new(scene: &Scene) -> Self {
        let g = scene.ground_height;
        let mut faces = vec![Face {
            id: GROUND_FACE,
            plane: Plane {
                normal: Vec3::z(),
                offset: g,
            },
            shape: FaceShape::Ground,
        }];
        let mut blocks = Vec::with_capacity(scene.buildings.len());
        let mut next_id = GROUND_FACE + 1;
        for b in &scene.buildings {
            let n = b.footprint.len();
            let z_hi = g + b.height;
            for i in 0..n {
                let a = geom::v2(b.footprint[i]);
                let c = geom::v2(b.footprint[(i + 1) % n]);
                let e = (c - a).normalize();
                // counter-clockwise winding puts the exterior on the right
                let normal = Vec3::new(e.y, -e.x, 0.0);
                faces.push(Face {
                    id: next_id,
                    plane: Plane {
                        normal,
                        offset: normal.x * a.x + normal.y * a.y,
                    },
                    shape: FaceShape::Wall {
                        a,
                        b: c,
                        z_lo: g,
                        z_hi,
                    },
                });
                next_id += 1;
            }
            let (lo, hi) = b.footprint.iter().fold(
                (
                    Vec2::repeat(f64::INFINITY),
                    Vec2::repeat(f64::NEG_INFINITY),
                ),
                |(lo, hi), p| (lo.inf(&geom::v2(*p)), hi.sup(&geom::v2(*p))),
            );
            blocks.push(Block {
                footprint: b.footprint.clone(),
                lo,
                hi,
                z_lo: g,
                z_hi,
            });
        }
        Self {
            faces,
            blocks,
            ground_height: g,
        }
    }

    /// Unit normal of a face, pointing to its reflecting side.
    pub fn face_normal(&self, face_id: u32) -> Option<Vec3> {
        self.faces.get(face_id as usize).map(|f| f.plane.normal)
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    fn inside_solid(&self, p: Vec3) -> bool {
        self.blocks
            .iter()
            .any(|b| p.z > b.z_lo && p.z < b.z_hi && geom::polygon_contains(&b.footprint, p.xy()))
    }

    /// True if the open segment `p -> q` passes through any building.
    pub fn segment_blocked(&self, p: Vec3, q: Vec3) -> bool {
        self.blocks.iter().any(|b| b.blocks(p, q))
    }

    pub fn trace(&self, tx: Vec3, rx: Vec3, opts: &TraceOptions) -> Result<PathSet> {
        if opts.max_order > MAX_SUPPORTED_ORDER {
            return Err(Error::OrderTooHigh(opts.max_order));
        }
        for (name, p) in [("tx", tx), ("rx", rx)] {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidEndpoint(format!("{name} is not finite")));
            }
            if p.z <= self.ground_height {
                return Err(Error::InvalidEndpoint(format!("{name} is not above ground")));
            }
            if self.inside_solid(p) {
                return Err(Error::InvalidEndpoint(format!("{name} lies inside a building")));
            }
        }
        if tx == rx {
            return Err(Error::InvalidEndpoint("tx and rx coincide".into()));
        }

        let mut paths = Vec::new();
        let mut seq = Vec::with_capacity(opts.max_order);
        let mut images = Vec::with_capacity(opts.max_order);
        self.search(tx, rx, opts, &mut seq, &mut images, &mut paths);
        paths.sort_by(|a: &PathRecord, b: &PathRecord| {
            a.length_m
                .total_cmp(&b.length_m)
                .then_with(|| a.face_ids().cmp(&b.face_ids()))
        });
        Ok(PathSet {
            tx: tx.into(),
            rx: rx.into(),
            paths,
        })
    }

    fn search(
        &self,
        tx: Vec3,
        rx: Vec3,
        opts: &TraceOptions,
        seq: &mut Vec<usize>,
        images: &mut Vec<Vec3>,
        out: &mut Vec<PathRecord>,
    ) {
        if let Some(p) = self.resolve(tx, rx, seq, images) {
            out.push(p);
        }
        if seq.len() == opts.max_order {
            return;
        }
        let source = images.last().copied().unwrap_or(tx);
        for (fi, face) in self.faces.iter().enumerate() {
            if seq.last() == Some(&fi) {
                continue;
            }
            if matches!(face.shape, FaceShape::Ground) && !opts.ground_reflections {
                continue;
            }
            if seq.is_empty() && face.plane.side(tx) <= 0.0 {
                continue;
            }
            seq.push(fi);
            images.push(face.plane.mirror(source));
            self.search(tx, rx, opts, seq, images, out);
            seq.pop();
            images.pop();
        }
    }

    /// Backtracks reflection points for one face sequence and validates them.
    fn resolve(&self, tx: Vec3, rx: Vec3, seq: &[usize], images: &[Vec3]) -> Option<PathRecord> {
        let r = seq.len();
        let mut points = vec![Vec3::zeros(); r];
        let mut target = rx;
        for k in (0..r).rev() {
            let face = &self.faces[seq[k]];
            let s_img = face.plane.side(images[k]);
            let s_tgt = face.plane.side(target);
            if !(s_img < 0.0 && s_tgt > 0.0) {
                return None;
            }
            let t = s_img / (s_img - s_tgt);
            let q = images[k] + (target - images[k]) * t;
            if !face.contains(q) {
                return None;
            }
            points[k] = q;
            target = q;
        }

        let mut prev = tx;
        for (k, &q) in points.iter().enumerate() {
            if self.faces[seq[k]].plane.side(prev) <= 0.0 {
                return None;
            }
            prev = q;
        }

        let mut verts = Vec::with_capacity(r + 2);
        verts.push(tx);
        verts.extend_from_slice(&points);
        verts.push(rx);
        let mut length = 0.0;
        for w in verts.windows(2) {
            let seg = (w[1] - w[0]).norm();
            if seg <= 0.0 || self.segment_blocked(w[0], w[1]) {
                return None;
            }
            length += seg;
        }
        let depart = (verts[1] - verts[0]).normalize();
        let arrive = (verts[r + 1] - verts[r]).normalize();
        Some(PathRecord {
            length_m: length,
            depart_dir: depart.into(),
            arrive_dir: arrive.into(),
            interactions: seq
                .iter()
                .zip(&points)
                .map(|(&fi, q)| Interaction {
                    face_id: self.faces[fi].id,
                    point: (*q).into(),
                })
                .collect(),
        })
    }
}

/// Traces every specular path up to `max_order` reflections, with ground
/// reflections enabled.
pub fn trace_paths(scene: &Scene, tx: Vec3, rx: Vec3, max_order: usize) -> Result<PathSet> {
    Tracer::new(scene).trace(tx, rx, &TraceOptions::with_order(max_order))
}

/// Angle-of-incidence minus angle-of-reflection at every interaction, in
/// radians, together with the out-of-plane residual of the reflected ray.
pub fn specular_residuals(tracer: &Tracer, set: &PathSet, path: &PathRecord) -> Vec<f64> {
    let pts = path.vertices(v3(set.tx), v3(set.rx));
    path.interactions
        .iter()
        .enumerate()
        .map(|(k, it)| {
            let n = tracer.face_normal(it.face_id).expect("face id from this scene");
            let incoming = (pts[k + 1] - pts[k]).normalize();
            let outgoing = (pts[k + 2] - pts[k + 1]).normalize();
            let theta_i = (-incoming.dot(&n)).clamp(-1.0, 1.0).acos();
            let theta_r = outgoing.dot(&n).clamp(-1.0, 1.0).acos();
            let mirrored = incoming - n * (2.0 * incoming.dot(&n));
            (theta_i - theta_r).abs().max((mirrored - outgoing).norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, BuildingPrism, Scene};
    use proptest::prelude::*;

    fn empty_scene() -> Scene {
        generate_scene(1, 0, 400.0, 10.0).unwrap()
    }

    fn wall_scene() -> Scene {
        let mut s = empty_scene();
        // one huge box whose north face is the plane y = 0
        s.buildings
            .push(BuildingPrism::rect(0, [-1.0e4, -1.0e3], [1.0e4, 0.0], 1.0e3));
        s.bs_position = [0.0, 50.0, 10.0];
        s
    }

    #[test]
    fn empty_scene_los_and_ground_bounce() {
        let s = empty_scene();
        let tx = Vec3::new(0.0, 0.0, 10.0);
        let rx = Vec3::new(100.0, 0.0, 1.5);
        let only_los = trace_paths(&s, tx, rx, 0).unwrap();
        assert_eq!(only_los.paths.len(), 1);
        assert!((only_los.paths[0].length_m - (100f64.powi(2) + 8.5f64.powi(2)).sqrt()).abs() < 1e-9);
        assert!((only_los.paths[0].length_m - 100.36060).abs() < 1e-5);
        let with_ground = trace_paths(&s, tx, rx, 1).unwrap();
        assert_eq!(with_ground.paths.len(), 2);
        let g = &with_ground.paths[1];
        assert_eq!(g.face_ids(), vec![GROUND_FACE]);
        assert!((g.length_m - (100f64.powi(2) + 11.5f64.powi(2)).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn single_wall_image_path() {
        let s = wall_scene();
        let tx = Vec3::new(0.0, 5.0, 1.5);
        let rx = Vec3::new(10.0, 5.0, 1.5);
        let opts = TraceOptions {
            max_order: 1,
            ground_reflections: false,
        };
        let set = Tracer::new(&s).trace(tx, rx, &opts).unwrap();
        assert_eq!(set.paths.len(), 2);
        assert!((set.paths[0].length_m - 10.0).abs() < 1e-12);
        assert!((set.paths[1].length_m - 200f64.sqrt()).abs() < 1e-12);
        let q = set.paths[1].interactions[0].point;
        assert!((q[0] - 5.0).abs() < 1e-12 && q[1].abs() < 1e-12);
    }

    #[test]
    fn blocked_los_gives_empty_set() {
        let mut s = empty_scene();
        s.buildings
            .push(BuildingPrism::rect(0, [40.0, -10.0], [60.0, 10.0], 30.0));
        let set = trace_paths(&s, Vec3::new(0.0, 0.0, 10.0), Vec3::new(100.0, 0.0, 1.5), 0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn rejects_bad_requests() {
        let s = empty_scene();
        let tx = Vec3::new(0.0, 0.0, 10.0);
        assert!(matches!(trace_paths(&s, tx, tx, 1), Err(Error::InvalidEndpoint(_))));
        assert!(matches!(
            trace_paths(&s, tx, Vec3::new(5.0, 0.0, 1.0), 4),
            Err(Error::OrderTooHigh(4))
        ));
        let s = wall_scene();
        assert!(matches!(
            trace_paths(&s, Vec3::new(0.0, -5.0, 1.0), tx, 1),
            Err(Error::InvalidEndpoint(_))
        ));
    }

    #[test]
    fn path_fields_are_consistent() {
        let s = generate_scene(12, 8, 120.0, 10.0).unwrap();
        let tr = Tracer::new(&s);
        let tx = s.bs();
        let rx = Vec3::new(37.0, -41.0, 1.5);
        if s.point_in_building(rx) {
            return;
        }
        let set = tr.trace(tx, rx, &TraceOptions::with_order(2)).unwrap();
        for w in set.paths.windows(2) {
            assert!(w[0].length_m <= w[1].length_m);
        }
        let mut seen = std::collections::HashSet::new();
        for p in &set.paths {
            assert!(seen.insert(p.face_ids()));
            assert!((v3(p.depart_dir).norm() - 1.0).abs() < 1e-12);
            assert!((v3(p.arrive_dir).norm() - 1.0).abs() < 1e-12);
            if p.order() == 0 {
                assert!((v3(p.depart_dir) - v3(p.arrive_dir)).norm() < 1e-12);
            }
            // image identity: length equals distance from rx to the mirrored tx
            let mut img = tx;
            for it in &p.interactions {
                let n = tr.face_normal(it.face_id).unwrap();
                img -= n * (2.0 * (img - v3(it.point)).dot(&n));
            }
            assert!(((rx - img).norm() - p.length_m).abs() < 1e-9);
            for r in specular_residuals(&tr, &set, p) {
                assert!(r < 1e-9, "specular residual {r}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn geometric_reciprocity(seed in 0u64..500, ax in -55.0..55.0f64, ay in -55.0..55.0f64,
                                 bx in -55.0..55.0f64, by in -55.0..55.0f64) {
            let s = generate_scene(seed, 6, 120.0, 10.0).unwrap();
            let a = Vec3::new(ax, ay, 1.7);
            let b = Vec3::new(bx, by, 6.0);
            prop_assume!(!s.point_in_building(a) && !s.point_in_building(b));
            let tr = Tracer::new(&s);
            let fwd = tr.trace(a, b, &TraceOptions::with_order(2)).unwrap();
            let rev = tr.trace(b, a, &TraceOptions::with_order(2)).unwrap();
            prop_assert_eq!(fwd.paths.len(), rev.paths.len());
            for p in &fwd.paths {
                let mut ids = p.face_ids();
                ids.reverse();
                let q = rev.paths.iter().find(|q| q.face_ids() == ids).expect("reverse path");
                prop_assert!((p.length_m - q.length_m).abs() < 1e-9);
                prop_assert!((v3(p.depart_dir) + v3(q.arrive_dir)).norm() < 1e-9);
                prop_assert!((v3(p.arrive_dir) + v3(q.depart_dir)).norm() < 1e-9);
            }
        }
    }
}
