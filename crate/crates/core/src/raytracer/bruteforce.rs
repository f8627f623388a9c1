//! Shooting-and-bouncing reference tracer.
//!
//! Launches a dense angular grid of rays from the transmitter, follows their
//! specular bounces, and keeps every ray that passes within a capture radius
//! of the receiver. Each captured face sequence is then refined by a damped
//! Gauss-Newton search on the launch angles until the ray hits the receiver
//! exactly, and the refined ray is re-shot to confirm it still follows the
//! same faces unobstructed.
//!
//! This is slow and only meant as an independent check on [`super::Tracer`].
//! It shares no geometry code with the image-method tracer beyond the scene
//! description and the face numbering convention.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};
use crate::raytracer::{Interaction, PathRecord, PathSet, TraceOptions, MAX_SUPPORTED_ORDER};
use crate::scene::Scene;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Surface {
    Ground { z: f64 },
    Wall { id: u32, a: Vec2, b: Vec2, normal: Vec2, top: f64, bottom: f64 },
    Roof { poly: Vec<Vec2>, z: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    surface: usize,
}

struct Shooter {
    surfaces: Vec<Surface>,
    ground_reflections: bool,
}

fn inside(poly: &[Vec2], p: Vec2) -> bool {
    let mut c = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            c = !c;
        }
        j = i;
    }
    c
}

impl Shooter {
    fn new(scene: &Scene, ground_reflections: bool) -> Self {
        let g = scene.ground_height;
        let mut surfaces = vec![Surface::Ground { z: g }];
        let mut id = 1u32;
        for b in &scene.buildings {
            let poly: Vec<Vec2> = b.footprint.iter().map(|p| Vec2::new(p[0], p[1])).collect();
            let n = poly.len();
            for i in 0..n {
                let (a, c) = (poly[i], poly[(i + 1) % n]);
                let e = c - a;
                let normal = Vec2::new(e.y, -e.x) / e.norm();
                surfaces.push(Surface::Wall {
                    id,
                    a,
                    b: c,
                    normal,
                    top: g + b.height,
                    bottom: g,
                });
                id += 1;
            }
            surfaces.push(Surface::Roof {
                poly,
                z: g + b.height,
            });
        }
        Self {
            surfaces,
            ground_reflections,
        }
    }

    fn intersect(&self, idx: usize, o: Vec3, d: Vec3) -> Option<f64> {
        match &self.surfaces[idx] {
            Surface::Ground { z } => {
                if d.z >= 0.0 {
                    return None;
                }
                let t = (z - o.z) / d.z;
                (t > HIT_EPS).then_some(t)
            }
            Surface::Wall { a, b, normal, top, bottom, .. } => {
                let denom = normal.x * d.x + normal.y * d.y;
                if denom >= 0.0 {
                    return None;
                }
                let t = (normal.dot(a) - (normal.x * o.x + normal.y * o.y)) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let p = o + d * t;
                let ab = b - a;
                let s = (p.xy() - a).dot(&ab) / ab.norm_squared();
                ((0.0..=1.0).contains(&s) && p.z >= *bottom && p.z <= *top).then_some(t)
            }
            Surface::Roof { poly, z } => {
                if d.z >= 0.0 || o.z <= *z {
                    return None;
                }
                let t = (z - o.z) / d.z;
                (t > HIT_EPS && inside(poly, (o + d * t).xy())).then_some(t)
            }
        }
    }

    fn first_hit(&self, o: Vec3, d: Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for i in 0..self.surfaces.len() {
            if let Some(t) = self.intersect(i, o, d) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, surface: i });
                }
            }
        }
        best
    }

    fn reflect(&self, idx: usize, d: Vec3) -> Option<(u32, Vec3)> {
        let (id, n) = match &self.surfaces[idx] {
            Surface::Ground { .. } if self.ground_reflections => (super::GROUND_FACE, Vec3::z()),
            Surface::Wall { id, normal, .. } => (*id, Vec3::new(normal.x, normal.y, 0.0)),
            _ => return None,
        };
        Some((id, d - n * (2.0 * d.dot(&n))))
    }

    /// Follows a ray for up to `max_order` bounces, reporting the closest
    /// approach to `rx` on every segment as `(faces so far, miss, along)`.
    fn shoot(&self, o: Vec3, d: Vec3, rx: Vec3, max_order: usize) -> Vec<(Vec<u32>, f64, Vec<Vec3>)> {
        let mut out = Vec::new();
        let mut faces = Vec::new();
        let mut points = Vec::new();
        let (mut o, mut d) = (o, d);
        loop {
            let hit = self.first_hit(o, d);
            let t_end = hit.map_or(f64::INFINITY, |h| h.t);
            let along = (rx - o).dot(&d);
            if along > 0.0 && along < t_end {
                let miss = (rx - (o + d * along)).norm();
                out.push((faces.clone(), miss, points.clone()));
            }
            let Some(h) = hit else { break };
            if faces.len() == max_order {
                break;
            }
            let Some((id, nd)) = self.reflect(h.surface, d) else { break };
            o += d * h.t;
            faces.push(id);
            points.push(o);
            d = nd;
        }
        out
    }

    fn wall_plane(&self, id: u32) -> (Vec3, f64) {
        if id == super::GROUND_FACE {
            let Surface::Ground { z } = self.surfaces[0] else { unreachable!() };
            return (Vec3::z(), z);
        }
        for s in &self.surfaces {
            if let Surface::Wall { id: wid, a, normal, .. } = s {
                if *wid == id {
                    return (Vec3::new(normal.x, normal.y, 0.0), normal.dot(a));
                }
            }
        }
        unreachable!("unknown face id {id}")
    }

    /// Propagates through the infinite planes of `faces` regardless of face
    /// bounds and returns the miss vector at `rx` (zero when exact).
    fn forced_miss(&self, faces: &[u32], o: Vec3, d: Vec3, rx: Vec3) -> Option<Vec3> {
        let (mut o, mut d) = (o, d);
        for &f in faces {
            let (n, c) = self.wall_plane(f);
            let denom = n.dot(&d);
            if denom >= 0.0 {
                return None;
            }
            let t = (c - n.dot(&o)) / denom;
            if t <= 0.0 {
                return None;
            }
            o += d * t;
            d -= n * (2.0 * d.dot(&n));
        }
        let r = rx - o;
        let along = r.dot(&d);
        (along > 0.0).then(|| r - d * along)
    }
}

fn dir(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

/// Damped Gauss-Newton on the launch angles, with step halving whenever a
/// full step fails to reduce the miss distance.
fn refine(sh: &Shooter, faces: &[u32], tx: Vec3, rx: Vec3, mut ang: (f64, f64)) -> Option<(f64, f64)> {
    let eval = |a: (f64, f64)| sh.forced_miss(faces, tx, dir(a.0, a.1), rx);
    let mut m = eval(ang)?;
    let h = 1e-7;
    for _ in 0..100 {
        if m.norm() < 1e-11 {
            return Some(ang);
        }
        let j0 = (eval((ang.0 + h, ang.1))? - eval((ang.0 - h, ang.1))?) / (2.0 * h);
        let j1 = (eval((ang.0, ang.1 + h))? - eval((ang.0, ang.1 - h))?) / (2.0 * h);
        let (a, b, c) = (j0.dot(&j0), j0.dot(&j1), j1.dot(&j1));
        let (g0, g1) = (j0.dot(&m), j1.dot(&m));
        let det = a * c - b * b;
        if det.abs() < 1e-300 {
            return None;
        }
        let step = ((c * g0 - b * g1) / det, (a * g1 - b * g0) / det);
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = (ang.0 - lambda * step.0, ang.1 - lambda * step.1);
            if let Some(mc) = eval(cand) {
                if mc.norm() < m.norm() {
                    ang = cand;
                    m = mc;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (m.norm() < 1e-9).then_some(ang)
}

/// Reference shooter. `angular_grid` is the number of azimuth samples; the
/// polar grid uses half as many.
pub fn trace_paths_bruteforce(
    scene: &Scene,
    tx: Vec3,
    rx: Vec3,
    opts: &TraceOptions,
    angular_grid: usize,
) -> Result<PathSet> {
    if opts.max_order > MAX_SUPPORTED_ORDER {
        return Err(Error::OrderTooHigh(opts.max_order));
    }
    if tx == rx {
        return Err(Error::InvalidEndpoint("tx and rx coincide".into()));
    }
    for p in [tx, rx] {
        if p.z <= scene.ground_height || scene.point_in_building(p) {
            return Err(Error::InvalidEndpoint(format!("{p:?} is not in free space")));
        }
    }
    let sh = Shooter::new(scene, opts.ground_reflections);
    let n_az = angular_grid.max(8);
    let n_pol = (n_az / 2).max(4);
    let step = std::f64::consts::TAU / n_az as f64;
    let reach = (rx - tx).norm().max(scene.area.side) * (opts.max_order as f64 + 2.0);
    let capture = 3.0 * step * reach;

    let mut candidates: BTreeMap<Vec<u32>, (f64, (f64, f64))> = BTreeMap::new();
    for i in 0..n_pol {
        let theta = (i as f64 + 0.5) * std::f64::consts::PI / n_pol as f64;
        for j in 0..n_az {
            let phi = j as f64 * step;
            for (faces, miss, _) in sh.shoot(tx, dir(theta, phi), rx, opts.max_order) {
                if miss < capture {
                    let e = candidates.entry(faces).or_insert((f64::INFINITY, (theta, phi)));
                    if miss < e.0 {
                        *e = (miss, (theta, phi));
                    }
                }
            }
        }
    }

    let mut paths = Vec::new();
    for (faces, (_, start)) in candidates {
        let Some(ang) = refine(&sh, &faces, tx, rx, start) else { continue };
        let d = dir(ang.0, ang.1);
        let confirmed = sh
            .shoot(tx, d, rx, opts.max_order)
            .into_iter()
            .find(|(f, miss, _)| *f == faces && *miss < 1e-6);
        let Some((_, _, points)) = confirmed else { continue };
        let mut verts = vec![tx];
        verts.extend_from_slice(&points);
        verts.push(rx);
        let length: f64 = verts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        let arrive = (rx - verts[verts.len() - 2]).normalize();
        paths.push(PathRecord {
            length_m: length,
            depart_dir: d.into(),
            arrive_dir: arrive.into(),
            interactions: faces
                .iter()
                .zip(&points)
                .map(|(&face_id, p)| Interaction {
                    face_id,
                    point: (*p).into(),
                })
                .collect(),
        });
    }
    paths.sort_by(|a, b| a.length_m.total_cmp(&b.length_m));
    Ok(PathSet {
        tx: tx.into(),
        rx: rx.into(),
        paths,
    })
}
