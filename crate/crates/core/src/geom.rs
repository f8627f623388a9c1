//! Small planar/spatial helpers shared by the scene and the tracer.

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

#[inline]
pub fn v2(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

#[inline]
pub fn v3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

#[inline]
pub fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Shoelace signed area; positive for counter-clockwise winding.
pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

/// Winding-number containment. Points exactly on the boundary may land on
/// either side.
pub fn polygon_contains(poly: &[[f64; 2]], p: Vec2) -> bool {
    let n = poly.len();
    let mut winding = 0i32;
    for i in 0..n {
        let a = v2(poly[i]);
        let b = v2(poly[(i + 1) % n]);
        let side = cross2(b - a, p - a);
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Proper or touching intersection of closed segments `ab` and `cd`.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = cross2(d - c, a - c);
    let d2 = cross2(d - c, b - c);
    let d3 = cross2(b - a, c - a);
    let d4 = cross2(b - a, d - a);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm()
}

/// Distance from `p` to a polygon region (zero inside).
pub fn point_polygon_distance(poly: &[[f64; 2]], p: Vec2) -> f64 {
    if polygon_contains(poly, p) {
        return 0.0;
    }
    (0..poly.len())
        .map(|i| point_segment_distance(p, v2(poly[i]), v2(poly[(i + 1) % poly.len()])))
        .fold(f64::INFINITY, f64::min)
}

/// Separating-axis overlap test for two convex polygons, each grown by
/// `margin` along every axis.
pub fn convex_overlap(a: &[[f64; 2]], b: &[[f64; 2]], margin: f64) -> bool {
    for poly in [a, b] {
        let n = poly.len();
        for i in 0..n {
            let e = v2(poly[(i + 1) % n]) - v2(poly[i]);
            let axis = Vec2::new(-e.y, e.x).normalize();
            let proj = |q: &[[f64; 2]]| {
                q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    let s = axis.dot(&v2(v));
                    (lo.min(s), hi.max(s))
                })
            };
            let (a_lo, a_hi) = proj(a);
            let (b_lo, b_hi) = proj(b);
            if a_hi + margin < b_lo || b_hi + margin < a_lo {
                return false;
            }
        }
    }
    true
}

/// True if any two non-adjacent edges of the closed polygon touch.
pub fn self_intersects(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(
                v2(poly[i]),
                v2(poly[(i + 1) % n]),
                v2(poly[j]),
                v2(poly[(j + 1) % n]),
            ) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];

    #[test]
    fn area_sign_follows_winding() {
        assert_eq!(signed_area(&SQUARE), 4.0);
        let mut cw = SQUARE.to_vec();
        cw.reverse();
        assert_eq!(signed_area(&cw), -4.0);
    }

    #[test]
    fn bowtie_self_intersects() {
        let bowtie = [[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]];
        assert!(self_intersects(&bowtie));
        assert!(!self_intersects(&SQUARE));
    }

    #[test]
    fn overlap_respects_margin() {
        let other = [[3.0, 0.0], [5.0, 0.0], [5.0, 2.0], [3.0, 2.0]];
        assert!(!convex_overlap(&SQUARE, &other, 0.5));
        assert!(convex_overlap(&SQUARE, &other, 1.5));
    }

    #[test]
    fn polygon_distance() {
        assert_eq!(point_polygon_distance(&SQUARE, Vec2::new(1.0, 1.0)), 0.0);
        assert!((point_polygon_distance(&SQUARE, Vec2::new(5.0, 1.0)) - 3.0).abs() < 1e-15);
    }
}
