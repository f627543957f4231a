//! Contact generation between boxes, spheres, the floor and the stage wall.
//!
//! Every routine returns points with a unit normal pointing from the second
//! body towards the first and a positive penetration depth.

use crate::geometry::Cuboid;
use crate::math::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPoint {
    pub point: Vec3,
    pub normal: Vec3,
    pub depth: f64,
}

/// Box geometry in world coordinates.
#[derive(Clone, Copy, Debug)]
pub struct BoxGeom {
    pub center: Vec3,
    pub rot: Mat3,
    pub half: Vec3,
}

impl From<&Cuboid> for BoxGeom {
    fn from(c: &Cuboid) -> Self {
        BoxGeom { center: c.pose.position, rot: c.rotation(), half: c.half_extents() }
    }
}

impl BoxGeom {
    pub fn axis(&self, i: usize) -> Vec3 {
        self.rot.column(i).into_owned()
    }

    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| {
            let s = Vec3::new(
                if i & 1 != 0 { 1.0 } else { -1.0 },
                if i & 2 != 0 { 1.0 } else { -1.0 },
                if i & 4 != 0 { 1.0 } else { -1.0 },
            );
            self.center + self.rot * self.half.component_mul(&s)
        })
    }

    fn radius_along(&self, l: &Vec3) -> f64 {
        (0..3).map(|i| self.half[i] * self.axis(i).dot(l).abs()).sum()
    }

    /// Closest point of the box to `p`, and whether `p` is inside.
    fn closest_point(&self, p: &Vec3) -> (Vec3, bool) {
        let local = self.rot.transpose() * (p - self.center);
        let clamped = Vec3::from_fn(|i, _| local[i].clamp(-self.half[i], self.half[i]));
        (self.center + self.rot * clamped, clamped == local)
    }
}

/// Box corners below the floor plane `z = 0`.
pub fn box_floor(b: &BoxGeom, out: &mut Vec<ContactPoint>) {
    for c in b.corners() {
        if c.z < 0.0 {
            out.push(ContactPoint { point: c, normal: Vec3::z(), depth: -c.z });
        }
    }
}

/// Box corners outside the vertical stage cylinder of radius `r`.
pub fn box_wall(b: &BoxGeom, r: f64, out: &mut Vec<ContactPoint>) {
    for c in b.corners() {
        let rho = (c.x * c.x + c.y * c.y).sqrt();
        if rho > r {
            out.push(ContactPoint {
                point: c,
                normal: Vec3::new(-c.x / rho, -c.y / rho, 0.0),
                depth: rho - r,
            });
        }
    }
}

/// Sphere against box; the normal points from the box towards the sphere.
pub fn sphere_box(center: &Vec3, radius: f64, b: &BoxGeom) -> Option<ContactPoint> {
    let (closest, inside) = b.closest_point(center);
    if !inside {
        let d = center - closest;
        let dist = d.norm();
        if dist >= radius || dist == 0.0 {
            return None;
        }
        return Some(ContactPoint { point: closest, normal: d / dist, depth: radius - dist });
    }
    // Center inside: push out through the nearest face.
    let local = b.rot.transpose() * (center - b.center);
    let mut best = (f64::INFINITY, 0, 1.0);
    for i in 0..3 {
        for s in [1.0, -1.0] {
            let gap = b.half[i] - s * local[i];
            if gap < best.0 {
                best = (gap, i, s);
            }
        }
    }
    let (gap, i, s) = best;
    let n = b.axis(i) * s;
    Some(ContactPoint { point: center + n * gap, normal: n, depth: radius + gap })
}

/// Sphere against the floor plane; the normal is `+z`.
pub fn sphere_floor(center: &Vec3, radius: f64) -> Option<ContactPoint> {
    (center.z < radius).then(|| ContactPoint {
        point: Vec3::new(center.x, center.y, 0.0),
        normal: Vec3::z(),
        depth: radius - center.z,
    })
}

/// Smallest overlap over the fifteen separating axes; negative when apart.
pub fn box_penetration(a: &BoxGeom, b: &BoxGeom) -> f64 {
    let d = a.center - b.center;
    let mut best = f64::INFINITY;
    let mut test = |l: Vec3| {
        let depth = a.radius_along(&l) + b.radius_along(&l) - d.dot(&l).abs();
        best = best.min(depth);
    };
    for k in 0..3 {
        test(a.axis(k));
        test(b.axis(k));
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = a.axis(i).cross(&b.axis(j));
            let len = c.norm();
            if len >= 1e-6 {
                test(c / len);
            }
        }
    }
    best
}

// Face axes win unless an edge axis is clearly shallower; this keeps resting
// contacts from flickering between face and edge manifolds.
const EDGE_BIAS_REL: f64 = 0.95;
const EDGE_BIAS_ABS: f64 = 1e-5;

/// Box-box manifold by the separating axis test and face clipping.
///
/// The normal points from `b` towards `a`.
pub fn box_box(a: &BoxGeom, b: &BoxGeom, out: &mut Vec<ContactPoint>) {
    let d = a.center - b.center;
    // (depth, normal from b to a, reference index)
    let mut best_face: Option<(f64, Vec3, usize)> = None;
    for k in 0..6 {
        let l = if k < 3 { a.axis(k) } else { b.axis(k - 3) };
        let dist = d.dot(&l);
        let depth = a.radius_along(&l) + b.radius_along(&l) - dist.abs();
        if depth < 0.0 {
            return;
        }
        let n = if dist < 0.0 { -l } else { l };
        if best_face.is_none_or(|(bd, _, _)| depth < bd) {
            best_face = Some((depth, n, k));
        }
    }
    let mut best_edge: Option<(f64, Vec3, usize, usize)> = None;
    for i in 0..3 {
        for j in 0..3 {
            let c = a.axis(i).cross(&b.axis(j));
            let len = c.norm();
            if len < 1e-6 {
                continue;
            }
            let l = c / len;
            let dist = d.dot(&l);
            let depth = a.radius_along(&l) + b.radius_along(&l) - dist.abs();
            if depth < 0.0 {
                return;
            }
            let n = if dist < 0.0 { -l } else { l };
            if best_edge.is_none_or(|(bd, ..)| depth < bd) {
                best_edge = Some((depth, n, i, j));
            }
        }
    }
    let (face_depth, face_n, k) = best_face.expect("six face axes");
    if let Some((edge_depth, n, i, j)) = best_edge {
        if edge_depth < EDGE_BIAS_REL * face_depth - EDGE_BIAS_ABS {
            edge_contact(a, b, &n, i, j, edge_depth, out);
            return;
        }
    }
    if k < 3 {
        // reference face on `a`, facing `b`
        let start = out.len();
        face_contact(a, b, k, &(-face_n), out);
        for c in &mut out[start..] {
            c.normal = face_n;
        }
    } else {
        face_contact(b, a, k - 3, &face_n, out);
    }
}

/// Clips the incident face of `inc` against reference face `axis` of `rf`
/// whose outward normal is `nf`.
fn face_contact(rf: &BoxGeom, inc: &BoxGeom, axis: usize, nf: &Vec3, out: &mut Vec<ContactPoint>) {
    let mut k = 0;
    let mut best = -1.0;
    for i in 0..3 {
        let v = inc.axis(i).dot(nf).abs();
        if v > best {
            best = v;
            k = i;
        }
    }
    let s = if inc.axis(k).dot(nf) > 0.0 { -1.0 } else { 1.0 };
    let fc = inc.center + inc.axis(k) * (s * inc.half[k]);
    let (u, v) = ((k + 1) % 3, (k + 2) % 3);
    let (eu, ev) = (inc.axis(u) * inc.half[u], inc.axis(v) * inc.half[v]);
    let mut poly = vec![fc - eu - ev, fc + eu - ev, fc + eu + ev, fc - eu + ev];

    for j in [(axis + 1) % 3, (axis + 2) % 3] {
        let aj = rf.axis(j);
        for sign in [1.0, -1.0] {
            let n = aj * sign;
            let off = n.dot(&rf.center) + rf.half[j];
            poly = clip_polygon(&poly, &n, off);
            if poly.is_empty() {
                return;
            }
        }
    }
    let plane = nf.dot(&rf.center) + rf.half[axis];
    for p in poly {
        let depth = plane - nf.dot(&p);
        if depth > 0.0 {
            out.push(ContactPoint { point: p + nf * (0.5 * depth), normal: *nf, depth });
        }
    }
}

fn clip_polygon(poly: &[Vec3], n: &Vec3, off: f64) -> Vec<Vec3> {
    let m = poly.len();
    let mut out = Vec::with_capacity(m + 2);
    for i in 0..m {
        let (p, q) = (poly[i], poly[(i + 1) % m]);
        let (dp, dq) = (n.dot(&p) - off, n.dot(&q) - off);
        if dp <= 0.0 {
            out.push(p);
        }
        if (dp <= 0.0) != (dq <= 0.0) {
            out.push(p + (q - p) * (dp / (dp - dq)));
        }
    }
    out
}

fn edge_contact(a: &BoxGeom, b: &BoxGeom, n: &Vec3, i: usize, j: usize, depth: f64, out: &mut Vec<ContactPoint>) {
    // Support edges: `a` towards -n, `b` towards +n.
    let mut pa = a.center;
    let mut pb = b.center;
    for k in 0..3 {
        if k != i {
            let ak = a.axis(k);
            pa -= ak * (a.half[k] * ak.dot(n).signum());
        }
        if k != j {
            let bk = b.axis(k);
            pb += bk * (b.half[k] * bk.dot(n).signum());
        }
    }
    let (da, db) = (a.axis(i), b.axis(j));
    let r = pa - pb;
    let (aa, ab, bb) = (1.0, da.dot(&db), 1.0);
    let (ar, br) = (da.dot(&r), db.dot(&r));
    let den = aa * bb - ab * ab;
    let (s, t) = if den.abs() < 1e-12 {
        (0.0, 0.0)
    } else {
        ((ab * br - bb * ar) / den, (aa * br - ab * ar) / den)
    };
    let s = s.clamp(-a.half[i], a.half[i]);
    let t = t.clamp(-b.half[j], b.half[j]);
    let point = 0.5 * ((pa + da * s) + (pb + db * t));
    out.push(ContactPoint { point, normal: *n, depth });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rot_z;

    fn cube(x: f64, y: f64, z: f64, h: f64) -> BoxGeom {
        BoxGeom { center: Vec3::new(x, y, z), rot: Mat3::identity(), half: Vec3::repeat(h) }
    }

    #[test]
    fn resting_box_touches_floor_at_four_corners() {
        let mut out = Vec::new();
        box_floor(&cube(0.0, 0.0, 0.0325 - 1e-4, 0.0325), &mut out);
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|c| (c.depth - 1e-4).abs() < 1e-12));
    }

    #[test]
    fn stacked_boxes_give_face_manifold() {
        let lower = cube(0.0, 0.0, 0.0325, 0.0325);
        let upper = cube(0.01, 0.0, 0.0975 - 1e-4, 0.0325);
        let mut out = Vec::new();
        box_box(&upper, &lower, &mut out);
        assert_eq!(out.len(), 4);
        for c in &out {
            assert!((c.normal - Vec3::z()).norm() < 1e-12);
            assert!((c.depth - 1e-4).abs() < 1e-12);
        }
        out.clear();
        box_box(&lower, &upper, &mut out);
        assert!(out.iter().all(|c| (c.normal + Vec3::z()).norm() < 1e-12));
    }

    #[test]
    fn separated_boxes_have_no_contact() {
        let mut out = Vec::new();
        box_box(&cube(0.0, 0.0, 0.0325, 0.0325), &cube(0.1, 0.0, 0.0325, 0.0325), &mut out);
        assert!(out.is_empty());
        let mut turned = cube(0.11, 0.0, 0.0325, 0.0325);
        turned.rot = rot_z(0.3);
        box_box(&cube(0.0, 0.0, 0.0325, 0.0325), &turned, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn sphere_contacts() {
        let b = cube(0.0, 0.0, 0.0325, 0.0325);
        let c = sphere_box(&Vec3::new(0.0, -0.045, 0.03), 0.016, &b).unwrap();
        assert!((c.normal + Vec3::y()).norm() < 1e-12);
        assert!((c.depth - 0.0035).abs() < 1e-12);
        assert!(sphere_box(&Vec3::new(0.0, -0.06, 0.03), 0.016, &b).is_none());
        let inside = sphere_box(&Vec3::new(0.0, -0.03, 0.03), 0.016, &b).unwrap();
        assert!((inside.normal + Vec3::y()).norm() < 1e-12);
        assert!((inside.depth - 0.0185).abs() < 1e-12);
        assert!(sphere_floor(&Vec3::new(0.0, 0.0, 0.01), 0.016).is_some());
    }

    #[test]
    fn penetration_depth_sign() {
        let a = cube(0.0, 0.0, 0.0325, 0.0325);
        assert!((box_penetration(&a, &cube(0.06, 0.0, 0.0325, 0.0325)) - 0.005).abs() < 1e-12);
        assert!(box_penetration(&a, &cube(0.07, 0.0, 0.0325, 0.0325)) < 0.0);
    }

    #[test]
    fn wall_pushes_inwards() {
        let mut out = Vec::new();
        box_wall(&cube(0.17, 0.0, 0.0325, 0.0325), 0.195, &mut out);
        assert!(!out.is_empty());
        assert!(out.iter().all(|c| c.normal.x < 0.0));
    }
}
