//! Small numeric helpers shared by the simulator.
//!
//! Every transcendental function on the simulation path goes through `libm`,
//! so results do not depend on the platform's C math library.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

pub const PI: f64 = std::f64::consts::PI;

pub fn rot_x(a: f64) -> Mat3 {
    let (s, c) = (libm::sin(a), libm::cos(a));
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Mat3 {
    let (s, c) = (libm::sin(a), libm::cos(a));
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = (libm::sin(a), libm::cos(a));
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about +z by `yaw` radians.
pub fn quat_from_yaw(yaw: f64) -> Quat {
    let h = 0.5 * yaw;
    Quat::new_unchecked(Quaternion::new(libm::cos(h), 0.0, 0.0, libm::sin(h)))
}

/// Rotation about a unit `axis` by `angle` radians.
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let h = 0.5 * angle;
    let s = libm::sin(h);
    Quat::new_normalize(Quaternion::new(libm::cos(h), axis.x * s, axis.y * s, axis.z * s))
}

/// Heading of the body x-axis projected on the floor plane.
pub fn yaw_of(q: &Quat) -> f64 {
    let x = q * Vec3::x();
    libm::atan2(x.y, x.x)
}

/// Advances an orientation by a world-frame angular velocity over `h` seconds.
pub fn integrate_orientation(q: &Quat, omega: &Vec3, h: f64) -> Quat {
    let w = Quaternion::new(0.0, omega.x, omega.y, omega.z);
    let dq = (w * q.quaternion()) * (0.5 * h);
    Quat::new_normalize(q.quaternion() + dq)
}

/// `(radius, azimuth, height)` to Cartesian.
pub fn cyl_to_cart(r: f64, azimuth: f64, z: f64) -> Vec3 {
    Vec3::new(r * libm::cos(azimuth), r * libm::sin(azimuth), z)
}

/// Cartesian to `(radius, azimuth, height)`; azimuth is 0 at the origin.
pub fn cart_to_cyl(p: &Vec3) -> (f64, f64, f64) {
    let r = libm::sqrt(p.x * p.x + p.y * p.y);
    let az = if r == 0.0 { 0.0 } else { libm::atan2(p.y, p.x) };
    (r, az, p.z)
}

/// Deterministic generator for a `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes several integers into one seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform sample from `[lo, hi)`; a degenerate interval returns `lo`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let u: f64 = rng.random();
    let v = lo + u * (hi - lo);
    // rounding can land exactly on `hi`
    if v >= hi {
        lo
    } else {
        v
    }
}
