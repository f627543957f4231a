//! Finger forward and inverse kinematics.
//!
//! Each finger is mounted above the arena at `base_radius`, rotated by
//! 120° per finger. Joint 0 turns the finger about the vertical axis, joints 1
//! and 2 are pitch joints; the first link hangs straight down from the base.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::constants::{FingerGeometry, IkSettings};
use crate::math::{rot_y, rot_z, Mat3, Vec3};

pub const FINGERS: usize = 3;

/// Joint locations, axes and tip of one finger.
#[derive(Clone, Copy, Debug)]
pub struct FingerFrames {
    pub joints: [Vec3; 3],
    pub axes: [Vec3; 3],
    pub tip: Vec3,
}

impl FingerFrames {
    /// Geometric Jacobian of the tip position (3×3).
    pub fn jacobian(&self) -> Mat3 {
        let mut j = Mat3::zeros();
        for c in 0..3 {
            j.set_column(c, &self.axes[c].cross(&(self.tip - self.joints[c])));
        }
        j
    }
}

pub fn finger_frames(geom: &FingerGeometry, finger: usize, q: &[f64]) -> FingerFrames {
    let yaw = 2.0 * std::f64::consts::PI * finger as f64 / 3.0;
    let r0 = rot_z(yaw);
    let p0 = r0 * Vec3::new(geom.base_radius, 0.0, geom.base_height);
    let [l0, l1, l2] = geom.link_lengths;
    let [c0, c1, c2] = geom.joint_offsets;
    let down = |l: f64| Vec3::new(0.0, 0.0, -l);

    let r1 = r0 * rot_z(q[0] + c0);
    let p1 = p0 + r1 * down(l0);
    let r2 = r1 * rot_y(q[1] + c1);
    let p2 = p1 + r2 * down(l1);
    let r3 = r2 * rot_y(q[2] + c2);
    let tip = p2 + r3 * down(l2);
    FingerFrames {
        joints: [p0, p1, p2],
        axes: [r1.column(2).into_owned(), r1.column(1).into_owned(), r2.column(1).into_owned()],
        tip,
    }
}

/// Fingertip centers for all nine joints.
pub fn forward_kinematics(geom: &FingerGeometry, q: &[f64; 9]) -> [Vec3; 3] {
    std::array::from_fn(|f| finger_frames(geom, f, &q[3 * f..3 * f + 3]).tip)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub joints: [f64; 9],
    /// Per finger: target reached within tolerance.
    pub reachable: [bool; 3],
    pub residual: [f64; 3],
}

impl IkSolution {
    pub fn all_reachable(&self) -> bool {
        self.reachable.iter().all(|&r| r)
    }
}

/// Damped least-squares inverse kinematics started from `seed`.
pub fn inverse_kinematics(
    geom: &FingerGeometry,
    settings: &IkSettings,
    targets: &[Vec3; 3],
    seed: &[f64; 9],
) -> IkSolution {
    let mut joints = *seed;
    let mut reachable = [false; 3];
    let mut residual = [0.0; 3];
    let lambda2 = settings.damping * settings.damping;
    for f in 0..FINGERS {
        let q = &mut joints[3 * f..3 * f + 3];
        let mut best = (f64::INFINITY, [q[0], q[1], q[2]]);
        for _ in 0..=settings.max_iterations {
            let frames = finger_frames(geom, f, q);
            let e = targets[f] - frames.tip;
            let err = e.norm();
            if err < best.0 {
                best = (err, [q[0], q[1], q[2]]);
            }
            if err <= settings.tolerance {
                break;
            }
            let j = frames.jacobian();
            let jjt = j * j.transpose() + Matrix3::identity() * lambda2;
            let Some(inv) = jjt.try_inverse() else { break };
            let mut dq: Vector3<f64> = j.transpose() * (inv * e);
            let n = dq.norm();
            if n > 0.5 {
                dq *= 0.5 / n;
            }
            for i in 0..3 {
                q[i] += dq[i];
            }
        }
        q.copy_from_slice(&best.1);
        residual[f] = best.0;
        reachable[f] = best.0 <= settings.tolerance;
    }
    IkSolution { joints, reachable, residual }
}
