use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SHIPPED_PHYSICS: &str = include_str!("../../data/physics.json");

/// Geometry of one finger; all three fingers share it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerGeometry {
    pub base_radius: f64,
    pub base_height: f64,
    pub link_lengths: [f64; 3],
    /// Added to the joint angles before the chain is composed.
    pub joint_offsets: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettleSettings {
    pub kinetic_energy_threshold: f64,
    pub quiet_time: f64,
    pub time_cap: f64,
}

/// Every tunable number of the simulator, loaded from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConstants {
    pub version: u32,
    /// Simulation step (s).
    pub dt: f64,
    /// Integrator substeps per simulation step.
    pub substeps: usize,
    pub sim_steps_per_control: usize,
    /// Normal stiffness of one contact manifold (N/m).
    pub contact_stiffness: f64,
    /// Normal damping of one contact manifold (N·s/m).
    pub contact_damping: f64,
    /// Slope of the regularized Coulomb friction (N·s/m).
    pub friction_damping: f64,
    pub block_friction: f64,
    pub fingertip_friction: f64,
    pub fingertip_radius: f64,
    /// Motor torque bound per joint (N·m).
    pub torque_limit: f64,
    pub joint_kp: f64,
    pub joint_damping_ratio: f64,
    pub joint_viscous_damping: f64,
    pub rotor_inertia: f64,
    pub stage_radius: f64,
    pub penetration_tolerance: f64,
    pub finger: FingerGeometry,
    pub ik: IkSettings,
    pub settle: SettleSettings,
}

impl PhysicsConstants {
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_PHYSICS).expect("shipped physics constants are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("contact_stiffness", self.contact_stiffness),
            ("fingertip_radius", self.fingertip_radius),
            ("torque_limit", self.torque_limit),
            ("stage_radius", self.stage_radius),
            ("rotor_inertia", self.rotor_inertia),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("physics constant `{name}` must be positive")));
            }
        }
        if self.substeps == 0 || self.sim_steps_per_control == 0 {
            return Err(Error::Config("step counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Control frequency (Hz), rounded to an integer.
    pub fn control_rate_hz(&self) -> u64 {
        (1.0 / (self.dt * self.sim_steps_per_control as f64)).round() as u64
    }

    pub fn control_period(&self) -> f64 {
        self.dt * self.sim_steps_per_control as f64
    }
}
