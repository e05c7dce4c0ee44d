//! The lumped zero-load torque model: gravity, configuration-dependent
//! inertia, torque-proportional directional friction, and the slew centripetal
//! approximation, evaluated per instrumented joint from identified
//! coefficients.

use std::path::Path;

use thiserror::Error;

use crate::kinematics::{ArmJoint, JointAngles, MachineGeometry, PerJoint};
use crate::signal::{moving_direction, AlignedSample, MotionDirection};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("parameter file `{path}`: {reason}")]
    File { path: String, reason: String },
    #[error("parameter file field `{field}`: {reason}")]
    Field { field: String, reason: String },
}

/// Linear friction law coefficients for one direction of motion: the torque
/// deficit magnitude is `slope * tau_measured + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrictionLine {
    pub slope: f64,
    pub offset: f64,
}

/// Per-direction friction model of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointFriction {
    pub raise: FrictionLine,
    pub lower: FrictionLine,
}

impl JointFriction {
    pub fn line(&self, dir: MotionDirection) -> FrictionLine {
        match dir {
            MotionDirection::Raise => self.raise,
            MotionDirection::Lower => self.lower,
        }
    }
}

/// All identified lumped coefficients for the boom and stick joints.
///
/// Gravity coefficients are N*m amplitudes of the cumulative-angle trig terms;
/// boom inertia coefficients are [kg*m^2, kg*m^2, kg*m^2, kg*m, kg*m] (the last
/// two multiply explicit link-length factors), stick inertia kg*m^2; the slew
/// scale is dimensionless.
#[derive(Debug, Clone, PartialEq)]
pub struct LumpedParams {
    pub boom_gravity: [f64; 6],
    pub stick_gravity: [f64; 4],
    pub boom_inertia: [f64; 5],
    pub stick_inertia: [f64; 3],
    pub friction: PerJoint<JointFriction>,
    pub slew_scale: f64,
    pub machine_id: String,
    pub calibrated_at: String,
}

impl Default for LumpedParams {
    fn default() -> Self {
        Self {
            boom_gravity: [0.0; 6],
            stick_gravity: [0.0; 4],
            boom_inertia: [0.0; 5],
            stick_inertia: [0.0; 3],
            friction: PerJoint::default(),
            slew_scale: 0.0,
            machine_id: String::new(),
            calibrated_at: String::new(),
        }
    }
}

const PARAM_FORMAT_VERSION: u32 = 1;

impl LumpedParams {
    pub fn gravity_coeffs(&self, joint: ArmJoint) -> &[f64] {
        match joint {
            ArmJoint::Boom => &self.boom_gravity,
            ArmJoint::Stick => &self.stick_gravity,
        }
    }

    /// Serializes to the versioned key=value parameter file format.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("format_version={PARAM_FORMAT_VERSION}\n"));
        out.push_str(&format!("machine_id={}\n", self.machine_id));
        out.push_str(&format!("calibrated_at={}\n", self.calibrated_at));
        for (i, v) in self.boom_gravity.iter().enumerate() {
            out.push_str(&format!("pi_bg_{}={}\n", i + 1, v));
        }
        for (i, v) in self.stick_gravity.iter().enumerate() {
            out.push_str(&format!("pi_sg_{}={}\n", i + 7, v));
        }
        for (i, v) in self.boom_inertia.iter().enumerate() {
            out.push_str(&format!("pi_bi_{}={}\n", i + 1, v));
        }
        for (i, v) in self.stick_inertia.iter().enumerate() {
            out.push_str(&format!("pi_si_{}={}\n", i + 1, v));
        }
        for joint in ArmJoint::ALL {
            let f = self.friction.get(joint);
            let n = joint.name();
            out.push_str(&format!("friction_{n}_raise_slope={}\n", f.raise.slope));
            out.push_str(&format!("friction_{n}_raise_offset={}\n", f.raise.offset));
            out.push_str(&format!("friction_{n}_lower_slope={}\n", f.lower.slope));
            out.push_str(&format!("friction_{n}_lower_offset={}\n", f.lower.offset));
        }
        out.push_str(&format!("pi_c={}\n", self.slew_scale));
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DynamicsError> {
        std::fs::write(path, self.to_config_string()).map_err(|e| DynamicsError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, DynamicsError> {
        let text = std::fs::read_to_string(path).map_err(|e| DynamicsError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, DynamicsError> {
        let kv = crate::kinematics::parse_key_values(text).map_err(|(line, reason)| DynamicsError::Field {
            field: format!("line {line}"),
            reason,
        })?;
        let get = |key: &str| -> Result<f64, DynamicsError> {
            kv.get(key)
                .ok_or_else(|| DynamicsError::Field {
                    field: key.to_string(),
                    reason: "missing".to_string(),
                })?
                .parse()
                .map_err(|_| DynamicsError::Field {
                    field: key.to_string(),
                    reason: "not a number".to_string(),
                })
        };
        let version: u32 = kv
            .get("format_version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DynamicsError::Field {
                field: "format_version".to_string(),
                reason: "missing or invalid".to_string(),
            })?;
        if version != PARAM_FORMAT_VERSION {
            return Err(DynamicsError::Field {
                field: "format_version".to_string(),
                reason: format!("unsupported version {version}"),
            });
        }
        let mut params = LumpedParams {
            machine_id: kv.get("machine_id").cloned().unwrap_or_default(),
            calibrated_at: kv.get("calibrated_at").cloned().unwrap_or_default(),
            ..LumpedParams::default()
        };
        for i in 0..6 {
            params.boom_gravity[i] = get(&format!("pi_bg_{}", i + 1))?;
        }
        for i in 0..4 {
            params.stick_gravity[i] = get(&format!("pi_sg_{}", i + 7))?;
        }
        for i in 0..5 {
            params.boom_inertia[i] = get(&format!("pi_bi_{}", i + 1))?;
        }
        for i in 0..3 {
            params.stick_inertia[i] = get(&format!("pi_si_{}", i + 1))?;
        }
        for joint in ArmJoint::ALL {
            let n = joint.name();
            let f = params.friction.get_mut(joint);
            f.raise.slope = get(&format!("friction_{n}_raise_slope"))?;
            f.raise.offset = get(&format!("friction_{n}_raise_offset"))?;
            f.lower.slope = get(&format!("friction_{n}_lower_slope"))?;
            f.lower.offset = get(&format!("friction_{n}_lower_offset"))?;
        }
        params.slew_scale = get("pi_c")?;
        Ok(params)
    }
}

/// Additive decomposition of the predicted measured torque of one joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueBreakdown {
    pub gravity: f64,
    pub inertia: f64,
    pub friction: f64,
    pub centripetal: f64,
    pub total: f64,
}

impl TorqueBreakdown {
    fn new(gravity: f64, inertia: f64, friction: f64, centripetal: f64) -> Self {
        Self {
            gravity,
            inertia,
            friction,
            centripetal,
            total: gravity + inertia + friction + centripetal,
        }
    }
}

/// Gravity torque of the unloaded arm on `joint`, evaluated from the lumped
/// trigonometric form over cumulative angles (cabin pitch applied upstream via
/// the effective boom angle).
pub fn gravity_torque(params: &LumpedParams, joint: ArmJoint, q: &JointAngles) -> f64 {
    let t1 = q.boom;
    let t12 = t1 + q.stick;
    let t123 = t12 + q.bucket;
    match joint {
        ArmJoint::Boom => {
            let c = &params.boom_gravity;
            c[0] * t1.cos()
                + c[1] * t1.sin()
                + c[2] * t12.cos()
                + c[3] * t12.sin()
                + c[4] * t123.cos()
                + c[5] * t123.sin()
        }
        ArmJoint::Stick => {
            let c = &params.stick_gravity;
            c[0] * t12.cos() + c[1] * t12.sin() + c[2] * t123.cos() + c[3] * t123.sin()
        }
    }
}

/// Configuration-dependent scalar arm inertia about the joint axis (kg*m^2).
/// Emits a non-physical warning flag (second tuple element) when the value is
/// not positive at the queried pose.
pub fn inertia_coefficient(
    params: &LumpedParams,
    geom: &MachineGeometry,
    joint: ArmJoint,
    q: &JointAngles,
) -> (f64, bool) {
    let value = match joint {
        ArmJoint::Boom => {
            let c = &params.boom_inertia;
            let (lb, ls) = (geom.l_boom, geom.l_stick);
            c[0] + c[1] * q.stick.cos()
                + c[2] * q.stick.sin()
                + c[3] * (2.0 * lb * (q.stick + q.bucket).cos() + 2.0 * ls * q.bucket.cos())
                + c[4] * (2.0 * lb * (q.stick + q.bucket).sin() + 2.0 * ls * q.bucket.sin())
        }
        ArmJoint::Stick => {
            let c = &params.stick_inertia;
            c[0] + c[1] * q.bucket.cos() + c[2] * q.bucket.sin()
        }
    };
    (value, value <= 0.0)
}

/// Result of a friction evaluation: inside the velocity deadband the model is
/// undefined and the sample must be excluded by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrictionTorque {
    Moving(f64),
    NotMoving,
}

impl FrictionTorque {
    pub fn value(self) -> Option<f64> {
        match self {
            FrictionTorque::Moving(v) => Some(v),
            FrictionTorque::NotMoving => None,
        }
    }
}

/// Friction contribution to the measured torque: the linear-in-torque deficit
/// with the parameter set selected by the motion direction, signed so that it
/// opposes the motion under the lifting-positive convention (raising costs
/// torque, lowering returns it).
pub fn friction_torque(
    params: &LumpedParams,
    joint: ArmJoint,
    tau_measured: f64,
    omega: f64,
    deadband: f64,
) -> FrictionTorque {
    match moving_direction(omega, deadband) {
        None => FrictionTorque::NotMoving,
        Some(dir) => {
            let line = params.friction.get(joint).line(dir);
            let deficit = line.slope * tau_measured + line.offset;
            let signed = match dir {
                MotionDirection::Raise => -deficit,
                MotionDirection::Lower => deficit,
            };
            FrictionTorque::Moving(signed)
        }
    }
}

/// Boom centripetal torque from cabin slew: the identified gravity
/// coefficients re-ordered (sin/cos pairing swapped) scale with the squared
/// slew rate and the single fitted scale parameter.
pub fn centripetal_torque(params: &LumpedParams, q: &JointAngles, cab_rate: f64) -> f64 {
    let c = &params.boom_gravity;
    let t1 = q.boom;
    let t12 = t1 + q.stick;
    let t123 = t12 + q.bucket;
    cab_rate
        * cab_rate
        * params.slew_scale
        * (c[1] * t1.cos()
            + c[0] * t1.sin()
            + c[3] * t12.cos()
            + c[2] * t12.sin()
            + c[5] * t123.cos()
            + c[4] * t123.sin())
}

/// Zero-load prediction of one joint; Static marks samples inside the velocity
/// deadband where the friction model is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointPrediction {
    Moving(TorqueBreakdown),
    Static,
}

impl JointPrediction {
    pub fn breakdown(self) -> Option<TorqueBreakdown> {
        match self {
            JointPrediction::Moving(b) => Some(b),
            JointPrediction::Static => None,
        }
    }

    /// Residual of the measurement against the zero-load prediction.
    pub fn residual(self, tau_measured: f64) -> Option<f64> {
        self.breakdown().map(|b| tau_measured - b.total)
    }
}

/// Effective angles for model evaluation: cabin pitch folded into the boom.
pub(crate) fn model_angles(geom: &MachineGeometry, q: &JointAngles) -> JointAngles {
    JointAngles {
        boom: geom.effective_boom(q),
        ..*q
    }
}

/// Base-frame angular acceleration of a joint: downstream of the boom the
/// relative accelerations accumulate.
pub(crate) fn base_frame_accel(s: &AlignedSample, joint: ArmJoint) -> f64 {
    match joint {
        ArmJoint::Boom => s.qdd.boom,
        ArmJoint::Stick => s.qdd.boom + s.qdd.stick,
    }
}

/// Predicts the zero-load measured torque of both joints for one aligned
/// sample: gravity + inertia + friction + centripetal (boom only). The
/// residual `tau_measured - total` carries the payload or contact-force
/// signal.
pub fn predict_zero_load(
    params: &LumpedParams,
    geom: &MachineGeometry,
    s: &AlignedSample,
    tau_measured: &PerJoint<f64>,
    deadband: f64,
) -> PerJoint<JointPrediction> {
    let q = model_angles(geom, &s.q);
    let predict = |joint: ArmJoint| -> JointPrediction {
        let omega = crate::signal::joint_rate(&s.qd, joint);
        let friction = match friction_torque(params, joint, *tau_measured.get(joint), omega, deadband) {
            FrictionTorque::NotMoving => return JointPrediction::Static,
            FrictionTorque::Moving(v) => v,
        };
        let gravity = gravity_torque(params, joint, &q);
        let (inertia_coeff, _) = inertia_coefficient(params, geom, joint, &q);
        let inertia = inertia_coeff * base_frame_accel(s, joint);
        let centripetal = match joint {
            ArmJoint::Boom => centripetal_torque(params, &q, s.qd.cab_rate),
            ArmJoint::Stick => 0.0,
        };
        JointPrediction::Moving(TorqueBreakdown::new(gravity, inertia, friction, centripetal))
    };
    PerJoint {
        boom: predict(ArmJoint::Boom),
        stick: predict(ArmJoint::Stick),
    }
}
