//! Planar arm geometry: joint-angle conventions, cylinder linkage sensitivity,
//! forward kinematics to the blade point, Jacobians, and workspace sensitivity maps.
//!
//! Conventions used throughout the crate:
//! - Base frame at the boom rotational axis, gravity-aligned: x horizontal along
//!   the arm at zero angles, y up.
//! - Boom angle measured from the horizontal, positive raising. Stick and bucket
//!   angles are relative to the parent link. Absolute link angles are the
//!   cumulative sums (boom, boom+stick, boom+stick+bucket).
//! - Torques are positive in the lifting direction.
//! - A static cabin pitch is added to the boom angle before any gravity or
//!   payload evaluation; cabin roll is not supported.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

/// Gravitational acceleration used everywhere in the toolkit (m/s^2).
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum KinematicsError {
    /// Cylinder linkage collapsed: the law-of-cosines length is not a real
    /// positive number at the queried angle.
    #[error("degenerate linkage: b^2 = {b_squared:.6} at total angle {total_angle:.4} rad")]
    DegenerateLinkage { b_squared: f64, total_angle: f64 },
    #[error("geometry field `{field}`: {reason}")]
    InvalidGeometry { field: String, reason: String },
    #[error("cabin roll compensation is not supported (arm-plane model)")]
    UnsupportedRoll,
    #[error("geometry file `{path}`: {reason}")]
    File { path: String, reason: String },
}

/// The two instrumented joints carrying cylinder pressure sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArmJoint {
    Boom,
    Stick,
}

impl ArmJoint {
    pub const ALL: [ArmJoint; 2] = [ArmJoint::Boom, ArmJoint::Stick];

    pub fn name(self) -> &'static str {
        match self {
            ArmJoint::Boom => "boom",
            ArmJoint::Stick => "stick",
        }
    }
}

impl fmt::Display for ArmJoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A pair of values keyed by instrumented joint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerJoint<T> {
    pub boom: T,
    pub stick: T,
}

impl<T> PerJoint<T> {
    pub fn get(&self, joint: ArmJoint) -> &T {
        match joint {
            ArmJoint::Boom => &self.boom,
            ArmJoint::Stick => &self.stick,
        }
    }

    pub fn get_mut(&mut self, joint: ArmJoint) -> &mut T {
        match joint {
            ArmJoint::Boom => &mut self.boom,
            ArmJoint::Stick => &mut self.stick,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerJoint<U> {
        PerJoint {
            boom: f(&self.boom),
            stick: f(&self.stick),
        }
    }
}

/// Joint angles in radians. `cab` is the slew angle about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointAngles {
    pub boom: f64,
    pub stick: f64,
    pub bucket: f64,
    pub cab: f64,
}

impl JointAngles {
    pub fn new(boom: f64, stick: f64, bucket: f64, cab: f64) -> Self {
        Self {
            boom,
            stick,
            bucket,
            cab,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.boom.is_finite() && self.stick.is_finite() && self.bucket.is_finite() && self.cab.is_finite()
    }
}

/// Joint angular rates in radians/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointRates {
    pub boom: f64,
    pub stick: f64,
    pub bucket: f64,
    pub cab_rate: f64,
}

impl JointRates {
    pub fn is_finite(&self) -> bool {
        self.boom.is_finite() && self.stick.is_finite() && self.bucket.is_finite() && self.cab_rate.is_finite()
    }
}

/// Joint angular accelerations in radians/s^2 (relative, like the rates).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointAccels {
    pub boom: f64,
    pub stick: f64,
    pub bucket: f64,
}

impl JointAccels {
    pub fn is_finite(&self) -> bool {
        self.boom.is_finite() && self.stick.is_finite() && self.bucket.is_finite()
    }
}

/// Cylinder linkage triangle constants for one joint: `a` joint axis to the
/// cylinder base anchor, `c` joint axis to the rod pin, plus the two fixed
/// offset angles between those segments and the link datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageGeometry {
    pub a: f64,
    pub c: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl LinkageGeometry {
    fn total_angle(&self, joint_angle: f64) -> f64 {
        joint_angle + self.phi1 + self.phi2
    }
}

/// Plunger-side and rod cross-section areas of a differential cylinder (m^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderAreas {
    pub plunger: f64,
    pub rod: f64,
}

/// Mechanical joint limits, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub min: f64,
    pub max: f64,
}

impl JointLimits {
    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min && angle <= self.max
    }
}

/// Static machine geometry: link lengths, blade reference point, cylinder
/// linkages and areas for both instrumented joints, joint limits, and the
/// static cabin pitch offset.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineGeometry {
    pub l_boom: f64,
    pub l_stick: f64,
    /// Blade reference point in the bucket-link frame (shovel center).
    pub blade_offset: Vector2<f64>,
    pub linkage: PerJoint<LinkageGeometry>,
    pub areas: PerJoint<CylinderAreas>,
    /// Horizontal distance from the slew axis to the boom axis, used as the
    /// centripetal radius offset.
    pub boom_pivot_horizontal_offset: f64,
    pub limits_boom: JointLimits,
    pub limits_stick: JointLimits,
    pub limits_bucket: JointLimits,
    /// Static offset added to the boom angle before gravity/payload evaluation.
    pub cabin_pitch: f64,
}

impl MachineGeometry {
    /// Validates fields against the geometric invariants, reporting the first
    /// offending field by name.
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let field = |name: &str, reason: &str| KinematicsError::InvalidGeometry {
            field: name.to_string(),
            reason: reason.to_string(),
        };
        if !(self.l_boom > 0.0) {
            return Err(field("l_boom", "must be > 0"));
        }
        if !(self.l_stick > 0.0) {
            return Err(field("l_stick", "must be > 0"));
        }
        if !self.blade_offset.x.is_finite() || !self.blade_offset.y.is_finite() {
            return Err(field("blade_offset", "must be finite"));
        }
        for joint in ArmJoint::ALL {
            let link = self.linkage.get(joint);
            let prefix = |suffix: &str| format!("{}_linkage_{}", joint.name(), suffix);
            if !(link.a > 0.0) {
                return Err(field(&prefix("a"), "must be > 0"));
            }
            if !(link.c > 0.0) {
                return Err(field(&prefix("c"), "must be > 0"));
            }
            let areas = self.areas.get(joint);
            if !(areas.plunger > areas.rod && areas.rod > 0.0) {
                return Err(field(
                    &format!("{}_area", joint.name()),
                    "requires plunger area > rod area > 0",
                ));
            }
            // triangle must stay open (b real and positive) over the joint range
            let limits = match joint {
                ArmJoint::Boom => self.limits_boom,
                ArmJoint::Stick => self.limits_stick,
            };
            let n = 256;
            for i in 0..=n {
                let angle = limits.min + (limits.max - limits.min) * i as f64 / n as f64;
                if cylinder_length(link, angle).is_err() {
                    return Err(field(
                        &prefix("phi1/phi2"),
                        &format!("linkage collapses at joint angle {angle:.3} rad"),
                    ));
                }
            }
        }
        for (name, lim) in [
            ("limit_boom", self.limits_boom),
            ("limit_stick", self.limits_stick),
            ("limit_bucket", self.limits_bucket),
        ] {
            if !(lim.min < lim.max) || !lim.min.is_finite() || !lim.max.is_finite() {
                return Err(field(name, "requires finite min < max"));
            }
        }
        if !self.cabin_pitch.is_finite() {
            return Err(field("cabin_pitch", "must be finite"));
        }
        Ok(())
    }

    pub fn limits(&self, joint: ArmJoint) -> JointLimits {
        match joint {
            ArmJoint::Boom => self.limits_boom,
            ArmJoint::Stick => self.limits_stick,
        }
    }

    pub fn angles_within_limits(&self, q: &JointAngles) -> bool {
        self.limits_boom.contains(q.boom)
            && self.limits_stick.contains(q.stick)
            && self.limits_bucket.contains(q.bucket)
    }

    /// Boom angle with the cabin pitch offset applied; used by every gravity,
    /// payload and linkage evaluation.
    pub fn effective_boom(&self, q: &JointAngles) -> f64 {
        q.boom + self.cabin_pitch
    }

    /// Joint angle fed to the linkage of `joint` (cabin pitch applies to the boom).
    pub fn linkage_angle(&self, joint: ArmJoint, q: &JointAngles) -> f64 {
        match joint {
            ArmJoint::Boom => self.effective_boom(q),
            ArmJoint::Stick => q.stick,
        }
    }

    /// Loads geometry from a plain-text `key=value` file. See `docs` in the
    /// repository README for the schema; all values are SI.
    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path).map_err(|e| KinematicsError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| match e {
            KinematicsError::InvalidGeometry { field, reason } => KinematicsError::File {
                path: path.display().to_string(),
                reason: format!("field `{field}`: {reason}"),
            },
            other => other,
        })
    }

    /// Parses the key=value geometry schema from a string.
    pub fn parse(text: &str) -> Result<Self, KinematicsError> {
        let kv = parse_key_values(text).map_err(|(line, reason)| KinematicsError::InvalidGeometry {
            field: format!("line {line}"),
            reason,
        })?;
        let get = |key: &str| -> Result<f64, KinematicsError> {
            let raw = kv.get(key).ok_or_else(|| KinematicsError::InvalidGeometry {
                field: key.to_string(),
                reason: "missing".to_string(),
            })?;
            raw.parse::<f64>().map_err(|_| KinematicsError::InvalidGeometry {
                field: key.to_string(),
                reason: format!("not a number: `{raw}`"),
            })
        };
        let opt = |key: &str, default: f64| -> Result<f64, KinematicsError> {
            match kv.get(key) {
                Some(raw) => raw.parse::<f64>().map_err(|_| KinematicsError::InvalidGeometry {
                    field: key.to_string(),
                    reason: format!("not a number: `{raw}`"),
                }),
                None => Ok(default),
            }
        };
        if let Some(roll) = kv.get("cabin_roll") {
            if roll.parse::<f64>().map(|v| v != 0.0).unwrap_or(true) {
                return Err(KinematicsError::UnsupportedRoll);
            }
        }
        let linkage_for = |joint: &str| -> Result<LinkageGeometry, KinematicsError> {
            Ok(LinkageGeometry {
                a: get(&format!("{joint}_linkage_a"))?,
                c: get(&format!("{joint}_linkage_c"))?,
                phi1: get(&format!("{joint}_linkage_phi1"))?,
                phi2: get(&format!("{joint}_linkage_phi2"))?,
            })
        };
        let areas_for = |joint: &str| -> Result<CylinderAreas, KinematicsError> {
            Ok(CylinderAreas {
                plunger: get(&format!("{joint}_area_plunger"))?,
                rod: get(&format!("{joint}_area_rod"))?,
            })
        };
        let geom = MachineGeometry {
            l_boom: get("l_boom")?,
            l_stick: get("l_stick")?,
            blade_offset: Vector2::new(get("blade_offset_x")?, get("blade_offset_y")?),
            linkage: PerJoint {
                boom: linkage_for("boom")?,
                stick: linkage_for("stick")?,
            },
            areas: PerJoint {
                boom: areas_for("boom")?,
                stick: areas_for("stick")?,
            },
            boom_pivot_horizontal_offset: opt("boom_pivot_horizontal_offset", 0.0)?,
            limits_boom: JointLimits {
                min: get("limit_boom_min")?,
                max: get("limit_boom_max")?,
            },
            limits_stick: JointLimits {
                min: get("limit_stick_min")?,
                max: get("limit_stick_max")?,
            },
            limits_bucket: JointLimits {
                min: get("limit_bucket_min")?,
                max: get("limit_bucket_max")?,
            },
            cabin_pitch: opt("cabin_pitch", 0.0)?,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Serializes to the key=value schema accepted by [`MachineGeometry::parse`].
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        out.push_str("# machine geometry, SI units\n");
        let mut push = |k: &str, v: f64| out.push_str(&format!("{k}={v}\n"));
        push("l_boom", self.l_boom);
        push("l_stick", self.l_stick);
        push("blade_offset_x", self.blade_offset.x);
        push("blade_offset_y", self.blade_offset.y);
        for joint in ArmJoint::ALL {
            let link = self.linkage.get(joint);
            let areas = self.areas.get(joint);
            let n = joint.name();
            push(&format!("{n}_linkage_a"), link.a);
            push(&format!("{n}_linkage_c"), link.c);
            push(&format!("{n}_linkage_phi1"), link.phi1);
            push(&format!("{n}_linkage_phi2"), link.phi2);
            push(&format!("{n}_area_plunger"), areas.plunger);
            push(&format!("{n}_area_rod"), areas.rod);
        }
        push("boom_pivot_horizontal_offset", self.boom_pivot_horizontal_offset);
        push("limit_boom_min", self.limits_boom.min);
        push("limit_boom_max", self.limits_boom.max);
        push("limit_stick_min", self.limits_stick.min);
        push("limit_stick_max", self.limits_stick.max);
        push("limit_bucket_min", self.limits_bucket.min);
        push("limit_bucket_max", self.limits_bucket.max);
        push("cabin_pitch", self.cabin_pitch);
        out
    }
}

/// Shared `key=value` line parser for the plain-text config formats.
/// Returns (line number, reason) on malformed lines; `#` starts a comment.
pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, (usize, String)> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| (i + 1, format!("expected key=value, got `{line}`")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Cylinder length from the law of cosines over the linkage triangle.
pub fn cylinder_length(geom: &LinkageGeometry, joint_angle: f64) -> Result<f64, KinematicsError> {
    let total = geom.total_angle(joint_angle);
    let b_squared = geom.a * geom.a + geom.c * geom.c - 2.0 * geom.a * geom.c * total.cos();
    if b_squared <= 0.0 {
        return Err(KinematicsError::DegenerateLinkage {
            b_squared,
            total_angle: total,
        });
    }
    Ok(b_squared.sqrt())
}

/// Analytic derivative of cylinder length with respect to the joint angle
/// (m/rad). Multiplying by the cylinder force yields the joint torque.
pub fn sensitivity(geom: &LinkageGeometry, joint_angle: f64) -> Result<f64, KinematicsError> {
    let b = cylinder_length(geom, joint_angle)?;
    let total = geom.total_angle(joint_angle);
    Ok(geom.a * geom.c * total.sin() / b)
}

/// Absolute link angles: boom, boom+stick, boom+stick+bucket, with the cabin
/// pitch folded into the boom angle.
fn cumulative_angles(geom: &MachineGeometry, q: &JointAngles) -> (f64, f64, f64) {
    let t1 = geom.effective_boom(q);
    let t12 = t1 + q.stick;
    let t123 = t12 + q.bucket;
    (t1, t12, t123)
}

/// Blade-point position in the gravity-aligned base frame at the boom axis.
pub fn forward_kinematics(geom: &MachineGeometry, q: &JointAngles) -> Vector2<f64> {
    let (t1, t12, t123) = cumulative_angles(geom, q);
    let (o_x, o_y) = (geom.blade_offset.x, geom.blade_offset.y);
    Vector2::new(
        geom.l_boom * t1.cos() + geom.l_stick * t12.cos() + o_x * t123.cos() - o_y * t123.sin(),
        geom.l_boom * t1.sin() + geom.l_stick * t12.sin() + o_x * t123.sin() + o_y * t123.cos(),
    )
}

/// Full 2x3 blade Jacobian: columns are the partial derivatives of the blade
/// position with respect to boom, stick and bucket joint angles.
pub fn blade_jacobian_full(geom: &MachineGeometry, q: &JointAngles) -> nalgebra::Matrix2x3<f64> {
    let (t1, t12, t123) = cumulative_angles(geom, q);
    let (o_x, o_y) = (geom.blade_offset.x, geom.blade_offset.y);
    // derivative of the rotated blade offset, shared by all columns
    let d_off_x = -o_x * t123.sin() - o_y * t123.cos();
    let d_off_y = o_x * t123.cos() - o_y * t123.sin();
    let col3 = Vector2::new(d_off_x, d_off_y);
    let col2 = Vector2::new(-geom.l_stick * t12.sin() + d_off_x, geom.l_stick * t12.cos() + d_off_y);
    let col1 = Vector2::new(-geom.l_boom * t1.sin() + col2.x, geom.l_boom * t1.cos() + col2.y);
    nalgebra::Matrix2x3::from_columns(&[col1, col2, col3])
}

/// 2x2 blade Jacobian over the boom and stick joints (the bucket column is
/// excluded: two torque observations resolve a 2D force).
pub fn blade_jacobian(geom: &MachineGeometry, q: &JointAngles) -> Matrix2<f64> {
    let full = blade_jacobian_full(geom, q);
    Matrix2::new(full[(0, 0)], full[(0, 1)], full[(1, 0)], full[(1, 1)])
}

/// 2-norm condition number of the 2x2 blade Jacobian.
pub fn jacobian_condition(j: &Matrix2<f64>) -> f64 {
    let svd = j.svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Workspace grid specification for the sensitivity map, blade coordinates in
/// the base frame.
#[derive(Debug, Clone, Copy)]
pub struct WorkspaceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl WorkspaceGrid {
    pub fn x(&self, i: usize) -> f64 {
        if self.nx <= 1 {
            self.x_min
        } else {
            self.x_min + (self.x_max - self.x_min) * i as f64 / (self.nx - 1) as f64
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if self.ny <= 1 {
            self.y_min
        } else {
            self.y_min + (self.y_max - self.y_min) * j as f64 / (self.ny - 1) as f64
        }
    }
}

/// One cell of the sensitivity field.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityCell {
    pub x: f64,
    pub y: f64,
    /// Boom plunger-chamber pressure change for the probe force (Pa), or None
    /// when the blade point is unreachable.
    pub pressure_per_force: Option<f64>,
}

/// Inverse kinematics for the blade point with a fixed bucket angle: returns
/// boom and stick angles within limits, or None if unreachable.
pub fn blade_inverse_kinematics(
    geom: &MachineGeometry,
    target: Vector2<f64>,
    bucket_angle: f64,
) -> Option<JointAngles> {
    // With the bucket frozen, stick joint -> blade is a rigid segment.
    let v = Vector2::new(
        geom.l_stick + geom.blade_offset.x * bucket_angle.cos() - geom.blade_offset.y * bucket_angle.sin(),
        geom.blade_offset.x * bucket_angle.sin() + geom.blade_offset.y * bucket_angle.cos(),
    );
    let l2 = v.norm();
    let delta = v.y.atan2(v.x);
    let d = target.norm();
    if d < 1e-9 {
        return None;
    }
    let l1 = geom.l_boom;
    let cos_inner = (d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if cos_inner.abs() > 1.0 {
        return None;
    }
    let base = target.y.atan2(target.x);
    // elbow-down solution (stick folded under the boom, the digging posture)
    for sign in [-1.0, 1.0] {
        let inner = sign * cos_inner.acos();
        let boom = base - (l2 * inner.sin()).atan2(l1 + l2 * inner.cos());
        let stick = inner - delta;
        let q = JointAngles::new(boom - geom.cabin_pitch, stick, bucket_angle, 0.0);
        if geom.angles_within_limits(&q) {
            return Some(q);
        }
    }
    None
}

/// Boom plunger-chamber pressure change per probe force over a workspace grid.
/// For each reachable blade position the field value is |(J^T f)_boom| / (eta * A_p)
/// with f the vertical probe force; unreachable cells are flagged as None.
pub fn sensitivity_map(
    geom: &MachineGeometry,
    grid: &WorkspaceGrid,
    probe_force: f64,
    bucket_angle: f64,
) -> Vec<SensitivityCell> {
    let mut cells = Vec::with_capacity(grid.nx * grid.ny);
    let force = Vector2::new(0.0, -probe_force);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let target = Vector2::new(grid.x(i), grid.y(j));
            let value = blade_inverse_kinematics(geom, target, bucket_angle).and_then(|q| {
                let jac = blade_jacobian(geom, &q);
                let tau_boom = jac.column(0).dot(&force);
                let eta = sensitivity(geom.linkage.get(ArmJoint::Boom), geom.linkage_angle(ArmJoint::Boom, &q))
                    .ok()?;
                let a_p = geom.areas.get(ArmJoint::Boom).plunger;
                Some((tau_boom / (eta * a_p)).abs())
            });
            cells.push(SensitivityCell {
                x: target.x,
                y: target.y,
                pressure_per_force: value,
            });
        }
    }
    cells
}
