//! Chamber pressures to cylinder force and joint torque, plus identification
//! of an unknown plunger area from paired loaded/unloaded motions and snapping
//! to a cylinder-size catalog.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::kinematics::{sensitivity, ArmJoint, JointAngles, KinematicsError, MachineGeometry, GRAVITY};
use crate::signal::{joint_angle, joint_rate, Episode, PressurePair};

#[derive(Debug, Error)]
pub enum HydraulicsError {
    #[error("invalid cylinder geometry: plunger area {plunger} and rod area {rod} must satisfy plunger > rod > 0")]
    InvalidGeometry { plunger: f64, rod: f64 },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("insufficient overlap between loaded and unloaded motions: {pairs} usable pairs, need {need}")]
    InsufficientOverlap { pairs: usize, need: usize },
    #[error("no samples inside the quasi-static velocity band [{lo}, {hi}] rad/s")]
    NonQuasistatic { lo: f64, hi: f64 },
    #[error("cylinder catalog `{path}`: {reason}")]
    Catalog { path: String, reason: String },
}

/// Cylinder force from the chamber pressures of a differential cylinder.
pub fn cylinder_force(a_p: f64, a_r: f64, p: &PressurePair) -> Result<f64, HydraulicsError> {
    if !(a_p > a_r && a_r > 0.0) {
        return Err(HydraulicsError::InvalidGeometry {
            plunger: a_p,
            rod: a_r,
        });
    }
    Ok(a_p * p.p1 - (a_p - a_r) * p.p2)
}

/// Measured joint torque: linkage sensitivity times cylinder force. The boom
/// angle carries the cabin pitch offset.
pub fn measured_joint_torque(
    geom: &MachineGeometry,
    joint: ArmJoint,
    q: &JointAngles,
    p: &PressurePair,
) -> Result<f64, HydraulicsError> {
    let areas = geom.areas.get(joint);
    let force = cylinder_force(areas.plunger, areas.rod, p)?;
    let eta = sensitivity(geom.linkage.get(joint), geom.linkage_angle(joint, q))?;
    Ok(eta * force)
}

/// Ordered list of standard cylinder bore diameters (m).
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderCatalog {
    bores: Vec<f64>,
}

impl CylinderCatalog {
    /// ISO-style default bores, millimetres 63..250.
    pub fn standard() -> Self {
        let mm = [
            63.0, 80.0, 90.0, 100.0, 110.0, 125.0, 140.0, 160.0, 180.0, 200.0, 220.0, 250.0,
        ];
        Self {
            bores: mm.iter().map(|d| d / 1000.0).collect(),
        }
    }

    pub fn new(mut bores: Vec<f64>) -> Result<Self, HydraulicsError> {
        bores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if bores.is_empty() || bores.iter().any(|&b| !(b > 0.0)) {
            return Err(HydraulicsError::Catalog {
                path: "<memory>".to_string(),
                reason: "catalog requires positive bore diameters".to_string(),
            });
        }
        if bores.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HydraulicsError::Catalog {
                path: "<memory>".to_string(),
                reason: "bore diameters must be strictly increasing".to_string(),
            });
        }
        Ok(Self { bores })
    }

    /// Loads a catalog file: one bore diameter in millimetres per line,
    /// `#` comments allowed.
    pub fn load(path: &Path) -> Result<Self, HydraulicsError> {
        let text = std::fs::read_to_string(path).map_err(|e| HydraulicsError::Catalog {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut bores = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mm: f64 = line.parse().map_err(|_| HydraulicsError::Catalog {
                path: path.display().to_string(),
                reason: format!("line {}: not a number `{line}`", i + 1),
            })?;
            bores.push(mm / 1000.0);
        }
        Self::new(bores).map_err(|e| match e {
            HydraulicsError::Catalog { reason, .. } => HydraulicsError::Catalog {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn bores(&self) -> &[f64] {
        &self.bores
    }

    /// Plunger area of the catalog bore nearest to `area` (by area).
    pub fn nearest_area(&self, area: f64) -> f64 {
        self.bores
            .iter()
            .map(|d| std::f64::consts::PI * d * d / 4.0)
            .min_by(|a, b| {
                ((a - area).abs())
                    .partial_cmp(&(b - area).abs())
                    .unwrap()
            })
            .expect("catalog is non-empty")
    }
}

/// Lever of the known calibration payload relative to the identified joint:
/// distance from the joint axis and the fixed angle offset between the joint
/// angle and the payload direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadAttachment {
    pub radius: f64,
    pub angle_offset: f64,
}

/// Result of the plunger-area identification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlungerAreaEstimate {
    pub area_raw: f64,
    pub area_catalog: f64,
    pub pairs_used: usize,
}

/// Tuning knobs for the loaded/unloaded pairing.
#[derive(Debug, Clone, Copy)]
pub struct PlungerIdOptions {
    /// Joint-angle bin width for pairing (rad). Default 0.5 degrees.
    pub bin_width: f64,
    /// Quasi-static velocity band (rad/s).
    pub omega_min: f64,
    pub omega_max: f64,
    /// Minimum matched pairs required.
    pub min_pairs: usize,
}

impl Default for PlungerIdOptions {
    fn default() -> Self {
        Self {
            bin_width: 0.5_f64.to_radians(),
            omega_min: 0.01,
            omega_max: 0.3,
            min_pairs: 5,
        }
    }
}

#[derive(Default)]
struct BinAccumulator {
    angle: f64,
    p1: f64,
    p2: f64,
    count: usize,
}

fn bin_episode(
    episode: &Episode,
    joint: ArmJoint,
    opts: &PlungerIdOptions,
) -> BTreeMap<(i64, i8), BinAccumulator> {
    let mut bins: BTreeMap<(i64, i8), BinAccumulator> = BTreeMap::new();
    for s in &episode.samples {
        let omega = joint_rate(&s.qd, joint);
        let dir = if omega >= opts.omega_min && omega <= opts.omega_max {
            1_i8
        } else if omega <= -opts.omega_min && omega >= -opts.omega_max {
            -1_i8
        } else {
            continue;
        };
        let angle = joint_angle(&s.q, joint);
        let key = ((angle / opts.bin_width).floor() as i64, dir);
        let p = s.pressures.get(joint);
        let acc = bins.entry(key).or_default();
        acc.angle += angle;
        acc.p1 += p.p1;
        acc.p2 += p.p2;
        acc.count += 1;
    }
    bins
}

/// Identifies the plunger area from one loaded and one unloaded recording of
/// the same joint motion: samples are binned by joint angle and motion
/// direction inside a quasi-static velocity band, each matched bin yields one
/// closed-form area estimate, and the IQR-filtered mean is snapped to the
/// nearest catalog bore.
pub fn identify_plunger_area(
    geom: &MachineGeometry,
    joint: ArmJoint,
    loaded: &Episode,
    unloaded: &Episode,
    payload_mass: f64,
    attachment: PayloadAttachment,
    a_r: f64,
    catalog: &CylinderCatalog,
    opts: &PlungerIdOptions,
) -> Result<PlungerAreaEstimate, HydraulicsError> {
    let bins_w = bin_episode(loaded, joint, opts);
    let bins_wo = bin_episode(unloaded, joint, opts);
    if bins_w.is_empty() || bins_wo.is_empty() {
        return Err(HydraulicsError::NonQuasistatic {
            lo: opts.omega_min,
            hi: opts.omega_max,
        });
    }
    let mut estimates = Vec::new();
    for (key, w) in &bins_w {
        let Some(wo) = bins_wo.get(key) else { continue };
        let angle = 0.5 * (w.angle / w.count as f64 + wo.angle / wo.count as f64);
        let linkage_angle = match joint {
            ArmJoint::Boom => angle + geom.cabin_pitch,
            ArmJoint::Stick => angle,
        };
        let eta = sensitivity(geom.linkage.get(joint), linkage_angle)?;
        let (p1_w, p2_w) = (w.p1 / w.count as f64, w.p2 / w.count as f64);
        let (p1_wo, p2_wo) = (wo.p1 / wo.count as f64, wo.p2 / wo.count as f64);
        let denom = eta * ((p1_w - p2_w) - (p1_wo - p2_wo));
        if denom.abs() < 1e-12 {
            continue;
        }
        let numer = a_r * eta * (p2_wo - p2_w)
            + GRAVITY * attachment.radius * payload_mass * (angle - attachment.angle_offset).cos();
        let estimate = numer / denom;
        if estimate.is_finite() && estimate > 0.0 {
            estimates.push(estimate);
        }
    }
    let filtered = iqr_filter(&mut estimates);
    if filtered.len() < opts.min_pairs {
        return Err(HydraulicsError::InsufficientOverlap {
            pairs: filtered.len(),
            need: opts.min_pairs,
        });
    }
    let area_raw = filtered.iter().sum::<f64>() / filtered.len() as f64;
    Ok(PlungerAreaEstimate {
        area_raw,
        area_catalog: catalog.nearest_area(area_raw),
        pairs_used: filtered.len(),
    })
}

/// Discards values outside 1.5 IQR of the quartiles (near-singular pairs make
/// the closed form explode).
fn iqr_filter(values: &mut Vec<f64>) -> Vec<f64> {
    if values.len() < 4 {
        return values.clone();
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quartile = |q: f64| -> f64 {
        let pos = q * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        values[lo] * (1.0 - frac) + values[hi] * frac
    };
    let q1 = quartile(0.25);
    let q3 = quartile(0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    values
        .iter()
        .copied()
        .filter(|v| *v >= lo && *v <= hi)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_pressure_zero_force() {
        let f = cylinder_force(0.02, 0.008, &PressurePair::default()).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn force_arithmetic() {
        // A_p*p1 - (A_p - A_r)*p2 = 2e5 - 0.012*5e6
        let f = cylinder_force(
            0.02,
            0.008,
            &PressurePair {
                p1: 1.0e7,
                p2: 5.0e6,
            },
        )
        .unwrap();
        assert_relative_eq!(f, 1.4e5, max_relative = 1e-12);
    }

    #[test]
    fn equal_pressures_leave_rod_area_term() {
        let p = 3.7e6;
        let f = cylinder_force(0.02, 0.008, &PressurePair { p1: p, p2: p }).unwrap();
        assert_relative_eq!(f, 0.008 * p, max_relative = 1e-12);
    }

    #[test]
    fn bad_areas_rejected() {
        assert!(matches!(
            cylinder_force(0.008, 0.02, &PressurePair::default()),
            Err(HydraulicsError::InvalidGeometry { .. })
        ));
    }

    proptest! {
        #[test]
        fn force_linear_in_pressures(
            p1 in 0.0_f64..3.0e7,
            p2 in 0.0_f64..3.0e7,
            k in 0.1_f64..5.0,
        ) {
            let a = cylinder_force(0.02, 0.008, &PressurePair { p1, p2 }).unwrap();
            let b = cylinder_force(0.02, 0.008, &PressurePair { p1: k * p1, p2: k * p2 }).unwrap();
            prop_assert!((k * a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn torque_zero_at_zero_pressure_and_linear() {
        let geom = crate::kinematics::tests::test_geometry();
        let q = JointAngles::new(0.4, -1.2, -0.3, 0.0);
        let zero = measured_joint_torque(&geom, ArmJoint::Boom, &q, &PressurePair::default()).unwrap();
        assert_eq!(zero, 0.0);
        let p = PressurePair { p1: 8.0e6, p2: 2.0e6 };
        let one = measured_joint_torque(&geom, ArmJoint::Boom, &q, &p).unwrap();
        let double = measured_joint_torque(
            &geom,
            ArmJoint::Boom,
            &q,
            &PressurePair { p1: 2.0 * p.p1, p2: 2.0 * p.p2 },
        )
        .unwrap();
        assert_relative_eq!(2.0 * one, double, max_relative = 1e-12);
    }

    #[test]
    fn catalog_snaps_to_nearest_bore() {
        let catalog = CylinderCatalog::standard();
        let area_110 = std::f64::consts::PI * 0.055 * 0.055;
        assert_relative_eq!(catalog.nearest_area(area_110 * 1.02), area_110, max_relative = 1e-12);
        assert_relative_eq!(catalog.nearest_area(area_110 * 0.97), area_110, max_relative = 1e-12);
    }

    #[test]
    fn catalog_requires_increasing_positive_bores() {
        assert!(CylinderCatalog::new(vec![0.1, 0.1]).is_err());
        assert!(CylinderCatalog::new(vec![-0.1]).is_err());
        assert!(CylinderCatalog::new(vec![]).is_err());
    }

    #[test]
    fn catalog_file_parses_millimetres_and_comments() {
        let dir = std::env::temp_dir().join(format!("hydrarm_catalog_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bores.txt");
        std::fs::write(&path, "# custom bores\n90\n110 # common size\n140\n").unwrap();
        let catalog = CylinderCatalog::load(&path).unwrap();
        assert_eq!(catalog.bores(), &[0.09, 0.11, 0.14]);
        std::fs::write(&path, "90\nnot-a-number\n").unwrap();
        assert!(matches!(
            CylinderCatalog::load(&path),
            Err(HydraulicsError::Catalog { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn single_pair_closed_form_at_aligned_angle() {
        // one noiseless pair with the joint angle equal to the payload offset:
        // cos term is 1 and the closed form reduces to hand arithmetic
        let geom = crate::kinematics::tests::test_geometry();
        let joint = ArmJoint::Boom;
        let angle = 0.4_f64;
        let attachment = PayloadAttachment {
            radius: 6.0,
            angle_offset: 0.4,
        };
        let mass = 500.0;
        let a_p_true = geom.areas.boom.plunger;
        let a_r = geom.areas.boom.rod;
        let eta = sensitivity(geom.linkage.get(joint), angle).unwrap();
        // unloaded: some baseline force; loaded: baseline + payload torque
        let tau_wo = -1.5e5;
        let tau_w = tau_wo + GRAVITY * attachment.radius * mass;
        let back = 5.0e5;
        let make_pressures = |tau: f64| -> PressurePair {
            let force = tau / eta;
            if force >= 0.0 {
                PressurePair {
                    p1: (force + (a_p_true - a_r) * back) / a_p_true,
                    p2: back,
                }
            } else {
                PressurePair {
                    p1: back,
                    p2: (a_p_true * back - force) / (a_p_true - a_r),
                }
            }
        };
        let p_wo = make_pressures(tau_wo);
        let p_w = make_pressures(tau_w);
        let numer = a_r * eta * (p_wo.p2 - p_w.p2)
            + GRAVITY * attachment.radius * mass * (angle - attachment.angle_offset).cos();
        let denom = eta * ((p_w.p1 - p_w.p2) - (p_wo.p1 - p_wo.p2));
        assert_relative_eq!(numer / denom, a_p_true, max_relative = 1e-9);
    }
}
