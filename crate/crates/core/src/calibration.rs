//! The staged identification pipeline: plunger area (optional), then inertia
//! in the frequency domain, torque-dependent friction from branch gaps,
//! gravity by linear least squares, and the slew centripetal scale, in that
//! order. Produces the lumped parameter set plus a per-stage quality report.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{friction_torque, FrictionLine, FrictionTorque, JointFriction, LumpedParams};
use crate::estimation::nelder_mead;
use crate::hydraulics::{
    identify_plunger_area, measured_joint_torque, CylinderCatalog, HydraulicsError,
    PayloadAttachment, PlungerIdOptions,
};
use crate::kinematics::{ArmJoint, JointAngles, MachineGeometry, PerJoint};
use crate::signal::{
    band_power, derive_accelerations, joint_angle, joint_rate, psd, AlignedSample, Episode,
    MotionDirection, SignalError,
};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("insufficient excitation: in-band power {found:.3e} below floor {floor:.3e}")]
    InsufficientExcitation { found: f64, floor: f64 },
    #[error("too few distinct configurations: {found}, need at least {need}")]
    TooFewConfigurations { found: usize, need: usize },
    #[error("episode `{episode}` lacks the {direction:?} direction")]
    DirectionMissing {
        episode: String,
        direction: MotionDirection,
    },
    #[error("regressor ill-conditioned: condition {condition:.3e} exceeds {max:.3e}")]
    IllConditioned { condition: f64, max: f64 },
    #[error("insufficient slew: {found:.2} s above {rate:.2} rad/s, need {need:.2} s")]
    InsufficientSlew { found: f64, need: f64, rate: f64 },
    #[error("stage `{stage}` missing from the dataset bundle")]
    MissingStage { stage: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CalibrationError>,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Hydraulics(#[from] HydraulicsError),
    #[error(transparent)]
    Estimation(#[from] crate::estimation::EstimationError),
    #[error("manifest `{path}`: {reason}")]
    Manifest { path: String, reason: String },
}

/// Pipeline tuning: band, deadband, validators.
#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub band: (f64, f64),
    pub deadband: f64,
    pub accel_window: usize,
    /// Simplex convergence: diameter below `nm_tol` times the search scale.
    pub nm_tol: f64,
    pub nm_max_iter: usize,
    /// Gravity regressor condition limit.
    pub condition_max: f64,
    /// Excitation floors for the inertia stage.
    pub accel_band_floor: f64,
    pub torque_band_floor: f64,
    /// Sustained-slew validator for the centripetal stage.
    pub slew_rate_min: f64,
    pub slew_duration_min: f64,
    pub plunger: PlungerIdOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            band: (0.5, 3.0),
            deadband: 0.01,
            accel_window: 5,
            nm_tol: 1e-4,
            nm_max_iter: 500,
            condition_max: 1.0e5,
            accel_band_floor: 1.0e-10,
            torque_band_floor: 1.0e-6,
            slew_rate_min: 0.2,
            slew_duration_min: 2.0,
            plunger: PlungerIdOptions::default(),
        }
    }
}

/// Per-stage quality record.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub stage: &'static str,
    pub joint: Option<ArmJoint>,
    pub residual_rms_before: f64,
    pub residual_rms_after: f64,
    /// Stage-specific quality metric: band-power ratio for inertia, gap-fit
    /// R^2 for friction, regressor condition for gravity, slewing residual
    /// ratio for centripetal, raw-over-catalog area for the plunger.
    pub metric_name: &'static str,
    pub metric_value: f64,
    pub warnings: Vec<String>,
}

/// The calibration result bundle: stages in execution order, datasets used,
/// and the identified parameters.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub stages: Vec<StageRecord>,
    pub datasets: Vec<String>,
    pub params: LumpedParams,
}

impl CalibrationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("calibration report\n");
        out.push_str(&format!("machine_id: {}\n", self.params.machine_id));
        out.push_str(&format!("calibrated_at: {}\n", self.params.calibrated_at));
        out.push_str(&format!("datasets: {}\n", self.datasets.len()));
        for record in &self.stages {
            let joint = record
                .joint
                .map(|j| format!(" [{j}]"))
                .unwrap_or_default();
            out.push_str(&format!(
                "stage {}{}: residual rms {:.3} -> {:.3} N*m, {} = {:.4}\n",
                record.stage,
                joint,
                record.residual_rms_before,
                record.residual_rms_after,
                record.metric_name,
                record.metric_value
            ));
            for w in &record.warnings {
                out.push_str(&format!("  warning: {w}\n"));
            }
        }
        out
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.stages.iter().enumerate() {
            let joint = r.joint.map(|j| format!(".{j}")).unwrap_or_default();
            let key = format!("stage_{i}_{}{}", r.stage, joint);
            out.push_str(&format!("{key}.rms_before={}\n", r.residual_rms_before));
            out.push_str(&format!("{key}.rms_after={}\n", r.residual_rms_after));
            out.push_str(&format!("{key}.{}={}\n", r.metric_name, r.metric_value));
        }
        out
    }
}

/// Aligned view of one episode with measured torques for one joint.
struct JointSeries {
    name: String,
    samples: Vec<AlignedSample>,
    tau: Vec<f64>,
    accel_base: Vec<f64>,
    rate_hz: f64,
}

fn joint_series(
    episode: &Episode,
    geom: &MachineGeometry,
    joint: ArmJoint,
    accel_window: usize,
) -> Result<JointSeries, CalibrationError> {
    let aligned = derive_accelerations(episode, accel_window)?;
    let mut tau = Vec::with_capacity(aligned.len());
    let mut accel = Vec::with_capacity(aligned.len());
    for s in &aligned {
        tau.push(measured_joint_torque(geom, joint, &s.q, s.pressures.get(joint))?);
        accel.push(crate::dynamics::base_frame_accel(s, joint));
    }
    Ok(JointSeries {
        name: episode.meta.note.clone(),
        samples: aligned,
        tau,
        accel_base: accel,
        rate_hz: episode.rate_hz,
    })
}

fn inertia_basis(geom: &MachineGeometry, joint: ArmJoint, q: &JointAngles) -> Vec<f64> {
    match joint {
        ArmJoint::Boom => {
            let (lb, ls) = (geom.l_boom, geom.l_stick);
            vec![
                1.0,
                q.stick.cos(),
                q.stick.sin(),
                2.0 * lb * (q.stick + q.bucket).cos() + 2.0 * ls * q.bucket.cos(),
                2.0 * lb * (q.stick + q.bucket).sin() + 2.0 * ls * q.bucket.sin(),
            ]
        }
        ArmJoint::Stick => vec![1.0, q.bucket.cos(), q.bucket.sin()],
    }
}

fn set_inertia(params: &mut LumpedParams, joint: ArmJoint, coeffs: &[f64]) {
    match joint {
        ArmJoint::Boom => params.boom_inertia.copy_from_slice(coeffs),
        ArmJoint::Stick => params.stick_inertia.copy_from_slice(coeffs),
    }
}

/// Frequency-domain inertia identification: minimizes the in-band power of
/// the residual torque across all episodes with the simplex optimizer,
/// initialized from a coarse constant-inertia line search.
pub fn calibrate_inertia(
    episodes: &[Episode],
    geom: &MachineGeometry,
    joint: ArmJoint,
    opts: &CalibrationOptions,
) -> Result<(Vec<f64>, StageRecord), CalibrationError> {
    if episodes.is_empty() {
        return Err(CalibrationError::MissingStage {
            stage: format!("inertia.{joint}"),
        });
    }
    let dim = match joint {
        ArmJoint::Boom => 5,
        ArmJoint::Stick => 3,
    };
    // precompute per-episode torque and regressor series
    let mut series = Vec::new();
    for ep in episodes {
        let js = joint_series(ep, geom, joint, opts.accel_window)?;
        let basis: Vec<Vec<f64>> = js
            .samples
            .iter()
            .zip(js.accel_base.iter())
            .map(|(s, &a)| {
                let q = crate::dynamics::model_angles(geom, &s.q);
                inertia_basis(geom, joint, &q).iter().map(|b| b * a).collect()
            })
            .collect();
        series.push((js, basis));
    }
    // excitation validation
    let (lo, hi) = opts.band;
    let mut accel_power = 0.0;
    let mut torque_power = 0.0;
    for (js, _) in &series {
        if js.tau.len() >= 64 {
            accel_power += band_power(&psd(&js.accel_base, js.rate_hz)?, lo, hi)?;
            torque_power += band_power(&psd(&js.tau, js.rate_hz)?, lo, hi)?;
        }
    }
    if accel_power < opts.accel_band_floor {
        return Err(CalibrationError::InsufficientExcitation {
            found: accel_power,
            floor: opts.accel_band_floor,
        });
    }
    if torque_power < opts.torque_band_floor {
        return Err(CalibrationError::InsufficientExcitation {
            found: torque_power,
            floor: opts.torque_band_floor,
        });
    }
    let objective = |coeffs: &[f64]| -> f64 {
        let mut total = 0.0;
        for (js, basis) in &series {
            if js.tau.len() < 64 {
                continue;
            }
            let residual: Vec<f64> = js
                .tau
                .iter()
                .zip(basis.iter())
                .map(|(t, b)| t - b.iter().zip(coeffs.iter()).map(|(x, c)| x * c).sum::<f64>())
                .collect();
            if let Ok(est) = psd(&residual, js.rate_hz) {
                if let Ok(p) = band_power(&est, lo, hi) {
                    total += p;
                }
            }
        }
        total
    };
    let before = objective(&vec![0.0; dim]);
    // coarse constant-inertia line search fixes the simplex scale
    let mut best_scale = 1.0e3;
    let mut best_value = f64::INFINITY;
    for exp in 0..14 {
        let candidate = 10.0_f64.powf(2.0 + 0.5 * exp as f64);
        let mut probe = vec![0.0; dim];
        probe[0] = candidate;
        let v = objective(&probe);
        if v < best_value {
            best_value = v;
            best_scale = candidate;
        }
    }
    let nm = nelder_mead(&objective, &vec![0.0; dim], best_scale, opts.nm_tol, opts.nm_max_iter)?;
    let after = nm.f_min;
    let mut warnings = Vec::new();
    if !nm.converged {
        warnings.push(format!("simplex stopped at the {}-iteration cap", opts.nm_max_iter));
    }
    let record = StageRecord {
        stage: "inertia",
        joint: Some(joint),
        residual_rms_before: before.sqrt(),
        residual_rms_after: after.sqrt(),
        metric_name: "band_power_ratio",
        metric_value: if before > 0.0 { after / before } else { 0.0 },
        warnings,
    };
    Ok((nm.x, record))
}

struct BranchFits {
    raise: Vec<f64>,
    lower: Vec<f64>,
    angle_lo: f64,
    angle_hi: f64,
}

fn fit_branches(
    js: &JointSeries,
    joint: ArmJoint,
    params_so_far: &LumpedParams,
    geom: &MachineGeometry,
    deadband: f64,
) -> Result<BranchFits, CalibrationError> {
    let mut raise: (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut lower: (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    for ((s, &tau), &accel) in js.samples.iter().zip(js.tau.iter()).zip(js.accel_base.iter()) {
        let omega = joint_rate(&s.qd, joint);
        let q = crate::dynamics::model_angles(geom, &s.q);
        let (inertia, _) = crate::dynamics::inertia_coefficient(params_so_far, geom, joint, &q);
        let compensated = tau - inertia * accel;
        let angle = joint_angle(&s.q, joint);
        match crate::signal::moving_direction(omega, deadband) {
            Some(MotionDirection::Raise) => {
                raise.0.push(angle);
                raise.1.push(compensated);
            }
            Some(MotionDirection::Lower) => {
                lower.0.push(angle);
                lower.1.push(compensated);
            }
            None => {}
        }
    }
    let min_samples = 20;
    if raise.0.len() < min_samples {
        return Err(CalibrationError::DirectionMissing {
            episode: js.name.clone(),
            direction: MotionDirection::Raise,
        });
    }
    if lower.0.len() < min_samples {
        return Err(CalibrationError::DirectionMissing {
            episode: js.name.clone(),
            direction: MotionDirection::Lower,
        });
    }
    let min_of = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max_of = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let angle_lo = min_of(&raise.0).max(min_of(&lower.0));
    let angle_hi = max_of(&raise.0).min(max_of(&lower.0));
    if !(angle_lo < angle_hi) {
        return Err(CalibrationError::DirectionMissing {
            episode: js.name.clone(),
            direction: MotionDirection::Lower,
        });
    }
    let raise_fit = crate::signal::polyfit(&raise.0, &raise.1, 2)?;
    let lower_fit = crate::signal::polyfit(&lower.0, &lower.1, 2)?;
    Ok(BranchFits {
        raise: raise_fit,
        lower: lower_fit,
        angle_lo,
        angle_hi,
    })
}

/// Friction identification from branch separation: per configuration the
/// raising and lowering torque curves are fitted with second-order
/// polynomials, the half-gap between them is sampled over the shared angle
/// range, and a line in the measured torque is regressed per direction under
/// the symmetric-split convention.
pub fn calibrate_friction(
    episodes: &[Episode],
    geom: &MachineGeometry,
    joint: ArmJoint,
    params_so_far: &LumpedParams,
    opts: &CalibrationOptions,
) -> Result<(JointFriction, StageRecord), CalibrationError> {
    if episodes.is_empty() {
        return Err(CalibrationError::MissingStage {
            stage: format!("friction.{joint}"),
        });
    }
    let mut configs: Vec<(f64, f64)> = Vec::new();
    let mut half_gaps: Vec<f64> = Vec::new();
    let mut mean_torque: Vec<f64> = Vec::new();
    let mut warnings = Vec::new();
    for ep in episodes {
        let js = joint_series(ep, geom, joint, opts.accel_window)?;
        // configuration = mean pose of the two non-swept joints
        let (mut c1, mut c2) = (0.0, 0.0);
        for s in &js.samples {
            match joint {
                ArmJoint::Boom => {
                    c1 += s.q.stick;
                    c2 += s.q.bucket;
                }
                ArmJoint::Stick => {
                    c1 += s.q.boom;
                    c2 += s.q.bucket;
                }
            }
        }
        let n = js.samples.len().max(1) as f64;
        configs.push((c1 / n, c2 / n));
        let fits = fit_branches(&js, joint, params_so_far, geom, opts.deadband)?;
        // sample the interior of the shared range, away from the fit edges
        // where the truncation error of the second-order fits peaks
        let k = 21;
        let span = fits.angle_hi - fits.angle_lo;
        let (lo, hi) = (fits.angle_lo + 0.12 * span, fits.angle_hi - 0.12 * span);
        for i in 0..k {
            let angle = lo + (hi - lo) * i as f64 / (k - 1) as f64;
            let tau_raise = crate::signal::polyval(&fits.raise, angle);
            let tau_lower = crate::signal::polyval(&fits.lower, angle);
            half_gaps.push(0.5 * (tau_lower - tau_raise));
            mean_torque.push(0.5 * (tau_lower + tau_raise));
        }
    }
    let distinct = count_distinct_configs(&configs, 2.0_f64.to_radians());
    if distinct < 3 {
        return Err(CalibrationError::TooFewConfigurations {
            found: distinct,
            need: 3,
        });
    }
    if distinct < 4 {
        warnings.push(format!("only {distinct} distinct configurations; four recommended"));
    }
    warnings.push("per-direction attribution: symmetric split of the branch gap".to_string());
    // half-gap against the mean measured torque; branch-fit truncation errors
    // enter both branches alike and cancel out of the abscissa
    let gap_line = crate::signal::polyfit(&mean_torque, &half_gaps, 1)?;
    let line = FrictionLine {
        slope: gap_line[1],
        offset: gap_line[0],
    };
    // the fitted law must oppose motion over the observed torque range
    let tau_min = mean_torque.iter().copied().fold(f64::INFINITY, f64::min);
    let tau_max = mean_torque.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for bound in [tau_min, tau_max] {
        let deficit = line.slope * bound + line.offset;
        if deficit < 0.0 {
            warnings.push(format!(
                "fitted friction assists motion at measured torque {bound:.0} N*m (deficit {deficit:.0})"
            ));
        }
    }
    let friction = JointFriction {
        raise: line,
        lower: line,
    };
    // residual metric: half-gap scatter around the fitted line
    let n = half_gaps.len() as f64;
    let before = (half_gaps.iter().map(|y| y * y).sum::<f64>() / n).sqrt();
    let after = (mean_torque
        .iter()
        .zip(half_gaps.iter())
        .map(|(x, y)| {
            let e = y - crate::signal::polyval(&gap_line, *x);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let r_squared = if before > 0.0 {
        1.0 - (after * after) / (before * before)
    } else {
        1.0
    };
    let record = StageRecord {
        stage: "friction",
        joint: Some(joint),
        residual_rms_before: before,
        residual_rms_after: after,
        metric_name: "gap_fit_r_squared",
        metric_value: r_squared,
        warnings,
    };
    Ok((friction, record))
}

fn count_distinct_configs(configs: &[(f64, f64)], tol: f64) -> usize {
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for &(a, b) in configs {
        if !distinct
            .iter()
            .any(|&(x, y)| (x - a).abs() < tol && (y - b).abs() < tol)
        {
            distinct.push((a, b));
        }
    }
    distinct.len()
}

fn gravity_basis(joint: ArmJoint, q: &JointAngles) -> Vec<f64> {
    let t1 = q.boom;
    let t12 = t1 + q.stick;
    let t123 = t12 + q.bucket;
    match joint {
        ArmJoint::Boom => vec![t1.cos(), t1.sin(), t12.cos(), t12.sin(), t123.cos(), t123.sin()],
        ArmJoint::Stick => vec![t12.cos(), t12.sin(), t123.cos(), t123.sin()],
    }
}

/// Gravity identification: linear least squares of the trigonometric
/// regressors against inertia- and friction-compensated torques, static
/// samples excluded, solved by orthogonal factorization with a condition
/// report.
pub fn calibrate_gravity(
    episodes: &[Episode],
    geom: &MachineGeometry,
    joint: ArmJoint,
    params_so_far: &LumpedParams,
    opts: &CalibrationOptions,
) -> Result<(Vec<f64>, StageRecord), CalibrationError> {
    if episodes.is_empty() {
        return Err(CalibrationError::MissingStage {
            stage: format!("gravity.{joint}"),
        });
    }
    let dim = match joint {
        ArmJoint::Boom => 6,
        ArmJoint::Stick => 4,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for ep in episodes {
        let js = joint_series(ep, geom, joint, opts.accel_window)?;
        for ((s, &tau), &accel) in js.samples.iter().zip(js.tau.iter()).zip(js.accel_base.iter()) {
            let omega = joint_rate(&s.qd, joint);
            let friction = match friction_torque(params_so_far, joint, tau, omega, opts.deadband) {
                FrictionTorque::Moving(v) => v,
                FrictionTorque::NotMoving => continue,
            };
            let q = crate::dynamics::model_angles(geom, &s.q);
            let (inertia, _) = crate::dynamics::inertia_coefficient(params_so_far, geom, joint, &q);
            targets.push(tau - inertia * accel - friction);
            rows.push(gravity_basis(joint, &q));
        }
    }
    if rows.len() < dim * 4 {
        return Err(CalibrationError::IllConditioned {
            condition: f64::INFINITY,
            max: opts.condition_max,
        });
    }
    let design = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let rhs = DVector::from_column_slice(&targets);
    let svd = design.svd(true, true);
    let condition = svd.singular_values.max() / svd.singular_values.min().max(f64::MIN_POSITIVE);
    if condition > opts.condition_max {
        return Err(CalibrationError::IllConditioned {
            condition,
            max: opts.condition_max,
        });
    }
    let coeffs = svd.solve(&rhs, 0.0).map_err(|_| CalibrationError::IllConditioned {
        condition,
        max: opts.condition_max,
    })?;
    let n = targets.len() as f64;
    let before = (targets.iter().map(|t| t * t).sum::<f64>() / n).sqrt();
    let after = {
        let mut ss = 0.0;
        for (row, t) in rows.iter().zip(targets.iter()) {
            let fit: f64 = row.iter().zip(coeffs.iter()).map(|(r, c)| r * c).sum();
            ss += (t - fit) * (t - fit);
        }
        (ss / n).sqrt()
    };
    let record = StageRecord {
        stage: "gravity",
        joint: Some(joint),
        residual_rms_before: before,
        residual_rms_after: after,
        metric_name: "condition",
        metric_value: condition,
        warnings: Vec::new(),
    };
    Ok((coeffs.iter().copied().collect(), record))
}

/// One-dimensional least squares for the slew centripetal scale on residuals
/// after gravity, inertia, and friction compensation.
pub fn calibrate_centripetal(
    episodes: &[Episode],
    geom: &MachineGeometry,
    params_so_far: &LumpedParams,
    opts: &CalibrationOptions,
) -> Result<(f64, StageRecord), CalibrationError> {
    if episodes.is_empty() {
        return Err(CalibrationError::MissingStage {
            stage: "centripetal".to_string(),
        });
    }
    let joint = ArmJoint::Boom;
    let mut slew_time = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut slew_residuals: Vec<(f64, f64)> = Vec::new();
    let unit = LumpedParams {
        slew_scale: 1.0,
        ..params_so_far.clone()
    };
    for ep in episodes {
        let js = joint_series(ep, geom, joint, opts.accel_window)?;
        let dt = 1.0 / js.rate_hz;
        for ((s, &tau), &accel) in js.samples.iter().zip(js.tau.iter()).zip(js.accel_base.iter()) {
            if s.qd.cab_rate.abs() > opts.slew_rate_min {
                slew_time += dt;
            }
            let omega = joint_rate(&s.qd, joint);
            let friction = match friction_torque(params_so_far, joint, tau, omega, opts.deadband) {
                FrictionTorque::Moving(v) => v,
                FrictionTorque::NotMoving => continue,
            };
            let q = crate::dynamics::model_angles(geom, &s.q);
            let gravity = crate::dynamics::gravity_torque(params_so_far, joint, &q);
            let (inertia, _) = crate::dynamics::inertia_coefficient(params_so_far, geom, joint, &q);
            let residual = tau - gravity - inertia * accel - friction;
            let regressor = crate::dynamics::centripetal_torque(&unit, &q, s.qd.cab_rate);
            num += regressor * residual;
            den += regressor * regressor;
            if s.qd.cab_rate.abs() > opts.slew_rate_min {
                slew_residuals.push((residual, regressor));
            }
        }
    }
    if slew_time < opts.slew_duration_min {
        return Err(CalibrationError::InsufficientSlew {
            found: slew_time,
            need: opts.slew_duration_min,
            rate: opts.slew_rate_min,
        });
    }
    let scale = if den > 0.0 { num / den } else { 0.0 };
    let n = slew_residuals.len().max(1) as f64;
    let before = (slew_residuals.iter().map(|(r, _)| r * r).sum::<f64>() / n).sqrt();
    let after = (slew_residuals
        .iter()
        .map(|(r, g)| {
            let e = r - scale * g;
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let record = StageRecord {
        stage: "centripetal",
        joint: None,
        residual_rms_before: before,
        residual_rms_after: after,
        metric_name: "slew_rms_ratio",
        metric_value: if before > 0.0 { after / before } else { 0.0 },
        warnings: Vec::new(),
    };
    Ok((scale, record))
}

/// Inputs for the optional plunger identification stage of one joint.
#[derive(Debug, Clone)]
pub struct PlungerInputs {
    pub loaded: Episode,
    pub unloaded: Episode,
    pub payload_kg: f64,
    pub attachment: PayloadAttachment,
}

/// The staged dataset bundle feeding the pipeline.
#[derive(Debug, Clone, Default)]
pub struct DatasetBundle {
    pub plunger: PerJoint<Option<PlungerInputs>>,
    pub inertia: PerJoint<Vec<Episode>>,
    pub friction: PerJoint<Vec<Episode>>,
    pub gravity: PerJoint<Vec<Episode>>,
    pub centripetal: Vec<Episode>,
    pub machine_id: String,
}

impl DatasetBundle {
    fn dataset_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for joint in ArmJoint::ALL {
            if let Some(p) = self.plunger.get(joint) {
                names.push(p.loaded.meta.note.clone());
                names.push(p.unloaded.meta.note.clone());
            }
        }
        let groups: [&[Episode]; 7] = [
            &self.inertia.boom,
            &self.inertia.stick,
            &self.friction.boom,
            &self.friction.stick,
            &self.gravity.boom,
            &self.gravity.stick,
            &self.centripetal,
        ];
        for eps in groups {
            for e in eps {
                names.push(e.meta.note.clone());
            }
        }
        names
    }
}

/// Loads a dataset bundle from a manifest: `stage.joint=path` lines with
/// repeated keys accumulating episodes, plus `plunger.<joint>.*` inputs.
pub fn load_bundle(path: &Path) -> Result<DatasetBundle, CalibrationError> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibrationError::Manifest {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let dir = path.parent().map(PathBuf::from).unwrap_or_default();
    parse_bundle(&text, &dir, &path.display().to_string())
}

fn parse_bundle(text: &str, dir: &Path, origin: &str) -> Result<DatasetBundle, CalibrationError> {
    let err = |reason: String| CalibrationError::Manifest {
        path: origin.to_string(),
        reason,
    };
    let mut entries: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("line {}: expected key=value", i + 1)))?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut bundle = DatasetBundle::default();
    let load_ep = |value: &str| -> Result<Episode, CalibrationError> {
        let p = dir.join(value);
        Episode::load_csv(&p).map_err(CalibrationError::from)
    };
    let mut plunger_raw: PerJoint<std::collections::BTreeMap<String, String>> = PerJoint::default();
    for (key, value) in &entries {
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["machine_id"] => bundle.machine_id = value.clone(),
            ["inertia", j] => {
                let joint = parse_joint(j).ok_or_else(|| err(format!("unknown joint `{j}`")))?;
                bundle.inertia.get_mut(joint).push(load_ep(value)?);
            }
            ["friction", j] => {
                let joint = parse_joint(j).ok_or_else(|| err(format!("unknown joint `{j}`")))?;
                bundle.friction.get_mut(joint).push(load_ep(value)?);
            }
            ["gravity", j] => {
                let joint = parse_joint(j).ok_or_else(|| err(format!("unknown joint `{j}`")))?;
                bundle.gravity.get_mut(joint).push(load_ep(value)?);
            }
            ["centripetal"] => bundle.centripetal.push(load_ep(value)?),
            ["plunger", j, field] => {
                let joint = parse_joint(j).ok_or_else(|| err(format!("unknown joint `{j}`")))?;
                plunger_raw
                    .get_mut(joint)
                    .insert(field.to_string(), value.clone());
            }
            _ => return Err(err(format!("unknown manifest key `{key}`"))),
        }
    }
    for joint in ArmJoint::ALL {
        let raw = plunger_raw.get(joint);
        if raw.is_empty() {
            continue;
        }
        let get = |field: &str| -> Result<&String, CalibrationError> {
            raw.get(field)
                .ok_or_else(|| err(format!("plunger.{joint}.{field} missing")))
        };
        let num = |field: &str| -> Result<f64, CalibrationError> {
            get(field)?
                .parse()
                .map_err(|_| err(format!("plunger.{joint}.{field} not a number")))
        };
        *bundle.plunger.get_mut(joint) = Some(PlungerInputs {
            loaded: load_ep(get("loaded")?)?,
            unloaded: load_ep(get("unloaded")?)?,
            payload_kg: num("payload_kg")?,
            attachment: PayloadAttachment {
                radius: num("radius")?,
                angle_offset: num("angle_offset")?,
            },
        });
    }
    Ok(bundle)
}

fn parse_joint(s: &str) -> Option<ArmJoint> {
    match s {
        "boom" => Some(ArmJoint::Boom),
        "stick" => Some(ArmJoint::Stick),
        _ => None,
    }
}

/// Runs the staged pipeline in order: plunger (when present), inertia,
/// friction, gravity per joint, then the centripetal scale. Aborts at the
/// first failed stage, naming it.
pub fn run_pipeline(
    bundle: &DatasetBundle,
    geom: &MachineGeometry,
    catalog: &CylinderCatalog,
    opts: &CalibrationOptions,
) -> Result<(LumpedParams, CalibrationReport, MachineGeometry), CalibrationError> {
    let stage_err = |stage: String| {
        move |e: CalibrationError| CalibrationError::Stage {
            stage: stage.clone(),
            source: Box::new(e),
        }
    };
    let mut geom = geom.clone();
    let mut params = LumpedParams {
        machine_id: bundle.machine_id.clone(),
        ..LumpedParams::default()
    };
    let mut stages = Vec::new();
    // plunger areas first when provided
    for joint in ArmJoint::ALL {
        if let Some(inputs) = bundle.plunger.get(joint) {
            let stage = format!("plunger.{joint}");
            let estimate = identify_plunger_area(
                &geom,
                joint,
                &inputs.loaded,
                &inputs.unloaded,
                inputs.payload_kg,
                inputs.attachment,
                geom.areas.get(joint).rod,
                catalog,
                &opts.plunger,
            )
            .map_err(CalibrationError::from)
            .map_err(stage_err(stage.clone()))?;
            let previous = geom.areas.get(joint).plunger;
            geom.areas.get_mut(joint).plunger = estimate.area_catalog;
            stages.push(StageRecord {
                stage: "plunger",
                joint: Some(joint),
                residual_rms_before: previous,
                residual_rms_after: estimate.area_catalog,
                metric_name: "raw_over_catalog",
                metric_value: estimate.area_raw / estimate.area_catalog,
                warnings: Vec::new(),
            });
        }
    }
    for joint in ArmJoint::ALL {
        let stage = format!("inertia.{joint}");
        let (coeffs, record) = calibrate_inertia(bundle.inertia.get(joint), &geom, joint, opts)
            .map_err(stage_err(stage))?;
        set_inertia(&mut params, joint, &coeffs);
        stages.push(record);
    }
    for joint in ArmJoint::ALL {
        let stage = format!("friction.{joint}");
        let (friction, record) =
            calibrate_friction(bundle.friction.get(joint), &geom, joint, &params, opts)
                .map_err(stage_err(stage))?;
        *params.friction.get_mut(joint) = friction;
        stages.push(record);
    }
    for joint in ArmJoint::ALL {
        let stage = format!("gravity.{joint}");
        let (coeffs, record) = calibrate_gravity(bundle.gravity.get(joint), &geom, joint, &params, opts)
            .map_err(stage_err(stage))?;
        match joint {
            ArmJoint::Boom => params.boom_gravity.copy_from_slice(&coeffs),
            ArmJoint::Stick => params.stick_gravity.copy_from_slice(&coeffs),
        }
        stages.push(record);
    }
    {
        let (scale, record) = calibrate_centripetal(&bundle.centripetal, &geom, &params, opts)
            .map_err(stage_err("centripetal".to_string()))?;
        params.slew_scale = scale;
        stages.push(record);
    }
    let report = CalibrationReport {
        stages,
        datasets: bundle.dataset_names(),
        params: params.clone(),
    };
    Ok((params, report, geom))
}
