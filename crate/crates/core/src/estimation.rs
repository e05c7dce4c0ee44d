//! The two production estimators (live 2D blade force vector, per-episode
//! payload mass), the derivative-free simplex optimizer they share with the
//! calibration stages, and the quasistatic hypersurface baseline used for
//! benchmarking.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

use crate::dynamics::{predict_zero_load, LumpedParams};
use crate::hydraulics::measured_joint_torque;
use crate::kinematics::{
    blade_jacobian, forward_kinematics, jacobian_condition, ArmJoint, JointAngles, MachineGeometry,
    PerJoint, GRAVITY,
};
use crate::signal::{derive_accelerations, AlignedSample, Episode, SignalError};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("no valid samples: {reason}")]
    NoValidSamples { reason: String },
    #[error("optimizer did not converge within {max_iter} iterations")]
    NonConvergence { max_iter: usize },
    #[error("objective not finite at {context}")]
    NonFiniteObjective { context: String },
    #[error("baseline surface ill-conditioned: {reason}")]
    IllConditioned { reason: String },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Hydraulics(#[from] crate::hydraulics::HydraulicsError),
}

/// Shared estimator thresholds.
#[derive(Debug, Clone, Copy)]
pub struct EstimationOptions {
    /// Velocity deadband below which friction (and thus residuals) are
    /// undefined (rad/s).
    pub deadband: f64,
    /// Force estimates are invalidated above this 2-norm Jacobian condition.
    pub jacobian_condition_max: f64,
    /// Acceleration fit window (samples).
    pub accel_window: usize,
    pub nm_tol: f64,
    pub nm_max_iter: usize,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            deadband: 0.01,
            jacobian_condition_max: 50.0,
            accel_window: 5,
            nm_tol: 1e-6,
            nm_max_iter: 200,
        }
    }
}

/// One live force estimate. `direction_rad` is measured from the downward
/// gravity axis (0 = force pointing straight down), positive toward the
/// machine's forward reach. `f_ext` is the external force applied TO the
/// blade.
#[derive(Debug, Clone, Copy)]
pub struct ForceEstimate {
    pub f_ext: Vector2<f64>,
    pub magnitude: f64,
    pub direction_rad: f64,
    pub jacobian_condition: f64,
    pub valid: bool,
}

/// Per-episode payload estimate with optimizer diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct PayloadEstimate {
    pub mass_kg: f64,
    pub residual_rms: f64,
    pub samples_used: usize,
    pub optimizer_iterations: usize,
    pub runtime_s: f64,
    /// Payload inertia lever (blade distance from the boom axis) and
    /// centripetal radius (from the slew axis) averaged over the episode,
    /// recorded so the shovel-center choice stays auditable.
    pub mean_inertia_radius: f64,
    pub mean_centripetal_radius: f64,
}

/// Live 2D blade force from one aligned sample: residual torques through the
/// inverse-transpose blade Jacobian. Constant-time; flagged invalid instead of
/// failing when a joint sits inside the deadband or the pose is close to
/// singular.
pub fn estimate_force(
    params: &LumpedParams,
    geom: &MachineGeometry,
    s: &AlignedSample,
    tau_measured: &PerJoint<f64>,
    opts: &EstimationOptions,
) -> ForceEstimate {
    let q_model = crate::dynamics::model_angles(geom, &s.q);
    let jac = blade_jacobian(geom, &q_model);
    let condition = jacobian_condition(&jac);
    let invalid = |condition: f64| ForceEstimate {
        f_ext: Vector2::zeros(),
        magnitude: 0.0,
        direction_rad: 0.0,
        jacobian_condition: condition,
        valid: false,
    };
    if condition > opts.jacobian_condition_max {
        return invalid(condition);
    }
    let pred = predict_zero_load(params, geom, s, tau_measured, opts.deadband);
    let (Some(boom), Some(stick)) = (
        pred.boom.residual(tau_measured.boom),
        pred.stick.residual(tau_measured.stick),
    ) else {
        return invalid(condition);
    };
    let delta = Vector2::new(boom, stick);
    let Some(inv_t) = jac.transpose().try_inverse() else {
        return invalid(f64::INFINITY);
    };
    let f_ext = -(inv_t * delta);
    ForceEstimate {
        f_ext,
        magnitude: f_ext.norm(),
        direction_rad: f_ext.x.atan2(-f_ext.y),
        jacobian_condition: condition,
        valid: true,
    }
}

/// Payload torque regressor: measured-torque contribution per kilogram of
/// payload at the shovel center (gravity through the Jacobian, boom-axis
/// inertia lever, slew centripetal at the slew-axis radius).
fn payload_regressor(geom: &MachineGeometry, s: &AlignedSample) -> (f64, f64, f64) {
    let q_model = crate::dynamics::model_angles(geom, &s.q);
    let r = forward_kinematics(geom, &q_model);
    let jac = blade_jacobian(geom, &q_model);
    let grav_per_kg = -(jac.transpose() * Vector2::new(0.0, -GRAVITY)).x;
    let inertia_per_kg = s.qdd.boom * r.norm_squared();
    let rx_slew = r.x + geom.boom_pivot_horizontal_offset;
    let cent_per_kg = (jac.transpose() * Vector2::new(rx_slew * s.qd.cab_rate * s.qd.cab_rate, 0.0)).x;
    (grav_per_kg + inertia_per_kg + cent_per_kg, r.norm(), rx_slew)
}

/// Batch payload estimate for one episode: boom residuals against the payload
/// torque model, minimized over the scalar mass with the simplex optimizer.
pub fn estimate_payload(
    params: &LumpedParams,
    geom: &MachineGeometry,
    episode: &Episode,
    opts: &EstimationOptions,
) -> Result<PayloadEstimate, EstimationError> {
    let started = Instant::now();
    let aligned = derive_accelerations(episode, opts.accel_window)?;
    let mut residuals = Vec::new();
    let mut regressors = Vec::new();
    let mut sum_r = 0.0;
    let mut sum_rx = 0.0;
    for s in &aligned {
        if s.qd.boom.abs() <= opts.deadband {
            continue;
        }
        let tau = PerJoint {
            boom: measured_joint_torque(geom, ArmJoint::Boom, &s.q, &s.pressures.boom)?,
            stick: measured_joint_torque(geom, ArmJoint::Stick, &s.q, &s.pressures.stick)?,
        };
        let pred = predict_zero_load(params, geom, s, &tau, opts.deadband);
        let Some(delta) = pred.boom.residual(tau.boom) else {
            continue;
        };
        let (phi, r_norm, rx) = payload_regressor(geom, s);
        residuals.push(delta);
        regressors.push(phi);
        sum_r += r_norm;
        sum_rx += rx;
    }
    if residuals.is_empty() {
        return Err(EstimationError::NoValidSamples {
            reason: "boom joint never leaves the velocity deadband".to_string(),
        });
    }
    let objective = |x: &[f64]| -> f64 {
        let m = x[0];
        residuals
            .iter()
            .zip(regressors.iter())
            .map(|(d, phi)| {
                let e = d - m * phi;
                e * e
            })
            .sum()
    };
    let nm = nelder_mead(&objective, &[0.0], 500.0, opts.nm_tol, opts.nm_max_iter)?;
    if !nm.converged {
        return Err(EstimationError::NonConvergence {
            max_iter: opts.nm_max_iter,
        });
    }
    let mass = nm.x[0];
    let n = residuals.len();
    let residual_rms = (nm.f_min / n as f64).sqrt();
    Ok(PayloadEstimate {
        mass_kg: mass,
        residual_rms,
        samples_used: n,
        optimizer_iterations: nm.iterations,
        runtime_s: started.elapsed().as_secs_f64(),
        mean_inertia_radius: sum_r / n as f64,
        mean_centripetal_radius: sum_rx / n as f64,
    })
}

/// Result of the simplex descent.
#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f_min: f64,
    pub iterations: usize,
    /// False when the iteration cap stopped the search before the simplex
    /// collapsed below the tolerance.
    pub converged: bool,
}

/// Standard Nelder-Mead simplex minimization: reflection, expansion,
/// contraction, shrink. Terminates when the simplex diameter falls below
/// `tol * scale` or at the iteration cap. Deterministic for given inputs.
pub fn nelder_mead(
    objective: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    scale: f64,
    tol: f64,
    max_iter: usize,
) -> Result<NelderMeadResult, EstimationError> {
    let n = x0.len();
    assert!(n >= 1, "need at least one dimension");
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let eval = |x: &[f64]| -> Result<f64, EstimationError> {
        let f = objective(x);
        if f.is_finite() {
            Ok(f)
        } else {
            Err(EstimationError::NonFiniteObjective {
                context: format!("x = {x:?}"),
            })
        }
    };
    let mut values: Vec<f64> = simplex
        .iter()
        .map(|v| eval(v))
        .collect::<Result<_, _>>()?;
    let mut iterations = 0;
    for iter in 0..max_iter {
        iterations = iter + 1;
        // order the simplex by objective value
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalues;

        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(simplex[0].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0_f64, f64::max);
        if diameter < tol * scale.abs() {
            return Ok(NelderMeadResult {
                x: simplex[0].clone(),
                f_min: values[0],
                iterations,
                converged: true,
            });
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(worst.iter())
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_reflect = eval(&reflect)?;
        if f_reflect < values[0] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(worst.iter())
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let f_expand = eval(&expand)?;
            if f_expand < f_reflect {
                simplex[n] = expand;
                values[n] = f_expand;
            } else {
                simplex[n] = reflect;
                values[n] = f_reflect;
            }
            continue;
        }
        if f_reflect < values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_reflect;
            continue;
        }
        let contract: Vec<f64> = if f_reflect < values[n] {
            centroid
                .iter()
                .zip(reflect.iter())
                .map(|(c, r)| c + rho * (r - c))
                .collect()
        } else {
            centroid
                .iter()
                .zip(worst.iter())
                .map(|(c, w)| c + rho * (w - c))
                .collect()
        };
        let f_contract = eval(&contract)?;
        if f_contract < values[n].min(f_reflect) {
            simplex[n] = contract;
            values[n] = f_contract;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = simplex[0][j] + sigma * (simplex[i][j] - simplex[0][j]);
            }
            values[i] = eval(&simplex[i])?;
        }
    }
    // iteration cap reached: return the best vertex, flagged
    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let best = order[0];
    Ok(NelderMeadResult {
        x: simplex[best].clone(),
        f_min: values[best],
        iterations,
        converged: false,
    })
}

/// Smooth static-torque hypersurface over joint angles: least-squares tensor
/// polynomial on normalized angles, with the training bounding box kept for
/// extrapolation flagging.
#[derive(Debug, Clone)]
pub struct QuasistaticBaseline {
    coeffs: Vec<f64>,
    degree: usize,
    lo: [f64; 3],
    hi: [f64; 3],
}

const BASELINE_DEGREE: usize = 4;

fn baseline_feature_count(degree: usize) -> usize {
    // monomials u0^i u1^j u2^k with i+j+k <= degree
    (degree + 1) * (degree + 2) * (degree + 3) / 6
}

fn baseline_features(degree: usize, u: [f64; 3]) -> Vec<f64> {
    // total-degree-capped polynomial basis; full tensor products degenerate
    // when the training sweeps hold some joints near fixed values
    let mut powers: [Vec<f64>; 3] = [vec![1.0], vec![1.0], vec![1.0]];
    for axis in 0..3 {
        for p in 1..=degree {
            let prev = powers[axis][p - 1];
            powers[axis].push(prev * u[axis]);
        }
    }
    let mut feats = Vec::with_capacity(baseline_feature_count(degree));
    for i in 0..=degree {
        for j in 0..=degree - i {
            for k in 0..=degree - i - j {
                feats.push(powers[0][i] * powers[1][j] * powers[2][k]);
            }
        }
    }
    feats
}

impl QuasistaticBaseline {
    fn normalize(&self, q: &JointAngles) -> ([f64; 3], bool) {
        let angles = [q.boom, q.stick, q.bucket];
        let mut u = [0.0_f64; 3];
        let mut inside = true;
        for a in 0..3 {
            let span = (self.hi[a] - self.lo[a]).max(1e-9);
            u[a] = 2.0 * (angles[a] - self.lo[a]) / span - 1.0;
            if u[a] < -1.001 || u[a] > 1.001 {
                inside = false;
            }
        }
        (u, inside)
    }

    /// Surface value at a pose, plus an extrapolation flag (false when the
    /// query lies outside the training envelope).
    pub fn evaluate(&self, q: &JointAngles) -> (f64, bool) {
        let (u, inside) = self.normalize(q);
        let feats = baseline_features(self.degree, u);
        let value = feats.iter().zip(self.coeffs.iter()).map(|(f, c)| f * c).sum();
        (value, inside)
    }
}

/// Fits the quasistatic lookup surface from slow empty-bucket episodes:
/// measured boom torque against joint angles.
pub fn quasistatic_baseline_fit(
    episodes: &[Episode],
    geom: &MachineGeometry,
    opts: &EstimationOptions,
) -> Result<QuasistaticBaseline, EstimationError> {
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    for ep in episodes {
        let aligned = derive_accelerations(ep, opts.accel_window)?;
        for s in aligned {
            let tau = measured_joint_torque(geom, ArmJoint::Boom, &s.q, &s.pressures.boom)?;
            rows.push(([s.q.boom, s.q.stick, s.q.bucket], tau));
        }
    }
    if rows.len() < 4 * baseline_feature_count(BASELINE_DEGREE) {
        return Err(EstimationError::IllConditioned {
            reason: format!("{} samples are too few for the surface basis", rows.len()),
        });
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (angles, _) in &rows {
        for a in 0..3 {
            lo[a] = lo[a].min(angles[a]);
            hi[a] = hi[a].max(angles[a]);
        }
    }
    for a in 0..3 {
        if hi[a] - lo[a] < 1e-4 {
            // collapse the axis rather than inverting a degenerate span
            hi[a] = lo[a] + 1e-4;
        }
    }
    let surface = QuasistaticBaseline {
        coeffs: Vec::new(),
        degree: BASELINE_DEGREE,
        lo,
        hi,
    };
    let ncols = baseline_feature_count(BASELINE_DEGREE);
    let mut design = DMatrix::zeros(rows.len(), ncols);
    let mut rhs = DVector::zeros(rows.len());
    for (i, (angles, tau)) in rows.iter().enumerate() {
        let q = JointAngles::new(angles[0], angles[1], angles[2], 0.0);
        let (u, _) = surface.normalize(&q);
        for (j, f) in baseline_features(BASELINE_DEGREE, u).into_iter().enumerate() {
            design[(i, j)] = f;
        }
        rhs[i] = *tau;
    }
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv < 1e-10 * max_sv {
        return Err(EstimationError::IllConditioned {
            reason: format!(
                "surface design condition {:.3e}; pose coverage insufficient",
                max_sv / min_sv.max(f64::MIN_POSITIVE)
            ),
        });
    }
    let coeffs = svd
        .solve(&rhs, 0.0)
        .map_err(|e| EstimationError::IllConditioned { reason: e.to_string() })?;
    Ok(QuasistaticBaseline {
        coeffs: coeffs.iter().copied().collect(),
        ..surface
    })
}

/// Baseline payload estimate: per-sample mass from the static surface
/// residual over the gravity lever, averaged over the episode.
pub fn quasistatic_baseline_estimate(
    surface: &QuasistaticBaseline,
    geom: &MachineGeometry,
    episode: &Episode,
    opts: &EstimationOptions,
) -> Result<PayloadEstimate, EstimationError> {
    let started = Instant::now();
    let aligned = derive_accelerations(episode, opts.accel_window)?;
    let mut masses = Vec::new();
    let mut sum_r = 0.0;
    let mut sum_rx = 0.0;
    for s in &aligned {
        let tau = measured_joint_torque(geom, ArmJoint::Boom, &s.q, &s.pressures.boom)?;
        let (static_tau, _) = surface.evaluate(&s.q);
        let q_model = crate::dynamics::model_angles(geom, &s.q);
        let r = forward_kinematics(geom, &q_model);
        if r.x.abs() < 0.5 {
            continue;
        }
        masses.push((tau - static_tau) / (GRAVITY * r.x));
        sum_r += r.norm();
        sum_rx += r.x + geom.boom_pivot_horizontal_offset;
    }
    if masses.is_empty() {
        return Err(EstimationError::NoValidSamples {
            reason: "no usable samples for the baseline estimate".to_string(),
        });
    }
    let n = masses.len();
    let mean = masses.iter().sum::<f64>() / n as f64;
    let var = masses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n as f64;
    Ok(PayloadEstimate {
        mass_kg: mean,
        residual_rms: var.sqrt(),
        samples_used: n,
        optimizer_iterations: 0,
        runtime_s: started.elapsed().as_secs_f64(),
        mean_inertia_radius: sum_r / n as f64,
        mean_centripetal_radius: sum_rx / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_one_dimensional() {
        let f = |x: &[f64]| (x[0] - 3.0) * (x[0] - 3.0);
        let r = nelder_mead(&f, &[0.0], 1.0, 1e-8, 500).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-6, "x = {}", r.x[0]);
    }

    #[test]
    fn rosenbrock_classic_start() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a)
        };
        let r = nelder_mead(&f, &[-1.2, 1.0], 0.5, 1e-10, 2000).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "x = {:?}", r.x);
    }

    #[test]
    fn constant_objective_returns_start() {
        let f = |_: &[f64]| 7.5;
        let r = nelder_mead(&f, &[2.0, -1.0], 1.0, 1e-6, 200).unwrap();
        assert_relative_eq!(r.f_min, 7.5);
        // the simplex shrinks onto the best vertex near the start
        assert!((r.x[0] - 2.0).abs() < 1.5);
    }

    #[test]
    fn non_finite_objective_rejected() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] };
        assert!(matches!(
            nelder_mead(&f, &[0.0], 1.0, 1e-6, 100),
            Err(EstimationError::NonFiniteObjective { .. })
        ));
    }

    #[test]
    fn deterministic_given_inputs() {
        let f = |x: &[f64]| x[0] * x[0] + 0.5 * (x[1] + 2.0).powi(2);
        let a = nelder_mead(&f, &[3.0, 3.0], 1.0, 1e-9, 1000).unwrap();
        let b = nelder_mead(&f, &[3.0, 3.0], 1.0, 1e-9, 1000).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }
}
