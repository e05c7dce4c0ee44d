//! Ground-truth synthetic excavator: generates episode CSVs from known
//! physical parameters, including torque-dependent directional friction, base
//! rocking, slew centripetal effects, payloads, end-effector forces, and
//! seeded sensor noise. The oracle behind every calibration and estimation
//! test.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dynamics::{FrictionLine, JointFriction, LumpedParams};
use crate::kinematics::{
    blade_jacobian, forward_kinematics, sensitivity, ArmJoint, JointAngles, JointLimits,
    MachineGeometry, PerJoint, WorkspaceGrid, GRAVITY,
};
use crate::signal::{Episode, EpisodeMeta, PressurePair, Sample};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("scenario `{name}` infeasible: {reason}")]
    ScriptInfeasible { name: String, reason: String },
    #[error("physical parameters invalid: {reason}")]
    InvalidParams { reason: String },
    #[error("scenario script `{path}`: {reason}")]
    Script { path: String, reason: String },
}

/// Mass properties of one link. The COG components are the coefficients of
/// the torque-model expressions (local frame on the joint axis); the frame is
/// oriented so that gravity torque follows the model convention rather than
/// the drafting convention, so the sign of `cog.x` is part of the parameter,
/// not a geometric statement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPhysical {
    pub mass: f64,
    pub cog: Vector2<f64>,
    pub i_zz: f64,
}

/// Second-order base-rocking oscillator: boom-angle ripple driven by the
/// commanded boom acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RockingParams {
    pub natural_hz: f64,
    pub damping: f64,
    pub coupling: f64,
}

/// Gaussian sensor noise levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub pressure_sigma: f64,
    pub gyro_sigma: f64,
    pub angle_sigma: f64,
}

impl NoiseParams {
    pub fn none() -> Self {
        Self {
            pressure_sigma: 0.0,
            gyro_sigma: 0.0,
            angle_sigma: 0.0,
        }
    }
}

/// Simulator-only ground truth: link mass properties, friction laws, rocking
/// oscillator, and sensor noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    pub boom: LinkPhysical,
    pub stick: LinkPhysical,
    pub bucket: LinkPhysical,
    pub friction: PerJoint<JointFriction>,
    pub rocking: RockingParams,
    pub noise: NoiseParams,
    /// Chamber pressure held on the non-driving side (Pa).
    pub back_pressure: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let err = |reason: &str| SimulatorError::InvalidParams {
            reason: reason.to_string(),
        };
        for (name, link) in [("boom", &self.boom), ("stick", &self.stick), ("bucket", &self.bucket)] {
            if !(link.mass > 0.0) {
                return Err(err(&format!("{name} mass must be > 0")));
            }
            if !(link.i_zz >= 0.0) {
                return Err(err(&format!("{name} i_zz must be >= 0")));
            }
        }
        if !(self.rocking.damping > 0.0 && self.rocking.damping <= 1.0) {
            return Err(err("rocking damping ratio must be in (0, 1]"));
        }
        if !(self.rocking.natural_hz > 0.0) {
            return Err(err("rocking natural frequency must be > 0"));
        }
        if self.back_pressure < 0.0 {
            return Err(err("back pressure must be >= 0"));
        }
        Ok(())
    }

    pub fn without_noise(&self) -> Self {
        Self {
            noise: NoiseParams::none(),
            ..self.clone()
        }
    }
}

/// Gravity torque of the unloaded arm from the full per-link expressions
/// (masses, COGs and link lengths), before lumping.
pub fn gravity_torque_unlumped(
    phys: &PhysicalParams,
    geom: &MachineGeometry,
    joint: ArmJoint,
    q: &JointAngles,
) -> f64 {
    let t1 = q.boom;
    let t12 = t1 + q.stick;
    let t123 = t12 + q.bucket;
    let (bo, st, bu) = (&phys.boom, &phys.stick, &phys.bucket);
    match joint {
        ArmJoint::Boom => {
            let tau_bb = -GRAVITY * bo.mass * (bo.cog.x * t1.cos() + bo.cog.y * t1.sin());
            let tau_bs = -GRAVITY
                * st.mass
                * (st.cog.x * t12.cos() + st.cog.y * t12.sin() + geom.l_boom * t1.cos());
            let tau_bbu = -GRAVITY
                * bu.mass
                * (bu.cog.x * t123.cos()
                    + bu.cog.y * t123.sin()
                    + geom.l_boom * t1.cos()
                    + geom.l_stick * t12.cos());
            tau_bb + tau_bs + tau_bbu
        }
        ArmJoint::Stick => {
            let tau_ss = -GRAVITY * st.mass * (st.cog.x * t12.cos() + st.cog.y * t12.sin());
            let tau_sbu = -GRAVITY
                * bu.mass
                * (bu.cog.x * t123.cos() + bu.cog.y * t123.sin() + geom.l_stick * t12.cos());
            tau_ss + tau_sbu
        }
    }
}

/// Arm inertia about the joint axis from the per-link Steiner expansion,
/// before lumping (kg*m^2).
pub fn inertia_unlumped(
    phys: &PhysicalParams,
    geom: &MachineGeometry,
    joint: ArmJoint,
    q: &JointAngles,
) -> f64 {
    let (bo, st, bu) = (&phys.boom, &phys.stick, &phys.bucket);
    let (lb, ls) = (geom.l_boom, geom.l_stick);
    match joint {
        ArmJoint::Boom => {
            let d_bo2 = bo.cog.norm_squared();
            let d_st2 = lb * lb
                + st.cog.norm_squared()
                + 2.0 * st.cog.x * lb * q.stick.cos()
                + 2.0 * st.cog.y * lb * q.stick.sin();
            let d_bu2 = bu.cog.norm_squared()
                + lb * lb
                + ls * ls
                + 2.0 * bu.cog.x * lb * (q.bucket + q.stick).cos()
                + 2.0 * bu.cog.x * ls * q.bucket.cos()
                + 2.0 * bu.cog.y * lb * (q.bucket + q.stick).sin()
                + 2.0 * bu.cog.y * ls * q.bucket.sin()
                + 2.0 * lb * ls * q.stick.cos();
            bo.mass * d_bo2 + st.mass * d_st2 + bu.mass * d_bu2 + bo.i_zz + st.i_zz + bu.i_zz
        }
        ArmJoint::Stick => {
            let d_st2 = st.cog.norm_squared();
            let d_bu2 = ls * ls
                + bu.cog.norm_squared()
                + 2.0 * bu.cog.x * ls * q.bucket.cos()
                + 2.0 * bu.cog.y * ls * q.bucket.sin();
            st.mass * d_st2 + bu.mass * d_bu2 + st.i_zz + bu.i_zz
        }
    }
}

/// Per-link horizontal COG coordinate (the bracketed factor of the per-link
/// gravity expressions) and the same bracket with sines and cosines
/// exchanged, which is its response to a horizontal acceleration field.
fn link_radius_and_lateral(
    phys: &PhysicalParams,
    geom: &MachineGeometry,
    q: &JointAngles,
) -> [(f64, f64, f64); 3] {
    let t1 = q.boom;
    let t12 = t1 + q.stick;
    let t123 = t12 + q.bucket;
    let (bo, st, bu) = (&phys.boom, &phys.stick, &phys.bucket);
    let rx_bo = bo.cog.x * t1.cos() + bo.cog.y * t1.sin();
    let lat_bo = bo.cog.x * t1.sin() + bo.cog.y * t1.cos();
    let rx_st = geom.l_boom * t1.cos() + st.cog.x * t12.cos() + st.cog.y * t12.sin();
    let lat_st = geom.l_boom * t1.sin() + st.cog.x * t12.sin() + st.cog.y * t12.cos();
    let rx_bu = geom.l_boom * t1.cos()
        + geom.l_stick * t12.cos()
        + bu.cog.x * t123.cos()
        + bu.cog.y * t123.sin();
    let lat_bu = geom.l_boom * t1.sin()
        + geom.l_stick * t12.sin()
        + bu.cog.x * t123.sin()
        + bu.cog.y * t123.cos();
    [
        (bo.mass, rx_bo, lat_bo),
        (st.mass, rx_st, lat_st),
        (bu.mass, rx_bu, lat_bu),
    ]
}

/// Ground-truth slew centripetal contribution to the measured boom torque:
/// each link COG is a point mass in the rotating frame whose lateral
/// acceleration is the squared slew rate times its own horizontal radius from
/// the slew axis; the torque response per unit lateral acceleration is the
/// gravity bracket with sines and cosines exchanged.
pub fn centripetal_unlumped(
    phys: &PhysicalParams,
    geom: &MachineGeometry,
    q: &JointAngles,
    cab_rate: f64,
) -> f64 {
    let w2 = cab_rate * cab_rate;
    let d = geom.boom_pivot_horizontal_offset;
    link_radius_and_lateral(phys, geom, q)
        .iter()
        .map(|(m, rx, lat)| -m * w2 * (rx + d) * lat)
        .sum()
}

/// Analytic lumped coefficients implied by the physical parameters; the
/// reference against which calibration recovery is validated. The slew scale
/// has no closed form (the lumped centripetal model is an approximation), so
/// it is fitted over a deterministic pose grid at unit slew rate.
pub fn lump_parameters(phys: &PhysicalParams, geom: &MachineGeometry) -> LumpedParams {
    let g = GRAVITY;
    let (bo, st, bu) = (&phys.boom, &phys.stick, &phys.bucket);
    let (lb, ls) = (geom.l_boom, geom.l_stick);
    let boom_gravity = [
        -g * (bo.mass * bo.cog.x + (st.mass + bu.mass) * lb),
        -g * bo.mass * bo.cog.y,
        -g * (st.mass * st.cog.x + bu.mass * ls),
        -g * st.mass * st.cog.y,
        -g * bu.mass * bu.cog.x,
        -g * bu.mass * bu.cog.y,
    ];
    let stick_gravity = [boom_gravity[2], boom_gravity[3], boom_gravity[4], boom_gravity[5]];
    let boom_inertia = [
        bo.mass * bo.cog.norm_squared()
            + st.mass * (lb * lb + st.cog.norm_squared())
            + bu.mass * (bu.cog.norm_squared() + lb * lb + ls * ls)
            + bo.i_zz
            + st.i_zz
            + bu.i_zz,
        2.0 * lb * (st.mass * st.cog.x + bu.mass * ls),
        2.0 * lb * st.mass * st.cog.y,
        bu.mass * bu.cog.x,
        bu.mass * bu.cog.y,
    ];
    let stick_inertia = [
        st.mass * st.cog.norm_squared() + bu.mass * (ls * ls + bu.cog.norm_squared()) + st.i_zz + bu.i_zz,
        2.0 * bu.mass * ls * bu.cog.x,
        2.0 * bu.mass * ls * bu.cog.y,
    ];
    let mut params = LumpedParams {
        boom_gravity,
        stick_gravity,
        boom_inertia,
        stick_inertia,
        friction: phys.friction,
        slew_scale: 0.0,
        machine_id: String::new(),
        calibrated_at: String::new(),
    };
    // reference fit of the slew scale over the limit box
    let mut num = 0.0;
    let mut den = 0.0;
    let n = 6;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let frac = |lim: JointLimits, idx: usize| {
                    lim.min + (lim.max - lim.min) * idx as f64 / (n - 1) as f64
                };
                let q = JointAngles::new(
                    frac(geom.limits_boom, i),
                    frac(geom.limits_stick, j),
                    frac(geom.limits_bucket, k),
                    0.0,
                );
                let truth = centripetal_unlumped(phys, geom, &q, 1.0);
                let reg = crate::dynamics::centripetal_torque(
                    &LumpedParams {
                        slew_scale: 1.0,
                        ..params.clone()
                    },
                    &q,
                    1.0,
                );
                num += reg * truth;
                den += reg * reg;
            }
        }
    }
    params.slew_scale = if den > 0.0 { num / den } else { 0.0 };
    params
}

/// A timed joint-space waypoint; trajectories blend between consecutive
/// waypoints with quintic polynomials (zero velocity and acceleration at the
/// knots).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub q: JointAngles,
}

/// Constant external blade force over a time window (applied to the blade,
/// base-frame components).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceWindow {
    pub t0: f64,
    pub t1: f64,
    pub force: Vector2<f64>,
}

/// One scripted motion: waypoints, optional constant bucket payload, optional
/// external force windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScript {
    pub name: String,
    pub waypoints: Vec<Waypoint>,
    pub payload_kg: Option<f64>,
    pub forces: Vec<ForceWindow>,
}

impl ScenarioScript {
    pub fn duration(&self) -> f64 {
        self.waypoints.last().map(|w| w.t).unwrap_or(0.0)
    }

    /// Parses the plain-text schedule format:
    /// ```text
    /// name=lift_a
    /// payload=500
    /// force=2.0,6.0,0,-5689.8
    /// waypoint=0,    0.3, -1.2, -0.5, 0
    /// waypoint=4.0,  0.8, -0.9, -0.5, 0
    /// ```
    pub fn parse(text: &str, origin: &str) -> Result<Self, SimulatorError> {
        let err = |reason: String| SimulatorError::Script {
            path: origin.to_string(),
            reason,
        };
        let mut script = ScenarioScript {
            name: "script".to_string(),
            waypoints: Vec::new(),
            payload_kg: None,
            forces: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected key=value", i + 1)))?;
            let nums = |v: &str, n: usize| -> Result<Vec<f64>, SimulatorError> {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err(format!("line {}: bad number list", i + 1)))?;
                if parts.len() != n {
                    return Err(err(format!("line {}: expected {n} numbers", i + 1)));
                }
                Ok(parts)
            };
            match key.trim() {
                "name" => script.name = value.trim().to_string(),
                "payload" => {
                    script.payload_kg = Some(value.trim().parse().map_err(|_| {
                        err(format!("line {}: bad payload", i + 1))
                    })?)
                }
                "force" => {
                    let v = nums(value, 4)?;
                    script.forces.push(ForceWindow {
                        t0: v[0],
                        t1: v[1],
                        force: Vector2::new(v[2], v[3]),
                    });
                }
                "waypoint" => {
                    let v = nums(value, 5)?;
                    script.waypoints.push(Waypoint {
                        t: v[0],
                        q: JointAngles::new(v[1], v[2], v[3], v[4]),
                    });
                }
                other => return Err(err(format!("line {}: unknown key `{other}`", i + 1))),
            }
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, SimulatorError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimulatorError::Script {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn validate(&self, geom: &MachineGeometry) -> Result<(), SimulatorError> {
        let err = |reason: String| SimulatorError::ScriptInfeasible {
            name: self.name.clone(),
            reason,
        };
        if self.waypoints.len() < 2 {
            return Err(err("needs at least two waypoints".to_string()));
        }
        for pair in self.waypoints.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(err(format!("waypoint times not increasing at t = {}", pair[0].t)));
            }
        }
        for w in &self.waypoints {
            if !geom.angles_within_limits(&w.q) {
                return Err(err(format!(
                    "waypoint at t = {} violates joint limits ({:.3}, {:.3}, {:.3})",
                    w.t, w.q.boom, w.q.stick, w.q.bucket
                )));
            }
        }
        for f in &self.forces {
            if f.t1 <= f.t0 {
                return Err(err("force window must have t1 > t0".to_string()));
            }
        }
        Ok(())
    }

    /// Joint state (angle, rate, acceleration) at time t from the quintic
    /// waypoint blend; holds the end poses outside the schedule.
    fn state_at(&self, t: f64) -> (JointAngles, crate::kinematics::JointRates, JointAccels4) {
        let wps = &self.waypoints;
        if t <= wps[0].t {
            return (wps[0].q, Default::default(), JointAccels4::default());
        }
        if t >= wps[wps.len() - 1].t {
            return (wps[wps.len() - 1].q, Default::default(), JointAccels4::default());
        }
        let idx = wps.partition_point(|w| w.t <= t).saturating_sub(1);
        let (w0, w1) = (&wps[idx], &wps[idx + 1]);
        let dt = w1.t - w0.t;
        let u = (t - w0.t) / dt;
        let s = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
        let sd = 30.0 * u * u * (1.0 - u) * (1.0 - u) / dt;
        let sdd = (60.0 * u - 180.0 * u * u + 120.0 * u * u * u) / (dt * dt);
        let blend = |a: f64, b: f64| (a + (b - a) * s, (b - a) * sd, (b - a) * sdd);
        let (qb, vb, ab) = blend(w0.q.boom, w1.q.boom);
        let (qs, vs, as_) = blend(w0.q.stick, w1.q.stick);
        let (qu, vu, au) = blend(w0.q.bucket, w1.q.bucket);
        let (qc, vc, ac) = blend(w0.q.cab, w1.q.cab);
        (
            JointAngles::new(qb, qs, qu, qc),
            crate::kinematics::JointRates {
                boom: vb,
                stick: vs,
                bucket: vu,
                cab_rate: vc,
            },
            JointAccels4 {
                boom: ab,
                stick: as_,
                bucket: au,
                cab: ac,
            },
        )
    }
}

/// Commanded accelerations along the script (bucket and cab carry no torque
/// model but keep the blend bookkeeping uniform).
#[derive(Debug, Clone, Copy, Default)]
struct JointAccels4 {
    boom: f64,
    stick: f64,
    #[allow(dead_code)]
    bucket: f64,
    #[allow(dead_code)]
    cab: f64,
}

/// Damped oscillator state advanced by an exact zero-order-hold step.
struct RockingState {
    xi: f64,
    xi_dot: f64,
    omega: f64,
    zeta: f64,
    coupling: f64,
}

impl RockingState {
    fn new(p: &RockingParams) -> Self {
        Self {
            xi: 0.0,
            xi_dot: 0.0,
            omega: 2.0 * PI * p.natural_hz,
            zeta: p.damping,
            coupling: p.coupling,
        }
    }

    fn accel(&self, drive: f64) -> f64 {
        -2.0 * self.zeta * self.omega * self.xi_dot - self.omega * self.omega * self.xi
            + self.coupling * drive
    }

    /// Exact solution over one step with the drive held constant.
    fn step(&mut self, drive: f64, dt: f64) {
        let w = self.omega;
        let z = self.zeta;
        let u = self.coupling * drive / (w * w); // steady-state deflection
        let x0 = self.xi - u;
        let v0 = self.xi_dot;
        let wd2 = w * w * (1.0 - z * z);
        if wd2 > 1e-12 {
            let wd = wd2.sqrt();
            let e = (-z * w * dt).exp();
            let (swd, cwd) = ((wd * dt).sin(), (wd * dt).cos());
            let x = e * (x0 * cwd + (v0 + z * w * x0) / wd * swd);
            let v = e * (v0 * cwd - (w * w * x0 + z * w * v0) / wd * swd);
            self.xi = x + u;
            self.xi_dot = v;
        } else {
            // critically damped limit: x(t) = e^{-wt} (x0 + (v0 + w x0) t)
            let e = (-w * dt).exp();
            self.xi = e * (x0 + (v0 + w * x0) * dt) + u;
            self.xi_dot = e * ((v0 + w * x0) - w * (x0 + (v0 + w * x0) * dt));
        }
    }
}

fn payload_torque(
    geom: &MachineGeometry,
    q_model: &JointAngles,
    accel_boom_base: f64,
    cab_rate: f64,
    mass: f64,
) -> PerJoint<f64> {
    let r = forward_kinematics(geom, q_model);
    let jac = blade_jacobian(geom, q_model);
    let grav = Vector2::new(0.0, -GRAVITY * mass);
    let rx_slew = r.x + geom.boom_pivot_horizontal_offset;
    let cent = Vector2::new(rx_slew * mass * cab_rate * cab_rate, 0.0);
    let tau_g = -jac.transpose() * grav;
    let tau_c = jac.transpose() * cent;
    let tau_i_boom = accel_boom_base * r.norm_squared() * mass;
    PerJoint {
        boom: tau_g.x + tau_c.x + tau_i_boom,
        stick: tau_g.y + tau_c.y,
    }
}

fn external_force_torque(geom: &MachineGeometry, q_model: &JointAngles, force: Vector2<f64>) -> PerJoint<f64> {
    let jac = blade_jacobian(geom, q_model);
    let tau = -(jac.transpose() * force);
    PerJoint {
        boom: tau.x,
        stick: tau.y,
    }
}

/// Measured torque including the implicit torque-dependent friction law:
/// raising divides through (1 + slope), lowering through (1 - slope), so the
/// identified linear-in-measured-torque model is exact by construction.
fn apply_friction(tau_base: f64, omega: f64, friction: &JointFriction) -> f64 {
    if omega > 0.0 {
        let FrictionLine { slope, offset } = friction.raise;
        (tau_base - offset) / (1.0 + slope)
    } else if omega < 0.0 {
        let FrictionLine { slope, offset } = friction.lower;
        (tau_base + offset) / (1.0 - slope)
    } else {
        tau_base
    }
}

fn pressures_for_torque(
    geom: &MachineGeometry,
    joint: ArmJoint,
    q: &JointAngles,
    tau: f64,
    back_pressure: f64,
) -> Result<PressurePair, SimulatorError> {
    let eta = sensitivity(geom.linkage.get(joint), geom.linkage_angle(joint, q)).map_err(|e| {
        SimulatorError::ScriptInfeasible {
            name: "pressure inversion".to_string(),
            reason: e.to_string(),
        }
    })?;
    if eta.abs() < 1e-9 {
        return Err(SimulatorError::ScriptInfeasible {
            name: "pressure inversion".to_string(),
            reason: format!("{joint} linkage sensitivity vanishes at this pose"),
        });
    }
    let areas = geom.areas.get(joint);
    let force = tau / eta;
    let annulus = areas.plunger - areas.rod;
    Ok(if force >= 0.0 {
        PressurePair {
            p1: (force + annulus * back_pressure) / areas.plunger,
            p2: back_pressure,
        }
    } else {
        PressurePair {
            p1: back_pressure,
            p2: (areas.plunger * back_pressure - force) / annulus,
        }
    })
}

/// The full true state of one sample before sensor noise.
struct TrueState {
    t: f64,
    q: JointAngles,
    qd: crate::kinematics::JointRates,
    accel_boom: f64,
    accel_stick: f64,
    tau: PerJoint<f64>,
}

/// Sequential trajectory-plus-dynamics engine shared by the CSV emitter and
/// the internal-trace probe, so both see identical model states.
struct TrajectoryEngine<'a> {
    phys: &'a PhysicalParams,
    geom: &'a MachineGeometry,
    script: &'a ScenarioScript,
    rate_hz: f64,
    rocking: RockingState,
    index: usize,
    count: usize,
}

impl<'a> TrajectoryEngine<'a> {
    fn new(
        phys: &'a PhysicalParams,
        geom: &'a MachineGeometry,
        script: &'a ScenarioScript,
        rate_hz: f64,
    ) -> Result<Self, SimulatorError> {
        phys.validate()?;
        script.validate(geom)?;
        Ok(Self {
            phys,
            geom,
            script,
            rate_hz,
            rocking: RockingState::new(&phys.rocking),
            index: 0,
            count: (script.duration() * rate_hz).round() as usize + 1,
        })
    }

    fn next_state(&mut self) -> Option<TrueState> {
        if self.index >= self.count {
            return None;
        }
        let k = self.index;
        self.index += 1;
        let dt = 1.0 / self.rate_hz;
        let substeps = 4;
        let t = k as f64 / self.rate_hz;
        // advance the rocking oscillator to t (drive: commanded boom accel)
        if k > 0 {
            let t_prev = (k - 1) as f64 / self.rate_hz;
            for s in 0..substeps {
                let ts = t_prev + dt * s as f64 / substeps as f64;
                let (_, _, acc) = self.script.state_at(ts);
                self.rocking.step(acc.boom, dt / substeps as f64);
            }
        }
        let (q_cmd, qd_cmd, acc_cmd) = self.script.state_at(t);
        let xi_acc = self.rocking.accel(acc_cmd.boom);
        // rocking rides on the boom channel
        let q_true = JointAngles {
            boom: q_cmd.boom + self.rocking.xi,
            ..q_cmd
        };
        let qd_true = crate::kinematics::JointRates {
            boom: qd_cmd.boom + self.rocking.xi_dot,
            ..qd_cmd
        };
        let accel_boom = acc_cmd.boom + xi_acc;
        let accel_stick = accel_boom + acc_cmd.stick;
        let q_model = crate::dynamics::model_angles(self.geom, &q_true);
        // zero-load torque pieces
        let (phys, geom) = (self.phys, self.geom);
        let mut tau_base = PerJoint {
            boom: gravity_torque_unlumped(phys, geom, ArmJoint::Boom, &q_model)
                + inertia_unlumped(phys, geom, ArmJoint::Boom, &q_model) * accel_boom
                + centripetal_unlumped(phys, geom, &q_model, qd_true.cab_rate),
            stick: gravity_torque_unlumped(phys, geom, ArmJoint::Stick, &q_model)
                + inertia_unlumped(phys, geom, ArmJoint::Stick, &q_model) * accel_stick,
        };
        if let Some(mass) = self.script.payload_kg {
            let tau_pl = payload_torque(geom, &q_model, accel_boom, qd_true.cab_rate, mass);
            tau_base.boom += tau_pl.boom;
            tau_base.stick += tau_pl.stick;
        }
        for fw in &self.script.forces {
            if t >= fw.t0 && t < fw.t1 {
                let tau_f = external_force_torque(geom, &q_model, fw.force);
                tau_base.boom += tau_f.boom;
                tau_base.stick += tau_f.stick;
            }
        }
        let tau = PerJoint {
            boom: apply_friction(tau_base.boom, qd_true.boom, phys.friction.get(ArmJoint::Boom)),
            stick: apply_friction(tau_base.stick, qd_true.stick, phys.friction.get(ArmJoint::Stick)),
        };
        Some(TrueState {
            t,
            q: q_true,
            qd: qd_true,
            accel_boom,
            accel_stick,
            tau,
        })
    }
}

/// Simulates one scripted motion into an episode. Deterministic for a given
/// seed: identical inputs produce byte-identical CSV output.
pub fn simulate(
    phys: &PhysicalParams,
    geom: &MachineGeometry,
    script: &ScenarioScript,
    rate_hz: f64,
    seed: u64,
) -> Result<Episode, SimulatorError> {
    let mut engine = TrajectoryEngine::new(phys, geom, script, rate_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut samples = Vec::with_capacity(engine.count);
    while let Some(state) = engine.next_state() {
        let pressures = PerJoint {
            boom: pressures_for_torque(geom, ArmJoint::Boom, &state.q, state.tau.boom, phys.back_pressure)?,
            stick: pressures_for_torque(geom, ArmJoint::Stick, &state.q, state.tau.stick, phys.back_pressure)?,
        };
        // sensor noise, fixed draw order for determinism
        let mut draw = |sigma: f64| -> f64 {
            if sigma > 0.0 {
                sigma * normal.sample(&mut rng)
            } else {
                0.0
            }
        };
        samples.push(Sample {
            t: state.t,
            q: JointAngles::new(
                state.q.boom + draw(phys.noise.angle_sigma),
                state.q.stick + draw(phys.noise.angle_sigma),
                state.q.bucket + draw(phys.noise.angle_sigma),
                state.q.cab + draw(phys.noise.angle_sigma),
            ),
            qd: crate::kinematics::JointRates {
                boom: state.qd.boom + draw(phys.noise.gyro_sigma),
                stick: state.qd.stick + draw(phys.noise.gyro_sigma),
                bucket: state.qd.bucket + draw(phys.noise.gyro_sigma),
                cab_rate: state.qd.cab_rate + draw(phys.noise.gyro_sigma),
            },
            pressures: PerJoint {
                boom: PressurePair {
                    p1: pressures.boom.p1 + draw(phys.noise.pressure_sigma),
                    p2: pressures.boom.p2 + draw(phys.noise.pressure_sigma),
                },
                stick: PressurePair {
                    p1: pressures.stick.p1 + draw(phys.noise.pressure_sigma),
                    p2: pressures.stick.p2 + draw(phys.noise.pressure_sigma),
                },
            },
        });
    }
    Ok(Episode {
        samples,
        rate_hz,
        meta: EpisodeMeta {
            machine_id: String::new(),
            note: script.name.clone(),
            payload_kg: script.payload_kg,
        },
    })
}

/// The true (pre-noise) model states along a script: measured torques from
/// the dynamic model, base-frame accelerations, and the exact joint states.
pub struct TrueTrace {
    pub t: Vec<f64>,
    pub tau: Vec<PerJoint<f64>>,
    pub accel_boom: Vec<f64>,
    pub accel_stick: Vec<f64>,
    pub q: Vec<JointAngles>,
}

/// Runs the same engine as [`simulate`] without emitting pressures or noise
/// and returns the internal model trace; pairing it with a noiseless episode
/// checks the pressure round trip.
pub fn true_trace(
    phys: &PhysicalParams,
    geom: &MachineGeometry,
    script: &ScenarioScript,
    rate_hz: f64,
) -> Result<TrueTrace, SimulatorError> {
    let quiet = phys.without_noise();
    let mut engine = TrajectoryEngine::new(&quiet, geom, script, rate_hz)?;
    let mut trace = TrueTrace {
        t: Vec::new(),
        tau: Vec::new(),
        accel_boom: Vec::new(),
        accel_stick: Vec::new(),
        q: Vec::new(),
    };
    while let Some(state) = engine.next_state() {
        trace.t.push(state.t);
        trace.tau.push(state.tau);
        trace.accel_boom.push(state.accel_boom);
        trace.accel_stick.push(state.accel_stick);
        trace.q.push(state.q);
    }
    Ok(trace)
}

pub use presets::{preset, MachinePreset};

mod presets {
    use super::*;

    /// A bundled machine: geometry, ground-truth physics, rated lifting
    /// capacity, and the working envelope used for maps and workspace
    /// scenarios.
    #[derive(Debug, Clone)]
    pub struct MachinePreset {
        pub name: &'static str,
        pub geometry: MachineGeometry,
        pub physical: PhysicalParams,
        pub rated_capacity_kg: f64,
        pub envelope: WorkspaceGrid,
    }

    fn case250() -> MachinePreset {
        let geometry = MachineGeometry {
            l_boom: 5.8,
            l_stick: 3.0,
            blade_offset: Vector2::new(1.6, 0.0),
            linkage: PerJoint {
                boom: crate::kinematics::LinkageGeometry {
                    a: 1.2,
                    c: 2.6,
                    phi1: 0.55,
                    phi2: 0.45,
                },
                stick: crate::kinematics::LinkageGeometry {
                    a: 0.9,
                    c: 2.0,
                    phi1: 1.3,
                    phi2: 1.2,
                },
            },
            areas: PerJoint {
                boom: crate::kinematics::CylinderAreas {
                    plunger: 0.015393804002589988,
                    rod: 0.0063617251235193305,
                },
                stick: crate::kinematics::CylinderAreas {
                    plunger: 0.01227184630308513,
                    rod: 0.005026548245743669,
                },
            },
            boom_pivot_horizontal_offset: 0.35,
            limits_boom: JointLimits { min: -0.8, max: 1.05 },
            limits_stick: JointLimits { min: -2.2, max: -0.35 },
            limits_bucket: JointLimits { min: -2.5, max: 0.5 },
            cabin_pitch: 0.0,
        };
        let physical = PhysicalParams {
            boom: LinkPhysical {
                mass: 2600.0,
                cog: Vector2::new(2.45, 0.55),
                i_zz: 9500.0,
            },
            stick: LinkPhysical {
                mass: 1300.0,
                cog: Vector2::new(1.25, 0.15),
                i_zz: 1400.0,
            },
            bucket: LinkPhysical {
                mass: 900.0,
                cog: Vector2::new(0.7, 0.3),
                i_zz: 400.0,
            },
            friction: PerJoint {
                boom: JointFriction {
                    raise: FrictionLine {
                        slope: -0.03,
                        offset: 9500.0,
                    },
                    lower: FrictionLine {
                        slope: -0.027,
                        offset: 8200.0,
                    },
                },
                stick: JointFriction {
                    raise: FrictionLine {
                        slope: -0.02,
                        offset: 4200.0,
                    },
                    lower: FrictionLine {
                        slope: -0.018,
                        offset: 3800.0,
                    },
                },
            },
            rocking: RockingParams {
                natural_hz: 1.5,
                damping: 0.18,
                coupling: 0.28,
            },
            noise: NoiseParams {
                pressure_sigma: 5.0e3,
                gyro_sigma: 2.0e-3,
                angle_sigma: 5.0e-4,
            },
            back_pressure: 5.0e5,
        };
        MachinePreset {
            name: "case250",
            geometry,
            physical,
            rated_capacity_kg: 9210.0,
            envelope: WorkspaceGrid {
                x_min: 4.0,
                x_max: 9.0,
                y_min: -3.5,
                y_max: 2.5,
                nx: 21,
                ny: 21,
            },
        }
    }

    fn m545() -> MachinePreset {
        let geometry = MachineGeometry {
            l_boom: 2.8,
            l_stick: 2.1,
            blade_offset: Vector2::new(1.4, 0.0),
            linkage: PerJoint {
                boom: crate::kinematics::LinkageGeometry {
                    a: 0.7,
                    c: 1.4,
                    phi1: 0.55,
                    phi2: 0.45,
                },
                stick: crate::kinematics::LinkageGeometry {
                    a: 0.5,
                    c: 1.1,
                    phi1: 1.3,
                    phi2: 1.2,
                },
            },
            areas: PerJoint {
                boom: crate::kinematics::CylinderAreas {
                    plunger: 0.009503317777109124,
                    rod: 0.003848451000647497,
                },
                stick: crate::kinematics::CylinderAreas {
                    plunger: 0.007853981633974483,
                    rod: 0.0031172453105244723,
                },
            },
            boom_pivot_horizontal_offset: 0.25,
            limits_boom: JointLimits { min: -0.8, max: 1.05 },
            limits_stick: JointLimits { min: -2.2, max: -0.35 },
            limits_bucket: JointLimits { min: -2.5, max: 0.5 },
            cabin_pitch: 0.0,
        };
        let physical = PhysicalParams {
            boom: LinkPhysical {
                mass: 1500.0,
                cog: Vector2::new(1.2, 0.3),
                i_zz: 1400.0,
            },
            stick: LinkPhysical {
                mass: 700.0,
                cog: Vector2::new(0.9, 0.1),
                i_zz: 320.0,
            },
            bucket: LinkPhysical {
                mass: 450.0,
                cog: Vector2::new(0.55, 0.2),
                i_zz: 110.0,
            },
            friction: PerJoint {
                boom: JointFriction {
                    raise: FrictionLine {
                        slope: -0.03,
                        offset: 3200.0,
                    },
                    lower: FrictionLine {
                        slope: -0.026,
                        offset: 2800.0,
                    },
                },
                stick: JointFriction {
                    raise: FrictionLine {
                        slope: -0.02,
                        offset: 1500.0,
                    },
                    lower: FrictionLine {
                        slope: -0.019,
                        offset: 1300.0,
                    },
                },
            },
            rocking: RockingParams {
                natural_hz: 1.9,
                damping: 0.12,
                coupling: 0.35,
            },
            noise: NoiseParams {
                pressure_sigma: 5.0e3,
                gyro_sigma: 2.0e-3,
                angle_sigma: 5.0e-4,
            },
            back_pressure: 5.0e5,
        };
        MachinePreset {
            name: "m545",
            geometry,
            physical,
            rated_capacity_kg: 6000.0,
            envelope: WorkspaceGrid {
                x_min: 2.4,
                x_max: 5.6,
                y_min: -2.2,
                y_max: 1.6,
                nx: 21,
                ny: 21,
            },
        }
    }

    /// Bundled machine presets: `case250` (25 t class) and `m545` (13 t class).
    pub fn preset(name: &str) -> Option<MachinePreset> {
        match name {
            "case250" => Some(case250()),
            "m545" => Some(m545()),
            _ => None,
        }
    }
}

pub use library::{scenario_library, ScenarioBundle, PlungerPair};

mod library {
    use super::*;

    /// Loaded/unloaded motion pair for plunger-area identification plus the
    /// payload lever inputs the identification needs.
    #[derive(Debug, Clone)]
    pub struct PlungerPair {
        pub loaded: ScenarioScript,
        pub unloaded: ScenarioScript,
        pub payload_kg: f64,
        pub radius: f64,
        pub angle_offset: f64,
    }

    /// The staged calibration bundle plus evaluation suites for one machine.
    #[derive(Debug, Clone)]
    pub struct ScenarioBundle {
        pub plunger_boom: PlungerPair,
        pub inertia: PerJoint<Vec<ScenarioScript>>,
        pub friction: PerJoint<Vec<ScenarioScript>>,
        pub gravity: Vec<ScenarioScript>,
        pub centripetal: Vec<ScenarioScript>,
        pub weighing: Vec<ScenarioScript>,
        pub grading: Vec<ScenarioScript>,
        pub workspace_grid: Vec<ScenarioScript>,
        pub quasistatic: Vec<ScenarioScript>,
    }

    fn wp(t: f64, boom: f64, stick: f64, bucket: f64, cab: f64) -> Waypoint {
        Waypoint {
            t,
            q: JointAngles::new(boom, stick, bucket, cab),
        }
    }

    fn lerp(a: f64, b: f64, u: f64) -> f64 {
        a + (b - a) * u
    }

    /// Deterministic low-discrepancy sequence in [0,1).
    fn golden(i: usize) -> f64 {
        (i as f64 * 0.6180339887498949) % 1.0
    }

    fn sweep_script(
        name: String,
        joint: ArmJoint,
        lo: f64,
        hi: f64,
        fixed: JointAngles,
        leg_time: f64,
        legs: usize,
        settle: f64,
    ) -> ScenarioScript {
        let mut waypoints = Vec::new();
        let mut t = 0.0;
        let pose = |angle: f64| -> JointAngles {
            match joint {
                ArmJoint::Boom => JointAngles { boom: angle, ..fixed },
                ArmJoint::Stick => JointAngles { stick: angle, ..fixed },
            }
        };
        waypoints.push(Waypoint { t, q: pose(lo) });
        if settle > 0.0 {
            t += settle;
            waypoints.push(Waypoint { t, q: pose(lo) });
        }
        for leg in 0..legs {
            t += leg_time;
            let target = if leg % 2 == 0 { hi } else { lo };
            waypoints.push(Waypoint { t, q: pose(target) });
        }
        if settle > 0.0 {
            t += settle;
            let last = waypoints.last().unwrap().q;
            waypoints.push(Waypoint { t, q: last });
        }
        ScenarioScript {
            name,
            waypoints,
            payload_kg: None,
            forces: Vec::new(),
        }
    }

    /// Builds the staged calibration bundle and the evaluation suites for a
    /// machine preset. Every script is deterministic; the seed only shifts
    /// weighing payload masses.
    pub fn scenario_library(preset: &MachinePreset, seed: u64) -> ScenarioBundle {
        let geom = &preset.geometry;
        let (b_lo, b_hi) = (geom.limits_boom.min, geom.limits_boom.max);
        let (s_lo, s_hi) = (geom.limits_stick.min, geom.limits_stick.max);
        let (u_lo, u_hi) = (geom.limits_bucket.min, geom.limits_bucket.max);
        let mid = JointAngles::new(
            lerp(b_lo, b_hi, 0.55),
            lerp(s_lo, s_hi, 0.5),
            lerp(u_lo, u_hi, 0.55),
            0.0,
        );

        // plunger identification: slow boom sweeps, all else frozen
        let plunger_pose = JointAngles::new(0.0, lerp(s_lo, s_hi, 0.5), lerp(u_lo, u_hi, 0.55), 0.0);
        let plunger_lo = lerp(b_lo, b_hi, 0.2);
        let plunger_hi = lerp(b_lo, b_hi, 0.8);
        let plunger_script = |name: &str, payload: Option<f64>| {
            let mut s = sweep_script(
                name.to_string(),
                ArmJoint::Boom,
                plunger_lo,
                plunger_hi,
                plunger_pose,
                10.0,
                4,
                1.0,
            );
            s.payload_kg = payload;
            s
        };
        let plunger_payload = 500.0;
        // payload lever relative to the boom axis at the frozen configuration
        let lever_pose = JointAngles {
            boom: 0.0,
            ..plunger_pose
        };
        let r_blade = forward_kinematics(geom, &lever_pose);
        let plunger_boom = PlungerPair {
            loaded: plunger_script("plunger_boom_loaded", Some(plunger_payload)),
            unloaded: plunger_script("plunger_boom_unloaded", None),
            payload_kg: plunger_payload,
            radius: r_blade.norm(),
            angle_offset: -r_blade.y.atan2(r_blade.x),
        };

        // inertia: monotone raise/lower legs with acceleration bursts riding
        // on them, so gravity traversal stays below the band while the bursts
        // and the ringing they excite land inside it; configuration changes
        // between episodes
        let inertia_for = |joint: ArmJoint| -> Vec<ScenarioScript> {
            (0..12)
                .map(|i| {
                    let fa = golden(i + 1);
                    let fb = golden(2 * i + 3);
                    let fixed = match joint {
                        ArmJoint::Boom => JointAngles::new(
                            0.0,
                            lerp(s_lo + 0.1, s_hi - 0.1, fa),
                            lerp(u_lo + 0.1, u_hi - 0.1, fb),
                            0.0,
                        ),
                        ArmJoint::Stick => JointAngles::new(
                            lerp(b_lo + 0.1, b_hi - 0.1, fa),
                            0.0,
                            lerp(u_lo + 0.1, u_hi - 0.1, fb),
                            0.0,
                        ),
                    };
                    let (lo, hi) = match joint {
                        ArmJoint::Boom => (lerp(b_lo, b_hi, 0.2), lerp(b_lo, b_hi, 0.8)),
                        ArmJoint::Stick => (lerp(s_lo, s_hi, 0.2), lerp(s_lo, s_hi, 0.8)),
                    };
                    let pose = |angle: f64| match joint {
                        ArmJoint::Boom => JointAngles { boom: angle, ..fixed },
                        ArmJoint::Stick => JointAngles { stick: angle, ..fixed },
                    };
                    // monotone legs with short hard bursts that ring the base:
                    // small burst displacements keep the gravity curve from
                    // tracking into the band, the ring-down supplies most of
                    // the in-band inertia signal
                    let span = hi - lo;
                    let fast_frac = 0.08;
                    let slow_frac = (1.0 - 4.0 * fast_frac) / 4.0;
                    let mut waypoints = vec![Waypoint { t: 0.0, q: pose(lo) }];
                    let mut t = 1.0;
                    waypoints.push(Waypoint { t, q: pose(lo) });
                    for leg in 0..2 {
                        let (from, dir) = if leg == 0 { (lo, 1.0) } else { (hi, -1.0) };
                        let mut angle = from;
                        for step in 0..8 {
                            let (frac, dt) = if step % 2 == 0 {
                                (fast_frac, 0.45)
                            } else {
                                (slow_frac, 1.6)
                            };
                            angle += dir * frac * span;
                            t += dt;
                            waypoints.push(Waypoint { t, q: pose(angle) });
                        }
                        t += 2.4; // ring-down hold between legs
                        waypoints.push(Waypoint { t, q: pose(angle) });
                    }
                    ScenarioScript {
                        name: format!("inertia_{}_{:02}", joint.name(), i),
                        waypoints,
                        payload_kg: None,
                        forces: Vec::new(),
                    }
                })
                .collect()
        };

        // friction: repeated slow sweeps at four fixed configurations,
        // different velocities between legs
        let friction_for = |joint: ArmJoint| -> Vec<ScenarioScript> {
            (0..4)
                .map(|i| {
                    let f = i as f64 / 3.0;
                    let fixed = match joint {
                        ArmJoint::Boom => JointAngles::new(
                            0.0,
                            lerp(s_lo + 0.05, s_hi - 0.05, f),
                            lerp(u_lo + 0.2, u_hi - 0.2, 1.0 - f),
                            0.0,
                        ),
                        ArmJoint::Stick => JointAngles::new(
                            lerp(b_lo + 0.1, b_hi - 0.1, f),
                            0.0,
                            lerp(u_lo + 0.2, u_hi - 0.2, f),
                            0.0,
                        ),
                    };
                    let (lo, hi) = match joint {
                        ArmJoint::Boom => (lerp(b_lo, b_hi, 0.25), lerp(b_lo, b_hi, 0.8)),
                        ArmJoint::Stick => (lerp(s_lo, s_hi, 0.25), lerp(s_lo, s_hi, 0.8)),
                    };
                    let mut script = sweep_script(
                        format!("friction_{}_{:02}", joint.name(), i),
                        joint,
                        lo,
                        hi,
                        fixed,
                        6.0,
                        2,
                        0.5,
                    );
                    // two more legs at a different speed
                    let t_end = script.duration();
                    let q_hi = script.waypoints[script.waypoints.len() - 2].q;
                    let pose = |angle: f64| match joint {
                        ArmJoint::Boom => JointAngles { boom: angle, ..fixed },
                        ArmJoint::Stick => JointAngles { stick: angle, ..fixed },
                    };
                    let _ = q_hi;
                    script.waypoints.push(Waypoint {
                        t: t_end + 9.0,
                        q: pose(hi),
                    });
                    script.waypoints.push(Waypoint {
                        t: t_end + 18.0,
                        q: pose(lo),
                    });
                    script
                })
                .collect()
        };

        // gravity: multi-pose tours across the workspace, gentle blends
        let gravity: Vec<ScenarioScript> = (0..8)
            .map(|i| {
                let mut waypoints = Vec::new();
                let mut t = 0.0;
                waypoints.push(wp(
                    t,
                    lerp(b_lo + 0.05, b_hi - 0.05, golden(7 * i + 1)),
                    lerp(s_lo + 0.05, s_hi - 0.05, golden(5 * i + 2)),
                    lerp(u_lo + 0.05, u_hi - 0.05, golden(3 * i + 4)),
                    0.0,
                ));
                for k in 1..7 {
                    t += 8.0;
                    waypoints.push(wp(
                        t,
                        lerp(b_lo + 0.05, b_hi - 0.05, golden(7 * i + 1 + 11 * k)),
                        lerp(s_lo + 0.05, s_hi - 0.05, golden(5 * i + 2 + 13 * k)),
                        lerp(u_lo + 0.05, u_hi - 0.05, golden(3 * i + 4 + 17 * k)),
                        0.0,
                    ));
                }
                ScenarioScript {
                    name: format!("gravity_{i:02}"),
                    waypoints,
                    payload_kg: None,
                    forces: Vec::new(),
                }
            })
            .collect();

        // centripetal: sustained slew with the arm creeping around the middle
        // of the lifting corridor; a near-steady pose keeps the single-scale
        // fit well conditioned, the way the identification is run in practice
        let lift_lo = JointAngles::new(lerp(b_lo, b_hi, 0.25), lerp(s_lo, s_hi, 0.25), lerp(u_lo, u_hi, 0.4), 0.0);
        let lift_hi = JointAngles::new(lerp(b_lo, b_hi, 0.75), lerp(s_lo, s_hi, 0.65), lerp(u_lo, u_hi, 0.6), 0.0);
        let centripetal: Vec<ScenarioScript> = (0..3)
            .map(|i| {
                let f0 = 0.3 + 0.05 * i as f64;
                let base = JointAngles::new(
                    lerp(lift_lo.boom, lift_hi.boom, f0),
                    lerp(lift_lo.stick, lift_hi.stick, f0),
                    lerp(lift_lo.bucket, lift_hi.bucket, f0),
                    0.0,
                );
                let mut waypoints = Vec::new();
                let mut t = 0.0;
                let mut cab = 0.0;
                for k in 0..5 {
                    let creep = 0.05 * if k % 2 == 0 { 1.0 } else { -1.0 };
                    waypoints.push(wp(t, base.boom + creep, base.stick - 0.5 * creep, base.bucket, cab));
                    t += 5.5;
                    cab += if k % 2 == 0 { 2.4 } else { -2.4 };
                }
                let last = *waypoints.last().unwrap();
                waypoints.push(Waypoint {
                    t,
                    q: JointAngles { cab, ..last.q },
                });
                ScenarioScript {
                    name: format!("centripetal_{i:02}"),
                    waypoints,
                    payload_kg: None,
                    forces: Vec::new(),
                }
            })
            .collect();

        // weighing cycles: 55 episodes mixing lift styles per the protocol
        let dig = JointAngles::new(lerp(b_lo, b_hi, 0.25), lerp(s_lo, s_hi, 0.25), lerp(u_lo, u_hi, 0.4), 0.0);
        let dump = JointAngles::new(lerp(b_lo, b_hi, 0.75), lerp(s_lo, s_hi, 0.65), lerp(u_lo, u_hi, 0.6), 0.0);
        let mass_for = |i: usize| -> f64 {
            let f = golden(seed as usize % 977 + 31 * i + 7);
            (0.05 + 0.55 * f) * preset.rated_capacity_kg
        };
        let mut weighing = Vec::new();
        for i in 0..55 {
            let mass = (mass_for(i) * 10.0).round() / 10.0;
            let style = match i {
                0..=19 => "standard",
                20..=29 => "maxpower",
                30..=39 => "multijoint",
                40..=49 => "fastslew",
                _ => "short",
            };
            let name = format!("weighing_{i:02}_{style}");
            let script = match style {
                "standard" => ScenarioScript {
                    name,
                    waypoints: vec![
                        wp(0.0, dig.boom, dig.stick, dig.bucket, 0.0),
                        wp(4.0, dump.boom, dig.stick, dig.bucket, 0.0),
                        wp(8.0, dig.boom + 0.15, dig.stick, dig.bucket, 0.0),
                    ],
                    payload_kg: Some(mass),
                    forces: Vec::new(),
                },
                "maxpower" => ScenarioScript {
                    name,
                    waypoints: vec![
                        wp(0.0, dig.boom, dig.stick, dig.bucket, 0.0),
                        wp(1.6, dump.boom, dig.stick, dig.bucket, 0.0),
                        wp(3.2, dig.boom + 0.1, dig.stick, dig.bucket, 0.0),
                        wp(4.8, dump.boom - 0.1, dig.stick, dig.bucket, 0.0),
                    ],
                    payload_kg: Some(mass),
                    forces: Vec::new(),
                },
                "multijoint" => ScenarioScript {
                    name,
                    waypoints: vec![
                        wp(0.0, dig.boom, dig.stick, dig.bucket, 0.0),
                        wp(3.0, lerp(dig.boom, dump.boom, 0.6), dump.stick, dump.bucket, 0.0),
                        wp(6.0, dump.boom, lerp(dig.stick, dump.stick, 0.4), dig.bucket, 0.0),
                    ],
                    payload_kg: Some(mass),
                    forces: Vec::new(),
                },
                "fastslew" => ScenarioScript {
                    name,
                    waypoints: vec![
                        wp(0.0, dig.boom, dig.stick, dig.bucket, 0.0),
                        wp(3.5, dump.boom, lerp(dig.stick, dump.stick, 0.7), dig.bucket, 1.35),
                        wp(7.0, lerp(dig.boom, dump.boom, 0.3), dig.stick, dig.bucket, 0.1),
                    ],
                    payload_kg: Some(mass),
                    forces: Vec::new(),
                },
                _ => ScenarioScript {
                    // 0.5 s trajectory probing the lower bound
                    name,
                    waypoints: vec![
                        wp(0.0, mid.boom, mid.stick, mid.bucket, 0.0),
                        wp(0.5, mid.boom + 0.07, mid.stick, mid.bucket, 0.0),
                    ],
                    payload_kg: Some(mass),
                    forces: Vec::new(),
                },
            };
            weighing.push(script);
        }

        // grading with a suspended load: level-ish blade passes at the carry height
        let suspended = 580.0 * GRAVITY;
        let grading: Vec<ScenarioScript> = (0..5)
            .map(|i| {
                let height = -1.8 + 0.55 * i as f64;
                let t_pass = 7.0 + 1.5 * (i % 3) as f64;
                let bucket = lerp(u_lo, u_hi, 0.5);
                let x0 = lerp(preset.envelope.x_min, preset.envelope.x_max, 0.25);
                let x1 = lerp(preset.envelope.x_min, preset.envelope.x_max, 0.72);
                let path: Vec<JointAngles> = (0..=4)
                    .filter_map(|k| {
                        let x = lerp(x0, x1, k as f64 / 4.0);
                        crate::kinematics::blade_inverse_kinematics(
                            geom,
                            Vector2::new(x, height),
                            bucket,
                        )
                    })
                    .collect();
                let mut waypoints = Vec::new();
                for (k, q) in path.iter().enumerate() {
                    waypoints.push(Waypoint {
                        t: k as f64 * t_pass / path.len().max(1) as f64,
                        q: *q,
                    });
                }
                let t_end = waypoints.last().map(|w| w.t).unwrap_or(1.0);
                ScenarioScript {
                    name: format!("grading_{i:02}"),
                    waypoints,
                    payload_kg: None,
                    forces: vec![ForceWindow {
                        t0: 0.0,
                        t1: t_end + 1.0,
                        force: Vector2::new(0.0, -suspended),
                    }],
                }
            })
            .collect();

        // workspace evaluation grid: 15 gentle regional trajectories
        let workspace_grid: Vec<ScenarioScript> = (0..15)
            .map(|i| {
                let fb = (i % 5) as f64 / 4.0;
                let fs = (i / 5) as f64 / 2.0;
                let b0 = lerp(b_lo + 0.05, b_hi - 0.45, fb);
                let s0 = lerp(s_lo + 0.05, s_hi - 0.55, fs);
                let u0 = lerp(u_lo + 0.3, u_hi - 0.3, golden(i + 2));
                ScenarioScript {
                    name: format!("workspace_{i:02}"),
                    waypoints: vec![
                        wp(0.0, b0, s0, u0, 0.0),
                        wp(5.0, b0 + 0.4, s0 + 0.35, u0, 0.0),
                        wp(10.0, b0 + 0.1, s0 + 0.5, u0 + 0.2, 0.0),
                        wp(15.0, b0, s0, u0, 0.0),
                    ],
                    payload_kg: None,
                    forces: Vec::new(),
                }
            })
            .collect();

        // quasistatic sweeps with empty bucket for the baseline surface
        let quasistatic: Vec<ScenarioScript> = (0..10)
            .map(|i| {
                let fu = golden(i + 5);
                let u0 = lerp(u_lo + 0.15, u_hi - 0.25, fu);
                let s0 = lerp(s_lo + 0.05, s_hi - 0.2, (i % 5) as f64 / 4.0);
                ScenarioScript {
                    name: format!("quasistatic_{i:02}"),
                    waypoints: vec![
                        wp(0.0, lerp(b_lo, b_hi, 0.1), s0, u0, 0.0),
                        wp(12.0, lerp(b_lo, b_hi, 0.9), s0, u0, 0.0),
                        wp(24.0, lerp(b_lo, b_hi, 0.15), s0 + 0.12, u0 + 0.1, 0.0),
                    ],
                    payload_kg: None,
                    forces: Vec::new(),
                }
            })
            .collect();

        ScenarioBundle {
            plunger_boom,
            inertia: PerJoint {
                boom: inertia_for(ArmJoint::Boom),
                stick: inertia_for(ArmJoint::Stick),
            },
            friction: PerJoint {
                boom: friction_for(ArmJoint::Boom),
                stick: friction_for(ArmJoint::Stick),
            },
            gravity,
            centripetal,
            weighing,
            grading,
            workspace_grid,
            quasistatic,
        }
    }

    impl ScenarioBundle {
        /// Total episodes the bundle records when simulated.
        pub fn episode_count(&self) -> usize {
            2 + self.inertia.boom.len()
                + self.inertia.stick.len()
                + self.friction.boom.len()
                + self.friction.stick.len()
                + self.gravity.len()
                + self.centripetal.len()
                + self.weighing.len()
                + self.grading.len()
                + self.workspace_grid.len()
                + self.quasistatic.len()
        }
    }
}
