//! Calibrated dynamic modeling for hydraulic excavator arms: identifies a
//! lumped torque model from kinematic and cylinder-pressure logs, then uses it
//! to estimate 2D blade interaction forces online and bucket payload per
//! motion episode. A synthetic excavator provides ground truth for desk-scale
//! verification.
//!
//! ```
//! use hydrarm_core::estimation::{estimate_payload, EstimationOptions};
//! use hydrarm_core::kinematics::JointAngles;
//! use hydrarm_core::simulator::{lump_parameters, preset, simulate, ScenarioScript, Waypoint};
//!
//! let machine = preset("case250").unwrap();
//! let script = ScenarioScript {
//!     name: "lift".into(),
//!     waypoints: vec![
//!         Waypoint { t: 0.0, q: JointAngles::new(-0.2, -1.6, -0.8, 0.0) },
//!         Waypoint { t: 3.0, q: JointAngles::new(0.5, -1.2, -0.8, 0.0) },
//!     ],
//!     payload_kg: Some(1200.0),
//!     forces: vec![],
//! };
//! let episode = simulate(&machine.physical.without_noise(), &machine.geometry, &script, 50.0, 1).unwrap();
//! let params = lump_parameters(&machine.physical, &machine.geometry);
//! let estimate = estimate_payload(&params, &machine.geometry, &episode, &EstimationOptions::default()).unwrap();
//! assert!((estimate.mass_kg - 1200.0).abs() < 30.0);
//! ```

pub mod calibration;
pub mod dynamics;
pub mod estimation;
pub mod hydraulics;
pub mod kinematics;
pub mod signal;
pub mod simulator;

pub use kinematics::{ArmJoint, JointAngles, MachineGeometry, PerJoint, GRAVITY};
pub use signal::{AlignedSample, Episode, Sample};

#[cfg(test)]
mod thread_safety {
    // model values are immutable after construction and shared read-only
    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn shared_types_are_send_sync() {
        assert_send_sync::<crate::MachineGeometry>();
        assert_send_sync::<crate::dynamics::LumpedParams>();
        assert_send_sync::<crate::Episode>();
        assert_send_sync::<crate::simulator::PhysicalParams>();
        assert_send_sync::<crate::simulator::ScenarioScript>();
        assert_send_sync::<crate::estimation::QuasistaticBaseline>();
        assert_send_sync::<crate::calibration::CalibrationReport>();
    }
}
