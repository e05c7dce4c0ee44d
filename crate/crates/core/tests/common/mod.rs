//! Shared fixtures for the integration suites: simulated dataset bundles and
//! a cached calibration run per machine preset.

#![allow(dead_code)]

use std::sync::OnceLock;

use hydrarm_core::calibration::{run_pipeline, CalibrationOptions, CalibrationReport, DatasetBundle, PlungerInputs};
use hydrarm_core::dynamics::LumpedParams;
use hydrarm_core::hydraulics::{CylinderCatalog, PayloadAttachment};
use hydrarm_core::kinematics::{MachineGeometry, PerJoint};
use hydrarm_core::signal::Episode;
use hydrarm_core::simulator::{
    preset, scenario_library, simulate, MachinePreset, PhysicalParams, ScenarioBundle, ScenarioScript,
};

pub const RATE: f64 = 50.0;

pub fn simulate_all(
    phys: &PhysicalParams,
    geom: &MachineGeometry,
    scripts: &[ScenarioScript],
    seed0: u64,
) -> Vec<Episode> {
    scripts
        .iter()
        .enumerate()
        .map(|(i, s)| simulate(phys, geom, s, RATE, seed0 + i as u64).expect(&s.name))
        .collect()
}

/// Builds the staged calibration bundle by simulating the scenario library.
pub fn dataset_bundle(preset: &MachinePreset, scenarios: &ScenarioBundle, noisy: bool, seed: u64) -> DatasetBundle {
    let phys = if noisy {
        preset.physical.clone()
    } else {
        preset.physical.without_noise()
    };
    let geom = &preset.geometry;
    DatasetBundle {
        plunger: PerJoint {
            boom: Some(PlungerInputs {
                loaded: simulate(&phys, geom, &scenarios.plunger_boom.loaded, RATE, seed + 1000).unwrap(),
                unloaded: simulate(&phys, geom, &scenarios.plunger_boom.unloaded, RATE, seed + 1001).unwrap(),
                payload_kg: scenarios.plunger_boom.payload_kg,
                attachment: PayloadAttachment {
                    radius: scenarios.plunger_boom.radius,
                    angle_offset: scenarios.plunger_boom.angle_offset,
                },
            }),
            stick: None,
        },
        inertia: PerJoint {
            boom: simulate_all(&phys, geom, &scenarios.inertia.boom, seed + 100),
            stick: simulate_all(&phys, geom, &scenarios.inertia.stick, seed + 200),
        },
        friction: PerJoint {
            boom: simulate_all(&phys, geom, &scenarios.friction.boom, seed + 300),
            stick: simulate_all(&phys, geom, &scenarios.friction.stick, seed + 400),
        },
        gravity: PerJoint {
            boom: simulate_all(&phys, geom, &scenarios.gravity, seed + 500),
            stick: simulate_all(&phys, geom, &scenarios.gravity, seed + 500),
        },
        centripetal: simulate_all(&phys, geom, &scenarios.centripetal, seed + 600),
        machine_id: preset.name.to_string(),
    }
}

pub struct CalibratedRig {
    pub preset: MachinePreset,
    pub scenarios: ScenarioBundle,
    pub params: LumpedParams,
    pub report: CalibrationReport,
    pub geometry: MachineGeometry,
}

fn build_rig(noisy: bool) -> CalibratedRig {
    let preset = preset("case250").expect("bundled preset");
    let scenarios = scenario_library(&preset, 7);
    let bundle = dataset_bundle(&preset, &scenarios, noisy, 40);
    let opts = CalibrationOptions::default();
    let catalog = CylinderCatalog::standard();
    let (params, report, geometry) =
        run_pipeline(&bundle, &preset.geometry, &catalog, &opts).expect("pipeline");
    CalibratedRig {
        preset,
        scenarios,
        params,
        report,
        geometry,
    }
}

/// Noiseless calibration of the case250 preset, shared across tests in one
/// binary.
pub fn calibrated_noiseless() -> &'static CalibratedRig {
    static RIG: OnceLock<CalibratedRig> = OnceLock::new();
    RIG.get_or_init(|| build_rig(false))
}

/// Matched-noise calibration of the case250 preset.
pub fn calibrated_noisy() -> &'static CalibratedRig {
    static RIG: OnceLock<CalibratedRig> = OnceLock::new();
    RIG.get_or_init(|| build_rig(true))
}
