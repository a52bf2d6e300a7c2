//! Experiment harness: end-to-end runs, figure-style sweeps, drift
//! traces, photon-budget tables and the calibrate-then-predict workflow.

mod calibrate;
mod presets;
mod runner;
mod sweeps;

pub use calibrate::{
    calibrate_bandwidth, calibrate_bandwidth_fixed_tau, calibrate_ob, calibrate_point,
    ensemble_dop_at_window, BandwidthAnchors, ObAnchors, PointAnchor,
};
pub use presets::{
    ase_fig4_base, builtin_scenario, geonsi_demo_base, otf_base, pinned_ase_fig4,
    pinned_geonsi_demo, pinned_otf, BUILTIN_SCENARIOS,
};
pub use runner::{alice_frame, received_means, run_single, run_single_detailed, RunOutput};
pub use sweeps::{
    drift_trace, sweep_bandwidth, sweep_length, sweep_ob, write_sweep_csv, SweepPoint, SweepResult,
};

use crate::source::{headroom_db, launch_power_dbm};

/// Photon-budget table for one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetReport {
    pub mu: f64,
    pub rate_hz: f64,
    pub lambda_nm: f64,
    pub source_dbm: f64,
    pub launch_dbm: f64,
    pub headroom_db: f64,
}

/// Launch power, source power and headroom for a (mu, rate, wavelength)
/// operating point against a source of the given output power.
pub fn budget(mu: f64, rate_hz: f64, lambda_nm: f64, source_dbm: f64) -> BudgetReport {
    BudgetReport {
        mu,
        rate_hz,
        lambda_nm,
        source_dbm,
        launch_dbm: launch_power_dbm(mu, rate_hz, lambda_nm),
        headroom_db: headroom_db(source_dbm, mu, rate_hz, lambda_nm),
    }
}

impl std::fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "mu               : {} photons/symbol", self.mu)?;
        writeln!(f, "symbol rate      : {:.3e} Hz", self.rate_hz)?;
        writeln!(f, "wavelength       : {:.1} nm", self.lambda_nm)?;
        writeln!(f, "launch power     : {:.2} dBm", self.launch_dbm)?;
        writeln!(f, "source power     : {:.2} dBm", self.source_dbm)?;
        writeln!(f, "headroom         : {:.2} dB", self.headroom_db)
    }
}
