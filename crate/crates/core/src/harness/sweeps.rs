//! Figure-style experiment sweeps with deterministic seeding and CSV
//! export.

use crate::encoder::Architecture;
use crate::error::{Error, Result};
use crate::fiber::{build_fiber, trajectory, TrajectorySample};
use crate::polarization::StokesVector;
use crate::protocol::QberReport;
use crate::scenario::Scenario;

use super::runner::run_single_detailed;

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub var: f64,
    pub report: QberReport,
    pub dop_mean: f64,
    /// Spread of per-seed QBERs (3 sigma) when the point averaged
    /// multiple channel realizations.
    pub seed_spread_3sigma: Option<f64>,
}

/// A completed sweep with provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub variable: String,
    pub points: Vec<SweepPoint>,
    pub scenario_hash: u64,
    pub master_seed: u64,
    pub tool_version: String,
}

fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Sweep the optical budget: each value is applied as neutral attenuation
/// on mu before the receiver.
pub fn sweep_ob(scenario: &Scenario, ob_values_db: &[f64]) -> Result<SweepResult> {
    let mut points = Vec::with_capacity(ob_values_db.len());
    for &ob in ob_values_db {
        let mut sc = scenario.clone();
        sc.optical_budget_db = ob;
        let out = run_single_detailed(&sc)?;
        points.push(SweepPoint {
            var: ob,
            report: out.report,
            dop_mean: out.dop_mean,
            seed_spread_3sigma: None,
        });
    }
    Ok(SweepResult {
        variable: "optical_budget_db".into(),
        points,
        scenario_hash: scenario.hash(),
        master_seed: scenario.master_seed,
        tool_version: tool_version(),
    })
}

/// Sweep the optical signal bandwidth: the source is re-sliced at each
/// filter window and the run repeated. Requires the I/Q architecture
/// (the four-modulator encoder is wavelength independent by design).
pub fn sweep_bandwidth(scenario: &Scenario, windows_nm: &[f64]) -> Result<SweepResult> {
    if scenario.encoder.architecture != Architecture::DualpolIq {
        return Err(Error::config(
            "sweep-bandwidth requires the dualpol-iq encoder architecture",
        ));
    }
    let mut points = Vec::with_capacity(windows_nm.len());
    for &w in windows_nm {
        let mut sc = scenario.clone();
        sc.source.window_nm = Some(w);
        let out = run_single_detailed(&sc)?;
        points.push(SweepPoint {
            var: w,
            report: out.report,
            dop_mean: out.dop_mean,
            seed_spread_3sigma: None,
        });
    }
    Ok(SweepResult {
        variable: "delta_lambda_nm".into(),
        points,
        scenario_hash: scenario.hash(),
        master_seed: scenario.master_seed,
        tool_version: tool_version(),
    })
}

/// Sweep the fiber length, rebuilding the channel for each length over a
/// fixed family of seeds and averaging. Counts are pooled; the spread of
/// per-seed QBERs is reported alongside.
pub fn sweep_length(
    scenario: &Scenario,
    lengths_km: &[f64],
    n_seeds: u64,
) -> Result<SweepResult> {
    assert!(n_seeds >= 1, "need at least one seed");
    let mut points = Vec::with_capacity(lengths_km.len());
    for &length in lengths_km {
        let mut sifted = 0u64;
        let mut errors = 0u64;
        let mut doubles = 0u64;
        let mut duration = 0.0;
        let mut raw_sum = 0.0;
        let mut per = [crate::protocol::ChannelStats::default(); 2];
        let mut qbers = Vec::with_capacity(n_seeds as usize);
        let mut dops = Vec::with_capacity(n_seeds as usize);
        for k in 0..n_seeds {
            let mut sc = scenario.clone();
            sc.fiber.length_km = length;
            sc.master_seed = scenario.master_seed.wrapping_add(k);
            let out = run_single_detailed(&sc)?;
            sifted += out.report.sifted_count;
            errors += out.report.error_count;
            doubles += out.report.double_clicks_discarded;
            duration += out.report.duration_s;
            raw_sum += out.report.raw_key_bps;
            for ch in 0..2 {
                per[ch].sifted += out.report.per_channel[ch].sifted;
                per[ch].errors += out.report.per_channel[ch].errors;
            }
            qbers.push(out.report.qber);
            dops.push(out.dop_mean);
        }
        let q = errors as f64 / sifted.max(1) as f64;
        let spread = if qbers.len() >= 2 {
            let m = qbers.iter().sum::<f64>() / qbers.len() as f64;
            let var =
                qbers.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (qbers.len() - 1) as f64;
            Some(3.0 * var.sqrt())
        } else {
            None
        };
        points.push(SweepPoint {
            var: length,
            report: QberReport {
                qber: q,
                qber_3sigma: 3.0 * (q * (1.0 - q) / sifted.max(1) as f64).sqrt(),
                raw_key_bps: raw_sum / n_seeds as f64,
                sifted_count: sifted,
                error_count: errors,
                duration_s: duration,
                per_channel: per,
                double_clicks_discarded: doubles,
            },
            dop_mean: dops.iter().sum::<f64>() / dops.len() as f64,
            seed_spread_3sigma: spread,
        });
    }
    Ok(SweepResult {
        variable: "length_km".into(),
        points,
        scenario_hash: scenario.hash(),
        master_seed: scenario.master_seed,
        tool_version: tool_version(),
    })
}

/// Poincaré drift trace of the scenario's fiber: probe states at the
/// given wavelengths, drifting over `duration_hours` in steps of
/// `step_hours`. The probe launches the D state, matching an in-line
/// polarizer feeding the channel.
pub fn drift_trace(
    scenario: &Scenario,
    duration_hours: f64,
    step_hours: f64,
    probe_lambdas_nm: &[f64],
) -> Result<Vec<TrajectorySample>> {
    let fiber = build_fiber(
        scenario.fiber.length_km,
        scenario.fiber.pmd_ps_sqrt_km,
        scenario.fiber.segment_count(),
        scenario.fiber.atten_db_per_km,
        scenario.fiber.drift_rate,
        scenario.master_seed,
    );
    let probe = StokesVector::polarized(1.0, [0.0, 1.0, 0.0]);
    trajectory(&fiber, probe_lambdas_nm, duration_hours, step_hours, &probe)
}

/// Sweep CSV: provenance comments, then a header row naming the columns,
/// then one row per point. Byte-identical for identical (scenario, seed)
/// regardless of thread count.
pub fn write_sweep_csv<W: std::io::Write>(result: &SweepResult, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# scenario_hash={:016x} master_seed={} tool_version={} variable={}",
        result.scenario_hash, result.master_seed, result.tool_version, result.variable
    )?;
    writeln!(w, "sweep_var,qber,qber_3sigma,raw_key_bps,sifted_count,dop_mean")?;
    for p in &result.points {
        writeln!(
            w,
            "{:.6},{:.6},{:.6},{:.6},{},{:.6}",
            p.var,
            p.report.qber,
            p.report.qber_3sigma,
            p.report.raw_key_bps,
            p.report.sifted_count,
            p.dop_mean
        )?;
    }
    Ok(())
}
