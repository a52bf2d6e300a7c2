//! One end-to-end run: source -> encoder -> fiber -> receiver -> protocol.

use crate::encoder::{carve, prbs_frame, Bb84State};
use crate::error::Result;
use crate::fiber::build_fiber;
use crate::polarization::PoincareRotation;
use crate::protocol::{
    compute_qber_with, frame_synchronize, records_from_tags, sift, temporal_filter, DetectionRecord,
    QberReport,
};
use crate::receiver::{align_compensation, arm_intensities, detect_range_with_optics, AnalyzerConfig, ArmMu};
use crate::rng::stream;
use crate::scenario::Scenario;
use crate::source::SliceEnsemble;

/// Result of one run plus diagnostics the sweeps record.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: QberReport,
    /// Mean DOP of the four propagated state ensembles at the receiver.
    pub dop_mean: f64,
    /// Frame shift recovered by synchronization.
    pub shift: usize,
    pub scenario_hash: u64,
}

pub fn run_single(scenario: &Scenario) -> Result<QberReport> {
    run_single_detailed(scenario).map(|o| o.report)
}

/// The PRBS frame a scenario transmits, capped to `cap` symbols when
/// given (frame dumps don't need the full run length).
pub fn alice_frame(sc: &Scenario, cap: Option<usize>) -> Result<crate::encoder::SymbolFrame> {
    let frame_seed = {
        let mut r = stream(sc.master_seed, "frame").rng();
        rand::RngCore::next_u64(&mut r)
    };
    let length = cap
        .map(|c| (sc.symbols as usize).min(c))
        .unwrap_or(sc.symbols as usize);
    prbs_frame(
        sc.protocol.prbs_order,
        length,
        sc.protocol.rate_hz,
        sc.protocol.mu,
        frame_seed,
        0,
    )
}

/// Execute the full chain over the configured symbol count.
/// Deterministic for a fixed master seed, independent of thread count.
pub fn run_single_detailed(sc: &Scenario) -> Result<RunOutput> {
    sc.validate()?;
    let seed = sc.master_seed;
    let rate = sc.protocol.rate_hz;

    // Alice: PRBS frame and prepared state ensembles
    let frame = alice_frame(sc, None)?;
    let gate = carve(&frame, sc.encoder.carve_duty)?;

    let spectrum = sc.source.resolve(None)?;
    let base = spectrum.slice(sc.source.n_slices)?.with_mu(sc.protocol.mu);
    let states = sc.encoder.basis_set.states();
    let mut prepared: Vec<SliceEnsemble> = Vec::with_capacity(4);
    for s in states {
        prepared.push(crate::encoder::prepare_slices(s, &base, &sc.encoder)?);
    }

    // channel
    let fiber = build_fiber(
        sc.fiber.length_km,
        sc.fiber.pmd_ps_sqrt_km,
        sc.fiber.segment_count(),
        sc.fiber.atten_db_per_km,
        sc.fiber.drift_rate,
        seed,
    );
    let propagated: Vec<SliceEnsemble> =
        prepared.iter().map(|p| fiber.propagate(p, 0.0)).collect();
    let ob_scale = 10f64.powf(-sc.optical_budget_db / 10.0);
    let mu_rx = propagated[0].mu * ob_scale;

    let means: Vec<crate::polarization::StokesVector> = propagated
        .iter()
        .map(|p| p.mean_stokes())
        .collect::<Result<_>>()?;
    let dop_mean = {
        let dops: Vec<f64> = means.iter().map(|m| m.dop().unwrap_or(0.0)).collect();
        dops.iter().sum::<f64>() / dops.len() as f64
    };

    // Bob: consecutive acquisitions, one basis per half of the frame,
    // manual alignment of each acquisition's own reference state
    let det0 = sc.boosted_detector(0);
    let det1 = sc.boosted_detector(1);
    let key0 = stream(seed, "detector0");
    let key1 = stream(seed, "detector1");
    let half = frame.len() / 2;
    let mut all_records: Vec<DetectionRecord> = Vec::new();
    let mut double_clicks = 0u64;
    for acq_basis in 0..2u8 {
        let range = if acq_basis == 0 { 0..half } else { half..frame.len() };
        let target_axis = sc.encoder.basis_set.basis_axis(acq_basis);
        let ref_state: Bb84State = sc.encoder.basis_set.encode(acq_basis, 0);
        let ref_idx = states.iter().position(|&s| s == ref_state).expect("state in set");
        let compensation = align_compensation(&means[ref_idx], target_axis)
            .unwrap_or_else(|_| PoincareRotation::identity());
        let analyzer = AnalyzerConfig::for_axis(target_axis).with_compensation(compensation);
        let optics: [ArmMu; 4] =
            std::array::from_fn(|i| arm_intensities(&means[i], &analyzer, mu_rx));
        let tags = detect_range_with_optics(
            &frame, range, &optics, &gate, &det0, &det1, key0, key1, 0.0,
        );
        let kept = temporal_filter(&tags, rate, sc.protocol.window_fraction, 0.0);
        let (mut records, discarded) = records_from_tags(
            &kept,
            rate,
            0.0,
            acq_basis,
            sc.protocol.double_click,
            stream(seed, "assign"),
        );
        double_clicks += discarded;
        all_records.append(&mut records);
    }

    // protocol stack
    let shift = if sc.noise_floor {
        0
    } else {
        frame_synchronize(&all_records, &frame, sc.protocol.max_sync_shift)?
    };
    let (sifted, doubles_in_sift) = sift(&frame, &all_records, shift);
    let mut report = compute_qber_with(
        &sifted,
        frame.duration_s(),
        double_clicks + doubles_in_sift,
    )?;
    // undo the statistics boost in reported rates
    report.raw_key_bps /= sc.stat_boost;

    Ok(RunOutput {
        report,
        dop_mean,
        shift,
        scenario_hash: sc.hash(),
    })
}

impl std::fmt::Display for RunOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", crate::protocol::format_report(&self.report))?;
        writeln!(f, "mean receiver DOP: {:.4}", self.dop_mean)?;
        writeln!(f, "frame shift      : {}", self.shift)?;
        writeln!(f, "scenario hash    : {:016x}", self.scenario_hash)
    }
}

/// Propagated mean states per protocol state, for classical traces.
pub fn received_means(sc: &Scenario) -> Result<Vec<crate::polarization::StokesVector>> {
    let spectrum = sc.source.resolve(None)?;
    let base = spectrum.slice(sc.source.n_slices)?.with_mu(sc.protocol.mu);
    let fiber = build_fiber(
        sc.fiber.length_km,
        sc.fiber.pmd_ps_sqrt_km,
        sc.fiber.segment_count(),
        sc.fiber.atten_db_per_km,
        sc.fiber.drift_rate,
        sc.master_seed,
    );
    sc.encoder
        .basis_set
        .states()
        .iter()
        .map(|&s| {
            let prepared = crate::encoder::prepare_slices(s, &base, &sc.encoder)?;
            fiber.propagate(&prepared, 0.0).mean_stokes()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::scenario::template;

    #[test]
    fn noiseless_ideal_run_has_zero_qber() {
        let mut sc = template("ideal");
        sc.symbols = 200_000;
        let out = run_single_detailed(&sc).unwrap();
        assert_eq!(out.report.error_count, 0);
        assert_eq!(out.shift, 0);
        assert!(out.report.sifted_count > 0);
        assert!((out.dop_mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noise_floor_run_is_half_qber() {
        let mut sc = template("dark-only");
        sc.symbols = 1_000_000;
        sc.noise_floor = true;
        sc.protocol.mu = 0.0;
        sc.detector0.dark_rate_cps = 2e6;
        sc.detector1.dark_rate_cps = 2e6;
        let out = run_single_detailed(&sc).unwrap();
        let q = out.report.qber;
        assert!((q - 0.5).abs() < 0.05, "dark-only qber {q}");
        // raw key is dark limited: accepted = dark * window * sift
        let expect = 2.0 * 2e6 * 0.5 * 0.5;
        let got = out.report.raw_key_bps;
        assert!((got - expect).abs() / expect < 0.1, "dark raw key {got} vs {expect}");
    }

    #[test]
    fn runs_are_deterministic() {
        let mut sc = template("det");
        sc.symbols = 100_000;
        sc.detector0.dark_rate_cps = 1e4;
        sc.detector1.dark_rate_cps = 1e4;
        let a = run_single_detailed(&sc).unwrap();
        let b = run_single_detailed(&sc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_errors_propagate() {
        let mut sc = template("bad");
        sc.protocol.window_fraction = 0.0;
        assert!(matches!(run_single(&sc), Err(Error::Config(_))));
    }

    #[test]
    fn boost_preserves_qber_and_rate_scale() {
        let mut sc = template("boost");
        sc.symbols = 2_000_000;
        sc.detector0.efficiency = 0.002;
        sc.detector1.efficiency = 0.002;
        sc.detector0.dark_rate_cps = 2e3;
        sc.detector1.dark_rate_cps = 2e3;
        sc.encoder.extinction_db = 13.0;
        let plain = run_single(&sc).unwrap();
        sc.stat_boost = 50.0;
        let boosted = run_single(&sc).unwrap();
        // same expectation values, tighter statistics on the boosted run
        assert!(
            (plain.qber - boosted.qber).abs() < 4.0 * plain.qber_3sigma.max(0.005),
            "qber {} vs boosted {}",
            plain.qber,
            boosted.qber
        );
        let ratio = boosted.raw_key_bps / plain.raw_key_bps;
        assert!((ratio - 1.0).abs() < 0.15, "raw key ratio {ratio}");
    }
}
