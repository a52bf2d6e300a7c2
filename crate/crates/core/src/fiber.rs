//! Fiber propagation: attenuation, wavelength-dependent birefringent
//! rotation through concatenated random waveplates, and slow temporal
//! drift producing Poincaré trajectories.
//!
//! Each segment rotates the Stokes vector about its own axis by a
//! retardance that grows linearly in optical frequency with the segment's
//! differential group delay. A single frequency therefore sees a unitary
//! rotation (DOP preserved); a broadband ensemble sees slightly different
//! rotations per slice and its incoherent mean depolarizes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{normalize3, rotate_about, StokesVector};
use crate::rng::{stream, CounterRng};
use crate::source::{SliceEnsemble, SPEED_OF_LIGHT_M_S};

/// Retardance values are anchored at this wavelength unless overridden.
pub const DEFAULT_REF_LAMBDA_NM: f64 = 1550.0;

/// Default segment count: enough sections for Maxwellian DGD statistics
/// without measurable runtime cost.
pub fn default_segment_count(length_km: f64) -> usize {
    16usize.max(length_km.ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSegment {
    /// Rotation axis on the Poincaré sphere (unit vector).
    pub axis: [f64; 3],
    /// Retardance at the reference wavelength, radians.
    pub retardance_at_ref: f64,
    /// Segment differential group delay, ps.
    pub dgd_ps: f64,
}

/// Concatenated birefringent segments with frequency-dependent retardance,
/// neutral attenuation and a slow random-walk drift scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberModel {
    pub length_km: f64,
    pub atten_db_per_km: f64,
    pub segments: Vec<FiberSegment>,
    pub ref_lambda_nm: f64,
    /// Random-walk scale for axis/retardance perturbation, radians/sqrt(hour).
    pub drift_rate: f64,
    pub seed: u64,
}

fn random_unit_axis<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Build a fiber: segment axes uniform on the sphere, per-segment DGD
/// magnitudes drawn from |N(0,1)| and rescaled so their root-sum-square
/// equals `pmd_coeff_ps_sqrtkm * sqrt(length_km)` exactly, retardance at
/// the reference wavelength uniform in [0, 2 pi). Deterministic in `seed`.
pub fn build_fiber(
    length_km: f64,
    pmd_coeff_ps_sqrtkm: f64,
    n_segments: usize,
    atten_db_per_km: f64,
    drift_rate: f64,
    seed: u64,
) -> FiberModel {
    assert!(length_km >= 0.0, "length must be >= 0");
    assert!(pmd_coeff_ps_sqrtkm >= 0.0, "PMD coefficient must be >= 0");
    assert!(n_segments >= 1, "need at least one segment");
    if length_km == 0.0 {
        // identity channel: no rotation, no loss
        return FiberModel {
            length_km,
            atten_db_per_km,
            segments: Vec::new(),
            ref_lambda_nm: DEFAULT_REF_LAMBDA_NM,
            drift_rate,
            seed,
        };
    }
    let mut rng = stream(seed, "fiber").rng();
    let target_rss = pmd_coeff_ps_sqrtkm * length_km.sqrt();
    let mut mags: Vec<f64> = Vec::with_capacity(n_segments);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    for _ in 0..n_segments {
        mags.push(normal.sample(&mut rng).abs());
    }
    let rss: f64 = mags.iter().map(|m| m * m).sum::<f64>().sqrt();
    let scale = if rss > 0.0 && target_rss > 0.0 { target_rss / rss } else { 0.0 };
    let segments = mags
        .into_iter()
        .map(|m| FiberSegment {
            axis: random_unit_axis(&mut rng),
            retardance_at_ref: rng.random::<f64>() * std::f64::consts::TAU,
            dgd_ps: m * scale,
        })
        .collect();
    FiberModel {
        length_km,
        atten_db_per_km,
        segments,
        ref_lambda_nm: DEFAULT_REF_LAMBDA_NM,
        drift_rate,
        seed,
    }
}

impl FiberModel {
    /// Root-sum-square of the per-segment DGDs (the fiber's total DGD), ps.
    pub fn total_dgd_ps(&self) -> f64 {
        self.segments.iter().map(|s| s.dgd_ps * s.dgd_ps).sum::<f64>().sqrt()
    }

    pub fn total_loss_db(&self) -> f64 {
        self.atten_db_per_km * self.length_km
    }

    fn segment_angle(seg: &FiberSegment, lambda_nm: f64, ref_lambda_nm: f64) -> f64 {
        let lam_m = lambda_nm * 1e-9;
        let ref_m = ref_lambda_nm * 1e-9;
        seg.retardance_at_ref
            + std::f64::consts::TAU
                * SPEED_OF_LIGHT_M_S
                * seg.dgd_ps
                * 1e-12
                * (1.0 / lam_m - 1.0 / ref_m)
    }

    /// Apply every segment's rotation to one polarized 3-vector at the
    /// given wavelength.
    pub fn apply_at(&self, v: [f64; 3], lambda_nm: f64) -> [f64; 3] {
        let mut out = v;
        for seg in &self.segments {
            let angle = Self::segment_angle(seg, lambda_nm, self.ref_lambda_nm);
            out = rotate_about(out, seg.axis, angle);
        }
        out
    }

    /// Propagate a slice ensemble at time `at_time_hours`. Per-slice DOP
    /// is preserved (one frequency sees a unitary rotation); the ensemble
    /// mean generally depolarizes. The ensemble's mu is attenuated by
    /// 10^(-atten * L / 10). When the model carries a drift rate, the
    /// segments are first evolved to `at_time_hours` with a marginal
    /// random-walk step seeded from the model's own seed.
    pub fn propagate(&self, ensemble: &SliceEnsemble, at_time_hours: f64) -> SliceEnsemble {
        let drifted;
        let model = if self.drift_rate > 0.0 && at_time_hours > 0.0 {
            let mut rng = stream(self.seed, "drift-marginal").rng();
            drifted = self.drift_step_inner(at_time_hours, &mut rng);
            &drifted
        } else {
            self
        };
        let mut out = ensemble.clone();
        for slice in &mut out.slices {
            let v = model.apply_at(slice.state.polarized_part(), slice.lambda_nm);
            slice.state = StokesVector::new(slice.state.s0, v[0], v[1], v[2]);
        }
        out.mu = ensemble.mu * 10f64.powf(-model.total_loss_db() / 10.0);
        out
    }

    fn drift_step_inner<R: Rng + ?Sized>(&self, dt_hours: f64, rng: &mut R) -> FiberModel {
        let sigma = self.drift_rate * dt_hours.sqrt();
        if sigma == 0.0 {
            return self.clone();
        }
        let normal = Normal::new(0.0f64, sigma).expect("finite sigma");
        let mut out = self.clone();
        for seg in &mut out.segments {
            let g = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
            let moved = [
                seg.axis[0] + g[0],
                seg.axis[1] + g[1],
                seg.axis[2] + g[2],
            ];
            seg.axis = normalize3(moved).unwrap_or(seg.axis);
            seg.retardance_at_ref += normal.sample(rng);
        }
        out
    }

    /// One drift step of duration `dt_hours`: every segment's axis and
    /// retardance perturbed by Gaussian steps of scale
    /// drift_rate * sqrt(dt). Returns the evolved model; `self` is
    /// unchanged.
    pub fn drift_step<R: Rng + ?Sized>(&self, dt_hours: f64, rng: &mut R) -> FiberModel {
        assert!(dt_hours > 0.0, "drift step must be > 0");
        self.drift_step_inner(dt_hours, rng)
    }
}

/// One row of a Poincaré trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time_hours: f64,
    pub lambda_nm: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

/// Drift the fiber over `duration_hours` in steps of `step_hours`,
/// sampling a single-slice probe per wavelength at every instant
/// (including t = 0). Emits normalized Stokes samples. Deterministic in
/// the fiber's seed.
pub fn trajectory(
    fiber: &FiberModel,
    probe_lambdas_nm: &[f64],
    duration_hours: f64,
    step_hours: f64,
    input_state: &StokesVector,
) -> Result<Vec<TrajectorySample>> {
    if !(step_hours > 0.0) {
        return Err(Error::config(format!("trajectory step {step_hours} must be > 0")));
    }
    if probe_lambdas_nm.is_empty() {
        return Err(Error::config("trajectory needs at least one probe wavelength"));
    }
    let v_in = input_state.polarized_part();
    let n_in = crate::polarization::norm3(v_in);
    if n_in <= 0.0 {
        return Err(Error::ZeroPolarized("trajectory input state".into()));
    }
    let unit_in = [v_in[0] / n_in, v_in[1] / n_in, v_in[2] / n_in];

    let steps = (duration_hours / step_hours).floor() as usize;
    let mut rng: CounterRng = stream(fiber.seed, "drift").rng();
    let mut model = fiber.clone();
    let mut out = Vec::with_capacity((steps + 1) * probe_lambdas_nm.len());
    for k in 0..=steps {
        let t = k as f64 * step_hours;
        for &lam in probe_lambdas_nm {
            let v = model.apply_at(unit_in, lam);
            out.push(TrajectorySample {
                time_hours: t,
                lambda_nm: lam,
                s1: v[0],
                s2: v[1],
                s3: v[2],
            });
        }
        if k < steps {
            model = model.drift_step(step_hours, &mut rng);
        }
    }
    Ok(out)
}

/// Trajectory CSV: `time_hours,lambda_nm,s1,s2,s3`, one row per sample.
pub fn write_trajectory_csv<W: std::io::Write>(
    samples: &[TrajectorySample],
    provenance: Option<&str>,
    mut w: W,
) -> Result<()> {
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    writeln!(w, "time_hours,lambda_nm,s1,s2,s3")?;
    for s in samples {
        writeln!(
            w,
            "{:.6},{:.4},{:.9},{:.9},{:.9}",
            s.time_hours, s.lambda_nm, s.s1, s.s2, s.s3
        )?;
    }
    Ok(())
}
