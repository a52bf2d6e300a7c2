//! Bob's analyzer and detectors: polarization alignment, projection onto
//! the measurement basis, click generation with efficiency, dark counts
//! and dead time, time-tag emission, and a classical-trace mode.
//!
//! Detection is chunked for parallel simulation: candidate clicks are
//! generated per fixed-size symbol chunk with per-symbol counter RNG
//! streams, then a sequential merge pass applies dead time. The result is
//! bitwise identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Bb84State, BasisSet, CarveGate, SymbolFrame};
use crate::error::{Error, Result};
use crate::polarization::{dot3, normalize3, PoincareRotation, StokesVector};
use crate::rng::StreamKey;

/// Symbols per detection chunk. Fixed so results never depend on how many
/// worker threads pick up chunks.
const DETECT_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Detection efficiency, in (0, 1].
    pub efficiency: f64,
    /// Dark count rate, counts/s.
    pub dark_rate_cps: f64,
    /// Dead time, seconds.
    pub dead_time_s: f64,
    /// Optional Gaussian sigma of tag timing, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_s: Option<f64>,
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            problems.push(format!("efficiency = {} must be in (0, 1]", self.efficiency));
        }
        if self.dark_rate_cps < 0.0 {
            problems.push(format!("dark_rate_cps = {} must be >= 0", self.dark_rate_cps));
        }
        if self.dead_time_s < 0.0 {
            problems.push(format!("dead_time_s = {} must be >= 0", self.dead_time_s));
        }
        if let Some(j) = self.jitter_s {
            if j < 0.0 {
                problems.push(format!("jitter_s = {j} must be >= 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeTag {
    pub channel: u8,
    pub t_s: f64,
}

/// One polarizing beam splitter with two arms: the pass axis and its
/// antipode, preceded by a manual compensation rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzerConfig {
    /// The two arm axes; must be antipodal unit vectors.
    pub axes: ([f64; 3], [f64; 3]),
    pub compensation: PoincareRotation,
}

impl AnalyzerConfig {
    /// Analyzer for a basis given its pass (bit 0) axis.
    pub fn for_axis(axis: [f64; 3]) -> Self {
        let a = normalize3(axis).expect("analyzer axis must be non-zero");
        AnalyzerConfig {
            axes: (a, [-a[0], -a[1], -a[2]]),
            compensation: PoincareRotation::identity(),
        }
    }

    pub fn with_compensation(mut self, compensation: PoincareRotation) -> Self {
        self.compensation = compensation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.axes;
        let na = (dot3(a, a) - 1.0).abs();
        let nb = (dot3(b, b) - 1.0).abs();
        if na > 1e-9 || nb > 1e-9 {
            return Err(Error::config("analyzer axes must be unit vectors"));
        }
        if (dot3(a, b) + 1.0).abs() > 1e-9 {
            return Err(Error::config("analyzer arm axes must be antipodal"));
        }
        Ok(())
    }

    /// Compensated arm powers (pass, block) for a received mean state.
    pub fn arm_powers(&self, received: &StokesVector) -> (f64, f64) {
        let comp = received.rotate(&self.compensation);
        comp.analyzer_arms(self.axes.0)
    }
}

/// Minimal-angle rotation mapping the normalized polarized part of
/// `reference_out` onto `target_axis`. Cannot and does not restore lost
/// DOP.
pub fn align_compensation(
    reference_out: &StokesVector,
    target_axis: [f64; 3],
) -> Result<PoincareRotation> {
    let p = reference_out.polarized_part();
    let n = crate::polarization::norm3(p);
    if n <= 1e-15 * reference_out.s0.max(1e-300) || n == 0.0 {
        return Err(Error::ZeroPolarized(
            "cannot align a fully depolarized reference".into(),
        ));
    }
    PoincareRotation::align(p, target_axis)
}

/// Photon flux reaching the two detector arms for one transmitted state,
/// photons/symbol.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmMu {
    pub mu0: f64,
    pub mu1: f64,
}

/// Split the received mean state of one prepared ensemble into arm
/// intensities, scaling the state's power fractions to `mu` photons per
/// symbol.
pub fn arm_intensities(received_mean: &StokesVector, analyzer: &AnalyzerConfig, mu: f64) -> ArmMu {
    let (p0, p1) = analyzer.arm_powers(received_mean);
    let s0 = received_mean.s0.max(f64::MIN_POSITIVE);
    ArmMu {
        mu0: mu * p0 / s0,
        mu1: mu * p1 / s0,
    }
}

#[derive(Clone, Copy)]
struct ClickParams {
    p_click: f64,
    /// Probability that a click's timing came from the signal window
    /// rather than the uniform dark background.
    signal_frac: f64,
}

fn click_params(mu_arm: f64, det: &DetectorParams, t_sym: f64) -> ClickParams {
    let lam_sig = det.efficiency * mu_arm;
    let lam_dark = det.dark_rate_cps * t_sym;
    let lam = lam_sig + lam_dark;
    ClickParams {
        p_click: 1.0 - (-lam).exp(),
        signal_frac: if lam > 0.0 { lam_sig / lam } else { 0.0 },
    }
}

/// Finite phase-drive bandwidth: when consecutive symbols carry
/// different states, the first `span_s` of the new symbol's emission is
/// an intermediate polarization, modeled as fully scrambled (both arms
/// receive half the flux). Temporal filtering interacts with this zone:
/// a centered window that excludes the symbol edge also rejects the
/// contaminated clicks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTransition {
    pub span_s: f64,
}

impl DriveTransition {
    /// Span of three time constants of a first-order drive with the
    /// given -3 dB bandwidth (settled to ~95%).
    pub fn first_order(bandwidth_hz: f64) -> Self {
        DriveTransition {
            span_s: 3.0 / (std::f64::consts::TAU * bandwidth_hz),
        }
    }
}

#[derive(Clone, Copy)]
struct TransitionParams {
    p_click: f64,
    /// P(timing source = scrambled edge | click), then settled window,
    /// remainder dark.
    scrambled_frac: f64,
    settled_frac: f64,
}

/// Click parameters for a symbol whose emission window [0, w) starts
/// with a scrambled span of `w_scr` (fractions of the window).
fn transition_params(
    mu_arm: f64,
    mu_total: f64,
    scr_fraction: f64,
    det: &DetectorParams,
    t_sym: f64,
) -> TransitionParams {
    let lam_scr = det.efficiency * 0.5 * mu_total * scr_fraction;
    let lam_set = det.efficiency * mu_arm * (1.0 - scr_fraction);
    let lam_dark = det.dark_rate_cps * t_sym;
    let lam = lam_scr + lam_set + lam_dark;
    TransitionParams {
        p_click: 1.0 - (-lam).exp(),
        scrambled_frac: if lam > 0.0 { lam_scr / lam } else { 0.0 },
        settled_frac: if lam > 0.0 { lam_set / lam } else { 0.0 },
    }
}

/// Generate time tags for a frame given the per-state arm intensities at
/// the detectors. Per symbol, each detector clicks with
/// p = 1 - exp(-efficiency * mu_arm - dark_rate * T_sym); signal clicks
/// land uniformly in the carved window, dark clicks uniformly over the
/// symbol period, both plus optional Gaussian jitter. Dead time then
/// suppresses subsequent clicks per channel. Deterministic given the
/// stream keys; chunked internally with results independent of thread
/// count.
#[allow(clippy::too_many_arguments)]
pub fn detect_frame_with_optics(
    frame: &SymbolFrame,
    optics: &[ArmMu; 4],
    carve: &CarveGate,
    det0: &DetectorParams,
    det1: &DetectorParams,
    key0: StreamKey,
    key1: StreamKey,
    t_offset_s: f64,
) -> Vec<TimeTag> {
    detect_range_with_optics(
        frame,
        0..frame.len(),
        optics,
        carve,
        det0,
        det1,
        key0,
        key1,
        t_offset_s,
        None,
    )
}

/// Same as [`detect_frame_with_optics`] restricted to a symbol range
/// (used for consecutive-acquisition measurements where Bob's basis is
/// fixed per range) and with an optional finite-bandwidth phase-drive
/// transition model.
#[allow(clippy::too_many_arguments)]
pub fn detect_range_with_optics(
    frame: &SymbolFrame,
    range: std::ops::Range<usize>,
    optics: &[ArmMu; 4],
    carve: &CarveGate,
    det0: &DetectorParams,
    det1: &DetectorParams,
    key0: StreamKey,
    key1: StreamKey,
    t_offset_s: f64,
    transition: Option<DriveTransition>,
) -> Vec<TimeTag> {
    let t_sym = frame.symbol_period_s();
    let params: [[ClickParams; 2]; 4] = std::array::from_fn(|si| {
        [
            click_params(optics[si].mu0, det0, t_sym),
            click_params(optics[si].mu1, det1, t_sym),
        ]
    });
    // scrambled-edge parameters; the emission window is identical for
    // every symbol, so the overlap fraction is a constant
    let window_lead = 0.5 * (1.0 - carve.duty) * t_sym;
    let window_width = carve.duty * t_sym;
    let scr_overlap_s = transition
        .map(|tr| (tr.span_s - window_lead).clamp(0.0, window_width))
        .unwrap_or(0.0);
    let scr_fraction = scr_overlap_s / window_width;
    let tr_params: Option<[[TransitionParams; 2]; 4]> = (scr_fraction > 0.0).then(|| {
        std::array::from_fn(|si| {
            let total = optics[si].mu0 + optics[si].mu1;
            [
                transition_params(optics[si].mu0, total, scr_fraction, det0, t_sym),
                transition_params(optics[si].mu1, total, scr_fraction, det1, t_sym),
            ]
        })
    });
    let dets = [det0, det1];
    let n = range.end.min(frame.len());
    let first = range.start.min(n);
    let span = n - first;
    let chunks: Vec<Vec<TimeTag>> = (0..span.div_ceil(DETECT_CHUNK))
        .into_par_iter()
        .map(|chunk_idx| {
            let start = first + chunk_idx * DETECT_CHUNK;
            let end = (start + DETECT_CHUNK).min(n);
            let mut out = Vec::new();
            for i in start..end {
                let sym = frame.symbols[i];
                let si = (sym.basis as usize) * 2 + sym.bit as usize;
                let in_transition = match &tr_params {
                    Some(_) if i > 0 => frame.symbols[i - 1] != sym,
                    _ => false,
                };
                for ch in 0..2u8 {
                    let key = if ch == 0 { key0 } else { key1 };
                    let mut rng = key.rng_at(i as u64);
                    let u: f64 = rand::Rng::random(&mut rng);
                    let (window_a, window_b) = carve.window_for(i as u64);
                    let mut t;
                    if in_transition {
                        let tp = tr_params.as_ref().expect("transition params")[si][ch as usize];
                        if u >= tp.p_click {
                            continue;
                        }
                        let u_src: f64 = rand::Rng::random(&mut rng);
                        let u_time: f64 = rand::Rng::random(&mut rng);
                        t = t_offset_s
                            + if u_src < tp.scrambled_frac {
                                window_a + u_time * scr_overlap_s
                            } else if u_src < tp.scrambled_frac + tp.settled_frac {
                                window_a + scr_overlap_s + u_time * (window_b - window_a - scr_overlap_s)
                            } else {
                                (i as f64 + u_time) * t_sym
                            };
                    } else {
                        let cp = params[si][ch as usize];
                        if u >= cp.p_click {
                            continue;
                        }
                        let u_src: f64 = rand::Rng::random(&mut rng);
                        let u_time: f64 = rand::Rng::random(&mut rng);
                        t = t_offset_s
                            + if u_src < cp.signal_frac {
                                window_a + u_time * (window_b - window_a)
                            } else {
                                (i as f64 + u_time) * t_sym
                            };
                    }
                    if let Some(j) = dets[ch as usize].jitter_s {
                        if j > 0.0 {
                            // Box-Muller from two more uniforms
                            let u1: f64 = rand::Rng::random(&mut rng);
                            let u2: f64 = rand::Rng::random(&mut rng);
                            let g = (-2.0 * (1.0 - u1).ln()).sqrt()
                                * (std::f64::consts::TAU * u2).cos();
                            t += j * g;
                        }
                    }
                    out.push(TimeTag { channel: ch, t_s: t });
                }
            }
            out
        })
        .collect();

    let mut candidates: Vec<TimeTag> = chunks.into_iter().flatten().collect();
    // jitter can reorder tags across symbol boundaries
    candidates.sort_by(|a, b| a.t_s.partial_cmp(&b.t_s).unwrap().then(a.channel.cmp(&b.channel)));
    apply_dead_time(candidates, [det0.dead_time_s, det1.dead_time_s])
}

/// Sequential non-paralyzable dead time per channel: a candidate click is
/// kept only if it falls at least `dead_time` after the last accepted
/// click on the same channel.
fn apply_dead_time(candidates: Vec<TimeTag>, dead: [f64; 2]) -> Vec<TimeTag> {
    let mut last: [Option<f64>; 2] = [None, None];
    let mut out = Vec::with_capacity(candidates.len());
    for tag in candidates {
        let ch = tag.channel as usize;
        let ok = match last[ch] {
            None => true,
            Some(t) => tag.t_s - t >= dead[ch],
        };
        if ok {
            last[ch] = Some(tag.t_s);
            out.push(tag);
        }
    }
    out
}

/// Spec-shaped detection entry point: the supplier returns the received
/// mean state and photon number for each transmitted state; arm splitting
/// and compensation happen here.
#[allow(clippy::too_many_arguments)]
pub fn detect_frame<F>(
    frame: &SymbolFrame,
    set: BasisSet,
    received: F,
    analyzer: &AnalyzerConfig,
    det0: &DetectorParams,
    det1: &DetectorParams,
    carve: &CarveGate,
    key0: StreamKey,
    key1: StreamKey,
) -> Vec<TimeTag>
where
    F: Fn(Bb84State) -> (StokesVector, f64),
{
    let states = set.states();
    let optics: [ArmMu; 4] = std::array::from_fn(|i| {
        let (mean, mu) = received(states[i]);
        arm_intensities(&mean, analyzer, mu)
    });
    detect_frame_with_optics(frame, &optics, carve, det0, det1, key0, key1, 0.0)
}

/// Balanced-detector trace of ideal protocol states through one analyzer
/// axis: (P_pass - P_block)/s0 per sample, producing the three-level eye.
pub fn classical_trace(
    states: &[Bb84State],
    analyzer_axis: [f64; 3],
    samples_per_symbol: usize,
) -> Vec<f64> {
    assert!(samples_per_symbol >= 1, "need at least one sample per symbol");
    let mut out = Vec::with_capacity(states.len() * samples_per_symbol);
    for s in states {
        let level = dot3(s.axis(), analyzer_axis);
        for _ in 0..samples_per_symbol {
            out.push(level);
        }
    }
    out
}

/// Same trace for arbitrary received mean states (levels shrink with the
/// ensemble DOP).
pub fn classical_trace_stokes(
    means: &[StokesVector],
    analyzer_axis: [f64; 3],
    samples_per_symbol: usize,
) -> Vec<f64> {
    assert!(samples_per_symbol >= 1, "need at least one sample per symbol");
    let mut out = Vec::with_capacity(means.len() * samples_per_symbol);
    for m in means {
        let level = dot3(m.polarized_part(), analyzer_axis) / m.s0.max(f64::MIN_POSITIVE);
        for _ in 0..samples_per_symbol {
            out.push(level);
        }
    }
    out
}

/// Time-tag CSV export: `channel,t_seconds` with 1 ps resolution,
/// monotone non-decreasing in time.
pub fn write_tags_csv<W: std::io::Write>(
    tags: &[TimeTag],
    provenance: Option<&str>,
    mut w: W,
) -> Result<()> {
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    writeln!(w, "channel,t_seconds")?;
    for t in tags {
        writeln!(w, "{},{:.12}", t.channel, t.t_s)?;
    }
    Ok(())
}

/// Read a time-tag CSV produced by [`write_tags_csv`].
pub fn read_tags_csv<R: std::io::Read>(reader: R) -> Result<Vec<TimeTag>> {
    let mut out = Vec::new();
    let text = {
        let mut s = String::new();
        let mut r = reader;
        std::io::Read::read_to_string(&mut r, &mut s)?;
        s
    };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    match lines.next() {
        Some("channel,t_seconds") => {}
        _ => return Err(Error::Parse("tag CSV must start with 'channel,t_seconds'".into())),
    }
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (ch, t) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("bad tag row '{line}'")))?;
        out.push(TimeTag {
            channel: ch.trim().parse().map_err(|e| Error::Parse(format!("channel: {e}")))?,
            t_s: t.trim().parse().map_err(|e| Error::Parse(format!("t_seconds: {e}")))?,
        });
    }
    Ok(out)
}
