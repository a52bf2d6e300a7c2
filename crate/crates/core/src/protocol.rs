//! Receive-side protocol stack: temporal filtering, frame
//! synchronization against the transmitted PRBS, basis sifting, QBER and
//! raw-key estimation, and the asymptotic secure-key threshold.

use serde::{Deserialize, Serialize};

use crate::encoder::SymbolFrame;
use crate::error::{Error, Result};
use crate::receiver::TimeTag;
use crate::rng::StreamKey;

/// Normalized form of a time-tagger event after windowing: which symbol
/// it belongs to, which basis Bob's analyzer was set to, and which bit
/// the clicking detector encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionRecord {
    pub symbol_index: u64,
    pub bob_basis: u8,
    pub bob_bit: u8,
    pub channel: u8,
}

/// Keep tags whose phase within the symbol period lies inside the
/// centered window of the given fraction, after applying `offset_s`.
pub fn temporal_filter(
    tags: &[TimeTag],
    rate_hz: f64,
    window_fraction: f64,
    offset_s: f64,
) -> Vec<TimeTag> {
    assert!(
        window_fraction > 0.0 && window_fraction <= 1.0,
        "window fraction must be in (0, 1]"
    );
    let lo = 0.5 - window_fraction / 2.0;
    let hi = 0.5 + window_fraction / 2.0;
    tags.iter()
        .filter(|t| {
            let phase = ((t.t_s - offset_s) * rate_hz).rem_euclid(1.0);
            // the symbol center is always kept for any window > 0
            phase >= lo && phase < hi || phase == 0.5
        })
        .copied()
        .collect()
}

/// Symbol index of a tag: floor((t - offset) * rate).
pub fn symbol_index_of(tag: &TimeTag, rate_hz: f64, offset_s: f64) -> u64 {
    (((tag.t_s - offset_s) * rate_hz).floor()).max(0.0) as u64
}

/// Policy for symbols where both detectors clicked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DoubleClickPolicy {
    /// Discard the symbol and count it. Conservative; keeps QBER
    /// well-defined.
    #[default]
    Discard,
    /// Keep one of the two clicks, chosen uniformly.
    RandomAssign,
}

/// Convert filtered tags from one acquisition (fixed analyzer basis) into
/// detection records, resolving double clicks per policy. Returns the
/// records and the number of discarded double-click symbols.
pub fn records_from_tags(
    tags: &[TimeTag],
    rate_hz: f64,
    offset_s: f64,
    bob_basis: u8,
    policy: DoubleClickPolicy,
    assign_stream: StreamKey,
) -> (Vec<DetectionRecord>, u64) {
    let mut out: Vec<DetectionRecord> = Vec::with_capacity(tags.len());
    let mut discarded = 0u64;
    let mut i = 0usize;
    while i < tags.len() {
        let idx = symbol_index_of(&tags[i], rate_hz, offset_s);
        // collect all tags of this symbol (tags are time sorted)
        let mut j = i + 1;
        let mut channels = 1u8 << tags[i].channel;
        while j < tags.len() && symbol_index_of(&tags[j], rate_hz, offset_s) == idx {
            channels |= 1 << tags[j].channel;
            j += 1;
        }
        if channels == 0b11 {
            match policy {
                DoubleClickPolicy::Discard => discarded += 1,
                DoubleClickPolicy::RandomAssign => {
                    let pick: u8 =
                        (rand::RngCore::next_u64(&mut assign_stream.rng_at(idx)) & 1) as u8;
                    out.push(DetectionRecord {
                        symbol_index: idx,
                        bob_basis,
                        bob_bit: pick,
                        channel: pick,
                    });
                }
            }
        } else {
            let ch = tags[i].channel;
            out.push(DetectionRecord {
                symbol_index: idx,
                bob_basis,
                bob_bit: ch,
                channel: ch,
            });
        }
        i = j;
    }
    (out, discarded)
}

/// Find the cyclic shift (0..=max_shift) that maximizes bit agreement at
/// matching-basis positions. The peak must exceed the mean of the
/// off-peak scores by five of their standard deviations, otherwise the
/// records are treated as unsynchronizable (wrong frame or overwhelming
/// noise).
pub fn frame_synchronize(
    records: &[DetectionRecord],
    frame: &SymbolFrame,
    max_shift: usize,
) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::SyncFailure("no detection records".into()));
    }
    let n = frame.len();
    if n == 0 {
        return Err(Error::SyncFailure("empty frame".into()));
    }
    let n_shifts = max_shift.min(n - 1) + 1;
    let mut scores = vec![0.5f64; n_shifts];
    let compact: Vec<(u32, u8, u8)> = records
        .iter()
        .map(|r| ((r.symbol_index % n as u64) as u32, r.bob_basis, r.bob_bit))
        .collect();
    for (shift, score) in scores.iter_mut().enumerate() {
        let mut matched = 0u64;
        let mut agree = 0u64;
        for &(idx, basis, bit) in &compact {
            let a = frame.symbols[(idx as usize + shift) % n];
            if a.basis == basis {
                matched += 1;
                agree += u64::from(a.bit == bit);
            }
        }
        if matched > 0 {
            *score = agree as f64 / matched as f64;
        }
    }
    let (peak_shift, &peak) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("non-empty scores");
    let others: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != peak_shift)
        .map(|(_, &s)| s)
        .collect();
    if others.len() < 3 {
        return Err(Error::SyncFailure(format!(
            "need at least 4 candidate shifts for significance, got {}",
            others.len() + 1
        )));
    }
    let mean = others.iter().sum::<f64>() / others.len() as f64;
    let var = others.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / others.len() as f64;
    let sigma = var.sqrt().max(1e-12);
    if peak <= mean + 5.0 * sigma {
        return Err(Error::SyncFailure(format!(
            "correlation peak {peak:.4} at shift {peak_shift} not significant \
             (off-peak mean {mean:.4}, sigma {sigma:.4})"
        )));
    }
    Ok(peak_shift)
}

/// One sifted bit pair with its detector channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiftedBit {
    pub alice_bit: u8,
    pub bob_bit: u8,
    pub channel: u8,
}

/// Keep records whose basis matches Alice's at the shifted index. Symbols
/// carrying records on both detectors are discarded and counted.
pub fn sift(
    frame: &SymbolFrame,
    records: &[DetectionRecord],
    shift: usize,
) -> (Vec<SiftedBit>, u64) {
    let n = frame.len();
    let mut out = Vec::with_capacity(records.len() / 2 + 1);
    let mut doubles = 0u64;
    let mut i = 0usize;
    while i < records.len() {
        let idx = records[i].symbol_index;
        let mut j = i + 1;
        while j < records.len()
            && records[j].symbol_index == idx
            && records[j].bob_basis == records[i].bob_basis
        {
            j += 1;
        }
        if j - i > 1 {
            doubles += 1;
            i = j;
            continue;
        }
        let r = records[i];
        let a = frame.symbols[(r.symbol_index as usize + shift) % n];
        if a.basis == r.bob_basis {
            out.push(SiftedBit {
                alice_bit: a.bit,
                bob_bit: r.bob_bit,
                channel: r.channel,
            });
        }
        i = j;
    }
    (out, doubles)
}

/// Per-detector sifted statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sifted: u64,
    pub errors: u64,
}

impl ChannelStats {
    pub fn qber(&self) -> f64 {
        if self.sifted == 0 {
            0.0
        } else {
            self.errors as f64 / self.sifted as f64
        }
    }
}

/// Sifted counts, QBER with spread, and raw-key rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QberReport {
    pub qber: f64,
    pub qber_3sigma: f64,
    pub raw_key_bps: f64,
    pub sifted_count: u64,
    pub error_count: u64,
    pub duration_s: f64,
    pub per_channel: [ChannelStats; 2],
    /// Double-click symbols removed before sifting.
    pub double_clicks_discarded: u64,
}

fn accumulate(pairs: &[SiftedBit]) -> (u64, u64, [ChannelStats; 2]) {
    let mut errors = 0u64;
    let mut per = [ChannelStats::default(); 2];
    for p in pairs {
        let ch = (p.channel & 1) as usize;
        per[ch].sifted += 1;
        if p.alice_bit != p.bob_bit {
            errors += 1;
            per[ch].errors += 1;
        }
    }
    (pairs.len() as u64, errors, per)
}

/// QBER and raw-key report for one contiguous measurement.
pub fn compute_qber(pairs: &[SiftedBit], duration_s: f64) -> Result<QberReport> {
    compute_qber_with(pairs, duration_s, 0)
}

/// Same as [`compute_qber`] carrying a double-click discard count.
pub fn compute_qber_with(
    pairs: &[SiftedBit],
    duration_s: f64,
    double_clicks_discarded: u64,
) -> Result<QberReport> {
    if pairs.is_empty() {
        return Err(Error::EmptySiftedKey);
    }
    let (n, errors, per) = accumulate(pairs);
    let q = errors as f64 / n as f64;
    Ok(QberReport {
        qber: q,
        qber_3sigma: 3.0 * (q * (1.0 - q) / n as f64).sqrt(),
        raw_key_bps: n as f64 / duration_s,
        sifted_count: n,
        error_count: errors,
        duration_s,
        per_channel: per,
        double_clicks_discarded,
    })
}

/// Batched report mirroring consecutive measurements: the 3-sigma field
/// is the binomial term plus three times the spread of the per-batch
/// QBERs.
pub fn compute_qber_batched(batches: &[&[SiftedBit]], duration_s: f64) -> Result<QberReport> {
    let all: Vec<SiftedBit> = batches.iter().flat_map(|b| b.iter().copied()).collect();
    let mut report = compute_qber(&all, duration_s)?;
    let batch_qbers: Vec<f64> = batches
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            let (n, e, _) = accumulate(b);
            e as f64 / n as f64
        })
        .collect();
    if batch_qbers.len() >= 2 {
        let m = batch_qbers.iter().sum::<f64>() / batch_qbers.len() as f64;
        let var = batch_qbers.iter().map(|q| (q - m).powi(2)).sum::<f64>()
            / (batch_qbers.len() - 1) as f64;
        report.qber_3sigma += 3.0 * var.sqrt();
    }
    Ok(report)
}

/// Binary entropy in bits, with h(0) = h(1) = 0.
pub fn binary_entropy(q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q), "entropy argument must be in [0, 1]");
    if q == 0.0 || q == 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// Asymptotic secure fraction for BB84 with equal error rates in both
/// bases: max(0, 1 - 2 h(q)).
pub fn secure_fraction(q: f64) -> f64 {
    assert!((0.0..0.5).contains(&q) || q == 0.0, "secure fraction defined for q in [0, 0.5)");
    (1.0 - 2.0 * binary_entropy(q)).max(0.0)
}

/// QBER at which the secure fraction reaches zero, by bisection on
/// 1 - 2 h(q).
pub fn qber_threshold() -> f64 {
    let mut lo = 1e-12;
    let mut hi = 0.5 - 1e-12;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - 2.0 * binary_entropy(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One-row CSV for a report.
pub fn write_report_csv<W: std::io::Write>(
    report: &QberReport,
    provenance: Option<&str>,
    mut w: W,
) -> Result<()> {
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    writeln!(
        w,
        "qber,qber_3sigma,raw_key_bps,sifted_count,error_count,duration_s,\
         ch0_sifted,ch0_errors,ch1_sifted,ch1_errors,double_clicks_discarded"
    )?;
    writeln!(
        w,
        "{:.6},{:.6},{:.6},{},{},{:.6},{},{},{},{},{}",
        report.qber,
        report.qber_3sigma,
        report.raw_key_bps,
        report.sifted_count,
        report.error_count,
        report.duration_s,
        report.per_channel[0].sifted,
        report.per_channel[0].errors,
        report.per_channel[1].sifted,
        report.per_channel[1].errors,
        report.double_clicks_discarded,
    )?;
    Ok(())
}

/// Human-readable summary block.
pub fn format_report(report: &QberReport) -> String {
    let mut s = String::new();
    use std::fmt::Write;
    let _ = writeln!(s, "sifted bits      : {}", report.sifted_count);
    let _ = writeln!(s, "errors           : {}", report.error_count);
    let _ = writeln!(
        s,
        "QBER             : {:.2}% (3-sigma {:.2}%)",
        report.qber * 100.0,
        report.qber_3sigma * 100.0
    );
    let _ = writeln!(s, "raw key          : {:.1} bit/s", report.raw_key_bps);
    let _ = writeln!(s, "duration         : {:.4} s", report.duration_s);
    for (i, ch) in report.per_channel.iter().enumerate() {
        let _ = writeln!(
            s,
            "detector {i}       : {} sifted, {} errors ({:.2}%)",
            ch.sifted,
            ch.errors,
            ch.qber() * 100.0
        );
    }
    let _ = writeln!(s, "double clicks    : {}", report.double_clicks_discarded);
    let _ = writeln!(
        s,
        "secure fraction  : {:.4} (threshold {:.2}%)",
        secure_fraction(report.qber.min(0.499)),
        qber_threshold() * 100.0
    );
    s
}
