//! Scenario configuration: the full description of one simulated link,
//! serialized as TOML with units carried in the key names.

use serde::{Deserialize, Serialize};

use crate::encoder::{Architecture, BasisSet, EncoderConfig};
use crate::error::{Error, Result};
use crate::protocol::DoubleClickPolicy;
use crate::receiver::DetectorParams;
use crate::rng::content_hash;
use crate::source::{presets, SourceSpectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Preset name; mutually exclusive with `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Explicit spectrum, used when no preset is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<SourceSpectrum>,
    /// Filter window for window-tunable presets, nm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_nm: Option<f64>,
    /// Number of spectral slices carried through the simulation.
    #[serde(default = "default_n_slices")]
    pub n_slices: usize,
}

fn default_n_slices() -> usize {
    512
}

impl SourceConfig {
    pub fn preset(name: &str) -> Self {
        SourceConfig {
            preset: Some(name.to_string()),
            custom: None,
            window_nm: None,
            n_slices: default_n_slices(),
        }
    }

    /// Resolve to a concrete spectrum, optionally overriding the filter
    /// window (used by the bandwidth sweep).
    pub fn resolve(&self, window_override_nm: Option<f64>) -> Result<SourceSpectrum> {
        let window = window_override_nm.or(self.window_nm);
        match (&self.preset, &self.custom) {
            (Some(name), None) => presets::by_name(name, window),
            (None, Some(spec)) => {
                let mut spec = spec.clone();
                if let Some(w) = window_override_nm {
                    // re-slicing a custom spectrum at a new width keeps its
                    // shape family and swaps the width
                    spec.width_nm = w;
                }
                spec.validate()?;
                Ok(spec)
            }
            (Some(_), Some(_)) => Err(Error::config(
                "source: preset and custom spectrum are mutually exclusive",
            )),
            (None, None) => Err(Error::config("source: either preset or custom is required")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    pub length_km: f64,
    #[serde(default = "default_pmd")]
    pub pmd_ps_sqrt_km: f64,
    #[serde(default = "default_atten")]
    pub atten_db_per_km: f64,
    /// Segment count; defaults to max(16, ceil(length_km)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_segments: Option<usize>,
    /// Random-walk scale, radians/sqrt(hour).
    #[serde(default)]
    pub drift_rate: f64,
}

fn default_pmd() -> f64 {
    0.05
}

fn default_atten() -> f64 {
    0.2
}

impl FiberConfig {
    pub fn back_to_back() -> Self {
        FiberConfig {
            length_km: 0.0,
            pmd_ps_sqrt_km: default_pmd(),
            atten_db_per_km: default_atten(),
            n_segments: None,
            drift_rate: 0.0,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.n_segments
            .unwrap_or_else(|| crate::fiber::default_segment_count(self.length_km))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Symbol rate, Hz.
    pub rate_hz: f64,
    /// Mean photon number per symbol at launch.
    pub mu: f64,
    /// Temporal filter window as a fraction of the symbol period.
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    #[serde(default = "default_prbs_order")]
    pub prbs_order: u32,
    #[serde(default = "default_max_shift")]
    pub max_sync_shift: usize,
    #[serde(default)]
    pub double_click: DoubleClickPolicy,
}

fn default_window() -> f64 {
    0.5
}

fn default_prbs_order() -> u32 {
    15
}

fn default_max_shift() -> usize {
    256
}

/// Full description of one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub master_seed: u64,
    /// Symbols per run.
    pub symbols: u64,
    /// Statistics boost: detector efficiency and dark rates are scaled up
    /// by this factor and the dead time down by it, while reported rates
    /// are divided by it. This leaves QBER and all rate ratios unchanged
    /// in expectation and buys Monte Carlo precision at experiment-scale
    /// efficiencies. 1.0 means the detectors run exactly as configured.
    #[serde(default = "default_boost")]
    pub stat_boost: f64,
    /// Extra neutral loss between Alice and Bob, dB.
    #[serde(default)]
    pub optical_budget_db: f64,
    /// Permit mu = 0 (dark-count-only frames); frame synchronization is
    /// skipped because there is no signal to correlate against.
    #[serde(default)]
    pub noise_floor: bool,
    pub source: SourceConfig,
    pub encoder: EncoderConfig,
    pub fiber: FiberConfig,
    pub detector0: DetectorParams,
    pub detector1: DetectorParams,
    pub protocol: ProtocolConfig,
}

fn default_boost() -> f64 {
    1.0
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::config(format!("scenario TOML: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Content hash of the canonical TOML form, embedded in every output
    /// file for provenance.
    pub fn hash(&self) -> u64 {
        content_hash(self.to_toml_string().as_bytes())
    }

    /// Validate the whole scenario, reporting every violated field.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.symbols < 2 {
            problems.push(format!("symbols = {} must be >= 2", self.symbols));
        }
        if !(self.stat_boost >= 1.0) {
            problems.push(format!("stat_boost = {} must be >= 1", self.stat_boost));
        }
        if !(self.protocol.rate_hz > 0.0) {
            problems.push(format!("protocol.rate_hz = {} must be > 0", self.protocol.rate_hz));
        }
        if self.protocol.mu < 0.0 || (self.protocol.mu == 0.0 && !self.noise_floor) {
            problems.push(format!(
                "protocol.mu = {} must be > 0 unless noise_floor is set",
                self.protocol.mu
            ));
        }
        if !(self.protocol.window_fraction > 0.0 && self.protocol.window_fraction <= 1.0) {
            problems.push(format!(
                "protocol.window_fraction = {} must be in (0, 1]",
                self.protocol.window_fraction
            ));
        }
        if self.protocol.max_sync_shift < 4 {
            problems.push(format!(
                "protocol.max_sync_shift = {} must be >= 4",
                self.protocol.max_sync_shift
            ));
        }
        if let Err(Error::Config(mut v)) = self.encoder.validate() {
            problems.append(&mut v);
        }
        if self.fiber.length_km < 0.0 {
            problems.push(format!("fiber.length_km = {} must be >= 0", self.fiber.length_km));
        }
        if self.fiber.pmd_ps_sqrt_km < 0.0 {
            problems.push(format!(
                "fiber.pmd_ps_sqrt_km = {} must be >= 0",
                self.fiber.pmd_ps_sqrt_km
            ));
        }
        if self.fiber.atten_db_per_km < 0.0 {
            problems.push(format!(
                "fiber.atten_db_per_km = {} must be >= 0",
                self.fiber.atten_db_per_km
            ));
        }
        if self.source.n_slices == 0 {
            problems.push("source.n_slices must be >= 1".into());
        }
        if let Err(e) = self.source.resolve(None) {
            problems.push(format!("source: {e}"));
        }
        // boosted detector parameters must stay physical
        for (i, det) in [&self.detector0, &self.detector1].iter().enumerate() {
            if let Err(Error::Config(v)) = det.validate() {
                for p in v {
                    problems.push(format!("detector{i}.{p}"));
                }
            }
            if det.efficiency * self.stat_boost > 1.0 + 1e-12 {
                problems.push(format!(
                    "detector{i}.efficiency * stat_boost = {} exceeds 1",
                    det.efficiency * self.stat_boost
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Detector parameters with the statistics boost folded in.
    pub fn boosted_detector(&self, index: usize) -> DetectorParams {
        let det = if index == 0 { self.detector0 } else { self.detector1 };
        DetectorParams {
            efficiency: (det.efficiency * self.stat_boost).min(1.0),
            dark_rate_cps: det.dark_rate_cps * self.stat_boost,
            dead_time_s: det.dead_time_s / self.stat_boost,
            jitter_s: det.jitter_s,
        }
    }
}

/// A template scenario with sane defaults: 1 GHz, mu = 0.1, back-to-back,
/// 50% carving and windowing, quiet efficient detectors.
pub fn template(name: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        master_seed: 1,
        symbols: 1_000_000,
        stat_boost: 1.0,
        optical_budget_db: 0.0,
        noise_floor: false,
        source: SourceConfig::preset("ase-filtered"),
        encoder: EncoderConfig {
            architecture: Architecture::FourModulator,
            basis_set: BasisSet::HvDa,
            extinction_db: 200.0,
            tx_dgd_ps: 0.0,
            carve_duty: 0.5,
            drive_bandwidth_hz: None,
        },
        fiber: FiberConfig::back_to_back(),
        detector0: DetectorParams {
            efficiency: 0.1,
            dark_rate_cps: 0.0,
            dead_time_s: 0.0,
            jitter_s: None,
        },
        detector1: DetectorParams {
            efficiency: 0.1,
            dark_rate_cps: 0.0,
            dead_time_s: 0.0,
            jitter_s: None,
        },
        protocol: ProtocolConfig {
            rate_hz: 1e9,
            mu: 0.1,
            window_fraction: 0.5,
            prbs_order: 15,
            max_sync_shift: 256,
            double_click: DoubleClickPolicy::Discard,
        },
    }
}
