//! Spectral model of the incoherent emitter: spectrum shapes, spectral
//! slicing, photon-budget arithmetic and per-symbol photon statistics.
//!
//! A broadband signal is represented as a [`SliceEnsemble`]: weighted
//! spectral slices, each carrying its own Stokes state. Slices add
//! incoherently, which is what produces depolarization once a channel
//! imprints wavelength-dependent rotations.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::StokesVector;

/// Planck constant, J s.
pub const PLANCK_J_S: f64 = 6.626_070_15e-34;
/// Speed of light, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 2.997_924_58e8;

/// Gaussian spectra are truncated at +-3 FWHM for slicing; the lost power
/// is below 0.03% and the slice count stays bounded.
pub const GAUSSIAN_TRUNCATION_FWHM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumShape {
    Rectangular,
    Gaussian,
    Tabulated,
}

/// Spectral density description of a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpectrum {
    pub shape: SpectrumShape,
    pub center_nm: f64,
    /// Full width for rectangular, FWHM for gaussian. For tabulated
    /// spectra this is descriptive (the table carries its own span).
    pub width_nm: f64,
    /// (wavelength_nm, relative_density) pairs, strictly increasing in
    /// wavelength. Only present for tabulated spectra.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

impl SourceSpectrum {
    pub fn rectangular(center_nm: f64, width_nm: f64) -> Result<Self> {
        let s = SourceSpectrum {
            shape: SpectrumShape::Rectangular,
            center_nm,
            width_nm,
            table: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn gaussian(center_nm: f64, fwhm_nm: f64) -> Result<Self> {
        let s = SourceSpectrum {
            shape: SpectrumShape::Gaussian,
            center_nm,
            width_nm: fwhm_nm,
            table: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn tabulated(table: Vec<(f64, f64)>) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::InvalidSpectrum(
                "tabulated spectrum needs at least 2 points".into(),
            ));
        }
        let lo = table.first().unwrap().0;
        let hi = table.last().unwrap().0;
        let s = SourceSpectrum {
            shape: SpectrumShape::Tabulated,
            center_nm: 0.5 * (lo + hi),
            width_nm: hi - lo,
            table: Some(table),
        };
        s.validate()?;
        Ok(s)
    }

    /// Read a tabulated spectrum from 2-column CSV
    /// (`wavelength_nm,relative_density`); the header line is required.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = rdr
                .headers()
                .map_err(|e| Error::Parse(format!("spectrum CSV header: {e}")))?;
            if headers.len() != 2
                || headers.get(0) != Some("wavelength_nm")
                || headers.get(1) != Some("relative_density")
            {
                return Err(Error::Parse(
                    "spectrum CSV must start with header 'wavelength_nm,relative_density'".into(),
                ));
            }
        }
        let mut table = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(format!("spectrum CSV: {e}")))?;
            let lam: f64 = rec
                .get(0)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("wavelength_nm: {e}")))?;
            let d: f64 = rec
                .get(1)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("relative_density: {e}")))?;
            table.push((lam, d));
        }
        SourceSpectrum::tabulated(table)
    }

    pub fn from_csv_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        SourceSpectrum::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_nm > 0.0) {
            return Err(Error::InvalidSpectrum(format!(
                "width_nm = {} must be > 0",
                self.width_nm
            )));
        }
        match self.shape {
            SpectrumShape::Tabulated => {
                let table = self.table.as_ref().ok_or_else(|| {
                    Error::InvalidSpectrum("tabulated shape requires a table".into())
                })?;
                if table.len() < 2 {
                    return Err(Error::InvalidSpectrum("table needs at least 2 points".into()));
                }
                let mut any_positive = false;
                for w in table.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::InvalidSpectrum(
                            "table wavelengths must be strictly increasing".into(),
                        ));
                    }
                }
                for &(_, d) in table {
                    if d < 0.0 {
                        return Err(Error::InvalidSpectrum("densities must be non-negative".into()));
                    }
                    any_positive |= d > 0.0;
                }
                if !any_positive {
                    return Err(Error::InvalidSpectrum("all densities are zero".into()));
                }
            }
            _ => {
                if self.table.is_some() {
                    return Err(Error::InvalidSpectrum(
                        "table only valid for tabulated shape".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Wavelength support used for slicing.
    fn support(&self) -> (f64, f64) {
        match self.shape {
            SpectrumShape::Rectangular => (
                self.center_nm - 0.5 * self.width_nm,
                self.center_nm + 0.5 * self.width_nm,
            ),
            SpectrumShape::Gaussian => (
                self.center_nm - GAUSSIAN_TRUNCATION_FWHM * self.width_nm,
                self.center_nm + GAUSSIAN_TRUNCATION_FWHM * self.width_nm,
            ),
            SpectrumShape::Tabulated => {
                let t = self.table.as_ref().expect("validated");
                (t.first().unwrap().0, t.last().unwrap().0)
            }
        }
    }

    fn density(&self, lambda_nm: f64) -> f64 {
        match self.shape {
            SpectrumShape::Rectangular => {
                let (lo, hi) = self.support();
                if lambda_nm >= lo && lambda_nm <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            SpectrumShape::Gaussian => {
                let sigma = self.width_nm / (8.0 * 2f64.ln()).sqrt();
                let x = (lambda_nm - self.center_nm) / sigma;
                (-0.5 * x * x).exp()
            }
            SpectrumShape::Tabulated => {
                let t = self.table.as_ref().expect("validated");
                if lambda_nm < t.first().unwrap().0 || lambda_nm > t.last().unwrap().0 {
                    return 0.0;
                }
                match t.binary_search_by(|&(l, _)| l.partial_cmp(&lambda_nm).unwrap()) {
                    Ok(i) => t[i].1,
                    Err(i) => {
                        let (l0, d0) = t[i - 1];
                        let (l1, d1) = t[i];
                        d0 + (d1 - d0) * (lambda_nm - l0) / (l1 - l0)
                    }
                }
            }
        }
    }

    /// Split the spectrum into `n` slices. Slices sit at quantile-centered
    /// wavelengths of equal-width bins over the support, with weights
    /// proportional to the integrated density per bin (renormalized to 1).
    /// Slice states start out unpolarized; the encoder replaces them.
    pub fn slice(&self, n: usize) -> Result<SliceEnsemble> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidSpectrum("slice count must be >= 1".into()));
        }
        let slices = if self.shape == SpectrumShape::Rectangular {
            // uniform density: bin midpoints and equal weights, exactly
            let (lo, hi) = self.support();
            let bin = (hi - lo) / n as f64;
            (0..n)
                .map(|i| SpectralSlice {
                    lambda_nm: lo + (i as f64 + 0.5) * bin,
                    weight: 1.0 / n as f64,
                    state: StokesVector::unpolarized(1.0),
                })
                .collect()
        } else {
            self.slice_numeric(n)?
        };
        Ok(SliceEnsemble { slices, mu: 0.0 })
    }

    fn slice_numeric(&self, n: usize) -> Result<Vec<SpectralSlice>> {
        let (lo, hi) = self.support();
        // global fine grid; CDF by trapezoid
        let m = (8 * n).max(4096);
        let step = (hi - lo) / m as f64;
        let mut grid = Vec::with_capacity(m + 1);
        let mut cdf = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        let mut prev = self.density(lo);
        grid.push(lo);
        cdf.push(0.0);
        for i in 1..=m {
            let x = lo + i as f64 * step;
            let d = self.density(x);
            acc += 0.5 * (prev + d) * step;
            prev = d;
            grid.push(x);
            cdf.push(acc);
        }
        let total = acc;
        if !(total > 0.0) {
            return Err(Error::InvalidSpectrum("spectrum integrates to zero".into()));
        }
        let cdf_at = |x: f64| -> f64 {
            let t = ((x - lo) / step).clamp(0.0, m as f64);
            let i = (t as usize).min(m - 1);
            let frac = t - i as f64;
            cdf[i] + (cdf[i + 1] - cdf[i]) * frac
        };
        let invert = |target: f64, i0: usize| -> f64 {
            // walk the grid from i0 to find the bracketing cell
            let mut i = i0;
            while i + 1 <= m && cdf[i + 1] < target {
                i += 1;
            }
            let c0 = cdf[i];
            let c1 = cdf[(i + 1).min(m)];
            let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
            grid[i] + frac * step
        };
        let bin = (hi - lo) / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut walk = 0usize;
        for i in 0..n {
            let a = lo + i as f64 * bin;
            let b = a + bin;
            let ca = cdf_at(a);
            let cb = cdf_at(b);
            let w = (cb - ca).max(0.0);
            // quantile center: median of the density restricted to the bin;
            // midpoint fallback for (numerically) empty bins
            let lambda = if w > total * 1e-15 {
                invert(ca + 0.5 * w, walk)
            } else {
                0.5 * (a + b)
            };
            walk = ((lambda - lo) / step) as usize;
            out.push(SpectralSlice {
                lambda_nm: lambda,
                weight: w,
                state: StokesVector::unpolarized(1.0),
            });
        }
        let sum: f64 = out.iter().map(|s| s.weight).sum();
        for s in &mut out {
            s.weight /= sum;
        }
        Ok(out)
    }
}

/// Free-function form of [`SourceSpectrum::slice`].
pub fn slice_spectrum(spec: &SourceSpectrum, n: usize) -> Result<SliceEnsemble> {
    spec.slice(n)
}

/// One spectral slice of a broadband signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSlice {
    pub lambda_nm: f64,
    /// Fraction of total power in this slice.
    pub weight: f64,
    pub state: StokesVector,
}

/// A broadband signal as weighted spectral slices plus the mean photon
/// number per symbol carried by the whole ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceEnsemble {
    pub slices: Vec<SpectralSlice>,
    /// Mean photon number per symbol (photons/symbol).
    pub mu: f64,
}

impl SliceEnsemble {
    pub fn single(lambda_nm: f64, state: StokesVector, mu: f64) -> Self {
        SliceEnsemble {
            slices: vec![SpectralSlice { lambda_nm, weight: 1.0, state }],
            mu,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if self.mu < 0.0 {
            return Err(Error::InvalidState(format!("mu = {} must be >= 0", self.mu)));
        }
        let sum: f64 = self.slices.iter().map(|s| s.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("slice weights sum to {sum}, expected 1")));
        }
        for w in self.slices.windows(2) {
            if w[1].lambda_nm <= w[0].lambda_nm {
                return Err(Error::InvalidState(
                    "slice wavelengths must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    /// Incoherent superposition: weighted component-wise sum of the slice
    /// Stokes vectors.
    pub fn mean_stokes(&self) -> Result<StokesVector> {
        if self.slices.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let mut acc = StokesVector::new(0.0, 0.0, 0.0, 0.0);
        for s in &self.slices {
            acc = acc.add(&s.state.scaled(s.weight));
        }
        Ok(acc)
    }

    /// DOP of the incoherent mean.
    pub fn dop(&self) -> Result<f64> {
        self.mean_stokes()?.dop()
    }

    /// Power-weighted mean wavelength, used as the phase reference.
    pub fn center_lambda_nm(&self) -> f64 {
        self.slices.iter().map(|s| s.weight * s.lambda_nm).sum()
    }
}

/// Free-function form of [`SliceEnsemble::mean_stokes`].
pub fn ensemble_mean(ensemble: &SliceEnsemble) -> Result<StokesVector> {
    ensemble.mean_stokes()
}

// --- photon budget ------------------------------------------------------

/// Launched optical power in dBm for a mean photon number per symbol, a
/// symbol rate and a wavelength: 10 log10(mu * rate * h c / lambda / 1 mW).
pub fn launch_power_dbm(mu: f64, rate_hz: f64, lambda_nm: f64) -> f64 {
    let photon_energy_j = PLANCK_J_S * SPEED_OF_LIGHT_M_S / (lambda_nm * 1e-9);
    let power_w = mu * rate_hz * photon_energy_j;
    10.0 * (power_w / 1e-3).log10()
}

/// Margin between the source output power and the required launch power.
pub fn headroom_db(source_dbm: f64, mu: f64, rate_hz: f64, lambda_nm: f64) -> f64 {
    source_dbm - launch_power_dbm(mu, rate_hz, lambda_nm)
}

/// Poisson photon count with the given mean. `mean` must be >= 0.
pub fn sample_photon_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    assert!(mean >= 0.0, "photon count mean must be >= 0");
    if mean == 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    let x: f64 = dist.sample(rng);
    x as u64
}

// --- presets --------------------------------------------------------------

/// Center wavelength of the tunable-filter scenarios.
pub const OTF_CENTER_NM: f64 = 1578.0;
/// FWHM of the peaked envelope under the tunable filter; together with the
/// window width this sets how the effective bandwidth saturates for wide
/// filter settings.
pub const OTF_ENVELOPE_FWHM_NM: f64 = 5.0;

pub mod presets {
    use super::*;

    /// Broadband emitter, no filter: gaussian, 20 nm FWHM centered at 1581 nm.
    pub fn geonsi_unfiltered() -> SourceSpectrum {
        SourceSpectrum::gaussian(1581.0, 20.0).expect("valid preset")
    }

    /// Emitter behind the 14 nm bandpass centered at 1590 nm.
    pub fn geonsi_filtered() -> SourceSpectrum {
        SourceSpectrum::rectangular(1590.0, 14.0).expect("valid preset")
    }

    /// ASE source behind the 25 GHz (0.2 nm) bandpass at 1539.1 nm.
    pub fn ase_filtered() -> SourceSpectrum {
        SourceSpectrum::rectangular(1539.1, 0.2).expect("valid preset")
    }

    /// ASE source behind a tunable optical filter opened to `window_nm`:
    /// a peaked (Lorentzian) envelope truncated to the filter window,
    /// realized as a tabulated spectrum.
    pub fn ase_otf(window_nm: f64) -> Result<SourceSpectrum> {
        ase_otf_custom(OTF_CENTER_NM, OTF_ENVELOPE_FWHM_NM, window_nm)
    }

    /// [`ase_otf`] with explicit center and envelope width, for
    /// calibration studies that substitute a different source shape.
    pub fn ase_otf_custom(
        center_nm: f64,
        envelope_fwhm_nm: f64,
        window_nm: f64,
    ) -> Result<SourceSpectrum> {
        if !(window_nm > 0.0) {
            return Err(Error::InvalidSpectrum("window_nm must be > 0".into()));
        }
        if !(envelope_fwhm_nm > 0.0) {
            return Err(Error::InvalidSpectrum("envelope FWHM must be > 0".into()));
        }
        let half_gamma = envelope_fwhm_nm / 2.0;
        let n = 512usize;
        let lo = center_nm - window_nm / 2.0;
        let step = window_nm / n as f64;
        let table: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let lam = lo + i as f64 * step;
                let x = (lam - center_nm) / half_gamma;
                (lam, 1.0 / (1.0 + x * x))
            })
            .collect();
        SourceSpectrum::tabulated(table)
    }

    /// Resolve a preset by name. `window_nm` applies to window-tunable
    /// presets and is ignored otherwise.
    pub fn by_name(name: &str, window_nm: Option<f64>) -> Result<SourceSpectrum> {
        match name {
            "geonsi-unfiltered" => Ok(geonsi_unfiltered()),
            "geonsi-filtered" => Ok(geonsi_filtered()),
            "ase-filtered" => Ok(ase_filtered()),
            "ase-otf" => ase_otf(window_nm.unwrap_or(1.0)),
            other => Err(Error::config(format!("unknown source preset '{other}'"))),
        }
    }
}
