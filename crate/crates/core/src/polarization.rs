//! Stokes / Jones / Mueller polarization calculus on the Poincaré sphere.
//!
//! Every other module builds on this one. States are carried as Stokes
//! vectors (s0, s1, s2, s3); lossless birefringence acts as a proper
//! rotation of the (s1, s2, s3) part, optionally combined with a neutral
//! transmittance that scales all four components.
//!
//! Sign convention: right-circular light has S3 = +1 and corresponds to
//! the Jones vector (1, i)/sqrt(2), i.e. `ey` leading `ex` by pi/2. The
//! physical 45-degree / spherical 90-degree angle doubling is internal to
//! the Jones-to-Stokes construction; everything downstream works purely
//! in Stokes space.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the Stokes cone and rotation orthogonality
/// checks. Chosen well above double-precision accumulation error for
/// products of up to ~1e3 rotation matrices.
pub const GEOMETRY_TOL: f64 = 1e-9;

// --- small 3-vector helpers -------------------------------------------------

#[inline]
pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn normalize3(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm3(a);
    if n <= 0.0 {
        return None;
    }
    Some([a[0] / n, a[1] / n, a[2] / n])
}

/// Rotate `v` about the unit axis `k` by `angle` (Rodrigues formula).
#[inline]
pub(crate) fn rotate_about(v: [f64; 3], k: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let kxv = cross3(k, v);
    let kdv = dot3(k, v) * (1.0 - c);
    [
        v[0] * c + kxv[0] * s + k[0] * kdv,
        v[1] * c + kxv[1] * s + k[1] * kdv,
        v[2] * c + kxv[2] * s + k[2] * kdv,
    ]
}

// --- Jones ------------------------------------------------------------------

/// Transverse field amplitudes (dimensionless).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector {
    pub ex: Complex64,
    pub ey: Complex64,
}

impl JonesVector {
    pub fn new(ex: Complex64, ey: Complex64) -> Self {
        JonesVector { ex, ey }
    }

    pub fn power(&self) -> f64 {
        self.ex.norm_sqr() + self.ey.norm_sqr()
    }

    pub fn normalized(&self) -> Result<JonesVector> {
        let p = self.power();
        if p <= 0.0 {
            return Err(Error::InvalidState("zero Jones vector".into()));
        }
        let k = 1.0 / p.sqrt();
        Ok(JonesVector::new(self.ex * k, self.ey * k))
    }

    /// Stokes construction. Output is fully polarized (equality in the
    /// Stokes cone). `(1, i)/sqrt(2)` maps to S3 = +1 (right circular).
    pub fn to_stokes(&self) -> Result<StokesVector> {
        let s0 = self.power();
        if s0 <= 0.0 {
            return Err(Error::InvalidState("zero Jones vector".into()));
        }
        let s1 = self.ex.norm_sqr() - self.ey.norm_sqr();
        let c = self.ex.conj() * self.ey;
        Ok(StokesVector::new(s0, s1, 2.0 * c.re, 2.0 * c.im))
    }
}

/// Free-function form of [`JonesVector::to_stokes`].
pub fn jones_to_stokes(j: &JonesVector) -> Result<StokesVector> {
    j.to_stokes()
}

// --- Stokes -----------------------------------------------------------------

/// Polarization state and power carrier. Units of `s0` are whatever the
/// caller uses consistently (photons/symbol in the quantum chain, mW in
/// classical mode); this module never converts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub const fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector { s0, s1, s2, s3 }
    }

    pub fn unpolarized(power: f64) -> Self {
        StokesVector::new(power, 0.0, 0.0, 0.0)
    }

    /// Fully polarized state of the given power along `axis` (unit vector).
    pub fn polarized(power: f64, axis: [f64; 3]) -> Self {
        StokesVector::new(power, power * axis[0], power * axis[1], power * axis[2])
    }

    pub fn polarized_part(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    pub fn polarized_norm(&self) -> f64 {
        norm3(self.polarized_part())
    }

    /// Degree of polarization, sqrt(s1^2+s2^2+s3^2)/s0.
    pub fn dop(&self) -> Result<f64> {
        if self.s0 <= 0.0 {
            return Err(Error::UndefinedDop);
        }
        Ok(self.polarized_norm() / self.s0)
    }

    /// Checks s0 >= 0 and the Stokes cone s1^2+s2^2+s3^2 <= s0^2 within
    /// the relative tolerance.
    pub fn validate(&self) -> Result<()> {
        if !self.s0.is_finite() || self.s0 < 0.0 {
            return Err(Error::InvalidState(format!("s0 = {} must be >= 0", self.s0)));
        }
        let p2 = dot3(self.polarized_part(), self.polarized_part());
        let bound = self.s0 * self.s0 * (1.0 + GEOMETRY_TOL) + GEOMETRY_TOL;
        if p2 > bound {
            return Err(Error::InvalidState(format!(
                "polarized part exceeds total power: |s|^2 = {p2}, s0^2 = {}",
                self.s0 * self.s0
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        StokesVector::new(self.s0 * k, self.s1 * k, self.s2 * k, self.s3 * k)
    }

    pub fn add(&self, other: &StokesVector) -> Self {
        StokesVector::new(
            self.s0 + other.s0,
            self.s1 + other.s1,
            self.s2 + other.s2,
            self.s3 + other.s3,
        )
    }

    /// Apply a Poincaré rotation: the matrix acts on (s1, s2, s3), then
    /// all four components are scaled by the transmittance. DOP is
    /// unchanged because the loss is neutral.
    pub fn rotate(&self, r: &PoincareRotation) -> StokesVector {
        let v = r.apply(self.polarized_part());
        let t = r.transmittance();
        StokesVector::new(self.s0 * t, v[0] * t, v[1] * t, v[2] * t)
    }

    /// Power in the pass arm of an analyzer with the given unit axis:
    /// (s0 + axis . s)/2. The complement arm carries the rest; the two
    /// arms always sum to s0.
    pub fn analyzer_transmission(&self, axis: [f64; 3]) -> f64 {
        0.5 * (self.s0 + dot3(axis, self.polarized_part()))
    }

    /// Pass and block arm powers of a polarizing beam splitter.
    pub fn analyzer_arms(&self, axis: [f64; 3]) -> (f64, f64) {
        let p = self.analyzer_transmission(axis);
        (p, self.s0 - p)
    }

    /// Angle in [0, pi] between the normalized polarized parts.
    pub fn angular_separation(&self, other: &StokesVector) -> Result<f64> {
        let a = normalize3(self.polarized_part())
            .ok_or_else(|| Error::ZeroPolarized("first state has DOP 0".into()))?;
        let b = normalize3(other.polarized_part())
            .ok_or_else(|| Error::ZeroPolarized("second state has DOP 0".into()))?;
        Ok(dot3(a, b).clamp(-1.0, 1.0).acos())
    }
}

/// Free-function forms matching the module's operation vocabulary.
pub fn degree_of_polarization(s: &StokesVector) -> Result<f64> {
    s.dop()
}

pub fn analyzer_transmission(s: &StokesVector, axis: [f64; 3]) -> f64 {
    s.analyzer_transmission(axis)
}

pub fn angular_separation(a: &StokesVector, b: &StokesVector) -> Result<f64> {
    a.angular_separation(b)
}

// --- Poincaré rotation ------------------------------------------------------

/// Proper rotation of the Poincaré sphere plus a neutral transmittance in
/// (0, 1]. This is the Mueller representation of lossless birefringence
/// combined with polarization-independent loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareRotation {
    m: [[f64; 3]; 3],
    transmittance: f64,
}

impl PoincareRotation {
    pub fn identity() -> Self {
        PoincareRotation {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            transmittance: 1.0,
        }
    }

    /// Rotation about `axis` (normalized internally) by `angle` radians.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let k = normalize3(axis).expect("rotation axis must be non-zero");
        let e = [
            rotate_about([1.0, 0.0, 0.0], k, angle),
            rotate_about([0.0, 1.0, 0.0], k, angle),
            rotate_about([0.0, 0.0, 1.0], k, angle),
        ];
        // columns are rotated basis vectors
        let m = [
            [e[0][0], e[1][0], e[2][0]],
            [e[0][1], e[1][1], e[2][1]],
            [e[0][2], e[1][2], e[2][2]],
        ];
        PoincareRotation { m, transmittance: 1.0 }
    }

    /// Same rotation with a neutral transmittance in (0, 1].
    pub fn with_transmittance(mut self, t: f64) -> Self {
        assert!(t > 0.0 && t <= 1.0, "transmittance must be in (0, 1]");
        self.transmittance = t;
        self
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    #[inline]
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1] + self.m[0][2] * v[2],
            self.m[1][0] * v[0] + self.m[1][1] * v[1] + self.m[1][2] * v[2],
            self.m[2][0] * v[0] + self.m[2][1] * v[1] + self.m[2][2] * v[2],
        ]
    }

    /// `self` applied after `inner`; transmittances multiply.
    pub fn compose(&self, inner: &PoincareRotation) -> PoincareRotation {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * inner.m[k][j]).sum();
            }
        }
        PoincareRotation {
            m,
            transmittance: self.transmittance * inner.transmittance,
        }
    }

    /// Largest deviation of M Mᵀ from the identity plus |det - 1|; zero
    /// for an exact proper rotation.
    pub fn orthogonality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let g: f64 = (0..3).map(|k| self.m[i][k] * self.m[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        let det = self.m[0][0] * (self.m[1][1] * self.m[2][2] - self.m[1][2] * self.m[2][1])
            - self.m[0][1] * (self.m[1][0] * self.m[2][2] - self.m[1][2] * self.m[2][0])
            + self.m[0][2] * (self.m[1][0] * self.m[2][1] - self.m[1][1] * self.m[2][0]);
        worst.max((det - 1.0).abs())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.orthogonality_defect();
        if d > GEOMETRY_TOL {
            return Err(Error::InvalidState(format!(
                "matrix is not a proper rotation, defect {d:.3e}"
            )));
        }
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0) {
            return Err(Error::InvalidState(format!(
                "transmittance {} outside (0, 1]",
                self.transmittance
            )));
        }
        Ok(())
    }

    /// Minimal-angle rotation taking unit vector `from` to unit vector `to`.
    /// For antipodal inputs an arbitrary (but deterministic) perpendicular
    /// rotation axis is used.
    pub fn align(from: [f64; 3], to: [f64; 3]) -> Result<PoincareRotation> {
        let f = normalize3(from).ok_or_else(|| Error::ZeroPolarized("align from".into()))?;
        let t = normalize3(to).ok_or_else(|| Error::ZeroPolarized("align to".into()))?;
        let c = dot3(f, t);
        let axis = cross3(f, t);
        let s = norm3(axis);
        if s < 1e-12 {
            if c > 0.0 {
                return Ok(PoincareRotation::identity());
            }
            // antipodal: rotate by pi about any axis perpendicular to f
            let pick = if f[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let perp = normalize3(cross3(f, pick)).expect("perpendicular axis");
            return Ok(PoincareRotation::from_axis_angle(perp, std::f64::consts::PI));
        }
        let k = [axis[0] / s, axis[1] / s, axis[2] / s];
        Ok(PoincareRotation::from_axis_angle(k, s.atan2(c)))
    }
}
