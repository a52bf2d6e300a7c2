//! Photon-level simulator and protocol stack for polarization-encoded
//! BB84 driven by a broadband incoherent light source.
//!
//! The crate models the full chain: spectral slicing of the source,
//! state preparation by either an independent four-modulator encoder or
//! a dual-polarization I/Q phase encoder, propagation over concatenated
//! birefringent fiber segments with slow drift, single-photon detection
//! with dark counts and dead time, and the receive-side protocol stack
//! (temporal filtering, frame synchronization, sifting, QBER and raw-key
//! estimation).
//!
//! Broadband light depolarizes whenever differential group delay spreads
//! the per-wavelength polarization states faster than the source's
//! coherence time; the simulator tracks this through weighted spectral
//! slices whose incoherent mean carries the degree of polarization seen
//! by the receiver.

pub mod encoder;
pub mod error;
pub mod fiber;
pub mod harness;
pub mod polarization;
pub mod protocol;
pub mod receiver;
pub mod rng;
pub mod scenario;
pub mod source;

pub use error::{Error, Result};
pub use polarization::{JonesVector, PoincareRotation, StokesVector};
pub use source::{SliceEnsemble, SourceSpectrum, SpectralSlice};
