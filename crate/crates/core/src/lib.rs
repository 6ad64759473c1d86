//! Numerical engine for temporal-mode optics built on three-pulse photon echoes.
//!
//! A write pulse and a train of weak data pulses imprint a spectral grating in an
//! inhomogeneously broadened atomic ensemble; later read pulses diffract off that
//! grating and emit echoes. Choosing the read-pulse times, amplitudes and phases
//! makes the ensemble act as a programmable interferometer on the temporal modes
//! carried by the data pulses.
//!
//! The crate is organised in layers:
//!
//! * [`types`]: complex mode vectors, unitary matrices, pulses and pulse trains;
//! * [`kernel`]: the echo simulator (exact mode algebra and a spectral FFT path),
//!   decoherence and phase-jitter models;
//! * [`compiler`]: turns a target matrix into a read-pulse schedule, validates
//!   schedules for echo collisions, and provides a triangular-rotation
//!   decomposition for factoring unitaries;
//! * [`usd`]: designs for unambiguous discrimination of non-orthogonal states,
//!   plus the Helstrom and IDP reference bounds;
//! * [`analysis`]: window integration of echo traces and Monte-Carlo rate sweeps;
//! * [`formats`]: deterministic text serialisation of every artefact.
//!
//! Times are nanoseconds, frequencies GHz and phases radians throughout, except
//! where a field is explicitly suffixed otherwise (e.g. coherence times in µs).

pub mod analysis;
pub mod compiler;
pub mod formats;
pub mod kernel;
pub mod types;
pub mod usd;

pub use types::{CoreError, ModeVector, Pulse, PulseRole, PulseShape, PulseTrain, UnitaryMatrix};
