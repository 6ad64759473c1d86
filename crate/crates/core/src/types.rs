//! Core value types: complex amplitudes, labelled mode vectors, unitary
//! matrices, optical pulses and pulse trains.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

/// Complex field amplitude (arbitrary units; intensities are |amplitude|^2).
pub type C64 = Complex64;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = DVector<C64>;

/// Max |U^H U - I| entry allowed before a matrix is rejected as non-unitary.
pub const UNITARITY_TOL: f64 = 1e-10;
/// Tolerance on |norm^2 - 1| for a mode vector to count as normalised.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    Shape { rows: usize, cols: usize },
    #[error("matrix is not unitary: max |U^H U - I| entry = {deviation:.3e}")]
    NotUnitary { deviation: f64 },
    #[error("non-finite amplitude at index {index}")]
    NonFinite { index: usize },
    #[error("mode vector must have at least one mode")]
    EmptyVector,
    #[error("mode vector has zero norm and cannot be normalised")]
    ZeroNorm,
    #[error("invalid pulse: {reason}")]
    InvalidPulse { reason: String },
    #[error("pulses at index {first} and {second} share center time {time} ns")]
    CoincidentPulses { first: usize, second: usize, time: f64 },
}

/// A state over discrete temporal modes: one complex amplitude per mode plus a
/// human-readable label per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector {
    amplitudes: Vec<C64>,
    labels: Vec<String>,
}

impl ModeVector {
    /// Builds a mode vector, checking that amplitudes are finite and that
    /// there is exactly one label per mode.
    pub fn new(amplitudes: Vec<C64>, labels: Vec<String>) -> Result<Self, CoreError> {
        if amplitudes.is_empty() {
            return Err(CoreError::EmptyVector);
        }
        if labels.len() != amplitudes.len() {
            return Err(CoreError::Dimension { expected: amplitudes.len(), found: labels.len() });
        }
        for (i, a) in amplitudes.iter().enumerate() {
            if !a.re.is_finite() || !a.im.is_finite() {
                return Err(CoreError::NonFinite { index: i });
            }
        }
        Ok(Self { amplitudes, labels })
    }

    /// Builds a mode vector with generated labels `m0`, `m1`, ...
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self, CoreError> {
        let labels = (0..amplitudes.len()).map(|i| format!("m{i}")).collect();
        Self::new(amplitudes, labels)
    }

    /// Real amplitudes convenience constructor, generated labels.
    pub fn from_reals(amplitudes: &[f64]) -> Result<Self, CoreError> {
        Self::from_amplitudes(amplitudes.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn amplitude(&self, index: usize) -> C64 {
        self.amplitudes[index]
    }

    pub fn as_dvector(&self) -> CVec {
        CVec::from_column_slice(&self.amplitudes)
    }

    /// Sum of |a_k|^2.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// True when the Born-rule weights sum to 1 within [`NORM_TOL`].
    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOL
    }

    /// Returns a unit-norm copy, keeping labels.
    pub fn normalized(&self) -> Result<Self, CoreError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(CoreError::ZeroNorm);
        }
        let amplitudes = self.amplitudes.iter().map(|a| a / n).collect();
        Ok(Self { amplitudes, labels: self.labels.clone() })
    }

    /// Hermitian inner product <self|other>, conjugate-linear in `self`.
    pub fn inner_product(&self, other: &ModeVector) -> Result<C64, CoreError> {
        if self.dim() != other.dim() {
            return Err(CoreError::Dimension { expected: self.dim(), found: other.dim() });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Zero-pads to `dim` modes, extending labels with `m{k}` names.
    pub fn padded_to(&self, dim: usize) -> Result<Self, CoreError> {
        if dim < self.dim() {
            return Err(CoreError::Dimension { expected: self.dim(), found: dim });
        }
        let mut amplitudes = self.amplitudes.clone();
        let mut labels = self.labels.clone();
        for k in self.dim()..dim {
            amplitudes.push(C64::new(0.0, 0.0));
            labels.push(format!("m{k}"));
        }
        Ok(Self { amplitudes, labels })
    }
}

/// Report from a unitarity check: largest deviation entry of U^H U from I.
#[derive(Debug, Clone, Copy)]
pub struct UnitarityReport {
    pub max_deviation: f64,
    pub is_unitary: bool,
}

/// Checks a square matrix for unitarity against [`UNITARITY_TOL`].
pub fn check_unitary(m: &CMat) -> Result<UnitarityReport, CoreError> {
    if m.nrows() != m.ncols() {
        return Err(CoreError::Shape { rows: m.nrows(), cols: m.ncols() });
    }
    let d = m.nrows();
    let gram = m.adjoint() * m;
    let mut max_deviation: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            max_deviation = max_deviation.max((gram[(i, j)] - target).norm());
        }
    }
    Ok(UnitarityReport { max_deviation, is_unitary: max_deviation <= UNITARITY_TOL })
}

/// A verified unitary matrix. Construction fails unless U^H U = I within
/// [`UNITARITY_TOL`], so holders can rely on norm preservation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    entries: CMat,
}

impl UnitaryMatrix {
    pub fn new(entries: CMat) -> Result<Self, CoreError> {
        for (i, e) in entries.iter().enumerate() {
            if !e.re.is_finite() || !e.im.is_finite() {
                return Err(CoreError::NonFinite { index: i });
            }
        }
        let report = check_unitary(&entries)?;
        if !report.is_unitary {
            return Err(CoreError::NotUnitary { deviation: report.max_deviation });
        }
        Ok(Self { entries })
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: CMat::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn into_entries(self) -> CMat {
        self.entries
    }

    pub fn adjoint(&self) -> Self {
        Self { entries: self.entries.adjoint() }
    }

    /// Applies the matrix to a mode vector. Labels carry over unchanged: the
    /// transformation acts on amplitudes within the same mode basis.
    pub fn apply(&self, v: &ModeVector) -> Result<ModeVector, CoreError> {
        if v.dim() != self.dim() {
            return Err(CoreError::Dimension { expected: self.dim(), found: v.dim() });
        }
        let out = &self.entries * v.as_dvector();
        ModeVector::new(out.iter().copied().collect(), v.labels().to_vec())
    }
}

/// Draws a Haar-like random unitary: complex Gaussian matrix orthonormalised
/// column by column (Gram-Schmidt), which is exact unitarity by construction.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> UnitaryMatrix {
    use rand_distr::{Distribution, StandardNormal};
    assert!(dim >= 1, "dimension must be at least 1");
    let mut cols: Vec<CVec> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v = CVec::from_fn(dim, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        });
        for c in &cols {
            let overlap = c.dotc(&v);
            v -= c * overlap;
        }
        let n = v.norm();
        if n > 1e-6 {
            cols.push(v / C64::new(n, 0.0));
        }
    }
    let entries = CMat::from_columns(&cols.iter().map(|c| c.clone()).collect::<Vec<_>>());
    UnitaryMatrix::new(entries).expect("Gram-Schmidt output is unitary")
}

/// Role a pulse plays in the three-pulse echo protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PulseRole {
    /// Strong preparation pulse that opens the storage window.
    Write,
    /// Weak pulses carrying the input temporal modes.
    Data,
    /// Retrieval pulses; their times/phases program the transformation.
    Read,
}

impl PulseRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PulseRole::Write => "write",
            PulseRole::Data => "data",
            PulseRole::Read => "read",
        }
    }
}

/// Temporal envelope family of a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PulseShape {
    #[default]
    Rectangular,
    Gaussian,
}

impl PulseShape {
    pub fn as_str(self) -> &'static str {
        match self {
            PulseShape::Rectangular => "rect",
            PulseShape::Gaussian => "gauss",
        }
    }
}

/// A single optical pulse. `duration` is the full width of the rectangular
/// envelope, or the intensity FWHM for the Gaussian envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub role: PulseRole,
    /// Envelope center, ns.
    pub center_time: f64,
    /// Full width (rect) or FWHM (gauss), ns. Strictly positive.
    pub duration: f64,
    /// Field amplitude, >= 0.
    pub amplitude: f64,
    /// Carrier phase, rad.
    pub phase: f64,
    pub shape: PulseShape,
}

impl Pulse {
    pub fn new(
        role: PulseRole,
        center_time: f64,
        duration: f64,
        amplitude: f64,
        phase: f64,
    ) -> Result<Self, CoreError> {
        Self::with_shape(role, center_time, duration, amplitude, phase, PulseShape::default())
    }

    pub fn with_shape(
        role: PulseRole,
        center_time: f64,
        duration: f64,
        amplitude: f64,
        phase: f64,
        shape: PulseShape,
    ) -> Result<Self, CoreError> {
        if !center_time.is_finite() || !duration.is_finite() || !amplitude.is_finite() || !phase.is_finite() {
            return Err(CoreError::InvalidPulse { reason: "non-finite parameter".into() });
        }
        if duration <= 0.0 {
            return Err(CoreError::InvalidPulse { reason: format!("duration {duration} ns must be > 0") });
        }
        if amplitude < 0.0 {
            return Err(CoreError::InvalidPulse {
                reason: format!("amplitude {amplitude} must be >= 0 (phase carries the sign)"),
            });
        }
        Ok(Self { role, center_time, duration, amplitude, phase, shape })
    }

    /// amplitude * exp(i phase).
    pub fn complex_amplitude(&self) -> C64 {
        C64::from_polar(self.amplitude, self.phase)
    }

    /// Unit-peak envelope value at time `t` (ns).
    pub fn envelope(&self, t: f64) -> f64 {
        let dt = t - self.center_time;
        match self.shape {
            PulseShape::Rectangular => {
                if dt.abs() <= 0.5 * self.duration {
                    1.0
                } else {
                    0.0
                }
            }
            // FWHM convention: exp(-4 ln2 (t/tau)^2) halves at t = tau/2
            PulseShape::Gaussian => (-4.0 * std::f64::consts::LN_2 * (dt / self.duration).powi(2)).exp(),
        }
    }

    /// Integral of the unit-peak envelope over all time, ns.
    pub fn shape_integral(&self) -> f64 {
        match self.shape {
            PulseShape::Rectangular => self.duration,
            PulseShape::Gaussian => self.duration * (PI / (4.0 * std::f64::consts::LN_2)).sqrt(),
        }
    }

    /// Analytic spectrum E(f) = integral of amplitude e^{i phase} envelope(t)
    /// e^{-2 pi i f t} dt, with f in GHz and t in ns.
    pub fn spectrum(&self, f: f64) -> C64 {
        let shape = match self.shape {
            PulseShape::Rectangular => {
                let x = PI * f * self.duration;
                self.duration * sinc(x)
            }
            PulseShape::Gaussian => {
                let a = 4.0 * std::f64::consts::LN_2;
                self.shape_integral() * (-(PI * f * self.duration).powi(2) / a).exp()
            }
        };
        self.complex_amplitude() * shape * C64::from_polar(1.0, -2.0 * PI * f * self.center_time)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// An ordered pulse sequence. Center times are strictly increasing and at most
/// one write pulse is present; when the train is role-complete the write pulse
/// comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pulses: Vec<Pulse>,
}

impl PulseTrain {
    /// Sorts the pulses by center time and validates the ordering invariants.
    pub fn new(mut pulses: Vec<Pulse>) -> Result<Self, CoreError> {
        pulses.sort_by(|a, b| a.center_time.total_cmp(&b.center_time));
        for i in 1..pulses.len() {
            if pulses[i].center_time == pulses[i - 1].center_time {
                return Err(CoreError::CoincidentPulses {
                    first: i - 1,
                    second: i,
                    time: pulses[i].center_time,
                });
            }
        }
        let writes: Vec<usize> = pulses
            .iter()
            .enumerate()
            .filter(|(_, p)| p.role == PulseRole::Write)
            .map(|(i, _)| i)
            .collect();
        if writes.len() > 1 {
            return Err(CoreError::InvalidPulse {
                reason: format!("train holds {} write pulses, at most one allowed", writes.len()),
            });
        }
        if let Some(&w) = writes.first() {
            if w != 0 {
                return Err(CoreError::InvalidPulse {
                    reason: "write pulse must precede every other pulse".into(),
                });
            }
        }
        Ok(Self { pulses })
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    /// Pulses of one role in time order, with their index within that role.
    pub fn by_role(&self, role: PulseRole) -> Vec<&Pulse> {
        self.pulses.iter().filter(|p| p.role == role).collect()
    }

    pub fn write_pulse(&self) -> Option<&Pulse> {
        self.pulses.iter().find(|p| p.role == PulseRole::Write)
    }

    /// True when the train holds a write, at least one data and at least one
    /// read pulse.
    pub fn is_role_complete(&self) -> bool {
        self.write_pulse().is_some()
            && self.pulses.iter().any(|p| p.role == PulseRole::Data)
            && self.pulses.iter().any(|p| p.role == PulseRole::Read)
    }

    pub fn max_duration(&self) -> f64 {
        self.pulses.iter().map(|p| p.duration).fold(0.0, f64::max)
    }

    /// Copy with a closure applied to every pulse (used by the jitter model).
    pub fn map_pulses<F: FnMut(usize, &Pulse) -> Pulse>(&self, mut f: F) -> Result<Self, CoreError> {
        let pulses = self.pulses.iter().enumerate().map(|(i, p)| f(i, p)).collect();
        Self::new(pulses)
    }
}
