//! Echo simulation kernel.
//!
//! Two complementary paths compute the emitted echo field for a pulse train:
//!
//! * the **abstract path** ([`echo_events`], [`simulate_abstract`]) works the
//!   discrete mode algebra: every (read, data) pair produces one echo event,
//!   coincident events add coherently, and the trace is a rendering of the
//!   resulting event list;
//! * the **spectral path** ([`simulate_spectral`]) forms the product of the
//!   three pulse spectra on a frequency grid, so the echo appears as the
//!   inverse transform of conj(write) x data x read, with the write and read
//!   spectra normalised by their envelope areas so a (j,k) echo carries the
//!   same complex amplitude as the corresponding abstract event.
//!
//! A read pulse arriving at delay R - t_w after the write retrieves the data
//! pulse stored at d - t_w, emitting at t = R + (d - t_w). The event amplitude
//! is kappa conj(w) a_d a_r exp(-(R - t_w)/T2): dephasing is referenced to the
//! data pulse, so the decay a given read pulse imprints is the same for every
//! data mode it retrieves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use thiserror::Error;

use crate::types::{C64, CoreError, Pulse, PulseRole, PulseShape, PulseTrain};

pub const DEFAULT_BANDWIDTH_GHZ: f64 = 2.0;
pub const DEFAULT_GRID_POINTS: usize = 1 << 16;
pub const DEFAULT_T2_US: f64 = 18.0;
/// Phase-jitter sigma reproducing a few-percent discrimination error floor,
/// calibrated by Monte-Carlo sweep (see `apply_phase_jitter`).
pub const CALIBRATED_JITTER_SIGMA: f64 = 0.28;
pub const DEFAULT_JITTER_INTRA_FACTOR: f64 = 0.2;
/// Outer product-spectrum bins may hold at most this fraction of the peak
/// before the grid is rejected as aliased.
const ALIASING_THRESHOLD: f64 = 1e-6;
/// Fraction of the band counted as "outer" for the aliasing guard.
const ALIASING_BAND_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("pulse train is missing a {missing} pulse")]
    IncompleteTrain { missing: &'static str },
    #[error("pulse train ordering violated: {reason}")]
    Ordering { reason: String },
    #[error("frequency grid too coarse: {reason}")]
    GridTooCoarse { reason: String },
    #[error("invalid ensemble model: {reason}")]
    InvalidModel { reason: String },
    #[error("cluster assignment covers {found} read pulses, train has {expected}")]
    ClusterCount { expected: usize, found: usize },
    #[error("invalid trace: {reason}")]
    InvalidTrace { reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Physical model of the storage medium and the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    /// Full simulated bandwidth, GHz. Time step of every trace is 1/bandwidth.
    pub bandwidth_ghz: f64,
    /// Number of frequency samples for the spectral path.
    pub grid_points: usize,
    /// Optical coherence time T2, in microseconds. May be infinite.
    pub t2_coherence_us: f64,
    /// Overall echo conversion factor kappa multiplying every event amplitude.
    pub optical_depth_scale: f64,
    /// Std-dev (rad) of the read-pulse phase noise; 0 disables jitter.
    pub phase_jitter_sigma: f64,
    /// Per-cluster jitter component as a fraction of `phase_jitter_sigma`.
    pub jitter_intra_factor: f64,
    /// Fractional grating amplitude consumed by each read pass, in [0, 1).
    pub depletion_eta: f64,
}

impl Default for EnsembleModel {
    fn default() -> Self {
        Self {
            bandwidth_ghz: DEFAULT_BANDWIDTH_GHZ,
            grid_points: DEFAULT_GRID_POINTS,
            t2_coherence_us: DEFAULT_T2_US,
            optical_depth_scale: 1.0,
            phase_jitter_sigma: 0.0,
            jitter_intra_factor: DEFAULT_JITTER_INTRA_FACTOR,
            depletion_eta: 0.0,
        }
    }
}

impl EnsembleModel {
    /// Lossless, noiseless reference model: infinite coherence time, unit
    /// conversion factor, no depletion, no phase jitter.
    pub fn ideal() -> Self {
        Self { t2_coherence_us: f64::INFINITY, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let fail = |reason: String| Err(KernelError::InvalidModel { reason });
        if !(self.bandwidth_ghz > 0.0) || !self.bandwidth_ghz.is_finite() {
            return fail(format!("bandwidth {} GHz must be positive and finite", self.bandwidth_ghz));
        }
        if self.grid_points < 16 {
            return fail(format!("grid_points {} below minimum of 16", self.grid_points));
        }
        if !(self.t2_coherence_us > 0.0) {
            return fail(format!("t2_coherence {} us must be positive", self.t2_coherence_us));
        }
        if !(self.optical_depth_scale >= 0.0) || !self.optical_depth_scale.is_finite() {
            return fail(format!("optical_depth_scale {} must be >= 0", self.optical_depth_scale));
        }
        if !(self.phase_jitter_sigma >= 0.0) || !self.phase_jitter_sigma.is_finite() {
            return fail(format!("phase_jitter_sigma {} must be >= 0", self.phase_jitter_sigma));
        }
        if !(self.jitter_intra_factor >= 0.0) || !self.jitter_intra_factor.is_finite() {
            return fail(format!("jitter_intra_factor {} must be >= 0", self.jitter_intra_factor));
        }
        if !(0.0..1.0).contains(&self.depletion_eta) {
            return fail(format!("depletion_eta {} must lie in [0, 1)", self.depletion_eta));
        }
        Ok(())
    }

    /// T2 in ns (simulation time unit).
    pub fn t2_ns(&self) -> f64 {
        self.t2_coherence_us * 1e3
    }

    /// Trace sample spacing, ns.
    pub fn sample_dt(&self) -> f64 {
        1.0 / self.bandwidth_ghz
    }
}

/// Role-sorted view of a complete train.
struct TrainView<'a> {
    write: &'a Pulse,
    data: Vec<&'a Pulse>,
    read: Vec<&'a Pulse>,
}

impl<'a> TrainView<'a> {
    fn classify(train: &'a PulseTrain) -> Result<Self, KernelError> {
        let write = train.write_pulse().ok_or(KernelError::IncompleteTrain { missing: "write" })?;
        let data = train.by_role(PulseRole::Data);
        let read = train.by_role(PulseRole::Read);
        if data.is_empty() {
            return Err(KernelError::IncompleteTrain { missing: "data" });
        }
        if read.is_empty() {
            return Err(KernelError::IncompleteTrain { missing: "read" });
        }
        let last_data = data.last().unwrap().center_time;
        let first_read = read.first().unwrap().center_time;
        if last_data >= first_read {
            return Err(KernelError::Ordering {
                reason: format!(
                    "data pulse at {last_data} ns does not precede read pulse at {first_read} ns"
                ),
            });
        }
        if write.center_time >= data.first().unwrap().center_time {
            return Err(KernelError::Ordering {
                reason: "write pulse must precede the first data pulse".into(),
            });
        }
        Ok(Self { write, data, read })
    }
}

/// One coherent echo emission: possibly several (read, data) pairs landing at
/// the same time, summed.
#[derive(Debug, Clone)]
pub struct EchoEvent {
    /// Emission center time, ns (time of the first contributing pair).
    pub time: f64,
    /// Coherent sum of the contributing pair amplitudes.
    pub amplitude: C64,
    /// Envelope width inherited from the first contributing data pulse, ns.
    pub duration: f64,
    pub shape: PulseShape,
    /// Contributing (read_index, data_index) pairs, indices within each role.
    pub contributions: Vec<(usize, usize)>,
}

impl EchoEvent {
    pub fn envelope(&self, t: f64) -> f64 {
        let dt = t - self.time;
        match self.shape {
            PulseShape::Rectangular => {
                if dt.abs() <= 0.5 * self.duration {
                    1.0
                } else {
                    0.0
                }
            }
            PulseShape::Gaussian => {
                (-4.0 * std::f64::consts::LN_2 * (dt / self.duration).powi(2)).exp()
            }
        }
    }

    /// Envelope area, ns (matches `Pulse::shape_integral` conventions).
    pub fn shape_integral(&self) -> f64 {
        match self.shape {
            PulseShape::Rectangular => self.duration,
            PulseShape::Gaussian => {
                self.duration * (std::f64::consts::PI / (4.0 * std::f64::consts::LN_2)).sqrt()
            }
        }
    }
}

/// Time-ordered echo events of one simulation.
#[derive(Debug, Clone, Default)]
pub struct EchoEvents {
    pub events: Vec<EchoEvent>,
}

impl EchoEvents {
    /// Sum of |amplitude|^2 over all events.
    pub fn total_energy(&self) -> f64 {
        self.events.iter().map(|e| e.amplitude.norm_sqr()).sum()
    }

    /// Coherent amplitude of events within `tol` ns of `time`.
    pub fn amplitude_near(&self, time: f64, tol: f64) -> C64 {
        self.events
            .iter()
            .filter(|e| (e.time - time).abs() <= tol)
            .map(|e| e.amplitude)
            .sum()
    }

    pub fn nearest(&self, time: f64) -> Option<&EchoEvent> {
        self.events
            .iter()
            .min_by(|a, b| (a.time - time).abs().total_cmp(&(b.time - time).abs()))
    }
}

/// Sampled complex echo field on a uniform time grid.
///
/// Invariants: the grid is uniform with spacing `sample_dt`, and
/// `intensity[k] == |field[k]|^2` (enforced at construction).
#[derive(Debug, Clone, PartialEq)]
pub struct EchoTrace {
    times: Vec<f64>,
    field: Vec<C64>,
    intensity: Vec<f64>,
    sample_dt: f64,
}

impl EchoTrace {
    /// Builds a trace from field samples starting at `t0`.
    pub fn from_field(t0: f64, sample_dt: f64, field: Vec<C64>) -> Result<Self, KernelError> {
        if field.is_empty() {
            return Err(KernelError::InvalidTrace { reason: "no samples".into() });
        }
        if !(sample_dt > 0.0) || !sample_dt.is_finite() {
            return Err(KernelError::InvalidTrace {
                reason: format!("sample_dt {sample_dt} must be positive"),
            });
        }
        let times = (0..field.len()).map(|k| t0 + k as f64 * sample_dt).collect();
        let intensity = field.iter().map(|e| e.norm_sqr()).collect();
        Ok(Self { times, field, intensity, sample_dt })
    }

    /// Builds an intensity-only trace (field stored as the real RMS magnitude,
    /// phase discarded). Used for Monte-Carlo averaged traces, where only the
    /// mean intensity is physical.
    pub fn from_intensity(t0: f64, sample_dt: f64, intensity: Vec<f64>) -> Result<Self, KernelError> {
        let field = intensity
            .iter()
            .map(|&i| C64::new(i.max(0.0).sqrt(), 0.0))
            .collect();
        Self::from_field(t0, sample_dt, field)
    }

    /// Revalidates externally supplied samples (parser path): uniform grid and
    /// intensity consistency.
    pub fn from_samples(
        times: Vec<f64>,
        field: Vec<C64>,
        intensity: Vec<f64>,
    ) -> Result<Self, KernelError> {
        if times.is_empty() || times.len() != field.len() || times.len() != intensity.len() {
            return Err(KernelError::InvalidTrace { reason: "column lengths differ or empty".into() });
        }
        let sample_dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        if !(sample_dt > 0.0) {
            return Err(KernelError::InvalidTrace { reason: "non-increasing time column".into() });
        }
        for k in 0..times.len() {
            let expect = times[0] + k as f64 * sample_dt;
            if (times[k] - expect).abs() > 1e-9 {
                return Err(KernelError::InvalidTrace {
                    reason: format!("time sample {k} is off the uniform grid"),
                });
            }
            let i = field[k].norm_sqr();
            if (intensity[k] - i).abs() > 1e-12 * i.max(1.0) {
                return Err(KernelError::InvalidTrace {
                    reason: format!("intensity sample {k} is not |field|^2"),
                });
            }
        }
        Ok(Self { times, field, intensity, sample_dt })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn field(&self) -> &[C64] {
        &self.field
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn sample_dt(&self) -> f64 {
        self.sample_dt
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time of the intensity maximum. Flat-topped echoes (rectangular
    /// envelopes) produce a plateau of equal samples; the midpoint of that
    /// plateau is returned so the value identifies the emission center.
    pub fn peak_time(&self) -> f64 {
        let mut best = 0;
        for k in 1..self.intensity.len() {
            if self.intensity[k] > self.intensity[best] {
                best = k;
            }
        }
        let peak = self.intensity[best];
        let tol = 1e-12 * peak;
        let mut hi = best;
        while hi + 1 < self.intensity.len() && (peak - self.intensity[hi + 1]).abs() <= tol {
            hi += 1;
        }
        0.5 * (self.times[best] + self.times[hi])
    }

    /// Riemann sum of intensity over samples with t in [a, b].
    pub fn window_integral_intensity(&self, a: f64, b: f64) -> f64 {
        self.samples_in(a, b).map(|k| self.intensity[k]).sum::<f64>() * self.sample_dt
    }

    /// Riemann sum of the complex field over samples with t in [a, b].
    pub fn window_integral_field(&self, a: f64, b: f64) -> C64 {
        self.samples_in(a, b).map(|k| self.field[k]).sum::<C64>() * self.sample_dt
    }

    fn samples_in(&self, a: f64, b: f64) -> impl Iterator<Item = usize> + '_ {
        let eps = 1e-9;
        (0..self.times.len()).filter(move |&k| self.times[k] >= a - eps && self.times[k] <= b + eps)
    }
}

/// Computes the discrete echo event list for a complete train.
///
/// Pairs landing within half the longest data-pulse duration of an earlier
/// event merge into it coherently; the merged event keeps the first pair's
/// center time and envelope.
pub fn echo_events(train: &PulseTrain, model: &EnsembleModel) -> Result<EchoEvents, KernelError> {
    model.validate()?;
    let view = TrainView::classify(train)?;
    let t2 = model.t2_ns();
    let w_conj = view.write.complex_amplitude().conj();
    let t_w = view.write.center_time;

    let mut raw: Vec<(f64, C64, usize, usize)> = Vec::new();
    for (k, r) in view.read.iter().enumerate() {
        let decay = (-(r.center_time - t_w) / t2).exp();
        let depletion = (1.0 - model.depletion_eta).powi(k as i32);
        let read_factor = model.optical_depth_scale * decay * depletion;
        for (j, d) in view.data.iter().enumerate() {
            let t = r.center_time + (d.center_time - t_w);
            let amp = w_conj * d.complex_amplitude() * r.complex_amplitude() * read_factor;
            raw.push((t, amp, k, j));
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));

    let tol = 0.5 * view.data.iter().map(|p| p.duration).fold(0.0, f64::max);
    let mut events: Vec<EchoEvent> = Vec::new();
    for (t, amp, k, j) in raw {
        match events.last_mut() {
            Some(ev) if (t - ev.time).abs() <= tol => {
                ev.amplitude += amp;
                ev.contributions.push((k, j));
            }
            _ => events.push(EchoEvent {
                time: t,
                amplitude: amp,
                duration: view.data[j].duration,
                shape: view.data[j].shape,
                contributions: vec![(k, j)],
            }),
        }
    }
    Ok(EchoEvents { events })
}

/// Renders an event list onto the model's time grid. The window spans all
/// events plus `pad` on both sides, with the origin snapped to the grid.
pub fn render_events(events: &EchoEvents, model: &EnsembleModel, pad: f64) -> Result<EchoTrace, KernelError> {
    let first = events
        .events
        .first()
        .ok_or(KernelError::InvalidTrace { reason: "no events to render".into() })?;
    let last = events.events.last().unwrap();
    let dt = model.sample_dt();
    let t0 = dt * ((first.time - pad) / dt).floor();
    let n = (((last.time + pad) - t0) / dt).ceil() as usize + 1;
    let mut field = vec![C64::new(0.0, 0.0); n];
    for ev in &events.events {
        // only touch samples under the envelope support (gaussians clipped at 6x FWHM)
        let reach = match ev.shape {
            PulseShape::Rectangular => 0.5 * ev.duration,
            PulseShape::Gaussian => 6.0 * ev.duration,
        };
        let k0 = (((ev.time - reach) - t0) / dt).floor().max(0.0) as usize;
        let k1 = ((((ev.time + reach) - t0) / dt).ceil() as usize).min(n - 1);
        for k in k0..=k1 {
            let t = t0 + k as f64 * dt;
            field[k] += ev.amplitude * ev.envelope(t);
        }
    }
    EchoTrace::from_field(t0, dt, field)
}

/// Abstract-path simulation: event algebra plus a rendered trace.
pub fn simulate_abstract(
    train: &PulseTrain,
    model: &EnsembleModel,
) -> Result<(EchoTrace, EchoEvents), KernelError> {
    let events = echo_events(train, model)?;
    let trace = render_events(&events, model, trace_pad(train))?;
    Ok((trace, events))
}

/// Padding around the first/last echo in rendered traces. Four pulse
/// durations cover the triple-correlation support of rectangular envelopes
/// (1.5 durations) and better than 5 sigma of Gaussian ones.
fn trace_pad(train: &PulseTrain) -> f64 {
    4.0 * train.max_duration()
}

/// Spectral-path simulation: inverse FFT of kappa conj(w_hat) D_hat R_hat.
///
/// The write and read spectra are normalised by their envelope areas so each
/// echo's *time-integrated field* equals (event amplitude) x (data envelope
/// area), making the two paths directly comparable through
/// [`integrate_event_amplitude`]. Decoherence and depletion enter as real
/// per-read-pulse factors, exact because the decay referenced to the data
/// pulse depends only on the read delay.
pub fn simulate_spectral(train: &PulseTrain, model: &EnsembleModel) -> Result<EchoTrace, KernelError> {
    model.validate()?;
    let view = TrainView::classify(train)?;
    let events = echo_events(train, model)?;

    let n = model.grid_points;
    let dt = model.sample_dt();
    let df = model.bandwidth_ghz / n as f64;
    let t2 = model.t2_ns();
    let t_w = view.write.center_time;

    let pad = trace_pad(train);
    let t_first = events.events.first().unwrap().time - pad;
    let t_last = events.events.last().unwrap().time + pad;
    let span = n as f64 * dt;
    if t_last - t_first > span - dt {
        return Err(KernelError::GridTooCoarse {
            reason: format!(
                "echo window of {:.1} ns exceeds the {:.1} ns representable span; \
                 increase grid_points or bandwidth",
                t_last - t_first,
                span
            ),
        });
    }
    let t0 = dt * (t_first / dt).floor();
    let n_out = ((t_last - t0) / dt).ceil() as usize + 1;

    let w_area = view.write.shape_integral();
    let read_factors: Vec<f64> = view
        .read
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let decay = (-(r.center_time - t_w) / t2).exp();
            decay * (1.0 - model.depletion_eta).powi(k as i32) / r.shape_integral()
        })
        .collect();

    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut peak: f64 = 0.0;
    let mut outer_peak: f64 = 0.0;
    let outer_edge = 0.5 * model.bandwidth_ghz * (1.0 - ALIASING_BAND_FRACTION);
    for (idx, slot) in buf.iter_mut().enumerate() {
        let f = if idx <= n / 2 {
            idx as f64 * df
        } else {
            (idx as f64 - n as f64) * df
        };
        let w_norm = view.write.spectrum(f).conj() / w_area;
        let d_sum: C64 = view.data.iter().map(|p| p.spectrum(f)).sum();
        let r_sum: C64 = view
            .read
            .iter()
            .zip(&read_factors)
            .map(|(p, &c)| p.spectrum(f) * c)
            .sum();
        let s = model.optical_depth_scale * w_norm * d_sum * r_sum;
        let mag = s.norm();
        peak = peak.max(mag);
        if f.abs() >= outer_edge {
            outer_peak = outer_peak.max(mag);
        }
        *slot = s * df * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * f * t0);
    }
    if peak > 0.0 && outer_peak > ALIASING_THRESHOLD * peak {
        return Err(KernelError::GridTooCoarse {
            reason: format!(
                "echo spectrum holds {:.2e} of its peak in the outer {:.0}% of the band \
                 (limit {ALIASING_THRESHOLD:.0e}); increase bandwidth",
                outer_peak / peak,
                ALIASING_BAND_FRACTION * 100.0
            ),
        });
    }

    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.truncate(n_out);
    EchoTrace::from_field(t0, dt, buf)
}

/// Recovers one echo's complex amplitude from a trace by integrating the
/// field over `center +- half_width` and dividing by the echo envelope area.
///
/// Exact when the window contains the whole echo and no neighbour leaks in;
/// with heterogeneous data durations in one merged event the division is only
/// approximate.
pub fn integrate_event_amplitude(
    trace: &EchoTrace,
    center: f64,
    half_width: f64,
    shape_integral: f64,
) -> C64 {
    trace.window_integral_field(center - half_width, center + half_width) / shape_integral
}

/// Applies read-pulse phase jitter with every read pulse in its own cluster.
pub fn apply_phase_jitter(
    train: &PulseTrain,
    model: &EnsembleModel,
    seed: u64,
) -> Result<PulseTrain, KernelError> {
    let n_reads = train.by_role(PulseRole::Read).len();
    let clusters: Vec<usize> = (0..n_reads).collect();
    apply_phase_jitter_grouped(train, &clusters, model, seed)
}

/// Applies the three-component read-pulse phase-noise model deterministically
/// from `seed`:
///
/// * one shared offset N(0, sigma) on every read pulse (laser drift between
///   storage and retrieval);
/// * one offset N(0, sigma x intra_factor) per read cluster (cluster-to-cluster
///   path difference);
/// * one independent offset N(0, sigma) per read pulse (pulse-to-pulse noise
///   of the retrieval comb).
///
/// The first two components are common to all pulses feeding a given output
/// and drop out of output intensities; the per-pulse component is what
/// degrades interference. Draw order is fixed (shared, clusters ascending,
/// pulses in time order) so a seed fully determines the result.
///
/// `clusters[k]` is the cluster id of the k-th read pulse in time order.
pub fn apply_phase_jitter_grouped(
    train: &PulseTrain,
    clusters: &[usize],
    model: &EnsembleModel,
    seed: u64,
) -> Result<PulseTrain, KernelError> {
    model.validate()?;
    let n_reads = train.by_role(PulseRole::Read).len();
    if clusters.len() != n_reads {
        return Err(KernelError::ClusterCount { expected: n_reads, found: clusters.len() });
    }
    let sigma = model.phase_jitter_sigma;
    if sigma == 0.0 || n_reads == 0 {
        return Ok(train.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared_dist = Normal::new(0.0, sigma).expect("validated sigma");
    let shared = shared_dist.sample(&mut rng);
    let n_clusters = clusters.iter().copied().max().unwrap_or(0) + 1;
    let cluster_offsets: Vec<f64> = if model.jitter_intra_factor > 0.0 {
        let d = Normal::new(0.0, sigma * model.jitter_intra_factor).expect("validated sigma");
        (0..n_clusters).map(|_| d.sample(&mut rng)).collect()
    } else {
        vec![0.0; n_clusters]
    };
    let pulse_offsets: Vec<f64> = (0..n_reads).map(|_| shared_dist.sample(&mut rng)).collect();

    let mut read_pos = 0usize;
    let jittered = train.map_pulses(|_, p| {
        let mut p = p.clone();
        if p.role == PulseRole::Read {
            p.phase += shared + cluster_offsets[clusters[read_pos]] + pulse_offsets[read_pos];
            read_pos += 1;
        }
        p
    })?;
    Ok(jittered)
}
