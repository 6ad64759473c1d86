//! Discrimination-rate analysis on simulated echo traces.
//!
//! A compiled schedule turns a state-discrimination design into pulses; this
//! module closes the loop by playing candidate states through the simulator,
//! integrating the trace intensity over detection windows centred on the
//! output bindings, and converting window areas into error and inconclusive
//! rates. Monte-Carlo averaging over the read-pulse phase-noise model and an
//! overlap sweep against the minimum-error bound sit on top.
//!
//! Rate conventions, per input state i with prior p_i:
//!
//! * conditional error rate: wrong-window area / (wrong + correct area),
//!   i.e. the error among conclusive outcomes;
//! * inconclusive rate: inconclusive-window area / total windowed area.
//!
//! Both are prior-averaged over states. All detection windows share one
//! envelope duration, so the quadrature factor of the rendered traces cancels
//! in every ratio and the ideal rates are exact.

use thiserror::Error;

use crate::compiler::{compile, CompilerError, LayoutParams, Schedule};
use crate::kernel::{
    apply_phase_jitter_grouped, simulate_abstract, EchoTrace, EnsembleModel, KernelError,
};
use crate::types::{C64, CMat, CoreError, ModeVector, UnitaryMatrix};
use crate::usd::{design_qubit_pair, helstrom_bound, idp_bound, ModeRole, UsdError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid detection window: {reason}")]
    Window { reason: String },
    #[error("no conclusive signal: {reason}")]
    NoSignal { reason: String },
    #[error("invalid sweep configuration: {reason}")]
    InvalidSweep { reason: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Compiler(#[from] CompilerError),
    #[error(transparent)]
    Usd(#[from] UsdError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// One detection window: integrate trace intensity over
/// [center - half_width, center + half_width] and attribute the area
/// according to `role`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionWindow {
    pub label: String,
    pub center: f64,
    pub half_width: f64,
    pub role: ModeRole,
}

/// Builds one window per schedule output, in output order, from the design's
/// mode roles. `half_width` should comfortably cover the echo envelope while
/// staying clear of the neighbouring output (the compiled mode spacing).
pub fn detection_windows(
    schedule: &Schedule,
    roles: &[ModeRole],
    half_width: f64,
) -> Result<Vec<DetectionWindow>, AnalysisError> {
    if roles.len() != schedule.output_dim() {
        return Err(AnalysisError::Window {
            reason: format!(
                "{} mode roles for a schedule with {} outputs",
                roles.len(),
                schedule.output_dim()
            ),
        });
    }
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(AnalysisError::Window {
            reason: format!("half width {half_width} must be positive"),
        });
    }
    if 2.0 * half_width >= schedule.mode_spacing {
        return Err(AnalysisError::Window {
            reason: format!(
                "half width {half_width} ns overlaps neighbouring outputs \
                 spaced {} ns apart",
                schedule.mode_spacing
            ),
        });
    }
    Ok(schedule
        .output_bindings
        .iter()
        .zip(roles)
        .map(|((label, center), role)| DetectionWindow {
            label: label.clone(),
            center: *center,
            half_width,
            role: *role,
        })
        .collect())
}

/// Intensity area of the trace inside each window, in window order.
pub fn integrate_windows(trace: &EchoTrace, windows: &[DetectionWindow]) -> Vec<f64> {
    windows
        .iter()
        .map(|w| {
            trace.window_integral_intensity(w.center - w.half_width, w.center + w.half_width)
        })
        .collect()
}

/// Accumulated window areas for one input state, split by what a click in
/// each window would mean for that state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutcomeTally {
    pub correct: f64,
    pub wrong: f64,
    pub inconclusive: f64,
}

impl OutcomeTally {
    pub fn add(&mut self, other: &OutcomeTally) {
        self.correct += other.correct;
        self.wrong += other.wrong;
        self.inconclusive += other.inconclusive;
    }

    /// Error rate among conclusive outcomes.
    pub fn conditional_error(&self) -> Option<f64> {
        let conclusive = self.correct + self.wrong;
        (conclusive > 0.0).then(|| self.wrong / conclusive)
    }

    /// Fraction of all windowed signal landing in inconclusive windows.
    pub fn inconclusive_fraction(&self) -> Option<f64> {
        let total = self.correct + self.wrong + self.inconclusive;
        (total > 0.0).then(|| self.inconclusive / total)
    }
}

/// Splits window areas into correct / wrong / inconclusive for the given
/// true input state.
pub fn tally_areas(
    areas: &[f64],
    windows: &[DetectionWindow],
    true_state: usize,
) -> OutcomeTally {
    let mut tally = OutcomeTally::default();
    for (area, window) in areas.iter().zip(windows) {
        match window.role {
            ModeRole::Conclusive(owner) if owner == true_state => tally.correct += area,
            ModeRole::Conclusive(_) => tally.wrong += area,
            ModeRole::Inconclusive => tally.inconclusive += area,
        }
    }
    tally
}

/// Binds a state to the schedule, applies one draw of the phase-noise model
/// (skipped when sigma is zero) and simulates the echo trace.
pub fn run_trial(
    schedule: &Schedule,
    state: &ModeVector,
    model: &EnsembleModel,
    seed: u64,
) -> Result<EchoTrace, AnalysisError> {
    let bound = schedule.bind_inputs(state)?;
    let train = if model.phase_jitter_sigma > 0.0 {
        apply_phase_jitter_grouped(&bound, &schedule.read_clusters(), model, seed)?
    } else {
        bound
    };
    let (trace, _) = simulate_abstract(&train, model)?;
    Ok(trace)
}

/// Prior-averaged discrimination rates for one schedule and state set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminationRates {
    /// Prior-weighted conditional error rate.
    pub p_error: f64,
    /// Prior-weighted inconclusive rate.
    pub p_inconclusive: f64,
    /// Summed window areas per state, over all trials.
    pub per_state: Vec<OutcomeTally>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-trial seed derived from a master seed and salt words.
pub fn mix_seed(master: u64, salt: &[u64]) -> u64 {
    let mut s = splitmix(master);
    for &word in salt {
        s = splitmix(s ^ word);
    }
    s
}

/// Runs every candidate state through the schedule `trials` times (once when
/// the model has no phase jitter), accumulates window areas per state, and
/// converts the sums into prior-averaged rates.
///
/// Trial seeds are derived deterministically from `seed`, the state index
/// and the trial index, so a master seed fully reproduces the result.
pub fn discrimination_rates(
    schedule: &Schedule,
    states: &[ModeVector],
    priors: &[f64],
    roles: &[ModeRole],
    model: &EnsembleModel,
    trials: usize,
    seed: u64,
) -> Result<DiscriminationRates, AnalysisError> {
    if states.is_empty() {
        return Err(AnalysisError::InvalidSweep { reason: "no candidate states".into() });
    }
    if priors.len() != states.len() {
        return Err(AnalysisError::InvalidSweep {
            reason: format!("{} priors for {} states", priors.len(), states.len()),
        });
    }
    let prior_sum: f64 = priors.iter().sum();
    if priors.iter().any(|&p| !(p > 0.0)) || (prior_sum - 1.0).abs() > 1e-9 {
        return Err(AnalysisError::InvalidSweep {
            reason: format!("priors must be positive and sum to 1 (sum {prior_sum})"),
        });
    }
    if trials == 0 {
        return Err(AnalysisError::InvalidSweep { reason: "trials must be at least 1".into() });
    }

    let windows = detection_windows(schedule, roles, schedule.pulse_duration())?;
    let effective_trials = if model.phase_jitter_sigma > 0.0 { trials } else { 1 };

    let mut per_state = Vec::with_capacity(states.len());
    for (i, state) in states.iter().enumerate() {
        let mut tally = OutcomeTally::default();
        for trial in 0..effective_trials {
            let trial_seed = mix_seed(seed, &[i as u64, trial as u64]);
            let trace = run_trial(schedule, state, model, trial_seed)?;
            let areas = integrate_windows(&trace, &windows);
            tally.add(&tally_areas(&areas, &windows, i));
        }
        per_state.push(tally);
    }

    let mut p_error = 0.0;
    let mut p_inconclusive = 0.0;
    for (i, (tally, p)) in per_state.iter().zip(priors).enumerate() {
        let err = tally.conditional_error().ok_or_else(|| AnalysisError::NoSignal {
            reason: format!("state {i} produced no conclusive-window signal"),
        })?;
        p_error += p * err;
        p_inconclusive += p * tally.inconclusive_fraction().unwrap_or(0.0);
    }
    Ok(DiscriminationRates { p_error, p_inconclusive, per_state })
}

/// The fixed two-mode projective comparison: measure in the symmetric /
/// antisymmetric basis, rows (1, 1)/sqrt(2) and (1, -1)/sqrt(2). For the
/// +-alpha pair with equal priors its error rate equals the minimum-error
/// bound (1 - sin 2 alpha) / 2.
pub fn von_neumann_qubit() -> UnitaryMatrix {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let m = CMat::from_row_slice(2, 2, &[
        C64::new(r, 0.0),
        C64::new(r, 0.0),
        C64::new(r, 0.0),
        C64::new(-r, 0.0),
    ]);
    UnitaryMatrix::new(m).expect("fixed rotation is unitary")
}

/// One point of an overlap sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    /// Half-angle of the candidate pair, rad.
    pub alpha: f64,
    /// State overlap |<a|b>| = cos 2 alpha.
    pub overlap: f64,
    /// Error rate of the fixed projective measurement.
    pub p_e_vn: f64,
    /// Conditional error rate of the unambiguous design.
    pub p_e_usd: f64,
    /// Inconclusive rate of the unambiguous design.
    pub p_q_usd: f64,
    /// Minimum-error bound for the pair.
    pub helstrom: f64,
    /// Unambiguous inconclusive floor for the pair.
    pub idp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub points: Vec<RatePoint>,
}

/// Overlap sweep configuration. The default covers eight half-angles from
/// 0.1 rad to pi/4 under the ideal model (single trial per state); set a
/// positive `phase_jitter_sigma` on the model and a trial count to average
/// over phase noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub model: EnsembleModel,
    pub layout: LayoutParams,
}

/// Eight half-angles evenly spaced over [0.1, pi/4].
pub fn default_alpha_grid() -> Vec<f64> {
    let lo = 0.1;
    let hi = std::f64::consts::FRAC_PI_4;
    (0..8).map(|k| lo + (hi - lo) * k as f64 / 7.0).collect()
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: default_alpha_grid(),
            trials: 1000,
            seed: 7,
            model: EnsembleModel::ideal(),
            layout: LayoutParams::default(),
        }
    }
}

/// Sweeps the candidate-pair half-angle: at each alpha, compiles both the
/// optimal unambiguous design and the fixed projective comparison, simulates
/// every state, and records measured rates next to the analytic bounds.
pub fn sweep_alpha(config: &SweepConfig) -> Result<RateCurve, AnalysisError> {
    if config.alphas.is_empty() {
        return Err(AnalysisError::InvalidSweep { reason: "empty alpha grid".into() });
    }
    for &alpha in &config.alphas {
        if !(alpha > 0.0 && alpha <= std::f64::consts::FRAC_PI_4) {
            return Err(AnalysisError::InvalidSweep {
                reason: format!("alpha {alpha} outside (0, pi/4]"),
            });
        }
    }

    let vn = von_neumann_qubit();
    let vn_schedule = compile(vn.entries(), &config.layout)?;
    let vn_roles = [ModeRole::Conclusive(0), ModeRole::Conclusive(1)];

    let mut points = Vec::with_capacity(config.alphas.len());
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        let design = design_qubit_pair(alpha)?;
        let usd_schedule = compile(design.embedding.entries(), &config.layout)?;
        let usd = discrimination_rates(
            &usd_schedule,
            &design.inputs,
            &design.priors,
            &design.mode_roles,
            &config.model,
            config.trials,
            mix_seed(config.seed, &[1, ai as u64]),
        )?;

        let (s, c) = alpha.sin_cos();
        let a = ModeVector::from_reals(&[c, s]).unwrap();
        let b = ModeVector::from_reals(&[c, -s]).unwrap();
        let vn_rates = discrimination_rates(
            &vn_schedule,
            &[a.clone(), b.clone()],
            &[0.5, 0.5],
            &vn_roles,
            &config.model,
            config.trials,
            mix_seed(config.seed, &[2, ai as u64]),
        )?;

        points.push(RatePoint {
            alpha,
            overlap: idp_bound(&a, &b)?,
            p_e_vn: vn_rates.p_error,
            p_e_usd: usd.p_error,
            p_q_usd: usd.p_inconclusive,
            helstrom: helstrom_bound(&a, &b, 0.5, 0.5)?,
            idp: idp_bound(&a, &b)?,
        });
    }
    Ok(RateCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projective_comparison_matches_closed_form() {
        let u = von_neumann_qubit();
        let alpha = 0.3f64;
        let (s, c) = alpha.sin_cos();
        let plus = ModeVector::from_reals(&[c, s]).unwrap();
        let img = u.apply(&plus).unwrap();
        assert_abs_diff_eq!(img.amplitude(0).re, (c + s) / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(img.amplitude(1).re, (c - s) / 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn ideal_usd_rates_are_exact() {
        let alpha = 0.4f64;
        let design = design_qubit_pair(alpha).unwrap();
        let schedule = compile(design.embedding.entries(), &LayoutParams::default()).unwrap();
        let model = EnsembleModel::ideal();
        let rates = discrimination_rates(
            &schedule,
            &design.inputs,
            &design.priors,
            &design.mode_roles,
            &model,
            1,
            0,
        )
        .unwrap();
        assert!(rates.p_error < 1e-12, "ideal design leaked {}", rates.p_error);
        assert_abs_diff_eq!(rates.p_inconclusive, (2.0 * alpha).cos(), epsilon = 1e-9);
    }

    #[test]
    fn ideal_projective_rates_match_helstrom() {
        let alpha = 0.35f64;
        let (s, c) = alpha.sin_cos();
        let a = ModeVector::from_reals(&[c, s]).unwrap();
        let b = ModeVector::from_reals(&[c, -s]).unwrap();
        let schedule =
            compile(von_neumann_qubit().entries(), &LayoutParams::default()).unwrap();
        let roles = [ModeRole::Conclusive(0), ModeRole::Conclusive(1)];
        let rates = discrimination_rates(
            &schedule,
            &[a.clone(), b.clone()],
            &[0.5, 0.5],
            &roles,
            &EnsembleModel::ideal(),
            1,
            0,
        )
        .unwrap();
        let helstrom = helstrom_bound(&a, &b, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(rates.p_error, helstrom, epsilon = 1e-9);
    }

    #[test]
    fn jittered_rates_are_deterministic_in_the_seed() {
        let design = design_qubit_pair(0.3).unwrap();
        let schedule = compile(design.embedding.entries(), &LayoutParams::default()).unwrap();
        let model = EnsembleModel {
            t2_coherence_us: f64::INFINITY,
            phase_jitter_sigma: 0.28,
            ..EnsembleModel::default()
        };
        let run = |seed: u64| {
            discrimination_rates(
                &schedule,
                &design.inputs,
                &design.priors,
                &design.mode_roles,
                &model,
                20,
                seed,
            )
            .unwrap()
        };
        let first = run(42);
        let second = run(42);
        assert_eq!(first, second);
        let third = run(43);
        assert!(first != third, "different seeds should give different draws");
    }

    #[test]
    fn calibrated_jitter_error_rate_is_in_the_expected_band() {
        // per-pulse phase noise N(0, sigma) dephases the wrong-window null;
        // the conditional error tends to (1 - exp(-sigma^2)) / 2 ~ 3.8%
        let design = design_qubit_pair(0.5).unwrap();
        let schedule = compile(design.embedding.entries(), &LayoutParams::default()).unwrap();
        let model = EnsembleModel {
            t2_coherence_us: f64::INFINITY,
            phase_jitter_sigma: crate::kernel::CALIBRATED_JITTER_SIGMA,
            ..EnsembleModel::default()
        };
        let rates = discrimination_rates(
            &schedule,
            &design.inputs,
            &design.priors,
            &design.mode_roles,
            &model,
            200,
            11,
        )
        .unwrap();
        assert!(
            (0.01..0.10).contains(&rates.p_error),
            "jittered error rate {} outside sanity band",
            rates.p_error
        );
    }

    #[test]
    fn ideal_sweep_tracks_the_analytic_curves() {
        let config = SweepConfig {
            alphas: vec![0.2, 0.5, std::f64::consts::FRAC_PI_4],
            trials: 1,
            ..SweepConfig::default()
        };
        let curve = sweep_alpha(&config).unwrap();
        for point in &curve.points {
            assert!(point.p_e_usd < 1e-9);
            assert_abs_diff_eq!(point.p_q_usd, (2.0 * point.alpha).cos(), epsilon = 1e-9);
            assert_abs_diff_eq!(point.p_e_vn, point.helstrom, epsilon = 1e-9);
            assert_abs_diff_eq!(point.overlap, point.idp, epsilon = 1e-15);
        }
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let mut config = SweepConfig { alphas: vec![], trials: 1, ..SweepConfig::default() };
        assert!(matches!(
            sweep_alpha(&config),
            Err(AnalysisError::InvalidSweep { .. })
        ));
        config.alphas = vec![1.0];
        assert!(matches!(
            sweep_alpha(&config),
            Err(AnalysisError::InvalidSweep { .. })
        ));
    }

    #[test]
    fn missing_signal_is_reported() {
        let design = design_qubit_pair(0.3).unwrap();
        let schedule = compile(design.embedding.entries(), &LayoutParams::default()).unwrap();
        let dark = ModeVector::from_amplitudes(vec![C64::new(0.0, 0.0); 3]).unwrap();
        let result = discrimination_rates(
            &schedule,
            &[dark],
            &[1.0],
            &design.mode_roles,
            &EnsembleModel::ideal(),
            1,
            0,
        );
        assert!(matches!(result, Err(AnalysisError::NoSignal { .. })));
    }

    #[test]
    fn window_construction_is_validated() {
        let design = design_qubit_pair(0.3).unwrap();
        let schedule = compile(design.embedding.entries(), &LayoutParams::default()).unwrap();
        assert!(matches!(
            detection_windows(&schedule, &[ModeRole::Inconclusive], 15.0),
            Err(AnalysisError::Window { .. })
        ));
        assert!(matches!(
            detection_windows(&schedule, &design.mode_roles, -1.0),
            Err(AnalysisError::Window { .. })
        ));
        assert!(matches!(
            detection_windows(&schedule, &design.mode_roles, 80.0),
            Err(AnalysisError::Window { .. })
        ));
    }
}
