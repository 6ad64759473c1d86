//! End-to-end acceptance checks. Each test covers one numbered criterion and
//! prints a single pass line; a panic is the corresponding fail line.
//!
//! 1. A spectral-path echo is a faithful replica of the data envelope at the
//!    predicted time (numerical triple-convolution oracle).
//! 2. Spectral and mode-algebra paths agree on every echo amplitude across
//!    randomised pulse trains.
//! 3. Compiled schedules reproduce their target matrix exactly on random
//!    input states, with no forbidden echo collisions.
//! 4. The triangular-rotation decomposition reconstructs its input, and
//!    cascade compilation realises the same product.
//! 5. Ideal overlap sweep reproduces the analytic discrimination curves.
//! 6. The two-mode interference null at overlap 1/3 is deep in both paths.
//! 7. Calibrated phase jitter gives a few-percent, overlap-independent
//!    unambiguous error rate while the projective comparison stays poor.
//! 8. The symmetric three-state design is unambiguous and optimal against a
//!    brute-force grid oracle.
//! 9. Serialised sweep output is byte-identical for a fixed seed.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use echo_core::analysis::{sweep_alpha, SweepConfig};
use echo_core::compiler::{
    compile, compile_cascade, decompose_reck, output_amplitudes, validate, LayoutParams,
};
use echo_core::formats::write_rate_curve_csv;
use echo_core::kernel::{
    echo_events, integrate_event_amplitude, simulate_abstract, simulate_spectral, EnsembleModel,
    CALIBRATED_JITTER_SIGMA,
};
use echo_core::types::{random_unitary, C64, CMat};
use echo_core::usd::{
    design_n_states, design_qubit_pair, gram_matrix, grid_search_oracle, symmetric_triple,
    ModeRole,
};
use echo_core::{ModeVector, Pulse, PulseRole, PulseShape, PulseTrain};

fn gaussian_envelope(t: f64, duration: f64) -> f64 {
    let x = t / duration;
    (-4.0 * std::f64::consts::LN_2 * x * x).exp()
}

/// Discrete convolution on a shared uniform grid: c[k] = sum_m a[m] b[k-m] dt.
fn convolve(a: &[f64], b: &[f64], dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (m, &av) in a.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        for (n, &bv) in b.iter().enumerate() {
            out[m + n] += av * bv * dt;
        }
    }
    out
}

/// FWHM of |field| by linear interpolation around the maximum.
fn field_fwhm(times: &[f64], field: &[C64]) -> f64 {
    let mags: Vec<f64> = field.iter().map(|e| e.norm()).collect();
    let (kmax, &peak) = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let half = 0.5 * peak;
    let mut left = times[kmax];
    for k in (1..=kmax).rev() {
        if mags[k - 1] < half {
            let f = (half - mags[k - 1]) / (mags[k] - mags[k - 1]);
            left = times[k - 1] + f * (times[k] - times[k - 1]);
            break;
        }
    }
    let mut right = times[kmax];
    for k in kmax..mags.len() - 1 {
        if mags[k + 1] < half {
            let f = (mags[k] - half) / (mags[k] - mags[k + 1]);
            right = times[k] + f * (times[k + 1] - times[k]);
            break;
        }
    }
    right - left
}

#[test]
fn criterion_1_echo_is_a_replica_at_the_predicted_time() {
    let started = Instant::now();

    let (tau_w, tau_d, tau_r) = (12.0, 18.0, 12.0);
    let (t_d, t_r) = (460.0, 2000.0);
    let train = PulseTrain::new(vec![
        Pulse::with_shape(PulseRole::Write, 0.0, tau_w, 1.0, 0.4, PulseShape::Gaussian).unwrap(),
        Pulse::with_shape(PulseRole::Data, t_d, tau_d, 0.7, -0.9, PulseShape::Gaussian).unwrap(),
        Pulse::with_shape(PulseRole::Read, t_r, tau_r, 0.9, 1.3, PulseShape::Gaussian).unwrap(),
    ])
    .unwrap();
    let model = EnsembleModel::ideal();
    let trace = simulate_spectral(&train, &model).unwrap();

    // the echo appears at t_read + t_data - t_write
    let predicted = t_r + t_d;
    assert!(
        (trace.peak_time() - predicted).abs() < 0.5,
        "peak at {} ns, predicted {} ns",
        trace.peak_time(),
        predicted
    );

    // oracle: the echo shape is the (time-reversed write) * data * read
    // convolution, computed here by direct summation on a fine grid
    let dt0 = 0.025;
    let sample = |tau: f64| -> Vec<f64> {
        let reach = (3.0 * tau / dt0).ceil() * dt0;
        let n = (2.0 * reach / dt0).round() as usize + 1;
        (0..n).map(|k| gaussian_envelope(-reach + k as f64 * dt0, tau)).collect()
    };
    let (ew, ed, er) = (sample(tau_w), sample(tau_d), sample(tau_r));
    let reach = |tau: f64| (3.0 * tau / dt0).ceil() * dt0;
    let oracle_t0 = predicted - reach(tau_w) - reach(tau_d) - reach(tau_r);
    let oracle = convolve(&convolve(&ew, &ed, dt0), &er, dt0);
    let oracle_peak = oracle.iter().cloned().fold(0.0f64, f64::max);

    let peak_mag = trace.field().iter().map(|e| e.norm()).fold(0.0f64, f64::max);
    let mut compared = 0usize;
    for (k, &t) in trace.times().iter().enumerate() {
        if (t - predicted).abs() > 40.0 {
            continue;
        }
        let idx = ((t - oracle_t0) / dt0).round() as isize;
        assert!(idx >= 0 && (idx as usize) < oracle.len(), "oracle grid too short");
        let want = oracle[idx as usize] / oracle_peak;
        let got = trace.field()[k].norm() / peak_mag;
        assert!(
            (got - want).abs() < 1e-3,
            "shape mismatch at t = {t}: simulated {got}, oracle {want}"
        );
        compared += 1;
    }
    assert!(compared > 100, "too few samples compared");

    // the replica broadens exactly as the envelope convolution predicts
    let expected_fwhm = (tau_w * tau_w + tau_d * tau_d + tau_r * tau_r).sqrt();
    let measured = field_fwhm(trace.times(), trace.field());
    assert!(
        (measured - expected_fwhm).abs() < 0.5,
        "FWHM {measured} ns, expected {expected_fwhm} ns"
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "criterion 1 took {elapsed:.2} s, budget 1 s");
    println!("criterion 1 (echo replica at predicted time): pass ({elapsed:.2} s)");
}

fn draw_times<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    lo: f64,
    hi: f64,
    min_gap: f64,
) -> Option<Vec<f64>> {
    let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    t.sort_by(f64::total_cmp);
    t.windows(2).all(|w| w[1] - w[0] >= min_gap).then_some(t)
}

fn random_shape<R: Rng + ?Sized>(rng: &mut R) -> PulseShape {
    if rng.random_bool(0.5) {
        PulseShape::Rectangular
    } else {
        PulseShape::Gaussian
    }
}

#[test]
fn criterion_2_spectral_path_matches_mode_algebra() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    // wide band so arbitrary rectangular durations stay clear of the
    // aliasing guard; the 65536-point grid then spans 4096 ns
    let model = EnsembleModel {
        optical_depth_scale: 0.8,
        depletion_eta: 0.07,
        bandwidth_ghz: 16.0,
        ..EnsembleModel::default()
    };

    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < 200 {
        attempts += 1;
        assert!(attempts < 5000, "train sampler rejected too many draws");

        let n_d = rng.random_range(1..=3);
        let n_r = rng.random_range(1..=3);
        let Some(data_times) = draw_times(&mut rng, n_d, 250.0, 850.0, 130.0) else {
            continue;
        };
        let Some(read_times) = draw_times(&mut rng, n_r, 1800.0, 2900.0, 150.0) else {
            continue;
        };

        let mut pulses = vec![Pulse::with_shape(
            PulseRole::Write,
            0.0,
            rng.random_range(8.0..16.0),
            rng.random_range(0.6..1.2),
            rng.random_range(-3.1..3.1),
            random_shape(&mut rng),
        )
        .unwrap()];
        for &t in &data_times {
            pulses.push(
                Pulse::with_shape(
                    PulseRole::Data,
                    t,
                    rng.random_range(8.0..16.0),
                    rng.random_range(0.2..0.9),
                    rng.random_range(-3.1..3.1),
                    random_shape(&mut rng),
                )
                .unwrap(),
            );
        }
        for &t in &read_times {
            pulses.push(
                Pulse::with_shape(
                    PulseRole::Read,
                    t,
                    rng.random_range(8.0..16.0),
                    rng.random_range(0.3..1.0),
                    rng.random_range(-3.1..3.1),
                    random_shape(&mut rng),
                )
                .unwrap(),
            );
        }
        let train = PulseTrain::new(pulses).unwrap();
        let events = echo_events(&train, &model).unwrap();

        // keep only well-separated single-pair events so a fixed window
        // isolates each echo completely
        let times: Vec<f64> = events.events.iter().map(|e| e.time).collect();
        let separated = times.windows(2).all(|w| w[1] - w[0] >= 120.0);
        let unmerged = events.events.iter().all(|e| e.contributions.len() == 1);
        if !separated || !unmerged {
            continue;
        }

        let trace = simulate_spectral(&train, &model).unwrap();
        for ev in &events.events {
            let got = integrate_event_amplitude(&trace, ev.time, 50.0, ev.shape_integral());
            let rel = (got - ev.amplitude).norm() / ev.amplitude.norm();
            assert!(
                rel < 1e-3,
                "event at {} ns: spectral {} vs algebra {} (rel {rel:.2e})",
                ev.time,
                got,
                ev.amplitude
            );
        }
        accepted += 1;
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 2 took {elapsed:.1} s, budget 60 s");
    println!("criterion 2 (spectral vs mode algebra, 200 trains): pass ({elapsed:.2} s)");
}

fn random_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ModeVector {
    loop {
        let amps: Vec<C64> = (0..dim)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let v = ModeVector::from_amplitudes(amps).unwrap();
        if let Ok(n) = v.normalized() {
            return n;
        }
    }
}

#[test]
fn criterion_3_compiled_schedules_reproduce_their_targets() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let layout = LayoutParams::default();
    let model = EnsembleModel::ideal();

    for trial in 0..1000usize {
        let d = 2 + trial % 3;
        let u = random_unitary(d, &mut rng);
        let schedule = compile(u.entries(), &layout).unwrap();

        let report = validate(&schedule);
        assert_eq!(
            report.forbidden_count(),
            0,
            "trial {trial}: forbidden collision in a compiled schedule"
        );

        let state = random_state(d, &mut rng);
        let train = schedule.bind_inputs(&state).unwrap();
        let events = echo_events(&train, &model).unwrap();
        let got = output_amplitudes(&schedule, &events);
        let want = u.entries() * state.as_dvector();
        for i in 0..d {
            let diff = (got[i] - want[i]).norm();
            assert!(
                diff < 1e-9,
                "trial {trial} (d = {d}): output {i} off by {diff:.2e}"
            );
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 3 took {elapsed:.1} s, budget 120 s");
    println!("criterion 3 (1000 compile round trips, no forbidden collisions): pass ({elapsed:.2} s)");
}

#[test]
fn criterion_4_rotation_decomposition_reconstructs_and_cascades() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let layout = LayoutParams::default();

    for trial in 0..1000usize {
        let d = 2 + trial % 3;
        let u = random_unitary(d, &mut rng);
        let decomp = decompose_reck(u.entries()).unwrap();
        assert_eq!(
            decomp.rotations.len(),
            d * (d - 1) / 2,
            "trial {trial}: unexpected rotation count"
        );
        let rec = decomp.reconstruct();
        let err = (rec - u.entries()).iter().map(|e| e.norm()).fold(0.0f64, f64::max);
        assert!(err < 1e-9, "trial {trial} (d = {d}): reconstruction off by {err:.2e}");

        if trial % 10 == 0 {
            let schedules = compile_cascade(u.entries(), &layout).unwrap();
            let mut product = CMat::identity(d, d);
            for stage in &schedules {
                product = &stage.target * &product;
            }
            let err = (product - u.entries()).iter().map(|e| e.norm()).fold(0.0f64, f64::max);
            assert!(err < 1e-9, "trial {trial}: cascade product off by {err:.2e}");
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 4 (rotation decomposition and cascade): pass ({elapsed:.2} s)");
}

#[test]
fn criterion_5_ideal_sweep_reproduces_analytic_curves() {
    let started = Instant::now();
    let config = SweepConfig { trials: 1, ..SweepConfig::default() };
    let curve = sweep_alpha(&config).unwrap();
    assert_eq!(curve.points.len(), 8);

    for point in &curve.points {
        assert!(
            point.p_e_usd < 1e-9,
            "alpha {}: unambiguous design leaked errors ({:.2e})",
            point.alpha,
            point.p_e_usd
        );
        let overlap = (2.0 * point.alpha).cos();
        assert!(
            (point.p_q_usd - overlap).abs() < 1e-6,
            "alpha {}: inconclusive rate {} vs overlap {}",
            point.alpha,
            point.p_q_usd,
            overlap
        );
        assert!(
            (point.p_e_vn - point.helstrom).abs() < 1e-4,
            "alpha {}: projective error {} vs minimum-error bound {}",
            point.alpha,
            point.p_e_vn,
            point.helstrom
        );
    }

    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 5 (ideal sweep vs analytic curves): pass ({elapsed:.2} s)");
}

#[test]
fn criterion_6_interference_null_is_deep_in_both_paths() {
    let started = Instant::now();
    // cos(alpha) = sqrt(2/3) puts the state overlap at exactly 1/3
    let alpha = (2.0f64 / 3.0).sqrt().acos();
    let design = design_qubit_pair(alpha).unwrap();
    let schedule = compile(design.embedding.entries(), &LayoutParams::default()).unwrap();
    let model = EnsembleModel::ideal();

    let train = schedule.bind_inputs(&design.inputs[0]).unwrap();
    let correct_t = schedule.output_bindings[0].1;
    let wrong_t = schedule.output_bindings[1].1;
    let shape_int = schedule.pulse_duration();
    let half = 0.5 * shape_int;

    // mode-algebra path: exact event amplitudes
    let (trace_abstract, events) = simulate_abstract(&train, &model).unwrap();
    let correct = events.amplitude_near(correct_t, half);
    let sqrt2 = std::f64::consts::SQRT_2;
    assert!(
        (correct.norm() - sqrt2 * alpha.sin()).abs() < 1e-9,
        "correct-window amplitude {} is wrong",
        correct.norm()
    );
    assert!(
        events.amplitude_near(wrong_t, half).norm() < 1e-12,
        "mode-algebra null holds only to {:.2e}",
        events.amplitude_near(wrong_t, half).norm()
    );
    // and the rendered trace carries no signal in the wrong window either
    let wrong = integrate_event_amplitude(&trace_abstract, wrong_t, 50.0, shape_int);
    assert!(
        wrong.norm() < 1e-12,
        "rendered wrong-window signal {:.2e}",
        wrong.norm()
    );

    let trace_spectral = simulate_spectral(&train, &model).unwrap();
    let wrong = integrate_event_amplitude(&trace_spectral, wrong_t, 50.0, shape_int);
    assert!(
        wrong.norm() < 1e-6,
        "spectral null holds only to {:.2e}",
        wrong.norm()
    );
    let correct = integrate_event_amplitude(&trace_spectral, correct_t, 50.0, shape_int);
    assert!((correct.norm() - sqrt2 * alpha.sin()).abs() < 1e-4);

    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 6 (interference null at overlap 1/3): pass ({elapsed:.2} s)");
}

#[test]
fn criterion_7_calibrated_jitter_rates() {
    let started = Instant::now();
    let model = EnsembleModel {
        t2_coherence_us: f64::INFINITY,
        phase_jitter_sigma: CALIBRATED_JITTER_SIGMA,
        ..EnsembleModel::default()
    };
    let config = SweepConfig { trials: 1000, seed: 20240814, model, ..SweepConfig::default() };
    let curve = sweep_alpha(&config).unwrap();

    let mean: f64 =
        curve.points.iter().map(|p| p.p_e_usd).sum::<f64>() / curve.points.len() as f64;
    assert!(
        (0.02..=0.06).contains(&mean),
        "mean unambiguous error rate {mean} outside the few-percent band"
    );
    for point in &curve.points {
        assert!(
            (0.015..=0.065).contains(&point.p_e_usd),
            "alpha {}: error rate {} is not overlap-independent",
            point.alpha,
            point.p_e_usd
        );
    }
    // at the most similar pair the projective comparison is far worse
    let worst = &curve.points[0];
    assert!(worst.overlap > 0.9, "first sweep point should be the most similar pair");
    assert!(
        worst.p_e_vn >= 0.10,
        "projective error {} at overlap {} should be large",
        worst.p_e_vn,
        worst.overlap
    );

    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 7 (calibrated jitter rates): pass ({elapsed:.2} s)");
}

#[test]
fn criterion_8_symmetric_triple_design_is_unambiguous_and_optimal() {
    let started = Instant::now();
    let s = 1.0 / 3.0;
    let states = symmetric_triple(s).unwrap();
    let priors = vec![1.0 / 3.0; 3];
    let design = design_n_states(&states, &priors).unwrap();

    // unambiguity of the realised embedding
    for (i, input) in design.inputs.iter().enumerate() {
        let image = design.embedding.apply(input).unwrap();
        for (k, role) in design.mode_roles.iter().enumerate() {
            if let ModeRole::Conclusive(owner) = role {
                if *owner != i {
                    let leak = image.amplitude(k).norm();
                    assert!(
                        leak < 1e-10,
                        "state {i} leaks {leak:.2e} onto the detector for state {owner}"
                    );
                }
            }
        }
        // conclusive fraction equals 1 - q_i
        let conclusive = image.amplitude(i).norm_sqr();
        assert!(
            (conclusive - (1.0 - design.p_inconclusive[i])).abs() < 1e-6,
            "state {i}: conclusive weight {conclusive} vs 1 - q = {}",
            1.0 - design.p_inconclusive[i]
        );
    }

    // optimality against a brute-force grid oracle
    let gram = gram_matrix(&states).unwrap();
    let (_, oracle_avg) = grid_search_oracle(&gram, &priors, 0.02, 1e-3);
    assert!(
        (design.p_inconclusive_avg - oracle_avg).abs() <= 2e-3,
        "optimizer average {} vs grid oracle {}",
        design.p_inconclusive_avg,
        oracle_avg
    );
    // known optimum for the symmetric set: q_i = s
    for (i, &q) in design.p_inconclusive.iter().enumerate() {
        assert!((q - s).abs() < 1e-6, "q[{i}] = {q}, expected {s}");
    }

    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 8 (symmetric triple design): pass ({elapsed:.2} s)");
}

#[test]
fn criterion_9_sweep_output_is_deterministic() {
    let started = Instant::now();
    let model = EnsembleModel {
        t2_coherence_us: f64::INFINITY,
        phase_jitter_sigma: CALIBRATED_JITTER_SIGMA,
        ..EnsembleModel::default()
    };
    let config = SweepConfig {
        alphas: vec![0.15, 0.45, 0.75],
        trials: 50,
        seed: 9,
        model,
        layout: LayoutParams::default(),
    };
    let first = write_rate_curve_csv(&sweep_alpha(&config).unwrap());
    let second = write_rate_curve_csv(&sweep_alpha(&config).unwrap());
    assert_eq!(first, second, "same seed must give byte-identical output");

    let reseeded = SweepConfig { seed: 10, ..config };
    let third = write_rate_curve_csv(&sweep_alpha(&reseeded).unwrap());
    assert_ne!(first, third, "different seeds should change the sampled rates");

    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 9 (byte-identical deterministic output): pass ({elapsed:.2} s)");
}
