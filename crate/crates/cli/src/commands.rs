//! Subcommand implementations.
//!
//! Every command returns a [`CmdError`] that carries the exit code: malformed
//! input (files, option values, config) exits 2, a well-formed request the
//! library cannot satisfy exits 1.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use echo_core::analysis::{default_alpha_grid, SweepConfig};
use echo_core::compiler::{self, compile, compile_cascade, CollisionClass, LayoutParams, Schedule};
use echo_core::formats;
use echo_core::kernel::{
    apply_phase_jitter_grouped, echo_events, integrate_event_amplitude, simulate_abstract,
    simulate_spectral, EnsembleModel,
};
use echo_core::types::{C64, CMat, ModeVector};
use echo_core::usd::{
    design_n_states, design_qubit_pair, symmetric_triple, DiscriminationDesign, ModeRole,
};

#[derive(Debug)]
pub enum CmdError {
    /// Exit code 2.
    Parse(anyhow::Error),
    /// Exit code 1.
    Run(anyhow::Error),
}

pub type CmdResult = Result<(), CmdError>;

fn parse_err(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Parse(e.into())
}

fn run_err(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Run(e.into())
}

fn read_input(path: &Path) -> Result<String, CmdError> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(parse_err)
}

/// Writes `text` to `out`, or to stdout when no path was given.
fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(run_err),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn design_qubit(alpha: f64, out: Option<&Path>) -> CmdResult {
    let design = design_qubit_pair(alpha).map_err(run_err)?;
    finish_design(&design, out)
}

pub fn design_triple(overlap: f64, out: Option<&Path>) -> CmdResult {
    let states = symmetric_triple(overlap).map_err(run_err)?;
    let priors = vec![1.0 / 3.0; 3];
    let design = design_n_states(&states, &priors).map_err(run_err)?;
    finish_design(&design, out)
}

pub fn design_custom(states_path: &Path, priors: Option<&str>, out: Option<&Path>) -> CmdResult {
    let states = parse_states_file(&read_input(states_path)?).map_err(parse_err)?;
    let priors = match priors {
        Some(text) => parse_float_list(text).map_err(parse_err)?,
        None => vec![1.0 / states.len() as f64; states.len()],
    };
    let design = design_n_states(&states, &priors).map_err(run_err)?;
    finish_design(&design, out)
}

/// Writes the design file and, when stdout is free, a human summary.
fn finish_design(design: &DiscriminationDesign, out: Option<&Path>) -> CmdResult {
    emit(out, &formats::write_design(design))?;
    if let Some(path) = out {
        println!("design written to {}", path.display());
        print!("{}", design_summary(design));
    }
    Ok(())
}

pub fn compile_cmd(
    design: Option<&Path>,
    matrix: Option<&Path>,
    cascade: bool,
    layout: &LayoutParams,
    out: Option<&Path>,
) -> CmdResult {
    let target: CMat = match (design, matrix) {
        (Some(path), None) => {
            let design = formats::parse_design(&read_input(path)?).map_err(parse_err)?;
            design.embedding.into_entries()
        }
        (None, Some(path)) => parse_matrix_file(&read_input(path)?).map_err(parse_err)?,
        _ => return Err(parse_err(anyhow!("pass exactly one of --design or --matrix"))),
    };
    if cascade {
        let stages = compile_cascade(&target, layout).map_err(run_err)?;
        for (k, stage) in stages.iter().enumerate() {
            let text = formats::write_schedule(stage);
            match out {
                Some(base) => {
                    let path = stage_path(base, k);
                    fs::write(&path, text)
                        .with_context(|| format!("writing {}", path.display()))
                        .map_err(run_err)?;
                    println!("stage {k} written to {}", path.display());
                }
                None => {
                    println!("# stage {k}");
                    print!("{text}");
                }
            }
        }
        Ok(())
    } else {
        let schedule = compile(&target, layout).map_err(run_err)?;
        emit(out, &formats::write_schedule(&schedule))?;
        if let Some(path) = out {
            println!("schedule written to {}", path.display());
            print!("{}", schedule_summary(&schedule));
        }
        let report = compiler::validate(&schedule);
        if report.is_clean() {
            Ok(())
        } else {
            Err(run_err(anyhow!(
                "compiled schedule has {} forbidden collision(s)",
                report.forbidden_count()
            )))
        }
    }
}

fn stage_path(base: &Path, k: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("stage");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("sched");
    base.with_file_name(format!("{stem}-stage{k}.{ext}"))
}

pub fn lint_cmd(path: &Path) -> CmdResult {
    let schedule = formats::parse_schedule(&read_input(path)?).map_err(parse_err)?;
    let report = compiler::validate(&schedule);
    println!(
        "{}: {} intended, {} auxiliary, {} forbidden",
        path.display(),
        report.intended_count(),
        report.auxiliary_count(),
        report.forbidden_count(),
    );
    for c in &report.collisions {
        if c.class == CollisionClass::Forbidden {
            println!(
                "  forbidden echo at {:.3} ns ({} contribution(s))",
                c.time,
                c.contributions.len(),
            );
        }
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(run_err(anyhow!(
            "{} echo(es) land inside an output window",
            report.forbidden_count()
        )))
    }
}

pub struct SimulateArgs<'a> {
    pub schedule: Option<&'a Path>,
    pub design: Option<&'a Path>,
    pub state: Option<&'a str>,
    pub state_index: Option<usize>,
    pub spectral: bool,
    pub seed: u64,
    pub out: Option<&'a Path>,
}

pub fn simulate_cmd(args: SimulateArgs, model: &EnsembleModel, layout: &LayoutParams) -> CmdResult {
    let (schedule, roles, design_inputs) = match (args.schedule, args.design) {
        (Some(path), None) => {
            let schedule = formats::parse_schedule(&read_input(path)?).map_err(parse_err)?;
            (schedule, None, Vec::new())
        }
        (None, Some(path)) => {
            let design = formats::parse_design(&read_input(path)?).map_err(parse_err)?;
            let schedule = compile(design.embedding.entries(), layout).map_err(run_err)?;
            (schedule, Some(design.mode_roles), design.inputs)
        }
        _ => return Err(parse_err(anyhow!("pass exactly one of --schedule or --design"))),
    };
    let state = match (args.state, args.state_index) {
        (Some(text), None) => parse_state(text).map_err(parse_err)?,
        (None, Some(i)) => design_inputs
            .get(i)
            .cloned()
            .ok_or_else(|| parse_err(anyhow!("--state-index {i} needs --design with more states")))?,
        _ => return Err(parse_err(anyhow!("pass exactly one of --state or --state-index"))),
    };
    if state.dim() != schedule.input_dim() {
        return Err(parse_err(anyhow!(
            "state has {} modes, schedule expects {}",
            state.dim(),
            schedule.input_dim()
        )));
    }

    let bound = schedule.bind_inputs(&state).map_err(run_err)?;
    let train = if model.phase_jitter_sigma > 0.0 {
        apply_phase_jitter_grouped(&bound, &schedule.read_clusters(), model, args.seed)
            .map_err(run_err)?
    } else {
        bound
    };
    let (trace, events) = if args.spectral {
        let events = echo_events(&train, model).map_err(run_err)?;
        let trace = simulate_spectral(&train, model).map_err(run_err)?;
        (trace, events)
    } else {
        simulate_abstract(&train, model).map_err(run_err)?
    };

    // Wide enough for the full triple-correlation support (1.5 pulse
    // durations each side), capped below half the slot pitch.
    let half = (2.5 * schedule.pulse_duration()).min(0.45 * schedule.mode_spacing);
    println!(
        "simulated {} path, seed {}",
        if args.spectral { "spectral" } else { "abstract" },
        args.seed,
    );
    for (k, (label, time)) in schedule.output_bindings.iter().enumerate() {
        let amp = match events.nearest(*time) {
            Some(ev) if (ev.time - time).abs() <= half => {
                if args.spectral {
                    integrate_event_amplitude(&trace, *time, half, ev.shape_integral())
                } else {
                    ev.amplitude
                }
            }
            _ => C64::new(0.0, 0.0),
        };
        let area = trace.window_integral_intensity(time - half, time + half);
        let role = match roles.as_deref() {
            Some(r) => match r[k] {
                ModeRole::Conclusive(i) => format!("  [conclusive for state {i}]"),
                ModeRole::Inconclusive => "  [inconclusive]".to_owned(),
            },
            None => String::new(),
        };
        println!(
            "  {label} at {time:.1} ns: amplitude {:+.6}{:+.6}i, window intensity {area:.6e}{role}",
            amp.re, amp.im,
        );
    }
    for time in &schedule.aux_times {
        println!("  auxiliary echo at {time:.1} ns");
    }
    println!("total event energy {:.6e}", events.total_energy());

    if let Some(path) = args.out {
        fs::write(path, formats::write_trace_csv(&trace))
            .with_context(|| format!("writing {}", path.display()))
            .map_err(run_err)?;
        println!("trace written to {}", path.display());
    }
    Ok(())
}

pub fn sweep_cmd(
    alphas: Option<&str>,
    trials: usize,
    jitter: Option<f64>,
    seed: u64,
    mut model: EnsembleModel,
    layout: LayoutParams,
    out: Option<&Path>,
) -> CmdResult {
    if let Some(sigma) = jitter {
        model.phase_jitter_sigma = sigma;
    }
    let alphas = match alphas {
        Some(text) => parse_alpha_list(text).map_err(parse_err)?,
        None => default_alpha_grid(),
    };
    let config = SweepConfig { alphas, trials, seed, model, layout };
    let curve = echo_core::analysis::sweep_alpha(&config).map_err(run_err)?;
    emit(out, &formats::write_rate_curve_csv(&curve))?;
    if let Some(path) = out {
        println!("rates written to {}", path.display());
        print!("{}", rates_table(&curve));
        print!("{}", bounds_summary(&curve));
    }
    Ok(())
}

pub fn report_cmd(path: &Path) -> CmdResult {
    let text = read_input(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    if first.starts_with("ECHO-USD") {
        let design = formats::parse_design(&text).map_err(parse_err)?;
        print!("{}", design_summary(&design));
    } else if first.starts_with("ECHO-SCHED") {
        let schedule = formats::parse_schedule(&text).map_err(parse_err)?;
        print!("{}", schedule_summary(&schedule));
    } else if first == formats::RATES_CSV_HEADER {
        let curve = formats::parse_rate_curve_csv(&text).map_err(parse_err)?;
        print!("{}", rates_table(&curve));
        print!("{}", bounds_summary(&curve));
    } else if first == formats::TRACE_CSV_HEADER {
        let trace = formats::parse_trace_csv(&text).map_err(parse_err)?;
        let (t0, t1) = (trace.times()[0], *trace.times().last().unwrap());
        println!(
            "trace: {} samples at dt {} ns, peak at {:.3} ns, total area {:.6e}",
            trace.len(),
            trace.sample_dt(),
            trace.peak_time(),
            trace.window_integral_intensity(t0, t1),
        );
    } else {
        return Err(parse_err(anyhow!("unrecognised header {first:?}")));
    }
    Ok(())
}

fn design_summary(design: &DiscriminationDesign) -> String {
    let mut s = format!(
        "design: {} states embedded in {} modes ({} auxiliary)\n",
        design.num_states(),
        design.embedded_dim(),
        design.aux_dim(),
    );
    let qs: Vec<String> = design.p_inconclusive.iter().map(|q| format!("{q:.6}")).collect();
    s += &format!(
        "  inconclusive probabilities [{}], prior average {:.6}\n",
        qs.join(", "),
        design.p_inconclusive_avg,
    );
    if let Some(h) = design.p_error_helstrom {
        s += &format!("  minimum-error reference {h:.6}\n");
    }
    s += &format!("  optimizer converged: {}\n", if design.optimal { "yes" } else { "no" });
    let roles: Vec<String> = design
        .mode_roles
        .iter()
        .enumerate()
        .map(|(k, role)| match role {
            ModeRole::Conclusive(i) => format!("u{k} -> state {i}"),
            ModeRole::Inconclusive => format!("u{k} -> inconclusive"),
        })
        .collect();
    s += &format!("  output roles: {}\n", roles.join(", "));
    s
}

fn schedule_summary(schedule: &Schedule) -> String {
    let report = compiler::validate(schedule);
    let outputs: Vec<String> = schedule
        .output_bindings
        .iter()
        .map(|(label, t)| format!("{label}@{t:.0}"))
        .collect();
    format!(
        "schedule: {} pulses, {} inputs, outputs [{}] ns, {} auxiliary echo(es)\n\
         echo check: {} intended, {} auxiliary, {} forbidden\n",
        schedule.train.len(),
        schedule.input_dim(),
        outputs.join(", "),
        schedule.aux_times.len(),
        report.intended_count(),
        report.auxiliary_count(),
        report.forbidden_count(),
    )
}

/// How close a noiseless sweep must sit to its reference bounds to count as
/// saturating them.
const BOUND_TOL: f64 = 1e-4;

/// Worst-case deviations from the two reference bounds, with a pass/fail
/// verdict per column. Jittered sweeps legitimately fail: phase noise lifts
/// the projective error above the minimum-error bound and converts part of
/// the unambiguous margin into errors.
fn bounds_summary(curve: &echo_core::analysis::RateCurve) -> String {
    let fold = |f: fn(&echo_core::analysis::RatePoint) -> f64| {
        curve.points.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };
    let dev_vn = fold(|p| p.p_e_vn - p.helstrom);
    let dev_q = fold(|p| p.p_q_usd - p.idp);
    let err_usd = fold(|p| p.p_e_usd);
    let verdict = |x: f64| if x.abs() <= BOUND_TOL { "pass" } else { "fail" };
    format!(
        "bound check (tolerance {BOUND_TOL:.0e}):\n\
        \x20 max p_e_vn - helstrom = {dev_vn:+.3e}: {}\n\
        \x20 max p_q_usd - idp     = {dev_q:+.3e}: {}\n\
        \x20 max p_e_usd           = {err_usd:+.3e}: {}\n",
        verdict(dev_vn),
        verdict(dev_q),
        verdict(err_usd),
    )
}

fn rates_table(curve: &echo_core::analysis::RateCurve) -> String {
    let mut s = String::from(
        "     alpha   overlap    p_e_vn   p_e_usd   p_q_usd  helstrom       idp\n",
    );
    for p in &curve.points {
        s += &format!(
            "{:>10.4} {:>9.4} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5}\n",
            p.alpha, p.overlap, p.p_e_vn, p.p_e_usd, p.p_q_usd, p.helstrom, p.idp,
        );
    }
    s
}

fn parse_float_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f64>().with_context(|| format!("bad number {tok:?}"))
        })
        .collect()
}

/// Either a comma list `0.2,0.5,0.7` or an inclusive range `lo:hi:count`.
fn parse_alpha_list(text: &str) -> Result<Vec<f64>> {
    if !text.contains(':') {
        return parse_float_list(text);
    }
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("range form is lo:hi:count, got {text:?}");
    }
    let lo: f64 = parts[0].trim().parse().with_context(|| format!("bad number {:?}", parts[0]))?;
    let hi: f64 = parts[1].trim().parse().with_context(|| format!("bad number {:?}", parts[1]))?;
    let count: usize =
        parts[2].trim().parse().with_context(|| format!("bad count {:?}", parts[2]))?;
    if count < 2 {
        bail!("range needs at least two points");
    }
    Ok((0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect())
}

/// Semicolon-separated mode amplitudes, each `re` or `re,im`.
fn parse_state(text: &str) -> Result<ModeVector> {
    let mut amplitudes = Vec::new();
    for tok in text.split(';') {
        let parts: Vec<&str> = tok.split(',').map(str::trim).collect();
        let amp = match parts.as_slice() {
            [re] => C64::new(re.parse::<f64>().with_context(|| format!("bad number {re:?}"))?, 0.0),
            [re, im] => C64::new(
                re.parse::<f64>().with_context(|| format!("bad number {re:?}"))?,
                im.parse::<f64>().with_context(|| format!("bad number {im:?}"))?,
            ),
            _ => bail!("component {tok:?} is not re or re,im"),
        };
        amplitudes.push(amp);
    }
    ModeVector::from_amplitudes(amplitudes).map_err(Into::into)
}

/// Whitespace-separated tokens: the dimension, then d*d re/im pairs in
/// row-major order. `#` starts a comment.
fn parse_matrix_file(text: &str) -> Result<CMat> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        tokens.extend(line.split_whitespace());
    }
    let mut it = tokens.into_iter();
    let dim_tok = it.next().context("empty matrix file")?;
    let dim: usize =
        dim_tok.parse().with_context(|| format!("dimension expected first, got {dim_tok:?}"))?;
    if dim == 0 {
        bail!("dimension must be positive");
    }
    let rest: Vec<f64> = it
        .map(|t| t.parse::<f64>().with_context(|| format!("bad number {t:?}")))
        .collect::<Result<_>>()?;
    if rest.len() != 2 * dim * dim {
        bail!("expected {} numbers after the dimension, found {}", 2 * dim * dim, rest.len());
    }
    let entries: Vec<C64> = rest.chunks(2).map(|p| C64::new(p[0], p[1])).collect();
    Ok(CMat::from_row_slice(dim, dim, &entries))
}

/// One candidate state per line as whitespace-separated re/im pairs.
fn parse_states_file(text: &str) -> Result<Vec<ModeVector>> {
    let mut states = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().with_context(|| format!("line {}: bad number {t:?}", lineno + 1)))
            .collect::<Result<_>>()?;
        if nums.is_empty() || nums.len() % 2 != 0 {
            bail!("line {}: need re/im pairs, found {} numbers", lineno + 1, nums.len());
        }
        let amplitudes: Vec<C64> = nums.chunks(2).map(|p| C64::new(p[0], p[1])).collect();
        states.push(
            ModeVector::from_amplitudes(amplitudes)
                .with_context(|| format!("line {}", lineno + 1))?,
        );
    }
    if states.is_empty() {
        bail!("no states in file");
    }
    Ok(states)
}
