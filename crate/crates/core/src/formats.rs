//! Plain-text serialisation of schedules, discrimination designs, traces and
//! rate curves.
//!
//! Two line-based formats with explicit version headers:
//!
//! * `ECHO-SCHED v1`: a compiled pulse schedule (pulses, mode bindings,
//!   auxiliary echo times, realised matrix);
//! * `ECHO-USD v1`: a discrimination design (states, priors, outputs, mode
//!   roles, inconclusive probabilities, embedding matrix).
//!
//! Plus two CSV layouts: trace samples (`time_ns,field_re,field_im,intensity`)
//! and sweep results (`alpha_rad,overlap,p_e_vn,p_e_usd,p_q_usd,helstrom,idp`).
//!
//! Every float is written as `{:.16e}` (17 significant digits), which
//! round-trips f64 exactly, so write -> parse is lossless. Parse errors carry
//! the byte offset of the offending line.

use std::fmt::Write as _;

use thiserror::Error;

use crate::analysis::{RateCurve, RatePoint};
use crate::compiler::Schedule;
use crate::kernel::EchoTrace;
use crate::types::{C64, CMat, CoreError, ModeVector, Pulse, PulseRole, PulseShape, PulseTrain};
use crate::usd::{DiscriminationDesign, ModeRole};

pub const SCHEDULE_HEADER: &str = "ECHO-SCHED v1";
pub const DESIGN_HEADER: &str = "ECHO-USD v1";
pub const TRACE_CSV_HEADER: &str = "time_ns,field_re,field_im,intensity";
pub const RATES_CSV_HEADER: &str = "alpha_rad,overlap,p_e_vn,p_e_usd,p_q_usd,helstrom,idp";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("byte {offset}: {reason}")]
    Syntax { offset: usize, reason: String },
    #[error("unsupported header {found:?}, expected {expected:?}")]
    Version { found: String, expected: &'static str },
    #[error(transparent)]
    Core(#[from] CoreError),
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Lines with byte offsets; skips blanks and `#` comments.
struct Lines<'a> {
    src: &'a str,
    offset: usize,
}

impl<'a> Lines<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, offset: 0 }
    }
}

impl<'a> Iterator for Lines<'a> {
    type Item = (usize, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        while self.offset < self.src.len() {
            let start = self.offset;
            let rest = &self.src[start..];
            let end = rest.find('\n').map(|k| start + k).unwrap_or(self.src.len());
            self.offset = end + 1;
            let line = self.src[start..end].trim_end_matches('\r');
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some((start, trimmed));
        }
        None
    }
}

fn syntax(offset: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Syntax { offset, reason: reason.into() }
}

fn parse_f64(tok: &str, offset: usize, what: &str) -> Result<f64, FormatError> {
    tok.parse::<f64>().map_err(|_| syntax(offset, format!("invalid {what} {tok:?}")))
}

fn parse_usize(tok: &str, offset: usize, what: &str) -> Result<usize, FormatError> {
    tok.parse::<usize>().map_err(|_| syntax(offset, format!("invalid {what} {tok:?}")))
}

fn expect_header(src: &str, expected: &'static str) -> Result<(), FormatError> {
    match Lines::new(src).next() {
        Some((_, line)) if line == expected => Ok(()),
        Some((_, line)) => {
            Err(FormatError::Version { found: line.to_string(), expected })
        }
        None => Err(FormatError::Version { found: String::new(), expected }),
    }
}

pub fn write_schedule(schedule: &Schedule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SCHEDULE_HEADER}");
    let _ = writeln!(out, "spacing {}", fmt_f(schedule.mode_spacing));
    let _ = writeln!(out, "guard {}", fmt_f(schedule.cluster_guard));
    for p in schedule.train.pulses() {
        let _ = writeln!(
            out,
            "pulse {} {} {} {} {} {}",
            p.role.as_str(),
            fmt_f(p.center_time),
            fmt_f(p.duration),
            fmt_f(p.amplitude),
            fmt_f(p.phase),
            p.shape.as_str(),
        );
    }
    for (label, time) in &schedule.input_bindings {
        let _ = writeln!(out, "input {label} {}", fmt_f(*time));
    }
    for (label, time) in &schedule.output_bindings {
        let _ = writeln!(out, "output {label} {}", fmt_f(*time));
    }
    for time in &schedule.aux_times {
        let _ = writeln!(out, "aux {}", fmt_f(*time));
    }
    let _ = writeln!(out, "target {} {}", schedule.target.nrows(), schedule.target.ncols());
    for i in 0..schedule.target.nrows() {
        for j in 0..schedule.target.ncols() {
            let e = schedule.target[(i, j)];
            let _ = writeln!(out, "entry {i} {j} {} {}", fmt_f(e.re), fmt_f(e.im));
        }
    }
    out
}

pub fn parse_schedule(src: &str) -> Result<Schedule, FormatError> {
    expect_header(src, SCHEDULE_HEADER)?;

    let mut spacing: Option<f64> = None;
    let mut guard: Option<f64> = None;
    let mut pulses: Vec<Pulse> = Vec::new();
    let mut inputs: Vec<(String, f64)> = Vec::new();
    let mut outputs: Vec<(String, f64)> = Vec::new();
    let mut aux: Vec<f64> = Vec::new();
    let mut target: Option<CMat> = None;
    let mut filled = 0usize;

    let mut lines = Lines::new(src);
    lines.next();
    for (off, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let need = |n: usize| -> Result<(), FormatError> {
            if toks.len() != n {
                Err(syntax(off, format!("{} takes {} fields, found {}", toks[0], n - 1, toks.len() - 1)))
            } else {
                Ok(())
            }
        };
        match toks[0] {
            "spacing" => {
                need(2)?;
                spacing = Some(parse_f64(toks[1], off, "spacing")?);
            }
            "guard" => {
                need(2)?;
                guard = Some(parse_f64(toks[1], off, "guard")?);
            }
            "pulse" => {
                need(7)?;
                let role = match toks[1] {
                    "write" => PulseRole::Write,
                    "data" => PulseRole::Data,
                    "read" => PulseRole::Read,
                    other => return Err(syntax(off, format!("unknown pulse role {other:?}"))),
                };
                let shape = match toks[6] {
                    "rect" => PulseShape::Rectangular,
                    "gauss" => PulseShape::Gaussian,
                    other => return Err(syntax(off, format!("unknown pulse shape {other:?}"))),
                };
                let pulse = Pulse::with_shape(
                    role,
                    parse_f64(toks[2], off, "center time")?,
                    parse_f64(toks[3], off, "duration")?,
                    parse_f64(toks[4], off, "amplitude")?,
                    parse_f64(toks[5], off, "phase")?,
                    shape,
                )
                .map_err(|e| syntax(off, e.to_string()))?;
                pulses.push(pulse);
            }
            "input" => {
                need(3)?;
                inputs.push((toks[1].to_string(), parse_f64(toks[2], off, "input time")?));
            }
            "output" => {
                need(3)?;
                outputs.push((toks[1].to_string(), parse_f64(toks[2], off, "output time")?));
            }
            "aux" => {
                need(2)?;
                aux.push(parse_f64(toks[1], off, "aux time")?);
            }
            "target" => {
                need(3)?;
                let rows = parse_usize(toks[1], off, "row count")?;
                let cols = parse_usize(toks[2], off, "column count")?;
                if target.is_some() {
                    return Err(syntax(off, "duplicate target section"));
                }
                target = Some(CMat::zeros(rows, cols));
            }
            "entry" => {
                need(5)?;
                let m = target
                    .as_mut()
                    .ok_or_else(|| syntax(off, "entry before target dimensions"))?;
                let i = parse_usize(toks[1], off, "row index")?;
                let j = parse_usize(toks[2], off, "column index")?;
                if i >= m.nrows() || j >= m.ncols() {
                    return Err(syntax(off, format!("entry ({i}, {j}) outside target")));
                }
                m[(i, j)] = C64::new(
                    parse_f64(toks[3], off, "real part")?,
                    parse_f64(toks[4], off, "imaginary part")?,
                );
                filled += 1;
            }
            other => return Err(syntax(off, format!("unknown keyword {other:?}"))),
        }
    }

    let end = src.len();
    let spacing = spacing.ok_or_else(|| syntax(end, "missing spacing line"))?;
    let guard = guard.ok_or_else(|| syntax(end, "missing guard line"))?;
    let target = target.ok_or_else(|| syntax(end, "missing target section"))?;
    if filled != target.nrows() * target.ncols() {
        return Err(syntax(
            end,
            format!(
                "target has {} entries, expected {}",
                filled,
                target.nrows() * target.ncols()
            ),
        ));
    }
    if target.nrows() != outputs.len() || target.ncols() != inputs.len() {
        return Err(syntax(
            end,
            format!(
                "target is {}x{} but schedule binds {} outputs and {} inputs",
                target.nrows(),
                target.ncols(),
                outputs.len(),
                inputs.len()
            ),
        ));
    }
    let train = PulseTrain::new(pulses).map_err(|e| syntax(end, e.to_string()))?;
    Ok(Schedule {
        train,
        input_bindings: inputs,
        output_bindings: outputs,
        aux_times: aux,
        target,
        mode_spacing: spacing,
        cluster_guard: guard,
    })
}

fn write_complex_row(out: &mut String, keyword: &str, index: usize, v: &ModeVector) {
    let _ = write!(out, "{keyword} {index}");
    for a in v.amplitudes() {
        let _ = write!(out, " {} {}", fmt_f(a.re), fmt_f(a.im));
    }
    let _ = writeln!(out);
}

fn parse_complex_row(
    toks: &[&str],
    off: usize,
    dim: usize,
) -> Result<Vec<C64>, FormatError> {
    if toks.len() != 2 * dim {
        return Err(syntax(off, format!("expected {dim} complex amplitudes", dim = dim)));
    }
    let mut amps = Vec::with_capacity(dim);
    for pair in toks.chunks(2) {
        amps.push(C64::new(
            parse_f64(pair[0], off, "real part")?,
            parse_f64(pair[1], off, "imaginary part")?,
        ));
    }
    Ok(amps)
}

pub fn write_design(design: &DiscriminationDesign) -> String {
    let n = design.num_states();
    let dim = design.embedded_dim();
    let mut out = String::new();
    let _ = writeln!(out, "{DESIGN_HEADER}");
    let _ = writeln!(out, "states {n} {dim}");
    let _ = write!(out, "priors");
    for p in &design.priors {
        let _ = write!(out, " {}", fmt_f(*p));
    }
    let _ = writeln!(out);
    for (i, s) in design.inputs.iter().enumerate() {
        write_complex_row(&mut out, "state", i, s);
    }
    for (i, s) in design.outputs.iter().enumerate() {
        write_complex_row(&mut out, "outstate", i, s);
    }
    for (k, role) in design.mode_roles.iter().enumerate() {
        match role {
            ModeRole::Conclusive(owner) => {
                let _ = writeln!(out, "role {k} conclusive {owner}");
            }
            ModeRole::Inconclusive => {
                let _ = writeln!(out, "role {k} inconclusive");
            }
        }
    }
    let _ = write!(out, "q");
    for q in &design.p_inconclusive {
        let _ = write!(out, " {}", fmt_f(*q));
    }
    let _ = writeln!(out);
    match design.p_error_helstrom {
        Some(h) => {
            let _ = writeln!(out, "helstrom {}", fmt_f(h));
        }
        None => {
            let _ = writeln!(out, "helstrom none");
        }
    }
    let _ = writeln!(out, "optimal {}", design.optimal);
    let _ = writeln!(out, "embedding {dim}");
    let entries = design.embedding.entries();
    for i in 0..dim {
        for j in 0..dim {
            let e = entries[(i, j)];
            let _ = writeln!(out, "entry {i} {j} {} {}", fmt_f(e.re), fmt_f(e.im));
        }
    }
    out
}

pub fn parse_design(src: &str) -> Result<DiscriminationDesign, FormatError> {
    expect_header(src, DESIGN_HEADER)?;

    let mut dims: Option<(usize, usize)> = None;
    let mut priors: Option<Vec<f64>> = None;
    let mut states: Vec<(usize, Vec<C64>)> = Vec::new();
    let mut outstates: Vec<(usize, Vec<C64>)> = Vec::new();
    let mut roles: Vec<(usize, ModeRole)> = Vec::new();
    let mut q: Option<Vec<f64>> = None;
    let mut helstrom: Option<Option<f64>> = None;
    let mut optimal: Option<bool> = None;
    let mut embedding: Option<CMat> = None;
    let mut filled = 0usize;

    let mut lines = Lines::new(src);
    lines.next();
    for (off, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "states" => {
                if toks.len() != 3 {
                    return Err(syntax(off, "states takes <count> <embedded dim>"));
                }
                dims = Some((
                    parse_usize(toks[1], off, "state count")?,
                    parse_usize(toks[2], off, "embedded dimension")?,
                ));
            }
            "priors" => {
                let mut p = Vec::new();
                for tok in &toks[1..] {
                    p.push(parse_f64(tok, off, "prior")?);
                }
                priors = Some(p);
            }
            "state" | "outstate" => {
                let (_, dim) =
                    dims.ok_or_else(|| syntax(off, "state row before states line"))?;
                if toks.len() < 2 {
                    return Err(syntax(off, "state row needs an index"));
                }
                let i = parse_usize(toks[1], off, "state index")?;
                let amps = parse_complex_row(&toks[2..], off, dim)?;
                if toks[0] == "state" {
                    states.push((i, amps));
                } else {
                    outstates.push((i, amps));
                }
            }
            "role" => {
                if toks.len() < 3 {
                    return Err(syntax(off, "role takes <mode> conclusive <state>|inconclusive"));
                }
                let k = parse_usize(toks[1], off, "mode index")?;
                let role = match toks[2] {
                    "conclusive" => {
                        if toks.len() != 4 {
                            return Err(syntax(off, "conclusive role needs a state index"));
                        }
                        ModeRole::Conclusive(parse_usize(toks[3], off, "state index")?)
                    }
                    "inconclusive" => {
                        if toks.len() != 3 {
                            return Err(syntax(off, "inconclusive role takes no argument"));
                        }
                        ModeRole::Inconclusive
                    }
                    other => return Err(syntax(off, format!("unknown role {other:?}"))),
                };
                roles.push((k, role));
            }
            "q" => {
                let mut v = Vec::new();
                for tok in &toks[1..] {
                    v.push(parse_f64(tok, off, "inconclusive probability")?);
                }
                q = Some(v);
            }
            "helstrom" => {
                if toks.len() != 2 {
                    return Err(syntax(off, "helstrom takes one value or none"));
                }
                helstrom = Some(if toks[1] == "none" {
                    None
                } else {
                    Some(parse_f64(toks[1], off, "helstrom bound")?)
                });
            }
            "optimal" => {
                if toks.len() != 2 {
                    return Err(syntax(off, "optimal takes true or false"));
                }
                optimal = Some(match toks[1] {
                    "true" => true,
                    "false" => false,
                    other => return Err(syntax(off, format!("invalid flag {other:?}"))),
                });
            }
            "embedding" => {
                if toks.len() != 2 {
                    return Err(syntax(off, "embedding takes the dimension"));
                }
                let d = parse_usize(toks[1], off, "embedding dimension")?;
                embedding = Some(CMat::zeros(d, d));
            }
            "entry" => {
                if toks.len() != 5 {
                    return Err(syntax(off, "entry takes <i> <j> <re> <im>"));
                }
                let m = embedding
                    .as_mut()
                    .ok_or_else(|| syntax(off, "entry before embedding dimension"))?;
                let i = parse_usize(toks[1], off, "row index")?;
                let j = parse_usize(toks[2], off, "column index")?;
                if i >= m.nrows() || j >= m.ncols() {
                    return Err(syntax(off, format!("entry ({i}, {j}) outside embedding")));
                }
                m[(i, j)] = C64::new(
                    parse_f64(toks[3], off, "real part")?,
                    parse_f64(toks[4], off, "imaginary part")?,
                );
                filled += 1;
            }
            other => return Err(syntax(off, format!("unknown keyword {other:?}"))),
        }
    }

    let end = src.len();
    let (n, dim) = dims.ok_or_else(|| syntax(end, "missing states line"))?;
    let priors = priors.ok_or_else(|| syntax(end, "missing priors line"))?;
    let q = q.ok_or_else(|| syntax(end, "missing q line"))?;
    let helstrom = helstrom.ok_or_else(|| syntax(end, "missing helstrom line"))?;
    let optimal = optimal.ok_or_else(|| syntax(end, "missing optimal line"))?;
    let embedding = embedding.ok_or_else(|| syntax(end, "missing embedding section"))?;
    if priors.len() != n || q.len() != n {
        return Err(syntax(end, "priors and q must list one value per state"));
    }
    if embedding.nrows() != dim || filled != dim * dim {
        return Err(syntax(end, "embedding entries incomplete"));
    }

    let collect_rows = |mut rows: Vec<(usize, Vec<C64>)>,
                        what: &str|
     -> Result<Vec<ModeVector>, FormatError> {
        if rows.len() != n {
            return Err(syntax(end, format!("expected {n} {what} rows, found {}", rows.len())));
        }
        rows.sort_by_key(|(i, _)| *i);
        for (k, (i, _)) in rows.iter().enumerate() {
            if *i != k {
                return Err(syntax(end, format!("{what} indices must cover 0..{n}")));
            }
        }
        rows.into_iter()
            .map(|(_, amps)| ModeVector::from_amplitudes(amps).map_err(FormatError::from))
            .collect()
    };
    let inputs = collect_rows(states, "state")?;
    let outputs = collect_rows(outstates, "outstate")?;

    let mut mode_roles = vec![ModeRole::Inconclusive; dim];
    if roles.len() != dim {
        return Err(syntax(end, format!("expected {dim} role lines, found {}", roles.len())));
    }
    let mut seen = vec![false; dim];
    for (k, role) in roles {
        if k >= dim || seen[k] {
            return Err(syntax(end, "role indices must cover each mode once"));
        }
        seen[k] = true;
        mode_roles[k] = role;
    }

    let p_inconclusive_avg = priors.iter().zip(&q).map(|(p, x)| p * x).sum();
    Ok(DiscriminationDesign {
        inputs,
        priors,
        outputs,
        embedding: crate::types::UnitaryMatrix::new(embedding)?,
        p_inconclusive: q,
        p_inconclusive_avg,
        p_error_helstrom: helstrom,
        mode_roles,
        optimal,
    })
}

pub fn write_trace_csv(trace: &EchoTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRACE_CSV_HEADER}");
    for k in 0..trace.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f(trace.times()[k]),
            fmt_f(trace.field()[k].re),
            fmt_f(trace.field()[k].im),
            fmt_f(trace.intensity()[k]),
        );
    }
    out
}

pub fn parse_trace_csv(src: &str) -> Result<EchoTrace, FormatError> {
    let mut lines = Lines::new(src);
    match lines.next() {
        Some((_, line)) if line == TRACE_CSV_HEADER => {}
        Some((_, line)) => {
            return Err(FormatError::Version {
                found: line.to_string(),
                expected: TRACE_CSV_HEADER,
            })
        }
        None => {
            return Err(FormatError::Version { found: String::new(), expected: TRACE_CSV_HEADER })
        }
    }
    let mut times = Vec::new();
    let mut field = Vec::new();
    let mut intensity = Vec::new();
    for (off, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(syntax(off, format!("expected 4 columns, found {}", cols.len())));
        }
        times.push(parse_f64(cols[0].trim(), off, "time")?);
        field.push(C64::new(
            parse_f64(cols[1].trim(), off, "field real part")?,
            parse_f64(cols[2].trim(), off, "field imaginary part")?,
        ));
        intensity.push(parse_f64(cols[3].trim(), off, "intensity")?);
    }
    EchoTrace::from_samples(times, field, intensity)
        .map_err(|e| syntax(src.len(), e.to_string()))
}

pub fn write_rate_curve_csv(curve: &RateCurve) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{RATES_CSV_HEADER}");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f(p.alpha),
            fmt_f(p.overlap),
            fmt_f(p.p_e_vn),
            fmt_f(p.p_e_usd),
            fmt_f(p.p_q_usd),
            fmt_f(p.helstrom),
            fmt_f(p.idp),
        );
    }
    out
}

pub fn parse_rate_curve_csv(src: &str) -> Result<RateCurve, FormatError> {
    let mut lines = Lines::new(src);
    match lines.next() {
        Some((_, line)) if line == RATES_CSV_HEADER => {}
        Some((_, line)) => {
            return Err(FormatError::Version {
                found: line.to_string(),
                expected: RATES_CSV_HEADER,
            })
        }
        None => {
            return Err(FormatError::Version { found: String::new(), expected: RATES_CSV_HEADER })
        }
    }
    let mut points = Vec::new();
    for (off, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(syntax(off, format!("expected 7 columns, found {}", cols.len())));
        }
        let mut vals = [0.0f64; 7];
        for (v, col) in vals.iter_mut().zip(&cols) {
            *v = parse_f64(col.trim(), off, "rate value")?;
        }
        points.push(RatePoint {
            alpha: vals[0],
            overlap: vals[1],
            p_e_vn: vals[2],
            p_e_usd: vals[3],
            p_q_usd: vals[4],
            helstrom: vals[5],
            idp: vals[6],
        });
    }
    Ok(RateCurve { points })
}
