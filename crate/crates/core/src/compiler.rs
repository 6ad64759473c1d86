//! Compiles a discrete target matrix into a read-pulse schedule.
//!
//! Inputs occupy a comb of data-pulse slots spaced by `mode_spacing`. For each
//! output row i the compiler emits one *read cluster*: read pulse (i, j) sits
//! at T_i + (d_max - d_j), so every data pulse j is retrieved at the common
//! output time O_i = T_i + (d_max - t_w) with weight U_ij (read amplitude
//! |U_ij|, read phase arg U_ij). The unintended (read (i,j), data j') pairs
//! emit auxiliary echoes at O_i + (d_j' - d_j); cluster bases are chosen on
//! the spacing lattice by earliest-fit search so that
//!
//! * read clusters do not overlap,
//! * auxiliary echoes keep at least `cluster_guard` away from every output,
//! * no read pulse center falls within `cluster_guard` of an output time
//!   (with integer spacing ratios a naive d-slot pitch puts a later cluster's
//!   read exactly on an earlier output).
//!
//! [`validate`] re-derives every echo geometrically and classifies it, so
//! hand-written or file-loaded schedules get the same scrutiny as compiled
//! ones.

use thiserror::Error;

use crate::kernel::EchoEvents;
use crate::types::{
    check_unitary, C64, CMat, CoreError, ModeVector, Pulse, PulseRole, PulseShape, PulseTrain,
};

/// Entries may exceed unit magnitude by this much before compilation fails.
const AMPLITUDE_TOL: f64 = 1e-9;
/// Entries below this magnitude produce no read pulse.
const AMPLITUDE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CompilerError {
    #[error("target entry ({row},{col}) has magnitude {magnitude} > 1; echo diffraction cannot amplify")]
    AmplitudeRange { row: usize, col: usize, magnitude: f64 },
    #[error("layout infeasible: {reason}")]
    LayoutInfeasible { reason: String },
    #[error("invalid layout parameters: {reason}")]
    InvalidLayout { reason: String },
    #[error("binding mismatch: {reason}")]
    Binding { reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Geometry and pulse parameters for schedule synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    /// Slot pitch of the data comb and the cluster lattice, ns.
    pub mode_spacing: f64,
    /// Duration of every write/data/read pulse, ns.
    pub pulse_duration: f64,
    pub pulse_shape: PulseShape,
    /// Write pulse center, ns.
    pub write_time: f64,
    pub write_amplitude: f64,
    /// Write-to-first-data-slot delay, ns.
    pub data_offset: f64,
    /// Write-to-cluster-lattice-origin delay, ns.
    pub read_offset: f64,
    /// Minimum clearance between auxiliary echoes / read centers and output
    /// times, ns. Must be at least one pulse duration.
    pub cluster_guard: f64,
    /// Lattice positions per cluster base are searched in 0..=this.
    pub max_horizon_steps: usize,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            mode_spacing: 100.0,
            pulse_duration: 15.0,
            pulse_shape: PulseShape::Rectangular,
            write_time: 0.0,
            write_amplitude: 1.0,
            data_offset: 300.0,
            read_offset: 2000.0,
            cluster_guard: 30.0,
            max_horizon_steps: 50,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<(), CompilerError> {
        let fail = |reason: String| Err(CompilerError::InvalidLayout { reason });
        if !(self.mode_spacing > 0.0) {
            return fail(format!("mode_spacing {} must be positive", self.mode_spacing));
        }
        if !(self.pulse_duration > 0.0) {
            return fail(format!("pulse_duration {} must be positive", self.pulse_duration));
        }
        if self.mode_spacing < self.pulse_duration + self.cluster_guard {
            return fail(format!(
                "mode_spacing {} cannot separate {} ns pulses with a {} ns guard",
                self.mode_spacing, self.pulse_duration, self.cluster_guard
            ));
        }
        if self.cluster_guard < self.pulse_duration {
            return fail(format!(
                "cluster_guard {} below one pulse duration {}; forbidden overlaps would pass",
                self.cluster_guard, self.pulse_duration
            ));
        }
        if !(self.write_amplitude > 0.0) {
            return fail("write_amplitude must be positive".into());
        }
        if !(self.data_offset > 0.0) || !(self.read_offset > 0.0) {
            return fail("data_offset and read_offset must be positive".into());
        }
        Ok(())
    }
}

/// Classification of one echo emission in a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionClass {
    /// Lands on an output binding; this is signal.
    Intended,
    /// Harmless auxiliary echo, clear of every output window.
    Auxiliary,
    /// Auxiliary echo within one pulse duration of an output: corrupts signal.
    Forbidden,
}

#[derive(Debug, Clone)]
pub struct Collision {
    pub time: f64,
    /// (read index, data index) pairs emitting here, indices within each role.
    pub contributions: Vec<(usize, usize)>,
    pub class: CollisionClass,
}

/// Every echo a schedule produces, classified against its output bindings.
#[derive(Debug, Clone, Default)]
pub struct CollisionReport {
    pub collisions: Vec<Collision>,
}

impl CollisionReport {
    pub fn intended_count(&self) -> usize {
        self.count(CollisionClass::Intended)
    }

    pub fn auxiliary_count(&self) -> usize {
        self.count(CollisionClass::Auxiliary)
    }

    pub fn forbidden_count(&self) -> usize {
        self.count(CollisionClass::Forbidden)
    }

    /// True when no auxiliary echo encroaches on an output window.
    pub fn is_clean(&self) -> bool {
        self.forbidden_count() == 0
    }

    fn count(&self, class: CollisionClass) -> usize {
        self.collisions.iter().filter(|c| c.class == class).count()
    }
}

/// A compiled (or loaded) pulse schedule realising `target` on the data comb.
///
/// The stored data pulses are unit-amplitude carriers; [`Schedule::bind_inputs`]
/// stamps an input state's amplitudes and phases onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub train: PulseTrain,
    /// (label, data pulse center) per input mode, in mode order.
    pub input_bindings: Vec<(String, f64)>,
    /// (label, echo center) per output mode, in mode order.
    pub output_bindings: Vec<(String, f64)>,
    /// Auxiliary echo times, sorted.
    pub aux_times: Vec<f64>,
    /// The matrix this schedule realises.
    pub target: CMat,
    pub mode_spacing: f64,
    pub cluster_guard: f64,
}

impl Schedule {
    pub fn input_dim(&self) -> usize {
        self.input_bindings.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_bindings.len()
    }

    /// Longest pulse duration in the train; the collision threshold unit.
    pub fn pulse_duration(&self) -> f64 {
        self.train.max_duration()
    }

    /// Returns a train with `state`'s amplitudes and phases stamped onto the
    /// data pulses (in binding order).
    pub fn bind_inputs(&self, state: &ModeVector) -> Result<PulseTrain, CompilerError> {
        if state.dim() != self.input_dim() {
            return Err(CompilerError::Binding {
                reason: format!(
                    "state has {} modes, schedule binds {}",
                    state.dim(),
                    self.input_dim()
                ),
            });
        }
        let mut data_pos = 0usize;
        let train = self.train.map_pulses(|_, p| {
            let mut p = p.clone();
            if p.role == PulseRole::Data {
                let a = state.amplitude(data_pos);
                p.amplitude = a.norm();
                p.phase = if a.norm() > 0.0 { a.arg() } else { 0.0 };
                data_pos += 1;
            }
            p
        })?;
        if data_pos != self.input_dim() {
            return Err(CompilerError::Binding {
                reason: format!(
                    "train holds {} data pulses, bindings expect {}",
                    data_pos,
                    self.input_dim()
                ),
            });
        }
        Ok(train)
    }

    /// Cluster id per read pulse (time order): the output row whose intended
    /// window the read feeds. Reads matching no output get fresh ids.
    pub fn read_clusters(&self) -> Vec<usize> {
        let t_w = self.train.write_pulse().map(|w| w.center_time).unwrap_or(0.0);
        let data_times: Vec<f64> = self.input_bindings.iter().map(|(_, t)| t).copied().collect();
        let half = 0.5 * self.pulse_duration();
        let reads = self.train.by_role(PulseRole::Read);
        let mut clusters = Vec::with_capacity(reads.len());
        let mut next_free = self.output_dim();
        for r in reads {
            let mut assigned = None;
            'outer: for (i, (_, o_time)) in self.output_bindings.iter().enumerate() {
                for &d in &data_times {
                    if (r.center_time + d - t_w - o_time).abs() <= half {
                        assigned = Some(i);
                        break 'outer;
                    }
                }
            }
            clusters.push(assigned.unwrap_or_else(|| {
                let id = next_free;
                next_free += 1;
                id
            }));
        }
        clusters
    }

    /// Sum of echo-amplitude energy expected at the output bindings for a
    /// bound input, ignoring decay (used by energy accounting tests).
    pub fn ideal_outputs(&self, state: &ModeVector) -> Result<Vec<C64>, CompilerError> {
        if state.dim() != self.input_dim() {
            return Err(CompilerError::Binding {
                reason: format!(
                    "state has {} modes, target takes {}",
                    state.dim(),
                    self.target.ncols()
                ),
            });
        }
        let v = state.as_dvector();
        let out = &self.target * v;
        Ok(out.iter().copied().collect())
    }
}

/// Extracts per-output complex amplitudes from an event list produced by
/// simulating a bound schedule: coherent sum of events within half a pulse
/// duration of each output binding.
pub fn output_amplitudes(schedule: &Schedule, events: &EchoEvents) -> Vec<C64> {
    let half = 0.5 * schedule.pulse_duration();
    schedule
        .output_bindings
        .iter()
        .map(|(_, t)| events.amplitude_near(*t, half))
        .collect()
}

/// Compiles a target matrix into a schedule under the given layout.
///
/// Rows are output modes, columns input modes; entry magnitudes must not
/// exceed 1. The same lattice search runs for every target shape, so a d x 1
/// column vector compiles to a single read cluster.
pub fn compile(target: &CMat, layout: &LayoutParams) -> Result<Schedule, CompilerError> {
    layout.validate()?;
    let d_out = target.nrows();
    let d_in = target.ncols();
    if d_out == 0 || d_in == 0 {
        return Err(CompilerError::InvalidLayout { reason: "target matrix is empty".into() });
    }
    for i in 0..d_out {
        for j in 0..d_in {
            let m = target[(i, j)].norm();
            if m > 1.0 + AMPLITUDE_TOL {
                return Err(CompilerError::AmplitudeRange { row: i, col: j, magnitude: m });
            }
        }
    }

    let s = layout.mode_spacing;
    let t_w = layout.write_time;
    let data_times: Vec<f64> = (0..d_in).map(|j| t_w + layout.data_offset + j as f64 * s).collect();
    let d_max = *data_times.last().unwrap();
    let lattice_origin = t_w + layout.read_offset;
    if lattice_origin < d_max + s {
        return Err(CompilerError::LayoutInfeasible {
            reason: format!(
                "read_offset {} leaves the first cluster inside the data comb ending at {}",
                layout.read_offset, d_max
            ),
        });
    }

    // earliest-fit on the lattice: cluster i occupies slots c..c+d_in-1
    let mut bases: Vec<usize> = Vec::with_capacity(d_out);
    let mut output_times: Vec<f64> = Vec::with_capacity(d_out);
    let cluster_time = |c: usize| lattice_origin + c as f64 * s;
    let output_time = |c: usize| cluster_time(c) + (d_max - t_w);
    for _ in 0..d_out {
        let mut c = bases.last().map(|&b| b + d_in).unwrap_or(0);
        let placed = loop {
            if c > layout.max_horizon_steps {
                return Err(CompilerError::LayoutInfeasible {
                    reason: format!(
                        "no clean slot for cluster {} within {} lattice steps",
                        bases.len(),
                        layout.max_horizon_steps
                    ),
                });
            }
            if cluster_fits(c, &bases, d_in, d_max, t_w, layout) {
                break c;
            }
            c += 1;
        };
        bases.push(placed);
        output_times.push(output_time(placed));
    }

    let dur = layout.pulse_duration;
    let shape = layout.pulse_shape;
    let mut pulses = vec![Pulse::with_shape(
        PulseRole::Write,
        t_w,
        dur,
        layout.write_amplitude,
        0.0,
        shape,
    )?];
    for &d in &data_times {
        pulses.push(Pulse::with_shape(PulseRole::Data, d, dur, 1.0, 0.0, shape)?);
    }
    for (i, &c) in bases.iter().enumerate() {
        for (j, &d) in data_times.iter().enumerate() {
            let entry = target[(i, j)];
            if entry.norm() <= AMPLITUDE_FLOOR {
                continue;
            }
            let center = cluster_time(c) + (d_max - d);
            pulses.push(Pulse::with_shape(
                PulseRole::Read,
                center,
                dur,
                entry.norm(),
                entry.arg(),
                shape,
            )?);
        }
    }
    let train = PulseTrain::new(pulses)?;

    let input_bindings =
        data_times.iter().enumerate().map(|(j, &t)| (format!("in{j}"), t)).collect();
    let output_bindings = output_times
        .iter()
        .enumerate()
        .map(|(i, &t)| (format!("out{i}"), t))
        .collect();

    let mut schedule = Schedule {
        train,
        input_bindings,
        output_bindings,
        aux_times: Vec::new(),
        target: target.clone(),
        mode_spacing: s,
        cluster_guard: layout.cluster_guard,
    };
    schedule.aux_times = validate(&schedule)
        .collisions
        .iter()
        .filter(|c| c.class != CollisionClass::Intended)
        .map(|c| c.time)
        .collect();
    Ok(schedule)
}

fn cluster_fits(
    c: usize,
    placed: &[usize],
    d_in: usize,
    d_max: f64,
    t_w: f64,
    layout: &LayoutParams,
) -> bool {
    let s = layout.mode_spacing;
    let origin = t_w + layout.read_offset;
    let guard = layout.cluster_guard;
    let all: Vec<usize> = placed.iter().copied().chain(std::iter::once(c)).collect();

    for &ci in &all {
        let out_i = origin + ci as f64 * s + (d_max - t_w);
        for &cj in &all {
            let base_j = origin + cj as f64 * s;
            if cj != ci {
                // cluster slot ranges must not interleave
                if (cj as i64 - ci as i64).unsigned_abs() < d_in as u64 {
                    return false;
                }
                let aux_base_j = base_j + (d_max - t_w);
                let aux_base_i = out_i;
                for m in 1..d_in {
                    let off_m = m as f64 * s;
                    // auxiliary echoes of cluster j stay off output i
                    if (aux_base_j - off_m - out_i).abs() < guard
                        || (aux_base_j + off_m - out_i).abs() < guard
                    {
                        return false;
                    }
                    // ... and off every auxiliary echo of cluster i: coherent
                    // aux-aux overlap would redistribute echo energy between
                    // windows, breaking the energy accounting of the schedule
                    for mi in 1..d_in {
                        let off_mi = mi as f64 * s;
                        for a in [aux_base_j - off_m, aux_base_j + off_m] {
                            for b in [aux_base_i - off_mi, aux_base_i + off_mi] {
                                if (a - b).abs() < guard {
                                    return false;
                                }
                            }
                        }
                    }
                }
            }
            // no read center (cluster j slots at base_j + 0..d_in-1 steps)
            // may sit within the guard of output i
            for j in 0..d_in {
                let read_t = base_j + j as f64 * s;
                if (read_t - out_i).abs() < guard {
                    return false;
                }
            }
        }
    }
    true
}

/// Re-derives every (read, data) echo of a schedule and classifies it against
/// the output bindings: events within half a pulse duration of an output are
/// intended; other (auxiliary) events are forbidden when they come within one
/// full pulse duration of an output.
pub fn validate(schedule: &Schedule) -> CollisionReport {
    let train = &schedule.train;
    let Some(write) = train.write_pulse() else {
        return CollisionReport::default();
    };
    let t_w = write.center_time;
    let dur = schedule.pulse_duration();
    let half = 0.5 * dur;
    let reads = train.by_role(PulseRole::Read);
    let data = train.by_role(PulseRole::Data);

    let mut raw: Vec<(f64, usize, usize)> = Vec::new();
    for (k, r) in reads.iter().enumerate() {
        for (j, d) in data.iter().enumerate() {
            raw.push((r.center_time + d.center_time - t_w, k, j));
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut collisions: Vec<Collision> = Vec::new();
    for (t, k, j) in raw {
        match collisions.last_mut() {
            Some(c) if (t - c.time).abs() <= half => c.contributions.push((k, j)),
            _ => collisions.push(Collision {
                time: t,
                contributions: vec![(k, j)],
                class: CollisionClass::Auxiliary,
            }),
        }
    }
    for c in &mut collisions {
        let nearest = schedule
            .output_bindings
            .iter()
            .map(|(_, t)| (c.time - t).abs())
            .fold(f64::INFINITY, f64::min);
        c.class = if nearest <= half {
            CollisionClass::Intended
        } else if nearest < dur {
            CollisionClass::Forbidden
        } else {
            CollisionClass::Auxiliary
        };
    }
    CollisionReport { collisions }
}

/// One two-mode rotation layer of a triangular decomposition. The block acts
/// on modes (`mode_a`, `mode_b`) as
///
/// ```text
/// [ cos t e^{i pa}   -sin t e^{-i pb} ]
/// [ sin t e^{i pb}    cos t e^{-i pa} ]
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationStep {
    pub mode_a: usize,
    pub mode_b: usize,
    /// Mixing angle, [0, pi/2].
    pub theta: f64,
    pub phase_a: f64,
    pub phase_b: f64,
}

impl RotationStep {
    pub fn matrix(&self, dim: usize) -> CMat {
        let mut m = CMat::identity(dim, dim);
        let (ct, st) = (self.theta.cos(), self.theta.sin());
        m[(self.mode_a, self.mode_a)] = C64::from_polar(ct, self.phase_a);
        m[(self.mode_a, self.mode_b)] = -C64::from_polar(st, -self.phase_b);
        m[(self.mode_b, self.mode_a)] = C64::from_polar(st, self.phase_b);
        m[(self.mode_b, self.mode_b)] = C64::from_polar(ct, -self.phase_a);
        m
    }
}

/// Triangular (Givens) factorisation U = H_1 H_2 ... H_M D with each H a
/// two-mode rotation and D a diagonal phase layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReckDecomposition {
    pub dim: usize,
    /// Rotations in product order (leftmost factor first).
    pub rotations: Vec<RotationStep>,
    /// arg of the diagonal entries of D.
    pub output_phases: Vec<f64>,
}

impl ReckDecomposition {
    /// Multiplies the factors back together.
    pub fn reconstruct(&self) -> CMat {
        let mut m = CMat::from_fn(self.dim, self.dim, |i, j| {
            if i == j {
                C64::from_polar(1.0, self.output_phases[i])
            } else {
                C64::new(0.0, 0.0)
            }
        });
        for rot in self.rotations.iter().rev() {
            m = rot.matrix(self.dim) * m;
        }
        m
    }
}

/// Factors a unitary into two-mode rotations by nulling below-diagonal
/// entries column by column. Rotations with negligible mixing are dropped, so
/// a diagonal matrix yields no rotation layers; a generic d x d unitary
/// yields d(d-1)/2.
pub fn decompose_reck(u: &CMat) -> Result<ReckDecomposition, CompilerError> {
    let report = check_unitary(u)?;
    if !report.is_unitary {
        return Err(CompilerError::Core(CoreError::NotUnitary {
            deviation: report.max_deviation,
        }));
    }
    let d = u.nrows();
    let mut work = u.clone();
    let mut rotations: Vec<RotationStep> = Vec::new();
    for col in 0..d.saturating_sub(1) {
        for row in (col + 1..d).rev() {
            let b = work[(row, col)];
            if b.norm() <= 1e-12 {
                continue;
            }
            let a = work[(col, col)];
            let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let theta = b.norm().atan2(a.norm());
            let step = RotationStep {
                mode_a: col,
                mode_b: row,
                theta,
                phase_a: if a.norm() > 1e-15 { a.arg() } else { 0.0 },
                phase_b: b.arg(),
            };
            // left-multiply by the nulling rotation G = step.matrix()^H
            let g = step.matrix(d).adjoint();
            let rows = (g.row(col) * &work, g.row(row) * &work);
            work.set_row(col, &rows.0);
            work.set_row(row, &rows.1);
            work[(row, col)] = C64::new(0.0, 0.0);
            debug_assert!((work[(col, col)].norm() - r).abs() < 1e-9);
            rotations.push(step);
        }
    }
    let output_phases = (0..d).map(|k| work[(k, k)].arg()).collect();
    Ok(ReckDecomposition { dim: d, rotations, output_phases })
}

/// Compiles a unitary as a cascade of elementary schedules: the diagonal
/// phase layer first, then each rotation layer in application order. Chaining
/// the stages (output of one feeding the data comb of the next) applies the
/// full unitary.
pub fn compile_cascade(u: &CMat, layout: &LayoutParams) -> Result<Vec<Schedule>, CompilerError> {
    let decomp = decompose_reck(u)?;
    let d = decomp.dim;
    let mut stages = Vec::with_capacity(decomp.rotations.len() + 1);
    let diag = CMat::from_fn(d, d, |i, j| {
        if i == j {
            C64::from_polar(1.0, decomp.output_phases[i])
        } else {
            C64::new(0.0, 0.0)
        }
    });
    stages.push(compile(&diag, layout)?);
    for rot in decomp.rotations.iter().rev() {
        stages.push(compile(&rot.matrix(d), layout)?);
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{echo_events, EnsembleModel};
    use crate::types::{random_unitary, UnitaryMatrix};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Model for exact algebra checks: no decay, unit conversion.
    fn ideal_model() -> EnsembleModel {
        EnsembleModel {
            t2_coherence_us: f64::INFINITY,
            grid_points: 1 << 13,
            ..EnsembleModel::default()
        }
    }

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> ModeVector {
        use rand_distr::{Distribution, StandardNormal};
        let amps: Vec<C64> = (0..dim)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im)
            })
            .collect();
        ModeVector::from_amplitudes(amps).unwrap().normalized().unwrap()
    }

    #[test]
    fn identity_1x1_compiles_to_single_cluster() {
        let target = CMat::identity(1, 1);
        let s = compile(&target, &LayoutParams::default()).unwrap();
        assert_eq!(s.train.by_role(PulseRole::Read).len(), 1);
        assert_eq!(s.output_bindings.len(), 1);
        // read at lattice origin, echo one data delay later
        assert_abs_diff_eq!(s.train.by_role(PulseRole::Read)[0].center_time, 2000.0);
        assert_abs_diff_eq!(s.output_bindings[0].1, 2300.0);
        assert!(s.aux_times.is_empty());
        let report = validate(&s);
        assert_eq!(report.intended_count(), 1);
        assert!(report.is_clean());
    }

    #[test]
    fn read_pulse_parameters_encode_entries() {
        let target = CMat::from_row_slice(2, 2, &[
            C64::from_polar(0.6, 0.0),
            C64::from_polar(0.8, 1.1),
            C64::from_polar(0.8, -2.0),
            C64::from_polar(0.6, 0.4),
        ]);
        let s = compile(&target, &LayoutParams::default()).unwrap();
        let reads = s.train.by_role(PulseRole::Read);
        assert_eq!(reads.len(), 4);
        // row 0 cluster: read (0, j=1) comes first (retrieves the later data
        // pulse with zero extra delay)
        assert_abs_diff_eq!(reads[0].amplitude, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(reads[0].phase, 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(reads[1].amplitude, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(reads[1].phase, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_entries_produce_no_read_pulse() {
        let target = CMat::from_row_slice(2, 2, &[
            c(1.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(1.0, 0.0),
        ]);
        let s = compile(&target, &LayoutParams::default()).unwrap();
        assert_eq!(s.train.by_role(PulseRole::Read).len(), 2);
        assert!(validate(&s).is_clean());
    }

    #[test]
    fn amplitude_range_is_enforced() {
        let target = CMat::from_row_slice(1, 1, &[c(1.5, 0.0)]);
        assert!(matches!(
            compile(&target, &LayoutParams::default()),
            Err(CompilerError::AmplitudeRange { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn outputs_clear_read_centers_for_d3() {
        // with 300 ns data offset on a 100 ns lattice, the naive 3-slot pitch
        // would park read (1, 0) exactly on output 0; the search must skip it
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_unitary(3, &mut rng);
        let s = compile(u.entries(), &LayoutParams::default()).unwrap();
        let reads = s.train.by_role(PulseRole::Read);
        for (_, o) in &s.output_bindings {
            for r in &reads {
                assert!(
                    (r.center_time - o).abs() >= s.cluster_guard,
                    "read at {} within guard of output {}",
                    r.center_time,
                    o
                );
            }
        }
        assert!(validate(&s).is_clean());
    }

    #[test]
    fn compiled_unitary_round_trips_through_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for dim in 1..=4 {
            let u = random_unitary(dim, &mut rng);
            let s = compile(u.entries(), &LayoutParams::default()).unwrap();
            let state = random_state(dim, &mut rng);
            let train = s.bind_inputs(&state).unwrap();
            let events = echo_events(&train, &ideal_model()).unwrap();
            let got = output_amplitudes(&s, &events);
            let want = u.apply(&state).unwrap();
            for (g, w) in got.iter().zip(want.amplitudes()) {
                assert!((g - w).norm() < 1e-12, "dim {dim}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn finite_t2_outputs_match_per_read_decay_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = random_unitary(3, &mut rng);
        let s = compile(u.entries(), &LayoutParams::default()).unwrap();
        let state = random_state(3, &mut rng);
        let train = s.bind_inputs(&state).unwrap();
        let model = EnsembleModel { grid_points: 1 << 13, ..EnsembleModel::default() };
        let events = echo_events(&train, &model).unwrap();
        let got = output_amplitudes(&s, &events);

        // oracle: out_i = sum_j U_ij a_j exp(-(R_ij - t_w)/T2) with the read
        // times reconstructed from the schedule geometry
        let t2 = model.t2_ns();
        let d_times: Vec<f64> = s.input_bindings.iter().map(|(_, t)| *t).collect();
        let d_max = *d_times.last().unwrap();
        for (i, (_, o)) in s.output_bindings.iter().enumerate() {
            let base = o - d_max; // cluster base = O_i - (d_max - t_w), t_w = 0
            let mut want = c(0.0, 0.0);
            for (j, &dj) in d_times.iter().enumerate() {
                let read_time = base + (d_max - dj);
                want += u.entries()[(i, j)] * state.amplitude(j) * (-read_time / t2).exp();
            }
            assert!((got[i] - want).norm() < 1e-12, "row {i}: {} vs {want}", got[i]);
        }
    }

    #[test]
    fn total_event_energy_matches_closed_form() {
        // sum over all events of |amp|^2 is kappa^2 |w|^2 d |a|^2 for a d x d
        // unitary target: with kappa = 1/sqrt(d) the echo energy equals the
        // input norm (and never exceeds it)
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for dim in 1..=4usize {
            let u = random_unitary(dim, &mut rng);
            let s = compile(u.entries(), &LayoutParams::default()).unwrap();
            let state = random_state(dim, &mut rng);
            let train = s.bind_inputs(&state).unwrap();
            let kappa = 1.0 / (dim as f64).sqrt();
            let model = EnsembleModel { optical_depth_scale: kappa, ..ideal_model() };
            let events = echo_events(&train, &model).unwrap();
            let total = events.total_energy();
            let expect = kappa * kappa * dim as f64 * state.norm_sqr();
            assert_abs_diff_eq!(total, expect, epsilon = 1e-12);
            assert!(total <= state.norm_sqr() + 1e-12);
        }
    }

    #[test]
    fn bind_inputs_rejects_dimension_mismatch() {
        let s = compile(&CMat::identity(2, 2), &LayoutParams::default()).unwrap();
        let state = ModeVector::from_reals(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(s.bind_inputs(&state), Err(CompilerError::Binding { .. })));
    }

    #[test]
    fn horizon_exhaustion_reports_infeasible() {
        let layout = LayoutParams { max_horizon_steps: 4, ..LayoutParams::default() };
        let result = compile(&CMat::identity(3, 3), &layout);
        assert!(matches!(result, Err(CompilerError::LayoutInfeasible { .. })));
    }

    #[test]
    fn layout_validation_rejects_thin_guard() {
        let layout = LayoutParams { cluster_guard: 5.0, ..LayoutParams::default() };
        assert!(matches!(
            compile(&CMat::identity(2, 2), &layout),
            Err(CompilerError::InvalidLayout { .. })
        ));
    }

    #[test]
    fn validate_flags_forbidden_overlap() {
        // hand-build a schedule whose aux echo lands 10 ns from an output
        let mut s = compile(&CMat::identity(1, 1), &LayoutParams::default()).unwrap();
        let mut pulses: Vec<Pulse> = s.train.pulses().to_vec();
        pulses.push(Pulse::new(PulseRole::Data, 410.0, 15.0, 1.0, 0.0).unwrap());
        s.train = PulseTrain::new(pulses).unwrap();
        s.input_bindings.push(("in1".into(), 410.0));
        // read at 2000 now also fires the new data pulse at 2000+410 = 2410;
        // output remains 2300, so 2410 is fine. Add a read making an aux at
        // 2290 instead: read at 1880 with data 410 -> 2290, 10 ns from 2300.
        let mut pulses: Vec<Pulse> = s.train.pulses().to_vec();
        pulses.push(Pulse::new(PulseRole::Read, 1880.0, 15.0, 0.5, 0.0).unwrap());
        s.train = PulseTrain::new(pulses).unwrap();
        let report = validate(&s);
        assert!(report.forbidden_count() > 0);
        assert!(!report.is_clean());
    }

    #[test]
    fn reck_reconstructs_random_unitaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for dim in 1..=4usize {
            for _ in 0..20 {
                let u = random_unitary(dim, &mut rng);
                let decomp = decompose_reck(u.entries()).unwrap();
                assert_eq!(decomp.rotations.len(), dim * (dim - 1) / 2);
                let back = decomp.reconstruct();
                let err = (u.entries() - &back).iter().map(|e| e.norm()).fold(0.0, f64::max);
                assert!(err < 1e-9, "dim {dim}: reconstruction error {err}");
            }
        }
    }

    #[test]
    fn reck_on_diagonal_yields_no_rotations() {
        let d = CMat::from_fn(3, 3, |i, j| {
            if i == j {
                C64::from_polar(1.0, 0.3 * (i as f64 + 1.0))
            } else {
                c(0.0, 0.0)
            }
        });
        let decomp = decompose_reck(&d).unwrap();
        assert!(decomp.rotations.is_empty());
        for (k, &p) in decomp.output_phases.iter().enumerate() {
            assert_abs_diff_eq!(p, 0.3 * (k as f64 + 1.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn reck_rejects_non_unitary() {
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
        assert!(matches!(
            decompose_reck(&m),
            Err(CompilerError::Core(CoreError::NotUnitary { .. }))
        ));
    }

    #[test]
    fn cascade_stages_chain_to_the_full_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let u = random_unitary(3, &mut rng);
        let stages = compile_cascade(u.entries(), &LayoutParams::default()).unwrap();
        assert_eq!(stages.len(), 1 + 3);

        let model = ideal_model();
        let mut state = random_state(3, &mut rng);
        let input = state.clone();
        for stage in &stages {
            let train = stage.bind_inputs(&state).unwrap();
            let events = echo_events(&train, &model).unwrap();
            let amps = output_amplitudes(stage, &events);
            state = ModeVector::from_amplitudes(amps).unwrap();
        }
        let want = UnitaryMatrix::new(u.entries().clone()).unwrap().apply(&input).unwrap();
        for (g, w) in state.amplitudes().iter().zip(want.amplitudes()) {
            assert!((g - w).norm() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn column_targets_compile() {
        // a 3 x 1 target: one data slot, three clusters
        let target = CMat::from_row_slice(3, 1, &[c(0.5, 0.0), c(0.5, 0.5), c(0.0, 0.7)]);
        let s = compile(&target, &LayoutParams::default()).unwrap();
        assert_eq!(s.input_bindings.len(), 1);
        assert_eq!(s.output_bindings.len(), 3);
        assert_eq!(s.train.by_role(PulseRole::Read).len(), 3);
        // single data pulse: no auxiliary echoes at all
        assert!(s.aux_times.is_empty());
        assert!(validate(&s).is_clean());
    }
}
