//! Unambiguous state discrimination (USD) designs.
//!
//! Given N linearly independent candidate states, a lossless transformation
//! followed by mode-resolved detection discriminates them without error when
//! each state maps to a vector whose overlap with every *other* conclusive
//! mode vanishes. Writing q_i for the probability that state i lands in the
//! inconclusive subspace, a valid design exists iff
//!
//! ```text
//! G - I + diag(q)  >=  0        (positive semidefinite)
//! ```
//!
//! with G the Gram matrix of the states. Minimising the prior-weighted
//! average of q over that convex set gives the optimal design; the transform
//! is then assembled from the eigendecomposition of G - I + diag(q) and
//! completed to a unitary on N + r modes, with r the rank of the inconclusive
//! block (at most N - 1 at an optimum).
//!
//! Two-state reference bounds: the minimum-error (Helstrom) probability
//! p_e = (1 - sqrt(1 - 4 p_a p_b |<a|b>|^2)) / 2 and the unambiguous (IDP)
//! inconclusive floor |<a|b>| for equal priors.

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::types::{C64, CMat, CVec, CoreError, ModeVector, UnitaryMatrix};

/// Priors must sum to 1 within this tolerance.
const PRIOR_TOL: f64 = 1e-9;
/// Gram determinant below this is treated as linearly dependent.
const GRAM_DET_TOL: f64 = 1e-10;
/// Allowed negative slack on the smallest eigenvalue in feasibility checks.
const PSD_SLACK: f64 = 1e-11;
/// Eigenvalues above this count toward the inconclusive-block rank.
const RANK_TOL: f64 = 1e-9;
/// Local search stops when a full move cycle improves less than this.
const CONVERGENCE_TOL: f64 = 1e-10;
const MAX_CYCLES: usize = 200;
const STARTS: usize = 16;

#[derive(Debug, Error)]
pub enum UsdError {
    #[error("state {index} is not normalised (|norm^2 - 1| = {deviation:.3e})")]
    Normalization { index: usize, deviation: f64 },
    #[error("domain error: {reason}")]
    Domain { reason: String },
    #[error("states are linearly dependent (Gram determinant {det:.3e})")]
    DegenerateSet { det: f64 },
    #[error(
        "optimizer failed to converge; best average inconclusive probability {best_avg:.6}"
    )]
    Convergence { best_avg: f64, best_q: Vec<f64> },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// What a detector on one output mode means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeRole {
    /// A click identifies input state `.0` with certainty.
    Conclusive(usize),
    /// A click gives no information (the overlap sink).
    Inconclusive,
}

/// A complete discrimination design: candidate states (embedded in the output
/// dimension), the unitary realising the transform, and its figures of merit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminationDesign {
    /// Candidate states, zero-padded to the embedding dimension.
    pub inputs: Vec<ModeVector>,
    pub priors: Vec<f64>,
    /// Images of the inputs under the embedding.
    pub outputs: Vec<ModeVector>,
    pub embedding: UnitaryMatrix,
    /// Inconclusive probability per state (q_i).
    pub p_inconclusive: Vec<f64>,
    /// Prior-weighted average of q.
    pub p_inconclusive_avg: f64,
    /// Minimum-error reference bound; two-state sets only.
    pub p_error_helstrom: Option<f64>,
    /// Meaning of each output mode.
    pub mode_roles: Vec<ModeRole>,
    /// False when the optimizer stopped without passing its convergence test.
    pub optimal: bool,
}

impl DiscriminationDesign {
    pub fn num_states(&self) -> usize {
        self.inputs.len()
    }

    /// Total mode count of the embedding.
    pub fn embedded_dim(&self) -> usize {
        self.embedding.dim()
    }

    /// Number of inconclusive (auxiliary) modes.
    pub fn aux_dim(&self) -> usize {
        self.mode_roles
            .iter()
            .filter(|r| matches!(r, ModeRole::Inconclusive))
            .count()
    }
}

fn check_normalized(states: &[ModeVector]) -> Result<(), UsdError> {
    for (i, s) in states.iter().enumerate() {
        let dev = (s.norm_sqr() - 1.0).abs();
        if dev > 1e-10 {
            return Err(UsdError::Normalization { index: i, deviation: dev });
        }
    }
    Ok(())
}

fn check_priors(priors: &[f64], n: usize) -> Result<(), UsdError> {
    if priors.len() != n {
        return Err(UsdError::Domain {
            reason: format!("{} priors for {} states", priors.len(), n),
        });
    }
    if priors.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(UsdError::Domain { reason: "priors must be positive".into() });
    }
    let sum: f64 = priors.iter().sum();
    if (sum - 1.0).abs() > PRIOR_TOL {
        return Err(UsdError::Domain { reason: format!("priors sum to {sum}, expected 1") });
    }
    Ok(())
}

/// Minimum-error (Helstrom) bound for two pure states with the given priors.
pub fn helstrom_bound(
    a: &ModeVector,
    b: &ModeVector,
    prior_a: f64,
    prior_b: f64,
) -> Result<f64, UsdError> {
    check_normalized(std::slice::from_ref(a))?;
    check_normalized(std::slice::from_ref(b)).map_err(|e| match e {
        UsdError::Normalization { deviation, .. } => {
            UsdError::Normalization { index: 1, deviation }
        }
        other => other,
    })?;
    check_priors(&[prior_a, prior_b], 2)?;
    let overlap = a.inner_product(b)?;
    let discriminant = 1.0 - 4.0 * prior_a * prior_b * overlap.norm_sqr();
    Ok(0.5 * (1.0 - discriminant.max(0.0).sqrt()))
}

/// Equal-prior unambiguous-discrimination floor: the inconclusive probability
/// of either state can never fall below |<a|b>|.
pub fn idp_bound(a: &ModeVector, b: &ModeVector) -> Result<f64, UsdError> {
    check_normalized(std::slice::from_ref(a))?;
    check_normalized(std::slice::from_ref(b)).map_err(|e| match e {
        UsdError::Normalization { deviation, .. } => {
            UsdError::Normalization { index: 1, deviation }
        }
        other => other,
    })?;
    Ok(a.inner_product(b)?.norm())
}

/// The +-alpha candidate pair: cos(a) e0 +- sin(a) e1, carried on three modes
/// so the third can absorb the inconclusive component.
pub fn qubit_pair_states(alpha: f64) -> (ModeVector, ModeVector) {
    let (s, c) = alpha.sin_cos();
    let plus = ModeVector::from_reals(&[c, s, 0.0]).unwrap();
    let minus = ModeVector::from_reals(&[c, -s, 0.0]).unwrap();
    (plus, minus)
}

/// Closed-form optimal USD design for the +-alpha pair with equal priors.
///
/// Valid for alpha in (0, pi/4]; the state overlap is cos(2 alpha) and the
/// design reaches the equal-prior optimum q = cos(2 alpha) for both states.
/// Output modes: 0 identifies "+", 1 identifies "-", 2 is inconclusive.
pub fn design_qubit_pair(alpha: f64) -> Result<DiscriminationDesign, UsdError> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha > std::f64::consts::FRAC_PI_4 {
        return Err(UsdError::Domain {
            reason: format!("alpha {alpha} outside (0, pi/4]"),
        });
    }
    let (s, c) = alpha.sin_cos();
    let cos2a = 2.0 * c * c - 1.0;
    let root = cos2a.max(0.0).sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;

    let (plus, minus) = qubit_pair_states(alpha);
    let out_plus = ModeVector::from_reals(&[sqrt2 * s, 0.0, root]).unwrap();
    let out_minus = ModeVector::from_reals(&[0.0, sqrt2 * s, root]).unwrap();

    // columns: images of e0, e1 and their cross-product completion
    let col0 = [sqrt2 * s / (2.0 * c), sqrt2 * s / (2.0 * c), root / c];
    let col1 = [1.0 / sqrt2, -1.0 / sqrt2, 0.0];
    let col2 = [
        col0[1] * col1[2] - col0[2] * col1[1],
        col0[2] * col1[0] - col0[0] * col1[2],
        col0[0] * col1[1] - col0[1] * col1[0],
    ];
    let u = CMat::from_fn(3, 3, |i, j| {
        let v = match j {
            0 => col0[i],
            1 => col1[i],
            _ => col2[i],
        };
        C64::new(v, 0.0)
    });
    let embedding = UnitaryMatrix::new(u)?;

    let helstrom = helstrom_bound(&plus, &minus, 0.5, 0.5)?;
    Ok(DiscriminationDesign {
        inputs: vec![plus, minus],
        priors: vec![0.5, 0.5],
        outputs: vec![out_plus, out_minus],
        embedding,
        p_inconclusive: vec![cos2a, cos2a],
        p_inconclusive_avg: cos2a,
        p_error_helstrom: Some(helstrom),
        mode_roles: vec![ModeRole::Conclusive(0), ModeRole::Conclusive(1), ModeRole::Inconclusive],
        optimal: true,
    })
}

/// Three states in C^3 with a common real pairwise overlap `s`: the columns
/// of (G)^{1/2} for G = (1-s) I + s J, which is a I + b J with
/// a = sqrt(1-s), b = (sqrt(1+2s) - sqrt(1-s)) / 3.
pub fn symmetric_triple(overlap: f64) -> Result<Vec<ModeVector>, UsdError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(UsdError::Domain {
            reason: format!("symmetric overlap {overlap} outside [0, 1)"),
        });
    }
    let a = (1.0 - overlap).sqrt();
    let b = ((1.0 + 2.0 * overlap).sqrt() - (1.0 - overlap).sqrt()) / 3.0;
    Ok((0..3)
        .map(|i| {
            let amps: Vec<f64> =
                (0..3).map(|k| if k == i { a + b } else { b }).collect();
            ModeVector::from_reals(&amps).unwrap()
        })
        .collect())
}

/// Gram matrix with the (i, j) entry <states_i | states_j>.
pub fn gram_matrix(states: &[ModeVector]) -> Result<CMat, UsdError> {
    let n = states.len();
    let mut g = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = states[i].inner_product(&states[j])?;
        }
    }
    Ok(g)
}

/// Smallest eigenvalue of G - I + diag(q); non-negative means `q` admits an
/// unambiguous design.
pub fn feasibility_margin(gram: &CMat, q: &[f64]) -> f64 {
    let n = gram.nrows();
    let mut m = gram.clone();
    for i in 0..n {
        m[(i, i)] = C64::new(q[i], 0.0);
    }
    let eig = SymmetricEigen::new(m);
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn is_feasible(gram: &CMat, q: &[f64]) -> bool {
    q.iter().all(|&x| x >= -PSD_SLACK) && feasibility_margin(gram, q) >= -PSD_SLACK
}

fn objective(priors: &[f64], q: &[f64]) -> f64 {
    priors.iter().zip(q).map(|(p, x)| p * x).sum()
}

/// Largest step t in [0, t_max] keeping q - t w feasible (w >= 0), found by
/// bisection on the monotone feasibility boundary.
fn shrink_step(gram: &CMat, q: &[f64], w: &[f64], t_max: f64) -> f64 {
    let probe = |t: f64| -> bool {
        let candidate: Vec<f64> = q.iter().zip(w).map(|(x, y)| x - t * y).collect();
        candidate.iter().all(|&x| x >= 0.0) && is_feasible(gram, &candidate)
    };
    if !probe(0.0) {
        return 0.0;
    }
    if probe(t_max) {
        return t_max;
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if probe(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Minimises q_i with the other coordinates fixed (monotone in q_i, so a
/// plain bisection against the PSD boundary suffices).
fn minimize_coordinate(gram: &CMat, q: &mut Vec<f64>, i: usize) {
    let mut probe_q = q.clone();
    let probe = |x: f64, probe_q: &mut Vec<f64>| -> bool {
        probe_q[i] = x;
        is_feasible(gram, probe_q)
    };
    if probe(0.0, &mut probe_q) {
        q[i] = 0.0;
        return;
    }
    let (mut lo, mut hi) = (0.0, q[i]);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if probe(mid, &mut probe_q) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    q[i] = hi;
}

/// One full improvement cycle: joint shrink along the all-ones and the prior
/// directions, per-coordinate minimisation, then pairwise trades that raise
/// one coordinate to buy a larger reduction of another.
fn improvement_cycle(gram: &CMat, priors: &[f64], q: &mut Vec<f64>) -> f64 {
    let n = q.len();
    let before = objective(priors, q);

    for w in [vec![1.0; n], priors.to_vec()] {
        let t = shrink_step(gram, q, &w, 1.0);
        if t > 0.0 {
            for (x, y) in q.iter_mut().zip(&w) {
                *x -= t * y;
            }
        }
    }
    for i in 0..n {
        minimize_coordinate(gram, q, i);
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // walk along the feasibility boundary: raise q_i, re-minimise
            // q_j, keep the step while it pays and shrink it when it stops
            let mut step = 0.3;
            while step > 1e-8 {
                let mut candidate = q.clone();
                candidate[i] = (candidate[i] + step).min(1.0);
                let mut improved = false;
                if is_feasible(gram, &candidate) {
                    minimize_coordinate(gram, &mut candidate, j);
                    if objective(priors, &candidate) < objective(priors, q) - 1e-14 {
                        *q = candidate;
                        improved = true;
                    }
                }
                if !improved {
                    step /= 3.0;
                }
            }
        }
    }
    before - objective(priors, q)
}

/// Deterministic multi-start local search for the optimal q.
fn optimize_q(gram: &CMat, priors: &[f64]) -> Result<(Vec<f64>, bool), UsdError> {
    let n = gram.nrows();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged_any = false;

    for start in 0..STARTS {
        // all-ones is always feasible (the Gram matrix itself is PSD)
        let mut q = vec![1.0; n];
        // start-dependent warm-up: optionally shrink jointly first, then
        // minimise coordinates in a rotated (possibly reversed) order
        if start % 2 == 0 {
            let t = shrink_step(gram, &q, &vec![1.0; n], 1.0);
            for x in q.iter_mut() {
                *x -= t;
            }
        }
        let mut order: Vec<usize> = (0..n).map(|k| (k + start / 2) % n).collect();
        if (start / 4) % 2 == 1 {
            order.reverse();
        }
        for &i in &order {
            minimize_coordinate(gram, &mut q, i);
        }

        let mut converged = false;
        for _ in 0..MAX_CYCLES {
            let gain = improvement_cycle(gram, priors, &mut q);
            if gain < CONVERGENCE_TOL {
                converged = true;
                break;
            }
        }
        converged_any |= converged;
        let value = objective(priors, &q);
        if best.as_ref().map_or(true, |(_, v)| value < *v) {
            best = Some((q, value));
        }
    }

    let (q, value) = best.expect("at least one start ran");
    if !converged_any {
        return Err(UsdError::Convergence { best_avg: value, best_q: q });
    }
    Ok((q, true))
}

/// Brute-force reference for the optimizer: a coarse grid pass over [0,1]^N
/// followed by a fine pass around the coarse minimum. Returns (q, average).
/// Exponential in N; meant for N <= 3 verification.
pub fn grid_search_oracle(
    gram: &CMat,
    priors: &[f64],
    coarse: f64,
    fine: f64,
) -> (Vec<f64>, f64) {
    let n = gram.nrows();
    let mut best_q = vec![1.0; n];
    let mut best_v = objective(priors, &best_q);
    let scan = |lo: &[f64], hi: &[f64], step: f64, best_q: &mut Vec<f64>, best_v: &mut f64| {
        let counts: Vec<usize> =
            (0..n).map(|i| ((hi[i] - lo[i]) / step).round() as usize + 1).collect();
        let mut idx = vec![0usize; n];
        loop {
            let q: Vec<f64> =
                (0..n).map(|i| (lo[i] + idx[i] as f64 * step).min(1.0)).collect();
            let v = objective(priors, &q);
            if v < *best_v && is_feasible(gram, &q) {
                *best_v = v;
                *best_q = q;
            }
            // odometer increment
            let mut carry = 0;
            loop {
                idx[carry] += 1;
                if idx[carry] < counts[carry] {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
                if carry == n {
                    return;
                }
            }
        }
    };
    let zeros = vec![0.0; n];
    let ones = vec![1.0; n];
    scan(&zeros, &ones, coarse, &mut best_q, &mut best_v);
    let lo: Vec<f64> = best_q.iter().map(|&x| (x - coarse).max(0.0)).collect();
    let hi: Vec<f64> = best_q.iter().map(|&x| (x + coarse).min(1.0)).collect();
    scan(&lo, &hi, fine, &mut best_q, &mut best_v);
    (best_q, best_v)
}

/// Completes a linear map defined on a set of vectors to a full unitary:
/// maps `from[k]` to `to[k]` and extends both orthonormal frames with
/// Gram-Schmidt over the standard basis (index order), making the completion
/// deterministic.
fn complete_embedding(from: &[CVec], to: &[CVec], dim: usize) -> Result<CMat, UsdError> {
    let mut u_basis: Vec<CVec> = Vec::new();
    let mut v_basis: Vec<CVec> = Vec::new();
    for (f, t) in from.iter().zip(to) {
        let mut rf = f.clone();
        let mut rt = t.clone();
        for (ub, vb) in u_basis.iter().zip(&v_basis) {
            rf -= ub * ub.dotc(f);
            rt -= vb * vb.dotc(t);
        }
        let nf = rf.norm();
        if nf <= 1e-8 {
            // f is linearly dependent on earlier sources: its image must
            // already be consistent, otherwise no isometry exists
            if rt.norm() > 1e-8 {
                return Err(UsdError::Domain {
                    reason: "target vectors are not isometric to the sources".into(),
                });
            }
            continue;
        }
        let nt = rt.norm();
        if (nt - nf).abs() > 1e-7 {
            return Err(UsdError::Domain {
                reason: format!(
                    "source/target residual norms differ ({nf:.3e} vs {nt:.3e}); \
                     no isometry maps the given vectors"
                ),
            });
        }
        // each frame is orthonormalised by its own norm so the assembled
        // matrix stays exactly unitary even when the target Gram matrix
        // carries tiny eigenvalue-truncation residue
        u_basis.push(rf / C64::new(nf, 0.0));
        v_basis.push(rt / C64::new(nt, 0.0));
    }

    let complete = |basis: &mut Vec<CVec>| {
        for k in 0..dim {
            if basis.len() == dim {
                break;
            }
            let mut e = CVec::zeros(dim);
            e[k] = C64::new(1.0, 0.0);
            for b in basis.iter() {
                let coeff = b.dotc(&e);
                e -= b * coeff;
            }
            let n = e.norm();
            if n > 1e-8 {
                basis.push(e / C64::new(n, 0.0));
            }
        }
    };
    complete(&mut u_basis);
    complete(&mut v_basis);
    if u_basis.len() != dim || v_basis.len() != dim {
        return Err(UsdError::Domain { reason: "embedding completion failed".into() });
    }

    let mut u = CMat::zeros(dim, dim);
    for (ub, vb) in u_basis.iter().zip(&v_basis) {
        u += vb * ub.adjoint();
    }
    Ok(u)
}

/// Designs an optimal unambiguous measurement for 2..=4 linearly independent
/// states given in dimension N (one mode per state).
///
/// The returned design lives on N + r modes: the first N are conclusive (mode
/// i fires only for state i), the last r absorb the inconclusive overlap.
pub fn design_n_states(
    states: &[ModeVector],
    priors: &[f64],
) -> Result<DiscriminationDesign, UsdError> {
    let n = states.len();
    if !(2..=4).contains(&n) {
        return Err(UsdError::Domain {
            reason: format!("{n} states given, this designer handles 2 to 4"),
        });
    }
    for (i, s) in states.iter().enumerate() {
        if s.dim() != n {
            return Err(UsdError::Domain {
                reason: format!("state {i} has {} modes, expected {n} (one per state)", s.dim()),
            });
        }
    }
    check_normalized(states)?;
    check_priors(priors, n)?;

    let gram = gram_matrix(states)?;
    let det = gram.clone().determinant().norm();
    if det < GRAM_DET_TOL {
        return Err(UsdError::DegenerateSet { det });
    }

    let (q, converged) = optimize_q(&gram, priors)?;

    // inconclusive block from the eigendecomposition of G - I + diag(q)
    let mut tilde = gram.clone();
    for i in 0..n {
        tilde[(i, i)] = C64::new(q[i], 0.0);
    }
    let eig = SymmetricEigen::new(tilde);
    let kept: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > RANK_TOL).collect();
    let r = kept.len();
    let dim = n + r;

    let mut outputs_raw: Vec<CVec> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = CVec::zeros(dim);
        v[i] = C64::new((1.0 - q[i]).max(0.0).sqrt(), 0.0);
        for (slot, &k) in kept.iter().enumerate() {
            v[n + slot] = eig.eigenvalues[k].sqrt() * eig.eigenvectors[(i, k)].conj();
        }
        outputs_raw.push(v);
    }
    let inputs_raw: Vec<CVec> = states
        .iter()
        .map(|s| {
            let mut v = CVec::zeros(dim);
            for (k, &a) in s.amplitudes().iter().enumerate() {
                v[k] = a;
            }
            v
        })
        .collect();

    let u = complete_embedding(&inputs_raw, &outputs_raw, dim)?;
    let embedding = UnitaryMatrix::new(u)?;

    let to_mode_vec = |v: &CVec| ModeVector::from_amplitudes(v.iter().copied().collect()).unwrap();
    let inputs: Vec<ModeVector> = inputs_raw.iter().map(&to_mode_vec).collect();
    let outputs: Vec<ModeVector> = outputs_raw.iter().map(&to_mode_vec).collect();

    let mut mode_roles: Vec<ModeRole> = (0..n).map(ModeRole::Conclusive).collect();
    mode_roles.extend(std::iter::repeat(ModeRole::Inconclusive).take(r));

    let p_error_helstrom = if n == 2 {
        Some(helstrom_bound(&states[0], &states[1], priors[0], priors[1])?)
    } else {
        None
    };

    Ok(DiscriminationDesign {
        inputs,
        priors: priors.to_vec(),
        outputs,
        embedding,
        p_inconclusive_avg: objective(priors, &q),
        p_inconclusive: q,
        p_error_helstrom,
        mode_roles,
        optimal: converged,
    })
}
