//! Metrics, noise injection, and checks of the discrete well-posedness
//! properties.
//!
//! The operator checks cover the matrix properties (continuity, symmetry,
//! zero row sums, nonnegative off-diagonals, irreducibility); the invariant
//! checks cover what a run of a scheme should then satisfy (mean
//! conservation, extremum principle, decaying variance, constant steady
//! state).

use std::collections::VecDeque;
use std::fmt::{self, Write as _};
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffusivity::DiffusivityModel;
use crate::error::{DiffusionError, Result};
use crate::grid::ScalarField;
use crate::operator::DiffusionOperator;
use crate::schemes::{Runner, SchemeConfig, SchemeKind};

/// Population variance over all pixels.
pub fn variance(field: &ScalarField) -> f64 {
    let v = field.values();
    let shift = v[0];
    let n = v.len() as f64;
    let m = v.iter().map(|x| x - shift).sum::<f64>() / n;
    v.iter().map(|x| (x - shift - m).powi(2)).sum::<f64>() / n
}

/// `Σ |a - b|` over all pixels.
pub fn l1_distance(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.same_dims(b)?;
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum())
}

/// Adds zero-mean normal noise with standard deviation `mean(field) / snr`.
///
/// The generator is ChaCha8 seeded with `seed`, and normal variates come
/// from `rand_distr`'s ziggurat sampler, so a fixed seed reproduces the
/// output exactly. The result is not clamped.
pub fn add_gaussian_noise(field: &ScalarField, snr: f64, seed: u64) -> Result<ScalarField> {
    let mean = field.mean();
    if mean.is_nan() || mean <= 0.0 {
        return Err(DiffusionError::Domain(format!(
            "signal-to-noise ratio is undefined for a field with mean {mean}"
        )));
    }
    if snr.is_nan() || snr <= 0.0 {
        return Err(DiffusionError::Domain(format!("snr must be positive (got {snr})")));
    }
    let std = mean / snr;
    let normal = Normal::new(0.0, std).map_err(|e| DiffusionError::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = field.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
    field.with_values(values)
}

/// A field of i.i.d. uniform values in `[lo, hi)`.
pub fn uniform_random_field(height: usize, width: usize, lo: f64, hi: f64, seed: u64) -> Result<ScalarField> {
    let dist = Uniform::new(lo, hi).map_err(|e| DiffusionError::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarField::from_fn(height, width, |_, _| dist.sample(&mut rng))
}

/// Statistics of one field in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub l1_ref: Option<f64>,
}

impl MetricsRecord {
    pub fn of(iteration: usize, field: &ScalarField, l1_ref: Option<f64>) -> Self {
        MetricsRecord {
            iteration,
            mean: field.mean(),
            variance: variance(field),
            min: field.min(),
            max: field.max(),
            l1_ref,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(DiffusionError::Config(format!(
                    "log iterations must increase (got {} after {})",
                    record.iteration, last.iteration
                )));
            }
        }
        let stats = [record.mean, record.variance, record.min, record.max];
        if let Some(&bad) = stats.iter().chain(record.l1_ref.iter()).find(|v| !v.is_finite()) {
            return Err(DiffusionError::Domain(format!(
                "statistics overflowed at iteration {} ({bad})",
                record.iteration
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// CSV with header `iter,mean,variance,min,max,l1_ref`; `l1_ref` is
    /// empty when no reference was set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,mean,variance,min,max,l1_ref\n");
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},",
                r.iteration, r.mean, r.variance, r.min, r.max
            );
            if let Some(l1) = r.l1_ref {
                let _ = write!(out, "{l1:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl FieldStats {
    pub fn of(field: &ScalarField) -> Self {
        FieldStats {
            mean: field.mean(),
            variance: variance(field),
            min: field.min(),
            max: field.max(),
        }
    }
}

/// Measured structure of an operator matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorReport {
    /// Largest `|a_kl - a_lk|` and where it occurs.
    pub max_asymmetry: f64,
    pub asymmetric_pair: Option<(usize, usize)>,
    pub max_abs_row_sum: f64,
    pub worst_row: Option<usize>,
    /// Smallest stored off-diagonal value (`+inf` if there is none).
    pub min_off_diagonal: f64,
    /// Connected components of the undirected off-diagonal pattern.
    pub components: usize,
    /// Whether the directed pattern is strongly connected.
    pub strongly_connected: bool,
}

impl OperatorReport {
    pub fn symmetric(&self) -> bool {
        self.max_asymmetry == 0.0
    }

    pub fn zero_row_sums(&self) -> bool {
        self.max_abs_row_sum == 0.0
    }

    pub fn nonnegative_off_diagonals(&self) -> bool {
        self.min_off_diagonal >= 0.0
    }

    pub fn irreducible(&self) -> bool {
        self.strongly_connected
    }

    pub fn all_pass(&self) -> bool {
        self.symmetric() && self.zero_row_sums() && self.nonnegative_off_diagonals() && self.irreducible()
    }

    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "p2.pass={}", self.symmetric());
        let _ = writeln!(out, "p2.max_asym={:e}", self.max_asymmetry);
        let _ = writeln!(out, "p3.pass={}", self.zero_row_sums());
        let _ = writeln!(out, "p3.max_row_sum={:e}", self.max_abs_row_sum);
        let _ = writeln!(out, "p4.pass={}", self.nonnegative_off_diagonals());
        let _ = writeln!(out, "p4.min_offdiag={:e}", self.min_off_diagonal);
        let _ = writeln!(out, "p5.pass={}", self.irreducible());
        let _ = writeln!(out, "p5.components={}", self.components);
        out
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

impl fmt::Display for OperatorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P2: {} max_asym={:.1e}",
            verdict(self.symmetric()),
            self.max_asymmetry
        )?;
        if let (false, Some((k, l))) = (self.symmetric(), self.asymmetric_pair) {
            write!(f, " at=({k},{l})")?;
        }
        writeln!(f)?;
        write!(
            f,
            "P3: {} max_row_sum={:.1e}",
            verdict(self.zero_row_sums()),
            self.max_abs_row_sum
        )?;
        if let (false, Some(k)) = (self.zero_row_sums(), self.worst_row) {
            write!(f, " row={k}")?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "P4: {} min_offdiag={:.6e}",
            verdict(self.nonnegative_off_diagonals()),
            self.min_off_diagonal
        )?;
        writeln!(f, "P5: {} components={}", verdict(self.irreducible()), self.components)
    }
}

fn reachable_all(adjacency: &[Vec<usize>]) -> bool {
    let n = adjacency.len();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(k) = queue.pop_front() {
        for &l in &adjacency[k] {
            if !seen[l] {
                seen[l] = true;
                count += 1;
                queue.push_back(l);
            }
        }
    }
    count == n
}

/// Measures symmetry, row sums, off-diagonal signs, and connectivity
/// (breadth-first search over nonzero off-diagonals).
#[allow(clippy::needless_range_loop)]
pub fn verify_operator_properties(op: &DiffusionOperator) -> OperatorReport {
    let n = op.dim();
    let mut max_asymmetry = 0.0;
    let mut asymmetric_pair = None;
    let mut max_abs_row_sum = 0.0;
    let mut worst_row = None;
    let mut min_off_diagonal = f64::INFINITY;
    let mut forward = vec![Vec::new(); n];
    let mut backward = vec![Vec::new(); n];
    for k in 0..n {
        let rs = op.row_sum(k).abs();
        if rs > max_abs_row_sum || (rs.is_nan() && worst_row.is_none()) {
            max_abs_row_sum = rs;
            worst_row = Some(k);
        }
        for (l, v) in op.row(k) {
            let asym = (v - op.entry(l, k)).abs();
            if asym > max_asymmetry {
                max_asymmetry = asym;
                asymmetric_pair = Some((k, l));
            }
            if l != k {
                if v < min_off_diagonal {
                    min_off_diagonal = v;
                }
                if v != 0.0 {
                    forward[k].push(l);
                    backward[l].push(k);
                }
            }
        }
    }
    // undirected components
    let mut undirected: Vec<Vec<usize>> = forward.clone();
    for (l, ks) in backward.iter().enumerate() {
        undirected[l].extend(ks);
    }
    let mut comp = vec![usize::MAX; n];
    let mut components = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = components;
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            for &l in &undirected[k] {
                if comp[l] == usize::MAX {
                    comp[l] = components;
                    queue.push_back(l);
                }
            }
        }
        components += 1;
    }
    OperatorReport {
        max_asymmetry,
        asymmetric_pair,
        max_abs_row_sum,
        worst_row,
        min_off_diagonal,
        components,
        strongly_connected: reachable_all(&forward) && reachable_all(&backward),
    }
}

/// First-order continuity of `u ↦ A(u)` probed along a random direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    /// `(eps, max |A(u + eps·v) - A(u)| / eps)` for decreasing `eps`.
    pub ratios: Vec<(f64, f64)>,
}

impl ContinuityReport {
    /// The difference quotients stay bounded (no more than 10x the quotient
    /// at the largest perturbation, plus rounding slack).
    pub fn pass(&self) -> bool {
        let Some(&(_, first)) = self.ratios.first() else {
            return true;
        };
        self.ratios
            .iter()
            .all(|&(_, r)| r.is_finite() && r <= 10.0 * first + 1e-8)
    }
}

impl fmt::Display for ContinuityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let worst = self.ratios.iter().map(|r| r.1).fold(0.0, f64::max);
        writeln!(f, "P1: {} max_diff_quotient={:.6e}", verdict(self.pass()), worst)
    }
}

/// Builds the operator with `assemble` at `u` and at `u + eps·v` for
/// `eps = 1e-2 … 1e-6`, `v` uniform in `[-1, 1]`.
pub fn probe_continuity(
    field: &ScalarField,
    seed: u64,
    assemble: impl Fn(&ScalarField) -> Result<DiffusionOperator>,
) -> Result<ContinuityReport> {
    let base = assemble(field)?;
    let dir = uniform_random_field(field.height(), field.width(), -1.0, 1.0, seed)?;
    let mut ratios = Vec::new();
    for p in 2..=6 {
        let eps = 10f64.powi(-p);
        let moved: Vec<f64> = field
            .values()
            .iter()
            .zip(dir.values())
            .map(|(u, v)| u + eps * v)
            .collect();
        let other = assemble(&field.with_values(moved)?)?;
        let mut diff: f64 = 0.0;
        for k in 0..base.dim() {
            for (l, v) in base.row(k) {
                diff = diff.max((v - other.entry(k, l)).abs());
            }
        }
        ratios.push((eps, diff / eps));
    }
    Ok(ContinuityReport { ratios })
}

/// Tolerances for [`verify_invariants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantTolerances {
    /// Relative to `max(1, |mean(u0)|)`.
    pub mean_drift: f64,
    pub extremum_slack: f64,
    pub variance_slack: f64,
    /// Final-to-initial variance ratio taken as "converged".
    pub steady_state_ratio: f64,
}

impl Default for InvariantTolerances {
    fn default() -> Self {
        InvariantTolerances {
            mean_drift: 1e-10,
            extremum_slack: 1e-12,
            variance_slack: 1e-12,
            steady_state_ratio: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub max_mean_drift: f64,
    pub mean_ok: bool,
    /// Largest excursion outside `[min(u0), max(u0)]` (0 when inside).
    pub max_extremum_excursion: f64,
    /// First logged iteration that left the initial range.
    pub first_extremum_violation: Option<usize>,
    pub extremum_ok: bool,
    /// Largest per-step variance increase (0 when nonincreasing).
    pub max_variance_increase: f64,
    pub variance_ok: bool,
    /// `variance(u_last) / variance(u0)`.
    pub final_variance_ratio: f64,
    pub steady_state: bool,
}

impl InvariantReport {
    /// Mean, extremum and variance checks; steady state is reported
    /// separately since it depends on how long the run was.
    pub fn all_pass(&self) -> bool {
        self.mean_ok && self.extremum_ok && self.variance_ok
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "I2: {} max_mean_drift={:.3e}",
            verdict(self.mean_ok),
            self.max_mean_drift
        )?;
        write!(
            f,
            "I3: {} max_excursion={:.3e}",
            verdict(self.extremum_ok),
            self.max_extremum_excursion
        )?;
        if let Some(n) = self.first_extremum_violation {
            write!(f, " first_violation_iter={n}")?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "VAR: {} max_increase={:.3e}",
            verdict(self.variance_ok),
            self.max_variance_increase
        )?;
        writeln!(
            f,
            "I4: {} final_variance_ratio={:.3e}",
            if self.steady_state { "REACHED" } else { "NOT_REACHED" },
            self.final_variance_ratio
        )
    }
}

/// Checks a run's log against the statistics of its initial field.
pub fn verify_invariants(log: &MetricsLog, initial: &FieldStats, tol: &InvariantTolerances) -> InvariantReport {
    let mean_scale = initial.mean.abs().max(1.0);
    let mut max_mean_drift: f64 = 0.0;
    let mut max_exc: f64 = 0.0;
    let mut first_violation = None;
    let mut max_inc: f64 = 0.0;
    let mut prev_var = initial.variance;
    for r in log.records() {
        max_mean_drift = max_mean_drift.max((r.mean - initial.mean).abs());
        let exc = (initial.min - r.min).max(r.max - initial.max).max(0.0);
        if exc > tol.extremum_slack && first_violation.is_none() {
            first_violation = Some(r.iteration);
        }
        max_exc = max_exc.max(exc);
        max_inc = max_inc.max(r.variance - prev_var);
        prev_var = r.variance;
    }
    let last_var = log.last().map_or(initial.variance, |r| r.variance);
    let final_variance_ratio = if initial.variance > 0.0 {
        last_var / initial.variance
    } else {
        0.0
    };
    InvariantReport {
        max_mean_drift,
        mean_ok: max_mean_drift <= tol.mean_drift * mean_scale,
        max_extremum_excursion: max_exc,
        first_extremum_violation: first_violation,
        extremum_ok: first_violation.is_none(),
        max_variance_increase: max_inc,
        variance_ok: max_inc <= tol.variance_slack,
        final_variance_ratio,
        steady_state: final_variance_ratio <= tol.steady_state_ratio,
    }
}

/// Tracks the first local minimum of an error sequence.
///
/// A value becomes the candidate when it is the lowest seen so far; it is
/// confirmed once `patience` consecutive later values all exceed it. A value
/// of exactly zero is confirmed immediately.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstMinimum {
    patience: usize,
    best: f64,
    best_iteration: usize,
    above: usize,
    confirmed: bool,
}

impl FirstMinimum {
    pub const DEFAULT_PATIENCE: usize = 10;

    pub fn new(patience: usize) -> Self {
        FirstMinimum {
            patience: patience.max(1),
            best: f64::INFINITY,
            best_iteration: 0,
            above: 0,
            confirmed: false,
        }
    }

    /// Feeds the error at `iteration`; returns true once the minimum is
    /// confirmed.
    pub fn observe(&mut self, iteration: usize, error: f64) -> bool {
        if self.confirmed {
            return true;
        }
        if error <= self.best {
            self.best = error;
            self.best_iteration = iteration;
            self.above = 0;
            self.confirmed = error == 0.0;
        } else {
            self.above += 1;
            self.confirmed = self.above >= self.patience;
        }
        self.confirmed
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_iteration, self.best)
    }

    pub fn confirmed(&self) -> bool {
        self.confirmed
    }
}

/// Outcome of one scheme in [`DenoiseExperiment::run`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenoiseResult {
    pub scheme: SchemeKind,
    pub config: SchemeConfig,
    /// Iteration of the first minimum of the error curve.
    pub stop_iteration: usize,
    pub min_error: f64,
    /// `d(clean, u_n)` for `n = 0, 1, …` (including the patience tail).
    pub curve: Vec<f64>,
    /// False when `max_iters` ran out before a minimum was confirmed.
    pub converged: bool,
}

impl DenoiseResult {
    /// The curve divided by its first value, `d(clean, noisy)`.
    pub fn relative_curve(&self) -> Vec<f64> {
        let d0 = self.curve[0];
        if d0 == 0.0 {
            return vec![0.0; self.curve.len()];
        }
        self.curve.iter().map(|d| d / d0).collect()
    }
}

/// Runs schemes from a noisy field and stops each at the first minimum of
/// its L1 distance to the clean field.
#[derive(Debug, Clone)]
pub struct DenoiseExperiment {
    pub model: DiffusivityModel,
    pub max_iters: usize,
    pub patience: usize,
}

impl DenoiseExperiment {
    pub fn new(model: DiffusivityModel, max_iters: usize) -> Self {
        DenoiseExperiment {
            model,
            max_iters,
            patience: FirstMinimum::DEFAULT_PATIENCE,
        }
    }

    pub fn run_one(&self, clean: &ScalarField, noisy: &ScalarField, config: &SchemeConfig) -> Result<DenoiseResult> {
        clean.same_dims(noisy)?;
        if self.max_iters == 0 {
            return Err(DiffusionError::Config("max_iters must be at least 1".into()));
        }
        let d0 = l1_distance(clean, noisy)?;
        let mut curve = vec![d0];
        let mut detector = FirstMinimum::new(self.patience);
        if !detector.observe(0, d0) {
            let mut err = None;
            Runner::new(self.model, config.clone()).run_observed(noisy, self.max_iters, |n, u| {
                match l1_distance(clean, u) {
                    Ok(d) => {
                        curve.push(d);
                        if detector.observe(n, d) {
                            ControlFlow::Break(())
                        } else {
                            ControlFlow::Continue(())
                        }
                    }
                    Err(e) => {
                        err = Some(e);
                        ControlFlow::Break(())
                    }
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
        }
        let (stop_iteration, min_error) = detector.best();
        Ok(DenoiseResult {
            scheme: config.kind,
            config: config.clone(),
            stop_iteration,
            min_error,
            curve,
            converged: detector.confirmed(),
        })
    }

    /// Runs every configuration, each on its own thread.
    pub fn run(
        &self,
        clean: &ScalarField,
        noisy: &ScalarField,
        configs: &[SchemeConfig],
    ) -> Result<Vec<DenoiseResult>> {
        clean.same_dims(noisy)?;
        std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .iter()
                .map(|cfg| s.spawn(move || self.run_one(clean, noisy, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("experiment worker panicked"))
                .collect()
        })
    }
}
