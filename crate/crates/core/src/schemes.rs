//! Time steppers for the diffusion filters and the run driver.
//!
//! Every step is a pure map from the current field to the next one. The
//! operator is re-assembled from the current field at each step.

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{MetricsLog, MetricsRecord};
use crate::diffusivity::DiffusivityModel;
use crate::error::{DiffusionError, Result};
use crate::grid::ScalarField;
use crate::operator::{convolve_gaussian, convolve_separable, diffusivity_field, DiffusionOperator, GaussianKernel};
use crate::solver::conjugate_gradient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Forward Euler on the isotropic operator.
    Explicit,
    /// Linear-implicit step with the operator frozen at the current field.
    SemiImplicit,
    /// The original anisotropic discretization with half-point diffusivities.
    PmOriginal,
    /// Explicit step with the diffusivity taken from a Gaussian-smoothed field.
    Regularized,
    /// Linear heat equation (`c ≡ 1`).
    Gaussian,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Explicit,
        SchemeKind::SemiImplicit,
        SchemeKind::PmOriginal,
        SchemeKind::Regularized,
        SchemeKind::Gaussian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Explicit => "explicit",
            SchemeKind::SemiImplicit => "semi-implicit",
            SchemeKind::PmOriginal => "pm-original",
            SchemeKind::Regularized => "regularized",
            SchemeKind::Gaussian => "gaussian",
        }
    }

    /// Whether the scheme is conditionally stable.
    pub fn is_explicit(&self) -> bool {
        !matches!(self, SchemeKind::SemiImplicit)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = DiffusionError;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            DiffusionError::Config(format!(
                "unknown scheme '{s}' (expected explicit, semi-implicit, pm-original, regularized or gaussian)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub tau: f64,
    /// Smoothing width in pixels; only the regularized scheme reads it.
    pub sigma: f64,
    pub solver_tol: f64,
    /// `None` means `10·M·N`.
    pub solver_max_iter: Option<usize>,
    pub enforce_stability_bound: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            kind: SchemeKind::Explicit,
            tau: 0.2,
            sigma: 1.0,
            solver_tol: 1e-10,
            solver_max_iter: None,
            enforce_stability_bound: true,
        }
    }
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, tau: f64) -> Self {
        SchemeConfig {
            kind,
            tau,
            ..Default::default()
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn allow_unstable(mut self) -> Self {
        self.enforce_stability_bound = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(DiffusionError::Config(format!(
                "time step must be positive and finite (got {})",
                self.tau
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(DiffusionError::Config(format!(
                "sigma must be nonnegative and finite (got {})",
                self.sigma
            )));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) {
            return Err(DiffusionError::Config(format!(
                "solver tolerance must lie in (0, 1) (got {})",
                self.solver_tol
            )));
        }
        if self.solver_max_iter == Some(0) {
            return Err(DiffusionError::Config(
                "solver iteration limit must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Validates the configuration and, for explicit-type schemes with
    /// enforcement on, the time step against the stability bound of `field`.
    pub fn check_for(&self, field: &ScalarField) -> Result<()> {
        self.validate()?;
        if self.kind.is_explicit() && self.enforce_stability_bound {
            let bound = stability_bound_for(field);
            if self.tau >= bound {
                return Err(DiffusionError::Config(format!(
                    "time step {} violates the stability bound tau < {bound} for the {} scheme \
                     (pass --allow-unstable to override)",
                    self.tau, self.kind
                )));
            }
        }
        Ok(())
    }
}

/// `1 / (2/dx² + 2/dy²)`: explicit steps are stable for `tau` strictly below it.
pub fn stability_bound(dx: f64, dy: f64) -> f64 {
    1.0 / (2.0 / (dx * dx) + 2.0 / (dy * dy))
}

/// The bound for a particular field: an axis with a single pixel has no
/// neighbours and contributes no term. Infinite for a `1 x 1` field.
pub fn stability_bound_for(field: &ScalarField) -> f64 {
    let sp = field.spacing();
    let mut denom = 0.0;
    if field.width() > 1 {
        denom += 2.0 / (sp.dx() * sp.dx());
    }
    if field.height() > 1 {
        denom += 2.0 / (sp.dy() * sp.dy());
    }
    1.0 / denom
}

fn forward_euler(u: &ScalarField, op: &DiffusionOperator, tau: f64) -> Result<ScalarField> {
    let mut au = vec![0.0; u.len()];
    op.apply_differences_into(u.values(), &mut au);
    let next: Vec<f64> = u.values().iter().zip(&au).map(|(v, d)| v + tau * d).collect();
    let next = u.with_values_unchecked(next);
    next.check_finite()?;
    Ok(next)
}

fn check_kind(config: &SchemeConfig, expected: SchemeKind, u: &ScalarField) -> Result<()> {
    let mut cfg = config.clone();
    cfg.kind = expected;
    cfg.check_for(u)
}

/// `u + tau·A(u)·u`.
pub fn explicit_step(u: &ScalarField, model: &DiffusivityModel, config: &SchemeConfig) -> Result<ScalarField> {
    check_kind(config, SchemeKind::Explicit, u)?;
    let op = DiffusionOperator::assemble(u, model)?;
    forward_euler(u, &op, config.tau)
}

/// Solves `(I - tau·A(u))·v = u` for the next field `v`.
pub fn semi_implicit_step(u: &ScalarField, model: &DiffusivityModel, config: &SchemeConfig) -> Result<ScalarField> {
    check_kind(config, SchemeKind::SemiImplicit, u)?;
    let op = DiffusionOperator::assemble(u, model)?;
    let tau = config.tau;
    let max_iter = config.solver_max_iter.unwrap_or(10 * u.len());
    let mut x = u.values().to_vec();
    conjugate_gradient(
        |v, out| {
            op.apply_differences_into(v, out);
            for (o, vi) in out.iter_mut().zip(v) {
                *o = vi - tau * *o;
            }
        },
        u.values(),
        &mut x,
        config.solver_tol,
        max_iter,
    )?;
    let next = u.with_values_unchecked(x);
    next.check_finite()?;
    Ok(next)
}

/// The original anisotropic explicit scheme; the coupling across each pixel
/// edge uses `c` of the one-sided difference, scaled by `1/(2·dx²)`.
pub fn pm_original_step(u: &ScalarField, model: &DiffusivityModel, config: &SchemeConfig) -> Result<ScalarField> {
    check_kind(config, SchemeKind::PmOriginal, u)?;
    let op = DiffusionOperator::assemble_half_point(u, model)?;
    forward_euler(u, &op, config.tau)
}

/// Explicit step whose diffusivity sees `G_sigma * u` while the operator acts
/// on `u` itself. With `sigma = 0` this is exactly [`explicit_step`].
pub fn regularized_step(u: &ScalarField, model: &DiffusivityModel, config: &SchemeConfig) -> Result<ScalarField> {
    check_kind(config, SchemeKind::Regularized, u)?;
    let kernel = GaussianKernel::new(config.sigma)?;
    let smoothed = convolve_gaussian(u, &kernel);
    let c = diffusivity_field(&smoothed, model)?;
    let op = DiffusionOperator::from_diffusivity(&c);
    forward_euler(u, &op, config.tau)
}

/// Explicit step of the linear heat equation.
pub fn gaussian_step(u: &ScalarField, config: &SchemeConfig) -> Result<ScalarField> {
    check_kind(config, SchemeKind::Gaussian, u)?;
    let op = DiffusionOperator::laplacian(u);
    forward_euler(u, &op, config.tau)
}

/// One step of the scheme selected by `config.kind`.
pub fn step(u: &ScalarField, model: &DiffusivityModel, config: &SchemeConfig) -> Result<ScalarField> {
    match config.kind {
        SchemeKind::Explicit => explicit_step(u, model, config),
        SchemeKind::SemiImplicit => semi_implicit_step(u, model, config),
        SchemeKind::PmOriginal => pm_original_step(u, model, config),
        SchemeKind::Regularized => regularized_step(u, model, config),
        SchemeKind::Gaussian => gaussian_step(u, config),
    }
}

/// The heat equation solution at time `t`: convolution with a sampled
/// Gaussian of standard deviation `sqrt(2t)` (in grid units per axis).
pub fn heat_closed_form(u0: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(DiffusionError::Domain(format!(
            "time must be finite and nonnegative (got {t})"
        )));
    }
    let width = (2.0 * t).sqrt();
    let sp = u0.spacing();
    let kx = GaussianKernel::new(width / sp.dx())?;
    let ky = GaussianKernel::new(width / sp.dy())?;
    Ok(convolve_separable(u0, &kx, &ky))
}

/// Result of [`Runner::run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub field: ScalarField,
    pub log: MetricsLog,
    /// Fields at the requested snapshot iterations, in iteration order.
    pub snapshots: Vec<(usize, ScalarField)>,
    /// Number of steps actually taken.
    pub iterations: usize,
    /// True when the observer asked to stop before `n_iters`.
    pub stopped_early: bool,
}

/// Repeatedly applies one scheme and records per-iteration statistics.
#[derive(Debug, Clone)]
pub struct Runner<'a> {
    model: DiffusivityModel,
    config: SchemeConfig,
    reference: Option<&'a ScalarField>,
    snapshots: Vec<usize>,
}

impl<'a> Runner<'a> {
    pub fn new(model: DiffusivityModel, config: SchemeConfig) -> Self {
        Runner {
            model,
            config,
            reference: None,
            snapshots: Vec::new(),
        }
    }

    /// Logs the L1 distance to `reference` at every iteration.
    pub fn with_reference(mut self, reference: &'a ScalarField) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_snapshots(mut self, mut iterations: Vec<usize>) -> Self {
        iterations.sort_unstable();
        iterations.dedup();
        self.snapshots = iterations;
        self
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn model(&self) -> &DiffusivityModel {
        &self.model
    }

    pub fn run(&self, u0: &ScalarField, n_iters: usize) -> Result<RunOutput> {
        self.run_observed(u0, n_iters, |_, _| ControlFlow::Continue(()))
    }

    /// Runs up to `n_iters` steps, calling `observer` after each one with
    /// the iteration number (starting at 1) and the new field.
    pub fn run_observed<F>(&self, u0: &ScalarField, n_iters: usize, mut observer: F) -> Result<RunOutput>
    where
        F: FnMut(usize, &ScalarField) -> ControlFlow<()>,
    {
        self.config.check_for(u0)?;
        if let Some(r) = self.reference {
            u0.same_dims(r)?;
        }
        let mut log = MetricsLog::new();
        let mut snapshots = Vec::new();
        let mut pending = self.snapshots.iter().copied().peekable();
        while pending.peek() == Some(&0) {
            snapshots.push((0, u0.clone()));
            pending.next();
        }
        let mut u = u0.clone();
        let mut stopped_early = false;
        let mut taken = 0;
        for n in 1..=n_iters {
            let at = |e| DiffusionError::AtIteration {
                iteration: n,
                source: Box::new(e),
            };
            u = step(&u, &self.model, &self.config).map_err(at)?;
            taken = n;
            let l1_ref = match self.reference {
                Some(r) => Some(crate::analysis::l1_distance(r, &u).map_err(at)?),
                None => None,
            };
            log.push(MetricsRecord::of(n, &u, l1_ref)).map_err(at)?;
            if pending.peek() == Some(&n) {
                snapshots.push((n, u.clone()));
                pending.next();
            }
            if observer(n, &u).is_break() {
                stopped_early = n < n_iters;
                break;
            }
        }
        Ok(RunOutput {
            field: u,
            log,
            snapshots,
            iterations: taken,
            stopped_early,
        })
    }
}

/// Applies the configured step `n_iters` times, invoking `observer` after
/// each step.
pub fn run<F>(
    u0: &ScalarField,
    model: &DiffusivityModel,
    config: &SchemeConfig,
    n_iters: usize,
    observer: F,
) -> Result<RunOutput>
where
    F: FnMut(usize, &ScalarField) -> ControlFlow<()>,
{
    Runner::new(*model, config.clone()).run_observed(u0, n_iters, observer)
}
