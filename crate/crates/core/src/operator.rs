//! Assembly and application of the sparse diffusion operator `A(u)`, and the
//! Gaussian smoothing used by the regularized scheme.
//!
//! `A(u)` couples each pixel with its (at most four) grid neighbours. The
//! coupling between x-adjacent pixels `k` and `l` is `(c_k + c_l) / (2·dx²)`,
//! analogously in y. The diagonal is stored as the negated sum of the row's
//! off-diagonals, so every row sums to exactly zero.

use crate::diffusivity::DiffusivityModel;
use crate::error::{DiffusionError, Result};
use crate::grid::{ScalarField, Spacing};

/// Central-difference squared gradient magnitude at `(i, j)`, with the
/// one-pixel mirror extension at the border.
pub fn gradient_magnitude_sq(field: &ScalarField, i: usize, j: usize) -> Result<f64> {
    field.dims().linear_index(i, j)?;
    let (i, j) = (i as isize, j as isize);
    let sp = field.spacing();
    let gx = (field.mirror_sample(i, j + 1)? - field.mirror_sample(i, j - 1)?) / (2.0 * sp.dx());
    let gy = (field.mirror_sample(i + 1, j)? - field.mirror_sample(i - 1, j)?) / (2.0 * sp.dy());
    Ok(gx * gx + gy * gy)
}

#[inline]
fn mirror_index(idx: isize, len: usize) -> usize {
    let n = len as isize;
    let r = if idx < 0 {
        1
    } else if idx >= n {
        n - 2
    } else {
        idx
    };
    r.clamp(0, n - 1) as usize
}

/// The diffusivity `c(|∇u|²)` at every pixel.
pub fn diffusivity_field(field: &ScalarField, model: &DiffusivityModel) -> Result<ScalarField> {
    let (h, w) = (field.height(), field.width());
    let sp = field.spacing();
    let (hx, hy) = (2.0 * sp.dx(), 2.0 * sp.dy());
    let u = field.values();
    let mut out = Vec::with_capacity(u.len());
    for i in 0..h {
        let up = mirror_index(i as isize - 1, h) * w;
        let down = mirror_index(i as isize + 1, h) * w;
        for j in 0..w {
            let left = mirror_index(j as isize - 1, w);
            let right = mirror_index(j as isize + 1, w);
            let gx = (u[i * w + right] - u[i * w + left]) / hx;
            let gy = (u[down + j] - u[up + j]) / hy;
            out.push(model.c(gx * gx + gy * gy));
        }
    }
    let c = field.with_values_unchecked(out);
    c.check_finite()?;
    Ok(c)
}

/// Sparse symmetric operator with at most five entries per row, stored in
/// compressed-row form with columns sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<Option<usize>>,
    spacing: Option<Spacing>,
}

impl DiffusionOperator {
    /// Assembles `A(u)` with `c` evaluated on `field` itself.
    pub fn assemble(field: &ScalarField, model: &DiffusivityModel) -> Result<Self> {
        let c = diffusivity_field(field, model)?;
        Ok(Self::from_diffusivity(&c))
    }

    /// Assembles the operator for a precomputed pixel diffusivity field.
    /// The field's spacing is used for the coupling weights.
    pub fn from_diffusivity(c: &ScalarField) -> Self {
        let sp = c.spacing();
        let (wx, wy) = (2.0 * sp.dx() * sp.dx(), 2.0 * sp.dy() * sp.dy());
        let cv = c.values();
        Self::build(c, |k, l, vertical| {
            let (a, b) = if k < l { (cv[k], cv[l]) } else { (cv[l], cv[k]) };
            (a + b) / if vertical { wy } else { wx }
        })
    }

    /// The original anisotropic discretization: couplings use the diffusivity
    /// of the one-sided difference between the two pixels,
    /// `c(((u_l - u_k)/dx)²) / (2·dx²)`, and analogously in y.
    pub fn assemble_half_point(field: &ScalarField, model: &DiffusivityModel) -> Result<Self> {
        let sp = field.spacing();
        let (dx, dy) = (sp.dx(), sp.dy());
        let u = field.values();
        let op = Self::build(field, |k, l, vertical| {
            let (a, b) = if k < l { (u[k], u[l]) } else { (u[l], u[k]) };
            let h = if vertical { dy } else { dx };
            let g = (b - a) / h;
            model.c(g * g) / (2.0 * h * h)
        });
        if let Some(pos) = op.vals.iter().position(|v| !v.is_finite()) {
            return Err(DiffusionError::NumericBlowup {
                pixel: op.row_of(pos),
                value: op.vals[pos],
            });
        }
        Ok(op)
    }

    /// The constant-diffusivity (`c ≡ 1`) operator, i.e. the five-point
    /// Laplacian with Neumann boundary.
    pub fn laplacian(field: &ScalarField) -> Self {
        let ones = field.with_values_unchecked(vec![1.0; field.len()]);
        Self::from_diffusivity(&ones)
    }

    fn build(grid: &ScalarField, mut weight: impl FnMut(usize, usize, bool) -> f64) -> Self {
        let (h, w) = (grid.height(), grid.width());
        let n = h * w;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(5 * n);
        let mut vals = Vec::with_capacity(5 * n);
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let start = vals.len();
                let mut push = |l: usize, vertical: bool, cols: &mut Vec<usize>, vals: &mut Vec<f64>| {
                    cols.push(l);
                    vals.push(weight(k, l, vertical));
                };
                if i > 0 {
                    push(k - w, true, &mut cols, &mut vals);
                }
                if j > 0 {
                    push(k - 1, false, &mut cols, &mut vals);
                }
                let before_diag = vals.len();
                if j + 1 < w {
                    push(k + 1, false, &mut cols, &mut vals);
                }
                if i + 1 < h {
                    push(k + w, true, &mut cols, &mut vals);
                }
                let off_sum: f64 = vals[start..].iter().sum();
                cols.insert(before_diag, k);
                vals.insert(before_diag, -off_sum);
                diag.push(Some(before_diag));
                row_ptr.push(vals.len());
            }
        }
        DiffusionOperator {
            dim: n,
            row_ptr,
            cols,
            vals,
            diag,
            spacing: Some(grid.spacing()),
        }
    }

    /// Builds an operator from explicit rows of `(column, value)` pairs.
    /// No structural property is enforced; this is meant for checking the
    /// property verifier against hand-made matrices.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let dim = rows.len();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(dim);
        for (k, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut d = None;
            for (pos, &(c, v)) in row.iter().enumerate() {
                if c >= dim || (pos > 0 && row[pos - 1].0 == c) {
                    return Err(DiffusionError::Config(format!(
                        "row {k}: column {c} is out of range or repeated"
                    )));
                }
                if c == k {
                    d = Some(vals.len());
                }
                cols.push(c);
                vals.push(v);
            }
            diag.push(d);
            row_ptr.push(vals.len());
        }
        Ok(DiffusionOperator {
            dim,
            row_ptr,
            cols,
            vals,
            diag,
            spacing: None,
        })
    }

    fn row_of(&self, pos: usize) -> usize {
        self.row_ptr.partition_point(|&p| p <= pos) - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spacing used during assembly, if assembled from a grid.
    pub fn spacing(&self) -> Option<Spacing> {
        self.spacing
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Stored `(column, value)` pairs of row `k`, in column order.
    pub fn row(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[k]..self.row_ptr[k + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn row_len(&self, k: usize) -> usize {
        self.row_ptr[k + 1] - self.row_ptr[k]
    }

    /// Entry `(k, l)`, zero when not stored.
    pub fn entry(&self, k: usize, l: usize) -> f64 {
        let range = self.row_ptr[k]..self.row_ptr[k + 1];
        match self.cols[range.clone()].binary_search(&l) {
            Ok(pos) => self.vals[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self, k: usize) -> f64 {
        self.diag[k].map_or(0.0, |p| self.vals[p])
    }

    /// Off-diagonal sum in column order plus the diagonal. Exactly zero for
    /// assembled operators.
    pub fn row_sum(&self, k: usize) -> f64 {
        let off: f64 = self.row(k).filter(|&(c, _)| c != k).map(|(_, v)| v).sum();
        off + self.diagonal(k)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(DiffusionError::Dimension {
                expected: format!("vector of length {}", self.dim),
                actual: format!("length {len}"),
            });
        }
        Ok(())
    }

    /// Sparse matrix-vector product, each row summed left to right in column
    /// order.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(u, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for (k, y) in out.iter_mut().enumerate() {
            *y = self.row(k).map(|(c, v)| v * u[c]).sum();
        }
    }

    /// `A·u` evaluated as `Σ_l a_kl (u_l - u_k)` over the off-diagonals.
    ///
    /// Equal to [`DiffusionOperator::apply`] for zero-row-sum operators, but
    /// exactly zero on constant vectors and with pairwise-cancelling terms.
    /// This is the form the time steppers use.
    pub fn apply_differences(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_differences_into(u, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_differences_into(&self, u: &[f64], out: &mut [f64]) {
        for (k, y) in out.iter_mut().enumerate() {
            let uk = u[k];
            *y = self.row(k).filter(|&(c, _)| c != k).map(|(c, v)| v * (u[c] - uk)).sum();
        }
    }

    /// Dense copy, row-major. Only sensible for small grids.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|k| {
                let mut row = vec![0.0; self.dim];
                for (c, v) in self.row(k) {
                    row[c] = v;
                }
                row
            })
            .collect()
    }
}

/// Normalized, symmetric 1D Gaussian weights truncated at `⌈3σ⌉`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(DiffusionError::Domain(format!(
                "kernel width must be finite and nonnegative (got {sigma})"
            )));
        }
        if sigma == 0.0 {
            return Ok(GaussianKernel {
                sigma,
                weights: vec![1.0],
            });
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|k| {
                let x = k as f64 - radius as f64;
                (-x * x / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(GaussianKernel {
            sigma,
            weights: raw.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn center_weight(&self) -> f64 {
        self.weights[self.radius()]
    }
}

/// Whole-sample symmetric reflection (`-1 -> 0`, `n -> n-1`), periodic with
/// period `2n` for kernels wider than the axis.
#[inline]
fn reflect(idx: isize, len: usize) -> usize {
    let n = len as isize;
    let m = idx.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn convolve_rows(values: &[f64], h: usize, w: usize, weights: &[f64]) -> Vec<f64> {
    let r = (weights.len() / 2) as isize;
    let mut out = vec![0.0; values.len()];
    for i in 0..h {
        let row = &values[i * w..(i + 1) * w];
        for j in 0..w {
            out[i * w + j] = weights
                .iter()
                .enumerate()
                .map(|(t, wt)| wt * row[reflect(j as isize + t as isize - r, w)])
                .sum();
        }
    }
    out
}

fn convolve_cols(values: &[f64], h: usize, w: usize, weights: &[f64]) -> Vec<f64> {
    let r = (weights.len() / 2) as isize;
    let mut out = vec![0.0; values.len()];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = weights
                .iter()
                .enumerate()
                .map(|(t, wt)| wt * values[reflect(i as isize + t as isize - r, h) * w + j])
                .sum();
        }
    }
    out
}

/// Separable convolution with the same kernel along both axes.
pub fn convolve_gaussian(field: &ScalarField, kernel: &GaussianKernel) -> ScalarField {
    convolve_separable(field, kernel, kernel)
}

/// Separable convolution: `along_x` across each row, then `along_y` down each
/// column. The border is extended by symmetric reflection, which keeps the
/// field mean unchanged.
pub fn convolve_separable(field: &ScalarField, along_x: &GaussianKernel, along_y: &GaussianKernel) -> ScalarField {
    let (h, w) = (field.height(), field.width());
    let mut values = field.values().to_vec();
    if along_x.radius() > 0 && w > 1 {
        values = convolve_rows(&values, h, w, along_x.weights());
    }
    if along_y.radius() > 0 && h > 1 {
        values = convolve_cols(&values, h, w, along_y.weights());
    }
    field.with_values_unchecked(values)
}
