//! Grid-indexed scalar fields.
//!
//! A field of height `M` and width `N` stores its pixels row-major, so pixel
//! `(i, j)` lives at `k = i * N + j`. The x-axis runs along a row (column index
//! `j`, spacing `dx`) and the y-axis across rows (row index `i`, spacing `dy`).
//! A 1D signal is a field of height 1; its y-neighbourhoods are empty, which is
//! how the 1D schemes fall out of the 2D formulas.

use crate::error::{DiffusionError, Result};

/// Grid spacing in x and y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    dx: f64,
    dy: f64,
}

impl Spacing {
    pub fn new(dx: f64, dy: f64) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0 && dy.is_finite() && dy > 0.0) {
            return Err(DiffusionError::Config(format!(
                "grid spacing must be positive and finite (dx={dx}, dy={dy})"
            )));
        }
        Ok(Spacing { dx, dy })
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing { dx: 1.0, dy: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// Height and width of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DiffusionError::Config(format!(
                "field dimensions must be positive (got {height}x{width})"
            )));
        }
        Ok(Dims { height, width })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.height || j >= self.width {
            return Err(self.index_error(i as isize, j as isize));
        }
        Ok(())
    }

    fn index_error(&self, row: isize, col: isize) -> DiffusionError {
        DiffusionError::Index {
            row,
            col,
            height: self.height,
            width: self.width,
        }
    }

    /// Row-major vector index of pixel `(i, j)`.
    pub fn linear_index(&self, i: usize, j: usize) -> Result<usize> {
        self.check(i, j)?;
        Ok(i * self.width + j)
    }

    /// Inverse of [`Dims::linear_index`].
    pub fn pixel(&self, k: usize) -> Result<(usize, usize)> {
        if k >= self.len() {
            return Err(DiffusionError::Index {
                row: (k / self.width) as isize,
                col: (k % self.width) as isize,
                height: self.height,
                width: self.width,
            });
        }
        Ok((k / self.width, k % self.width))
    }

    /// In-grid neighbours of `(i, j)` along `axis`, in increasing index order.
    ///
    /// Boundary pixels get fewer neighbours; that truncation is the discrete
    /// Neumann condition.
    pub fn neighbors(&self, i: usize, j: usize, axis: Axis) -> Result<Vec<(usize, usize)>> {
        self.check(i, j)?;
        let mut out = Vec::with_capacity(2);
        match axis {
            Axis::X => {
                if j > 0 {
                    out.push((i, j - 1));
                }
                if j + 1 < self.width {
                    out.push((i, j + 1));
                }
            }
            Axis::Y => {
                if i > 0 {
                    out.push((i - 1, j));
                }
                if i + 1 < self.height {
                    out.push((i + 1, j));
                }
            }
        }
        Ok(out)
    }

    /// Resolves a possibly one-pixel-out-of-range coordinate by reflection
    /// about the boundary pixel (`-1 -> 1`, `M -> M-2`), clamping when the
    /// axis has a single pixel.
    pub fn mirror(&self, i: isize, j: isize) -> Result<(usize, usize)> {
        let mi = mirror_axis(i, self.height).ok_or_else(|| self.index_error(i, j))?;
        let mj = mirror_axis(j, self.width).ok_or_else(|| self.index_error(i, j))?;
        Ok((mi, mj))
    }
}

fn mirror_axis(idx: isize, len: usize) -> Option<usize> {
    let n = len as isize;
    let r = if idx == -1 {
        1
    } else if idx == n {
        n - 2
    } else if (0..n).contains(&idx) {
        idx
    } else {
        return None;
    };
    Some(r.clamp(0, n - 1) as usize)
}

/// A 2D grid of real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    spacing: Spacing,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::with_spacing(height, width, values, Spacing::default())
    }

    pub fn with_spacing(height: usize, width: usize, values: Vec<f64>, spacing: Spacing) -> Result<Self> {
        let dims = Dims::new(height, width)?;
        if values.len() != dims.len() {
            return Err(DiffusionError::Dimension {
                expected: format!("{} values for {height}x{width}", dims.len()),
                actual: format!("{} values", values.len()),
            });
        }
        check_finite(&values)?;
        Ok(ScalarField { dims, spacing, values })
    }

    /// A `1 x N` field.
    pub fn from_signal(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(1, n, values)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    /// Replaces the pixel values, keeping dimensions and spacing.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::with_spacing(self.height(), self.width(), values, self.spacing)
    }

    pub(crate) fn with_values_unchecked(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.len());
        ScalarField {
            dims: self.dims,
            spacing: self.spacing,
            values,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: Spacing) {
        self.spacing = spacing;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.values[self.dims.linear_index(i, j)?])
    }

    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dims.width + j]
    }

    /// Value at `(i, j)` where either index may overreach the grid by one
    /// pixel; see [`Dims::mirror`].
    pub fn mirror_sample(&self, i: isize, j: isize) -> Result<f64> {
        let (mi, mj) = self.dims.mirror(i, j)?;
        Ok(self.at(mi, mj))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_dims(&self, other: &ScalarField) -> Result<()> {
        if self.dims != other.dims {
            return Err(DiffusionError::Dimension {
                expected: format!("{}x{}", self.height(), self.width()),
                actual: format!("{}x{}", other.height(), other.width()),
            });
        }
        Ok(())
    }

    /// Errors with the first non-finite pixel, if any.
    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.values)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pixel) => Err(DiffusionError::NumericBlowup {
            pixel,
            value: values[pixel],
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(h: usize, w: usize) -> Dims {
        Dims::new(h, w).unwrap()
    }

    #[test]
    fn linear_index_examples() {
        assert_eq!(dims(5, 7).linear_index(0, 0).unwrap(), 0);
        assert_eq!(dims(3, 4).linear_index(1, 0).unwrap(), 4);
        assert_eq!(dims(3, 4).linear_index(2, 3).unwrap(), 11);
        assert!(matches!(
            dims(3, 4).linear_index(3, 0),
            Err(DiffusionError::Index { .. })
        ));
        assert!(dims(3, 4).linear_index(0, 4).is_err());
        assert!(dims(3, 4).pixel(12).is_err());
    }

    #[test]
    fn neighbor_sets() {
        let d = dims(3, 3);
        assert_eq!(d.neighbors(1, 1, Axis::X).unwrap(), vec![(1, 0), (1, 2)]);
        assert_eq!(d.neighbors(1, 1, Axis::Y).unwrap(), vec![(0, 1), (2, 1)]);
        assert_eq!(d.neighbors(0, 0, Axis::X).unwrap(), vec![(0, 1)]);
        assert_eq!(d.neighbors(0, 0, Axis::Y).unwrap(), vec![(1, 0)]);
        let line = dims(1, 6);
        for j in 0..6 {
            assert!(line.neighbors(0, j, Axis::Y).unwrap().is_empty());
        }
        assert!(d.neighbors(3, 0, Axis::X).is_err());
    }

    #[test]
    fn mirror_examples() {
        let f = ScalarField::from_fn(3, 3, |i, j| (10 * i + j) as f64).unwrap();
        assert_eq!(f.mirror_sample(0, 1).unwrap(), 1.0);
        assert_eq!(f.mirror_sample(-1, 1).unwrap(), f.get(1, 1).unwrap());
        assert_eq!(f.mirror_sample(3, 2).unwrap(), f.get(1, 2).unwrap());
        assert_eq!(f.mirror_sample(2, -1).unwrap(), f.get(2, 1).unwrap());
        assert!(f.mirror_sample(-2, 0).is_err());
        assert!(f.mirror_sample(0, 4).is_err());

        let line = ScalarField::from_signal(vec![3.0, 1.0, 4.0, 1.0, 5.0]).unwrap();
        assert_eq!(line.mirror_sample(-1, 0).unwrap(), 3.0);
        assert_eq!(line.mirror_sample(1, 4).unwrap(), 5.0);

        let single = ScalarField::from_signal(vec![2.5]).unwrap();
        assert_eq!(single.mirror_sample(0, -1).unwrap(), 2.5);
        assert_eq!(single.mirror_sample(0, 1).unwrap(), 2.5);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(ScalarField::new(0, 3, vec![]).is_err());
        assert!(ScalarField::new(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            ScalarField::new(1, 2, vec![0.0, f64::NAN]),
            Err(DiffusionError::NumericBlowup { pixel: 1, .. })
        ));
        assert!(Spacing::new(0.0, 1.0).is_err());
        assert!(Spacing::new(1.0, -2.0).is_err());
    }

    #[test]
    fn neumann_consistent_mirror_gradient() {
        // constant along y, varying along x: the y-gradient at top and bottom
        // rows must vanish
        let f = ScalarField::from_fn(4, 5, |_, j| (j * j) as f64).unwrap();
        for j in 0..5 {
            for i in [0isize, 3] {
                let up = f.mirror_sample(i - 1, j as isize).unwrap();
                let down = f.mirror_sample(i + 1, j as isize).unwrap();
                assert_eq!(up - down, 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn linear_index_round_trips(h in 1usize..20, w in 1usize..20) {
            let d = dims(h, w);
            let mut seen = vec![false; h * w];
            for i in 0..h {
                for j in 0..w {
                    let k = d.linear_index(i, j).unwrap();
                    prop_assert!(!seen[k]);
                    seen[k] = true;
                    prop_assert_eq!(d.pixel(k).unwrap(), (i, j));
                }
            }
        }

        #[test]
        fn neighbors_are_in_grid_and_distinct(h in 1usize..8, w in 1usize..8) {
            let d = dims(h, w);
            for i in 0..h {
                for j in 0..w {
                    for axis in [Axis::X, Axis::Y] {
                        for (p, q) in d.neighbors(i, j, axis).unwrap() {
                            prop_assert!(p < h && q < w);
                            prop_assert!((p, q) != (i, j));
                        }
                    }
                }
            }
        }

        #[test]
        fn mirror_of_constant_is_constant(h in 1usize..6, w in 1usize..6, c in -5.0f64..5.0) {
            let f = ScalarField::constant(h, w, c).unwrap();
            for i in -1..=(h as isize) {
                for j in -1..=(w as isize) {
                    prop_assert_eq!(f.mirror_sample(i, j).unwrap(), c);
                }
            }
        }
    }
}
