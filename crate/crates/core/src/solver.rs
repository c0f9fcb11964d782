//! Conjugate gradients for the symmetric positive-definite systems of the
//! semi-implicit scheme.

use crate::error::{DiffusionError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `M x = b` for SPD `M` given as a matrix-vector product, starting
/// from the contents of `x`. Converged when `‖b - Mx‖ ≤ tol·‖b‖`. A zero
/// right-hand side yields the zero vector.
pub fn conjugate_gradient(
    matvec: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }

    let mut mx = vec![0.0; n];
    matvec(x, &mut mx);
    let mut r: Vec<f64> = b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect();
    let mut rr = dot(&r, &r);
    let mut rel = rr.sqrt() / b_norm;
    if rel <= tol {
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: rel,
        });
    }

    let mut p = r.clone();
    let mut mp = vec![0.0; n];
    for it in 1..=max_iter {
        matvec(&p, &mut mp);
        let pmp = dot(&p, &mp);
        if pmp.is_nan() || pmp <= 0.0 {
            return Err(DiffusionError::Solver {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rr / pmp;
        for ((xi, ri), (pi, mpi)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&mp)) {
            *xi += alpha * pi;
            *ri -= alpha * mpi;
        }
        let rr_next = dot(&r, &r);
        rel = rr_next.sqrt() / b_norm;
        if !rel.is_finite() {
            break;
        }
        if rel <= tol {
            return Ok(CgOutcome {
                iterations: it,
                relative_residual: rel,
            });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    Err(DiffusionError::Solver {
        iterations: max_iter,
        residual: rel,
    })
}
