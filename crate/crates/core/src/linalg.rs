//! Jacobi-preconditioned conjugate gradients for the symmetric grid systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Max-norm of the true residual `b - A x` at exit.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Absolute max-norm residual threshold.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Treat constants as the null space: the right-hand side and iterates
    /// are kept mean-free (pure Neumann problems).
    pub mean_free: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn remove_mean(a: &mut [f64]) {
    if a.is_empty() {
        return;
    }
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    for v in a.iter_mut() {
        *v -= mean;
    }
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`, starting from `x`.
///
/// `apply(x, out)` writes `A x` into `out`; `diag` is the diagonal of `A`.
pub fn pcg<F>(
    apply: F,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgReport>
where
    F: Fn(&[f64], &mut [f64]),
{
    let len = b.len();
    let mut rhs = b.to_vec();
    if opts.mean_free {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut ax = vec![0.0; len];
    let mut r = vec![0.0; len];
    let mut z = vec![0.0; len];
    let mut p = vec![0.0; len];
    let mut ap = vec![0.0; len];
    let mut iterations = 0usize;

    // Outer loop restarts when the recursive residual drifts from the true one.
    loop {
        apply(x, &mut ax);
        for i in 0..len {
            r[i] = rhs[i] - ax[i];
        }
        if opts.mean_free {
            remove_mean(&mut r);
        }
        let true_res = max_abs(&r);
        if true_res <= opts.tolerance {
            return Ok(CgReport {
                iterations,
                residual: true_res,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::Iteration {
                solver: "conjugate gradient",
                residual: true_res,
                iterations,
            });
        }
        for i in 0..len {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        let started = iterations;
        while iterations < opts.max_iterations {
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let step = rz / pap;
            for i in 0..len {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            if opts.mean_free {
                remove_mean(&mut r);
            }
            iterations += 1;
            if max_abs(&r) <= 0.5 * opts.tolerance {
                break;
            }
            for i in 0..len {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        if opts.mean_free {
            remove_mean(x);
        }
        if iterations == started {
            return Err(Error::Iteration {
                solver: "conjugate gradient",
                residual: true_res,
                iterations,
            });
        }
    }
}
