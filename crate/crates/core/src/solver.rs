//! Jacobi-preconditioned conjugate gradients for symmetric positive
//! definite systems, used matrix-free by the registration solver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("conjugate gradients did not reach tolerance {tolerance:e} in {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("non-finite value encountered during the solve")]
    NonFinite,
}

#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solve A x = b with A given as a mat-vec closure. `precond_diag` holds the
/// diagonal of A for Jacobi preconditioning; `x0` is the starting iterate.
/// Tolerance is relative to ||b||; a zero right-hand side returns x = 0.
pub fn solve_spd<F>(
    apply: F,
    precond_diag: &[f64],
    b: &[f64],
    x0: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, CgReport), SolveError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(precond_diag.len(), n);
    assert_eq!(x0.len(), n);

    let norm_b = norm(b);
    if norm_b == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }

    let inv_diag: Vec<f64> = precond_diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    let mut rel = norm(&r) / norm_b;
    if rel <= tolerance {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                relative_residual: rel,
            },
        ));
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=max_iterations {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(SolveError::NonFinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / norm_b;
        if !rel.is_finite() {
            return Err(SolveError::NonFinite);
        }
        if rel <= tolerance {
            return Ok((
                x,
                CgReport {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Err(SolveError::NotConverged {
        iterations: max_iterations,
        residual: rel,
        tolerance,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_random_spd_system() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // A = B^T B + I, dense.
        let b_mat: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for row in &b_mat {
                    s += row[i] * row[j];
                }
                a[i][j] = s + if i == j { 1.0 } else { 0.0 };
            }
        }
        let x_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rhs: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * x_true[j]).sum())
            .collect();
        let diag: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = (0..n).map(|j| a[i][j] * x[j]).sum();
            }
        };
        let (x, report) = solve_spd(apply, &diag, &rhs, &vec![0.0; n], 1e-12, 10 * n).unwrap();
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-8, "component {i}");
        }
        assert!(report.relative_residual <= 1e-12);
    }

    #[test]
    fn exact_initial_guess_returns_immediately() {
        let apply = |x: &[f64], y: &mut [f64]| {
            y[0] = 2.0 * x[0];
            y[1] = 3.0 * x[1];
        };
        let (x, report) =
            solve_spd(apply, &[2.0, 3.0], &[4.0, 9.0], &[2.0, 3.0], 1e-10, 10).unwrap();
        assert_eq!(x, vec![2.0, 3.0]);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let apply = |x: &[f64], y: &mut [f64]| y.copy_from_slice(x);
        let (x, _) = solve_spd(apply, &[1.0, 1.0], &[0.0, 0.0], &[5.0, -3.0], 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
    }
}
