//! Dense linear solves for the small systems produced by tabular MDPs.

use crate::error::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Solve `A x = b` for square row-major `A` by LU with partial pivoting,
/// followed by one iterative-refinement pass to tighten the residual.
pub(crate) fn solve(a: &[f64], b: &[f64], n: usize, what: &'static str) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    factor(&mut lu, &mut perm, n, what)?;

    let mut x = back_substitute(&lu, &perm, b, n);
    // One refinement step: r = b - A x, x += A \ r.
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += a[i * n + j] * x[j];
        }
        r[i] = b[i] - acc;
    }
    let dx = back_substitute(&lu, &perm, &r, n);
    for i in 0..n {
        x[i] += dx[i];
    }
    Ok(x)
}

fn factor(lu: &mut [f64], perm: &mut [usize], n: usize, what: &'static str) -> Result<()> {
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = lu[col * n + col].abs();
        for row in col + 1..n {
            let mag = lu[row * n + col].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = row;
            }
        }
        if pivot_mag < 1e-250 {
            return Err(Error::Singular(what));
        }
        if pivot_row != col {
            perm.swap(col, pivot_row);
            for j in 0..n {
                lu.swap(col * n + j, pivot_row * n + j);
            }
        }
        let pivot = lu[col * n + col];
        for row in col + 1..n {
            let factor = lu[row * n + col] / pivot;
            lu[row * n + col] = factor;
            for j in col + 1..n {
                lu[row * n + j] -= factor * lu[col * n + j];
            }
        }
    }
    Ok(())
}

fn back_substitute(lu: &[f64], perm: &[usize], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[perm[i]];
        for j in 0..i {
            acc -= lu[i * n + j] * y[j];
        }
        y[i] = acc;
    }
    for i in (0..n).rev() {
        let mut acc = y[i];
        for j in i + 1..n {
            acc -= lu[i * n + j] * y[j];
        }
        y[i] = acc / lu[i * n + i];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // A = [[2, 1], [1, 3]], b = [5, 10] -> x = [1, 3].
        let a = [2.0, 1.0, 1.0, 3.0];
        let b = [5.0, 10.0];
        let x = solve(&a, &b, 2, "test").unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn detects_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let b = [1.0, 2.0];
        assert!(matches!(solve(&a, &b, 2, "test"), Err(Error::Singular(_))));
    }

    #[test]
    fn refinement_keeps_residual_tiny() {
        // Random-ish well-conditioned 50x50 system; check residual directly.
        let n = 50;
        let mut rng = crate::rng::Rng::seed(42);
        let mut a = vec![0.0; n * n];
        for (i, v) in a.iter_mut().enumerate() {
            *v = rng.range(-1.0, 1.0);
            if i % (n + 1) == 0 {
                *v += n as f64; // diagonally dominant
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = solve(&a, &b, n, "test").unwrap();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[i * n + j] * x[j];
            }
            assert!((acc - b[i]).abs() < 1e-12);
        }
    }
}
