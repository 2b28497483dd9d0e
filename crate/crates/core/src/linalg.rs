//! Dense linear algebra on small row-major matrices.
//!
//! Systems in this crate have a handful of components, so everything here
//! works on flat `&[f64]` slices of length `n * n` and avoids allocation in
//! the hot paths where it can.

use crate::error::{Error, Result};

pub fn mat_vec(n: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(a, x)| a * x).sum();
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Induced max-norm (maximum absolute row sum).
pub fn norm_inf(n: usize, a: &[f64]) -> f64 {
    (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is destroyed; the solution overwrites `b`.
pub fn solve_in_place(n: usize, a: &mut [f64], b: &mut [f64]) -> Result<()> {
    match n {
        1 => {
            if a[0] == 0.0 {
                return Err(Error::Internal("singular 1x1 matrix".into()));
            }
            b[0] /= a[0];
            Ok(())
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            if det == 0.0 || !det.is_finite() {
                return Err(Error::Internal("singular 2x2 matrix".into()));
            }
            let x0 = (a[3] * b[0] - a[1] * b[1]) / det;
            let x1 = (a[0] * b[1] - a[2] * b[0]) / det;
            b[0] = x0;
            b[1] = x1;
            Ok(())
        }
        _ => {
            for col in 0..n {
                let pivot = (col..n)
                    .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                    .unwrap();
                if a[pivot * n + col] == 0.0 {
                    return Err(Error::Internal("singular matrix".into()));
                }
                if pivot != col {
                    for k in 0..n {
                        a.swap(col * n + k, pivot * n + k);
                    }
                    b.swap(col, pivot);
                }
                let d = a[col * n + col];
                for row in col + 1..n {
                    let m = a[row * n + col] / d;
                    if m != 0.0 {
                        for k in col..n {
                            a[row * n + k] -= m * a[col * n + k];
                        }
                        b[row] -= m * b[col];
                    }
                }
            }
            for row in (0..n).rev() {
                let mut s = b[row];
                for k in row + 1..n {
                    s -= a[row * n + k] * b[k];
                }
                b[row] = s / a[row * n + row];
            }
            Ok(())
        }
    }
}

pub fn invert(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    let mut work = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        work.copy_from_slice(a);
        col.iter_mut()
            .enumerate()
            .for_each(|(i, c)| *c = f64::from(i == j));
        solve_in_place(n, &mut work, &mut col)?;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}

/// Real eigenvalues (ascending) and unit right eigenvectors of a general
/// real matrix whose spectrum is real and simple.
///
/// Eigenvectors are returned contiguously: `vectors[i*n..(i+1)*n]` is `r_i`.
/// Orientation is left to the caller.
pub fn real_eigensystem(n: usize, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EigenFailure> {
    match n {
        0 => Err(EigenFailure::Empty),
        1 => Ok((vec![a[0]], vec![1.0])),
        2 => eigen_2x2(a),
        _ => eigen_general(n, a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenFailure {
    Empty,
    /// Complex pair detected; carries the imaginary part magnitude.
    Complex(f64),
    NoConvergence,
}

fn eigen_2x2(a: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EigenFailure> {
    let half_tr = 0.5 * (a[0] + a[3]);
    let half_diff = 0.5 * (a[0] - a[3]);
    let disc = half_diff * half_diff + a[1] * a[2];
    if disc < 0.0 {
        return Err(EigenFailure::Complex(disc.abs().sqrt()));
    }
    let lambdas = if a[1] * a[2] == 0.0 {
        // triangular: the diagonal is the spectrum, exactly
        [a[0].min(a[3]), a[0].max(a[3])]
    } else {
        let root = disc.sqrt();
        [half_tr - root, half_tr + root]
    };
    let mut vectors = Vec::with_capacity(4);
    for &lambda in &lambdas {
        // (A - lambda I) has rank one; take the null vector of its larger row.
        let from_row0 = [-a[1], a[0] - lambda];
        let from_row1 = [lambda - a[3], a[2]];
        let v = if norm2(&from_row0) >= norm2(&from_row1) {
            from_row0
        } else {
            from_row1
        };
        let norm = norm2(&v);
        if norm == 0.0 {
            // A is a multiple of the identity: any basis works.
            vectors.extend_from_slice(if vectors.is_empty() {
                &[1.0, 0.0]
            } else {
                &[0.0, 1.0]
            });
        } else {
            vectors.extend_from_slice(&[v[0] / norm, v[1] / norm]);
        }
    }
    Ok((lambdas.to_vec(), vectors))
}

/// Hessenberg reduction followed by Wilkinson-shifted QR sweeps with
/// deflation; eigenvectors by inverse iteration on the original matrix.
fn eigen_general(n: usize, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EigenFailure> {
    let mut h = a.to_vec();
    hessenberg(n, &mut h);

    let scale = norm_inf(n, a).max(f64::MIN_POSITIVE);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut hi = n; // active block is h[0..hi, 0..hi]
    let mut iterations = 0;
    while hi > 0 {
        if hi == 1 {
            eigenvalues.push(h[0]);
            break;
        }
        // deflate when the last subdiagonal entry is negligible
        let sub = h[(hi - 1) * n + hi - 2].abs();
        let diag = h[(hi - 1) * n + hi - 1].abs() + h[(hi - 2) * n + hi - 2].abs();
        if sub <= f64::EPSILON * diag.max(scale * 1e-3) {
            eigenvalues.push(h[(hi - 1) * n + hi - 1]);
            hi -= 1;
            iterations = 0;
            continue;
        }
        iterations += 1;
        if iterations > 200 {
            // a trailing 2x2 block that refuses to split is usually a complex pair
            let block = [
                h[(hi - 2) * n + hi - 2],
                h[(hi - 2) * n + hi - 1],
                h[(hi - 1) * n + hi - 2],
                h[(hi - 1) * n + hi - 1],
            ];
            return match eigen_2x2(&block) {
                Err(e) => Err(e),
                Ok(_) => Err(EigenFailure::NoConvergence),
            };
        }
        let shift = wilkinson_shift(
            h[(hi - 2) * n + hi - 2],
            h[(hi - 2) * n + hi - 1],
            h[(hi - 1) * n + hi - 2],
            h[(hi - 1) * n + hi - 1],
        )?;
        qr_sweep(n, hi, &mut h, shift);
    }

    eigenvalues.sort_by(f64::total_cmp);
    let mut vectors = Vec::with_capacity(n * n);
    for (k, &lambda) in eigenvalues.iter().enumerate() {
        let gap = eigenvalues
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &mu)| (mu - lambda).abs())
            .fold(f64::INFINITY, f64::min);
        vectors.extend(inverse_iteration(n, a, lambda, gap, scale)?);
    }
    Ok((eigenvalues, vectors))
}

fn wilkinson_shift(a: f64, b: f64, c: f64, d: f64) -> Result<f64, EigenFailure> {
    let half_diff = 0.5 * (a - d);
    let disc = half_diff * half_diff + b * c;
    if disc < 0.0 {
        // complex pair: shift by the real part, the sweep may still split it
        return Ok(0.5 * (a + d));
    }
    let root = disc.sqrt();
    let mid = 0.5 * (a + d);
    let (l1, l2) = (mid - root, mid + root);
    Ok(if (l1 - d).abs() < (l2 - d).abs() {
        l1
    } else {
        l2
    })
}

fn hessenberg(n: usize, h: &mut [f64]) {
    for k in 0..n.saturating_sub(2) {
        let alpha_sq: f64 = (k + 1..n).map(|i| h[i * n + k].powi(2)).sum();
        if alpha_sq == 0.0 {
            continue;
        }
        let x0 = h[(k + 1) * n + k];
        let alpha = -x0.signum() * alpha_sq.sqrt();
        let mut v: Vec<f64> = (k + 1..n).map(|i| h[i * n + k]).collect();
        v[0] -= alpha;
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        // H <- P H P with P = I - 2 v v^T / |v|^2 acting on rows/cols k+1..n
        for j in 0..n {
            let s: f64 = (0..v.len())
                .map(|t| v[t] * h[(k + 1 + t) * n + j])
                .sum::<f64>()
                * 2.0
                / vnorm_sq;
            for t in 0..v.len() {
                h[(k + 1 + t) * n + j] -= s * v[t];
            }
        }
        for i in 0..n {
            let s: f64 = (0..v.len())
                .map(|t| v[t] * h[i * n + k + 1 + t])
                .sum::<f64>()
                * 2.0
                / vnorm_sq;
            for t in 0..v.len() {
                h[i * n + k + 1 + t] -= s * v[t];
            }
        }
    }
}

/// One explicit shifted QR step on the leading `m x m` block via Givens rotations.
fn qr_sweep(n: usize, m: usize, h: &mut [f64], shift: f64) {
    for i in 0..m {
        h[i * n + i] -= shift;
    }
    let mut rotations = Vec::with_capacity(m - 1);
    for k in 0..m - 1 {
        let x = h[k * n + k];
        let y = h[(k + 1) * n + k];
        let r = x.hypot(y);
        let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (x / r, y / r) };
        for j in 0..m {
            let a = h[k * n + j];
            let b = h[(k + 1) * n + j];
            h[k * n + j] = c * a + s * b;
            h[(k + 1) * n + j] = -s * a + c * b;
        }
        rotations.push((c, s));
    }
    for (k, &(c, s)) in rotations.iter().enumerate() {
        for i in 0..m {
            let a = h[i * n + k];
            let b = h[i * n + k + 1];
            h[i * n + k] = c * a + s * b;
            h[i * n + k + 1] = -s * a + c * b;
        }
    }
    for i in 0..m {
        h[i * n + i] += shift;
    }
}

fn inverse_iteration(
    n: usize,
    a: &[f64],
    lambda: f64,
    gap: f64,
    scale: f64,
) -> Result<Vec<f64>, EigenFailure> {
    let offset = (gap * 1e-6).max(scale * 1e-13);
    let sigma = lambda + offset;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut work = vec![0.0; n * n];
    for _ in 0..4 {
        work.copy_from_slice(a);
        for i in 0..n {
            work[i * n + i] -= sigma;
        }
        if solve_in_place(n, &mut work, &mut x).is_err() {
            return Err(EigenFailure::NoConvergence);
        }
        let norm = norm2(&x);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EigenFailure::NoConvergence);
        }
        x.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(x)
}
