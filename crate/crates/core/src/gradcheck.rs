//! Finite-difference reference derivatives.
//!
//! Everything here only evaluates functions; it never calls the reverse-mode
//! engine, so it can serve as an independent oracle for it.

use crate::error::Result;

/// Relative error with an absolute floor so that two near-zero values compare equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Norm-wise relative error between two vectors.
pub fn vector_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference<F>(mut f: F, x: &[f64], i: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let plus = f(&probe)?;
    probe[i] = x[i] - h;
    let minus = f(&probe)?;
    Ok((plus - minus) / (2.0 * h))
}

/// `(g(x + h v) - g(x - h v)) / 2h` for a vector-valued `g`.
pub fn directional_difference<G>(mut g: G, x: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let shifted = |s: f64| x.iter().zip(v).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    let plus = g(&shifted(h))?;
    let minus = g(&shifted(-h))?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

/// Full central-difference gradient.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    (0..x.len()).map(|i| central_difference(&mut f, x, i, h)).collect()
}
