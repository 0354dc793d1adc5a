//! Damped Gauss-Newton minimisation for curve fits.
//!
//! The model maps parameters to predicted values `mu`. Least squares
//! minimises `sum w (y - mu)^2`; the Poisson objective minimises the deviance
//! `2 sum (mu - y + y ln(y / mu))` by Fisher scoring. Jacobians are central
//! differences.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Objective<'a> {
    LeastSquares(&'a [f64]),
    Poisson,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmResult {
    pub params: Vec<f64>,
    pub cost: f64,
    /// Inverse of the Gauss-Newton (Fisher) matrix at the optimum; `None`
    /// when singular.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

fn cost(obj: Objective, y: &[f64], mu: &[f64]) -> f64 {
    match obj {
        Objective::LeastSquares(w) => y.iter().zip(mu).zip(w).map(|((y, m), w)| w * (y - m).powi(2)).sum(),
        Objective::Poisson => y
            .iter()
            .zip(mu)
            .map(|(&y, &m)| {
                if m <= 0.0 {
                    f64::INFINITY
                } else if y > 0.0 {
                    2.0 * (m - y + y * (y / m).ln())
                } else {
                    2.0 * m
                }
            })
            .sum(),
    }
}

fn jacobian<F>(model: &F, p: &[f64], n: usize) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut j = DMatrix::zeros(n, p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(1e-3);
        q[k] = p[k] + h;
        let up = model(&q)?;
        q[k] = p[k] - h;
        let dn = model(&q)?;
        q[k] = p[k];
        for i in 0..n {
            j[(i, k)] = (up[i] - dn[i]) / (2.0 * h);
        }
    }
    Some(j)
}

fn normal_equations(obj: Objective, y: &[f64], mu: &[f64], j: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = y.len();
    let w: Vec<f64> = match obj {
        Objective::LeastSquares(w) => w.to_vec(),
        Objective::Poisson => mu.iter().map(|m| 1.0 / m.max(1e-300)).collect(),
    };
    let mut jw = j.clone();
    for i in 0..n {
        jw.row_mut(i).scale_mut(w[i]);
    }
    let h = j.transpose() * &jw;
    let r = DVector::from_iterator(n, y.iter().zip(mu).map(|(y, m)| y - m));
    let g = jw.transpose() * r;
    (h, g)
}

/// Inverse of the curvature matrix after diagonal scaling. Directions the
/// data do not constrain (for example a parameter driven to a boundary) are
/// dropped by the pseudo-inverse instead of poisoning the other variances.
fn covariance_from(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = h.nrows();
    let d: Vec<f64> = (0..k)
        .map(|i| {
            let v = h[(i, i)];
            if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }
        })
        .collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| h[(i, j)] * d[i] * d[j]);
    let inv = scaled.pseudo_inverse(1e-12).ok()?;
    let cov = DMatrix::from_fn(k, k, |i, j| inv[(i, j)] * d[i] * d[j]);
    cov.iter().all(|v| v.is_finite()).then_some(cov)
}

/// Minimise the objective from `p0`. Returns `None` if the model cannot be
/// evaluated at the starting point.
pub(crate) fn minimize<F>(model: F, y: &[f64], obj: Objective, p0: &[f64], opts: LmOptions) -> Option<LmResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = y.len();
    let mut p = p0.to_vec();
    let mut mu = model(&p)?;
    let mut c = cost(obj, y, &mu);
    if !c.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let Some(j) = jacobian(&model, &p, n) else { break };
        let (h, g) = normal_equations(obj, y, &mu, &j);
        let mut improved = false;
        let mut tiny_step = false;
        for _ in 0..40 {
            let mut a = h.clone();
            for k in 0..p.len() {
                a[(k, k)] += lambda * h[(k, k)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let small = step.iter().zip(&p).all(|(s, q)| s.abs() <= 1e-12 * q.abs().max(1e-12));
            if let Some(m) = model(&trial) {
                let ct = cost(obj, y, &m);
                if ct.is_finite() && ct <= c {
                    let rel = (c - ct) / c.max(1e-300);
                    p = trial;
                    mu = m;
                    c = ct;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = true;
                    tiny_step = small || rel < opts.rel_tol;
                    break;
                }
            }
            if small {
                tiny_step = true;
                break;
            }
            lambda *= 4.0;
        }
        // no downhill step at any damping: a local minimum to working precision
        if !improved || tiny_step || c == 0.0 {
            converged = true;
            break;
        }
    }
    let covariance = jacobian(&model, &p, n).and_then(|j| {
        let (h, _) = normal_equations(obj, y, &mu, &j);
        covariance_from(&h)
    });
    Some(LmResult {
        params: p,
        cost: c,
        covariance,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_exactly() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 * (-x / 2.5).exp()).collect();
        let w = vec![1.0; x.len()];
        let model = |p: &[f64]| Some(x.iter().map(|x| p[0] * (-x / p[1]).exp()).collect());
        let r = minimize(model, &y, Objective::LeastSquares(&w), &[1.0, 1.0], LmOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.params[0] - 3.0).abs() < 1e-9 && (r.params[1] - 2.5).abs() < 1e-9, "{:?}", r.params);
    }

    #[test]
    fn poisson_mean_is_sample_mean() {
        let y = [3.0, 5.0, 4.0, 0.0, 8.0];
        let model = |p: &[f64]| Some(vec![p[0]; 5]);
        let r = minimize(model, &y, Objective::Poisson, &[1.0], LmOptions::default()).unwrap();
        assert!((r.params[0] - 4.0).abs() < 1e-8);
        // Fisher variance of a Poisson mean from n samples is mean / n
        let v = r.covariance.unwrap()[(0, 0)];
        assert!((v - 0.8).abs() < 1e-6);
    }
}
