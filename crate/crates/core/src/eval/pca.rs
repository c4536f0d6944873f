use std::fmt::Write as _;

use crate::nn::Tensor;

use super::{EvalError, Result};

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Two orthonormal vectors of length F.
    pub components: [Vec<f64>; 2],
    /// Covariance eigenvalues (sample covariance, `N − 1` denominator).
    pub explained_variance: [f64; 2],
    /// `[N]` rows of `(pc1, pc2)`.
    pub projections: Vec<[f64; 2]>,
    /// `[F]` rows of `component_k · sqrt(variance_k)`.
    pub loadings: Vec<[f64; 2]>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let f = v.len();
    (0..f).map(|i| dot(&m[i * f..(i + 1) * f], v)).collect()
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let d = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
    }
}

/// Leading eigenpair of the symmetric PSD matrix `m`, restricted to the
/// complement of `found`.
fn power_iteration(m: &[f64], f: usize, found: &[Vec<f64>], component: usize) -> Result<(Vec<f64>, f64)> {
    // start from the standard basis vector with the largest remaining diagonal
    let mut v = vec![0.0; f];
    let mut start = (0, f64::NEG_INFINITY);
    for j in 0..f {
        let mut e = vec![0.0; f];
        e[j] = 1.0;
        orthogonalize(&mut e, found);
        let n = norm(&e);
        if n > 1e-6 {
            let score = dot(&e, &matvec(m, &e)) / (n * n);
            if score > start.1 + 1e-12 {
                start = (j, score);
                v = e.iter().map(|x| x / n).collect();
            }
        }
    }
    if start.1 == f64::NEG_INFINITY {
        return Err(EvalError::Invalid("no direction left for deflation".into()));
    }
    let scale = (0..f).map(|i| m[i * f + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut residual = f64::INFINITY;
    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w = matvec(m, &v);
        orthogonalize(&mut w, found);
        let lambda = dot(&v, &w);
        residual = norm(&w.iter().zip(&v).map(|(a, b)| a - lambda * b).collect::<Vec<_>>()) / scale;
        let n = norm(&w);
        if n <= 1e-300 || n / scale < 1e-15 {
            // no variance left along any remaining direction
            return Ok((v, 0.0));
        }
        let next: Vec<f64> = w.iter().map(|x| x / n).collect();
        let step = norm(&next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        v = next;
        if step < PCA_TOLERANCE || residual < PCA_TOLERANCE {
            let lambda = dot(&v, &matvec(m, &v));
            return Ok((v, lambda.max(0.0)));
        }
    }
    Err(EvalError::NoConvergence { component, residual })
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Two leading principal components of the rows of `features` (`[N × F]`).
pub fn pca2(features: &Tensor) -> Result<PcaResult> {
    if features.shape().len() != 2 {
        return Err(EvalError::Invalid(format!("pca expects a matrix, got shape {:?}", features.shape())));
    }
    let (n, f) = (features.rows(), features.row_len());
    if n < 3 {
        return Err(EvalError::TooFewSamples(n));
    }
    if f < 2 {
        return Err(EvalError::Invalid(format!("pca needs at least 2 features, got {f}")));
    }
    let mut mean = vec![0.0; f];
    for r in 0..n {
        for (m, &x) in mean.iter_mut().zip(features.row(r)) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|r| features.row(r).iter().zip(&mean).map(|(&x, m)| x as f64 - m).collect())
        .collect();
    let mut cov = vec![0.0; f * f];
    for row in &centred {
        for i in 0..f {
            for j in 0..f {
                cov[i * f + j] += row[i] * row[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);

    let (mut c1, l1) = power_iteration(&cov, f, &[], 1)?;
    fix_sign(&mut c1);
    // deflate
    let mut deflated = cov.clone();
    for i in 0..f {
        for j in 0..f {
            deflated[i * f + j] -= l1 * c1[i] * c1[j];
        }
    }
    let (mut c2, l2) = power_iteration(&deflated, f, std::slice::from_ref(&c1), 2)?;
    fix_sign(&mut c2);

    let projections = centred.iter().map(|row| [dot(row, &c1), dot(row, &c2)]).collect();
    let loadings = (0..f).map(|j| [c1[j] * l1.sqrt(), c2[j] * l2.sqrt()]).collect();
    Ok(PcaResult {
        mean,
        components: [c1, c2],
        explained_variance: [l1, l2],
        projections,
        loadings,
    })
}

/// `id,pc1,pc2`; floats in shortest round-trip form.
pub fn projections_csv(ids: &[String], pca: &PcaResult) -> String {
    let mut s = String::from("id,pc1,pc2\n");
    for (id, p) in ids.iter().zip(&pca.projections) {
        let _ = writeln!(s, "{id},{},{}", p[0], p[1]);
    }
    s
}

/// `feature,loading1,loading2`.
pub fn loadings_csv(feature_names: &[String], pca: &PcaResult) -> String {
    let mut s = String::from("feature,loading1,loading2\n");
    for (name, l) in feature_names.iter().zip(&pca.loadings) {
        let _ = writeln!(s, "{name},{},{}", l[0], l[1]);
    }
    s
}
