use crate::{EvalError, Result};
use token_stats::LatentGrid;

/// Row-major collection of feature vectors.
#[derive(Clone, Debug)]
pub struct FeatureRows {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureRows {
    pub fn new(dim: usize) -> Self {
        FeatureRows {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(EvalError::contract(format!(
                "{} values is not a whole number of dim-{dim} rows",
                data.len()
            )));
        }
        Ok(FeatureRows { dim, data })
    }

    /// Pools every token of every grid as one row.
    pub fn from_grids(grids: &[LatentGrid]) -> Result<Self> {
        let Some(first) = grids.first() else {
            return Err(EvalError::contract("no grids".to_string()));
        };
        let dim = first.dim();
        let mut rows = FeatureRows::new(dim);
        for g in grids {
            if g.dim() != dim {
                return Err(EvalError::contract("mixed grid dims".to_string()));
            }
            rows.data.extend_from_slice(g.data());
        }
        Ok(rows)
    }

    pub fn push_row(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Gaussian moment fit of a row set: mean vector, unbiased covariance,
/// sample count. All accumulation in f64.
#[derive(Clone, Debug)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    /// Row-major [dim, dim], symmetric.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianMoments {
    pub fn fit(rows: &FeatureRows) -> Result<Self> {
        let n = rows.n_rows();
        let d = rows.dim();
        if n < 2 {
            return Err(EvalError::contract(format!(
                "moment fit needs at least 2 rows, got {n}"
            )));
        }
        let mut mean = vec![0.0f64; d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(rows.row(i)) {
                *m += v as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = vec![0.0f64; d * d];
        let mut centered = vec![0.0f64; d];
        for i in 0..n {
            for (c, (&v, m)) in centered.iter_mut().zip(rows.row(i).iter().zip(&mean)) {
                *c = v as f64 - m;
            }
            for a in 0..d {
                let ca = centered[a];
                for b in a..d {
                    cov[a * d + b] += ca * centered[b];
                }
            }
        }
        let denom = (n - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov[a * d + b] / denom;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        Ok(GaussianMoments {
            mean,
            cov,
            count: n,
        })
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (f64).
/// Returns (eigenvalues, eigenvectors as columns in row-major [d, d]).
fn jacobi_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(a[p * d + q].abs());
            }
        }
        if off < tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < tol * 1e-2 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..d).map(|i| a[i * d + i]).collect();
    (eigenvalues, v)
}

fn matmul_f64(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// are clamped to zero.
fn sqrt_psd(matrix: &[f64], d: usize) -> Vec<f64> {
    let (vals, vecs) = jacobi_eigen(matrix, d);
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    // V · diag(sqrt λ) · Vᵀ
    let mut out = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += vecs[i * d + k] * roots[k] * vecs[j * d + k];
            }
            out[i * d + j] = acc;
        }
    }
    out
}

/// Fréchet (Wasserstein-2) distance between Gaussian fits of two row sets:
/// ‖μ_A − μ_B‖² + Tr(Σ_A + Σ_B − 2·(Σ_A Σ_B)^{1/2}), with the matrix root
/// computed as the symmetric eigendecomposition of Σ_A^{1/2} Σ_B Σ_A^{1/2}.
pub fn frechet_distance(a: &FeatureRows, b: &FeatureRows) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EvalError::contract(format!(
            "dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim();
    for (name, set) in [("A", a), ("B", b)] {
        if set.n_rows() < d + 1 {
            return Err(EvalError::contract(format!(
                "set {name} has {} rows; needs at least dim + 1 = {}",
                set.n_rows(),
                d + 1
            )));
        }
    }
    let ma = GaussianMoments::fit(a)?;
    let mb = GaussianMoments::fit(b)?;
    frechet_from_moments(&ma, &mb)
}

/// The distance computed directly from Gaussian moment fits.
pub fn frechet_from_moments(ma: &GaussianMoments, mb: &GaussianMoments) -> Result<f64> {
    let d = ma.mean.len();
    if mb.mean.len() != d {
        return Err(EvalError::contract("moment dims differ".to_string()));
    }
    let mean_term: f64 = ma
        .mean
        .iter()
        .zip(&mb.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();

    let a_half = sqrt_psd(&ma.cov, d);
    let inner = matmul_f64(&a_half, &matmul_f64(&mb.cov, &a_half, d), d);
    // Symmetrize against accumulation noise before the second root.
    let mut sym = inner.clone();
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
        }
    }
    let (vals, _) = jacobi_eigen(&sym, d);
    let tr_root: f64 = vals.iter().map(|&l| l.max(0.0).sqrt()).sum();

    Ok((mean_term + trace(&ma.cov) + trace(&mb.cov) - 2.0 * tr_root).max(0.0))
}

/// Diagonal-covariance Fréchet distance: per-dimension 1-D distances
/// (μ_a − μ_b)² + (σ_a − σ_b)², summed. Used when the sample budget cannot
/// support a full covariance fit.
pub fn frechet_distance_diagonal(a: &FeatureRows, b: &FeatureRows) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EvalError::contract(format!(
            "dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.n_rows() < 2 || b.n_rows() < 2 {
        return Err(EvalError::contract("need at least 2 rows per set".to_string()));
    }
    let d = a.dim();
    let stats = |rows: &FeatureRows| -> (Vec<f64>, Vec<f64>) {
        let n = rows.n_rows() as f64;
        let mut mean = vec![0.0f64; d];
        for i in 0..rows.n_rows() {
            for (m, &v) in mean.iter_mut().zip(rows.row(i)) {
                *m += v as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0f64; d];
        for i in 0..rows.n_rows() {
            for (k, &v) in rows.row(i).iter().enumerate() {
                let c = v as f64 - mean[k];
                var[k] += c * c;
            }
        }
        for v in var.iter_mut() {
            *v /= n - 1.0;
        }
        (mean, var)
    };
    let (mean_a, var_a) = stats(a);
    let (mean_b, var_b) = stats(b);
    let mut acc = 0.0;
    for k in 0..d {
        let dm = mean_a[k] - mean_b[k];
        let ds = var_a[k].sqrt() - var_b[k].sqrt();
        acc += dm * dm + ds * ds;
    }
    Ok(acc)
}
