use crate::frechet::FeatureRows;
use crate::{EvalError, Result};

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

/// k-th nearest-neighbor squared radius for every row of `rows`
/// (self excluded).
fn knn_radii(rows: &FeatureRows, k: usize) -> Vec<f64> {
    let n = rows.n_rows();
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if i != j {
                dists.push(sq_dist(rows.row(i), rows.row(j)));
            }
        }
        let kth = k - 1;
        dists.select_nth_unstable_by(kth, |a, b| a.partial_cmp(b).unwrap());
        radii.push(dists[kth]);
    }
    radii
}

fn coverage(points: &FeatureRows, manifold: &FeatureRows, radii: &[f64]) -> f64 {
    let n = points.n_rows();
    let mut covered = 0usize;
    for i in 0..n {
        let p = points.row(i);
        for j in 0..manifold.n_rows() {
            if sq_dist(p, manifold.row(j)) <= radii[j] {
                covered += 1;
                break;
            }
        }
    }
    covered as f64 / n as f64
}

/// k-NN manifold precision/recall.
///
/// Precision: fraction of generated rows inside some real row's k-NN ball.
/// Recall: fraction of real rows inside some generated row's k-NN ball.
pub fn precision_recall(
    real: &FeatureRows,
    generated: &FeatureRows,
    k: usize,
) -> Result<(f64, f64)> {
    if real.dim() != generated.dim() {
        return Err(EvalError::contract("dims differ".to_string()));
    }
    if k == 0 || real.n_rows() < k + 1 || generated.n_rows() < k + 1 {
        return Err(EvalError::contract(format!(
            "k = {k} needs at least k + 1 rows in both sets ({} real, {} generated)",
            real.n_rows(),
            generated.n_rows()
        )));
    }
    let real_radii = knn_radii(real, k);
    let gen_radii = knn_radii(generated, k);
    let precision = coverage(generated, real, &real_radii);
    let recall = coverage(real, generated, &gen_radii);
    Ok((precision, recall))
}
