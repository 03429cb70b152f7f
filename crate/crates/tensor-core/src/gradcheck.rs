use crate::error::{Result, TensorError};
use crate::tape::{NodeId, Tape};

/// Result of checking one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// max_i |analytic_i - numeric_i| / max(‖analytic‖∞, ‖numeric‖∞, 1e-6).
    /// The 1e-6 floor keeps all-zero gradients from amplifying difference-
    /// quotient rounding into spurious relative error.
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.params.iter().all(|p| p.pass)
    }
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `build` constructs the scalar pipeline on a fresh tape given leaves for
/// each `(name, data, shape)` parameter; it runs once for the analytic
/// gradients and twice per coordinate for the differences. The graph is
/// evaluated in `f64` so the difference quotient is not drowned by rounding.
pub fn grad_check<F>(
    params: &[(&str, Vec<f64>, Vec<usize>)],
    step: f64,
    tol: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 || tol <= 0.0 {
        return Err(TensorError::contract("step and tol must be positive"));
    }

    let eval = |data: &[Vec<f64>]| -> Result<(Tape<f64>, Vec<NodeId>, NodeId)> {
        let mut tape: Tape<f64> = Tape::new();
        let mut ids = Vec::with_capacity(params.len());
        for ((_, _, shape), values) in params.iter().zip(data) {
            ids.push(tape.leaf_raw(shape.clone(), values.clone(), true)?);
        }
        let loss = build(&mut tape, &ids)?;
        if tape.value(loss).len() != 1 {
            return Err(TensorError::contract(
                "grad_check pipeline must produce a scalar".to_string(),
            ));
        }
        Ok((tape, ids, loss))
    };

    let base: Vec<Vec<f64>> = params.iter().map(|(_, d, _)| d.clone()).collect();
    let (tape, ids, loss) = eval(&base)?;
    let grads = tape.backward(loss)?;

    let mut checks = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    for (p, (name, data, _)) in params.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(ids[p]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; data.len()],
        };
        let mut numeric = vec![0.0; data.len()];
        for i in 0..data.len() {
            let mut plus = base.clone();
            plus[p][i] += step;
            let (tp, _, lp) = eval(&plus)?;
            let mut minus = base.clone();
            minus[p][i] -= step;
            let (tm, _, lm) = eval(&minus)?;
            numeric[i] = (tp.scalar(lp)? - tm.scalar(lm)?) / (2.0 * step);
        }
        let norm_a = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let norm_n = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = norm_a.max(norm_n).max(1e-6);
        let max_diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let rel = max_diff / denom;
        max_rel = max_rel.max(rel);
        checks.push(ParamCheck {
            name: (*name).to_string(),
            rel_err: rel,
            pass: rel <= tol,
        });
    }

    Ok(GradCheckReport {
        params: checks,
        max_rel_err: max_rel,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact_to_rounding() {
        // loss = w · x for fixed x; gradient is exactly x.
        let report = grad_check(
            &[("w", vec![0.3, -0.7, 1.1], vec![1, 3])],
            1e-3,
            1e-9,
            |tape, ids| {
                let x = tape.leaf_raw(vec![3, 1], vec![2.0, 0.5, -1.0], false)?;
                let y = tape.matmul(ids[0], x)?;
                tape.sum_all(y)
            },
        )
        .unwrap();
        assert!(report.all_pass(), "report: {report:?}");
    }

    #[test]
    fn layer_norm_gelu_stack() {
        let mut rng = crate::Rng::new(21);
        let data: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let report = grad_check(
            &[("x", data, vec![3, 4])],
            1e-3,
            1e-4,
            |tape, ids| {
                let ln = tape.layer_norm(ids[0], 1e-6)?;
                let g = tape.gelu(ln)?;
                tape.mean_all(g)
            },
        )
        .unwrap();
        assert!(
            report.all_pass(),
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn softmax_attention_block() {
        let mut rng = crate::Rng::new(22);
        let mk = |n: usize, rng: &mut crate::Rng| -> Vec<f64> {
            (0..n).map(|_| rng.normal() * 0.5).collect()
        };
        let x = mk(8, &mut rng);
        let wq = mk(16, &mut rng);
        let wk = mk(16, &mut rng);
        let wv = mk(16, &mut rng);
        let report = grad_check(
            &[
                ("x", x, vec![2, 4]),
                ("wq", wq, vec![4, 4]),
                ("wk", wk, vec![4, 4]),
                ("wv", wv, vec![4, 4]),
            ],
            1e-3,
            1e-4,
            |tape, ids| {
                let q = tape.matmul(ids[0], ids[1])?;
                let k = tape.matmul(ids[0], ids[2])?;
                let v = tape.matmul(ids[0], ids[3])?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scaled = tape.scale(scores, 0.5)?;
                let att = tape.softmax(scaled)?;
                let out = tape.matmul(att, v)?;
                tape.mean_all(out)
            },
        )
        .unwrap();
        assert!(
            report.all_pass(),
            "max rel err {}",
            report.max_rel_err
        );
    }
}
