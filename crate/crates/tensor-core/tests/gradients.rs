//! Central finite-difference checks for every tape primitive, on random
//! inputs drawn in [-1, 1].

use tensor_core::{grad_check, NodeId, Rng, Tape};

fn randu(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
}

fn check(
    name: &str,
    params: &[(&str, Vec<f64>, Vec<usize>)],
    build: impl Fn(&mut Tape<f64>, &[NodeId]) -> tensor_core::Result<NodeId>,
) {
    let report = grad_check(params, 1e-3, 1e-4, build).unwrap();
    assert!(
        report.all_pass(),
        "{name}: max rel err {} (tol {})",
        report.max_rel_err,
        report.tol
    );
}

#[test]
fn primitive_gradients_match_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(1000 + seed);

        let a = randu(6, &mut rng);
        let b = randu(6, &mut rng);
        check(
            "matmul",
            &[("a", a, vec![2, 3]), ("b", b, vec![3, 2])],
            |t, ids| {
                let c = t.matmul(ids[0], ids[1])?;
                t.sum_all(c)
            },
        );

        let x = randu(6, &mut rng);
        let y = randu(6, &mut rng);
        check(
            "add/sub/mul",
            &[("x", x, vec![2, 3]), ("y", y, vec![2, 3])],
            |t, ids| {
                let s = t.add(ids[0], ids[1])?;
                let d = t.sub(s, ids[1])?;
                let m = t.mul(d, ids[0])?;
                t.mean_all(m)
            },
        );

        let x = randu(8, &mut rng);
        let bias = randu(4, &mut rng);
        check(
            "add_bias/scale/add_const",
            &[("x", x, vec![2, 4]), ("bias", bias, vec![4])],
            |t, ids| {
                let b = t.add_bias(ids[0], ids[1])?;
                let s = t.scale(b, -1.7)?;
                let c = t.add_const(s, 0.3)?;
                t.mean_all(c)
            },
        );

        let x = randu(6, &mut rng);
        check("transpose/reshape", &[("x", x, vec![2, 3])], |t, ids| {
            let tr = t.transpose(ids[0])?;
            let r = t.reshape(tr, vec![6])?;
            let sq = t.mul(r, r)?;
            t.sum_all(sq)
        });

        let x = randu(12, &mut rng);
        check("slice/concat rows", &[("x", x, vec![4, 3])], |t, ids| {
            let top = t.slice_rows(ids[0], 0, 2)?;
            let bottom = t.slice_rows(ids[0], 2, 2)?;
            let swapped = t.concat_rows(&[bottom, top])?;
            let m = t.mul(swapped, swapped)?;
            t.mean_all(m)
        });

        let x = randu(12, &mut rng);
        check("slice/concat cols", &[("x", x, vec![3, 4])], |t, ids| {
            let left = t.slice_cols(ids[0], 0, 2)?;
            let right = t.slice_cols(ids[0], 2, 2)?;
            let swapped = t.concat_cols(&[right, left])?;
            let m = t.mul(swapped, ids[0])?;
            t.sum_all(m)
        });

        let x = randu(8, &mut rng);
        let w = randu(4, &mut rng);
        check(
            "softmax",
            &[("x", x, vec![2, 4]), ("w", w, vec![4, 1])],
            |t, ids| {
                let s = t.softmax(ids[0])?;
                let proj = t.matmul(s, ids[1])?;
                t.mean_all(proj)
            },
        );

        let x = randu(12, &mut rng);
        check("layer_norm", &[("x", x, vec![2, 6])], |t, ids| {
            let ln = t.layer_norm(ids[0], 1e-6)?;
            let sq = t.mul(ln, ln)?;
            let w = t.add_const(sq, 1.0)?;
            let m = t.mul(w, ln)?;
            t.mean_all(m)
        });

        let x = randu(9, &mut rng);
        check("gelu", &[("x", x, vec![3, 3])], |t, ids| {
            let g = t.gelu(ids[0])?;
            t.mean_all(g)
        });

        let x = randu(9, &mut rng);
        check("silu", &[("x", x, vec![3, 3])], |t, ids| {
            let s = t.silu(ids[0])?;
            t.mean_all(s)
        });

        let x = randu(9, &mut rng);
        check("sigmoid", &[("x", x, vec![3, 3])], |t, ids| {
            let s = t.sigmoid(ids[0])?;
            t.mean_all(s)
        });

        let table = randu(12, &mut rng);
        check("gather", &[("table", table, vec![4, 3])], |t, ids| {
            let picked = t.gather(ids[0], &[3, 1, 1, 0])?;
            let sq = t.mul(picked, picked)?;
            t.mean_all(sq)
        });

        let a = randu(6, &mut rng);
        let b = randu(6, &mut rng);
        check(
            "mse",
            &[("a", a, vec![2, 3]), ("b", b, vec![2, 3])],
            |t, ids| t.mse(ids[0], ids[1]),
        );

        let a = randu(6, &mut rng);
        let b = randu(6, &mut rng);
        check(
            "sum/mean composition",
            &[("a", a, vec![2, 3]), ("b", b, vec![2, 3])],
            |t, ids| {
                let s = t.mul(ids[0], ids[1])?;
                let total = t.sum_all(s)?;
                let m = t.mean_all(ids[0])?;
                let comb = t.mul(total, m)?;
                t.sum_all(comb)
            },
        );
    }
}

// l1 has a kink at zero; keep operands separated so finite differences are valid.
#[test]
fn l1_gradient_away_from_kink() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(2000 + seed);
        let a: Vec<f64> = (0..6).map(|_| 0.5 + rng.next_f64()).collect();
        let b: Vec<f64> = (0..6).map(|_| -0.5 - rng.next_f64()).collect();
        check(
            "l1",
            &[("a", a, vec![2, 3]), ("b", b, vec![2, 3])],
            |t, ids| t.l1(ids[0], ids[1]),
        );
    }
}

/// Random two-layer MLP with MSE loss (the canonical end-to-end check).
#[test]
fn two_layer_mlp_mse_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(3000 + seed);
        let x = randu(8, &mut rng);
        let w1 = randu(20, &mut rng);
        let b1 = randu(5, &mut rng);
        let w2 = randu(15, &mut rng);
        let b2 = randu(3, &mut rng);
        let target = randu(6, &mut rng);
        check(
            "mlp",
            &[
                ("x", x, vec![2, 4]),
                ("w1", w1, vec![4, 5]),
                ("b1", b1, vec![5]),
                ("w2", w2, vec![5, 3]),
                ("b2", b2, vec![3]),
            ],
            |t, ids| {
                let target = t.leaf_raw(vec![2, 3], target.clone(), false)?;
                let h = t.matmul(ids[0], ids[1])?;
                let h = t.add_bias(h, ids[2])?;
                let h = t.gelu(h)?;
                let o = t.matmul(h, ids[3])?;
                let o = t.add_bias(o, ids[4])?;
                t.mse(o, target)
            },
        );
    }
}

