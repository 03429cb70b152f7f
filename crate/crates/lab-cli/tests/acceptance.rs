//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line (visible under `--nocapture`). Criteria 7-11 train models and
//! dominate the runtime; see `common::cells` for the shared cell cache.
//!
//! Run: cargo test -p lab-cli --test acceptance -- --nocapture --test-threads=1

mod common;

use common::*;
use diffusion_head::{
    diffusion_loss_node, sample_tokens_batch, DenoiserConfig, DenoiserParams, DiffusionSchedule,
    ScheduleKind,
};
use eval_bench::{frechet_distance, FeatureRows};
use latent_world::{calibrate_profile, synth_image, ProfileName, StatProfile};
use tensor_core::{grad_check, NodeId, Rng, Tape};
use token_stats::{
    denormalize_tokens, normalize_tokens, perturb_tokens, summary_stats, LatentGrid,
};

fn pass(criterion: u32, what: &str) {
    println!("criterion {criterion}: PASS — {what}");
}

// ── criterion 1: gradient suite ─────────────────────────────────────────

fn randu(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
}

fn check_primitive(
    name: &str,
    params: &[(&str, Vec<f64>, Vec<usize>)],
    build: impl Fn(&mut Tape<f64>, &[NodeId]) -> tensor_core::Result<NodeId>,
) {
    let report = grad_check(params, 1e-3, 1e-4, build).unwrap();
    assert!(
        report.all_pass(),
        "criterion 1 FAIL at {name}: max rel err {:.3e} > 1e-4",
        report.max_rel_err
    );
}

#[test]
fn criterion_01_gradient_suite() {
    let t0 = std::time::Instant::now();
    for seed in 0..20u64 {
        let mut rng = Rng::new(7000 + seed);

        let a = randu(6, &mut rng);
        let b = randu(6, &mut rng);
        check_primitive("matmul", &[("a", a, vec![2, 3]), ("b", b, vec![3, 2])], |t, ids| {
            let c = t.matmul(ids[0], ids[1])?;
            t.sum_all(c)
        });

        let x = randu(8, &mut rng);
        let y = randu(8, &mut rng);
        check_primitive(
            "elementwise",
            &[("x", x, vec![2, 4]), ("y", y, vec![2, 4])],
            |t, ids| {
                let s = t.add(ids[0], ids[1])?;
                let d = t.sub(s, ids[1])?;
                let m = t.mul(d, ids[0])?;
                let sc = t.scale(m, -0.7)?;
                let ac = t.add_const(sc, 0.2)?;
                t.mean_all(ac)
            },
        );

        let x = randu(8, &mut rng);
        let bias = randu(4, &mut rng);
        check_primitive(
            "bias/transpose/reshape",
            &[("x", x, vec![2, 4]), ("b", bias, vec![4])],
            |t, ids| {
                let b = t.add_bias(ids[0], ids[1])?;
                let tr = t.transpose(b)?;
                let r = t.reshape(tr, vec![8])?;
                let sq = t.mul(r, r)?;
                t.sum_all(sq)
            },
        );

        let x = randu(12, &mut rng);
        check_primitive("slice/concat", &[("x", x, vec![4, 3])], |t, ids| {
            let top = t.slice_rows(ids[0], 0, 2)?;
            let bottom = t.slice_rows(ids[0], 2, 2)?;
            let rows = t.concat_rows(&[bottom, top])?;
            let left = t.slice_cols(rows, 0, 1)?;
            let right = t.slice_cols(rows, 1, 2)?;
            let cols = t.concat_cols(&[right, left])?;
            let m = t.mul(cols, ids[0])?;
            t.mean_all(m)
        });

        let x = randu(8, &mut rng);
        check_primitive("softmax", &[("x", x, vec![2, 4])], |t, ids| {
            let s = t.softmax(ids[0])?;
            let sq = t.mul(s, s)?;
            t.sum_all(sq)
        });

        let x = randu(12, &mut rng);
        check_primitive("layer_norm", &[("x", x, vec![2, 6])], |t, ids| {
            let ln = t.layer_norm(ids[0], 1e-6)?;
            let g = t.gelu(ln)?;
            t.mean_all(g)
        });

        let x = randu(9, &mut rng);
        check_primitive("silu/sigmoid", &[("x", x, vec![3, 3])], |t, ids| {
            let s = t.silu(ids[0])?;
            let g = t.sigmoid(s)?;
            t.mean_all(g)
        });

        let table = randu(12, &mut rng);
        check_primitive("gather", &[("t", table, vec![4, 3])], |t, ids| {
            let picked = t.gather(ids[0], &[3, 1, 0, 1])?;
            let sq = t.mul(picked, picked)?;
            t.mean_all(sq)
        });

        let a = randu(6, &mut rng);
        let b = randu(6, &mut rng);
        check_primitive("mse", &[("a", a, vec![2, 3]), ("b", b, vec![2, 3])], |t, ids| {
            t.mse(ids[0], ids[1])
        });

        // Full diffusion-loss pipeline: gradients through the denoiser and
        // the condition rows.
        let head_cfg = DenoiserConfig {
            token_dim: 3,
            cond_dim: 4,
            width: 10,
            blocks: 2,
            t_max: 20,
        };
        let head = DenoiserParams::init(head_cfg, 900 + seed);
        let schedule = DiffusionSchedule::make(20, ScheduleKind::Cosine).unwrap();
        let params: Vec<(&str, Vec<f64>, Vec<usize>)> = {
            let mut out: Vec<(&str, Vec<f64>, Vec<usize>)> = Vec::new();
            let names: Vec<&'static str> = head
                .set()
                .iter()
                .map(|(n, _)| Box::leak(n.to_string().into_boxed_str()) as &'static str)
                .collect();
            for ((_, t), name) in head.set().iter().zip(names) {
                let mut data: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
                // Zero-initialized projections get small random values so
                // the check exercises non-degenerate gradients.
                if data.iter().all(|&v| v == 0.0) {
                    data = randu(data.len(), &mut rng)
                        .into_iter()
                        .map(|v| v * 0.2)
                        .collect();
                }
                out.push((name, data, t.shape().to_vec()));
            }
            let z = randu(2 * 4, &mut rng);
            out.push(("z", z, vec![2, 4]));
            out
        };
        let x0: Vec<f32> = (0..2 * 3).map(|_| rng.normal_f32()).collect();
        let head_ref = &head;
        let schedule_ref = &schedule;
        let x0_ref = &x0;
        check_primitive("diffusion_loss", &params, move |t, ids| {
            let (head_ids, z) = ids.split_at(ids.len() - 1);
            let mut noise = Rng::derive(4321, "fd-loss", seed);
            diffusion_loss_node(
                t,
                head_ref,
                head_ids,
                x0_ref,
                z[0],
                schedule_ref,
                &mut noise,
            )
            .map_err(|e| tensor_core::TensorError::Contract(e.to_string()))
        });
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs() < 60, "criterion 1 took {dt:?} (budget 1 min)");
    pass(1, &format!("primitive + diffusion-loss gradients at 1e-4 over 20 draws in {dt:.0?}"));
}

// ── criterion 2: normalization invariant ────────────────────────────────

#[test]
fn criterion_02_normalization_invariant() {
    let mut rng = Rng::new(8100);
    for case in 0..10 {
        let dim = [4, 8, 16, 64][case % 4];
        let grids: Vec<LatentGrid> = (0..6)
            .map(|_| {
                let data = (0..16 * dim)
                    .map(|_| rng.normal_f32() * (0.5 + rng.next_f32() * 3.0) + rng.normal_f32())
                    .collect();
                LatentGrid::new(4, dim, data).unwrap()
            })
            .collect();
        let normalized: Vec<LatentGrid> = grids
            .iter()
            .map(|g| normalize_tokens(g).unwrap().0)
            .collect();
        let s = summary_stats(&normalized).unwrap();
        assert!(
            (s.b - 1.0).abs() < 1e-5,
            "criterion 2 FAIL: statistic (b) = {} after normalization",
            s.b
        );
        assert!(
            s.c < 1e-10,
            "criterion 2 FAIL: statistic (c) = {} after normalization",
            s.c
        );
        for g in &grids {
            let (n, record) = normalize_tokens(g).unwrap();
            let back = denormalize_tokens(&n, &record).unwrap();
            let max_err = g
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(
                max_err < 1e-5,
                "criterion 2 FAIL: round-trip error {max_err}"
            );
        }
    }
    pass(2, "normalize → (b)=1±1e-5, (c)<1e-10; round-trip < 1e-5/element");
}

// ── criterion 3: perturbation calibration ───────────────────────────────

#[test]
fn criterion_03_perturbation_calibration() {
    let mut rng = Rng::new(8200);
    let dim = 64;
    let grid = LatentGrid::new(
        4,
        dim,
        (0..16 * dim).map(|_| rng.normal_f32()).collect(),
    )
    .unwrap();
    let nd = (grid.n_tokens() * grid.dim()) as f64;
    for &alpha in &[0.05f32, 0.1, 0.3] {
        let mut acc = 0.0f64;
        let draws = 10_000;
        for s in 0..draws {
            let p = perturb_tokens(&grid, alpha, s).unwrap();
            acc += p
                .data()
                .iter()
                .zip(grid.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / nd;
        }
        let mean = acc / draws as f64;
        let target = (alpha as f64).powi(2);
        let rel = (mean - target).abs() / target;
        assert!(
            rel < 0.03,
            "criterion 3 FAIL: alpha {alpha} gives mean {mean:.6} vs {target:.6} ({rel:.4} rel)"
        );
    }
    let identity = perturb_tokens(&grid, 0.0, 7).unwrap();
    assert_eq!(
        identity.data(),
        grid.data(),
        "criterion 3 FAIL: alpha = 0 is not a bit-exact identity"
    );
    pass(3, "E‖Ẽ−E‖²/(N·d) = α² within 3% for α ∈ {0.05, 0.1, 0.3}; α = 0 bit-exact");
}

// ── criterion 4: Table-3 calibration ────────────────────────────────────

#[test]
fn criterion_04_profile_calibration() {
    let t0 = std::time::Instant::now();
    let imgs: Vec<_> = (0..500)
        .map(|i| synth_image(4800 + i as u64, (i % 8) as usize, 32, 8).unwrap())
        .collect();
    let names = [
        ProfileName::Vae,
        ProfileName::VaVae,
        ProfileName::Dinov2,
        ProfileName::Siglip2,
        ProfileName::Mae,
    ];
    let mut achieved = Vec::new();
    for name in names {
        let profile = StatProfile::named(name);
        let out = calibrate_profile(&profile, 8, 64, 4, 42, &imgs)
            .unwrap_or_else(|e| panic!("criterion 4 FAIL: {name}: {e}"));
        let a_tol = (0.1 * profile.target_a.abs()).max(0.01);
        assert!(
            (out.achieved.a - profile.target_a).abs() < a_tol,
            "criterion 4 FAIL: {name} (a) = {:.4} vs {:.4}",
            out.achieved.a,
            profile.target_a
        );
        assert!(
            (out.achieved.b - profile.target_b).abs() / profile.target_b < 0.10,
            "criterion 4 FAIL: {name} (b) = {:.4} vs {:.4}",
            out.achieved.b,
            profile.target_b
        );
        achieved.push((name, out.achieved));
    }
    let c_of = |n: ProfileName| achieved.iter().find(|(m, _)| *m == n).unwrap().1.c;
    assert!(
        c_of(ProfileName::VaVae) > c_of(ProfileName::Vae)
            && c_of(ProfileName::Vae) > c_of(ProfileName::Siglip2)
            && c_of(ProfileName::Siglip2) >= c_of(ProfileName::Mae)
            && c_of(ProfileName::Mae) > c_of(ProfileName::Dinov2),
        "criterion 4 FAIL: statistic (c) ordering broken: {achieved:?}"
    );
    let dt = t0.elapsed();
    assert!(dt.as_secs() < 120, "criterion 4 took {dt:?} (budget 2 min)");
    pass(4, &format!("five profiles calibrated to Table values with (c) ordering in {dt:.0?}"));
}

// ── criterion 5: Fréchet proxy correctness ──────────────────────────────

#[test]
fn criterion_05_frechet_proxy() {
    let mut rng = Rng::new(8300);
    // Identical sets → 0.
    let rows = {
        let data: Vec<f32> = (0..500 * 4).map(|_| rng.normal_f32()).collect();
        FeatureRows::from_rows(4, data).unwrap()
    };
    let self_d = frechet_distance(&rows, &rows).unwrap();
    assert!(self_d < 1e-6, "criterion 5 FAIL: self distance {self_d}");

    // 1-D N(0,1) vs N(1,1) at 1e5 samples → 1 within 5%.
    let a = FeatureRows::from_rows(1, (0..100_000).map(|_| rng.normal_f32()).collect()).unwrap();
    let b = FeatureRows::from_rows(
        1,
        (0..100_000).map(|_| 1.0 + rng.normal_f32()).collect(),
    )
    .unwrap();
    let one_d = frechet_distance(&a, &b).unwrap();
    assert!(
        (one_d - 1.0).abs() < 0.05,
        "criterion 5 FAIL: 1-D gaussian case {one_d}"
    );

    // Rotation invariance within 1e-5.
    let mk = |shift: f32, rng: &mut Rng| {
        let data: Vec<f32> = (0..3000 * 3)
            .map(|_| shift + rng.normal_f32() * 1.3)
            .collect();
        FeatureRows::from_rows(3, data).unwrap()
    };
    let set_a = mk(0.0, &mut rng);
    let set_b = mk(0.5, &mut rng);
    let theta = 0.7f64;
    let rotate = |rows: &FeatureRows| {
        let mut out = FeatureRows::new(3);
        for i in 0..rows.n_rows() {
            let r = rows.row(i);
            let x = r[0] as f64 * theta.cos() - r[2] as f64 * theta.sin();
            let z = r[0] as f64 * theta.sin() + r[2] as f64 * theta.cos();
            out.push_row(&[x as f32, r[1], z as f32]);
        }
        out
    };
    let plain = frechet_distance(&set_a, &set_b).unwrap();
    let rotated = frechet_distance(&rotate(&set_a), &rotate(&set_b)).unwrap();
    assert!(
        (plain - rotated).abs() < 1e-5,
        "criterion 5 FAIL: rotation changed {plain} to {rotated}"
    );
    pass(5, "identical → 0; 1-D gaussian case ≈ 1 within 5%; rotation-invariant to 1e-5");
}

// ── criterion 6: sampler fidelity ───────────────────────────────────────

#[test]
fn criterion_06_sampler_fidelity() {
    // Gaussian target: mean and variance reproduced within 10%.
    let (head, schedule, z, target_mean, target_var) = train_gaussian_head();
    let n = 1000;
    let rows = sample_tokens_batch(
        &vec![z.clone(); n],
        &head,
        &schedule,
        schedule.t_max(),
        &mut Rng::derive(88, "c6-gauss", 0),
    )
    .unwrap();
    for coord in 0..2 {
        let vals: Vec<f64> = rows.iter().map(|r| r[coord] as f64).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let mean_err = (mean - target_mean[coord]).abs() / target_mean[coord].abs().max(0.5);
        let var_err = (var - target_var).abs() / target_var;
        assert!(
            mean_err < 0.10,
            "criterion 6 FAIL: mean[{coord}] {mean:.4} vs {:.4}",
            target_mean[coord]
        );
        assert!(
            var_err < 0.10,
            "criterion 6 FAIL: var[{coord}] {var:.5} vs {target_var:.5}"
        );
    }

    // Two-component mixture: both modes hit with frequency in [0.3, 0.7].
    let (head, schedule, z) = train_mixture_head();
    let rows = sample_tokens_batch(
        &vec![z.clone(); n],
        &head,
        &schedule,
        100,
        &mut Rng::derive(88, "c6-mix", 0),
    )
    .unwrap();
    let plus = rows.iter().filter(|r| r[0] + r[1] > 0.0).count();
    let frac = plus as f64 / n as f64;
    assert!(
        (0.3..=0.7).contains(&frac),
        "criterion 6 FAIL: mode frequency {frac}"
    );
    pass(6, "gaussian target moments within 10%; mixture modes at 0.3-0.7 frequency");
}

// ── criterion 12: baseline equivalence & CLI determinism ────────────────

#[test]
fn criterion_12_baseline_equivalence_and_determinism() {
    // (α = 0, norm off) feeds bit-identical inputs to the unmodified
    // pipeline: both pipeline outputs equal the raw grid.
    let mut rng = Rng::new(8400);
    let grid = LatentGrid::new(4, 8, (0..16 * 8).map(|_| rng.normal_f32()).collect()).unwrap();
    let cfg = ar_backbone::BackboneConfig {
        depth: 1,
        width: 8,
        heads: 2,
        mode: ar_backbone::ArMode::Causal,
        token_dim: 8,
        grid_side: 4,
        class_count: 2,
        noise_alpha: 0.0,
        normalize: false,
        seed: 1,
    };
    let (targets, conditioning) = ar_backbone::pipeline_inputs(&grid, &cfg, 5, 9).unwrap();
    assert_eq!(targets.data(), grid.data(), "criterion 12 FAIL: targets modified");
    assert_eq!(
        conditioning.data(),
        grid.data(),
        "criterion 12 FAIL: conditioning modified"
    );

    // Every CLI run is byte-reproducible: run the binary twice.
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("cfg.toml");
    std::fs::write(&config_path, tiny_cli_config()).unwrap();
    let arlab = env!("CARGO_BIN_EXE_arlab");
    for out in ["runA", "runB"] {
        let status = std::process::Command::new(arlab)
            .current_dir(dir.path())
            .args(["train", "--config", "cfg.toml", "--out", out])
            .status()
            .expect("arlab runs");
        assert!(status.success(), "criterion 12 FAIL: CLI run failed");
    }
    for file in ["metrics.csv", "loss_curve.csv", "config.toml", "checkpoint.bin"] {
        let a = std::fs::read(dir.path().join("runA").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("runB").join(file)).unwrap();
        assert_eq!(a, b, "criterion 12 FAIL: {file} differs across CLI runs");
    }
    pass(12, "α=0/norm-off is the unmodified pipeline bit-exactly; CLI artifacts byte-identical");
}
