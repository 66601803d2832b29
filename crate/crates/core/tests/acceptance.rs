//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers (run with `--nocapture` to see
//! them). Oracles are independent of the code paths they check: dense
//! reference solves come from nalgebra, analytic values are hand-derived.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use symprec::datagen::{
    adaptive_grid_search, build_dataset, Objective, SearchConfig, SearchTarget,
};
use symprec::deploy::{bench_compare, BenchConfig, BenchPolicySpec};
use symprec::expr::{
    arity, is_binary, is_constant, reward_detailed, Expression, Library, TokenId, MAX_EXPR_LEN,
    MIN_EXPR_LEN, TOK_EXP, TOK_LOG, TOK_ONE, VAR_BASE,
};
use symprec::krylov::{estimate_condition, Method, SolverConfig};
use symprec::policy::{
    empirical_quantile, grad_log_prob, log_prob_of, risk_gradient_coefficients,
    sample_expression, train, train_on_rows, PolicyModel, TrainConfig,
};
use symprec::precond::{sor_precond_apply, ssor_precond_apply, AmgSmoother, PrecondConfig};
use symprec::problem::{generate_batch, sample_instance, Family};
use symprec::CsrMatrix;

fn dense_from(n: usize, entries: &dyn Fn(usize, usize) -> f64) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(n, n, |i, j| entries(i, j))
}

/// Random sparse-pattern test matrix with a safely nonzero diagonal.
fn random_system(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                triplets.push((i, j, sign * rng.gen_range(1.5..3.0)));
            } else if rng.gen_bool(0.5) {
                triplets.push((i, j, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets).unwrap()
}

/// Random sparse SPD matrix built as B^T B + n I.
fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let b = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let a = b.transpose() * &b + nalgebra::DMatrix::identity(n, n) * n as f64;
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            triplets.push((i, j, a[(i, j)]));
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets).unwrap()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn acceptance_01_preconditioner_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 10;
    let mut worst_sor = 0.0f64;
    let mut worst_ssor = 0.0f64;
    for _ in 0..100 {
        // SOR against the dense (D + wL)^{-1} (scaled by w) form
        let a = random_system(n, &mut rng);
        let omega: f64 = rng.gen_range(0.05..1.95);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = sor_precond_apply(&a, &r, omega, 1).unwrap();
        let m = dense_from(n, &|i, j| {
            if i == j {
                a.get(i, i)
            } else if j < i {
                omega * a.get(i, j)
            } else {
                0.0
            }
        });
        let rhs = nalgebra::DVector::from_iterator(n, r.iter().map(|v| omega * v));
        let z_ref = m.lu().solve(&rhs).expect("nonsingular triangular system");
        worst_sor = worst_sor.max(rel_diff(&z, z_ref.as_slice()));

        // SSOR against the dense 1/(w(2-w)) (D + wL) D^{-1} (D + wU) form
        let spd = random_spd(n, &mut rng);
        let z2 = ssor_precond_apply(&spd, &r, omega).unwrap();
        let d = dense_from(n, &|i, j| if i == j { spd.get(i, i) } else { 0.0 });
        let l = dense_from(n, &|i, j| if j < i { spd.get(i, j) } else { 0.0 });
        let u = dense_from(n, &|i, j| if j > i { spd.get(i, j) } else { 0.0 });
        let d_inv = dense_from(n, &|i, j| if i == j { 1.0 / spd.get(i, i) } else { 0.0 });
        let m_ssor =
            (&d + &l * omega) * d_inv * (&d + &u * omega) / (omega * (2.0 - omega));
        let rhs2 = nalgebra::DVector::from_column_slice(&r);
        let z2_ref = m_ssor.lu().solve(&rhs2).expect("SPD system");
        worst_ssor = worst_ssor.max(rel_diff(&z2, z2_ref.as_slice()));
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst_sor <= 1e-12, "SOR mismatch {worst_sor}");
    assert!(worst_ssor <= 1e-12, "SSOR mismatch {worst_ssor}");
    assert!(elapsed < 5.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 1 preconditioner-oracle-equivalence: PASS \
         (worst sor {worst_sor:.2e}, worst ssor {worst_ssor:.2e}, {elapsed:.2} s)"
    );
}

#[test]
fn acceptance_02_model_problem_sor_optimum() {
    let start = Instant::now();
    let p = sample_instance(Family::Poisson, 16, 42).unwrap();
    let solver = SolverConfig {
        method: Method::Stationary,
        tolerance: 1e-8,
        max_iters: 20_000,
        restart: 30,
    };
    let cfg = SearchConfig {
        range: (0.0, 2.0),
        coarse_step: 0.05,
        fine_step: 0.001,
        objective: Objective::iterations(),
        solver,
        repeats: 1,
    };
    let out = adaptive_grid_search(&p, SearchTarget::Sor { sweeps: 1 }, &cfg).unwrap();
    let theory = 2.0 / (1.0 + (std::f64::consts::PI / 17.0).sin());
    let diff = (out.param - theory).abs();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(diff <= 0.05, "omega {} vs theory {theory}", out.param);
    assert!(elapsed < 120.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 2 model-problem-sor-optimum: PASS \
         (omega {} vs 2/(1+sin(pi/17)) = {theory:.4}, diff {diff:.4}, {elapsed:.2} s)",
        out.param
    );
}

#[test]
fn acceptance_03_condition_estimator() {
    let start = Instant::now();
    // identity is exact
    let eye = CsrMatrix::from_triplets(7, 7, &(0..7).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
        .unwrap();
    let est = estimate_condition(&eye, &PrecondConfig::None).unwrap();
    assert_eq!(est.value, 1.0, "kappa(I) must be exactly 1");

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = random_spd(50, &mut rng);
        let est = estimate_condition(&a, &PrecondConfig::None).unwrap().value;
        // independent oracle: nalgebra SVD of the dense matrix
        let dense = nalgebra::DMatrix::from_fn(50, 50, |i, j| a.get(i, j));
        let sv = dense.svd(false, false).singular_values;
        let exact = sv.max() / sv.min();
        let rel = (est - exact).abs() / exact;
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst <= 0.05, "worst relative error {worst}");
    assert!(elapsed < 30.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 3 condition-estimator: PASS \
         (kappa(I) exact, worst rel err {worst:.2e} over 20 SPD 50x50, {elapsed:.2} s)"
    );
}

#[test]
fn acceptance_04_amg_theta_sensitivity() {
    let start = Instant::now();
    let p = sample_instance(Family::Poisson, 32, 7).unwrap();
    let kappa = |theta: f64| {
        estimate_condition(
            &p.matrix,
            &PrecondConfig::Amg {
                theta,
                smoother: AmgSmoother::Jacobi,
                smoother_omega: 1.0,
            },
        )
        .unwrap()
        .value
    };
    let low = kappa(0.0);
    let high = kappa(0.8);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        low < high,
        "kappa(theta=0) = {low} must be below kappa(theta=0.8) = {high}"
    );
    assert!(elapsed < 120.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 4 amg-theta-sensitivity: PASS \
         (kappa(0) = {low:.4} < kappa(0.8) = {high:.4}, {elapsed:.2} s)"
    );
}

#[test]
fn acceptance_05_gradient_correctness() {
    let start = Instant::now();
    // (a) backprop vs central finite differences on 20 random rollouts
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let model = PolicyModel::new_seeded(Library::new(2), 4, 8, 0.08, 1000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rollout = sample_expression(&model, &mut rng);
        let g = grad_log_prob(&model, &rollout.tokens).flatten();
        let mut probe = model.clone();
        let step = 1e-5;
        let mut fd = vec![0.0; g.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let orig = probe.get_flat(i);
            probe.set_flat(i, orig + step);
            let up = log_prob_of(&probe, &rollout.tokens);
            probe.set_flat(i, orig - step);
            let down = log_prob_of(&probe, &rollout.tokens);
            probe.set_flat(i, orig);
            *slot = (up - down) / (2.0 * step);
        }
        let rel = rel_diff(&g, &fd);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-5, "worst gradient error {worst}");

    // (b) Monte Carlo estimator against the closed form for a two-outcome
    // softmax policy: theta = (0.2, -0.1), rewards (0.3, 0.9), eps = 0.5.
    // With p1 > 1 - eps the empirical quantile settles on r1, so
    // E[g] = (p2/eps) (r2 - r1) grad log pi_2, grad log pi_2 = e2 - p.
    let theta: [f64; 2] = [0.2, -0.1];
    let e0 = theta[0].exp();
    let e1 = theta[1].exp();
    let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
    let rewards_by_outcome = [0.3, 0.9];
    let eps = 0.5;
    let analytic = [
        (p[1] / eps) * 0.6 * (0.0 - p[0]),
        (p[1] / eps) * 0.6 * (1.0 - p[1]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let batches = 100usize;
    let batch_size = 1000usize;
    let mut mean_g = [0.0f64; 2];
    for _ in 0..batches {
        let outcomes: Vec<usize> = (0..batch_size)
            .map(|_| if rng.gen::<f64>() < p[0] { 0 } else { 1 })
            .collect();
        let rewards: Vec<f64> = outcomes.iter().map(|&o| rewards_by_outcome[o]).collect();
        let q = empirical_quantile(&rewards, eps);
        let coefs = risk_gradient_coefficients(&rewards, q, eps);
        let mut g = [0.0f64; 2];
        for (o, c) in outcomes.iter().zip(&coefs) {
            if *c != 0.0 {
                // grad log pi_o = e_o - p
                for (k, gk) in g.iter_mut().enumerate() {
                    let ind = if k == *o { 1.0 } else { 0.0 };
                    *gk += c * (ind - p[k]);
                }
            }
        }
        mean_g[0] += g[0] / batches as f64;
        mean_g[1] += g[1] / batches as f64;
    }
    let est_err = rel_diff(&mean_g, &analytic);
    assert!(
        est_err <= 0.05,
        "estimator {mean_g:?} vs analytic {analytic:?} ({est_err:.3} rel)"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 5 gradient-correctness: PASS \
         (worst fd rel err {worst:.2e}, estimator rel err {est_err:.4}, {elapsed:.2} s)"
    );
}

#[test]
fn acceptance_06_constraint_soundness() {
    let start = Instant::now();
    fn subtree_end(tokens: &[TokenId], from: usize) -> usize {
        let mut need = 1i64;
        let mut i = from;
        loop {
            need += arity(tokens[i]) as i64 - 1;
            i += 1;
            if need == 0 {
                return i;
            }
        }
    }
    let model = PolicyModel::new_seeded(Library::new(3), 8, 32, 0.08, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for k in 0..10_000 {
        let r = sample_expression(&model, &mut rng);
        assert!(
            r.tokens.len() >= MIN_EXPR_LEN && r.tokens.len() <= MAX_EXPR_LEN,
            "rollout {k} has length {}",
            r.tokens.len()
        );
        assert_eq!(r.relaxed_steps, 0, "rollout {k} needed mask relaxation");
        for (i, &t) in r.tokens.iter().enumerate() {
            if is_binary(t) {
                let left = i + 1;
                let right = subtree_end(&r.tokens, left);
                assert!(
                    !(is_constant(r.tokens[left]) && is_constant(r.tokens[right])),
                    "rollout {k} has a binary operator over two constants"
                );
            }
            if t == TOK_LOG {
                assert_ne!(r.tokens[i + 1], TOK_EXP, "rollout {k} nests exp under log");
            }
            if t == TOK_EXP {
                assert_ne!(r.tokens[i + 1], TOK_LOG, "rollout {k} nests log under exp");
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 6 constraint-soundness: PASS (10000 rollouts clean, {elapsed:.2} s)"
    );
}

#[test]
fn acceptance_07_symbolic_recovery() {
    let start = Instant::now();
    // target 1: y = x1 + 1, must hit R = 1 within 50 iterations
    let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 * 0.01]).collect();
    let ys1: Vec<f64> = xs.iter().map(|x| x[0] + 1.0).collect();
    let mut wins1 = 0;
    for seed in 1..=5u64 {
        let mut cfg = TrainConfig::desk(seed);
        cfg.total_samples = 50 * cfg.batch_size;
        let (report, _) = train_on_rows(&xs, &ys1, &cfg);
        if report.best_reward >= 1.0 {
            wins1 += 1;
        }
    }
    assert!(wins1 >= 4, "exact recovery in only {wins1}/5 seeds");

    // target 2: y = 1 + 1/(x1 + 1.2), NRMSE below 1e-3 under the desk budget
    let ys2: Vec<f64> = xs.iter().map(|x| 1.0 + 1.0 / (x[0] + 1.2)).collect();
    let mut wins2 = 0;
    let mut best_nrmse = f64::INFINITY;
    for seed in 1..=5u64 {
        let cfg = TrainConfig::desk(seed);
        let (report, _) = train_on_rows(&xs, &ys2, &cfg);
        let ev = reward_detailed(&report.best, &xs, &ys2);
        if let Some(nrmse) = ev.nrmse {
            best_nrmse = best_nrmse.min(nrmse);
            if nrmse < 1e-3 {
                wins2 += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(wins2 >= 3, "reciprocal recovery in only {wins2}/5 seeds");
    assert!(elapsed < 900.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 7 symbolic-recovery: PASS \
         (linear {wins1}/5 exact, reciprocal {wins2}/5 below 1e-3 (best NRMSE {best_nrmse:.2e}), {elapsed:.0} s)"
    );
}

#[test]
fn acceptance_08_end_to_end_desk_pipeline() {
    let start = Instant::now();
    let all = generate_batch(Family::Elliptic, 64, 250, 20_240_809).unwrap();
    let (train_problems, test_problems) = all.split_at(200);

    // optimal-parameter dataset from stationary SOR iteration counts
    let target = SearchTarget::Sor { sweeps: 1 };
    let search_solver = SolverConfig {
        method: Method::Stationary,
        tolerance: 1e-7,
        max_iters: 800,
        restart: 30,
    };
    let search = SearchConfig {
        range: (0.0, 2.0),
        coarse_step: 0.05,
        fine_step: 0.002,
        objective: Objective::iterations(),
        solver: search_solver,
        repeats: 1,
    };
    let (dataset, meta) = build_dataset(train_problems, target, &search, 11);
    assert!(
        dataset.len() >= 190,
        "too many dropped instances: {:?}",
        meta.dropped
    );

    let tcfg = TrainConfig::desk(1);
    let (report, _) = train(&dataset, &tcfg);
    println!(
        "  learned policy: {} (train R {:.4})",
        report.best.infix(),
        report.best_reward
    );

    // benchmark on the held-out instances
    let bench_solver = SolverConfig {
        method: Method::Stationary,
        tolerance: 1e-7,
        max_iters: 20_000,
        restart: 30,
    };
    let cfg = BenchConfig {
        target,
        solver: bench_solver,
        objective: Objective::iterations(),
        measure_cond: false,
        search,
    };
    let policies = vec![
        ("default".to_string(), BenchPolicySpec::Fixed(1.0)),
        (
            "optimal-constant".to_string(),
            BenchPolicySpec::OptimalConstant,
        ),
        ("learned".to_string(), BenchPolicySpec::Symbolic(report.best.clone())),
    ];
    let (bench, _) = bench_compare(test_problems, &policies, &cfg);
    let row = |name: &str| bench.rows.iter().find(|r| r.policy == name).unwrap();
    let default_row = row("default");
    let opt_row = row("optimal-constant");
    let learned_row = row("learned");
    assert_eq!(default_row.n_failed, 0, "default cells failed to converge");
    assert_eq!(learned_row.n_failed, 0, "learned cells failed to converge");
    let vs_default = learned_row.mean_iters / default_row.mean_iters;
    let vs_optimal = learned_row.mean_iters / opt_row.mean_iters;
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        vs_default <= 0.90,
        "learned {} vs default {} iters (ratio {vs_default:.3})",
        learned_row.mean_iters,
        default_row.mean_iters
    );
    assert!(
        vs_optimal <= 1.05,
        "learned {} vs optimal constant {} iters (ratio {vs_optimal:.3})",
        learned_row.mean_iters,
        opt_row.mean_iters
    );
    assert!(elapsed < 2700.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 8 end-to-end-desk-pipeline: PASS \
         (learned {:.1} iters, default {:.1}, optimal-constant {:.1}; \
         ratios {vs_default:.3} <= 0.90 and {vs_optimal:.3} <= 1.05, {elapsed:.0} s)",
        learned_row.mean_iters, default_row.mean_iters, opt_row.mean_iters
    );
}

#[test]
fn acceptance_09_reward_function() {
    let start = Instant::now();
    // worked example
    let const_one = Expression::new(vec![TOK_ONE], vec![]).unwrap();
    let ev = reward_detailed(&const_one, &[vec![0.0], vec![0.0]], &[0.0, 2.0]);
    assert_eq!(ev.reward, 0.5, "worked example must give exactly 0.5");

    // exact fit
    let ident = Expression::new(vec![VAR_BASE], vec![]).unwrap();
    let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
    let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
    assert_eq!(reward_detailed(&ident, &xs, &ys).reward, 1.0);

    // fuzz: random expressions over random (including hostile) data stay
    // inside [0, 1]
    let model = PolicyModel::new_seeded(Library::new(2), 4, 8, 0.08, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..2000 {
        let r = sample_expression(&model, &mut rng);
        let e = Expression::with_unit_constants(r.tokens).unwrap();
        let n = rng.gen_range(2..6);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let v: f64 = rng.gen_range(-1e6..1e6);
                        if rng.gen_bool(0.1) {
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let val = reward_detailed(&e, &xs, &ys).reward;
        assert!((0.0..=1.0).contains(&val), "reward {val} out of range");
        assert!(val.is_finite());
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed} s");
    println!("ACCEPTANCE 9 reward-function: PASS (fuzz clean, {elapsed:.2} s)");
}

#[test]
fn acceptance_10_reproducibility() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    // datagen twice from the same seed: byte-identical CSV
    let problems = generate_batch(Family::Poisson, 8, 12, 4242).unwrap();
    let solver = SolverConfig {
        method: Method::Cg,
        tolerance: 1e-7,
        max_iters: 2000,
        restart: 30,
    };
    let mut cfg = SearchConfig::new(SearchTarget::Ssor, Objective::iterations(), solver);
    cfg.coarse_step = 0.1;
    cfg.fine_step = 0.02;
    let (ds1, _) = build_dataset(&problems, SearchTarget::Ssor, &cfg, 7);
    let problems2 = generate_batch(Family::Poisson, 8, 12, 4242).unwrap();
    let (ds2, _) = build_dataset(&problems2, SearchTarget::Ssor, &cfg, 7);
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    ds1.write_csv(&p1).unwrap();
    ds2.write_csv(&p2).unwrap();
    let bytes1 = std::fs::read(&p1).unwrap();
    let bytes2 = std::fs::read(&p2).unwrap();
    assert_eq!(bytes1, bytes2, "dataset CSVs differ between identical runs");

    // training twice from the same seed: identical best expression
    let mut tcfg = TrainConfig::desk(9);
    tcfg.batch_size = 50;
    tcfg.total_samples = 500;
    let (r1, _) = train(&ds1, &tcfg);
    let (r2, _) = train(&ds2, &tcfg);
    assert_eq!(r1.best, r2.best, "best expressions differ");
    assert_eq!(r1.best_reward, r2.best_reward);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "took {elapsed} s");
    println!(
        "ACCEPTANCE 10 reproducibility: PASS \
         (identical CSV bytes and best expression '{}', {elapsed:.2} s)",
        r1.best.infix()
    );
}
