//! Acceptance gate: one test per release-blocking numerical claim, each
//! printing a single `criterion N PASS/FAIL ...` line before asserting.
//! Tolerances and run parameters are pinned here on purpose; loosening them
//! to get a green run defeats the point of the gate. The two `*_full_scale`
//! tests are ignored by default (tens of minutes) and run the same checks
//! at figure-reproduction scale.

use hopmf::f1;
use hopmf::fixed_point::{lambda_step, seed_state, solve_fixed_point, FixedPointState, SolverConfig};
use hopmf::grid::TimeGrid;
use hopmf::kernel::{h_series, ktilde_row, DiscreteKernel, KtildeFamily, LowerTriangularKernel};
use hopmf::model::{Activation, Drift, InitialLaw, ModelSpec};
use hopmf::quenched::{
    empirical_stats, sample_weights_bernoulli, sample_weights_gaussian, simulate_network,
    EmpiricalStats,
};
use hopmf::rng;
use hopmf::stats;
use hopmf::volterra::{solve_increments, solve_resolvent_form};

fn report(criterion: usize, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn h_model(activation: Activation, j: f64, sigma: f64, lambda: f64) -> ModelSpec {
    ModelSpec {
        drift: Drift::Linear { alpha: 1.0 },
        activation,
        j,
        sigma,
        lambda,
    }
}

/// 1. Conditioning the exact constant kernel K = sigma^2 must reproduce the
///    closed form sigma^2 lambda^2 / (lambda^2 + sigma^2 t) at every grid
///    point, for all four (sigma, lambda) in {1,2}x{1,2}, L = 300.
#[test]
fn criterion_1_constant_kernel_conditioning_matches_closed_form() {
    let grid = TimeGrid::new(3.0, 0.01).unwrap();
    let n = grid.num_points();
    assert_eq!(grid.steps(), 300);
    let mut worst = 0.0f64;
    for sigma in [1.0f64, 2.0] {
        for lambda in [1.0f64, 2.0] {
            let k = DiscreteKernel::constant(n, grid.dt(), sigma * sigma);
            for l in 1..n {
                let row = ktilde_row(&k, l, lambda).unwrap();
                let want = f1::ktilde_f1(grid.time(l), sigma, lambda);
                for &v in &row {
                    worst = worst.max((v - want).abs());
                }
            }
        }
    }
    report(
        1,
        worst <= 1e-8,
        &format!("sup |conditioned row - closed form| = {worst:.3e} (tol 1e-8)"),
    );
}

/// 2. Every resolvent H we produce satisfies the defining identity
///    H = kappa + dt * (kappa o H) to 1e-8 in sup norm, and the a priori
///    bound sup |H| <= M h(MT) with h(x) = sum_n x^n / sqrt(n!). M must
///    dominate both sup |kappa| and the row L2 integrals for the Neumann
///    series to be majorized term by term, so we take the max of the two.
#[test]
fn criterion_2_resolvent_identity_and_growth_bound() {
    let mut cases: Vec<(String, LowerTriangularKernel)> = Vec::new();

    let dt = 0.01;
    let random = LowerTriangularKernel::from_fn(151, dt, |l, j| {
        0.8 * rng::normal(21, 90, l as u64, j as u64)
    });
    cases.push(("random causal".into(), random));

    for (sigma, lambda) in [(1.0f64, 1.0f64), (2.0, 1.0), (1.0, 2.0)] {
        let kappa = LowerTriangularKernel::from_fn(301, dt, |l, _| {
            f1::ktilde_f1(l as f64 * dt, sigma, lambda) / (lambda * lambda)
        });
        cases.push((format!("constant-activation sigma={sigma} lambda={lambda}"), kappa));
    }

    let config = SolverConfig {
        model: h_model(Activation::Sigmoid01, 1.0, 1.0, 1.0),
        grid: TimeGrid::new(1.5, 0.03).unwrap(),
        law: InitialLaw::PointMass { x0: 0.0 },
        paths: 2000,
        n_iters: 3,
        seed: 4242,
        fresh_noise: true,
    };
    let run = solve_fixed_point(&config).unwrap();
    cases.push(("solver-produced family".into(), run.ktilde.to_volterra()));

    let mut worst_residual = 0.0f64;
    let mut worst_margin = f64::INFINITY;
    for (name, kappa) in &cases {
        let h = kappa.resolvent();
        let residual = kappa.resolvent_residual(&h);
        worst_residual = worst_residual.max(residual);
        let t_end = (kappa.n() - 1) as f64 * kappa.dt();
        let m = kappa.sup_abs().max(kappa.row_sq_integral_max());
        let bound = m * h_series(m * t_end, 1e-12);
        let sup = h.sup_abs();
        worst_margin = worst_margin.min(bound - sup);
        assert!(
            residual <= 1e-8 && sup <= bound + 1e-8,
            "{name}: residual {residual:.3e}, sup |H| {sup:.3e} vs bound {bound:.3e}"
        );
    }
    report(
        2,
        worst_residual <= 1e-8 && worst_margin >= -1e-8,
        &format!(
            "max residual {worst_residual:.3e} (tol 1e-8), min bound margin {worst_margin:.3e}"
        ),
    );
}

/// 3. Forward substitution and the resolvent form are two routes to the same
///    Volterra solution; path values must agree to 1e-10, L = 200, 100 paths.
#[test]
fn criterion_3_volterra_route_equivalence() {
    let dt = 0.01;
    let steps = 200;
    let kappa = LowerTriangularKernel::from_fn(steps, dt, |l, j| {
        0.7 * rng::normal(31, 91, l as u64, j as u64)
    });
    let c: Vec<f64> = (0..steps).map(|l| (0.7 * l as f64 * dt).sin()).collect();
    let mut worst = 0.0f64;
    for path in 0..100u64 {
        let dw: Vec<f64> = (0..steps)
            .map(|l| dt.sqrt() * rng::normal(32, rng::purpose::PATH_NOISE, path, l as u64))
            .collect();
        let fwd = solve_increments(&kappa, Some(&c), &dw).unwrap().cumulative();
        let res = solve_resolvent_form(&kappa, Some(&c), &dw)
            .unwrap()
            .cumulative();
        for (a, b) in fwd.iter().zip(&res) {
            worst = worst.max((a - b).abs());
        }
    }
    report(
        3,
        worst <= 1e-10,
        &format!("max |forward - resolvent route| = {worst:.3e} (tol 1e-10)"),
    );
}

/// 4. With the constant activation the solver's state law is known exactly:
///    mean 1 - e^{-t} and variance var_f1(t) at J = sigma = lambda = 1,
///    X_0 = 0. P = 1e5 paths, T = 3, dt = 0.01; each curve within
///    max(3 SE, 0.01) resp. max(3 SE, 0.02) everywhere.
#[test]
fn criterion_4_constant_activation_solver_matches_closed_forms() {
    let grid = TimeGrid::new(3.0, 0.01).unwrap();
    let config = SolverConfig {
        model: h_model(Activation::ConstantOne, 1.0, 1.0, 1.0),
        grid,
        law: InitialLaw::PointMass { x0: 0.0 },
        paths: 100_000,
        n_iters: 2,
        seed: 71,
        fresh_noise: true,
    };
    let run = solve_fixed_point(&config).unwrap();
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    let mut pass = true;
    for l in 0..grid.num_points() {
        let t = grid.time(l);
        let dm = (run.x_stats.mean[l] - f1::mean_f1(t, 1.0, 0.0)).abs();
        let dv = (run.x_stats.var[l] - f1::var_f1(t, 1.0, 0.0, 1.0)).abs();
        let mean_tol = (3.0 * run.x_stats.se_mean[l]).max(0.01);
        let var_tol = (3.0 * run.x_stats.se_var[l]).max(0.02);
        pass &= dm <= mean_tol && dv <= var_tol;
        worst_mean = worst_mean.max(dm - mean_tol);
        worst_var = worst_var.max(dv - var_tol);
    }
    report(
        4,
        pass,
        &format!(
            "worst mean excess {worst_mean:.3e}, worst var excess {worst_var:.3e} (<= 0 passes)"
        ),
    );
}

/// 5. Annealed and quenched constant-activation dynamics have the same law;
///    independent Monte Carlo runs (P = 1e5 each) must agree in mean and
///    variance within 3 pooled SE at every grid point.
#[test]
fn criterion_5_annealed_equals_quenched_constant_activation() {
    let grid = TimeGrid::new(3.0, 0.01).unwrap();
    let law = InitialLaw::PointMass { x0: 0.0 };
    let ann = f1::simulate_annealed(1.0, 1.0, 1.0, &grid, &law, 100_000, 1501)
        .unwrap()
        .stats;
    let que = f1::simulate_quenched(1.0, 1.0, 1.0, &grid, &law, 100_000, 1502)
        .unwrap()
        .stats;
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    for l in 0..grid.num_points() {
        let mean_band = 3.0 * (ann.se_mean[l].powi(2) + que.se_mean[l].powi(2)).sqrt();
        let var_band = 3.0 * (ann.se_var[l].powi(2) + que.se_var[l].powi(2)).sqrt();
        let dm = (ann.mean[l] - que.mean[l]).abs();
        let dv = (ann.var[l] - que.var[l]).abs();
        if l > 0 {
            // At l = 0 both laws are the same point mass and every band is 0.
            pass &= dm <= mean_band && dv <= var_band;
            worst = worst.max(dm - mean_band).max(dv - var_band);
        }
    }
    report(
        5,
        pass,
        &format!("worst excess over 3 pooled SE = {worst:.3e} (<= 0 passes)"),
    );
}

fn plateau_run(paths: usize) -> hopmf::fixed_point::FixedPointRun {
    let config = SolverConfig {
        model: h_model(Activation::Sigmoid01, 1.0, 1.0, 1.0),
        grid: TimeGrid::new(10.0, 0.04).unwrap(),
        law: InitialLaw::PointMass { x0: 0.0 },
        paths,
        n_iters: 10,
        seed: 606,
        fresh_noise: true,
    };
    solve_fixed_point(&config).unwrap()
}

fn check_plateau(criterion_src: &str, run: &hopmf::fixed_point::FixedPointRun, lo: f64, hi: f64) {
    let m_end = *run.state.m.last().unwrap();
    let d: Vec<f64> = run.diagnostics.iter().map(|x| x.distance).collect();
    // Contraction signature: the distance between successive states decreases
    // monotonically until it first reaches the Monte Carlo noise floor
    // (estimated as the median of the trailing half), then stays within
    // chi-fluctuation range of that floor. A fixed per-step ratio bound would
    // be brittle at the floor, where independent resampling noise routinely
    // doubles the distance from one iteration to the next.
    let mut tail: Vec<f64> = d[d.len() / 2..].to_vec();
    tail.sort_by(f64::total_cmp);
    let floor = tail[tail.len() / 2];
    let reached = d.iter().position(|&x| x <= 2.0 * floor).unwrap_or(d.len());
    let mut contraction = d[0] > 10.0 * floor && reached < d.len();
    for i in 1..=reached.min(d.len() - 1) {
        contraction &= d[i] < d[i - 1];
    }
    for &x in &d[reached.min(d.len())..] {
        contraction &= x <= 4.0 * floor;
    }
    let pass = (lo..=hi).contains(&m_end) && contraction;
    report(
        6,
        pass,
        &format!(
            "{criterion_src}: m(T) = {m_end:.4} (band [{lo}, {hi}]), noise floor {floor:.4}, \
             distances {:?}",
            d.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

/// 6. Bounded-activation model settles on a plateau slightly below 0.7 and
///    the iteration contracts. CI variant: P = 2e4, band [0.55, 0.80].
#[test]
fn criterion_6_plateau_and_contraction() {
    let run = plateau_run(20_000);
    check_plateau("P=2e4", &run, 0.55, 0.80);
}

/// Full-scale variant of criterion 6: P = 1.6e5, band [0.60, 0.75].
#[test]
#[ignore = "tens of minutes; run with --ignored for the full-scale gate"]
fn criterion_6_plateau_and_contraction_full_scale() {
    let run = plateau_run(160_000);
    check_plateau("P=1.6e5", &run, 0.60, 0.75);
}

/// 7. Soft-wall model with symmetric initial law and odd activation: the
///    mean function stays at zero within Monte Carlo resolution,
///    sup_t |m(t)| <= 3 SE(t). A = 2, k = 2, T = 3, dt = 0.01, 1e5 paths
///    total split over 25 independent solver replicas. The SE must come from
///    the replica spread: each Picard iteration feeds the previous mean
///    estimate back through the drift, so the within-run SE of one large run
///    misses that inherited noise and undersizes the band by up to ~40%.
#[test]
fn criterion_7_symmetric_barrier_mean_stays_zero() {
    const REPLICAS: u64 = 25;
    let mut replica_m: Vec<Vec<f64>> = Vec::new();
    for r in 0..REPLICAS {
        let config = SolverConfig {
            model: ModelSpec {
                drift: Drift::LogBarrier { a: 2.0, k: 2 },
                activation: Activation::Identity,
                j: 1.0,
                sigma: 1.0,
                lambda: 1.0,
            },
            grid: TimeGrid::new(3.0, 0.01).unwrap(),
            law: InitialLaw::Uniform { lo: -1.0, hi: 1.0 },
            paths: 4_000,
            n_iters: 3,
            seed: 707 + r,
            fresh_noise: true,
        };
        replica_m.push(solve_fixed_point(&config).unwrap().state.m);
    }
    let mut worst_ratio = 0.0f64;
    for l in 1..replica_m[0].len() {
        let vals: Vec<f64> = replica_m.iter().map(|m| m[l]).collect();
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        let (mean, se) = stats::mean_se_from_sums(
            stats::pairwise_sum(&vals),
            stats::pairwise_sum(&sq),
            REPLICAS,
        );
        worst_ratio = worst_ratio.max(mean.abs() / se);
    }
    report(
        7,
        worst_ratio <= 3.0,
        &format!("sup_t |m| / SE = {worst_ratio:.3} over 25 replicas (tol 3)"),
    );
}

struct UniversalityCase {
    name: &'static str,
    stats: EmpiricalStats,
}

fn universality_networks(n: usize, grid: &TimeGrid, model: &ModelSpec) -> Vec<UniversalityCase> {
    let law = InitialLaw::PointMass { x0: 0.0 };
    // Above the dense-storage cutoff Gaussian weights default to lazy
    // regeneration, which trades memory for a large slowdown; this run fits
    // in memory, so force the dense layout.
    let gauss = sample_weights_gaussian(n, model.j, model.sigma, 881)
        .unwrap()
        .into_dense();
    let batch = simulate_network(model, &gauss, grid, &law, 91).unwrap();
    let g_stats = empirical_stats(&batch, model);
    drop(batch);
    drop(gauss);
    let bern = sample_weights_bernoulli(n, model.j, model.sigma, 0.25, 882).unwrap();
    let batch = simulate_network(model, &bern, grid, &law, 92).unwrap();
    let b_stats = empirical_stats(&batch, model);
    vec![
        UniversalityCase {
            name: "gaussian",
            stats: g_stats,
        },
        UniversalityCase {
            name: "bernoulli p=0.25",
            stats: b_stats,
        },
    ]
}

fn check_universality(n: usize, meanfield_paths: usize, n_iters: usize) {
    let grid = TimeGrid::new(10.0, 0.04).unwrap();
    let model = h_model(Activation::Sigmoid01, 1.0, 1.0, 1.0);
    let config = SolverConfig {
        model,
        grid,
        law: InitialLaw::PointMass { x0: 0.0 },
        paths: meanfield_paths,
        n_iters,
        seed: 808,
        fresh_noise: true,
    };
    let mf = solve_fixed_point(&config).unwrap();
    let points = grid.num_points();
    let mut detail = format!("N={n}, P={meanfield_paths}:");
    let mut pass = true;
    for case in universality_networks(n, &grid, &config.model) {
        let est = &case.stats;
        let mut m_within = 0usize;
        let mut k_within = 0usize;
        for l in 0..points {
            let m_band = 3.0 * (est.se_m[l].powi(2) + mf.state.se_m[l].powi(2)).sqrt();
            if (est.m[l] - mf.state.m[l]).abs() <= m_band {
                m_within += 1;
            }
            let k_band =
                3.0 * (est.se_k.get(l, l).powi(2) + mf.state.se_k.get(l, l).powi(2)).sqrt();
            if (est.k.get(l, l) - mf.state.k.get(l, l)).abs() <= k_band {
                k_within += 1;
            }
        }
        let m_frac = m_within as f64 / points as f64;
        let k_frac = k_within as f64 / points as f64;
        pass &= m_frac >= 0.95 && k_frac >= 0.95;
        detail.push_str(&format!(
            " {} mean {:.1}% diag {:.1}%;",
            case.name,
            100.0 * m_frac,
            100.0 * k_frac
        ));
    }
    report(8, pass, &format!("{detail} (need >= 95% within 3x combined SE)"));
}

/// 8. A finite network of N >= 1e4 neurons with Gaussian or Bernoulli
///    weights matches the mean-field mean and kernel diagonal within 3x
///    combined SE at >= 95% of grid points; the weight law does not matter.
#[test]
fn criterion_8_finite_network_universality() {
    check_universality(10_000, 40_000, 6);
}

/// Full-scale variant of criterion 8 at figure-reproduction size.
#[test]
#[ignore = "tens of minutes; run with --ignored for the full-scale gate"]
fn criterion_8_finite_network_universality_full_scale() {
    check_universality(30_000, 100_000, 8);
}

/// 9. On every solver-produced kernel, over every time prefix: the
///    Hilbert-Schmidt norm never exceeds the trace norm, and conditioning
///    never increases the trace norm, both up to 1e-8.
#[test]
fn criterion_9_norm_inequalities_on_solver_kernels() {
    let configs = vec![
        SolverConfig {
            model: h_model(Activation::Sigmoid01, 1.0, 1.2, 0.8),
            grid: TimeGrid::new(1.5, 0.03).unwrap(),
            law: InitialLaw::PointMass { x0: 0.0 },
            paths: 1500,
            n_iters: 3,
            seed: 909,
            fresh_noise: true,
        },
        SolverConfig {
            model: ModelSpec {
                drift: Drift::LogBarrier { a: 2.0, k: 2 },
                activation: Activation::Identity,
                j: 1.0,
                sigma: 1.0,
                lambda: 1.0,
            },
            grid: TimeGrid::new(1.0, 0.02).unwrap(),
            law: InitialLaw::Uniform { lo: -1.0, hi: 1.0 },
            paths: 1500,
            n_iters: 3,
            seed: 910,
            fresh_noise: true,
        },
    ];
    let mut worst_hs = f64::NEG_INFINITY;
    let mut worst_cond = f64::NEG_INFINITY;
    let mut check_state = |state: &FixedPointState, lambda: f64| {
        let n = state.k.n();
        let family = KtildeFamily::build(&state.k, lambda).unwrap();
        for upto in [n / 4, n / 2, 3 * n / 4, n] {
            worst_hs = worst_hs.max(state.k.hs_norm(upto) - state.k.trace_norm(upto));
            worst_cond = worst_cond.max(family.trace_norm(upto) - state.k.trace_norm(upto));
        }
    };
    for config in &configs {
        let mut out = seed_state(config).unwrap();
        check_state(&out.state, config.model.lambda);
        for iteration in 1..=config.n_iters {
            out = lambda_step(&out.state, config, iteration).unwrap();
            check_state(&out.state, config.model.lambda);
        }
    }
    report(
        9,
        worst_hs <= 1e-8 && worst_cond <= 1e-8,
        &format!(
            "max hs - trace = {worst_hs:.3e}, max conditioned - plain trace = {worst_cond:.3e} (tol 1e-8)"
        ),
    );
}
