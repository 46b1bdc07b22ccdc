//! Closed forms for the constant activation f == 1 (relaxation drift with
//! alpha = 1). With f frozen at 1 the mean-field system decouples: the
//! conditioned kernel, the resolvent, the interaction-noise variance and the
//! state mean/variance all have explicit expressions, and the law of the
//! state equals both an "annealed" single SDE and a "quenched" SDE with a
//! frozen Gaussian gain. These are the oracles the solver is validated
//! against.

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::model::InitialLaw;
use crate::par;
use crate::rng;
use crate::stats::SeriesStats;

/// Conditioned kernel at matching times: sigma^2 lambda^2 / (lambda^2 + sigma^2 t).
pub fn ktilde_f1(t: f64, sigma: f64, lambda: f64) -> f64 {
    sigma * sigma * lambda * lambda / (lambda * lambda + sigma * sigma * t)
}

/// Resolvent of the conditioned family kernel kappa(t,s) = ktilde_f1(t)/lambda^2:
/// depends only on the earlier time, sigma^2 / (lambda^2 + sigma^2 s) for s <= t.
pub fn h_f1(t: f64, s: f64, sigma: f64, lambda: f64) -> f64 {
    if s > t {
        return 0.0;
    }
    sigma * sigma / (lambda * lambda + sigma * sigma * s)
}

/// State mean with alpha = 1: m(t) = J + (m0 - J) e^{-t}.
pub fn mean_f1(t: f64, j: f64, m0: f64) -> f64 {
    j + (m0 - j) * (-t).exp()
}

/// State variance with alpha = 1 and frozen gain variance var_g:
/// var_g + lambda^2/2 - 2 var_g e^{-t} + (var_g + var_x0 - lambda^2/2) e^{-2t}.
pub fn var_f1(t: f64, var_g: f64, var_x0: f64, lambda: f64) -> f64 {
    let l2h = lambda * lambda / 2.0;
    var_g + l2h - 2.0 * var_g * (-t).exp() + (var_g + var_x0 - l2h) * (-2.0 * t).exp()
}

/// Variance of the accumulated interaction drift at time t: t sigma^4 / (lambda^2 + sigma^2 t).
pub fn effective_var_f1(t: f64, sigma: f64, lambda: f64) -> f64 {
    t * sigma.powi(4) / (lambda * lambda + sigma * sigma * t)
}

/// Variance of the interaction noise C_t: t (lambda^2 + sigma^2 t).
pub fn var_c_f1(t: f64, sigma: f64, lambda: f64) -> f64 {
    t * (lambda * lambda + sigma * sigma * t)
}

/// Statistics of a scalar Monte Carlo ensemble plus a few leading
/// trajectories for plotting.
#[derive(Debug, Clone)]
pub struct F1Ensemble {
    pub stats: SeriesStats,
    pub sample_paths: Vec<Vec<f64>>,
}

/// Monte Carlo of the annealed dynamics
/// dX = (-X + J + lambda sigma^2 Z_t) dt + lambda dW,  Z_t = int_0^t dW_s/(lambda^2+sigma^2 s),
/// driven by one Brownian motion per path. Z is integrated with the midpoint
/// rule (denominator at t + dt/2, drift sees the half-updated Z): the plain
/// left-point Euler leaves an O(dt) gap of about dt/(lambda^2+sigma^2 t)
/// between this variance curve and the quenched one, while the midpoint
/// scheme matches the quenched recursion's second moments to O(dt^2),
/// uniformly in t.
pub fn simulate_annealed(
    j: f64,
    sigma: f64,
    lambda: f64,
    grid: &TimeGrid,
    law: &InitialLaw,
    paths: usize,
    seed: u64,
) -> Result<F1Ensemble> {
    simulate_curve(grid, paths, |p, dw| {
        let mut x = law.sample(seed, rng::purpose::INIT, p);
        let mut z = 0.0;
        let dt = grid.dt();
        let mut out = Vec::with_capacity(grid.num_points());
        out.push(x);
        for (l, w) in dw.iter().enumerate() {
            let t_mid = (l as f64 + 0.5) * dt;
            let dz = w / (lambda * lambda + sigma * sigma * t_mid);
            x += (-x + j + lambda * sigma * sigma * (z + 0.5 * dz)) * dt + lambda * w;
            z += dz;
            out.push(x);
        }
        out
    }, seed)
}

/// Monte Carlo of the quenched dynamics dX = (-X + G) dt + lambda dB with a
/// per-path frozen gain G ~ N(J, sigma^2).
pub fn simulate_quenched(
    j: f64,
    sigma: f64,
    lambda: f64,
    grid: &TimeGrid,
    law: &InitialLaw,
    paths: usize,
    seed: u64,
) -> Result<F1Ensemble> {
    simulate_curve(grid, paths, |p, dw| {
        let mut x = law.sample(seed, rng::purpose::INIT, p);
        let g = j + sigma * rng::normal(seed, rng::purpose::QUENCHED_GAIN, p, 0);
        let dt = grid.dt();
        let mut out = Vec::with_capacity(grid.num_points());
        out.push(x);
        for w in dw {
            x += (-x + g) * dt + lambda * w;
            out.push(x);
        }
        out
    }, seed)
}

fn simulate_curve(
    grid: &TimeGrid,
    paths: usize,
    path_fn: impl Fn(u64, &[f64]) -> Vec<f64> + Sync,
    seed: u64,
) -> Result<F1Ensemble> {
    let n = grid.num_points();
    let steps = grid.steps();
    let sqrt_dt = grid.dt().sqrt();
    let (s1, s2, samples) = par::run_chunked(
        paths,
        64,
        |_, range| {
            let mut s1 = vec![0.0; n];
            let mut s2 = vec![0.0; n];
            let mut samples: Vec<Vec<f64>> = Vec::new();
            let mut dw = vec![0.0; steps];
            for p in range {
                for (l, w) in dw.iter_mut().enumerate() {
                    *w = sqrt_dt * rng::normal(seed, rng::purpose::PATH_NOISE, p as u64, l as u64);
                }
                let xs = path_fn(p as u64, &dw);
                for (l, &x) in xs.iter().enumerate() {
                    s1[l] += x;
                    s2[l] += x * x;
                }
                if p < 4 {
                    samples.push(xs);
                }
            }
            (s1, s2, samples)
        },
        |(mut a1, mut a2, mut ap), (b1, b2, bp)| {
            for (x, y) in a1.iter_mut().zip(&b1) {
                *x += y;
            }
            for (x, y) in a2.iter_mut().zip(&b2) {
                *x += y;
            }
            ap.extend(bp);
            (a1, a2, ap)
        },
    )
    .unwrap_or((vec![0.0; n], vec![0.0; n], Vec::new()));
    Ok(F1Ensemble {
        stats: SeriesStats::from_sums(&s1, &s2, paths as u64),
        sample_paths: samples,
    })
}
