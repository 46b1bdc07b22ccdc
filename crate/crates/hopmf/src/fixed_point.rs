//! Picard iteration of the mean-field map: given the current mean function m
//! and covariance kernel K, simulate P interacting-free trajectories driven by
//! the conditioned kernel of K, then re-estimate
//!
//!   m'(t) = E[f(X_t)],   K'(t,s) = sigma^2 E[f(X_t) f(X_s)],
//!
//! with per-entry standard errors. Iterating from the uncoupled dynamics
//! converges to the mean-field law when the map contracts.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{DiscreteKernel, KtildeFamily, LowerTriangularKernel};
use crate::model::{InitialLaw, ModelSpec, WALL_EVENT_BUDGET};
use crate::par;
use crate::rng;
use crate::stats::SeriesStats;
use crate::volterra;

/// Number of leading trajectories captured for plotting/output.
const SAMPLE_PATHS: usize = 4;
/// Fixed chunk count: the reduction tree depends only on the path count.
const CHUNKS: usize = 64;

/// Mean function and covariance kernel estimate after some iteration.
#[derive(Debug, Clone)]
pub struct FixedPointState {
    grid: TimeGrid,
    /// Activation mean E[f(X_t)] at every grid point.
    pub m: Vec<f64>,
    pub se_m: Vec<f64>,
    /// sigma^2 E[f(X_t) f(X_s)] on the full grid.
    pub k: DiscreteKernel,
    /// Per-entry standard errors of `k`.
    pub se_k: DiscreteKernel,
    pub iteration: usize,
    pub paths: usize,
}

impl FixedPointState {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub law: InitialLaw,
    /// Trajectories per iteration (at least 100).
    pub paths: usize,
    /// Picard iterations (at least 1).
    pub n_iters: usize,
    pub seed: u64,
    /// Fresh Brownian draws per iteration (default). With `false` every
    /// iteration reuses the seeding noise: common random numbers.
    pub fresh_noise: bool,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.validate_initial_law(&self.law)?;
        if self.paths < 100 {
            return Err(Error::invalid(
                "paths",
                format!("need at least 100 trajectories, got {}", self.paths),
            ));
        }
        if self.n_iters == 0 {
            return Err(Error::invalid("n_iters", "need at least one iteration"));
        }
        Ok(())
    }

    fn noise_purpose(&self, iteration: usize) -> u64 {
        let it = if self.fresh_noise { iteration as u64 } else { 0 };
        rng::purpose::at_iteration(rng::purpose::PATH_NOISE, it)
    }

    fn init_purpose(&self, iteration: usize) -> u64 {
        let it = if self.fresh_noise { iteration as u64 } else { 0 };
        rng::purpose::at_iteration(rng::purpose::INIT, it)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Distance d_T to the previous state.
    pub distance: f64,
    pub sup_dm: f64,
    pub sup_dk: f64,
    pub boundary_exits: u64,
    pub wall_seconds: f64,
}

/// One application of the map: the new state plus the trajectory-level
/// statistics of the ensemble that produced it.
#[derive(Debug, Clone)]
pub struct LambdaStepOutput {
    pub state: FixedPointState,
    /// Mean/variance of the state X_t itself (not the activation).
    pub x_stats: SeriesStats,
    pub sample_paths: Vec<Vec<f64>>,
    pub boundary_exits: u64,
}

#[derive(Debug)]
pub struct FixedPointRun {
    pub state: FixedPointState,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub x_stats: SeriesStats,
    pub sample_paths: Vec<Vec<f64>>,
    /// Conditioned family of the final kernel.
    pub ktilde: KtildeFamily,
}

/// L2-type distance between states on [0, T), left-endpoint quadrature:
/// sqrt( dt sum_l (m1-m2)^2 + dt^2 sum_{l,j} (K1-K2)^2 ).
pub fn distance(a: &FixedPointState, b: &FixedPointState) -> f64 {
    assert_eq!(a.grid, b.grid, "states live on different grids");
    let lsteps = a.grid.steps();
    let dt = a.grid.dt();
    let mut dm2 = 0.0;
    for l in 0..lsteps {
        let d = a.m[l] - b.m[l];
        dm2 += d * d;
    }
    let mut dk2 = 0.0;
    for i in 0..lsteps {
        for j in 0..lsteps {
            let d = a.k.get(i, j) - b.k.get(i, j);
            dk2 += d * d;
        }
    }
    (dt * dm2 + dt * dt * dk2).sqrt()
}

/// Initial state: statistics of the uncoupled dynamics dX = g(X) dt + lambda dW.
pub fn seed_state(config: &SolverConfig) -> Result<LambdaStepOutput> {
    config.validate()?;
    let accum = run_ensemble(
        &config.grid,
        |x| config.model.drift_value(x),
        |x| config.model.activation.apply(x),
        EnsembleParams {
            j: 0.0,
            lambda: config.model.lambda,
            law: config.law,
            clamp: wall_of(&config.model),
            paths: config.paths,
            seed: config.seed,
            noise_purpose: config.noise_purpose(0),
            init_purpose: config.init_purpose(0),
        },
        None,
        None,
    )?;
    Ok(assemble(accum, config, 0))
}

/// One application of the mean-field map to `state`.
pub fn lambda_step(
    state: &FixedPointState,
    config: &SolverConfig,
    iteration: usize,
) -> Result<LambdaStepOutput> {
    config.validate()?;
    assert_eq!(state.grid, config.grid, "state grid differs from config grid");
    state.k.validate_psd()?;
    let family = KtildeFamily::build(&state.k, config.model.lambda)?;
    let kappa = family.to_volterra();
    let accum = run_ensemble(
        &config.grid,
        |x| config.model.drift_value(x),
        |x| config.model.activation.apply(x),
        EnsembleParams {
            j: config.model.j,
            lambda: config.model.lambda,
            law: config.law,
            clamp: wall_of(&config.model),
            paths: config.paths,
            seed: config.seed,
            noise_purpose: config.noise_purpose(iteration),
            init_purpose: config.init_purpose(iteration),
        },
        Some(&state.m),
        Some(&kappa),
    )?;
    Ok(assemble(accum, config, iteration))
}

/// Picard iteration from the uncoupled seed, with a divergence guard.
pub fn solve_fixed_point(config: &SolverConfig) -> Result<FixedPointRun> {
    let seeded = seed_state(config)?;
    let mut state = seeded.state;
    let mut last = LastOutput {
        x_stats: seeded.x_stats,
        sample_paths: seeded.sample_paths,
    };
    let mut diagnostics = Vec::with_capacity(config.n_iters);
    let mut distances = Vec::with_capacity(config.n_iters);
    for iteration in 1..=config.n_iters {
        let t0 = std::time::Instant::now();
        let out = lambda_step(&state, config, iteration)?;
        let d = distance(&out.state, &state);
        let sup_dm = state
            .m
            .iter()
            .zip(&out.state.m)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let sup_dk = state
            .k
            .data()
            .iter()
            .zip(out.state.k.data())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        diagnostics.push(IterationDiagnostics {
            iteration,
            distance: d,
            sup_dm,
            sup_dk,
            boundary_exits: out.boundary_exits,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        distances.push(d);
        if diverging(&distances) {
            return Err(Error::Diverged {
                distances: distances.clone(),
            });
        }
        state = out.state;
        last = LastOutput {
            x_stats: out.x_stats,
            sample_paths: out.sample_paths,
        };
    }
    let ktilde = KtildeFamily::build(&state.k, config.model.lambda)?;
    Ok(FixedPointRun {
        state,
        diagnostics,
        x_stats: last.x_stats,
        sample_paths: last.sample_paths,
        ktilde,
    })
}

struct LastOutput {
    x_stats: SeriesStats,
    sample_paths: Vec<Vec<f64>>,
}

/// Three consecutive distance growths of more than 2x each signal divergence.
fn diverging(distances: &[f64]) -> bool {
    if distances.len() < 4 {
        return false;
    }
    let w = &distances[distances.len() - 4..];
    (0..3).all(|i| w[i + 1] > 2.0 * w[i])
}

fn wall_of(model: &ModelSpec) -> Option<f64> {
    model.clamp_to_domain(f64::INFINITY).map(|w| w.abs())
}

struct EnsembleParams {
    j: f64,
    lambda: f64,
    law: InitialLaw,
    clamp: Option<f64>,
    paths: usize,
    seed: u64,
    noise_purpose: u64,
    init_purpose: u64,
}

struct EnsembleAccum {
    n: usize,
    paths: usize,
    steps: u64,
    sum_f: Vec<f64>,
    sum_f2: Vec<f64>,
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    /// Lower-triangle sums of f_i f_j and (f_i f_j)^2, index i(i+1)/2 + j.
    sum_ff: Vec<f64>,
    sum_ff2: Vec<f64>,
    exits: u64,
    first_nan: Option<(usize, usize)>,
    sample_paths: Vec<Vec<f64>>,
}

impl EnsembleAccum {
    fn zero(n: usize) -> Self {
        let tri = n * (n + 1) / 2;
        EnsembleAccum {
            n,
            paths: 0,
            steps: 0,
            sum_f: vec![0.0; n],
            sum_f2: vec![0.0; n],
            sum_x: vec![0.0; n],
            sum_x2: vec![0.0; n],
            sum_ff: vec![0.0; tri],
            sum_ff2: vec![0.0; tri],
            exits: 0,
            first_nan: None,
            sample_paths: Vec::new(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        self.paths += other.paths;
        self.steps += other.steps;
        for (a, b) in self.sum_f.iter_mut().zip(&other.sum_f) {
            *a += b;
        }
        for (a, b) in self.sum_f2.iter_mut().zip(&other.sum_f2) {
            *a += b;
        }
        for (a, b) in self.sum_x.iter_mut().zip(&other.sum_x) {
            *a += b;
        }
        for (a, b) in self.sum_x2.iter_mut().zip(&other.sum_x2) {
            *a += b;
        }
        for (a, b) in self.sum_ff.iter_mut().zip(&other.sum_ff) {
            *a += b;
        }
        for (a, b) in self.sum_ff2.iter_mut().zip(&other.sum_ff2) {
            *a += b;
        }
        self.exits += other.exits;
        self.first_nan = match (self.first_nan, other.first_nan) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.sample_paths.extend(other.sample_paths);
        self
    }
}

/// Simulates `paths` trajectories of
///   dX = g(X) dt + J m(l dt) dt + dC,   dC_l = lambda dW_l + dt sum_{j<l} kappa(l,j) dC_j,
/// and accumulates activation and state statistics. `kappa` is the
/// already-scaled Volterra kernel (conditioned family / lambda^2); without it
/// the interaction noise degenerates to lambda dW (uncoupled dynamics).
fn run_ensemble(
    grid: &TimeGrid,
    g: impl Fn(f64) -> f64 + Sync,
    f: impl Fn(f64) -> f64 + Sync,
    params: EnsembleParams,
    m_prev: Option<&[f64]>,
    kappa: Option<&LowerTriangularKernel>,
) -> Result<EnsembleAccum> {
    let n = grid.num_points();
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    if let Some(m) = m_prev {
        if m.len() < steps {
            return Err(Error::invalid(
                "m",
                format!("mean function has {} entries, need {steps}", m.len()),
            ));
        }
    }
    if let Some(k) = kappa {
        if k.n() < steps {
            return Err(Error::invalid(
                "kappa",
                format!("kernel has {} rows, need {steps}", k.n()),
            ));
        }
    }

    let accum = par::run_chunked(
        params.paths,
        CHUNKS,
        |_, range| {
            let mut acc = EnsembleAccum::zero(n);
            let mut dw = vec![0.0; steps];
            let mut xs = vec![0.0; n];
            let mut fs = vec![0.0; n];
            for p in range {
                for (l, w) in dw.iter_mut().enumerate() {
                    *w = params.lambda
                        * sqrt_dt
                        * rng::normal(params.seed, params.noise_purpose, p as u64, l as u64);
                }
                let dc: Vec<f64> = match kappa {
                    Some(k) => {
                        volterra::solve_increments(k, None, &dw)
                            .expect("sizes checked above")
                            .increments
                    }
                    None => dw.clone(),
                };
                let mut x = params
                    .law
                    .sample(params.seed, params.init_purpose, p as u64);
                xs[0] = x;
                for l in 0..steps {
                    let mut dx = g(x) * dt + dc[l];
                    if let Some(m) = m_prev {
                        dx += params.j * m[l] * dt;
                    }
                    x += dx;
                    if let Some(wall) = params.clamp {
                        if x.abs() > wall {
                            x = x.clamp(-wall, wall);
                            acc.exits += 1;
                        }
                    }
                    if !x.is_finite() && acc.first_nan.is_none() {
                        acc.first_nan = Some((p, l));
                        x = 0.0; // keep going; the error aborts the whole step
                    }
                    xs[l + 1] = x;
                }
                for l in 0..n {
                    let xv = xs[l];
                    let fv = f(xv);
                    fs[l] = fv;
                    acc.sum_f[l] += fv;
                    acc.sum_f2[l] += fv * fv;
                    acc.sum_x[l] += xv;
                    acc.sum_x2[l] += xv * xv;
                }
                for i in 0..n {
                    let fi = fs[i];
                    let base = i * (i + 1) / 2;
                    let (ff, ff2) = (
                        &mut acc.sum_ff[base..base + i + 1],
                        &mut acc.sum_ff2[base..base + i + 1],
                    );
                    for jdx in 0..=i {
                        let prod = fi * fs[jdx];
                        ff[jdx] += prod;
                        ff2[jdx] += prod * prod;
                    }
                }
                acc.paths += 1;
                acc.steps += steps as u64;
                if p < SAMPLE_PATHS {
                    acc.sample_paths.push(xs.clone());
                }
            }
            acc
        },
        EnsembleAccum::merge,
    )
    .unwrap_or_else(|| EnsembleAccum::zero(n));

    if let Some((p, l)) = accum.first_nan {
        return Err(Error::NonFinite { path: p, step: l });
    }
    if accum.exits as f64 > WALL_EVENT_BUDGET * accum.steps as f64 {
        return Err(Error::BoundaryExits {
            events: accum.exits,
            total: accum.steps,
        });
    }
    Ok(accum)
}

/// Estimators from the accumulated sums.
fn assemble(accum: EnsembleAccum, config: &SolverConfig, iteration: usize) -> LambdaStepOutput {
    let n = accum.n;
    let paths = accum.paths as u64;
    let sigma2 = config.model.sigma * config.model.sigma;
    let mut m = Vec::with_capacity(n);
    let mut se_m = Vec::with_capacity(n);
    for l in 0..n {
        let (mean, se) = crate::stats::mean_se_from_sums(accum.sum_f[l], accum.sum_f2[l], paths);
        m.push(mean);
        se_m.push(se);
    }
    let mut kdata = vec![0.0; n * n];
    let mut sedata = vec![0.0; n * n];
    for i in 0..n {
        let base = i * (i + 1) / 2;
        for j in 0..=i {
            let (mean, se) =
                crate::stats::mean_se_from_sums(accum.sum_ff[base + j], accum.sum_ff2[base + j], paths);
            kdata[i * n + j] = sigma2 * mean;
            kdata[j * n + i] = sigma2 * mean;
            sedata[i * n + j] = sigma2 * se;
            sedata[j * n + i] = sigma2 * se;
        }
    }
    let x_stats = SeriesStats::from_sums(&accum.sum_x, &accum.sum_x2, paths);
    LambdaStepOutput {
        state: FixedPointState {
            grid: config.grid,
            m,
            se_m,
            k: DiscreteKernel::from_raw(n, config.grid.dt(), kdata).expect("square data"),
            se_k: DiscreteKernel::from_raw(n, config.grid.dt(), sedata).expect("square data"),
            iteration,
            paths: accum.paths,
        },
        x_stats,
        sample_paths: accum.sample_paths,
        boundary_exits: accum.exits,
    }
}
