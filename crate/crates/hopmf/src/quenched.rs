//! Finite-N coupled network with quenched synaptic weights:
//!
//!   dX_i = ( g(X_i) + sum_j J_ij f(X_j) ) dt + lambda dW_i.
//!
//! Weights are sampled once and fixed. Entries are a pure function of
//! (seed, i, j), so the three storage strategies (dense, regenerate-per-use
//! Gaussian, sparse Bernoulli) realize the same matrix; dense storage is the
//! default up to `DENSE_LIMIT` neurons.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::DiscreteKernel;
use crate::model::{InitialLaw, ModelSpec, TrajectoryBatch, WALL_EVENT_BUDGET};
use crate::par;
use crate::rng;
use crate::stats::{self, SeriesStats};

/// Above this neuron count the samplers switch to storage-free strategies.
pub const DENSE_LIMIT: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSampler {
    Gaussian,
    Bernoulli { p: f64 },
    /// Matrix supplied entry by entry (tests, degenerate cases).
    Explicit,
}

#[derive(Debug, Clone)]
enum Store {
    /// Row-major n*n values.
    Dense(Vec<f64>),
    /// Entries recomputed from the seed on every use.
    LazyGaussian,
    /// Positions drawn as "success" per row (sorted), plus the two values.
    SparseBernoulli { row_start: Vec<usize>, hits: Vec<u32> },
}

#[derive(Debug, Clone)]
pub struct WeightMatrix {
    n: usize,
    j: f64,
    sigma: f64,
    seed: u64,
    sampler: WeightSampler,
    store: Store,
}

/// Two-point support values of the centered Bernoulli sampler:
/// success value J/N + (sigma/sqrt N) sqrt((1-p)/p), failure value
/// J/N - (sigma/sqrt N) sqrt(p/(1-p)). Mean J/N and variance sigma^2/N exactly.
pub fn bernoulli_support(n: usize, j: f64, sigma: f64, p: f64) -> (f64, f64) {
    let base = j / n as f64;
    let scale = sigma / (n as f64).sqrt();
    let v1 = base + scale * ((1.0 - p) / p).sqrt();
    let v0 = base - scale * (p / (1.0 - p)).sqrt();
    (v0, v1)
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn connectivity_strength(&self) -> f64 {
        self.j
    }

    pub fn disorder_strength(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sampler(&self) -> WeightSampler {
        self.sampler
    }

    pub fn storage_name(&self) -> &'static str {
        match self.store {
            Store::Dense(_) => "dense",
            Store::LazyGaussian => "lazy-gaussian",
            Store::SparseBernoulli { .. } => "sparse-bernoulli",
        }
    }

    fn gaussian_entry(&self, i: usize, jdx: usize) -> f64 {
        self.j / self.n as f64
            + self.sigma / (self.n as f64).sqrt()
                * rng::normal(self.seed, rng::purpose::WEIGHTS_GAUSSIAN, i as u64, jdx as u64)
    }

    /// J_ij, independent of the storage strategy.
    pub fn entry(&self, i: usize, jdx: usize) -> f64 {
        assert!(i < self.n && jdx < self.n);
        match &self.store {
            Store::Dense(data) => data[i * self.n + jdx],
            Store::LazyGaussian => self.gaussian_entry(i, jdx),
            Store::SparseBernoulli { row_start, hits } => {
                let p = match self.sampler {
                    WeightSampler::Bernoulli { p } => p,
                    _ => unreachable!("sparse store only built for Bernoulli"),
                };
                let (v0, v1) = bernoulli_support(self.n, self.j, self.sigma, p);
                let row = &hits[row_start[i]..row_start[i + 1]];
                if row.binary_search(&(jdx as u32)).is_ok() {
                    v1
                } else {
                    v0
                }
            }
        }
    }

    /// Interaction vector S = W f, pairwise-summed per row, parallel over rows.
    pub fn matvec(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n);
        let n = self.n;
        match &self.store {
            Store::Dense(data) => par::run_chunked(
                n,
                64,
                |_, range| {
                    range
                        .map(|i| stats::pairwise_dot(&data[i * n..(i + 1) * n], f))
                        .collect::<Vec<f64>>()
                },
                concat,
            )
            .unwrap_or_default(),
            Store::LazyGaussian => par::run_chunked(
                n,
                64,
                |_, range| {
                    let mut scratch = vec![0.0; n];
                    let mut out = Vec::with_capacity(range.len());
                    for i in range {
                        for (jdx, slot) in scratch.iter_mut().enumerate() {
                            *slot = self.gaussian_entry(i, jdx);
                        }
                        out.push(stats::pairwise_dot(&scratch, f));
                    }
                    out
                },
                concat,
            )
            .unwrap_or_default(),
            Store::SparseBernoulli { row_start, hits } => {
                let p = match self.sampler {
                    WeightSampler::Bernoulli { p } => p,
                    _ => unreachable!(),
                };
                let (v0, v1) = bernoulli_support(n, self.j, self.sigma, p);
                let total = stats::pairwise_sum(f);
                par::run_chunked(
                    n,
                    64,
                    |_, range| {
                        let mut scratch = Vec::new();
                        let mut out = Vec::with_capacity(range.len());
                        for i in range {
                            let row = &hits[row_start[i]..row_start[i + 1]];
                            scratch.clear();
                            scratch.extend(row.iter().map(|&jdx| f[jdx as usize]));
                            let hit_sum = stats::pairwise_sum(&scratch);
                            out.push(v0 * total + (v1 - v0) * hit_sum);
                        }
                        out
                    },
                    concat,
                )
                .unwrap_or_default()
            }
        }
    }

    /// Grand mean and unbiased sample variance over all n^2 entries.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.n;
        let (s1, s2) = par::run_chunked(
            n,
            64,
            |_, range| {
                let mut scratch = vec![0.0; n];
                let mut sq = vec![0.0; n];
                let (mut a, mut b) = (0.0, 0.0);
                for i in range {
                    for jdx in 0..n {
                        let v = self.entry(i, jdx);
                        scratch[jdx] = v;
                        sq[jdx] = v * v;
                    }
                    a += stats::pairwise_sum(&scratch);
                    b += stats::pairwise_sum(&sq);
                }
                (a, b)
            },
            |x, y| (x.0 + y.0, x.1 + y.1),
        )
        .unwrap_or((0.0, 0.0));
        let count = (n * n) as f64;
        let mean = s1 / count;
        let var = ((s2 - s1 * s1 / count) / (count - 1.0)).max(0.0);
        (mean, var)
    }

    /// Materializes the matrix into dense storage (entries are unchanged).
    pub fn into_dense(self) -> WeightMatrix {
        if matches!(self.store, Store::Dense(_)) {
            return self;
        }
        let n = self.n;
        let data = par::run_chunked(
            n,
            64,
            |_, range| {
                let mut rows = Vec::with_capacity(range.len() * n);
                for i in range {
                    rows.extend((0..n).map(|jdx| self.entry(i, jdx)));
                }
                rows
            },
            concat,
        )
        .unwrap_or_default();
        WeightMatrix {
            store: Store::Dense(data),
            ..self
        }
    }

    /// Switches a Gaussian matrix to regenerate-per-use storage.
    pub fn into_lazy(self) -> Result<WeightMatrix> {
        if self.sampler != WeightSampler::Gaussian {
            return Err(Error::invalid(
                "weights",
                "only Gaussian matrices support lazy storage",
            ));
        }
        Ok(WeightMatrix {
            store: Store::LazyGaussian,
            ..self
        })
    }

    /// Switches a Bernoulli matrix to sparse success-position storage.
    pub fn into_sparse(self) -> Result<WeightMatrix> {
        let p = match self.sampler {
            WeightSampler::Bernoulli { p } => p,
            _ => {
                return Err(Error::invalid(
                    "weights",
                    "only Bernoulli matrices support sparse storage",
                ))
            }
        };
        Ok(WeightMatrix {
            store: build_sparse(self.n, self.seed, p),
            ..self
        })
    }
}

fn concat(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    a.extend(b);
    a
}

fn build_sparse(n: usize, seed: u64, p: f64) -> Store {
    let rows: Vec<Vec<u32>> = par::map_indexed(n, |i| {
        (0..n)
            .filter(|&jdx| rng::uniform(seed, rng::purpose::WEIGHTS_BERNOULLI, i as u64, jdx as u64) < p)
            .map(|jdx| jdx as u32)
            .collect()
    });
    let mut row_start = Vec::with_capacity(n + 1);
    let mut hits = Vec::new();
    row_start.push(0);
    for row in rows {
        hits.extend(row);
        row_start.push(hits.len());
    }
    Store::SparseBernoulli { row_start, hits }
}

/// N^2 i.i.d. draws from N(J/N, sigma^2/N), deterministic in the seed.
pub fn sample_weights_gaussian(n: usize, j: f64, sigma: f64, seed: u64) -> Result<WeightMatrix> {
    if n < 2 {
        return Err(Error::invalid("n", format!("need at least 2 neurons, got {n}")));
    }
    let mut w = WeightMatrix {
        n,
        j,
        sigma,
        seed,
        sampler: WeightSampler::Gaussian,
        store: Store::LazyGaussian,
    };
    if n <= DENSE_LIMIT {
        w = w.into_dense();
    }
    Ok(w)
}

/// Centered two-point draws with exact mean J/N and variance sigma^2/N.
pub fn sample_weights_bernoulli(
    n: usize,
    j: f64,
    sigma: f64,
    p: f64,
    seed: u64,
) -> Result<WeightMatrix> {
    if n < 2 {
        return Err(Error::invalid("n", format!("need at least 2 neurons, got {n}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(
            "p",
            format!("success probability must lie strictly in (0, 1), got {p}"),
        ));
    }
    let w = WeightMatrix {
        n,
        j,
        sigma,
        seed,
        sampler: WeightSampler::Bernoulli { p },
        store: build_sparse(n, seed, p),
    };
    Ok(if n <= DENSE_LIMIT { w.into_dense() } else { w })
}

/// Fully specified matrix (used for degenerate and hand-built cases).
pub fn weights_from_dense(n: usize, j: f64, sigma: f64, data: Vec<f64>) -> Result<WeightMatrix> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one neuron"));
    }
    if data.len() != n * n {
        return Err(Error::invalid(
            "data",
            format!("expected {} entries, got {}", n * n, data.len()),
        ));
    }
    Ok(WeightMatrix {
        n,
        j,
        sigma,
        seed: 0,
        sampler: WeightSampler::Explicit,
        store: Store::Dense(data),
    })
}

/// Euler-Maruyama on the N coupled equations. The interaction term uses the
/// activation vector of step l (all reads see step-l state). Noise and
/// initial draws use the same purposes as the uncoupled simulator, so a
/// single neuron with zero weights reproduces it exactly.
pub fn simulate_network(
    model: &ModelSpec,
    weights: &WeightMatrix,
    grid: &TimeGrid,
    law: &InitialLaw,
    seed: u64,
) -> Result<TrajectoryBatch> {
    model.validate()?;
    model.validate_initial_law(law)?;
    let n = weights.n();
    let num_points = grid.num_points();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut values = vec![0.0; n * num_points];
    let mut x: Vec<f64> = (0..n)
        .map(|i| law.sample(seed, rng::purpose::INIT, i as u64))
        .collect();
    for (i, &xi) in x.iter().enumerate() {
        values[i * num_points] = xi;
    }
    let mut f_vec = vec![0.0; n];
    let mut exits: u64 = 0;
    let mut first_nan: Option<(usize, usize)> = None;
    for l in 0..grid.steps() {
        for (fv, &xi) in f_vec.iter_mut().zip(&x) {
            *fv = model.activation.apply(xi);
        }
        let s = weights.matvec(&f_vec);
        for i in 0..n {
            let dw = sqrt_dt * rng::normal(seed, rng::purpose::PATH_NOISE, i as u64, l as u64);
            x[i] += (model.drift_value(x[i]) + s[i]) * dt + model.lambda * dw;
            if let Some(clamped) = model.clamp_to_domain(x[i]) {
                x[i] = clamped;
                exits += 1;
            }
            if !x[i].is_finite() && first_nan.is_none() {
                first_nan = Some((i, l));
            }
            values[i * num_points + l + 1] = x[i];
        }
        if let Some((i, l)) = first_nan {
            return Err(Error::NonFinite { path: i, step: l });
        }
    }
    let total = (n * grid.steps()) as u64;
    if exits as f64 > WALL_EVENT_BUDGET * total as f64 {
        return Err(Error::BoundaryExits { events: exits, total });
    }
    Ok(TrajectoryBatch::new(
        *grid,
        n,
        seed,
        rng::purpose::PATH_NOISE,
        values,
    ))
}

/// Empirical statistics of a network run, in the same shape as the
/// mean-field state so the two can be diffed column by column:
/// m(t) = (1/N) sum_i f(X_i(t)), K(t,s) = (sigma^2/N) sum_i f(X_i(t)) f(X_i(s)).
#[derive(Debug, Clone)]
pub struct EmpiricalStats {
    pub m: Vec<f64>,
    pub se_m: Vec<f64>,
    pub k: DiscreteKernel,
    pub se_k: DiscreteKernel,
    /// Mean/variance of the states X_i themselves, across neurons.
    pub x_stats: SeriesStats,
    pub neurons: usize,
}

pub fn empirical_stats(batch: &TrajectoryBatch, model: &ModelSpec) -> EmpiricalStats {
    let n = batch.grid().num_points();
    let neurons = batch.paths();
    let tri = n * (n + 1) / 2;
    struct Acc {
        sum_f: Vec<f64>,
        sum_f2: Vec<f64>,
        sum_x: Vec<f64>,
        sum_x2: Vec<f64>,
        sum_ff: Vec<f64>,
        sum_ff2: Vec<f64>,
    }
    let acc = par::run_chunked(
        neurons,
        64,
        |_, range| {
            let mut acc = Acc {
                sum_f: vec![0.0; n],
                sum_f2: vec![0.0; n],
                sum_x: vec![0.0; n],
                sum_x2: vec![0.0; n],
                sum_ff: vec![0.0; tri],
                sum_ff2: vec![0.0; tri],
            };
            let mut fs = vec![0.0; n];
            for i in range {
                let path = batch.path(i);
                for l in 0..n {
                    let xv = path[l];
                    let fv = model.activation.apply(xv);
                    fs[l] = fv;
                    acc.sum_f[l] += fv;
                    acc.sum_f2[l] += fv * fv;
                    acc.sum_x[l] += xv;
                    acc.sum_x2[l] += xv * xv;
                }
                for a in 0..n {
                    let fa = fs[a];
                    let base = a * (a + 1) / 2;
                    for (b, &fb) in fs[..=a].iter().enumerate() {
                        let prod = fa * fb;
                        acc.sum_ff[base + b] += prod;
                        acc.sum_ff2[base + b] += prod * prod;
                    }
                }
            }
            acc
        },
        |mut a, b| {
            for (x, y) in a.sum_f.iter_mut().zip(&b.sum_f) {
                *x += y;
            }
            for (x, y) in a.sum_f2.iter_mut().zip(&b.sum_f2) {
                *x += y;
            }
            for (x, y) in a.sum_x.iter_mut().zip(&b.sum_x) {
                *x += y;
            }
            for (x, y) in a.sum_x2.iter_mut().zip(&b.sum_x2) {
                *x += y;
            }
            for (x, y) in a.sum_ff.iter_mut().zip(&b.sum_ff) {
                *x += y;
            }
            for (x, y) in a.sum_ff2.iter_mut().zip(&b.sum_ff2) {
                *x += y;
            }
            a
        },
    )
    .expect("at least one neuron");
    let count = neurons as u64;
    let sigma2 = model.sigma * model.sigma;
    let mut m = Vec::with_capacity(n);
    let mut se_m = Vec::with_capacity(n);
    for l in 0..n {
        let (mean, se) = stats::mean_se_from_sums(acc.sum_f[l], acc.sum_f2[l], count);
        m.push(mean);
        se_m.push(se);
    }
    let mut kdata = vec![0.0; n * n];
    let mut sedata = vec![0.0; n * n];
    for a in 0..n {
        let base = a * (a + 1) / 2;
        for b in 0..=a {
            let (mean, se) = stats::mean_se_from_sums(acc.sum_ff[base + b], acc.sum_ff2[base + b], count);
            kdata[a * n + b] = sigma2 * mean;
            kdata[b * n + a] = sigma2 * mean;
            sedata[a * n + b] = sigma2 * se;
            sedata[b * n + a] = sigma2 * se;
        }
    }
    let dt = batch.grid().dt();
    EmpiricalStats {
        m,
        se_m,
        k: DiscreteKernel::from_raw(n, dt, kdata).expect("square data"),
        se_k: DiscreteKernel::from_raw(n, dt, sedata).expect("square data"),
        x_stats: SeriesStats::from_sums(&acc.sum_x, &acc.sum_x2, count),
        neurons,
    }
}

/// Kolmogorov-Smirnov comparison of the terminal states of even- versus
/// odd-indexed neurons. Under exchangeable weights the two samples share a
/// law; the p-value is a diagnostic (neurons are correlated through the
/// weights, so it is not a calibrated test).
pub fn exchangeability_diagnostic(batch: &TrajectoryBatch) -> (f64, f64) {
    let last = batch.grid().num_points() - 1;
    let even: Vec<f64> = (0..batch.paths()).step_by(2).map(|i| batch.x(i, last)).collect();
    let odd: Vec<f64> = (1..batch.paths()).step_by(2).map(|i| batch.x(i, last)).collect();
    stats::ks_two_sample(&even, &odd)
}
