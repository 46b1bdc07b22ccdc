//! Network models on the single-neuron level: relaxation drift with a bounded
//! activation (H variant) or a logarithmic soft-wall drift confining paths to
//! (-A, A) with identity activation (S variant), plus the initial laws and the
//! uncoupled (interaction-free) Euler-Maruyama simulation.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng;

/// Fraction of the wall distance kept as a safety margin when clamping.
pub const WALL_MARGIN: f64 = 1e-6;
/// Budget for clamping events as a fraction of all simulated steps.
pub const WALL_EVENT_BUDGET: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drift {
    /// g(x) = -alpha x, alpha > 0.
    Linear { alpha: f64 },
    /// g(x) = -2 k x / (A^2 - x^2): gradient of the log-barrier potential
    /// -k log(A^2 - x^2); paths live strictly inside (-A, A).
    LogBarrier { a: f64, k: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// (1 + tanh x) / 2, values in (0, 1).
    Sigmoid01,
    Tanh,
    Identity,
    Relu,
    /// f(x) = 1; closed forms are known for this case.
    ConstantOne,
}

impl Activation {
    #[inline(always)]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid01 => 0.5 * (1.0 + x.tanh()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::ConstantOne => 1.0,
        }
    }

    /// Sup-norm bound when one exists; interaction estimates scale with it.
    pub fn bound(self) -> Option<f64> {
        match self {
            Activation::Sigmoid01 | Activation::Tanh | Activation::ConstantOne => Some(1.0),
            Activation::Identity | Activation::Relu => None,
        }
    }

    /// Odd activations keep symmetric laws symmetric.
    pub fn is_odd(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Identity)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid01 => "sigmoid01",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::ConstantOne => "constant_one",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigmoid01" => Ok(Activation::Sigmoid01),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "constant_one" => Ok(Activation::ConstantOne),
            other => Err(Error::invalid(
                "activation",
                format!("unknown activation `{other}`"),
            )),
        }
    }
}

/// Law of the initial state X_0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLaw {
    PointMass { x0: f64 },
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InitialLaw {
    pub fn is_symmetric(&self) -> bool {
        match *self {
            InitialLaw::PointMass { x0 } => x0 == 0.0,
            InitialLaw::Gaussian { mean, .. } => mean == 0.0,
            InitialLaw::Uniform { lo, hi } => lo == -hi,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::PointMass { x0 } => x0,
            InitialLaw::Gaussian { mean, .. } => mean,
            InitialLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            InitialLaw::PointMass { .. } => 0.0,
            InitialLaw::Gaussian { std, .. } => std * std,
            InitialLaw::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
        }
    }

    pub fn sample(&self, seed: u64, purpose: u64, stream: u64) -> f64 {
        match *self {
            InitialLaw::PointMass { x0 } => x0,
            InitialLaw::Gaussian { mean, std } => mean + std * rng::normal(seed, purpose, stream, 0),
            InitialLaw::Uniform { lo, hi } => {
                lo + (hi - lo) * rng::uniform(seed, purpose, stream, 0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::PointMass { x0 } => {
                if !x0.is_finite() {
                    return Err(Error::invalid("init", "point mass must be finite"));
                }
            }
            InitialLaw::Gaussian { mean, std } => {
                if !mean.is_finite() || !std.is_finite() || std < 0.0 {
                    return Err(Error::invalid("init", "gaussian needs finite mean, std >= 0"));
                }
            }
            InitialLaw::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(Error::invalid("init", "uniform needs finite lo <= hi"));
                }
            }
        }
        Ok(())
    }
}

/// Complete single-neuron model: drift variant, activation, interaction mean
/// J, interaction scale sigma, noise intensity lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub drift: Drift,
    pub activation: Activation,
    pub j: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self.drift {
            Drift::Linear { alpha } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::invalid("alpha", format!("must be > 0, got {alpha}")));
                }
            }
            Drift::LogBarrier { a, k } => {
                if !(a.is_finite() && a > 1.0) {
                    return Err(Error::invalid("a", format!("wall must satisfy A > 1, got {a}")));
                }
                if !matches!(k, 1 | 2 | 4) {
                    return Err(Error::invalid("k", format!("exponent must be 1, 2 or 4, got {k}")));
                }
            }
        }
        if !self.j.is_finite() {
            return Err(Error::invalid("j", "must be finite"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if !(self.lambda.is_finite() && self.lambda != 0.0) {
            return Err(Error::invalid("lambda", format!("must be nonzero, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Configurations outside the contraction guarantees (still runnable).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if matches!(self.drift, Drift::Linear { .. }) && self.activation.bound().is_none() {
            out.push(format!(
                "activation `{}` is unbounded: fixed-point guarantees assume a bounded activation",
                self.activation.name()
            ));
        }
        if matches!(self.drift, Drift::LogBarrier { .. })
            && self.activation != Activation::Identity
        {
            out.push("soft-wall drift is analyzed with the identity activation".to_string());
        }
        out
    }

    /// Checks an initial law against the state space of the drift.
    pub fn validate_initial_law(&self, law: &InitialLaw) -> Result<()> {
        law.validate()?;
        if let Drift::LogBarrier { a, .. } = self.drift {
            let inside = match *law {
                InitialLaw::PointMass { x0 } => x0.abs() < a,
                InitialLaw::Uniform { lo, hi } => lo > -a && hi < a,
                InitialLaw::Gaussian { .. } => false, // unbounded support
            };
            if !inside {
                return Err(Error::invalid(
                    "init",
                    format!("initial law must be supported strictly inside (-{a}, {a})"),
                ));
            }
        }
        Ok(())
    }

    #[inline(always)]
    pub fn drift_value(&self, x: f64) -> f64 {
        match self.drift {
            Drift::Linear { alpha } => -alpha * x,
            Drift::LogBarrier { a, k } => {
                let denom = a * a - x * x;
                -2.0 * k as f64 * x / denom
            }
        }
    }

    /// Drift with the domain check exposed (the simulation loops clamp instead).
    pub fn drift_checked(&self, x: f64) -> Result<f64> {
        if let Drift::LogBarrier { a, .. } = self.drift {
            if x.abs() >= a {
                return Err(Error::invalid(
                    "x",
                    format!("|{x}| is outside the state space (-{a}, {a})"),
                ));
            }
        }
        Ok(self.drift_value(x))
    }

    /// Post-step projection for the soft wall; None means no clamping needed.
    #[inline(always)]
    pub fn clamp_to_domain(&self, x: f64) -> Option<f64> {
        if let Drift::LogBarrier { a, .. } = self.drift {
            let wall = a * (1.0 - WALL_MARGIN);
            if x.abs() > wall {
                return Some(x.clamp(-wall, wall));
            }
        }
        None
    }
}

/// Simulated trajectories, P paths over the full grid. Brownian increments
/// are not stored: they are a pure function of (seed, purpose, path, step)
/// and can be regenerated via `noise_increment`.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    noise_purpose: u64,
    /// Row-major P x (L+1).
    values: Vec<f64>,
}

impl TrajectoryBatch {
    pub(crate) fn new(
        grid: TimeGrid,
        paths: usize,
        seed: u64,
        noise_purpose: u64,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), paths * grid.num_points());
        TrajectoryBatch {
            grid,
            paths,
            seed,
            noise_purpose,
            values,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn x(&self, p: usize, l: usize) -> f64 {
        self.values[p * self.grid.num_points() + l]
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.grid.num_points();
        &self.values[p * n..(p + 1) * n]
    }

    /// The Brownian increment used between steps l and l+1 of path p.
    pub fn noise_increment(&self, p: usize, l: usize) -> f64 {
        self.grid.dt().sqrt() * rng::normal(self.seed, self.noise_purpose, p as u64, l as u64)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Euler-Maruyama for the uncoupled dynamics dX = g(X) dt + lambda dW.
/// Soft-wall paths are clamped to +-A(1 - margin); the run fails if clamping
/// exceeds the step budget.
pub fn simulate_uncoupled(
    model: &ModelSpec,
    grid: &TimeGrid,
    law: &InitialLaw,
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    model.validate()?;
    model.validate_initial_law(law)?;
    if paths == 0 {
        return Err(Error::invalid("paths", "need at least one trajectory"));
    }
    let n = grid.num_points();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut values = vec![0.0; paths * n];
    let mut exits: u64 = 0;
    let mut first_nan: Option<(usize, usize)> = None;

    let rows = crate::par::map_indexed(paths, |p| {
        let mut row = vec![0.0; n];
        let mut exits_p = 0u64;
        let mut nan: Option<usize> = None;
        let mut x = law.sample(seed, rng::purpose::INIT, p as u64);
        row[0] = x;
        for l in 0..grid.steps() {
            let dw = sqrt_dt * rng::normal(seed, rng::purpose::PATH_NOISE, p as u64, l as u64);
            x += model.drift_value(x) * dt + model.lambda * dw;
            if let Some(clamped) = model.clamp_to_domain(x) {
                x = clamped;
                exits_p += 1;
            }
            if !x.is_finite() && nan.is_none() {
                nan = Some(l);
            }
            row[l + 1] = x;
        }
        (row, exits_p, nan)
    });

    for (p, (row, exits_p, nan)) in rows.into_iter().enumerate() {
        values[p * n..(p + 1) * n].copy_from_slice(&row);
        exits += exits_p;
        if let (Some(l), None) = (nan, first_nan) {
            first_nan = Some((p, l));
        }
    }
    if let Some((p, l)) = first_nan {
        return Err(Error::NonFinite { path: p, step: l });
    }
    let total = (paths * grid.steps()) as u64;
    if exits as f64 > WALL_EVENT_BUDGET * total as f64 {
        return Err(Error::BoundaryExits { events: exits, total });
    }
    Ok(TrajectoryBatch::new(
        *grid,
        paths,
        seed,
        rng::purpose::PATH_NOISE,
        values,
    ))
}
