//! Volterra equations of the second kind on the grid, in increment form:
//!
//!   dB_l = dW_l + c_l dt + dt * sum_{j<l} kappa(l dt, j dt) dB_j
//!
//! solved either by forward substitution or through the resolvent kernel.
//! Both routes are algebraically identical on the grid, which the tests and
//! the acceptance suite pin down to round-off.

use crate::error::{Error, Result};
use crate::kernel::LowerTriangularKernel;

/// A path given by its per-step increments; values start at `origin`
/// (0 for Brownian-type paths).
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementPath {
    pub origin: f64,
    pub increments: Vec<f64>,
}

impl IncrementPath {
    pub fn new(increments: Vec<f64>) -> Self {
        IncrementPath {
            origin: 0.0,
            increments,
        }
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// Path values at all grid points: origin plus prefix sums.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = self.origin;
        out.push(acc);
        for &d in &self.increments {
            acc += d;
            out.push(acc);
        }
        out
    }
}

fn check_sizes(kappa: &LowerTriangularKernel, c: Option<&[f64]>, steps: usize) -> Result<()> {
    if kappa.n() < steps {
        return Err(Error::invalid(
            "kappa",
            format!("kernel has {} rows, need at least {steps}", kappa.n()),
        ));
    }
    if let Some(c) = c {
        if c.len() != steps {
            return Err(Error::invalid(
                "c",
                format!("drift has {} entries, need {steps}", c.len()),
            ));
        }
    }
    Ok(())
}

/// Forward substitution: strictly causal, so each increment is explicit in
/// the previous ones.
pub fn solve_increments(
    kappa: &LowerTriangularKernel,
    c: Option<&[f64]>,
    dw: &[f64],
) -> Result<IncrementPath> {
    let steps = dw.len();
    check_sizes(kappa, c, steps)?;
    let dt = kappa.dt();
    let mut db = vec![0.0; steps];
    for l in 0..steps {
        let row = kappa.row(l);
        let mut conv = 0.0;
        for j in 0..l {
            conv += row[j] * db[j];
        }
        let drift = c.map_or(0.0, |c| c[l]);
        db[l] = dw[l] + drift * dt + dt * conv;
    }
    Ok(IncrementPath::new(db))
}

/// Resolvent route: with H the resolvent of kappa and
/// Wt_l = sum_{j<l} kappa(l,j) dW_j,
///
///   dB_l = dW_l + dt * [ Wt_l + c_l + dt * sum_{u<l} H(l,u) (Wt_u + c_u) ].
///
/// Equal to forward substitution up to round-off.
pub fn solve_resolvent_form(
    kappa: &LowerTriangularKernel,
    c: Option<&[f64]>,
    dw: &[f64],
) -> Result<IncrementPath> {
    let steps = dw.len();
    check_sizes(kappa, c, steps)?;
    let dt = kappa.dt();
    let h = kappa.resolvent();
    let mut wt = vec![0.0; steps];
    for (l, slot) in wt.iter_mut().enumerate() {
        let row = kappa.row(l);
        let mut s = 0.0;
        for j in 0..l {
            s += row[j] * dw[j];
        }
        *slot = s;
    }
    let mut db = vec![0.0; steps];
    for l in 0..steps {
        let hrow = h.row(l);
        let mut corr = 0.0;
        for u in 0..l {
            corr += hrow[u] * (wt[u] + c.map_or(0.0, |c| c[u]));
        }
        db[l] = dw[l] + dt * (wt[l] + c.map_or(0.0, |c| c[l]) + dt * corr);
    }
    Ok(IncrementPath::new(db))
}

/// Recovers the increments of the underlying law-changed Brownian motion B
/// from the interaction noise C and the mean drift m (J already applied):
/// dB_l = (m_l dt + dC_l) / lambda.
pub fn reconstruct_p_brownian(
    c_path: &IncrementPath,
    m: &[f64],
    lambda: f64,
    dt: f64,
) -> Result<IncrementPath> {
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "must be finite and nonzero"));
    }
    if m.len() != c_path.steps() {
        return Err(Error::invalid(
            "m",
            format!("mean has {} entries, need {}", m.len(), c_path.steps()),
        ));
    }
    let inv = 1.0 / lambda;
    let increments = c_path
        .increments
        .iter()
        .zip(m)
        .map(|(&dc, &mv)| (mv * dt + dc) * inv)
        .collect();
    Ok(IncrementPath::new(increments))
}
