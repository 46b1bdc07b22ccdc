use crate::error::{Error, Result};

/// Uniform time grid on [0, T]: points l*dt for l = 0..=steps, steps = floor(T/dt).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, dt: f64) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::invalid("t_end", format!("must be finite and > 0, got {t_end}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be finite and > 0, got {dt}")));
        }
        // floor(T/dt) with a relative guard so T=10, dt=0.04 lands on 250,
        // not 249, despite 10/0.04 rounding just below the integer.
        let q = t_end / dt;
        let steps = (q + q * 4.0 * f64::EPSILON + 1e-12).floor() as usize;
        if steps < 2 {
            return Err(Error::invalid(
                "dt",
                format!("grid must have at least 2 steps, got {steps} (T={t_end}, dt={dt})"),
            ));
        }
        Ok(TimeGrid { t_end, dt, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps L; the grid has L+1 points.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_points(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, l: usize) -> f64 {
        l as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.num_points()).map(|l| self.time(l)).collect()
    }
}
