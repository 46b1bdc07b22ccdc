//! Summation and estimator helpers shared by the solver and the network code.

/// Pairwise (cascade) summation: O(eps * log n) rounding growth instead of
/// O(eps * n), and a fixed association order for reproducibility.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 64;
    if xs.len() <= BASE {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise dot product with the same association order as `pairwise_sum`.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    const BASE: usize = 64;
    if a.len() <= BASE {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        return s;
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

/// Sample mean and its standard error from accumulated sums.
/// se = sqrt(unbiased variance / n); zero when n < 2.
pub fn mean_se_from_sums(s1: f64, s2: f64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let mean = s1 / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Unbiased sample variance and its standard error from accumulated sums.
/// The variance SE uses the Gaussian approximation var * sqrt(2/(n-1)).
pub fn var_se_from_sums(s1: f64, s2: f64, n: u64) -> (f64, f64) {
    if n < 2 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let var = ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0);
    (var, var * (2.0 / (nf - 1.0)).sqrt())
}

/// Pointwise mean/variance statistics of a scalar series sampled over many
/// trajectories (grid point by grid point).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se_var: Vec<f64>,
}

impl SeriesStats {
    pub fn from_sums(s1: &[f64], s2: &[f64], n: u64) -> Self {
        assert_eq!(s1.len(), s2.len());
        let mut out = SeriesStats {
            mean: Vec::with_capacity(s1.len()),
            se_mean: Vec::with_capacity(s1.len()),
            var: Vec::with_capacity(s1.len()),
            se_var: Vec::with_capacity(s1.len()),
        };
        for (a, b) in s1.iter().zip(s2) {
            let (m, se) = mean_se_from_sums(*a, *b, n);
            let (v, vse) = var_se_from_sums(*a, *b, n);
            out.mean.push(m);
            out.se_mean.push(se);
            out.var.push(v);
            out.se_var.push(vse);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
/// Diagnostic quality only (exchangeability checks), not a hard gate.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let t = xs[i].min(ys[j]);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    // Kolmogorov tail series, truncated when terms vanish.
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
