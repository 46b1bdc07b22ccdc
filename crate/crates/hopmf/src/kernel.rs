//! Discrete covariance kernels on the time grid and the operator algebra on
//! them: trace/Hilbert-Schmidt norms, causal composition, the conditioned
//! kernel family K~ = K (Id + (dt/lambda^2) K)^-1, and Volterra resolvents.
//!
//! Conventions: a kernel over a grid with L steps is an (L+1) x (L+1)
//! symmetric matrix indexed by grid points. Integral operators use
//! left-endpoint quadrature with weight dt, and causal kernels are strictly
//! lower triangular (the diagonal is never read).

use crate::error::{Error, Result};
use crate::par;
use nalgebra::DMatrix;

/// Block sizes up to this bound are solved with a direct Cholesky
/// factorization; larger blocks fall back to conjugate gradients.
pub const DIRECT_SOLVE_LIMIT: usize = 512;

/// Relative eigenvalue tolerance for positive semidefiniteness checks.
pub const PSD_TOLERANCE: f64 = 1e-8;

const CG_TOLERANCE: f64 = 1e-10;

/// Symmetric kernel sampled on the grid, dense row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    dt: f64,
    n: usize,
    data: Vec<f64>,
}

impl DiscreteKernel {
    pub fn from_fn(n: usize, dt: f64, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        DiscreteKernel { dt, n, data }
    }

    pub fn constant(n: usize, dt: f64, value: f64) -> Self {
        DiscreteKernel {
            dt,
            n,
            data: vec![value; n * n],
        }
    }

    /// Wraps raw row-major data; symmetrizes against accumulated round-off.
    pub fn from_raw(n: usize, dt: f64, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(
                "kernel",
                format!("expected {} entries, got {}", n * n, data.len()),
            ));
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Ok(DiscreteKernel { dt, n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Trace norm of the restriction to the first `upto` grid points:
    /// dt * sum_{j < upto} |K(j,j)|.
    pub fn trace_norm(&self, upto: usize) -> f64 {
        assert!(upto <= self.n);
        let diag: Vec<f64> = (0..upto).map(|j| self.get(j, j).abs()).collect();
        self.dt * crate::stats::pairwise_sum(&diag)
    }

    /// Hilbert-Schmidt norm of the same restriction:
    /// dt * Frobenius norm of the leading block.
    pub fn hs_norm(&self, upto: usize) -> f64 {
        assert!(upto <= self.n);
        let mut sq = 0.0;
        for i in 0..upto {
            for j in 0..upto {
                let v = self.get(i, j);
                sq += v * v;
            }
        }
        self.dt * sq.sqrt()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.data);
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn spectral_radius(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.data);
        m.symmetric_eigenvalues().iter().fold(0.0f64, |a, &e| a.max(e.abs()))
    }

    /// Positive semidefiniteness up to -PSD_TOLERANCE * spectral radius.
    pub fn validate_psd(&self) -> Result<()> {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.data);
        let eigs = m.symmetric_eigenvalues();
        let radius = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = PSD_TOLERANCE * radius.max(f64::MIN_POSITIVE);
        if min < -tol {
            return Err(Error::NotPsd {
                eigenvalue: min,
                tolerance: tol,
            });
        }
        Ok(())
    }
}

/// Strictly lower-triangular (causal) kernel: `rows[l]` holds values at
/// (l*dt, j*dt) for j < l, so `rows[l].len() == l` and values on or above the
/// diagonal do not exist.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangularKernel {
    dt: f64,
    rows: Vec<Vec<f64>>,
}

impl LowerTriangularKernel {
    pub fn from_fn(n: usize, dt: f64, f: impl Fn(usize, usize) -> f64) -> Self {
        let rows = (0..n).map(|l| (0..l).map(|j| f(l, j)).collect()).collect();
        LowerTriangularKernel { dt, rows }
    }

    pub fn zeros(n: usize, dt: f64) -> Self {
        Self::from_fn(n, dt, |_, _| 0.0)
    }

    pub fn from_rows(dt: f64, rows: Vec<Vec<f64>>) -> Self {
        for (l, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), l, "row {l} must have {l} entries");
        }
        LowerTriangularKernel { dt, rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.rows[l][j]
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LowerTriangularKernel {
            dt: self.dt,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// M = max over rows of dt * sum_j kappa(l,j)^2, the quadrature analogue
    /// of the row-wise L2 bound on the kernel.
    pub fn row_sq_integral_max(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| self.dt * r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Causal composition (k1 o k2)(l,j) = dt * sum_{j < v < l} k1(l,v) k2(v,j).
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.n(), other.n());
        assert_eq!(self.dt, other.dt);
        let n = self.n();
        let dt = self.dt;
        let rows = par::map_indexed(n, |l| {
            let mut row = vec![0.0; l];
            #[allow(clippy::needless_range_loop)]
            for j in 0..l {
                let mut s = 0.0;
                for v in j + 1..l {
                    s += self.rows[l][v] * other.rows[v][j];
                }
                row[j] = dt * s;
            }
            row
        });
        LowerTriangularKernel { dt, rows }
    }

    /// Resolvent H of the Volterra kernel: the unique causal kernel with
    /// H = kappa + dt-weighted composition kappa o H. Forward substitution in
    /// the row index; exact up to round-off because the discrete Neumann
    /// series terminates.
    pub fn resolvent(&self) -> Self {
        let n = self.n();
        let dt = self.dt;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for l in 0..n {
            let mut row = vec![0.0; l];
            #[allow(clippy::needless_range_loop)]
            for j in 0..l {
                let mut s = 0.0;
                for v in j + 1..l {
                    s += self.rows[l][v] * rows[v][j];
                }
                row[j] = self.rows[l][j] + dt * s;
            }
            rows.push(row);
        }
        LowerTriangularKernel { dt, rows }
    }

    /// Sup-norm residual of the resolvent identity for a candidate H.
    pub fn resolvent_residual(&self, h: &Self) -> f64 {
        let comp = self.compose(h);
        let mut worst = 0.0f64;
        for l in 0..self.n() {
            for j in 0..l {
                worst = worst.max((h.get(l, j) - self.get(l, j) - comp.get(l, j)).abs());
            }
        }
        worst
    }
}

/// Conditioned kernel family: row l is the last row of
/// K~^(l) = K^(l) (Id_l + (dt/lambda^2) K^(l))^-1 built from the leading
/// l x l block of K, so row l only depends on that block.
#[derive(Debug, Clone)]
pub struct KtildeFamily {
    dt: f64,
    lambda: f64,
    rows: Vec<Vec<f64>>,
}

impl KtildeFamily {
    /// Builds rows 0..n-1 (row l has l entries). Direct nested Cholesky up to
    /// DIRECT_SOLVE_LIMIT, conjugate gradients beyond.
    pub fn build(k: &DiscreteKernel, lambda: f64) -> Result<Self> {
        Self::build_with_limit(k, lambda, DIRECT_SOLVE_LIMIT)
    }

    fn build_with_limit(k: &DiscreteKernel, lambda: f64, direct_limit: usize) -> Result<Self> {
        if lambda == 0.0 || !lambda.is_finite() {
            return Err(Error::invalid("lambda", "must be finite and nonzero"));
        }
        let n = k.n();
        let c = k.dt() / (lambda * lambda);
        let direct_n = n.min(direct_limit + 1);

        // The factor of Id + c K^(l) is the leading l x l block of the factor
        // of Id + c K^(direct_n-1), so one incremental factorization serves
        // every direct row.
        let mut chol = IncrementalCholesky::new();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        rows.push(Vec::new());
        for l in 1..direct_n {
            chol.extend(|i, j| {
                let a = c * k.get(i, j);
                if i == j {
                    1.0 + a
                } else {
                    a
                }
            })
            .map_err(|_| cholesky_breakdown(k, l))?;
            let rhs: Vec<f64> = (0..l).map(|j| k.get(j, l - 1)).collect();
            rows.push(chol.solve(&rhs));
        }

        if direct_n < n {
            let tail = par::map_indexed(n - direct_n, |idx| {
                let l = direct_n + idx;
                let rhs: Vec<f64> = (0..l).map(|j| k.get(j, l - 1)).collect();
                cg_solve(k, c, &rhs, l)
            });
            for row in tail {
                rows.push(row?);
            }
        }
        Ok(KtildeFamily {
            dt: k.dt(),
            lambda,
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    /// The Volterra kernel driving the interaction noise: K~ / lambda^2.
    pub fn to_volterra(&self) -> LowerTriangularKernel {
        let inv = 1.0 / (self.lambda * self.lambda);
        LowerTriangularKernel {
            dt: self.dt,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|v| v * inv).collect())
                .collect(),
        }
    }

    /// Trace norm along the family diagonal: dt * sum_{l < upto} |row_l[l-1]|,
    /// the discrete trace of the conditioned kernel at matching times.
    pub fn trace_norm(&self, upto: usize) -> f64 {
        let diag: Vec<f64> = (1..upto.min(self.n()))
            .map(|l| self.rows[l][l - 1].abs())
            .collect();
        self.dt * crate::stats::pairwise_sum(&diag)
    }
}

fn cholesky_breakdown(k: &DiscreteKernel, l: usize) -> Error {
    // Diagnose with the eigenvalue that broke positive definiteness.
    let eigs = DMatrix::from_fn(l, l, |i, j| k.get(i, j)).symmetric_eigenvalues();
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let radius = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    Error::NotPsd {
        eigenvalue: min,
        tolerance: PSD_TOLERANCE * radius.max(f64::MIN_POSITIVE),
    }
}

/// Row l of the conditioned family without building the whole family:
/// solves (Id_l + (dt/lambda^2) K^(l)) x = K^(l) e_l for the last basis
/// vector e_l. Symmetry of K~ makes the solution the wanted row.
pub fn ktilde_row(k: &DiscreteKernel, l: usize, lambda: f64) -> Result<Vec<f64>> {
    ktilde_row_with_limit(k, l, lambda, DIRECT_SOLVE_LIMIT)
}

fn ktilde_row_with_limit(
    k: &DiscreteKernel,
    l: usize,
    lambda: f64,
    direct_limit: usize,
) -> Result<Vec<f64>> {
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "must be finite and nonzero"));
    }
    if l >= k.n() {
        return Err(Error::invalid(
            "l",
            format!("row {l} needs an {l}x{l} leading block, kernel has {}", k.n()),
        ));
    }
    if l == 0 {
        return Ok(Vec::new());
    }
    let c = k.dt() / (lambda * lambda);
    let rhs: Vec<f64> = (0..l).map(|j| k.get(j, l - 1)).collect();
    if l <= direct_limit {
        let mut chol = IncrementalCholesky::new();
        while chol.size() < l {
            chol.extend(|r, s| {
                let a = c * k.get(r, s);
                if r == s {
                    1.0 + a
                } else {
                    a
                }
            })
            .map_err(|_| cholesky_breakdown(k, l))?;
        }
        Ok(chol.solve(&rhs))
    } else {
        cg_solve(k, c, &rhs, l)
    }
}

/// Full i x i conditioned block through the eigendecomposition of the leading
/// block: eigenvalues map to e/(1 + c e), eigenvectors are shared with K.
pub fn ktilde_block(k: &DiscreteKernel, i: usize, lambda: f64) -> Result<DMatrix<f64>> {
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "must be finite and nonzero"));
    }
    if i == 0 || i > k.n() {
        return Err(Error::invalid(
            "i",
            format!("block size must be in 1..={}, got {i}", k.n()),
        ));
    }
    let c = k.dt() / (lambda * lambda);
    let block = DMatrix::from_fn(i, i, |r, s| k.get(r, s));
    let eig = block.symmetric_eigen();
    let radius = eig.eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let tol = PSD_TOLERANCE * radius.max(f64::MIN_POSITIVE);
    if let Some(min) = eig
        .eigenvalues
        .iter()
        .cloned()
        .reduce(f64::min)
        .filter(|&m| m < -tol)
    {
        return Err(Error::NotPsd {
            eigenvalue: min,
            tolerance: tol,
        });
    }
    let mapped = eig.eigenvalues.map(|e| e / (1.0 + c * e));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose();
    // Exact symmetry despite round-off in the triple product.
    for r in 0..i {
        for s in 0..r {
            let v = 0.5 * (out[(r, s)] + out[(s, r)]);
            out[(r, s)] = v;
            out[(s, r)] = v;
        }
    }
    Ok(out)
}

/// h(x) = sum_n x^n / sqrt(n!), accumulated until the next term drops below
/// tol * current sum. Majorizes the resolvent Neumann series.
pub fn h_series(x: f64, tol: f64) -> f64 {
    assert!(x >= 0.0 && tol > 0.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..=500 {
        term *= x / (n as f64).sqrt();
        sum += term;
        if term < tol * sum {
            break;
        }
    }
    sum
}

/// Growing Cholesky factorization of a symmetric positive definite matrix;
/// the factor after s rows is exactly the factor of the leading s x s block.
struct IncrementalCholesky {
    // Row-major packed lower triangle: row i holds i+1 entries.
    rows: Vec<Vec<f64>>,
}

struct NotPositiveDefinite;

impl IncrementalCholesky {
    fn new() -> Self {
        IncrementalCholesky { rows: Vec::new() }
    }

    fn size(&self) -> usize {
        self.rows.len()
    }

    /// Appends row i of the source matrix, given by `a(i, j)` for j <= i.
    fn extend(
        &mut self,
        a: impl Fn(usize, usize) -> f64,
    ) -> std::result::Result<(), NotPositiveDefinite> {
        let i = self.size();
        let mut row = vec![0.0; i + 1];
        for j in 0..i {
            let mut s = a(i, j);
            for (rp, jp) in row[..j].iter().zip(&self.rows[j][..j]) {
                s -= rp * jp;
            }
            row[j] = s / self.rows[j][j];
        }
        let mut d = a(i, i);
        for rp in &row[..i] {
            d -= rp * rp;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(NotPositiveDefinite);
        }
        row[i] = d.sqrt();
        self.rows.push(row);
        Ok(())
    }

    /// Solves A x = rhs with the current factor (forward then back substitution).
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let s = self.size();
        assert_eq!(rhs.len(), s);
        let mut y = vec![0.0; s];
        for i in 0..s {
            let mut v = rhs[i];
            for (rj, yj) in self.rows[i][..i].iter().zip(&y[..i]) {
                v -= rj * yj;
            }
            y[i] = v / self.rows[i][i];
        }
        let mut x = vec![0.0; s];
        for i in (0..s).rev() {
            let mut v = y[i];
            for (row_r, xr) in self.rows[i + 1..s].iter().zip(&x[i + 1..s]) {
                v -= row_r[i] * xr;
            }
            x[i] = v / self.rows[i][i];
        }
        x
    }
}

/// Conjugate gradients on (Id + c K^(l)) x = rhs; relative residual tolerance.
fn cg_solve(k: &DiscreteKernel, c: f64, rhs: &[f64], l: usize) -> Result<Vec<f64>> {
    let matvec = |x: &[f64], out: &mut [f64]| {
        for i in 0..l {
            let row = &k.row(i)[..l];
            out[i] = x[i] + c * crate::stats::pairwise_dot(row, x);
        }
    };
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; l]);
    }
    let mut x = vec![0.0; l];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; l];
    let mut rr = r.iter().map(|v| v * v).sum::<f64>();
    let max_iters = 10 * l;
    for _ in 0..max_iters {
        if rr.sqrt() <= CG_TOLERANCE * rhs_norm {
            return Ok(x);
        }
        matvec(&p, &mut ap);
        let pap = p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        let alpha = rr / pap;
        for i in 0..l {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = r.iter().map(|v| v * v).sum::<f64>();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..l {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= CG_TOLERANCE * rhs_norm {
        Ok(x)
    } else {
        Err(Error::CgDidNotConverge {
            block: l,
            residual: rr.sqrt() / rhs_norm,
            iterations: max_iters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn random_psd(n: usize, dt: f64, seed: u64) -> DiscreteKernel {
        // B B^T / m with m >= n columns: PSD by construction.
        let m = n + 4;
        let b: Vec<f64> = (0..n * m)
            .map(|i| rng::normal(seed, 77, i as u64, 0))
            .collect();
        DiscreteKernel::from_fn(n, dt, |i, j| {
            (0..m).map(|p| b[i * m + p] * b[j * m + p]).sum::<f64>() / m as f64
        })
    }

    #[test]
    fn trace_norm_of_diagonal_ramp_integrates_s() {
        // K(s,s) = s on [0,1]: integral 1/2 with left-endpoint bias O(dt).
        let dt = 0.001;
        let n = 1001;
        let k = DiscreteKernel::from_fn(n, dt, |i, j| if i == j { i as f64 * dt } else { 0.0 });
        assert!((k.trace_norm(n) - 0.5).abs() <= 0.001);
    }

    #[test]
    fn hs_norm_of_constant_kernel_matches_area() {
        let dt = 0.04;
        let n = 201; // [0, 8]
        let k = DiscreteKernel::constant(n, dt, 1.0);
        assert!((k.hs_norm(n) - 8.0).abs() <= 2.0 * dt);
        assert!((k.trace_norm(n) - 8.0).abs() <= 2.0 * dt);
    }

    #[test]
    fn hs_norm_never_exceeds_trace_norm_on_psd_kernels() {
        for seed in 0..20 {
            let k = random_psd(16, 0.1, seed);
            for upto in [4, 9, 16] {
                assert!(
                    k.hs_norm(upto) <= k.trace_norm(upto) + 1e-12,
                    "seed {seed} upto {upto}"
                );
            }
        }
    }

    #[test]
    fn composition_of_constant_kernels_grows_linearly_in_the_gap() {
        let dt = 0.01;
        let n = 101; // [0, 1]
        let one = LowerTriangularKernel::from_fn(n, dt, |_, _| 1.0);
        let sq = one.compose(&one);
        let mut sup = 0.0f64;
        for l in 0..n {
            for j in 0..l {
                let exact = (l - j) as f64 * dt;
                sup = sup.max((sq.get(l, j) - exact).abs());
            }
        }
        assert!(sup <= 2.0 * dt, "sup error {sup}");
    }

    #[test]
    fn two_by_two_conditioned_block_matches_hand_inversion() {
        // K = ones, dt = 1, lambda = 1: (Id + K)^-1 = [[2,1],[1,2]]^-1, and
        // K (Id+K)^-1 has every entry 1/3.
        let k = DiscreteKernel::constant(3, 1.0, 1.0);
        let b = ktilde_block(&k, 2, 1.0).unwrap();
        for r in 0..2 {
            for s in 0..2 {
                assert_abs_diff_eq!(b[(r, s)], 1.0 / 3.0, epsilon = 1e-12);
            }
        }
        let b1 = ktilde_block(&k, 1, 1.0).unwrap();
        assert_abs_diff_eq!(b1[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn conditioned_rows_of_constant_kernel_follow_the_closed_form() {
        // K = sigma^2 everywhere: row l is constant sigma^2 lambda^2 / (lambda^2 + sigma^2 l dt).
        let dt = 0.02;
        let n = 161;
        for (sigma, lambda) in [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0), (1.5, 0.5)] {
            let k = DiscreteKernel::constant(n, dt, sigma * sigma);
            let fam = KtildeFamily::build(&k, lambda).unwrap();
            for l in 1..n {
                let t = l as f64 * dt;
                let expect =
                    sigma * sigma * lambda * lambda / (lambda * lambda + sigma * sigma * t);
                for &v in fam.row(l) {
                    assert!(
                        (v - expect).abs() < 1e-10,
                        "sigma={sigma} lambda={lambda} l={l}: {v} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn standalone_row_agrees_with_family_and_block() {
        let k = random_psd(24, 0.05, 3);
        let lambda = 1.3;
        let fam = KtildeFamily::build(&k, lambda).unwrap();
        for l in [1usize, 2, 7, 23] {
            let row = ktilde_row(&k, l, lambda).unwrap();
            assert_eq!(row.len(), l);
            let block = ktilde_block(&k, l, lambda).unwrap();
            for j in 0..l {
                assert_abs_diff_eq!(row[j], block[(l - 1, j)], epsilon = 1e-10);
                assert_abs_diff_eq!(row[j], fam.row(l)[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_gradient_rows_match_direct_rows() {
        let k = random_psd(40, 0.05, 11);
        for l in [13usize, 39] {
            let direct = ktilde_row_with_limit(&k, l, 0.9, DIRECT_SOLVE_LIMIT).unwrap();
            let cg = ktilde_row_with_limit(&k, l, 0.9, 0).unwrap();
            for j in 0..l {
                assert_abs_diff_eq!(direct[j], cg[j], epsilon = 1e-8);
            }
        }
        let fam_direct = KtildeFamily::build_with_limit(&k, 0.9, DIRECT_SOLVE_LIMIT).unwrap();
        let fam_cg = KtildeFamily::build_with_limit(&k, 0.9, 4).unwrap();
        for l in 0..k.n() {
            for j in 0..l {
                assert_abs_diff_eq!(fam_direct.row(l)[j], fam_cg.row(l)[j], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn conditioned_block_eigenvalues_contract() {
        let k = random_psd(20, 0.1, 5);
        let block = ktilde_block(&k, 20, 1.0).unwrap();
        let mut ke: Vec<f64> = DMatrix::from_fn(20, 20, |i, j| k.get(i, j))
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .collect();
        let mut be: Vec<f64> = block.symmetric_eigenvalues().iter().cloned().collect();
        ke.sort_by(f64::total_cmp);
        be.sort_by(f64::total_cmp);
        for (b, k) in be.iter().zip(&ke) {
            assert!(*b >= -1e-12);
            assert!(*b <= *k + 1e-10);
        }
    }

    #[test]
    fn non_psd_kernel_is_rejected_with_the_offending_eigenvalue() {
        let n = 6;
        let k = DiscreteKernel::from_fn(n, 0.1, |i, j| if i == j { -0.5 } else { 0.0 });
        match ktilde_block(&k, n, 1.0) {
            Err(Error::NotPsd { eigenvalue, .. }) => assert!((eigenvalue + 0.5).abs() < 1e-12),
            other => panic!("expected NotPsd, got {other:?}"),
        }
        assert!(k.validate_psd().is_err());
        assert!(random_psd(8, 0.1, 2).validate_psd().is_ok());
    }

    #[test]
    fn resolvent_satisfies_its_identity_to_round_off() {
        let n = 60;
        let kappa = LowerTriangularKernel::from_fn(n, 0.05, |l, j| {
            rng::normal(21, 6, l as u64, j as u64) * 0.8
        });
        let h = kappa.resolvent();
        assert!(kappa.resolvent_residual(&h) < 1e-12);
    }

    #[test]
    fn resolvent_of_small_kernel_matches_two_term_neumann_series() {
        let n = 40;
        let eps = 1e-4;
        let kappa =
            LowerTriangularKernel::from_fn(n, 0.05, |l, j| eps * (1.0 + (l + j) as f64 * 0.01));
        let h = kappa.resolvent();
        let two_term = kappa.compose(&kappa);
        let mut sup = 0.0f64;
        for l in 0..n {
            for j in 0..l {
                sup = sup.max((h.get(l, j) - kappa.get(l, j) - two_term.get(l, j)).abs());
            }
        }
        // Third Neumann term is O(eps^3 * T^2).
        assert!(sup < 1e-9, "sup {sup}");
    }

    #[test]
    fn conditioned_difference_is_bounded_by_kernel_difference() {
        // hs(K1~ - K2~) <= hs(K1 - K2): conditioning is a contraction.
        for seed in 0..10 {
            let k1 = random_psd(18, 0.07, 100 + seed);
            let k2 = random_psd(18, 0.07, 200 + seed);
            let b1 = ktilde_block(&k1, 18, 1.1).unwrap();
            let b2 = ktilde_block(&k2, 18, 1.1).unwrap();
            let mut diff_t = 0.0;
            let mut diff_k = 0.0;
            for r in 0..18 {
                for s in 0..18 {
                    diff_t += (b1[(r, s)] - b2[(r, s)]).powi(2);
                    diff_k += (k1.get(r, s) - k2.get(r, s)).powi(2);
                }
            }
            assert!(
                diff_t.sqrt() <= diff_k.sqrt() + 1e-8,
                "seed {seed}: {} vs {}",
                diff_t.sqrt(),
                diff_k.sqrt()
            );
        }
    }

    #[test]
    fn family_trace_norm_never_exceeds_kernel_trace_norm() {
        for seed in [0u64, 4, 9] {
            let k = random_psd(30, 0.05, 300 + seed);
            let fam = KtildeFamily::build(&k, 1.2).unwrap();
            // Diagonal of the family at row l approximates K~(t,t) at t = l dt;
            // conditioning shrinks the trace.
            assert!(fam.trace_norm(30) <= k.trace_norm(30) + 1e-8);
        }
    }

    #[test]
    fn h_series_reference_values() {
        assert_abs_diff_eq!(h_series(0.0, 1e-12), 1.0, epsilon = 1e-15);
        // Independent oracle: explicit factorial accumulation.
        let mut exact = 0.0;
        let mut fact: f64 = 1.0;
        for n in 0..80 {
            if n > 0 {
                fact *= n as f64;
            }
            exact += 1.0 / fact.sqrt();
        }
        assert_abs_diff_eq!(h_series(1.0, 1e-14), exact, epsilon = 1e-12);
        assert!((h_series(1.0, 1e-10) - 3.4695).abs() < 1e-3);
        assert!(h_series(2.0, 1e-10) > h_series(1.0, 1e-10));
    }
}
