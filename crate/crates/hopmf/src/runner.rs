//! Experiment driver: runs a validated configuration, writes the artifact
//! set (m.csv, K.csv, Ktt.csv, ktilde_final.csv, sample_paths.csv,
//! manifest.json), and diffs two artifact directories. Every mode emits the
//! same CSV schema so comparisons need no mode-specific logic.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{ExperimentConfig, Mode, WeightStorage};
use crate::error::{Error, Result};
use crate::f1;
use crate::fixed_point::{solve_fixed_point, IterationDiagnostics, SolverConfig};
use crate::grid::TimeGrid;
use crate::io;
use crate::kernel::{DiscreteKernel, KtildeFamily};
use crate::quenched::{
    empirical_stats, sample_weights_bernoulli, sample_weights_gaussian, simulate_network,
    WeightMatrix, WeightSampler,
};
use crate::stats::SeriesStats;

pub const SERIES_COLUMNS: [&str; 6] = ["m", "se", "x_mean", "x_se", "x_var", "x_var_se"];
pub const CSV_NAMES: [&str; 5] = [
    "m.csv",
    "K.csv",
    "Ktt.csv",
    "ktilde_final.csv",
    "sample_paths.csv",
];

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: io::RunManifest,
    /// Present in compare mode; `pass == false` maps to exit code 3.
    pub comparison: Option<CompareReport>,
}

/// Everything the artifact writer needs, mode-independent.
struct Artifacts {
    m: Vec<f64>,
    se_m: Vec<f64>,
    x_stats: SeriesStats,
    k: DiscreteKernel,
    se_k: DiscreteKernel,
    ktilde_rows: Vec<Vec<f64>>,
    sample_paths: Vec<Vec<f64>>,
    diagnostics: Vec<IterationDiagnostics>,
}

pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let mut written: Vec<PathBuf> = Vec::new();
    let result = dispatch(config, out_dir, started, &mut written);
    if result.is_err() {
        for path in written {
            let _ = fs::remove_file(path);
        }
    }
    result
}

fn dispatch(
    config: &ExperimentConfig,
    out_dir: &Path,
    started: Instant,
    written: &mut Vec<PathBuf>,
) -> Result<RunOutcome> {
    match config.mode {
        Mode::Compare => run_compare(config, out_dir, started, written),
        Mode::Meanfield => {
            let artifacts = run_meanfield(config)?;
            finish(config, out_dir, started, written, artifacts, None)
        }
        Mode::Network => {
            let artifacts = run_network(config)?;
            finish(config, out_dir, started, written, artifacts, None)
        }
        Mode::F1Oracle => {
            let artifacts = run_f1_oracle(config)?;
            finish(config, out_dir, started, written, artifacts, None)
        }
    }
}

fn run_meanfield(config: &ExperimentConfig) -> Result<Artifacts> {
    let solver = SolverConfig {
        model: config.model,
        grid: config.grid,
        law: config.law,
        paths: config.paths,
        n_iters: config.n_iters,
        seed: config.seed,
        fresh_noise: config.fresh_noise,
    };
    let run = solve_fixed_point(&solver)?;
    let ktilde_rows = (0..run.ktilde.n())
        .map(|l| run.ktilde.row(l).to_vec())
        .collect();
    Ok(Artifacts {
        m: run.state.m,
        se_m: run.state.se_m,
        x_stats: run.x_stats,
        k: run.state.k,
        se_k: run.state.se_k,
        ktilde_rows,
        sample_paths: run.sample_paths,
        diagnostics: run.diagnostics,
    })
}

pub fn build_weights(config: &ExperimentConfig) -> Result<WeightMatrix> {
    let w = match config.weights {
        WeightSampler::Gaussian => sample_weights_gaussian(
            config.neurons,
            config.model.j,
            config.model.sigma,
            config.weights_seed,
        )?,
        WeightSampler::Bernoulli { p } => sample_weights_bernoulli(
            config.neurons,
            config.model.j,
            config.model.sigma,
            p,
            config.weights_seed,
        )?,
        WeightSampler::Explicit => {
            return Err(Error::invalid("weights", "explicit weights have no sampler"))
        }
    };
    Ok(match config.weight_storage {
        WeightStorage::Auto => w,
        WeightStorage::Dense => w.into_dense(),
        WeightStorage::Lazy => w.into_lazy()?,
        WeightStorage::Sparse => w.into_sparse()?,
    })
}

fn run_network(config: &ExperimentConfig) -> Result<Artifacts> {
    let weights = build_weights(config)?;
    let batch = simulate_network(&config.model, &weights, &config.grid, &config.law, config.seed)?;
    let est = empirical_stats(&batch, &config.model);
    // The empirical kernel is a Gram matrix, PSD by construction, so the
    // conditioned family is well defined for it too.
    let family = KtildeFamily::build(&est.k, config.model.lambda)?;
    let ktilde_rows = (0..family.n()).map(|l| family.row(l).to_vec()).collect();
    let sample_paths = (0..batch.paths().min(4))
        .map(|i| batch.path(i).to_vec())
        .collect();
    Ok(Artifacts {
        m: est.m,
        se_m: est.se_m,
        x_stats: est.x_stats,
        k: est.k,
        se_k: est.se_k,
        ktilde_rows,
        sample_paths,
        diagnostics: Vec::new(),
    })
}

fn run_f1_oracle(config: &ExperimentConfig) -> Result<Artifacts> {
    let grid = &config.grid;
    let n = grid.num_points();
    let (j, sigma, lambda) = (config.model.j, config.model.sigma, config.model.lambda);
    let m0 = config.law.mean();
    let var0 = config.law.variance();
    let sigma2 = sigma * sigma;
    let mut x_mean = Vec::with_capacity(n);
    let mut x_var = Vec::with_capacity(n);
    for l in 0..n {
        let t = grid.time(l);
        x_mean.push(f1::mean_f1(t, j, m0));
        x_var.push(f1::var_f1(t, sigma2, var0, lambda));
    }
    let zeros = vec![0.0; n];
    let x_stats = SeriesStats {
        mean: x_mean,
        se_mean: zeros.clone(),
        var: x_var,
        se_var: zeros.clone(),
    };
    let ktilde_rows = (0..n)
        .map(|l| vec![f1::ktilde_f1(grid.time(l), sigma, lambda); l])
        .collect();
    // A few annealed trajectories for the plots; their statistics are not
    // used (the curves above are exact).
    let paths = f1::simulate_annealed(j, sigma, lambda, grid, &config.law, 4, config.seed)?;
    Ok(Artifacts {
        m: vec![1.0; n],
        se_m: zeros.clone(),
        x_stats,
        k: DiscreteKernel::constant(n, grid.dt(), sigma2),
        se_k: DiscreteKernel::constant(n, grid.dt(), 0.0),
        ktilde_rows,
        sample_paths: paths.sample_paths,
        diagnostics: Vec::new(),
    })
}

/// Writes the artifact set and the manifest (last, only on success).
fn finish(
    config: &ExperimentConfig,
    out_dir: &Path,
    started: Instant,
    written: &mut Vec<PathBuf>,
    artifacts: Artifacts,
    comparison: Option<CompareReport>,
) -> Result<RunOutcome> {
    let grid = &config.grid;
    let n = grid.num_points();
    let track = |written: &mut Vec<PathBuf>, path: PathBuf| -> PathBuf {
        written.push(path.clone());
        path
    };

    let path = track(written, out_dir.join("m.csv"));
    io::write_series_csv(
        &path,
        grid,
        &SERIES_COLUMNS,
        &[
            &artifacts.m,
            &artifacts.se_m,
            &artifacts.x_stats.mean,
            &artifacts.x_stats.se_mean,
            &artifacts.x_stats.var,
            &artifacts.x_stats.se_var,
        ],
    )?;

    let path = track(written, out_dir.join("K.csv"));
    io::write_kernel_csv(&path, &artifacts.k)?;

    let ktt: Vec<f64> = (0..n).map(|l| artifacts.k.get(l, l)).collect();
    let ktt_se: Vec<f64> = (0..n).map(|l| artifacts.se_k.get(l, l)).collect();
    let lo: Vec<f64> = ktt.iter().zip(&ktt_se).map(|(k, s)| k - 2.0 * s).collect();
    let hi: Vec<f64> = ktt.iter().zip(&ktt_se).map(|(k, s)| k + 2.0 * s).collect();
    let path = track(written, out_dir.join("Ktt.csv"));
    io::write_series_csv(&path, grid, &["ktt", "se", "lo", "hi"], &[&ktt, &ktt_se, &lo, &hi])?;

    let rows: Vec<&[f64]> = artifacts.ktilde_rows.iter().map(|r| r.as_slice()).collect();
    let path = track(written, out_dir.join("ktilde_final.csv"));
    io::write_ktilde_csv(&path, grid, &rows)?;

    let activation = config.model.activation;
    let path = track(written, out_dir.join("sample_paths.csv"));
    io::write_sample_paths_csv(&path, grid, &artifacts.sample_paths, |x| activation.apply(x))?;

    let manifest = build_manifest(config, out_dir, started, &CSV_NAMES, artifacts.diagnostics)?;
    io::write_manifest(out_dir, &manifest)?;
    written.push(out_dir.join(io::MANIFEST_NAME));
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest,
        comparison,
    })
}

fn build_manifest(
    config: &ExperimentConfig,
    out_dir: &Path,
    started: Instant,
    files: &[&str],
    diagnostics: Vec<IterationDiagnostics>,
) -> Result<io::RunManifest> {
    let mut outputs = BTreeMap::new();
    for name in files {
        outputs.insert(name.to_string(), io::hash_file(&out_dir.join(name))?);
    }
    let content_hash = io::combined_hash(&outputs);
    Ok(io::RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: config.mode.name().to_string(),
        config: config.echo(),
        warnings: config.model.warnings(),
        outputs,
        content_hash,
        wall_seconds: started.elapsed().as_secs_f64(),
        diagnostics,
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SeriesComparison {
    pub name: String,
    pub sup_diff: f64,
    /// dt-weighted L2 norm of the difference.
    pub l2_diff: f64,
    /// Fraction of grid points inside multiplier x combined SE.
    pub fraction_within: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CompareReport {
    pub pass: bool,
    pub multiplier: f64,
    pub points: usize,
    pub series: Vec<SeriesComparison>,
    /// Informational: sup |K_A - K_B| over the full matrices.
    pub kernel_sup_diff: f64,
}

/// A series passes when at least this fraction of grid points sits inside
/// the combined SE band.
pub const PASS_FRACTION: f64 = 0.95;

fn compare_series(
    name: &str,
    dt: f64,
    a: &[f64],
    se_a: &[f64],
    b: &[f64],
    se_b: &[f64],
    multiplier: f64,
) -> SeriesComparison {
    let mut sup = 0.0f64;
    let mut l2 = 0.0;
    let mut within = 0usize;
    for l in 0..a.len() {
        let d = (a[l] - b[l]).abs();
        sup = sup.max(d);
        l2 += d * d;
        let band = multiplier * (se_a[l] * se_a[l] + se_b[l] * se_b[l]).sqrt();
        if d <= band {
            within += 1;
        }
    }
    let fraction = within as f64 / a.len() as f64;
    SeriesComparison {
        name: name.to_string(),
        sup_diff: sup,
        l2_diff: (dt * l2).sqrt(),
        fraction_within: fraction,
        pass: fraction >= PASS_FRACTION,
    }
}

/// Diffs the artifact sets of two runs on the same grid. The mean, state
/// mean, state variance and kernel diagonal are gated; the full kernel
/// matrix difference is reported but not gated (its entries share paths, so
/// per-entry SE bands are not independent).
pub fn compare_runs(dir_a: &Path, dir_b: &Path, multiplier: f64) -> Result<CompareReport> {
    let ma = io::read_series_csv(&dir_a.join("m.csv"))?;
    let mb = io::read_series_csv(&dir_b.join("m.csv"))?;
    if ma.steps != mb.steps || ma.dt.to_bits() != mb.dt.to_bits() {
        return Err(Error::invalid(
            "grid",
            format!(
                "runs use different grids: L={} dt={} vs L={} dt={}",
                ma.steps, ma.dt, mb.steps, mb.dt
            ),
        ));
    }
    let ka = io::read_series_csv(&dir_a.join("Ktt.csv"))?;
    let kb = io::read_series_csv(&dir_b.join("Ktt.csv"))?;
    if ka.steps != ma.steps || kb.steps != ma.steps {
        return Err(Error::invalid("grid", "Ktt.csv grid differs from m.csv"));
    }
    let dt = ma.dt;
    let mut series = Vec::new();
    for (name, se_name) in [("m", "se"), ("x_mean", "x_se"), ("x_var", "x_var_se")] {
        series.push(compare_series(
            name,
            dt,
            ma.column(name)?,
            ma.column(se_name)?,
            mb.column(name)?,
            mb.column(se_name)?,
            multiplier,
        ));
    }
    series.push(compare_series(
        "ktt",
        dt,
        ka.column("ktt")?,
        ka.column("se")?,
        kb.column("ktt")?,
        kb.column("se")?,
        multiplier,
    ));
    let kernel_a = io::read_kernel_csv(&dir_a.join("K.csv"))?;
    let kernel_b = io::read_kernel_csv(&dir_b.join("K.csv"))?;
    let mut kernel_sup = 0.0f64;
    for (x, y) in kernel_a.data().iter().zip(kernel_b.data()) {
        kernel_sup = kernel_sup.max((x - y).abs());
    }
    Ok(CompareReport {
        pass: series.iter().all(|s| s.pass),
        multiplier,
        points: ma.steps + 1,
        series,
        kernel_sup_diff: kernel_sup,
    })
}

pub fn render_report(report: &CompareReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "comparison at multiplier {}: {}\n",
        report.multiplier,
        if report.pass { "PASS" } else { "FAIL" }
    ));
    for s in &report.series {
        out.push_str(&format!(
            "  {:<8} sup={:.6e} l2={:.6e} within_band={:.1}% {}\n",
            s.name,
            s.sup_diff,
            s.l2_diff,
            100.0 * s.fraction_within,
            if s.pass { "PASS" } else { "FAIL" }
        ));
    }
    out.push_str(&format!(
        "  kernel   sup={:.6e} (informational)\n",
        report.kernel_sup_diff
    ));
    out
}

fn run_compare(
    config: &ExperimentConfig,
    out_dir: &Path,
    started: Instant,
    written: &mut Vec<PathBuf>,
) -> Result<RunOutcome> {
    let spec = config
        .compare
        .as_ref()
        .expect("validated: compare mode has a compare spec");
    let report = compare_runs(&spec.dir_a, &spec.dir_b, spec.multiplier)?;

    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Malformed {
        what: "report.json".into(),
        message: e.to_string(),
    })?;
    let json_path = out_dir.join("report.json");
    written.push(json_path.clone());
    fs::write(&json_path, json + "\n")?;
    let text_path = out_dir.join("report.txt");
    written.push(text_path.clone());
    fs::write(&text_path, render_report(&report))?;

    let manifest = build_manifest(config, out_dir, started, &["report.json", "report.txt"], Vec::new())?;
    io::write_manifest(out_dir, &manifest)?;
    written.push(out_dir.join(io::MANIFEST_NAME));
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest,
        comparison: Some(report),
    })
}

/// Grid reconstructed from a series file header (for tests and tooling).
pub fn grid_of(file: &io::SeriesFile) -> Result<TimeGrid> {
    TimeGrid::new(file.dt * file.steps as f64, file.dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use tempfile::tempdir;

    fn oracle_config(extra: &str) -> ExperimentConfig {
        let text = format!("t_end = 1.0\ndt = 0.05\nseed = 3\n{extra}");
        ExperimentConfig::from_sources("f1-oracle", Some(&text), &[]).unwrap()
    }

    #[test]
    fn oracle_run_writes_the_full_artifact_set() {
        let dir = tempdir().unwrap();
        let config = oracle_config("");
        let outcome = run_experiment(&config, dir.path()).unwrap();
        for name in CSV_NAMES {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        assert!(dir.path().join(io::MANIFEST_NAME).exists());
        assert_eq!(outcome.manifest.outputs.len(), CSV_NAMES.len());
        assert_eq!(outcome.manifest.mode, "f1-oracle");

        let m = io::read_series_csv(&dir.path().join("m.csv")).unwrap();
        let x_mean = m.column("x_mean").unwrap();
        for (l, &v) in x_mean.iter().enumerate() {
            let t = config.grid.time(l);
            assert!((v - f1::mean_f1(t, 1.0, 0.0)).abs() < 1e-14);
        }
        let ktt = io::read_series_csv(&dir.path().join("Ktt.csv")).unwrap();
        for &v in ktt.column("ktt").unwrap() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn same_config_and_seed_reproduce_identical_bytes() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let text = "t_end = 0.5\ndt = 0.05\npaths = 200\nn_iters = 2\nseed = 11\n";
        let config = ExperimentConfig::from_sources("meanfield", Some(text), &[]).unwrap();
        run_experiment(&config, d1.path()).unwrap();
        run_experiment(&config, d2.path()).unwrap();
        for name in CSV_NAMES {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let m1 = io::read_manifest(d1.path()).unwrap();
        let m2 = io::read_manifest(d2.path()).unwrap();
        assert_eq!(m1.content_hash, m2.content_hash);
    }

    #[test]
    fn constant_activation_meanfield_reports_zero_distance_after_convergence() {
        let dir = tempdir().unwrap();
        let text = "t_end = 0.5\ndt = 0.05\npaths = 300\nn_iters = 3\nseed = 2\n\
                    activation = constant_one\n";
        let config = ExperimentConfig::from_sources("meanfield", Some(text), &[]).unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        let d = &outcome.manifest.diagnostics;
        assert_eq!(d.len(), 3);
        assert_eq!(d[1].distance, 0.0);
        assert_eq!(d[2].distance, 0.0);
    }

    #[test]
    fn a_run_compared_to_itself_passes_with_zero_differences() {
        let run_dir = tempdir().unwrap();
        let cmp_dir = tempdir().unwrap();
        let config = oracle_config("");
        run_experiment(&config, run_dir.path()).unwrap();
        let report = compare_runs(run_dir.path(), run_dir.path(), 3.0).unwrap();
        assert!(report.pass);
        for s in &report.series {
            assert_eq!(s.sup_diff, 0.0);
            assert_eq!(s.fraction_within, 1.0);
        }
        assert_eq!(report.kernel_sup_diff, 0.0);

        // Through the compare mode: report files plus manifest appear.
        let text = format!(
            "dir_a = {}\ndir_b = {}\nmultiplier = 3\n",
            run_dir.path().display(),
            run_dir.path().display()
        );
        let cmp = ExperimentConfig::from_sources("compare", Some(&text), &[]).unwrap();
        let outcome = run_experiment(&cmp, cmp_dir.path()).unwrap();
        assert!(outcome.comparison.unwrap().pass);
        assert!(cmp_dir.path().join("report.json").exists());
        assert!(cmp_dir.path().join("report.txt").exists());
    }

    #[test]
    fn grid_mismatch_is_an_error_not_a_failed_comparison() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        run_experiment(&oracle_config(""), d1.path()).unwrap();
        run_experiment(&oracle_config("dt = 0.1\n"), d2.path()).unwrap();
        let err = compare_runs(d1.path(), d2.path(), 3.0).unwrap_err();
        assert!(err.to_string().contains("grid"), "{err}");
    }

    #[test]
    fn meanfield_and_oracle_agree_for_the_constant_activation() {
        let mf_dir = tempdir().unwrap();
        let or_dir = tempdir().unwrap();
        let mf = ExperimentConfig::from_sources(
            "meanfield",
            Some("t_end = 1.0\ndt = 0.02\npaths = 20000\nn_iters = 2\nseed = 5\n\
                  activation = constant_one\n"),
            &[],
        )
        .unwrap();
        run_experiment(&mf, mf_dir.path()).unwrap();
        run_experiment(&oracle_config("dt = 0.02\n"), or_dir.path()).unwrap();
        let report = compare_runs(mf_dir.path(), or_dir.path(), 3.0).unwrap();
        assert!(report.pass, "{}", render_report(&report));
    }

    #[test]
    fn failed_runs_leave_no_partial_outputs() {
        let dir = tempdir().unwrap();
        // Network whose interaction explodes to infinity at the first step.
        let text = "t_end = 1.0\ndt = 0.1\nneurons = 4\nactivation = identity\n\
                    law = point\nx0 = 1e300\nj = 1e300\nseed = 1\n";
        let config = ExperimentConfig::from_sources("network", Some(text), &[]).unwrap();
        let err = run_experiment(&config, dir.path()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert!(leftovers.is_empty(), "partial outputs left: {leftovers:?}");
    }

    #[test]
    fn network_mode_emits_the_shared_schema() {
        let dir = tempdir().unwrap();
        let text = "t_end = 0.5\ndt = 0.05\nneurons = 64\nseed = 6\nweights = bernoulli\np = 0.25\n";
        let config = ExperimentConfig::from_sources("network", Some(text), &[]).unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert!(outcome.comparison.is_none());
        let m = io::read_series_csv(&dir.path().join("m.csv")).unwrap();
        assert_eq!(m.columns, SERIES_COLUMNS.map(String::from).to_vec());
        // Sigmoid01 activations stay in (0, 1).
        for &v in m.column("m").unwrap() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
