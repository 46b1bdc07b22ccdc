use std::path::PathBuf;
use std::process::ExitCode;

use hopmf::config::ExperimentConfig;
use hopmf::runner::run_experiment;
use hopmf::Error;

const USAGE: &str = "\
usage: hopmf <mode> [--config FILE] [--KEY VALUE ...] --out DIR

modes:
  meanfield   iterate the fixed-point map, write mean and kernel estimates
  network     simulate one finite network with sampled weights
  f1-oracle   closed-form curves for the constant activation f = 1
  compare     diff two artifact directories (exit 3 on mismatch)

Any configuration key can be passed as --KEY VALUE; command-line values
override the config file. Run directories are created if missing.

examples:
  hopmf meanfield --config run.cfg --paths 200000 --out out/mf
  hopmf network --neurons 10000 --weights bernoulli --p 0.25 --out out/net
  hopmf compare --dir_a out/mf --dir_b out/net --multiplier 3 --out out/cmp
";

struct Cli {
    mode: String,
    config_file: Option<PathBuf>,
    out: PathBuf,
    overrides: Vec<(String, String)>,
}

fn parse_args(args: &[String]) -> Result<Cli, String> {
    let mut iter = args.iter();
    let mode = match iter.next() {
        Some(m) if !m.starts_with("--") => m.clone(),
        Some(m) => return Err(format!("expected a mode before {m}")),
        None => return Err("missing mode".to_string()),
    };
    let mut config_file = None;
    let mut out = None;
    let mut overrides = Vec::new();
    while let Some(flag) = iter.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| format!("expected --KEY VALUE pairs, got {flag}"))?;
        let value = iter
            .next()
            .ok_or_else(|| format!("--{key} needs a value"))?
            .clone();
        match key {
            "config" => config_file = Some(PathBuf::from(value)),
            "out" => out = Some(PathBuf::from(value)),
            _ => overrides.push((key.to_string(), value)),
        }
    }
    Ok(Cli {
        mode,
        config_file,
        out: out.ok_or("--out DIR is required")?,
        overrides,
    })
}

#[cfg(feature = "parallel")]
fn configure_workers() {
    if let Ok(v) = std::env::var("HOPMF_WORKERS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore the error from setting the pool twice.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring HOPMF_WORKERS={v} (want a positive integer)"),
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_workers() {}

fn run() -> Result<i32, Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--help" || a == "-h") || args.is_empty() {
        print!("{USAGE}");
        return Ok(if args.is_empty() { 1 } else { 0 });
    }
    let cli = parse_args(&args).map_err(|message| {
        eprint!("{USAGE}");
        Error::invalid("arguments", message)
    })?;
    configure_workers();

    let file_text = match &cli.config_file {
        Some(path) => Some(std::fs::read_to_string(path)?),
        None => None,
    };
    let config = ExperimentConfig::from_sources(&cli.mode, file_text.as_deref(), &cli.overrides)?;
    let outcome = run_experiment(&config, &cli.out)?;

    println!(
        "{} run complete in {:.2}s, outputs in {}",
        outcome.manifest.mode,
        outcome.manifest.wall_seconds,
        outcome.out_dir.display()
    );
    if let Some(last) = outcome.manifest.diagnostics.last() {
        println!(
            "final iteration {}: distance {:.6e}, sup |dm| {:.3e}, sup |dK| {:.3e}",
            last.iteration, last.distance, last.sup_dm, last.sup_dk
        );
    }
    if let Some(report) = &outcome.comparison {
        print!("{}", hopmf::runner::render_report(report));
        if !report.pass {
            return Ok(3);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
