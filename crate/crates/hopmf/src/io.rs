//! CSV and manifest output. Every number is written with 17 significant
//! decimal digits so files round-trip to the exact same f64 bits, and every
//! file starts with a `# L=<steps> dt=<dt>` line carrying the grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fixed_point::IterationDiagnostics;
use crate::grid::TimeGrid;
use crate::kernel::DiscreteKernel;

/// One leading digit plus 16 fractional digits: enough to identify any f64.
pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_number(field: &str, text: &str) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::Malformed {
        what: field.to_string(),
        message: format!("not a number: {text:?}"),
    })
}

fn grid_header(steps: usize, dt: f64) -> String {
    format!("# L={steps} dt={}", format_number(dt))
}

fn parse_grid_header(path: &Path, line: &str) -> Result<(usize, f64)> {
    let err = |message: String| Error::Malformed {
        what: path.display().to_string(),
        message,
    };
    let rest = line
        .strip_prefix("# L=")
        .ok_or_else(|| err(format!("expected '# L=<steps> dt=<dt>' header, got {line:?}")))?;
    let (steps_txt, dt_txt) = rest
        .split_once(" dt=")
        .ok_or_else(|| err(format!("missing dt in header {line:?}")))?;
    let steps = steps_txt
        .trim()
        .parse::<usize>()
        .map_err(|_| err(format!("bad step count {steps_txt:?}")))?;
    let dt = parse_number("dt", dt_txt)?;
    Ok((steps, dt))
}

/// Column-oriented series file: `t` plus named value columns.
pub fn write_series_csv(
    path: &Path,
    grid: &TimeGrid,
    names: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    assert_eq!(names.len(), columns.len());
    let n = grid.num_points();
    for col in columns {
        assert_eq!(col.len(), n, "column length must match the grid");
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", grid_header(grid.steps(), grid.dt()))?;
    writeln!(w, "t,{}", names.join(","))?;
    for l in 0..n {
        let mut line = format_number(grid.time(l));
        for col in columns {
            line.push(',');
            line.push_str(&format_number(col[l]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SeriesFile {
    pub steps: usize,
    pub dt: f64,
    pub t: Vec<f64>,
    pub columns: Vec<String>,
    pub data: BTreeMap<String, Vec<f64>>,
}

impl SeriesFile {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.data
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Malformed {
                what: name.to_string(),
                message: format!("column missing (have: {})", self.columns.join(", ")),
            })
    }
}

pub fn read_series_csv(path: &Path) -> Result<SeriesFile> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Malformed {
        what: path.display().to_string(),
        message: "empty file".into(),
    })?;
    let (steps, dt) = parse_grid_header(path, header)?;
    let names_line = lines.next().ok_or_else(|| Error::Malformed {
        what: path.display().to_string(),
        message: "missing column header".into(),
    })?;
    let mut names = names_line.split(',').map(str::trim);
    if names.next() != Some("t") {
        return Err(Error::Malformed {
            what: path.display().to_string(),
            message: format!("first column must be t, got {names_line:?}"),
        });
    }
    let columns: Vec<String> = names.map(str::to_string).collect();
    let mut t = Vec::with_capacity(steps + 1);
    let mut data: Vec<Vec<f64>> = vec![Vec::with_capacity(steps + 1); columns.len()];
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let what = format!("{} line {}", path.display(), ln + 3);
        t.push(parse_number(&what, fields.next().unwrap_or(""))?);
        for col in data.iter_mut() {
            let field = fields.next().ok_or_else(|| Error::Malformed {
                what: what.clone(),
                message: format!("expected {} fields", columns.len() + 1),
            })?;
            col.push(parse_number(&what, field)?);
        }
    }
    if t.len() != steps + 1 {
        return Err(Error::Malformed {
            what: path.display().to_string(),
            message: format!("header says {} rows, found {}", steps + 1, t.len()),
        });
    }
    let data = columns.iter().cloned().zip(data).collect();
    Ok(SeriesFile {
        steps,
        dt,
        t,
        columns,
        data,
    })
}

/// Full symmetric kernel matrix, one grid row per line.
pub fn write_kernel_csv(path: &Path, k: &DiscreteKernel) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", grid_header(k.n() - 1, k.dt()))?;
    let mut line = String::new();
    for i in 0..k.n() {
        line.clear();
        for j in 0..k.n() {
            if j > 0 {
                line.push(',');
            }
            let _ = write!(line, "{}", format_number(k.get(i, j)));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kernel_csv(path: &Path) -> Result<DiscreteKernel> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Malformed {
        what: path.display().to_string(),
        message: "empty file".into(),
    })?;
    let (steps, dt) = parse_grid_header(path, header)?;
    let n = steps + 1;
    let mut data = Vec::with_capacity(n * n);
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let what = format!("{} row {}", path.display(), i);
        for field in line.split(',') {
            data.push(parse_number(&what, field)?);
        }
    }
    if data.len() != n * n {
        return Err(Error::Malformed {
            what: path.display().to_string(),
            message: format!("expected {} entries, found {}", n * n, data.len()),
        });
    }
    DiscreteKernel::from_raw(n, dt, data)
}

/// Conditioned-kernel family: row l holds the l values K~(l dt, j dt), j < l.
pub fn write_ktilde_csv(path: &Path, grid: &TimeGrid, rows: &[&[f64]]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", grid_header(grid.steps(), grid.dt()))?;
    writeln!(w, "# row l: conditioned kernel values at (l dt, j dt) for j < l")?;
    for (l, row) in rows.iter().enumerate() {
        let mut line = format!("{l}");
        for v in *row {
            line.push(',');
            line.push_str(&format_number(*v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// A few representative trajectories and their activations:
/// columns t, x0, f0, x1, f1, ...
pub fn write_sample_paths_csv(
    path: &Path,
    grid: &TimeGrid,
    paths: &[Vec<f64>],
    activation: impl Fn(f64) -> f64,
) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", grid_header(grid.steps(), grid.dt()))?;
    let names: Vec<String> = (0..paths.len())
        .flat_map(|p| [format!("x{p}"), format!("f{p}")])
        .collect();
    writeln!(w, "t,{}", names.join(","))?;
    for l in 0..grid.num_points() {
        let mut line = format_number(grid.time(l));
        for path_vals in paths {
            let x = path_vals[l];
            line.push(',');
            line.push_str(&format_number(x));
            line.push(',');
            line.push_str(&format_number(activation(x)));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Combined hash over (name, per-file hash) pairs in map order: changes iff
/// any output byte changes.
pub fn combined_hash(outputs: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (name, hash) in outputs {
        hasher.update(name.as_bytes());
        hasher.update(b"\0");
        hasher.update(hash.as_bytes());
        hasher.update(b"\n");
    }
    format!("{:x}", hasher.finalize())
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub mode: String,
    /// Effective configuration, every key explicit.
    pub config: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    /// File name -> SHA-256 of the written bytes.
    pub outputs: BTreeMap<String, String>,
    pub content_hash: String,
    pub wall_seconds: f64,
    pub diagnostics: Vec<IterationDiagnostics>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Malformed {
        what: MANIFEST_NAME.into(),
        message: e.to_string(),
    })?;
    fs::write(dir.join(MANIFEST_NAME), text + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        what: MANIFEST_NAME.into(),
        message: e.to_string(),
    })
}
