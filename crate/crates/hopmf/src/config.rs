//! Flat key=value experiment configuration with command-line overrides.
//! Every run is expressible in a dozen keys; unknown keys are rejected by
//! name so typos cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{Activation, Drift, InitialLaw, ModelSpec};
use crate::quenched::WeightSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Meanfield,
    Network,
    F1Oracle,
    Compare,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "meanfield" => Ok(Mode::Meanfield),
            "network" => Ok(Mode::Network),
            "f1-oracle" => Ok(Mode::F1Oracle),
            "compare" => Ok(Mode::Compare),
            other => Err(Error::invalid(
                "mode",
                format!("unknown mode {other:?} (expected meanfield, network, f1-oracle or compare)"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Meanfield => "meanfield",
            Mode::Network => "network",
            Mode::F1Oracle => "f1-oracle",
            Mode::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightStorage {
    /// Dense up to the sampler threshold, storage-free above it.
    Auto,
    Dense,
    Lazy,
    Sparse,
}

impl WeightStorage {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(WeightStorage::Auto),
            "dense" => Ok(WeightStorage::Dense),
            "lazy" => Ok(WeightStorage::Lazy),
            "sparse" => Ok(WeightStorage::Sparse),
            other => Err(Error::invalid(
                "weight_storage",
                format!("unknown storage {other:?} (expected auto, dense, lazy or sparse)"),
            )),
        }
    }

    fn name(self) -> &'static str {
        match self {
            WeightStorage::Auto => "auto",
            WeightStorage::Dense => "dense",
            WeightStorage::Lazy => "lazy",
            WeightStorage::Sparse => "sparse",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareSpec {
    pub dir_a: PathBuf,
    pub dir_b: PathBuf,
    pub multiplier: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub law: InitialLaw,
    /// Monte Carlo trajectories (meanfield / f1-oracle).
    pub paths: usize,
    /// Network size (network mode).
    pub neurons: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub fresh_noise: bool,
    pub weights: WeightSampler,
    pub weights_seed: u64,
    pub weight_storage: WeightStorage,
    pub compare: Option<CompareSpec>,
    /// The effective key=value map, echoed into the manifest.
    echo: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "drift",
    "alpha",
    "wall_a",
    "wall_k",
    "activation",
    "j",
    "sigma",
    "lambda",
    "t_end",
    "dt",
    "law",
    "x0",
    "law_mean",
    "law_std",
    "law_lo",
    "law_hi",
    "paths",
    "neurons",
    "n_iters",
    "seed",
    "fresh_noise",
    "weights",
    "p",
    "weights_seed",
    "weight_storage",
    "dir_a",
    "dir_b",
    "multiplier",
];

/// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::invalid(
                "config",
                format!("line {}: expected key = value, got {raw:?}", ln + 1),
            )
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(Error::invalid(&key, "empty value"));
        }
        map.insert(key, value);
    }
    Ok(map)
}

struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| Error::invalid(key, format!("not a number: {v:?}"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::invalid(key, format!("not a non-negative integer: {v:?}"))),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::invalid(key, format!("not a non-negative integer: {v:?}"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(Error::invalid(key, format!("not a boolean: {v:?}"))),
        }
    }
}

impl ExperimentConfig {
    /// Builds the effective configuration: file keys, then overrides, then
    /// the CLI mode (which wins over a `mode` key).
    pub fn from_sources(
        mode: &str,
        file_text: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<ExperimentConfig> {
        let mut map = match file_text {
            Some(text) => parse_config_text(text)?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            if v.trim().is_empty() {
                return Err(Error::invalid(k, "empty value"));
            }
            map.insert(k.clone(), v.trim().to_string());
        }
        map.insert("mode".to_string(), mode.to_string());
        Self::from_map(map)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<ExperimentConfig> {
        for key in map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::invalid(
                    key,
                    format!("unknown configuration key (known keys: {})", KNOWN_KEYS.join(", ")),
                ));
            }
        }
        let keys = Keys { map };
        let mode = Mode::parse(keys.get("mode").unwrap_or(""))?;

        let drift = match keys.get("drift").unwrap_or("linear") {
            "linear" => Drift::Linear {
                alpha: keys.f64_or("alpha", 1.0)?,
            },
            "barrier" => Drift::LogBarrier {
                a: keys.f64_or("wall_a", 2.0)?,
                k: keys.usize_or("wall_k", 2)? as u32,
            },
            other => {
                return Err(Error::invalid(
                    "drift",
                    format!("unknown drift {other:?} (expected linear or barrier)"),
                ))
            }
        };
        let activation = Activation::parse(keys.get("activation").unwrap_or("sigmoid01"))?;
        let model = ModelSpec {
            drift,
            activation,
            j: keys.f64_or("j", 1.0)?,
            sigma: keys.f64_or("sigma", 1.0)?,
            lambda: keys.f64_or("lambda", 1.0)?,
        };

        let t_end = keys.f64_or("t_end", 1.0)?;
        let dt = keys.f64_or("dt", 0.01)?;
        let grid = TimeGrid::new(t_end, dt)?;

        let law = match keys.get("law").unwrap_or("point") {
            "point" => InitialLaw::PointMass {
                x0: keys.f64_or("x0", 0.0)?,
            },
            "gaussian" => InitialLaw::Gaussian {
                mean: keys.f64_or("law_mean", 0.0)?,
                std: keys.f64_or("law_std", 1.0)?,
            },
            "uniform" => InitialLaw::Uniform {
                lo: keys.f64_or("law_lo", -1.0)?,
                hi: keys.f64_or("law_hi", 1.0)?,
            },
            other => {
                return Err(Error::invalid(
                    "law",
                    format!("unknown initial law {other:?} (expected point, gaussian or uniform)"),
                ))
            }
        };
        law.validate()?;

        let weights = match keys.get("weights").unwrap_or("gaussian") {
            "gaussian" => WeightSampler::Gaussian,
            "bernoulli" => WeightSampler::Bernoulli {
                p: keys.f64_or("p", 0.25)?,
            },
            other => {
                return Err(Error::invalid(
                    "weights",
                    format!("unknown sampler {other:?} (expected gaussian or bernoulli)"),
                ))
            }
        };
        let seed = keys.u64_or("seed", 1)?;

        let compare = if mode == Mode::Compare {
            let dir_a = keys
                .get("dir_a")
                .ok_or_else(|| Error::invalid("dir_a", "compare mode needs dir_a"))?;
            let dir_b = keys
                .get("dir_b")
                .ok_or_else(|| Error::invalid("dir_b", "compare mode needs dir_b"))?;
            let multiplier = keys.f64_or("multiplier", 3.0)?;
            if !multiplier.is_finite() || multiplier <= 0.0 {
                return Err(Error::invalid("multiplier", "must be a positive finite number"));
            }
            Some(CompareSpec {
                dir_a: PathBuf::from(dir_a),
                dir_b: PathBuf::from(dir_b),
                multiplier,
            })
        } else {
            None
        };

        let config = ExperimentConfig {
            mode,
            model,
            grid,
            law,
            paths: keys.usize_or("paths", 10_000)?,
            neurons: keys.usize_or("neurons", 1000)?,
            n_iters: keys.usize_or("n_iters", 5)?,
            seed,
            fresh_noise: keys.bool_or("fresh_noise", true)?,
            weights,
            weights_seed: keys.u64_or("weights_seed", seed)?,
            weight_storage: WeightStorage::parse(keys.get("weight_storage").unwrap_or("auto"))?,
            compare,
            echo: keys.map,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::Meanfield => {
                self.model.validate()?;
                self.model.validate_initial_law(&self.law)?;
                if self.paths < 100 {
                    return Err(Error::invalid("paths", "meanfield mode needs paths >= 100"));
                }
                if self.n_iters == 0 {
                    return Err(Error::invalid("n_iters", "need at least one iteration"));
                }
            }
            Mode::Network => {
                self.model.validate()?;
                self.model.validate_initial_law(&self.law)?;
                if self.neurons == 0 {
                    return Err(Error::invalid("neurons", "need at least one neuron"));
                }
                if let WeightSampler::Bernoulli { p } = self.weights {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::invalid("p", "must lie strictly in (0, 1)"));
                    }
                }
                if self.weight_storage == WeightStorage::Lazy
                    && self.weights != WeightSampler::Gaussian
                {
                    return Err(Error::invalid(
                        "weight_storage",
                        "lazy storage requires gaussian weights",
                    ));
                }
                if self.weight_storage == WeightStorage::Sparse
                    && matches!(self.weights, WeightSampler::Gaussian | WeightSampler::Explicit)
                {
                    return Err(Error::invalid(
                        "weight_storage",
                        "sparse storage requires bernoulli weights",
                    ));
                }
            }
            Mode::F1Oracle => {
                self.model.validate()?;
                self.model.validate_initial_law(&self.law)?;
                if !matches!(self.model.drift, Drift::Linear { .. }) {
                    return Err(Error::invalid(
                        "drift",
                        "the closed-form oracle covers the linear drift only",
                    ));
                }
            }
            Mode::Compare => {
                if self.compare.is_none() {
                    return Err(Error::invalid("dir_a", "compare mode needs dir_a and dir_b"));
                }
            }
        }
        Ok(())
    }

    /// Effective settings for the manifest: defaults made explicit.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut out = self.echo.clone();
        let mut put = |k: &str, v: String| {
            out.entry(k.to_string()).or_insert(v);
        };
        put("mode", self.mode.name().to_string());
        match self.model.drift {
            Drift::Linear { alpha } => {
                put("drift", "linear".into());
                put("alpha", alpha.to_string());
            }
            Drift::LogBarrier { a, k } => {
                put("drift", "barrier".into());
                put("wall_a", a.to_string());
                put("wall_k", k.to_string());
            }
        }
        put("activation", self.model.activation.name().to_string());
        put("j", self.model.j.to_string());
        put("sigma", self.model.sigma.to_string());
        put("lambda", self.model.lambda.to_string());
        put("t_end", self.grid.t_end().to_string());
        put("dt", self.grid.dt().to_string());
        match self.law {
            InitialLaw::PointMass { x0 } => {
                put("law", "point".into());
                put("x0", x0.to_string());
            }
            InitialLaw::Gaussian { mean, std } => {
                put("law", "gaussian".into());
                put("law_mean", mean.to_string());
                put("law_std", std.to_string());
            }
            InitialLaw::Uniform { lo, hi } => {
                put("law", "uniform".into());
                put("law_lo", lo.to_string());
                put("law_hi", hi.to_string());
            }
        }
        put("paths", self.paths.to_string());
        put("neurons", self.neurons.to_string());
        put("n_iters", self.n_iters.to_string());
        put("seed", self.seed.to_string());
        put("fresh_noise", self.fresh_noise.to_string());
        match self.weights {
            WeightSampler::Gaussian => put("weights", "gaussian".into()),
            WeightSampler::Bernoulli { p } => {
                put("weights", "bernoulli".into());
                put("p", p.to_string());
            }
            WeightSampler::Explicit => put("weights", "explicit".into()),
        }
        put("weights_seed", self.weights_seed.to_string());
        put("weight_storage", self.weight_storage.name().to_string());
        out
    }
}
