//! Line-oriented experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Every key is
//! optional except `dataset`. See `docs/config.md` for the key reference.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use fedhbn_core::federation::FedConfig;
use fedhbn_core::norm::NormKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line of the offending entry, if it came from a line.
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "config: `{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Procedural images from `fedhbn_core::data::synth_split`.
    Synthetic {
        classes: usize,
        train: usize,
        test: usize,
        channels: usize,
        size: usize,
        separation: f64,
        /// Spread of the per-class channel offsets.
        tint: f64,
        /// Spread of the per-class log gain of whole samples.
        contrast: f64,
    },
    /// CIFAR-10 binary batches; `dir` falls back to `$FHBN_DATA_DIR`.
    Cifar10 { dir: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub fed: FedConfig,
    /// Number of clients K.
    pub clients: usize,
    /// Dirichlet coefficient φ.
    pub phi: f64,
    /// Minimum samples per client; `None` means `2·B`.
    pub min_samples: Option<usize>,
    pub dataset: DatasetSpec,
    pub output: Option<PathBuf>,
    pub threads: usize,
}

pub const SYNTH_DEFAULTS: DatasetSpec = DatasetSpec::Synthetic {
    classes: 10,
    train: 2000,
    test: 500,
    channels: 3,
    size: 16,
    separation: 1.0,
    tint: 0.0,
    contrast: 0.0,
};

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fed: FedConfig {
                rounds: 10,
                ..FedConfig::default()
            },
            clients: 10,
            phi: 0.6,
            min_samples: None,
            dataset: SYNTH_DEFAULTS,
            output: None,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(2 * self.fed.batch_size)
    }

    /// Checks every constraint; `lines` maps keys to the line that set them.
    fn validate(&self, lines: &HashMap<String, usize>) -> Result<(), ConfigError> {
        let err = |key: &str, message: String| ConfigError {
            line: lines.get(key).copied(),
            key: key.into(),
            message,
        };
        let f = &self.fed;
        if self.clients == 0 {
            return Err(err("clients", "must be at least 1".into()));
        }
        if !(f.participation > 0.0 && f.participation <= 1.0) {
            return Err(err(
                "participation",
                format!("{} is out of range (0, 1]", f.participation),
            ));
        }
        if f.batch_size == 0 {
            return Err(err("batch_size", "must be at least 1".into()));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(err("phi", format!("{} is not a positive number", self.phi)));
        }
        if !(f.lr >= 0.0 && f.lr.is_finite()) {
            return Err(err("lr", format!("{} is not a non-negative number", f.lr)));
        }
        if !(f.lr_decay > 0.0 && f.lr_decay <= 1.0) {
            return Err(err(
                "lr_decay",
                format!("{} is out of range (0, 1]", f.lr_decay),
            ));
        }
        if !(0.0..1.0).contains(&f.momentum) {
            return Err(err(
                "momentum",
                format!("{} is out of range [0, 1)", f.momentum),
            ));
        }
        if !(f.lambda > 0.0 && f.lambda <= 1.0) {
            return Err(err(
                "lambda",
                format!("{} is out of range (0, 1]", f.lambda),
            ));
        }
        if !(f.epsilon > 0.0 && f.epsilon.is_finite()) {
            return Err(err(
                "epsilon",
                format!("{} is not a positive number", f.epsilon),
            ));
        }
        if f.stats_cap == Some(0) {
            return Err(err("stats_cap", "must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(err("threads", "must be at least 1".into()));
        }
        if let DatasetSpec::Synthetic {
            classes,
            train,
            test,
            channels,
            size,
            separation,
            tint,
            contrast,
        } = self.dataset
        {
            for (key, v) in [
                ("synth_classes", classes),
                ("synth_train", train),
                ("synth_test", test),
                ("synth_channels", channels),
            ] {
                if v == 0 {
                    return Err(err(key, "must be at least 1".into()));
                }
            }
            if size < 8 {
                return Err(err(
                    "synth_size",
                    format!("{size} is below the minimum of 8"),
                ));
            }
            if !(separation >= 0.0 && separation.is_finite()) {
                return Err(err(
                    "synth_separation",
                    format!("{separation} is not a non-negative number"),
                ));
            }
            for (key, v) in [("synth_tint", tint), ("synth_contrast", contrast)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(err(key, format!("{v} is not a non-negative number")));
                }
            }
        }
        Ok(())
    }
}

fn parse_value<T: FromStr>(
    key: &str,
    raw: &str,
    line: usize,
    what: &str,
) -> Result<T, ConfigError> {
    raw.parse().map_err(|_| ConfigError {
        line: Some(line),
        key: key.into(),
        message: format!("expected {what}, got `{raw}`"),
    })
}

fn parse_bool(key: &str, raw: &str, line: usize) -> Result<bool, ConfigError> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError {
            line: Some(line),
            key: key.into(),
            message: format!("expected a boolean, got `{raw}`"),
        }),
    }
}

/// Parses and validates a configuration file's text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut lines: HashMap<String, usize> = HashMap::new();
    let mut dataset: Option<String> = None;
    let mut data_dir: Option<PathBuf> = None;
    let DatasetSpec::Synthetic {
        mut classes,
        mut train,
        mut test,
        mut channels,
        mut size,
        mut separation,
        mut tint,
        mut contrast,
    } = SYNTH_DEFAULTS
    else {
        unreachable!()
    };

    for (i, raw_line) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError {
                line: Some(n),
                key: line.into(),
                message: "expected `key = value`".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(first) = lines.insert(key.to_string(), n) {
            return Err(ConfigError {
                line: Some(n),
                key: key.into(),
                message: format!("already set on line {first}"),
            });
        }
        let f = &mut cfg.fed;
        match key {
            "clients" => cfg.clients = parse_value(key, value, n, "an integer")?,
            "participation" => f.participation = parse_value(key, value, n, "a number")?,
            "rounds" => f.rounds = parse_value(key, value, n, "an integer")?,
            "local_epochs" => f.local_epochs = parse_value(key, value, n, "an integer")?,
            "batch_size" => f.batch_size = parse_value(key, value, n, "an integer")?,
            "phi" => cfg.phi = parse_value(key, value, n, "a number")?,
            "norm" => {
                f.norm = NormKind::from_str(value).map_err(|_| ConfigError {
                    line: Some(n),
                    key: key.into(),
                    message: format!(
                    "unknown normalization `{value}` (bn, naive_bn, gn, ln, fixbn, fbn, hbn, none)"
                ),
                })?
            }
            "lr" => f.lr = parse_value(key, value, n, "a number")?,
            "lr_decay" => f.lr_decay = parse_value(key, value, n, "a number")?,
            "momentum" => f.momentum = parse_value(key, value, n, "a number")?,
            "lambda" => f.lambda = parse_value(key, value, n, "a number")?,
            "epsilon" => f.epsilon = parse_value(key, value, n, "a number")?,
            "seed" => f.seed = parse_value(key, value, n, "an unsigned integer")?,
            "stats_cap" => {
                f.stats_cap = match value {
                    "none" | "full" => None,
                    v => Some(parse_value(key, v, n, "an integer or `none`")?),
                }
            }
            "measure_gap" => f.measure_gap = parse_bool(key, value, n)?,
            "eval_every" => f.eval_every = parse_value(key, value, n, "an integer")?,
            "min_samples" => cfg.min_samples = Some(parse_value(key, value, n, "an integer")?),
            "threads" => cfg.threads = parse_value(key, value, n, "an integer")?,
            "output" => cfg.output = Some(PathBuf::from(value)),
            "dataset" => dataset = Some(value.to_ascii_lowercase()),
            "data_dir" => data_dir = Some(PathBuf::from(value)),
            "synth_classes" => classes = parse_value(key, value, n, "an integer")?,
            "synth_train" => train = parse_value(key, value, n, "an integer")?,
            "synth_test" => test = parse_value(key, value, n, "an integer")?,
            "synth_channels" => channels = parse_value(key, value, n, "an integer")?,
            "synth_size" => size = parse_value(key, value, n, "an integer")?,
            "synth_separation" => separation = parse_value(key, value, n, "a number")?,
            "synth_tint" => tint = parse_value(key, value, n, "a number")?,
            "synth_contrast" => contrast = parse_value(key, value, n, "a number")?,
            _ => {
                return Err(ConfigError {
                    line: Some(n),
                    key: key.into(),
                    message: "unknown key".into(),
                })
            }
        }
    }

    cfg.dataset = match dataset.as_deref() {
        None => {
            return Err(ConfigError {
                line: None,
                key: "dataset".into(),
                message: "required field is missing (synthetic or cifar10)".into(),
            })
        }
        Some("synthetic") => DatasetSpec::Synthetic {
            classes,
            train,
            test,
            channels,
            size,
            separation,
            tint,
            contrast,
        },
        Some("cifar10") => DatasetSpec::Cifar10 { dir: data_dir },
        Some(other) => {
            return Err(ConfigError {
                line: lines.get("dataset").copied(),
                key: "dataset".into(),
                message: format!("unknown dataset `{other}` (synthetic or cifar10)"),
            })
        }
    };
    cfg.validate(&lines)?;
    Ok(cfg)
}
