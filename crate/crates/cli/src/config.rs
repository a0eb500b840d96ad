//! Line-oriented `section.key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::Path;

use efedsim::federation::{Compression, ServerBehavior};
use efedsim::softmax_verify::BaseBConfig;
use efedsim::transformer::{ModelConfig, PartitionPlan};
use efedsim::trust::VerifierConfig;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key '{key}'")]
    Duplicate { line: usize, key: String },
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressionMode {
    None,
    Energy,
    Ratio,
}

impl CompressionMode {
    fn name(self) -> &'static str {
        match self {
            CompressionMode::None => "none",
            CompressionMode::Energy => "energy",
            CompressionMode::Ratio => "ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    /// Tokens per inference request.
    pub input_len: usize,
    pub n_servers: usize,
    pub layer_split: Vec<usize>,
    pub behaviors: Vec<ServerBehavior>,
    pub trust: VerifierConfig,
    pub rounds: usize,
    pub verifiers: usize,
    pub compression_mode: CompressionMode,
    pub compression_value: f64,
    pub verify: BaseBConfig,
    pub n_workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_str("").expect("defaults are valid")
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: [&str; 23] = [
    "seed",
    "model.d_model",
    "model.n_heads",
    "model.n_layers",
    "model.d_ff",
    "model.vocab",
    "model.seq_len",
    "model.input_len",
    "topology.n_servers",
    "topology.layer_split",
    "topology.behaviors",
    "trust.theta",
    "trust.tau",
    "trust.probe_count",
    "trust.w",
    "trust.rounds",
    "trust.verifiers",
    "compression.mode",
    "compression.value",
    "verify.b",
    "verify.K",
    "verify.f",
    "verify.n_workers",
];

struct Raw(Vec<(String, String)>);

impl Raw {
    fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| invalid(key, format!("cannot parse '{v}'"))),
        }
    }

    fn positive(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = self.num(key, default)?;
        if v == 0 {
            return Err(invalid(key, "must be >= 1"));
        }
        Ok(v)
    }

    fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v: f64 = self.num(key, default)?;
        if !v.is_finite() {
            return Err(invalid(key, "must be finite"));
        }
        Ok(v)
    }
}

fn tokenize(text: &str) -> Result<Raw, ConfigError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            reason: format!("expected 'key = value', got '{body}'"),
        })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax {
                line: line_no,
                reason: format!("malformed key '{key}'"),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line: line_no,
                key: key.to_string(),
            });
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(ConfigError::Duplicate {
                line: line_no,
                key: key.to_string(),
            });
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(Raw(out))
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw = tokenize(text)?;
    let model = ModelConfig {
        d_model: raw.positive("model.d_model", 32)?,
        n_heads: raw.positive("model.n_heads", 4)?,
        n_layers: raw.positive("model.n_layers", 4)?,
        d_ff: raw.positive("model.d_ff", 64)?,
        vocab_size: raw.positive("model.vocab", 101)?,
        max_seq_len: raw.positive("model.seq_len", 64)?,
    };
    if !model.d_model.is_multiple_of(model.n_heads) {
        return Err(invalid(
            "model.n_heads",
            format!("must divide model.d_model = {}", model.d_model),
        ));
    }
    let input_len = raw.positive("model.input_len", 16)?;
    if input_len > model.max_seq_len {
        return Err(invalid("model.input_len", "exceeds model.seq_len"));
    }

    let n_servers = raw.positive("topology.n_servers", 4)?;
    let layer_split = match raw.get("topology.layer_split") {
        None | Some("even") | Some("") => PartitionPlan::even(n_servers, model.n_layers)
            .map_err(|e| invalid("topology.n_servers", e.to_string()))?
            .entries()
            .iter()
            .map(|e| e.len())
            .collect(),
        Some(v) => {
            let sizes = v
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| invalid("topology.layer_split", format!("cannot parse '{v}'")))?;
            if sizes.len() != n_servers {
                return Err(invalid(
                    "topology.layer_split",
                    format!("{} entries for {n_servers} servers", sizes.len()),
                ));
            }
            if sizes.contains(&0) || sizes.iter().sum::<usize>() != model.n_layers {
                return Err(invalid(
                    "topology.layer_split",
                    format!("entries must be >= 1 and sum to {}", model.n_layers),
                ));
            }
            sizes
        }
    };
    let behaviors = match raw.get("topology.behaviors") {
        None | Some("") => vec![ServerBehavior::Honest; n_servers],
        Some(v) => {
            let b = v
                .split(',')
                .map(str::parse::<ServerBehavior>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| invalid("topology.behaviors", e.to_string()))?;
            if b.len() != n_servers {
                return Err(invalid(
                    "topology.behaviors",
                    format!("{} entries for {n_servers} servers", b.len()),
                ));
            }
            b
        }
    };

    let trust = VerifierConfig {
        theta: raw.real("trust.theta", 0.5)?,
        tau: raw.real("trust.tau", 1e-6)?,
        probe_count: raw.positive("trust.probe_count", 8)?,
        weight: raw.real("trust.w", 1.0)?,
    };
    trust.validate().map_err(|e| match e {
        efedsim::trust::TrustError::InvalidConfig { key, reason } => {
            invalid(&format!("trust.{key}"), reason)
        }
        other => invalid("trust", other.to_string()),
    })?;
    let rounds = raw.positive("trust.rounds", 3)?;
    let verifiers = raw.positive("trust.verifiers", 2)?;

    let compression_mode = match raw.get("compression.mode").unwrap_or("none") {
        "none" => CompressionMode::None,
        "energy" => CompressionMode::Energy,
        "ratio" => CompressionMode::Ratio,
        other => {
            return Err(invalid(
                "compression.mode",
                format!("'{other}' is not one of none, energy, ratio"),
            ))
        }
    };
    let compression_value = raw.real("compression.value", 1.0)?;
    if !(compression_value > 0.0 && compression_value <= 1.0) {
        return Err(invalid("compression.value", "must lie in (0, 1]"));
    }

    let verify = BaseBConfig {
        b: raw.num("verify.b", 16)?,
        k: raw.num("verify.K", 4)?,
        f: raw.num("verify.f", 8)?,
    };
    if let Err(e) = verify.validate() {
        let key = if verify.b < 2 {
            "verify.b"
        } else if verify.k < 1 {
            "verify.K"
        } else if verify.f > 52 {
            "verify.f"
        } else {
            "verify.K"
        };
        return Err(invalid(key, e.to_string()));
    }
    let n_workers = raw.positive("verify.n_workers", 4)?;

    Ok(ExperimentConfig {
        seed: raw.num("seed", 42)?,
        model,
        input_len,
        n_servers,
        layer_split,
        behaviors,
        trust,
        rounds,
        verifiers,
        compression_mode,
        compression_value,
        verify,
        n_workers,
    })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_str(&text)
}

impl ExperimentConfig {
    pub fn compression(&self) -> Compression {
        match self.compression_mode {
            CompressionMode::None => Compression::None,
            CompressionMode::Energy => Compression::Energy(self.compression_value),
            CompressionMode::Ratio => Compression::Ratio(self.compression_value),
        }
    }

    pub fn plan(&self) -> PartitionPlan {
        PartitionPlan::from_sizes(&self.layer_split).expect("validated at parse time")
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn canonical(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let values: [String; 23] = [
            self.seed.to_string(),
            self.model.d_model.to_string(),
            self.model.n_heads.to_string(),
            self.model.n_layers.to_string(),
            self.model.d_ff.to_string(),
            self.model.vocab_size.to_string(),
            self.model.max_seq_len.to_string(),
            self.input_len.to_string(),
            self.n_servers.to_string(),
            join(self.layer_split.iter().map(|s| s.to_string()).collect()),
            join(self.behaviors.iter().map(|b| b.to_string()).collect()),
            self.trust.theta.to_string(),
            self.trust.tau.to_string(),
            self.trust.probe_count.to_string(),
            self.trust.weight.to_string(),
            self.rounds.to_string(),
            self.verifiers.to_string(),
            self.compression_mode.name().to_string(),
            self.compression_value.to_string(),
            self.verify.b.to_string(),
            self.verify.k.to_string(),
            self.verify.f.to_string(),
            self.n_workers.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Hex SHA-256 of [`Self::canonical`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
