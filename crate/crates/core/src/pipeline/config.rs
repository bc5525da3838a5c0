use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::SubsampleStrategy;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::objective::{AggregationMethod, ComposeTarget, LossConfig, PairSetup, TrainMode};

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub corpus_path: PathBuf,
    pub sts_dev_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
    pub eval_every: usize,
    pub metric_every: usize,
    pub temperature: f64,
    pub dropout: f64,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub min_freq: usize,
    pub aggregation: AggregationMethod,
    pub compose_target: ComposeTarget,
    pub partitions: usize,
    /// Leading coordinates the loss compares; `None` means all of them.
    pub d0: Option<usize>,
    pub subsample: SubsampleStrategy,
    pub min_clause_tokens: usize,
    pub min_span_tokens: usize,
    pub mode: TrainMode,
    pub aggregate_before_projection: bool,
    pub svg: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        Self {
            corpus_path: PathBuf::new(),
            sts_dev_path: PathBuf::new(),
            output_dir: PathBuf::from("run"),
            seed: 0,
            batch_size: 64,
            lr: 3e-5,
            steps: 1000,
            eval_every: 125,
            metric_every: 10,
            temperature: 0.05,
            dropout: enc.dropout,
            d_model: enc.d_model,
            layers: enc.layers,
            heads: enc.heads,
            ff_dim: enc.ff_dim,
            max_len: enc.max_len,
            vocab_size: enc.vocab_size,
            min_freq: 1,
            aggregation: AggregationMethod::Avg,
            compose_target: ComposeTarget::Positive,
            partitions: 2,
            d0: None,
            subsample: SubsampleStrategy::None,
            min_clause_tokens: 3,
            min_span_tokens: 4,
            mode: TrainMode::Composition,
            aggregate_before_projection: false,
            svg: true,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 28] = [
        "corpus_path",
        "sts_dev_path",
        "output_dir",
        "seed",
        "batch_size",
        "lr",
        "steps",
        "eval_every",
        "metric_every",
        "temperature",
        "dropout",
        "d_model",
        "layers",
        "heads",
        "ff_dim",
        "max_len",
        "vocab_size",
        "min_freq",
        "aggregation",
        "compose_target",
        "partitions",
        "d0",
        "subsample",
        "min_clause_tokens",
        "min_span_tokens",
        "mode",
        "aggregate_before_projection",
        "svg",
    ];

    /// Sets one key from its textual value. `d0 = auto` restores the default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "corpus_path" => self.corpus_path = PathBuf::from(v),
            "sts_dev_path" => self.sts_dev_path = PathBuf::from(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "metric_every" => self.metric_every = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "ff_dim" => self.ff_dim = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "min_freq" => self.min_freq = parse(key, v)?,
            "aggregation" => self.aggregation = parse(key, v)?,
            "compose_target" => self.compose_target = parse(key, v)?,
            "partitions" => self.partitions = parse(key, v)?,
            "d0" => self.d0 = if v == "auto" { None } else { Some(parse(key, v)?) },
            "subsample" => self.subsample = parse(key, v)?,
            "min_clause_tokens" => self.min_clause_tokens = parse(key, v)?,
            "min_span_tokens" => self.min_span_tokens = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "aggregate_before_projection" => self.aggregate_before_projection = parse(key, v)?,
            "svg" => self.svg = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` lines over the defaults. `#` starts a
    /// comment line; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: {key} given twice", i + 1)));
            }
            seen.push(key);
            config
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Current value of `key` in the textual form [`TrainConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "corpus_path" => self.corpus_path.display().to_string(),
            "sts_dev_path" => self.sts_dev_path.display().to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "steps" => self.steps.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "metric_every" => self.metric_every.to_string(),
            "temperature" => self.temperature.to_string(),
            "dropout" => self.dropout.to_string(),
            "d_model" => self.d_model.to_string(),
            "layers" => self.layers.to_string(),
            "heads" => self.heads.to_string(),
            "ff_dim" => self.ff_dim.to_string(),
            "max_len" => self.max_len.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "aggregation" => self.aggregation.to_string(),
            "compose_target" => self.compose_target.to_string(),
            "partitions" => self.partitions.to_string(),
            "d0" => self.d0.map_or_else(|| "auto".to_string(), |d| d.to_string()),
            "subsample" => self.subsample.to_string(),
            "min_clause_tokens" => self.min_clause_tokens.to_string(),
            "min_span_tokens" => self.min_span_tokens.to_string(),
            "mode" => self.mode.to_string(),
            "aggregate_before_projection" => self.aggregate_before_projection.to_string(),
            "svg" => self.svg.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Every key in canonical order, as text [`TrainConfig::parse`] reads back.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    /// [`TrainConfig::render`] without `output_dir`, so a run's saved state
    /// does not depend on where it was written.
    pub fn render_snapshot(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS.iter().filter(|k| **k != "output_dir") {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_len: self.max_len,
            dropout: self.dropout,
        }
    }

    pub fn setup(&self) -> PairSetup {
        PairSetup {
            mode: self.mode,
            aggregation: self.aggregation,
            target: self.compose_target,
            partitions: self.partitions,
            aggregate_before_projection: self.aggregate_before_projection,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.temperature,
            d0: self.d0.unwrap_or(self.d_model),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("metric_every", self.metric_every),
            ("min_clause_tokens", self.min_clause_tokens),
            ("min_span_tokens", self.min_span_tokens),
            ("min_freq", self.min_freq),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for in-batch negatives".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.encoder().validate()?;
        self.setup().validate(self.d_model)?;
        self.loss().validate(self.d_model)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}
