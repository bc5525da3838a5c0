use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Rng, Tensor};
use crate::objective::ContrastiveModel;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "params.bin";
pub const VOCAB: &str = "vocab.txt";

/// Saved model state: parameters, vocabulary and the run configuration.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub dev_spearman: Option<f64>,
    pub vocab: Vocab,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    /// Writes `manifest.txt`, `params.bin` and `vocab.txt` into `dir`,
    /// creating it when needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        let _ = writeln!(manifest, "format_version = {FORMAT_VERSION}");
        let _ = writeln!(manifest, "step = {}", self.step);
        let _ = writeln!(
            manifest,
            "dev_spearman = {}",
            self.dev_spearman.map_or_else(|| "none".to_string(), |s| s.to_string())
        );
        manifest.push_str("[config]\n");
        manifest.push_str(&self.config.render_snapshot());
        manifest.push_str("[tensors]\n");
        let mut blob = Vec::with_capacity(self.params.total_len() * 4);
        for (name, tensor) in self.params.iter() {
            let shape: Vec<String> = tensor.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(manifest, "{name} {} {}", shape.join("x"), blob.len());
            for v in tensor.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let write = |file: &str, bytes: &[u8]| {
            let path = dir.join(file);
            fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        write(MANIFEST, manifest.as_bytes())?;
        write(BLOB, &blob)?;
        self.vocab.save(&dir.join(VOCAB))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let blob_path = dir.join(BLOB);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let vocab = Vocab::load(&dir.join(VOCAB))?;

        let fail = |line: usize, msg: String| Error::Parse {
            path: manifest_path.clone(),
            line,
            msg,
        };
        #[derive(PartialEq)]
        enum Section {
            Header,
            Config,
            Tensors,
        }
        let mut section = Section::Header;
        let (mut version, mut step, mut dev_spearman) = (None, None, None);
        let mut config_text = String::new();
        let mut params = ParamSet::new();
        let mut expected_offset = 0usize;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            match raw.trim() {
                "" => continue,
                "[config]" => section = Section::Config,
                "[tensors]" => section = Section::Tensors,
                row => match section {
                    Section::Header => {
                        let (key, value) = row
                            .split_once('=')
                            .map(|(k, v)| (k.trim(), v.trim()))
                            .ok_or_else(|| fail(line, "expected `key = value`".into()))?;
                        let bad = || fail(line, format!("bad value for {key}"));
                        match key {
                            "format_version" => version = Some(value.parse::<u32>().map_err(|_| bad())?),
                            "step" => step = Some(value.parse::<usize>().map_err(|_| bad())?),
                            "dev_spearman" => {
                                dev_spearman = match value {
                                    "none" => None,
                                    v => Some(v.parse::<f64>().map_err(|_| bad())?),
                                }
                            }
                            _ => return Err(fail(line, format!("unknown header key {key:?}"))),
                        }
                    }
                    Section::Config => {
                        config_text.push_str(row);
                        config_text.push('\n');
                    }
                    Section::Tensors => {
                        let fields: Vec<&str> = row.split_whitespace().collect();
                        let [name, shape, offset] = fields[..] else {
                            return Err(fail(line, "expected `name shape offset`".into()));
                        };
                        let shape = shape
                            .split('x')
                            .map(str::parse::<usize>)
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| fail(line, format!("bad shape {shape:?}")))?;
                        let offset: usize = offset.parse().map_err(|_| fail(line, "bad offset".into()))?;
                        if offset != expected_offset {
                            return Err(fail(line, format!("offset {offset}, expected {expected_offset}")));
                        }
                        let n: usize = shape.iter().product();
                        let end = offset + 4 * n;
                        let bytes = blob.get(offset..end).ok_or_else(|| {
                            fail(line, format!("{name} needs bytes up to {end}, blob has {}", blob.len()))
                        })?;
                        let data = bytes
                            .chunks_exact(4)
                            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                            .collect();
                        if params.find(name).is_some() {
                            return Err(fail(line, format!("duplicate tensor {name}")));
                        }
                        params.add(name, Tensor::new(&shape, data)?);
                        expected_offset = end;
                    }
                },
            }
        }
        match version {
            Some(FORMAT_VERSION) => {}
            Some(v) => return Err(Error::Data(format!("unsupported checkpoint format version {v}"))),
            None => return Err(Error::Data("checkpoint manifest lacks format_version".into())),
        }
        if expected_offset != blob.len() {
            return Err(Error::Data(format!(
                "parameter blob holds {} bytes, manifest describes {expected_offset}",
                blob.len()
            )));
        }
        let config = TrainConfig::parse(&config_text)?;
        Ok(Self {
            config,
            step: step.ok_or_else(|| Error::Data("checkpoint manifest lacks step".into()))?,
            dev_spearman,
            vocab,
            params,
        })
    }

    /// Rebuilds the model structure and checks it against the stored tensors.
    pub fn model(&self) -> Result<ContrastiveModel> {
        let encoder = super::encoder_config(&self.config, &self.vocab);
        let mut fresh = ParamSet::<f32>::new();
        let model = ContrastiveModel::init(encoder, self.config.setup(), &mut fresh, &mut Rng::new(0))?;
        if fresh.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, configuration implies {}",
                self.params.len(),
                fresh.len()
            )));
        }
        for ((name, want), (have_name, have)) in fresh.iter().zip(self.params.iter()) {
            if name != have_name || want.shape() != have.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor {have_name} {:?} does not match expected {name} {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(model)
    }
}
