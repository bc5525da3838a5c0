//! Alignment, uniformity, STS Spearman evaluation and the metrics trajectory.

mod metrics;
mod plot;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use metrics::{alignment, average_ranks, pearson, spearman, uniformity, Alignment};
pub use plot::line_chart;

use crate::encoder::{EncoderModel, TokenIds, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Scalar};
use crate::objective::cosine;

/// Pairs above this gold score are the positives alignment is measured on.
pub const POSITIVE_THRESHOLD: f64 = 4.0;

const EMBED_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct StsPair {
    pub sentence1: String,
    pub sentence2: String,
    pub score: f64,
}

/// Parses `sentence1 \t sentence2 \t score` rows; `source` names the input in
/// errors.
pub fn parse_sts(text: &str, source: &Path) -> Result<Vec<StsPair>> {
    let fail = |line: usize, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 3 {
            return Err(fail(line, format!("expected 3 tab-separated columns, found {}", fields.len())));
        }
        let (s1, s2) = (fields[0].trim(), fields[1].trim());
        if s1.is_empty() || s2.is_empty() {
            return Err(fail(line, "empty sentence".into()));
        }
        let score: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| fail(line, format!("unparsable score {:?}", fields[2])))?;
        if !(0.0..=5.0).contains(&score) {
            return Err(fail(line, format!("score {score} outside [0, 5]")));
        }
        pairs.push(StsPair {
            sentence1: s1.to_string(),
            sentence2: s2.to_string(),
            score,
        });
    }
    Ok(pairs)
}

pub fn load_sts(path: &Path) -> Result<Vec<StsPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sts(&text, path)
}

/// Eval-mode embeddings of `seqs`, encoded in fixed-size chunks so results do
/// not depend on how many sequences are passed at once.
pub fn embed_all<T: Scalar>(model: &EncoderModel, params: &ParamSet<T>, seqs: &[TokenIds]) -> Result<Vec<Vec<T>>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EMBED_CHUNK) {
        out.extend(model.embed(params, chunk)?);
    }
    Ok(out)
}

/// An STS set tokenized once against a vocabulary.
#[derive(Clone, Debug)]
pub struct DevSet {
    pairs: Vec<StsPair>,
    left: Vec<TokenIds>,
    right: Vec<TokenIds>,
}

impl DevSet {
    pub fn new(pairs: Vec<StsPair>, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let left = pairs
            .iter()
            .map(|p| vocab.tokenize(&p.sentence1, max_len))
            .collect::<Result<_>>()?;
        let right = pairs
            .iter()
            .map(|p| vocab.tokenize(&p.sentence2, max_len))
            .collect::<Result<_>>()?;
        Ok(Self { pairs, left, right })
    }

    pub fn pairs(&self) -> &[StsPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.score > POSITIVE_THRESHOLD).count()
    }

    pub fn embed<T: Scalar>(&self, model: &EncoderModel, params: &ParamSet<T>) -> Result<DevEmbeddings<T>> {
        Ok(DevEmbeddings {
            left: embed_all(model, params, &self.left)?,
            right: embed_all(model, params, &self.right)?,
            scores: self.pairs.iter().map(|p| p.score).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct DevEmbeddings<T: Scalar = f32> {
    pub left: Vec<Vec<T>>,
    pub right: Vec<Vec<T>>,
    pub scores: Vec<f64>,
}

impl<T: Scalar> DevEmbeddings<T> {
    pub fn cosines(&self) -> Result<Vec<f64>> {
        self.left.iter().zip(&self.right).map(|(a, b)| cosine(a, b)).collect()
    }

    pub fn spearman(&self) -> Result<f64> {
        spearman(&self.cosines()?, &self.scores)
    }

    /// Alignment over pairs scored above [`POSITIVE_THRESHOLD`]; `None` when
    /// there are none.
    pub fn alignment(&self) -> Result<Option<Alignment>> {
        let pairs: Vec<(&[T], &[T])> = self
            .left
            .iter()
            .zip(&self.right)
            .zip(&self.scores)
            .filter(|(_, &s)| s > POSITIVE_THRESHOLD)
            .map(|((a, b), _)| (a.as_slice(), b.as_slice()))
            .collect();
        if pairs.is_empty() {
            return Ok(None);
        }
        alignment(&pairs).map(Some)
    }

    /// Uniformity over every sentence of the set.
    pub fn uniformity(&self) -> Result<f64> {
        let points: Vec<&[T]> = self.left.iter().chain(&self.right).map(Vec::as_slice).collect();
        uniformity(&points)
    }
}

/// Spearman correlation between eval-mode cosine similarities and gold scores.
pub fn evaluate_sts<T: Scalar>(model: &EncoderModel, params: &ParamSet<T>, dev: &DevSet) -> Result<f64> {
    dev.embed(model, params)?.spearman()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricPoint {
    pub step: usize,
    pub loss: f64,
    pub align: Option<f64>,
    pub uniform: f64,
    pub dev_spearman: Option<f64>,
}

pub const METRICS_HEADER: [&str; 5] = ["step", "loss", "align", "uniform", "dev_spearman"];

/// Metrics CSV writer that keeps the rows it wrote.
pub struct MetricsLog<W: Write> {
    writer: csv::Writer<W>,
    points: Vec<MetricPoint>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "metrics log".into(),
        source: e.into(),
    }
}

impl<W: Write> MetricsLog<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(METRICS_HEADER).map_err(csv_err)?;
        Ok(Self {
            writer,
            points: Vec::new(),
        })
    }

    pub fn append(&mut self, point: MetricPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.step <= last.step {
                return Err(Error::Data(format!(
                    "metric steps must increase: {} after {}",
                    point.step, last.step
                )));
            }
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.writer
            .write_record([
                point.step.to_string(),
                point.loss.to_string(),
                opt(point.align),
                point.uniform.to_string(),
                opt(point.dev_spearman),
            ])
            .map_err(csv_err)?;
        self.points.push(point);
        Ok(())
    }

    pub fn points(&self) -> &[MetricPoint] {
        &self.points
    }

    pub fn finish(self) -> Result<(W, Vec<MetricPoint>)> {
        let sink = self.writer.into_inner().map_err(|e| Error::Io {
            path: "metrics log".into(),
            source: e.into_error(),
        })?;
        Ok((sink, self.points))
    }
}

/// Measures alignment and uniformity on `dev` (and Spearman when
/// `with_spearman`), then appends the point to `sink`.
#[allow(clippy::too_many_arguments)]
pub fn log_trajectory<T: Scalar, W: Write>(
    model: &EncoderModel,
    params: &ParamSet<T>,
    dev: &DevSet,
    step: usize,
    loss: f64,
    with_spearman: bool,
    sink: &mut MetricsLog<W>,
) -> Result<MetricPoint> {
    let emb = dev.embed(model, params)?;
    let point = MetricPoint {
        step,
        loss,
        align: emb.alignment()?.map(|a| a.value),
        uniform: emb.uniformity()?,
        dev_spearman: if with_spearman { Some(emb.spearman()?) } else { None },
    };
    sink.append(point.clone())?;
    Ok(point)
}
