//! Training runs, checkpoints, corpus expansion and embedding export.

mod checkpoint;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use checkpoint::{Checkpoint, BLOB, FORMAT_VERSION, MANIFEST, VOCAB};
pub use config::TrainConfig;

use crate::augment::{expand_corpus, ExpansionCounts, SubsampleStrategy, TextExample};
use crate::encoder::{EncoderConfig, TokenIds, Vocab};
use crate::error::{Error, Result};
use crate::evalkit::{self, line_chart, load_sts, DevSet, MetricPoint, MetricsLog, StsPair};
use crate::numerics::{AdamConfig, AdamState, Graph, ParamSet, Rng};
use crate::objective::{info_nce_graph, ContrastiveModel};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// The configured encoder, sized to the vocabulary actually built.
pub(crate) fn encoder_config(config: &TrainConfig, vocab: &Vocab) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab.len(),
        ..config.encoder()
    }
}

/// Non-blank lines of a UTF-8 corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Result of a training run held in memory.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best dev evaluation (the initial ones when none ran).
    pub best: Checkpoint,
    pub metrics: Vec<MetricPoint>,
    pub metrics_csv: Vec<u8>,
    /// Training loss of every optimizer step.
    pub losses: Vec<f32>,
    pub examples: usize,
    pub skipped: usize,
    pub expansion: ExpansionCounts,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    /// Steps at which Spearman was evaluated, with the scores.
    pub fn evaluations(&self) -> Vec<(usize, f64)> {
        self.metrics
            .iter()
            .filter_map(|p| p.dev_spearman.map(|s| (p.step, s)))
            .collect()
    }
}

fn eval_due(step: usize, config: &TrainConfig) -> bool {
    step > 0 && (step % config.eval_every == 0 || step == config.steps)
}

fn metric_due(step: usize, config: &TrainConfig) -> bool {
    step % config.metric_every == 0 || step == config.steps || eval_due(step, config)
}

fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged { step, op },
        other => other,
    }
}

/// Cycles through the examples, reshuffling at the start of every pass.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl Batcher {
    fn new(n: usize, rng: Rng) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Trains on in-memory data. Rows of the metrics log describe the weights
/// before the optimizer step of the same index; the final row describes the
/// trained weights.
pub fn train_in_memory(config: &TrainConfig, corpus: &[String], dev_pairs: Vec<StsPair>) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let vocab = Vocab::build(corpus, config.vocab_size, config.min_freq)?;
    let originals: Vec<TextExample> = corpus
        .iter()
        .map(|t| TextExample::original(t, config.min_clause_tokens))
        .collect();
    let (expanded, expansion) = expand_corpus(&originals, config.subsample, config.min_span_tokens);
    let mut examples: Vec<TokenIds> = Vec::with_capacity(expanded.len());
    let mut skipped = 0;
    for ex in &expanded {
        let ids = vocab.tokenize(&ex.text, config.max_len)?;
        if ids.content().len() < config.partitions {
            skipped += 1;
        } else {
            examples.push(ids);
        }
    }
    if examples.len() < 2 {
        return Err(Error::Data(format!(
            "only {} usable training examples after skipping {skipped}",
            examples.len()
        )));
    }
    let dev = DevSet::new(dev_pairs, &vocab, config.max_len)?;
    if dev.len() < 2 {
        return Err(Error::Data(format!("dev set needs at least 2 pairs, got {}", dev.len())));
    }
    let mut warnings = Vec::new();
    if dev.positives() == 0 {
        warnings.push(format!(
            "no dev pair scores above {}; alignment is not reported",
            evalkit::POSITIVE_THRESHOLD
        ));
    }

    let root = Rng::new(config.seed);
    let mut params = ParamSet::<f32>::new();
    let model = ContrastiveModel::init(encoder_config(config, &vocab), config.setup(), &mut params, &mut root.fork(1))?;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        params.tensors_mut(),
    )?;
    let mut batcher = Batcher::new(examples.len(), root.fork(2));
    let mut noise = root.fork(3);
    let loss_cfg = config.loss();

    let snapshot = |params: &ParamSet<f32>, step: usize, dev_spearman: Option<f64>| Checkpoint {
        config: config.clone(),
        step,
        dev_spearman,
        vocab: vocab.clone(),
        params: params.clone(),
    };
    let mut best = snapshot(&params, 0, None);
    let mut log = MetricsLog::new(Vec::new())?;
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..=config.steps {
        let training = step < config.steps;
        let logged = config.steps > 0 && metric_due(step, config);
        if !training && !logged {
            break;
        }
        let batch: Vec<TokenIds> = batcher
            .next(config.batch_size)
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let (loss, grads) = (|| {
            let mut g = Graph::new(&params);
            let pair = model.forward_batch(&mut g, &batch, true, &mut noise)?;
            let loss = info_nce_graph(&mut g, pair.anchors, pair.positives, &loss_cfg)?;
            g.check()?;
            let grads = if training { Some(g.backward(loss)?) } else { None };
            Ok((g.scalar(loss), grads))
        })()
        .map_err(|e| diverged(e, step))?;

        if logged {
            let evaluate = eval_due(step, config);
            let point =
                evalkit::log_trajectory(&model.encoder, &params, &dev, step, f64::from(loss), evaluate, &mut log)
                    .map_err(|e| diverged(e, step))?;
            if let Some(score) = point.dev_spearman {
                if best.dev_spearman.map_or(true, |b| score > b) {
                    best = snapshot(&params, step, Some(score));
                }
            }
        }
        if let Some(grads) = grads {
            params.zero_grads();
            params.accumulate(&grads)?;
            adam.step(params.tensors_mut())?;
            losses.push(loss);
        }
    }

    let (metrics_csv, metrics) = log.finish()?;
    Ok(TrainOutcome {
        best,
        metrics,
        metrics_csv,
        losses,
        examples: examples.len(),
        skipped,
        expansion,
        warnings,
    })
}

/// Files a training run wrote.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub checkpoint_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub charts: Vec<PathBuf>,
}

/// Reads the configured corpus and dev set, trains, and writes the best
/// checkpoint, the metrics CSV and (optionally) one SVG chart per metric
/// into `output_dir`.
pub fn train(config: &TrainConfig) -> Result<TrainSummary> {
    config.validate()?;
    let corpus = read_corpus(&config.corpus_path)?;
    let dev = load_sts(&config.sts_dev_path)?;
    let outcome = train_in_memory(config, &corpus, dev)?;

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let checkpoint_dir = out.join(CHECKPOINT_DIR);
    outcome.best.save(&checkpoint_dir)?;
    let metrics_path = out.join(METRICS_FILE);
    fs::write(&metrics_path, &outcome.metrics_csv).map_err(|e| Error::io(&metrics_path, e))?;

    let mut charts = Vec::new();
    if config.svg {
        type Column = fn(&MetricPoint) -> Option<f64>;
        let columns: [(&str, Column); 4] = [
            ("loss", |p| Some(p.loss)),
            ("align", |p| p.align),
            ("uniform", |p| Some(p.uniform)),
            ("dev_spearman", |p| p.dev_spearman),
        ];
        for (name, column) in columns {
            let points: Vec<(f64, f64)> = outcome
                .metrics
                .iter()
                .filter_map(|p| column(p).map(|v| (p.step as f64, v)))
                .collect();
            let path = out.join(format!("{name}.svg"));
            fs::write(&path, line_chart(name, "step", &points)).map_err(|e| Error::io(&path, e))?;
            charts.push(path);
        }
    }
    Ok(TrainSummary {
        outcome,
        checkpoint_dir,
        metrics_path,
        charts,
    })
}

/// Spearman, alignment, uniformity and pair count of a checkpoint on an STS
/// set, as `key=value` lines.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, pairs: Vec<StsPair>) -> Result<String> {
    let model = checkpoint.model()?;
    let dev = DevSet::new(pairs, &checkpoint.vocab, checkpoint.config.max_len)?;
    let emb = dev.embed(&model.encoder, &checkpoint.params)?;
    let mut out = String::new();
    let _ = writeln!(out, "pairs={}", dev.len());
    let _ = writeln!(out, "spearman={}", emb.spearman()?);
    match emb.alignment()? {
        Some(a) => {
            let _ = writeln!(out, "alignment={}", a.value);
            let _ = writeln!(out, "alignment_pairs={}", dev.positives());
        }
        None => {
            let _ = writeln!(out, "alignment=");
            let _ = writeln!(out, "alignment_pairs=0");
        }
    }
    let _ = writeln!(out, "uniformity={}", emb.uniformity()?);
    Ok(out)
}

/// Eval-mode embeddings of each line, one tab-separated row of 6-decimal
/// values per input line. Blank lines are errors.
pub fn embed_lines(checkpoint: &Checkpoint, text: &str, source: &Path) -> Result<String> {
    let model = checkpoint.model()?;
    let mut seqs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                msg: "blank line".into(),
            });
        }
        seqs.push(checkpoint.vocab.tokenize(line, checkpoint.config.max_len)?);
    }
    let vectors = evalkit::embed_all(&model.encoder, &checkpoint.params, &seqs)?;
    let mut out = String::new();
    for v in vectors {
        let fields: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

/// Originals in input order, each followed by its subsamples.
pub fn expand_text(
    text: &str,
    strategy: SubsampleStrategy,
    min_clause_tokens: usize,
    min_span_tokens: usize,
) -> (String, ExpansionCounts) {
    if strategy == SubsampleStrategy::None {
        return (text.to_string(), ExpansionCounts::default());
    }
    let originals: Vec<TextExample> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| TextExample::original(l, min_clause_tokens))
        .collect();
    let (expanded, counts) = expand_corpus(&originals, strategy, min_span_tokens);
    let mut out = String::new();
    for ex in expanded {
        out.push_str(&ex.text);
        out.push('\n');
    }
    (out, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::TrainMode;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            steps: 20,
            eval_every: 10,
            metric_every: 5,
            d_model: 16,
            layers: 1,
            heads: 2,
            ff_dim: 32,
            max_len: 16,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn corpus() -> Vec<String> {
        let subjects = ["the cat", "a dog", "my friend", "the bird", "our team", "the child"];
        let verbs = ["sat quietly", "ran home", "sang loudly", "ate lunch", "read books"];
        let mut out = Vec::new();
        for (i, s) in subjects.iter().enumerate() {
            for (j, v) in verbs.iter().enumerate() {
                out.push(format!("{s} {v} and {} {}", subjects[(i + j + 1) % 6], verbs[(i + 2 * j) % 5]));
            }
        }
        out
    }

    fn dev() -> Vec<StsPair> {
        let c = corpus();
        (0..12)
            .map(|i| StsPair {
                sentence1: c[i].clone(),
                sentence2: c[(i * 7) % c.len()].clone(),
                score: (i % 6) as f64,
            })
            .collect()
    }

    #[test]
    fn rows_cover_metric_and_eval_steps() {
        let mut config = tiny_config();
        config.eval_every = 8;
        let out = train_in_memory(&config, &corpus(), dev()).unwrap();
        let steps: Vec<usize> = out.metrics.iter().map(|p| p.step).collect();
        assert_eq!(steps, [0, 5, 8, 10, 15, 16, 20]);
        let evals: Vec<usize> = out.evaluations().into_iter().map(|e| e.0).collect();
        assert_eq!(evals, [8, 16, 20]);
        assert_eq!(out.losses.len(), 20);
        let best = out.evaluations().into_iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best.dev_spearman, Some(best));
    }

    #[test]
    fn zero_steps_keeps_initial_weights() {
        let mut config = tiny_config();
        config.steps = 0;
        let out = train_in_memory(&config, &corpus(), dev()).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(String::from_utf8(out.metrics_csv).unwrap(), "step,loss,align,uniform,dev_spearman\n");
        assert_eq!(out.best.step, 0);
        assert_eq!(out.best.dev_spearman, None);
    }

    #[test]
    fn modes_log_the_same_steps() {
        let mut config = tiny_config();
        let a = train_in_memory(&config, &corpus(), dev()).unwrap();
        config.mode = TrainMode::DropoutOnly;
        let b = train_in_memory(&config, &corpus(), dev()).unwrap();
        let steps = |o: &TrainOutcome| o.metrics.iter().map(|p| p.step).collect::<Vec<_>>();
        assert_eq!(steps(&a), steps(&b));
        assert_ne!(a.losses, b.losses);
    }

    #[test]
    fn runs_are_deterministic() {
        let config = tiny_config();
        let a = train_in_memory(&config, &corpus(), dev()).unwrap();
        let b = train_in_memory(&config, &corpus(), dev()).unwrap();
        assert_eq!(a.metrics_csv, b.metrics_csv);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn divergence_names_the_step() {
        let mut config = tiny_config();
        config.lr = 1e30;
        match train_in_memory(&config, &corpus(), dev()) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.losses)),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let config = tiny_config();
        let out = train_in_memory(&config, &corpus(), dev()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.best.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.step, out.best.step);
        assert_eq!(loaded.dev_spearman, out.best.dev_spearman);
        assert_eq!(loaded.vocab, out.best.vocab);
        for ((n1, t1), (n2, t2)) in loaded.params.iter().zip(out.best.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let model = loaded.model().unwrap();
        let set = DevSet::new(dev(), &loaded.vocab, config.max_len).unwrap();
        let score = evalkit::evaluate_sts(&model.encoder, &loaded.params, &set).unwrap();
        assert_eq!(Some(score), out.best.dev_spearman);

        let blob = dir.path().join(BLOB);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }

    #[test]
    fn expand_none_is_identity() {
        let text = "a b , c d\n\nlast line\n";
        let (out, counts) = expand_text(text, SubsampleStrategy::None, 3, 4);
        assert_eq!(out, text);
        assert_eq!(counts.added(), 0);
        let (out, counts) = expand_text("one two three , four five six", SubsampleStrategy::Adjacent, 3, 4);
        assert_eq!(out, "one two three , four five six\none two three\nfour five six\n");
        assert_eq!(counts.adjacent, 2);
    }
}
