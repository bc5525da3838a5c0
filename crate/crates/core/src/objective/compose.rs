use std::fmt;
use std::str::FromStr;

use super::{AggregationMethod, Aggregator, ComposeTarget};
use crate::augment::partition;
use crate::encoder::{EncoderConfig, EncoderModel, TokenIds};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamSet, Rng, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Positives composed from independently encoded constituents.
    Composition,
    /// Two dropout-noised encodings of the same text.
    DropoutOnly,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Composition => "composition",
            TrainMode::DropoutOnly => "dropout_only",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composition" => Ok(TrainMode::Composition),
            "dropout_only" => Ok(TrainMode::DropoutOnly),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// How one training pair is produced from a text.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSetup {
    pub mode: TrainMode,
    pub aggregation: AggregationMethod,
    pub target: ComposeTarget,
    pub partitions: usize,
    /// Aggregate pooled states and project once, instead of projecting each
    /// constituent before aggregation.
    pub aggregate_before_projection: bool,
}

impl Default for PairSetup {
    fn default() -> Self {
        Self {
            mode: TrainMode::Composition,
            aggregation: AggregationMethod::Avg,
            target: ComposeTarget::Positive,
            partitions: 2,
            aggregate_before_projection: false,
        }
    }
}

impl PairSetup {
    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.partitions < 2 {
            return Err(Error::Config(format!("partitions must be at least 2, got {}", self.partitions)));
        }
        if self.mode == TrainMode::Composition {
            self.aggregation.check(self.partitions, d_model)?;
        }
        Ok(())
    }

    /// Minimum content tokens an example needs to form a pair.
    pub fn min_tokens(&self) -> usize {
        match self.mode {
            TrainMode::Composition => self.partitions,
            TrainMode::DropoutOnly => 1,
        }
    }
}

/// Anchors and positives for a batch, as `n x d` graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct PairBatch {
    pub anchors: Var,
    pub positives: Var,
    /// Examples dropped for having fewer tokens than `partitions`.
    pub skipped: usize,
}

/// Encoder plus aggregation head; everything trainable lives in one
/// [`ParamSet`] owned by the caller.
#[derive(Clone, Debug)]
pub struct ContrastiveModel {
    pub encoder: EncoderModel,
    pub aggregator: Aggregator,
    pub setup: PairSetup,
}

impl ContrastiveModel {
    pub fn init<T: Scalar>(
        encoder: EncoderConfig,
        setup: PairSetup,
        params: &mut ParamSet<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        setup.validate(encoder.d_model)?;
        let d = encoder.d_model;
        let encoder = EncoderModel::init(encoder, params, rng)?;
        let aggregator = Aggregator::init(setup.aggregation, d, params, rng);
        Ok(Self {
            encoder,
            aggregator,
            setup,
        })
    }

    /// `project(encode(batch))`.
    pub fn embed_graph<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[TokenIds],
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let pooled = self.encoder.encode(g, batch, train, rng)?;
        self.encoder.project(g, pooled)
    }

    /// Latent composition: each of the `k` spans is encoded in its own
    /// dropout-noised pass, then the constituents are aggregated.
    fn compose<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        spans: &[Vec<TokenIds>],
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(spans.len());
        for batch in spans {
            let pooled = self.encoder.encode(g, batch, train, rng)?;
            parts.push(if self.setup.aggregate_before_projection {
                pooled
            } else {
                self.encoder.project(g, pooled)?
            });
        }
        let combined = self.aggregator.forward(g, &parts)?;
        if self.setup.aggregate_before_projection {
            self.encoder.project(g, combined)
        } else {
            Ok(combined)
        }
    }

    /// Builds `(z, z+)` for every usable example of `batch`.
    ///
    /// The whole-text pass always precedes the constituent passes, so the
    /// `Anchor` and `Positive` targets consume the rng identically.
    pub fn forward_batch<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[TokenIds],
        train: bool,
        rng: &mut Rng,
    ) -> Result<PairBatch> {
        let min = self.setup.min_tokens();
        let usable: Vec<TokenIds> = batch
            .iter()
            .filter(|ids| ids.content().len() >= min)
            .cloned()
            .collect();
        let skipped = batch.len() - usable.len();
        if usable.is_empty() {
            return Err(Error::Data(format!(
                "no example in the batch has the {min} tokens needed to form a pair"
            )));
        }

        if self.setup.mode == TrainMode::DropoutOnly {
            let anchors = self.embed_graph(g, &usable, train, rng)?;
            let positives = self.embed_graph(g, &usable, train, rng)?;
            return Ok(PairBatch {
                anchors,
                positives,
                skipped,
            });
        }

        let k = self.setup.partitions;
        let mut spans: Vec<Vec<TokenIds>> = vec![Vec::with_capacity(usable.len()); k];
        for ids in &usable {
            for (slot, span) in spans.iter_mut().zip(partition(ids, k)?) {
                slot.push(span);
            }
        }
        let (anchors, positives) = match self.setup.target {
            ComposeTarget::Positive => {
                let whole = self.embed_graph(g, &usable, train, rng)?;
                (whole, self.compose(g, &spans, train, rng)?)
            }
            ComposeTarget::Anchor => {
                let whole = self.embed_graph(g, &usable, train, rng)?;
                (self.compose(g, &spans, train, rng)?, whole)
            }
            ComposeTarget::Both => {
                let first = self.compose(g, &spans, train, rng)?;
                (first, self.compose(g, &spans, train, rng)?)
            }
        };
        Ok(PairBatch {
            anchors,
            positives,
            skipped,
        })
    }

    /// `(z, z+)` for a single example.
    pub fn forward_pair<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        example: &TokenIds,
        train: bool,
        rng: &mut Rng,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = Graph::new(params);
        let pair = self.forward_batch(&mut g, std::slice::from_ref(example), train, rng)?;
        if pair.skipped > 0 {
            return Err(Error::Partition {
                tokens: example.content().len(),
                parts: self.setup.partitions,
            });
        }
        g.check()?;
        Ok((g.value(pair.anchors).to_vec(), g.value(pair.positives).to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 30,
            d_model: 8,
            layers: 1,
            heads: 2,
            ff_dim: 16,
            max_len: 12,
            dropout: 0.1,
        }
    }

    fn build(setup: PairSetup) -> (ContrastiveModel, ParamSet<f32>) {
        let mut params = ParamSet::new();
        let model = ContrastiveModel::init(config(), setup, &mut params, &mut Rng::new(3)).unwrap();
        (model, params)
    }

    #[test]
    fn eval_average_is_constituent_mean() {
        let (model, params) = build(PairSetup::default());
        let x = TokenIds::with_cls(&[4, 5, 6, 7, 8]);
        let (z, zp) = model.forward_pair(&params, &x, false, &mut Rng::new(0)).unwrap();
        let halves = [TokenIds::with_cls(&[4, 5, 6]), TokenIds::with_cls(&[7, 8])];
        let parts = model.encoder.embed(&params, &halves).unwrap();
        let whole = model.encoder.embed(&params, &[x]).unwrap();
        assert_eq!(z, whole[0]);
        for i in 0..8 {
            assert_eq!(zp[i], (parts[0][i] + parts[1][i]) * 0.5);
        }
    }

    #[test]
    fn dropout_only_eval_pairs_coincide() {
        let setup = PairSetup {
            mode: TrainMode::DropoutOnly,
            ..PairSetup::default()
        };
        let (model, params) = build(setup);
        let x = TokenIds::with_cls(&[4]);
        let (z, zp) = model.forward_pair(&params, &x, false, &mut Rng::new(0)).unwrap();
        assert_eq!(z, zp);
        let (z, zp) = model.forward_pair(&params, &x, true, &mut Rng::new(0)).unwrap();
        assert_ne!(z, zp);
    }

    #[test]
    fn anchor_and_positive_targets_are_transposes() {
        let x = TokenIds::with_cls(&[4, 9, 6, 11, 8, 3]);
        let mut pairs = Vec::new();
        for target in [ComposeTarget::Positive, ComposeTarget::Anchor] {
            let (model, params) = build(PairSetup {
                target,
                ..PairSetup::default()
            });
            pairs.push(model.forward_pair(&params, &x, true, &mut Rng::new(21)).unwrap());
        }
        assert_eq!(pairs[0].0, pairs[1].1);
        assert_eq!(pairs[0].1, pairs[1].0);
    }

    #[test]
    fn both_target_composes_each_side_independently() {
        let (model, params) = build(PairSetup {
            target: ComposeTarget::Both,
            ..PairSetup::default()
        });
        let x = TokenIds::with_cls(&[4, 9, 6, 11]);
        let (z, zp) = model.forward_pair(&params, &x, false, &mut Rng::new(0)).unwrap();
        assert_eq!(z, zp);
        let (z, zp) = model.forward_pair(&params, &x, true, &mut Rng::new(0)).unwrap();
        assert_ne!(z, zp);
    }

    #[test]
    fn short_examples_are_skipped() {
        let (model, params) = build(PairSetup::default());
        let mut g = Graph::new(&params);
        let batch = [TokenIds::with_cls(&[4]), TokenIds::with_cls(&[4, 5]), TokenIds::with_cls(&[6, 7, 8])];
        let pair = model.forward_batch(&mut g, &batch, true, &mut Rng::new(0)).unwrap();
        assert_eq!(pair.skipped, 1);
        assert_eq!(g.shape(pair.anchors), (2, 8));
        assert!(model.forward_pair(&params, &batch[0], true, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn invalid_setups() {
        let mut params = ParamSet::<f32>::new();
        let bad = PairSetup {
            partitions: 3,
            aggregation: AggregationMethod::ConcatHalves,
            ..PairSetup::default()
        };
        assert!(ContrastiveModel::init(config(), bad, &mut params, &mut Rng::new(0)).is_err());
        let bad = PairSetup {
            partitions: 1,
            ..PairSetup::default()
        };
        assert!(ContrastiveModel::init(config(), bad, &mut params, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn aggregate_before_projection_projects_once() {
        let (model, params) = build(PairSetup {
            aggregate_before_projection: true,
            aggregation: AggregationMethod::Sum,
            ..PairSetup::default()
        });
        let x = TokenIds::with_cls(&[4, 5, 6, 7]);
        let (_, zp) = model.forward_pair(&params, &x, false, &mut Rng::new(0)).unwrap();
        let mut g = Graph::new(&params);
        let mut rng = Rng::new(0);
        let a = model.encoder.encode(&mut g, &[TokenIds::with_cls(&[4, 5])], false, &mut rng).unwrap();
        let b = model.encoder.encode(&mut g, &[TokenIds::with_cls(&[6, 7])], false, &mut rng).unwrap();
        let s = g.add(a, b);
        let p = model.encoder.project(&mut g, s).unwrap();
        assert_eq!(g.value(p), &zp[..]);
    }
}
