//! Contrastive objective: cosine similarity, latent aggregation of
//! constituent embeddings, and temperature-scaled InfoNCE with in-batch
//! negatives computed on a leading subvector.

mod compose;

use std::fmt;
use std::str::FromStr;

pub use compose::{ContrastiveModel, PairBatch, PairSetup, TrainMode};

use crate::encoder::Linear;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamSet, Rng, Scalar, Tensor, Var};

const COS_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregationMethod {
    Sum,
    Avg,
    /// Leading half of the left constituent followed by the trailing half of the right.
    ConcatHalves,
    /// Learned `2d -> d` map over `[z'; z'']`.
    ConcatProject,
    /// Learned `3d -> d` map over `[z'; z''; |z' - z''|]`.
    ConcatAbsDiffProject,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 5] = [
        AggregationMethod::Sum,
        AggregationMethod::Avg,
        AggregationMethod::ConcatHalves,
        AggregationMethod::ConcatProject,
        AggregationMethod::ConcatAbsDiffProject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMethod::Sum => "sum",
            AggregationMethod::Avg => "avg",
            AggregationMethod::ConcatHalves => "concat_halves",
            AggregationMethod::ConcatProject => "concat_project",
            AggregationMethod::ConcatAbsDiffProject => "concat_absdiff_project",
        }
    }

    /// Input width of the learned map, if the method has one.
    fn map_fan_in(self, d: usize) -> Option<usize> {
        match self {
            AggregationMethod::ConcatProject => Some(2 * d),
            AggregationMethod::ConcatAbsDiffProject => Some(3 * d),
            _ => None,
        }
    }

    /// Whether the method can fold `parts` constituents of width `d`.
    pub fn check(self, parts: usize, d: usize) -> Result<()> {
        match self {
            AggregationMethod::Sum | AggregationMethod::Avg => Ok(()),
            _ if parts != 2 => Err(Error::Config(format!(
                "{} aggregation needs exactly 2 constituents, got {parts}",
                self.as_str()
            ))),
            AggregationMethod::ConcatHalves if d % 2 != 0 => Err(Error::Config(format!(
                "concat_halves aggregation needs an even width, got {d}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregation method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ComposeTarget {
    Anchor,
    Positive,
    Both,
}

impl ComposeTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            ComposeTarget::Anchor => "anchor",
            ComposeTarget::Positive => "positive",
            ComposeTarget::Both => "both",
        }
    }
}

impl fmt::Display for ComposeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComposeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchor" => Ok(ComposeTarget::Anchor),
            "positive" => Ok(ComposeTarget::Positive),
            "both" => Ok(ComposeTarget::Both),
            _ => Err(Error::Config(format!("unknown compose target {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Temperature.
    pub tau: f64,
    /// Number of leading coordinates the similarity is computed on.
    pub d0: usize,
}

impl LossConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.d0 == 0 || self.d0 > d {
            return Err(Error::Config(format!("d0 must lie in [1, {d}], got {}", self.d0)));
        }
        Ok(())
    }
}

/// `u.v / (max(|u|, eps) max(|v|, eps))`, accumulated in `f64`.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", format!("{} vs {} coordinates", u.len(), v.len())));
    }
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.f64(), b.f64());
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    Ok(uv / (uu.sqrt().max(COS_EPS) * vv.sqrt().max(COS_EPS)))
}

/// Row-wise cosine between two equally shaped matrices, on the graph.
pub fn cosine_rows<T: Scalar>(g: &mut Graph<'_, T>, a: Var, b: Var) -> Var {
    let a = g.normalize_rows(a, COS_EPS);
    let b = g.normalize_rows(b, COS_EPS);
    g.row_dot(a, b)
}

/// Aggregation of constituent embeddings, plus the learned map for the
/// projecting variants.
#[derive(Clone, Debug)]
pub struct Aggregator {
    method: AggregationMethod,
    map: Option<Linear>,
}

impl Aggregator {
    /// Registers the learned map (if any) in `params`.
    pub fn init<T: Scalar>(method: AggregationMethod, d: usize, params: &mut ParamSet<T>, rng: &mut Rng) -> Self {
        let map = method
            .map_fan_in(d)
            .map(|fan_in| Linear::init(params, &format!("aggregate.{}", method.as_str()), fan_in, d, rng));
        Self { method, map }
    }

    pub fn method(&self) -> AggregationMethod {
        self.method
    }

    pub fn map(&self) -> Option<Linear> {
        self.map
    }

    /// Combines `parts` (each `n x d`) into one `n x d` matrix.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Config("aggregation of zero constituents".into()));
        };
        let shape = g.shape(first);
        if parts.iter().any(|&p| g.shape(p) != shape) {
            return Err(Error::shape("aggregate", "constituent shapes differ"));
        }
        let d = shape.1;
        self.method.check(parts.len(), d)?;
        Ok(match self.method {
            AggregationMethod::Sum => fold_sum(g, parts),
            AggregationMethod::Avg => {
                let total = fold_sum(g, parts);
                g.scale(total, T::of(1.0 / parts.len() as f64))
            }
            AggregationMethod::ConcatHalves => {
                let left = g.slice_cols(parts[0], 0, d / 2);
                let right = g.slice_cols(parts[1], d / 2, d / 2);
                g.concat_cols(&[left, right])
            }
            AggregationMethod::ConcatProject => {
                let cat = g.concat_cols(parts);
                self.learned_map()?.forward(g, cat)
            }
            AggregationMethod::ConcatAbsDiffProject => {
                let diff = g.sub(parts[0], parts[1]);
                let abs = g.abs(diff);
                let cat = g.concat_cols(&[parts[0], parts[1], abs]);
                self.learned_map()?.forward(g, cat)
            }
        })
    }

    fn learned_map(&self) -> Result<Linear> {
        self.map
            .ok_or_else(|| Error::Config(format!("{} aggregation has no learned map", self.method)))
    }
}

fn fold_sum<T: Scalar>(g: &mut Graph<'_, T>, parts: &[Var]) -> Var {
    parts[1..].iter().fold(parts[0], |acc, &p| g.add(acc, p))
}

/// Mean InfoNCE over the batch on the graph.
///
/// Row `i` of `anchors` is scored against every row of `positives`, with its
/// own positive as the target; similarities use the first `d0` coordinates.
pub fn info_nce_graph<T: Scalar>(g: &mut Graph<'_, T>, anchors: Var, positives: Var, cfg: &LossConfig) -> Result<Var> {
    let (n, d) = g.shape(anchors);
    if g.shape(positives) != (n, d) {
        return Err(Error::shape(
            "info_nce",
            format!("anchors {:?} vs positives {:?}", (n, d), g.shape(positives)),
        ));
    }
    if n == 0 {
        return Err(Error::Data("info_nce over an empty batch".into()));
    }
    cfg.validate(d)?;
    let (a, p) = if cfg.d0 == d {
        (anchors, positives)
    } else {
        (g.slice_cols(anchors, 0, cfg.d0), g.slice_cols(positives, 0, cfg.d0))
    };
    let a = g.normalize_rows(a, COS_EPS);
    let p = g.normalize_rows(p, COS_EPS);
    let pt = g.transpose(p);
    let sim = g.matmul(a, pt);
    let logits = g.scale(sim, T::of(1.0 / cfg.tau));
    let lse = g.logsumexp_rows(logits);
    let target = g.diag(logits);
    let per_example = g.sub(lse, target);
    let loss = g.mean(per_example);
    g.check()?;
    Ok(loss)
}

/// InfoNCE of two `N x d` matrices.
pub fn info_nce<T: Scalar>(anchors: &Tensor<T>, positives: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    let params = ParamSet::new();
    let mut g = Graph::new(&params);
    let (n, d) = anchors.dims2();
    let (pn, pd) = positives.dims2();
    let a = g.input(n, d, anchors.data().to_vec());
    let p = g.input(pn, pd, positives.data().to_vec());
    let loss = info_nce_graph(&mut g, a, p, cfg)?;
    Ok(g.scalar(loss))
}
