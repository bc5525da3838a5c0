use super::vocab::{TokenIds, CLS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{AttentionLayout, Graph, ParamId, ParamSet, Rng, Scalar, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8000,
            d_model: 64,
            layers: 2,
            heads: 2,
            ff_dim: 128,
            max_len: 64,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.vocab_size <= 3 {
            return err(format!("vocab_size must exceed 3, got {}", self.vocab_size));
        }
        if self.d_model == 0 || self.heads == 0 || self.ff_dim == 0 || self.layers == 0 {
            return err("d_model, heads, ff_dim and layers must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return err(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.max_len < 2 {
            return err(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// `fan_in x fan_out` weight drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero bias.
    pub fn init<T: Scalar>(params: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::from_fn(&[fan_in, fan_out], |_| T::of(rng.uniform(-bound, bound)));
        Self {
            weight: params.add(format!("{name}.weight"), weight),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        g.linear(x, self.weight, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn init<T: Scalar>(params: &mut ParamSet<T>, name: &str, width: usize) -> Self {
        Self {
            gain: params.add(format!("{name}.gain"), Tensor::full(&[width], T::one())),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[width])),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

#[derive(Clone, Debug)]
struct Block {
    query: Linear,
    /// No bias: a key bias shifts every score in a row equally, which softmax ignores.
    key: ParamId,
    value: Linear,
    out: Linear,
    attn_norm: Norm,
    ff_in: Linear,
    ff_out: Linear,
    ff_norm: Norm,
}

/// Post-norm transformer encoder with a linear projector on the pooled
/// `CLS` state. Parameters live in an external [`ParamSet`] so other
/// trainable components can share one optimizer.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    config: EncoderConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    embed_norm: Norm,
    blocks: Vec<Block>,
    projector: Linear,
}

impl EncoderModel {
    pub fn init<T: Scalar>(config: EncoderConfig, params: &mut ParamSet<T>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        let token_embedding = params.add(
            "embed.tokens",
            Tensor::from_fn(&[config.vocab_size, d], |_| T::of(rng.uniform(-bound, bound))),
        );
        let position_embedding = params.add(
            "embed.positions",
            Tensor::from_fn(&[config.max_len, d], |_| T::of(rng.uniform(-bound, bound))),
        );
        let embed_norm = Norm::init(params, "embed.norm", d);
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("layer{l}");
                Block {
                    query: Linear::init(params, &format!("{p}.attn.query"), d, d, rng),
                    key: {
                        let bound = 1.0 / (d as f64).sqrt();
                        let w = Tensor::from_fn(&[d, d], |_| T::of(rng.uniform(-bound, bound)));
                        params.add(format!("{p}.attn.key.weight"), w)
                    },
                    value: Linear::init(params, &format!("{p}.attn.value"), d, d, rng),
                    out: Linear::init(params, &format!("{p}.attn.out"), d, d, rng),
                    attn_norm: Norm::init(params, &format!("{p}.attn.norm"), d),
                    ff_in: Linear::init(params, &format!("{p}.ff.in"), d, config.ff_dim, rng),
                    ff_out: Linear::init(params, &format!("{p}.ff.out"), config.ff_dim, d, rng),
                    ff_norm: Norm::init(params, &format!("{p}.ff.norm"), d),
                }
            })
            .collect();
        let projector = Linear::init(params, "projector", d, d, rng);
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            embed_norm,
            blocks,
            projector,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn projector(&self) -> Linear {
        self.projector
    }

    /// Final-layer hidden state at the `CLS` position, one row per sequence.
    ///
    /// Dropout is active iff `train`; padded key positions are masked out of
    /// attention, so an example's row does not depend on its batch mates.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[TokenIds],
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Data("cannot encode an empty batch".into()));
        }
        let vocab = self.config.vocab_size as u32;
        let mut seq = 0;
        for ids in batch {
            if ids.ids().first() != Some(&CLS) {
                return Err(Error::Data("encoder input must start with CLS".into()));
            }
            if ids.len() > self.config.max_len {
                return Err(Error::Data(format!(
                    "sequence of {} tokens exceeds the positional table of {}",
                    ids.len(),
                    self.config.max_len
                )));
            }
            if let Some(&bad) = ids.ids().iter().find(|&&id| id >= vocab) {
                return Err(Error::Data(format!("token id {bad} outside vocabulary of {vocab}")));
            }
            seq = seq.max(ids.len());
        }

        let mut tokens = Vec::with_capacity(batch.len() * seq);
        let mut positions = Vec::with_capacity(batch.len() * seq);
        for ids in batch {
            tokens.extend(ids.ids().iter().map(|&id| id as usize));
            tokens.extend(std::iter::repeat(PAD as usize).take(seq - ids.len()));
            positions.extend(0..seq);
        }
        let lens: Vec<usize> = batch.iter().map(TokenIds::len).collect();
        let p = if train { self.config.dropout } else { 0.0 };

        let tok_table = g.param(self.token_embedding);
        let pos_table = g.param(self.position_embedding);
        let tok = g.gather(tok_table, tokens);
        let pos = g.gather(pos_table, positions);
        let summed = g.add(tok, pos);
        let normed = self.embed_norm.forward(g, summed);
        let mut x = g.dropout(normed, p, rng)?;

        for block in &self.blocks {
            let q = block.query.forward(g, x);
            let key = g.param(block.key);
            let k = g.matmul(x, key);
            let v = block.value.forward(g, x);
            let layout = AttentionLayout {
                seq,
                heads: self.config.heads,
                lens: lens.clone(),
            };
            let attended = g.attention(q, k, v, layout);
            let o = block.out.forward(g, attended);
            let o = g.dropout(o, p, rng)?;
            let res = g.add(x, o);
            x = block.attn_norm.forward(g, res);

            let hidden = block.ff_in.forward(g, x);
            let hidden = g.gelu(hidden);
            let f = block.ff_out.forward(g, hidden);
            let f = g.dropout(f, p, rng)?;
            let res = g.add(x, f);
            x = block.ff_norm.forward(g, res);
        }
        let cls_rows = (0..batch.len()).map(|b| b * seq).collect();
        Ok(g.select_rows(x, cls_rows))
    }

    /// Affine projector `h W + b`, shared by anchors and constituents.
    pub fn project<T: Scalar>(&self, g: &mut Graph<'_, T>, pooled: Var) -> Result<Var> {
        let (_, cols) = g.shape(pooled);
        if cols != self.config.d_model {
            return Err(Error::shape(
                "project",
                format!("expected {} columns, got {cols}", self.config.d_model),
            ));
        }
        Ok(self.projector.forward(g, pooled))
    }

    /// Eval-mode `project(encode(batch))`, one vector per input.
    pub fn embed<T: Scalar>(&self, params: &ParamSet<T>, batch: &[TokenIds]) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::new(params);
        let mut rng = Rng::new(0);
        let pooled = self.encode(&mut g, batch, false, &mut rng)?;
        let z = self.project(&mut g, pooled)?;
        g.check()?;
        Ok(g
            .value(z)
            .chunks_exact(self.config.d_model)
            .map(<[T]>::to_vec)
            .collect())
    }
}
