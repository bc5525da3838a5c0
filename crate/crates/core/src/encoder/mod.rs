//! Whitespace tokenization, vocabulary, and the transformer encoder `f`.

mod model;
mod vocab;

pub use model::{EncoderConfig, EncoderModel, Linear};
pub use vocab::{words, TokenIds, Vocab, CLS, PAD, UNK};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Graph, ParamSet, Rng, Tensor};

    fn small(d_model: usize, dropout: f64) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 20,
            d_model,
            layers: 2,
            heads: 2,
            ff_dim: 2 * d_model,
            max_len: 16,
            dropout,
        }
    }

    fn model(config: EncoderConfig, seed: u64) -> (EncoderModel, ParamSet<f32>) {
        let mut params = ParamSet::new();
        let m = EncoderModel::init(config, &mut params, &mut Rng::new(seed)).unwrap();
        (m, params)
    }

    fn seq(ids: &[u32]) -> TokenIds {
        TokenIds::with_cls(ids)
    }

    fn encode_rows(m: &EncoderModel, p: &ParamSet<f32>, batch: &[TokenIds], train: bool, rng: &mut Rng) -> Vec<Vec<f32>> {
        let mut g = Graph::new(p);
        let h = m.encode(&mut g, batch, train, rng).unwrap();
        g.value(h).chunks(m.d_model()).map(<[f32]>::to_vec).collect()
    }

    #[test]
    fn eval_mode_is_pure() {
        let (m, p) = model(small(16, 0.1), 1);
        let batch = [seq(&[4, 5, 6])];
        let a = encode_rows(&m, &p, &batch, false, &mut Rng::new(1));
        let b = encode_rows(&m, &p, &batch, false, &mut Rng::new(2));
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_applies_dropout() {
        let (m, p) = model(small(16, 0.1), 1);
        let batch = [seq(&[4, 5, 6])];
        let mut rng = Rng::new(3);
        let a = encode_rows(&m, &p, &batch, true, &mut rng);
        let b = encode_rows(&m, &p, &batch, true, &mut rng);
        let linf = a[0].iter().zip(&b[0]).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(linf > 0.0);
    }

    #[test]
    fn padding_never_changes_an_embedding() {
        let (m, p) = model(small(16, 0.1), 4);
        let x = seq(&[7, 8]);
        let alone = encode_rows(&m, &p, &[x.clone()], false, &mut Rng::new(0));
        let padded = encode_rows(&m, &p, &[x.clone(), seq(&[3, 4, 5, 6, 9, 10, 11])], false, &mut Rng::new(0));
        let second = encode_rows(&m, &p, &[seq(&[9; 12]), x], false, &mut Rng::new(0));
        assert_eq!(alone[0], padded[0]);
        assert_eq!(alone[0], second[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, p) = model(small(8, 0.0), 0);
        let mut g = Graph::new(&p);
        let mut rng = Rng::new(0);
        assert!(m.encode(&mut g, &[], false, &mut rng).is_err());
        assert!(m.encode(&mut g, &[seq(&[4; 16])], false, &mut rng).is_err());
        assert!(m.encode(&mut g, &[seq(&[25])], false, &mut rng).is_err());
        assert!(m.encode(&mut g, &[seq(&[4; 15])], false, &mut rng).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut c = small(8, 0.1);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = small(8, 0.1);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        assert!(EncoderConfig::default().validate().is_ok());
    }

    #[test]
    fn projector_identity_and_constant() {
        let (m, mut p) = model(small(4, 0.0), 0);
        let proj = m.projector();
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        *p.get_mut(proj.weight) = eye;
        let h = vec![0.5f32, -1.0, 2.0, 3.0, 1.0, 1.0, 0.0, -2.0];
        {
            let mut g = Graph::new(&p);
            let x = g.input(2, 4, h.clone());
            let y = m.project(&mut g, x).unwrap();
            assert_eq!(g.value(y), &h[..]);
        }
        *p.get_mut(proj.weight) = Tensor::zeros(&[4, 4]);
        *p.get_mut(proj.bias) = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut g = Graph::new(&p);
        let x = g.input(2, 4, h);
        let y = m.project(&mut g, x).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        let wrong = g.input(1, 3, vec![0.0; 3]);
        assert!(m.project(&mut g, wrong).is_err());
    }

    #[test]
    fn projector_gradient_matches_finite_differences() {
        let mut params = ParamSet::<f64>::new();
        let m = EncoderModel::init(small(4, 0.0), &mut params, &mut Rng::new(9)).unwrap();
        let h: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let report = grad_check(&mut params, 1e-6, 1e-4, |g| {
            let x = g.input(3, 4, h.clone());
            let y = m.project(g, x)?;
            Ok(g.mean(y))
        })
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let mut params = ParamSet::<f64>::new();
        let cfg = EncoderConfig {
            vocab_size: 10,
            d_model: 8,
            layers: 1,
            heads: 2,
            ff_dim: 8,
            max_len: 6,
            dropout: 0.1,
        };
        let m = EncoderModel::init(cfg, &mut params, &mut Rng::new(2)).unwrap();
        let batch = [seq(&[3, 4, 5]), seq(&[6, 7])];
        let w: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).sin() + 0.2).collect();
        let report = grad_check(&mut params, 1e-6, 1e-4, |g| {
            let mut rng = Rng::new(11);
            let h = m.encode(g, &batch, true, &mut rng)?;
            let z = m.project(g, h)?;
            let wv = g.input(2, 8, w.clone());
            let prod = g.mul(z, wv);
            Ok(g.mean(prod))
        })
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn dropout_pairs_are_not_identical() {
        let (m, p) = model(small(64, 0.1), 5);
        let mut rng = Rng::new(17);
        let mut below = 0;
        for t in 0..100u32 {
            let x = seq(&[3 + t % 10, 4 + t % 7, 5]);
            let pair = vec![x.clone(), x];
            let mut g = Graph::new(&p);
            let h = m.encode(&mut g, &pair, true, &mut rng).unwrap();
            let z = m.project(&mut g, h).unwrap();
            let v = g.value(z);
            let cos = crate::objective::cosine(&v[..64], &v[64..]).unwrap();
            if cos < 1.0 - 1e-6 {
                below += 1;
            }
        }
        assert!(below >= 95, "{below} of 100 dropout pairs separated");
    }
}
