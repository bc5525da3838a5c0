use super::graph::{Graph, Var};
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error over its entries)`
    pub per_param: Vec<(String, f64)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every entry of every parameter against `(f(θ+eps) - f(θ-eps)) / 2eps`.
///
/// `loss` must build the same deterministic scalar each time it is called;
/// closures that need dropout should re-seed their own `Rng` on every call.
pub fn grad_check<F>(params: &mut ParamSet<f64>, eps: f64, tol: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: for<'g> FnMut(&mut Graph<'g, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let out = loss(&mut g)?;
        let value = g.scalar(out);
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "grad_check loss".into() });
        }
        g.backward(out)?
    };

    let mut eval = |params: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(params);
        let out = loss(&mut g)?;
        g.check()?;
        Ok(g.scalar(out))
    };

    let mut per_param = Vec::with_capacity(params.len());
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).numel();
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(params);
            params.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(a, numeric));
        }
        per_param.push((params.name(id).to_string(), worst));
    }
    Ok(GradCheckReport { per_param, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn sum_of_squares() {
        let mut params = ParamSet::<f64>::new();
        let theta = params.add("theta", Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        {
            let mut g = Graph::new(&params);
            let t = g.param(theta);
            let sq = g.mul(t, t);
            let s = g.mean(sq);
            let loss = g.scale(s, 3.0);
            let grads = g.backward(loss).unwrap();
            assert_eq!(grads.get(theta).unwrap(), &[2.0, 4.0, 6.0]);
        }
        let report = grad_check(&mut params, 1e-4, 1e-6, |g| {
            let t = g.param(theta);
            let sq = g.mul(t, t);
            let s = g.mean(sq);
            Ok(g.scale(s, 3.0))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn non_finite_loss_propagates() {
        let mut params = ParamSet::<f64>::new();
        let theta = params.add("theta", Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap());
        let err = grad_check(&mut params, 1e-4, 1e-6, |g| {
            let t = g.param(theta);
            let big = g.scale(t, f64::INFINITY);
            Ok(g.mean(big))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 0.1).abs() < 1e-12);
    }
}
