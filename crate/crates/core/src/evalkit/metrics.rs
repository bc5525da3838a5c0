use crate::error::{Error, Result};
use crate::numerics::Scalar;

const NORM_EPS: f64 = 1e-12;

/// Unit-normalized `f64` copy, and whether the input was a zero vector.
fn unit<T: Scalar>(v: &[T]) -> (Vec<f64>, bool) {
    let v: Vec<f64> = v.iter().map(|x| x.f64()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let degenerate = norm < NORM_EPS;
    let denom = norm.max(NORM_EPS);
    (v.into_iter().map(|x| x / denom).collect(), degenerate)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    /// Mean squared distance between normalized positive-pair embeddings.
    pub value: f64,
    /// Vectors whose norm was too small to normalize.
    pub zero_vectors: usize,
}

/// Mean over pairs of `|f(x) - f(x+)|^2` on the unit sphere.
pub fn alignment<T: Scalar>(pairs: &[(&[T], &[T])]) -> Result<Alignment> {
    if pairs.is_empty() {
        return Err(Error::Data("alignment needs at least one pair".into()));
    }
    let mut total = 0.0;
    let mut zero_vectors = 0;
    for (a, b) in pairs {
        if a.len() != b.len() {
            return Err(Error::shape("alignment", format!("{} vs {} coordinates", a.len(), b.len())));
        }
        let (ua, za) = unit(a);
        let (ub, zb) = unit(b);
        zero_vectors += usize::from(za) + usize::from(zb);
        total += sq_dist(&ua, &ub);
    }
    Ok(Alignment {
        value: total / pairs.len() as f64,
        zero_vectors,
    })
}

/// `log` of the mean Gaussian potential `exp(-2 |f(x) - f(y)|^2)` over all
/// distinct unordered pairs of normalized points.
pub fn uniformity<T: Scalar>(points: &[&[T]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Data(format!("uniformity needs at least 2 points, got {}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("uniformity", "points differ in dimension"));
    }
    let units: Vec<Vec<f64>> = points.iter().map(|p| unit(p).0).collect();
    let mut total = 0.0f64;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            total += (-2.0 * sq_dist(&units[i], &units[j])).exp();
        }
    }
    let n = units.len() as f64;
    Ok((total / (n * (n - 1.0) / 2.0)).ln())
}

/// Fractional (average) ranks starting at 1.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data(format!(
            "correlation needs two equal-length lists of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation("one side is constant"));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "spearman".into() });
    }
    if a.len() != b.len() || a.len() < 2 {
        return pearson(a, b);
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_anchors() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let neg = [-1.0, 0.0];
        assert_eq!(alignment(&[(&e1[..], &e1[..]), (&e2[..], &e2[..])]).unwrap().value, 0.0);
        assert_eq!(alignment(&[(&e1[..], &e2[..])]).unwrap().value, 2.0);
        assert_eq!(alignment(&[(&e1[..], &e1[..]), (&e1[..], &neg[..])]).unwrap().value, 2.0);
        assert!(alignment::<f64>(&[]).is_err());
    }

    #[test]
    fn alignment_flags_zero_vectors() {
        let z = [0.0, 0.0];
        let e1 = [1.0, 0.0];
        let a = alignment(&[(&z[..], &e1[..])]).unwrap();
        assert_eq!(a.zero_vectors, 1);
        assert!((a.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_ignores_scale() {
        let u = [0.3, -1.2, 2.0];
        let v = [1.0, 0.5, -0.4];
        let su: Vec<f64> = u.iter().map(|x| x * 7.5).collect();
        let sv: Vec<f64> = v.iter().map(|x| x * 0.02).collect();
        let base = alignment(&[(&u[..], &v[..])]).unwrap().value;
        let scaled = alignment(&[(&su[..], &sv[..])]).unwrap().value;
        assert!((base - scaled).abs() < 1e-6);
    }

    #[test]
    fn uniformity_anchors() {
        let e1 = [1.0, 0.0];
        let neg = [-1.0, 0.0];
        let spread = uniformity(&[&e1[..], &neg[..]]).unwrap();
        assert!((spread + 8.0).abs() < 1e-12);
        let same = uniformity(&[&e1[..], &e1[..]]).unwrap();
        assert_eq!(same, 0.0);
        assert!(same > spread);

        let s = 3f64.sqrt() / 2.0;
        let tri = [[1.0, 0.0], [-0.5, s], [-0.5, -s]];
        let u = uniformity(&[&tri[0][..], &tri[1][..], &tri[2][..]]).unwrap();
        assert!((u + 6.0).abs() < 1e-12);
        assert!(uniformity(&[&e1[..]]).is_err());
    }

    #[test]
    fn spearman_anchors() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn tied_ranks() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), [1.0, 2.5, 2.5, 4.0]);
        // Pearson of [1, 2.5, 2.5, 4] with [1, 2, 3, 4], by hand: cov 4.5 / sqrt(4.5 * 5)
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((rho - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn monotone_transforms_preserve_rho() {
        let a = [0.3, -1.0, 2.2, 0.9, -0.4, 1.7, 0.0];
        let b = [1.0, 0.2, 0.9, 3.0, -2.0, 0.5, 0.4];
        let base = spearman(&a, &b).unwrap();
        let cubed: Vec<f64> = a.iter().map(|x| x * x * x).collect();
        let exped: Vec<f64> = b.iter().map(|x| x.exp()).collect();
        assert!((spearman(&cubed, &b).unwrap() - base).abs() < 1e-12);
        assert!((spearman(&a, &exped).unwrap() - base).abs() < 1e-12);
    }
}
