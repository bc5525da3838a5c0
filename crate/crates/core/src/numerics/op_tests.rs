//! Finite-difference checks for every differentiable graph op.

use super::*;

const TOL: f64 = 1e-4;

/// Projects the op's output onto fixed random weights so every output entry
/// contributes a distinct amount to the scalar loss.
fn check_op(seed: u64, shapes: &[(usize, usize)], build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) {
    let mut rng = Rng::new(seed);
    let mut params = ParamSet::<f64>::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            let t = Tensor::from_fn(&[r, c], |_| rng.uniform(-1.5, 1.5));
            params.add(format!("p{i}"), t)
        })
        .collect();
    let mut weight_rng = rng.fork(9);
    let report = grad_check(&mut params, 1e-6, TOL, |g| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = build(g, &vars);
        let (r, c) = g.shape(out);
        weight_rng.reset();
        let w = g.input(r, c, (0..r * c).map(|_| weight_rng.uniform(-1.0, 1.0)).collect());
        let weighted = g.mul(out, w);
        Ok(g.mean(weighted))
    })
    .unwrap();
    assert!(report.passed(), "{:?} shapes {shapes:?}", report.worst());
}

#[test]
fn matmul_and_transpose() {
    for seed in 0..3 {
        check_op(seed, &[(3, 5), (5, 4)], |g, v| g.matmul(v[0], v[1]));
        check_op(seed, &[(6, 2)], |g, v| g.transpose(v[0]));
    }
}

#[test]
fn elementwise() {
    for seed in 0..3 {
        check_op(seed, &[(4, 3), (4, 3)], |g, v| g.add(v[0], v[1]));
        check_op(seed, &[(4, 3), (4, 3)], |g, v| g.sub(v[0], v[1]));
        check_op(seed, &[(4, 3), (4, 3)], |g, v| g.mul(v[0], v[1]));
        check_op(seed, &[(5, 3), (1, 3)], |g, v| g.add_row(v[0], v[1]));
        check_op(seed, &[(2, 7)], |g, v| g.scale(v[0], -0.37));
        check_op(seed, &[(3, 8)], |g, v| g.gelu(v[0]));
        check_op(seed, &[(3, 8)], |g, v| g.abs(v[0]));
    }
}

#[test]
fn layer_norm() {
    for seed in 0..3 {
        check_op(seed, &[(4, 8), (1, 8), (1, 8)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    }
}

#[test]
fn attention_with_padding() {
    for seed in 0..3 {
        let layout = AttentionLayout {
            seq: 4,
            heads: 2,
            lens: vec![4, 2, 3],
        };
        check_op(seed, &[(12, 8), (12, 8), (12, 8)], move |g, v| {
            g.attention(v[0], v[1], v[2], layout.clone())
        });
    }
}

#[test]
fn gather_select_concat_slice() {
    for seed in 0..3 {
        check_op(seed, &[(6, 4)], |g, v| g.gather(v[0], vec![0, 3, 3, 5, 1]));
        check_op(seed, &[(6, 4)], |g, v| g.select_rows(v[0], vec![5, 0, 0, 2]));
        check_op(seed, &[(3, 2), (3, 5), (3, 1)], |g, v| g.concat_cols(&[v[0], v[1], v[2]]));
        check_op(seed, &[(3, 8)], |g, v| g.slice_cols(v[0], 2, 4));
    }
}

#[test]
fn reductions() {
    for seed in 0..3 {
        check_op(seed, &[(5, 6)], |g, v| g.mean(v[0]));
        check_op(seed, &[(4, 6), (4, 6)], |g, v| g.row_dot(v[0], v[1]));
        check_op(seed, &[(4, 6)], |g, v| g.norm_rows(v[0]));
        check_op(seed, &[(4, 6)], |g, v| g.normalize_rows(v[0], 1e-8));
        check_op(seed, &[(4, 6)], |g, v| g.logsumexp_rows(v[0]));
        check_op(seed, &[(5, 5)], |g, v| g.diag(v[0]));
    }
}

#[test]
fn cosine_composition() {
    for seed in 0..3 {
        check_op(seed, &[(3, 8), (3, 8)], |g, v| {
            let a = g.normalize_rows(v[0], 1e-8);
            let b = g.normalize_rows(v[1], 1e-8);
            g.row_dot(a, b)
        });
    }
}

#[test]
fn cosine_gradient_vanishes_at_its_maximum() {
    // u = v = axis-aligned vector: every perturbation is either a pure
    // rescaling or symmetric in sign, so the central difference is exactly 0.
    let mut params = ParamSet::<f64>::new();
    let u = params.add("u", Tensor::new(&[1, 3], vec![2.0, 0.0, 0.0]).unwrap());
    let report = grad_check(&mut params, 1e-4, 1e-6, |g| {
        let uv = g.param(u);
        let v = g.input(1, 3, vec![2.0, 0.0, 0.0]);
        let a = g.normalize_rows(uv, 1e-8);
        let b = g.normalize_rows(v, 1e-8);
        let c = g.row_dot(a, b);
        Ok(g.mean(c))
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{report:?}");

    let mut g = Graph::new(&params);
    let uv = g.param(u);
    let v = g.input(1, 3, vec![2.0, 0.0, 0.0]);
    let a = g.normalize_rows(uv, 1e-8);
    let b = g.normalize_rows(v, 1e-8);
    let c = g.row_dot(a, b);
    let loss = g.mean(c);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(u).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn non_finite_values_name_the_op() {
    let mut params = ParamSet::<f64>::new();
    let p = params.add("p", Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
    let mut g = Graph::new(&params);
    let x = g.param(p);
    let bad = g.scale(x, f64::NAN);
    let loss = g.mean(bad);
    let err = g.backward(loss).unwrap_err();
    assert!(err.to_string().contains("scale"), "{err}");
}

#[test]
fn inputs_receive_no_gradient_slots() {
    let mut params = ParamSet::<f64>::new();
    let p = params.add("p", Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let unused = params.add("unused", Tensor::new(&[1, 1], vec![1.0]).unwrap());
    let mut g = Graph::new(&params);
    let x = g.param(p);
    let c = g.input(2, 2, vec![1.0; 4]);
    let y = g.mul(x, c);
    let loss = g.mean(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(p).unwrap(), &[0.25; 4]);
    assert!(grads.get(unused).is_none());
}
