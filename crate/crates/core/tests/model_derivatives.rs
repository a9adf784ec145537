//! Finite-difference oracles for the model's gradient and Hessian-vector
//! product.

use paml_core::{Batch, Model, ModelSpec, OutputKind, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn small_spec(output: OutputKind) -> ModelSpec {
    ModelSpec {
        user_vocab: vec![3, 2],
        item_vocab: vec![4],
        embedding_dim: 2,
        hidden_dims: vec![4, 3],
        output,
    }
}

fn random_batch(rng: &mut ChaCha8Rng, spec: &ModelSpec) -> Batch {
    let n = rng.random_range(1..5);
    let user = spec.user_vocab.iter().map(|&v| rng.random_range(0..v)).collect();
    let items = (0..n)
        .map(|_| spec.item_vocab.iter().map(|&v| rng.random_range(0..v)).collect())
        .collect();
    let targets = (0..n)
        .map(|_| match spec.output {
            OutputKind::RatingRegression => rng.random_range(1..=5) as f64,
            OutputKind::CtrSoftmax => rng.random_range(0..2) as f64,
        })
        .collect();
    Batch {
        user,
        items,
        targets,
    }
}

fn random_theta(rng: &mut ChaCha8Rng, model: &Model) -> ParamSet {
    let mut theta = ParamSet::zeros(model.layout().clone());
    theta
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    theta
}

/// A (theta, batch) pair whose ReLU pre-activations all sit away from 0, so
/// that central differences do not straddle a kink.
fn smooth_draw(rng: &mut ChaCha8Rng, model: &Model) -> (ParamSet, Batch) {
    loop {
        let theta = random_theta(rng, model);
        let batch = random_batch(rng, model.spec());
        if model.kink_margin(&theta, &batch).unwrap() > 1e-3 {
            return (theta, batch);
        }
    }
}

fn fd_gradient(model: &Model, theta: &ParamSet, batch: &Batch, eps: f64) -> Vec<f64> {
    (0..theta.total_dim())
        .map(|i| {
            let mut plus = theta.clone();
            plus.as_mut_slice()[i] += eps;
            let mut minus = theta.clone();
            minus.as_mut_slice()[i] -= eps;
            (model.loss(&plus, batch).unwrap() - model.loss(&minus, batch).unwrap()) / (2.0 * eps)
        })
        .collect()
}

#[test]
fn gradient_matches_central_differences() {
    for output in [OutputKind::RatingRegression, OutputKind::CtrSoftmax] {
        let model = Model::new(small_spec(output)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (theta, batch) = smooth_draw(&mut rng, &model);
            let g = model.grad(&theta, &batch).unwrap();
            let fd = fd_gradient(&model, &theta, &batch, 1e-5);
            for (a, b) in g.params.as_slice().iter().zip(&fd) {
                worst = worst.max(rel_err(*a, *b));
            }
        }
        assert!(worst < 1e-4, "{output:?}: worst relative error {worst:e}");
    }
}

#[test]
fn bias_only_scalar_loss_has_gradient_minus_two() {
    // With all weights and embeddings at zero the prediction is the output
    // bias, so the loss is (b - 1)^2.
    let model = Model::new(ModelSpec {
        user_vocab: vec![1],
        item_vocab: vec![],
        embedding_dim: 1,
        hidden_dims: vec![],
        output: OutputKind::RatingRegression,
    })
    .unwrap();
    let theta = ParamSet::zeros(model.layout().clone());
    let batch = Batch {
        user: vec![0],
        items: vec![vec![]],
        targets: vec![1.0],
    };
    let g = model.grad(&theta, &batch).unwrap();
    assert_eq!(g.params.entry("dec.0.bias"), &[-2.0]);
    assert_eq!(g.loss, 1.0);
}

#[test]
fn hvp_on_linear_block_is_twice_gram_matrix() {
    // No hidden layers: the loss is least squares in (w, b) for fixed
    // embeddings, so that Hessian block is 2 A^T A with rows of A equal to
    // [x_j, 1] / sqrt(n).
    let model = Model::new(ModelSpec {
        user_vocab: vec![1],
        item_vocab: vec![3],
        embedding_dim: 2,
        hidden_dims: vec![],
        output: OutputKind::RatingRegression,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = random_theta(&mut rng, &model);
    let batch = Batch {
        user: vec![0],
        items: vec![vec![0], vec![2], vec![1]],
        targets: vec![1.0, -0.5, 2.0],
    };
    let mut v = theta.zeros_like();
    for x in v.entry_mut("dec.0.weight").iter_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    v.entry_mut("dec.0.bias")[0] = 0.7;
    let hv = model.hvp(&theta, &batch, &v).unwrap();

    let h = theta.entry("emb.user.0").to_vec();
    let emb = theta.entry("emb.item.0");
    let rows: Vec<Vec<f64>> = batch
        .items
        .iter()
        .map(|it| {
            let mut r = h.clone();
            r.extend_from_slice(&emb[it[0] * 2..it[0] * 2 + 2]);
            r.push(1.0);
            r
        })
        .collect();
    let mut vw = v.entry("dec.0.weight").to_vec();
    vw.push(v.entry("dec.0.bias")[0]);
    let n = rows.len() as f64;
    let mut expected = vec![0.0; 5];
    for r in &rows {
        let rv: f64 = r.iter().zip(&vw).map(|(a, b)| a * b).sum();
        for (e, ri) in expected.iter_mut().zip(r) {
            *e += 2.0 * ri * rv / n;
        }
    }
    let mut got = hv.entry("dec.0.weight").to_vec();
    got.push(hv.entry("dec.0.bias")[0]);
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{got:?} vs {expected:?}");
    }
}

#[test]
fn hvp_matches_difference_of_gradients() {
    for output in [OutputKind::RatingRegression, OutputKind::CtrSoftmax] {
        let model = Model::new(small_spec(output)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let eps = 1e-4;
        for _ in 0..50 {
            let (theta, batch) = smooth_draw(&mut rng, &model);
            let v = random_theta(&mut rng, &model);
            let hv = model.hvp(&theta, &batch, &v).unwrap();
            let mut plus = theta.clone();
            plus.axpy(eps, &v);
            let mut minus = theta.clone();
            minus.axpy(-eps, &v);
            // A kink between theta +- eps v invalidates the oracle.
            if model.kink_margin(&plus, &batch).unwrap() < 1e-6
                || model.kink_margin(&minus, &batch).unwrap() < 1e-6
            {
                continue;
            }
            let gp = model.grad(&plus, &batch).unwrap().params;
            let gm = model.grad(&minus, &batch).unwrap().params;
            let scale = hv.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for ((h, p), m) in hv.as_slice().iter().zip(gp.as_slice()).zip(gm.as_slice()) {
                let fd = (p - m) / (2.0 * eps);
                let err = (h - fd).abs() / h.abs().max(fd.abs()).max(1e-6 * scale.max(1.0));
                assert!(err < 1e-3, "{output:?}: hv {h} vs fd {fd}");
            }
        }
    }
}

#[test]
fn hvp_is_symmetric() {
    for output in [OutputKind::RatingRegression, OutputKind::CtrSoftmax] {
        let model = Model::new(small_spec(output)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let theta = random_theta(&mut rng, &model);
            let batch = random_batch(&mut rng, model.spec());
            let u = random_theta(&mut rng, &model);
            let v = random_theta(&mut rng, &model);
            let a = v.dot(&model.hvp(&theta, &batch, &u).unwrap());
            let b = u.dot(&model.hvp(&theta, &batch, &v).unwrap());
            assert!(rel_err(a, b) < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn grad_and_hvp_share_the_gradient() {
    let model = Model::new(small_spec(OutputKind::CtrSoftmax)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let theta = random_theta(&mut rng, &model);
    let batch = random_batch(&mut rng, model.spec());
    let v = random_theta(&mut rng, &model);
    let (g, _) = model.grad_and_hvp(&theta, &batch, &v).unwrap();
    assert_eq!(g, model.grad(&theta, &batch).unwrap());
}

#[test]
fn outputs_are_deterministic() {
    let model = Model::new(small_spec(OutputKind::RatingRegression)).unwrap();
    let theta = model.init(&mut ChaCha8Rng::seed_from_u64(9));
    let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(4), model.spec());
    let a = model.grad(&theta, &batch).unwrap();
    let b = model.grad(&theta, &batch).unwrap();
    assert_eq!(a.params.as_slice(), b.params.as_slice());
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
}

#[test]
fn forward_matches_scalar_evaluation() {
    let model = Model::new(ModelSpec {
        user_vocab: vec![2],
        item_vocab: vec![3],
        embedding_dim: 1,
        hidden_dims: vec![2],
        output: OutputKind::RatingRegression,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let theta = random_theta(&mut rng, &model);
    let items = vec![vec![0], vec![1], vec![2]];
    let f = model.forward(&theta, &[1], &items).unwrap();
    let eu = theta.entry("emb.user.0");
    let ei = theta.entry("emb.item.0");
    let w0 = theta.entry("dec.0.weight");
    let b0 = theta.entry("dec.0.bias");
    let w1 = theta.entry("dec.1.weight");
    let b1 = theta.entry("dec.1.bias");
    for (j, item) in items.iter().enumerate() {
        let x = [eu[1], ei[item[0]]];
        let z0 = (w0[0] * x[0] + w0[1] * x[1] + b0[0]).max(0.0);
        let z1 = (w0[2] * x[0] + w0[3] * x[1] + b0[1]).max(0.0);
        let out = w1[0] * z0 + w1[1] * z1 + b1[0];
        assert!((f.predictions.scores()[j] - out).abs() < 1e-14);
    }
    assert_eq!(f.user_embedding, vec![eu[1]]);
}
