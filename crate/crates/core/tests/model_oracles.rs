use counter_core::corpus::{build_matrices, split};
use counter_core::counterfactual::strength;
use counter_core::recsys::{
    read_checkpoint, recommend_top_k, write_checkpoint, Dense, RecommenderModel,
};
use counter_core::synth::generate;
use counter_core::{AspectMatrices, Scorer, SynthSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain triple-loop forward pass over the public layer parameters; also
/// returns which hidden units are active.
fn oracle_pass(model: &RecommenderModel, user: &[f64], item: &[f64]) -> (f64, Vec<bool>) {
    let mut act: Vec<f64> = user.iter().chain(item).copied().collect();
    let mut pattern = Vec::new();
    let layers = model.layers();
    for (idx, layer) in layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let mut z = layer.bias[o];
            for (w, a) in layer.weights[o * layer.inputs..(o + 1) * layer.inputs].iter().zip(&act) {
                z += w * a;
            }
            if idx + 1 < layers.len() {
                pattern.push(z > 0.0);
                next.push(z.max(0.0));
            } else {
                next.push(z);
            }
        }
        act = next;
    }
    (1.0 / (1.0 + (-act[0]).exp()), pattern)
}

fn oracle_forward(model: &RecommenderModel, user: &[f64], item: &[f64]) -> f64 {
    oracle_pass(model, user, item).0
}

/// Glorot weights with small random biases, so ReLU kinks do not all sit at
/// the same place.
fn random_model(r: usize, rng: &mut ChaCha8Rng) -> RecommenderModel {
    let mut model = RecommenderModel::init(r, rng);
    let mut layers: [Dense; 3] = model.layers().clone();
    for layer in &mut layers {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    model = RecommenderModel::from_layers(r, layers, model.hyper.clone(), 0).unwrap();
    model
}

fn aspect_vector(r: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..r)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(1.0..5.0) })
        .collect()
}

/// Central differences are only exact up to O(h^2) on a smooth piece, so a
/// draw is used only when no ReLU switches inside any `[y_k - h, y_k + h]`.
#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-3;
    let mut draws = 0;
    let mut attempts = 0;
    while draws < 100 {
        attempts += 1;
        assert!(attempts < 2000, "too few kink-free draws");
        let r = rng.gen_range(2..=8);
        let model = random_model(r, &mut rng);
        let user = aspect_vector(r, &mut rng);
        let item = aspect_vector(r, &mut rng);
        let (_, centre) = oracle_pass(&model, &user, &item);
        let shifted = |k: usize, by: f64| {
            let mut v = item.clone();
            v[k] += by;
            v
        };
        let smooth = (0..r).all(|k| {
            oracle_pass(&model, &user, &shifted(k, h)).1 == centre
                && oracle_pass(&model, &user, &shifted(k, -h)).1 == centre
        });
        if !smooth {
            continue;
        }
        let grad = model.grad_item_aspects(&user, &item).unwrap();
        for (k, &g) in grad.iter().enumerate() {
            let (up, down) = (shifted(k, h), shifted(k, -h));
            let fd = (model.forward(&user, &up).unwrap() - model.forward(&user, &down).unwrap())
                / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "draw {draws} k {k}: grad {g} fd {fd} rel {rel}");
        }
        draws += 1;
    }
}

#[test]
fn forward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let r = rng.gen_range(1..=6);
        let model = random_model(r, &mut rng);
        let user = aspect_vector(r, &mut rng);
        let item = aspect_vector(r, &mut rng);
        let fast = model.forward(&user, &item).unwrap();
        assert!((fast - oracle_forward(&model, &user, &item)).abs() < 1e-12);
    }
}

#[test]
fn strength_is_difference_of_oracle_forwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let spec = SynthSpec {
        m: 8,
        n: 12,
        r: 4,
        density: 0.5,
        seed: 2,
        ..SynthSpec::default()
    };
    let (corpus, _) = generate(&spec).unwrap();
    let m = build_matrices(&corpus, &split(&corpus));
    let model = random_model(m.r(), &mut rng);
    for _ in 0..50 {
        let (u, j) = (rng.gen_range(0..m.users()), rng.gen_range(0..m.items()));
        let delta: Vec<f64> = (0..m.r()).map(|_| -rng.gen_range(0.0..2.0)).collect();
        let moved: Vec<f64> = m.y.row(j).iter().zip(&delta).map(|(y, d)| y + d).collect();
        let expected = oracle_forward(&model, m.x.row(u), m.y.row(j))
            - oracle_forward(&model, m.x.row(u), &moved);
        let got = strength(&model, &m, u, j, &delta);
        assert!((got - expected).abs() < 1e-10);
    }
}

/// Score increases in every item aspect.
struct Monotone;

impl Scorer for Monotone {
    fn aspects(&self) -> usize {
        3
    }

    fn score(&self, _user: &[f64], item: &[f64]) -> f64 {
        item.iter().map(|v| v.tanh()).sum()
    }

    fn score_and_item_grad(&self, user: &[f64], item: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(item) {
            *g = 1.0 - v.tanh().powi(2);
        }
        self.score(user, item)
    }
}

#[test]
fn strength_is_positive_for_monotone_models() {
    let m = AspectMatrices {
        x: counter_core::DenseMatrix::from_rows(&[[1.0, 1.0, 1.0]]),
        y: counter_core::DenseMatrix::from_rows(&[[2.0, 1.5, 0.5]]),
        b: counter_core::InteractionMatrix::new(1, 1),
        scale: 5,
    };
    assert!(strength(&Monotone, &m, 0, 0, &[-0.5, 0.0, 0.0]) > 0.0);
    assert!(strength(&Monotone, &m, 0, 0, &[-0.1, -0.2, -0.3]) > 0.0);
    assert_eq!(strength(&Monotone, &m, 0, 0, &[0.0; 3]), 0.0);
}

fn small_instance(seed: u64) -> AspectMatrices {
    let spec = SynthSpec {
        m: 20,
        n: 50,
        r: 8,
        density: 0.2,
        seed,
        ..SynthSpec::default()
    };
    let (corpus, _) = generate(&spec).unwrap();
    build_matrices(&corpus, &split(&corpus))
}

#[test]
fn ranking_matches_exhaustive_scoring() {
    let m = small_instance(4);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = random_model(m.r(), &mut rng);
    let k = 5;
    for u in 0..m.users() {
        let mut all: Vec<(f64, usize)> = (0..m.items())
            .filter(|&j| !m.b.row(u).contains(&j))
            .map(|j| (oracle_forward(&model, m.x.row(u), m.y.row(j)), j))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let list = recommend_top_k(u, k, &model, &m).unwrap();
        let got: Vec<usize> = list.items.iter().map(|it| it.item).collect();
        let want: Vec<usize> = all.iter().take(k).map(|p| p.1).collect();
        assert_eq!(got, want, "user {u}");
        assert_eq!(list.boundary.item, all[k].1);
        for it in &list.items {
            assert!(it.score >= list.boundary.score);
            assert!(!m.b.contains(u, it.item));
        }
    }
}

#[test]
fn checkpoint_roundtrip_reproduces_scores_bit_exactly() {
    let m = small_instance(6);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let model = random_model(m.r(), &mut rng);
    let mut buf = Vec::new();
    write_checkpoint(&model, Some("abc"), &mut buf).unwrap();
    let (back, hash) = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(hash.as_deref(), Some("abc"));
    for u in 0..m.users() {
        for j in 0..m.items() {
            let a = model.forward(m.x.row(u), m.y.row(j)).unwrap();
            let b = back.forward(m.x.row(u), m.y.row(j)).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn top_k_lists_respect_training_and_boundary(seed in 0u64..1000, k in 1usize..8) {
        let m = small_instance(seed % 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(m.r(), &mut rng);
        for u in 0..m.users() {
            let list = recommend_top_k(u, k, &model, &m).unwrap();
            prop_assert_eq!(list.items.len(), k);
            for it in &list.items {
                prop_assert!(!m.b.contains(u, it.item));
                prop_assert!(it.score >= list.boundary.score);
            }
            prop_assert!(!m.b.contains(u, list.boundary.item));
        }
    }
}
