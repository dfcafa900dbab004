use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Dense, RecommenderModel, TrainHyper};
use crate::corpus::AspectMatrices;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: RecommenderModel,
    /// Mean cross-entropy per sample, one entry per epoch.
    pub loss_trace: Vec<f64>,
}

/// `-log s` for label 1, `-log(1 - s)` for label 0, computed from the logit.
fn cross_entropy(logit: f64, label: f64) -> f64 {
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
    label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

/// Trains the scoring network on the training interactions in `matrices.b`
/// with binary cross-entropy.
///
/// Every epoch pairs each positive with `negative_ratio` items drawn
/// uniformly from the user's non-interacted items, shuffles, and applies
/// mini-batch SGD with the batch-mean gradient. Fully deterministic for a
/// fixed `seed`.
pub fn train(matrices: &AspectMatrices, hyper: &TrainHyper, seed: u64) -> Result<TrainedModel> {
    let positives: Vec<(usize, usize)> = matrices.b.pairs().collect();
    if positives.is_empty() {
        return Err(CoreError::NoPositives);
    }
    let n_items = matrices.items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RecommenderModel::init(matrices.r(), &mut rng);
    model.hyper = hyper.clone();
    model.seed = seed;

    let batch_size = hyper.batch_size.max(1);
    let mut grads: [Dense; 3] = model.layers.clone().map(|l| Dense::zeros(l.inputs, l.outputs));
    let mut loss_trace = Vec::with_capacity(hyper.epochs);
    let mut samples: Vec<(usize, usize, f64)> = Vec::new();

    for epoch in 0..hyper.epochs {
        samples.clear();
        for &(u, i) in &positives {
            samples.push((u, i, 1.0));
            let seen = matrices.b.row(u).len();
            if seen >= n_items {
                continue;
            }
            for _ in 0..hyper.negative_ratio {
                let j = loop {
                    let j = rng.gen_range(0..n_items);
                    if !matrices.b.contains(u, j) {
                        break j;
                    }
                };
                samples.push((u, j, 0.0));
            }
        }
        samples.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in samples.chunks(batch_size) {
            for g in grads.iter_mut() {
                g.weights.fill(0.0);
                g.bias.fill(0.0);
            }
            for &(u, i, label) in batch {
                let act = model.activations(matrices.x.row(u), matrices.y.row(i));
                epoch_loss += cross_entropy(act.logit, label);
                // d(cross-entropy)/d(logit) uses the unclamped sigmoid.
                let s = 1.0 / (1.0 + (-act.logit).exp());
                model.backward(&act, s - label, Some(&mut grads));
            }
            let scale = hyper.learning_rate / batch.len() as f64;
            for (layer, g) in model.layers.iter_mut().zip(&grads) {
                for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= scale * d;
                }
                for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= scale * d;
                }
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(CoreError::NonFinite(format!("training loss at epoch {epoch}")));
        }
        loss_trace.push(mean);
    }

    Ok(TrainedModel { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{DenseMatrix, InteractionMatrix};

    fn tiny() -> AspectMatrices {
        let mut b = InteractionMatrix::new(1, 3);
        b.insert(0, 0);
        AspectMatrices {
            x: DenseMatrix::from_rows(&[[3.0, 0.0]]),
            y: DenseMatrix::from_rows(&[[4.0, 0.0], [0.0, 4.0], [0.0, 2.0]]),
            b,
            scale: 5,
        }
    }

    #[test]
    fn no_positives_is_an_error() {
        let mut m = tiny();
        m.b = InteractionMatrix::new(1, 3);
        assert!(matches!(
            train(&m, &TrainHyper::default(), 1),
            Err(CoreError::NoPositives)
        ));
    }

    #[test]
    fn single_positive_overfits() {
        let hyper = TrainHyper {
            epochs: 200,
            batch_size: 1,
            ..Default::default()
        };
        let m = tiny();
        let t = train(&m, &hyper, 3).unwrap();
        let s = t.model.forward(m.x.row(0), m.y.row(0)).unwrap();
        assert!(s > 0.9, "score {s}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let hyper = TrainHyper {
            epochs: 3,
            ..Default::default()
        };
        let a = train(&tiny(), &hyper, 9).unwrap();
        let b = train(&tiny(), &hyper, 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn cross_entropy_matches_log_form() {
        for z in [-3.0f64, -0.1, 0.0, 2.5] {
            let s: f64 = 1.0 / (1.0 + (-z).exp());
            assert!((cross_entropy(z, 1.0) + s.ln()).abs() < 1e-12);
            assert!((cross_entropy(z, 0.0) + (1.0 - s).ln()).abs() < 1e-12);
        }
    }
}
