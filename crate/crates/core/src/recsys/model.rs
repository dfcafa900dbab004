use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::error::{CoreError, Result};

/// Output widths of the two hidden layers; the output layer has width 1.
pub const HIDDEN: [usize; 2] = [512, 256];

/// Fully connected layer, weights stored row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, (slot, b)) in out.iter_mut().zip(&self.bias).enumerate() {
            *slot = b + dot(self.row(o), input);
        }
    }

    /// `grad_in += W^T grad_out`, skipping zero rows.
    fn backward_input(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g != 0.0 {
                axpy(g, self.row(o), grad_in);
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Dot product with eight independent accumulators; the summation order is
/// fixed, so results are reproducible across runs.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    // Keep the score strictly inside (0, 1) even when exp saturates.
    s.clamp(f64::MIN_POSITIVE, f64::from_bits(1.0f64.to_bits() - 1))
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Training hyperparameters stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives sampled per positive.
    pub negative_ratio: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 256,
            negative_ratio: 2,
        }
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub input: Vec<f64>,
    /// Post-ReLU outputs of the hidden layers.
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub logit: f64,
    pub score: f64,
}

/// Scoring network `f(X_i, Y_j)`: the user and item aspect vectors are
/// concatenated and passed through dense layers of width 512, 256 and 1,
/// with ReLU after the hidden layers and a logistic squash on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommenderModel {
    r: usize,
    pub(crate) layers: [Dense; 3],
    pub hyper: TrainHyper,
    pub seed: u64,
}

impl RecommenderModel {
    /// Model for `r` aspects with every parameter set to zero.
    pub fn zeros(r: usize) -> Self {
        Self {
            r,
            layers: [
                Dense::zeros(2 * r, HIDDEN[0]),
                Dense::zeros(HIDDEN[0], HIDDEN[1]),
                Dense::zeros(HIDDEN[1], 1),
            ],
            hyper: TrainHyper::default(),
            seed: 0,
        }
    }

    /// Glorot-initialised model.
    pub fn init<R: Rng>(r: usize, rng: &mut R) -> Self {
        Self {
            r,
            layers: [
                Dense::glorot(2 * r, HIDDEN[0], rng),
                Dense::glorot(HIDDEN[0], HIDDEN[1], rng),
                Dense::glorot(HIDDEN[1], 1, rng),
            ],
            hyper: TrainHyper::default(),
            seed: 0,
        }
    }

    /// Assembles a model from explicit layers, validating their shapes.
    pub fn from_layers(
        r: usize,
        layers: [Dense; 3],
        hyper: TrainHyper,
        seed: u64,
    ) -> Result<Self> {
        let expected = [
            (2 * r, HIDDEN[0]),
            (HIDDEN[0], HIDDEN[1]),
            (HIDDEN[1], 1),
        ];
        for (layer, (i, o)) in layers.iter().zip(expected) {
            if layer.inputs != i || layer.outputs != o {
                return Err(CoreError::Dimension {
                    expected: i * o,
                    got: layer.inputs * layer.outputs,
                });
            }
            if layer.weights.len() != i * o || layer.bias.len() != o {
                return Err(CoreError::Dimension {
                    expected: i * o + o,
                    got: layer.weights.len() + layer.bias.len(),
                });
            }
        }
        let model = Self {
            r,
            layers,
            hyper,
            seed,
        };
        if !model.is_finite() {
            return Err(CoreError::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn layers(&self) -> &[Dense; 3] {
        &self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    fn check(&self, user: &[f64], item: &[f64]) -> Result<()> {
        for v in [user, item] {
            if v.len() != self.r {
                return Err(CoreError::Dimension {
                    expected: self.r,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// Ranking score in `(0, 1)`.
    pub fn forward(&self, user: &[f64], item: &[f64]) -> Result<f64> {
        self.check(user, item)?;
        Ok(self.activations(user, item).score)
    }

    /// Exact gradient of [`forward`](Self::forward) with respect to the item
    /// aspect vector. The ReLU subgradient at zero is taken as zero.
    pub fn grad_item_aspects(&self, user: &[f64], item: &[f64]) -> Result<Vec<f64>> {
        self.check(user, item)?;
        let mut grad = vec![0.0; self.r];
        self.score_and_item_grad(user, item, &mut grad);
        Ok(grad)
    }

    pub(crate) fn activations(&self, user: &[f64], item: &[f64]) -> Activations {
        let [l1, l2, l3] = &self.layers;
        let mut input = Vec::with_capacity(2 * self.r);
        input.extend_from_slice(user);
        input.extend_from_slice(item);
        let mut h1 = vec![0.0; l1.outputs];
        l1.forward_into(&input, &mut h1);
        relu_in_place(&mut h1);
        let mut h2 = vec![0.0; l2.outputs];
        l2.forward_into(&h1, &mut h2);
        relu_in_place(&mut h2);
        let logit = l3.bias[0] + dot(l3.row(0), &h2);
        Activations {
            input,
            h1,
            h2,
            logit,
            score: logistic(logit),
        }
    }

    /// Backpropagates `d loss / d logit` through the network.
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// gradient with respect to the full input vector is returned.
    pub(crate) fn backward(
        &self,
        act: &Activations,
        d_logit: f64,
        grads: Option<&mut [Dense; 3]>,
    ) -> Vec<f64> {
        let [l1, l2, l3] = &self.layers;
        // d/dh2, masked by the ReLU derivative.
        let g2: Vec<f64> = l3
            .row(0)
            .iter()
            .zip(&act.h2)
            .map(|(w, &h)| if h > 0.0 { d_logit * w } else { 0.0 })
            .collect();
        let mut g1 = vec![0.0; l2.inputs];
        l2.backward_input(&g2, &mut g1);
        for (g, &h) in g1.iter_mut().zip(&act.h1) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let mut g_in = vec![0.0; l1.inputs];
        l1.backward_input(&g1, &mut g_in);

        if let Some([d1, d2, d3]) = grads {
            axpy(d_logit, &act.h2, &mut d3.weights);
            d3.bias[0] += d_logit;
            accumulate_outer(d2, &g2, &act.h1);
            accumulate_outer(d1, &g1, &act.input);
        }
        g_in
    }
}

fn accumulate_outer(layer: &mut Dense, grad_out: &[f64], input: &[f64]) {
    let n = layer.inputs;
    for (o, &g) in grad_out.iter().enumerate() {
        if g != 0.0 {
            axpy(g, input, &mut layer.weights[o * n..(o + 1) * n]);
            layer.bias[o] += g;
        }
    }
}

impl Scorer for RecommenderModel {
    fn aspects(&self) -> usize {
        self.r
    }

    fn score(&self, user: &[f64], item: &[f64]) -> f64 {
        self.activations(user, item).score
    }

    fn score_and_item_grad(&self, user: &[f64], item: &[f64], grad: &mut [f64]) -> f64 {
        let act = self.activations(user, item);
        let s = act.score;
        let g_in = self.backward(&act, s * (1.0 - s), None);
        grad.copy_from_slice(&g_in[self.r..]);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_scores_one_half() {
        let m = RecommenderModel::zeros(3);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0], &[4.0, 0.0, 1.5]).unwrap(), 0.5);
        let g = m.grad_item_aspects(&[1.0, 2.0, 3.0], &[4.0, 0.0, 1.5]).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = RecommenderModel::zeros(3);
        assert!(matches!(
            m.forward(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(CoreError::Dimension {
                expected: 3,
                got: 2
            })
        ));
        assert!(m.grad_item_aspects(&[1.0; 3], &[1.0; 4]).is_err());
    }

    #[test]
    fn score_stays_open_interval_for_extreme_logits() {
        let mut m = RecommenderModel::zeros(1);
        m.layers[2].bias[0] = 1000.0;
        let s = m.forward(&[0.0], &[0.0]).unwrap();
        assert!(s < 1.0 && s > 0.0);
        m.layers[2].bias[0] = -1000.0;
        let s = m.forward(&[0.0], &[0.0]).unwrap();
        assert!(s > 0.0);
    }

    #[test]
    fn gradient_has_length_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = RecommenderModel::init(7, &mut rng);
        assert_eq!(m.grad_item_aspects(&[1.0; 7], &[2.0; 7]).unwrap().len(), 7);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn from_layers_rejects_bad_shapes() {
        let m = RecommenderModel::zeros(2);
        let mut layers = m.layers.clone();
        layers[0] = Dense::zeros(3, HIDDEN[0]);
        assert!(RecommenderModel::from_layers(2, layers, TrainHyper::default(), 0).is_err());
    }
}
