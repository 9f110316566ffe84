//! Feed-forward destination-choice networks for non-linear and deep gravity.
//!
//! A network maps pair features to a scalar score; `q(j|i)` is the softmax
//! of scores over all candidates `j != i`. Training minimizes the per-origin
//! cross-entropy `-Σ_j (y_ij / T_i) ln q(j|i)` averaged over origins, with
//! plain mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_rows, FeatureSpace, ModelError, ModelKind};
use crate::geodata::{FlowMatrix, Tessellation};

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Dense layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    pub layers: Vec<Layer>,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl FeedForwardNet {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(input: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(input, hidden, seed, &mut rng)
    }

    fn init(input: usize, hidden: &[usize], seed: u64, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(input, hidden);
        net.seed = seed;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        net
    }

    /// Network with every parameter zero; scores every pair 0.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        FeedForwardNet {
            layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            leaky_slope: LEAKY_SLOPE,
            seed: 0,
        }
    }

    /// Layer widths from input to the scalar output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        w.extend(self.layers.last().map(|l| l.outputs));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidArtifact(m));
        if self.layers.is_empty() {
            return bad("network has no layers".into());
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad(format!("layer {k} has inconsistent shape"));
            }
            if k > 0 && self.layers[k - 1].outputs != l.inputs {
                return bad(format!("layer {k} input width does not match previous output"));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad(format!("layer {k} has non-finite parameters"));
            }
        }
        if self.layers.last().map(|l| l.outputs) != Some(1) {
            return bad("output layer must have width 1".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0) {
            return bad(format!("leaky slope {}", self.leaky_slope));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut it = params.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("parameter vector too short");
            }
        }
    }

    fn activate(&self, z: &mut [f64]) {
        for v in z {
            if *v < 0.0 {
                *v *= self.leaky_slope;
            }
        }
    }

    /// Runs the network, keeping every layer's output in `trace`.
    fn forward_trace(&self, x: &[f64], trace: &mut Vec<Vec<f64>>) -> f64 {
        trace.resize_with(self.layers.len() + 1, Vec::new);
        trace[0].clear();
        trace[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.split_at_mut(k + 1);
            layer.forward(&head[k], &mut tail[0]);
            if k < last {
                self.activate(&mut tail[0]);
            }
        }
        trace[self.layers.len()][0]
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let mut trace = Vec::new();
        self.forward_trace(x, &mut trace)
    }

    /// Accumulates `d_score * ∂score/∂θ` into `grad`.
    fn backward(&self, trace: &[Vec<f64>], d_score: f64, grad: &mut FeedForwardNet, delta: &mut Vec<f64>, next: &mut Vec<f64>) {
        delta.clear();
        delta.push(d_score);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let input = &trace[k];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, x) in g.weights[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k == 0 {
                break;
            }
            next.clear();
            next.resize(layer.inputs, 0.0);
            for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(delta.iter()) {
                for (n, w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            for (n, a) in next.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *n *= self.leaky_slope;
                }
            }
            std::mem::swap(delta, next);
        }
    }
}

/// A trained neural flow model: feature map plus network.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub kind: ModelKind,
    pub space: FeatureSpace,
    pub net: FeedForwardNet,
}

impl NeuralModel {
    fn check(&self, tess: &Tessellation) -> Result<(), ModelError> {
        self.space.check(tess)?;
        if self.net.input_dim() != self.space.dim() {
            return Err(ModelError::FeatureMismatch {
                expected: self.net.input_dim(),
                found: self.space.dim(),
            });
        }
        Ok(())
    }

    /// Softmax destination probabilities for origin `i` over `j != i`.
    pub fn probabilities(&self, tess: &Tessellation, i: usize) -> Result<Vec<(usize, f64)>, ModelError> {
        let mut trace = Vec::new();
        let mut scores = Vec::with_capacity(tess.len());
        for j in (0..tess.len()).filter(|&j| j != i) {
            let x = self.space.features(tess, i, j)?;
            scores.push((j, self.net.forward_trace(&x, &mut trace)));
        }
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        for s in &mut scores {
            s.1 = (s.1 - max).exp();
        }
        if !super::normalize(&mut scores) {
            return Err(ModelError::ZeroProbability(tess.zone(i).id.clone()));
        }
        Ok(scores)
    }
}

/// Generates `T_i * softmax_j(score(i, j))` for every origin with positive outflow.
pub fn generate_net(model: &NeuralModel, tess: &Tessellation, outflows: &[f64]) -> Result<FlowMatrix, ModelError> {
    model.check(tess)?;
    generate_rows(tess, outflows, |i| model.probabilities(tess, i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Origins per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![64, 32],
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Precomputed training data of one origin.
struct OriginBatch {
    /// standardized features, one row per candidate
    features: Vec<f64>,
    /// `y_ij / T_i` per candidate
    target: Vec<f64>,
}

fn origin_data(real: &FlowMatrix, tess: &Tessellation, space: &FeatureSpace, i: usize) -> Result<OriginBatch, ModelError> {
    let total: f64 = real.row(i).filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
    let mut features = Vec::with_capacity((tess.len() - 1) * space.dim());
    let mut target = Vec::with_capacity(tess.len() - 1);
    for j in (0..tess.len()).filter(|&j| j != i) {
        features.extend(space.features(tess, i, j)?);
        target.push(if total > 0.0 { real.get(i, j) / total } else { 0.0 });
    }
    Ok(OriginBatch { features, target })
}

/// Adds `scale * ∂loss_i/∂θ` into `grad` (when given) and returns `loss_i`.
fn origin_loss(net: &FeedForwardNet, data: &OriginBatch, dim: usize, grad: Option<(&mut FeedForwardNet, f64)>) -> f64 {
    let n = data.target.len();
    let mut traces: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    let scores: Vec<f64> = data
        .features
        .chunks_exact(dim)
        .zip(traces.iter_mut())
        .map(|(x, t)| net.forward_trace(x, t))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let lse = max + z.ln();
    let loss: f64 = -scores
        .iter()
        .zip(&data.target)
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, w)| w * (s - lse))
        .sum::<f64>();
    if let Some((grad, scale)) = grad {
        let (mut delta, mut next) = (Vec::new(), Vec::new());
        for ((s, w), trace) in scores.iter().zip(&data.target).zip(&traces) {
            let q = (s - lse).exp();
            net.backward(trace, scale * (q - w), grad, &mut delta, &mut next);
        }
    }
    loss
}

/// Mean cross-entropy over `origins` and its gradient with respect to every network parameter.
pub fn loss_and_gradient(
    model: &NeuralModel,
    real: &FlowMatrix,
    tess: &Tessellation,
    origins: &[usize],
) -> Result<(f64, FeedForwardNet), ModelError> {
    model.check(tess)?;
    let mut grad = FeedForwardNet::zeros(model.net.input_dim(), &hidden_widths(&model.net));
    let scale = 1.0 / origins.len() as f64;
    let mut loss = 0.0;
    for &i in origins {
        let data = origin_data(real, tess, &model.space, i)?;
        loss += scale * origin_loss(&model.net, &data, model.space.dim(), Some((&mut grad, scale)));
    }
    Ok((loss, grad))
}

fn hidden_widths(net: &FeedForwardNet) -> Vec<usize> {
    let w = net.widths();
    w[1..w.len() - 1].to_vec()
}

/// Result of training: the model plus its final full-batch training loss.
#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub model: NeuralModel,
    pub final_loss: f64,
}

/// Trains on every origin with at least one positive flow to another zone.
pub fn train_net(real: &FlowMatrix, tess: &Tessellation, kind: ModelKind, cfg: &TrainConfig) -> Result<TrainedNet, ModelError> {
    let origins: Vec<usize> = (0..tess.len())
        .filter(|&i| real.row(i).any(|(j, _)| j != i))
        .collect();
    train_net_on(real, tess, kind, cfg, &origins)
}

/// Trains on the given origins only. Deterministic in `(cfg, real, tess, origins)`.
pub fn train_net_on(
    real: &FlowMatrix,
    tess: &Tessellation,
    kind: ModelKind,
    cfg: &TrainConfig,
    origins: &[usize],
) -> Result<TrainedNet, ModelError> {
    if !kind.is_neural() {
        return Err(ModelError::NotNeural { kind });
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) || cfg.hidden.contains(&0) {
        return Err(ModelError::InvalidParams(format!(
            "batch size {}, learning rate {}, hidden {:?}",
            cfg.batch_size, cfg.learning_rate, cfg.hidden
        )));
    }
    if tess.len() < 2 {
        return Err(ModelError::EmptyTrainingSet);
    }
    let origins: Vec<usize> = origins
        .iter()
        .copied()
        .filter(|&i| real.row(i).any(|(j, _)| j != i))
        .collect();
    if origins.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let space = FeatureSpace::fit(kind, tess, &origins)?;
    let dim = space.dim();
    let data: Vec<OriginBatch> = origins
        .iter()
        .map(|&i| origin_data(real, tess, &space, i))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = FeedForwardNet::init(dim, &cfg.hidden, cfg.seed, &mut rng);
    let mut grad = FeedForwardNet::zeros(dim, &cfg.hidden);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            for l in &mut grad.layers {
                l.weights.fill(0.0);
                l.bias.fill(0.0);
            }
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &k in chunk {
                loss += origin_loss(&net, &data[k], dim, Some((&mut grad, scale)));
            }
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch });
            }
            for (l, g) in net.layers.iter_mut().zip(&grad.layers) {
                for (w, dw) in l.weights.iter_mut().zip(&g.weights) {
                    *w -= cfg.learning_rate * dw;
                }
                for (b, db) in l.bias.iter_mut().zip(&g.bias) {
                    *b -= cfg.learning_rate * db;
                }
            }
        }
    }
    let final_loss = data.iter().map(|d| origin_loss(&net, d, dim, None)).sum::<f64>() / data.len() as f64;
    if !final_loss.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            epoch: cfg.epochs,
            batch: 0,
        });
    }
    Ok(TrainedNet {
        model: NeuralModel { kind, space, net },
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{SviScores, Zone};

    fn small_city() -> (Tessellation, FlowMatrix) {
        let zones: Vec<Zone> = (0..5)
            .map(|k| Zone {
                id: format!("z{k}"),
                lon: 0.013 * k as f64,
                lat: 0.009 * ((3 * k) % 5) as f64,
                population: 20.0 + 15.0 * k as f64,
                svi: SviScores([0.5; 5]),
                poi: vec![k as f64 + 1.0, 10.0 - k as f64],
            })
            .collect();
        let tess = Tessellation::new(zones, vec!["a".into(), "b".into()]).unwrap();
        let flows = FlowMatrix::from_entries(
            5,
            (0..5).flat_map(|i| (0..5).filter(move |&j| j != i).map(move |j| (i, j, 1.0 + ((i * 7 + j * 3) % 5) as f64))),
        )
        .unwrap();
        (tess, flows)
    }

    #[test]
    fn zero_net_splits_uniformly() {
        let (tess, _) = small_city();
        let space = FeatureSpace::fit(ModelKind::NonLinearGravity, &tess, &[0, 1, 2, 3, 4]).unwrap();
        let model = NeuralModel {
            kind: ModelKind::NonLinearGravity,
            space,
            net: FeedForwardNet::zeros(3, &[4, 2]),
        };
        let flows = generate_net(&model, &tess, &[8.0, 0.0, 0.0, 0.0, 4.0]).unwrap();
        for j in 1..5 {
            assert_eq!(flows.get(0, j), 2.0);
        }
        for j in 0..4 {
            assert_eq!(flows.get(4, j), 1.0);
        }
    }

    #[test]
    fn identical_seeds_identical_parameters() {
        let (tess, flows) = small_city();
        let cfg = TrainConfig {
            hidden: vec![8, 4],
            epochs: 20,
            batch_size: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_net(&flows, &tess, ModelKind::DeepGravity, &cfg).unwrap();
        let b = train_net(&flows, &tess, ModelKind::DeepGravity, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
        let c = train_net(&flows, &tess, ModelKind::DeepGravity, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.model.net, c.model.net);
    }

    #[test]
    fn training_reduces_loss() {
        let (tess, flows) = small_city();
        let cfg = TrainConfig {
            hidden: vec![8],
            epochs: 0,
            batch_size: 5,
            seed: 5,
            ..TrainConfig::default()
        };
        let before = train_net(&flows, &tess, ModelKind::NonLinearGravity, &cfg).unwrap().final_loss;
        let after = train_net(&flows, &tess, ModelKind::NonLinearGravity, &TrainConfig { epochs: 300, ..cfg })
            .unwrap()
            .final_loss;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (tess, flows) = small_city();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_net(&FlowMatrix::empty(5), &tess, ModelKind::NonLinearGravity, &cfg),
            Err(ModelError::EmptyTrainingSet)
        ));
        assert!(matches!(
            train_net(&flows, &tess, ModelKind::Radiation, &cfg),
            Err(ModelError::NotNeural { .. })
        ));
        let diverging = TrainConfig {
            learning_rate: 1e300,
            epochs: 3,
            hidden: vec![4],
            ..cfg
        };
        assert!(matches!(
            train_net(&flows, &tess, ModelKind::NonLinearGravity, &diverging),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (tess, _) = small_city();
        let space = FeatureSpace::fit(ModelKind::DeepGravity, &tess, &[0, 1]).unwrap();
        let model = NeuralModel {
            kind: ModelKind::DeepGravity,
            space,
            net: FeedForwardNet::zeros(3, &[4]),
        };
        assert!(matches!(
            generate_net(&model, &tess, &[1.0; 5]),
            Err(ModelError::FeatureMismatch { .. })
        ));
    }
}
