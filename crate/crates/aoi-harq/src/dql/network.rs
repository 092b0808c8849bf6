//! Fully-connected Q-network with rectifier hidden layers, plus its Adam
//! optimizer and the binary checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::TrainError;

#[derive(Debug, Clone)]
pub struct Linear {
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        // Xavier-uniform initialization.
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            weights,
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn forward(&self, input: &[f64], output: &mut Vec<f64>) {
        output.clear();
        for row in 0..self.out_dim {
            let w = &self.weights[row * self.in_dim..(row + 1) * self.in_dim];
            let mut acc = self.bias[row];
            for (wi, xi) in w.iter().zip(input) {
                acc += wi * xi;
            }
            output.push(acc);
        }
    }
}

/// Multi-layer perceptron mapping state features to one Q-value per action
/// code. Hidden activations are `max(0, x)`; the output layer is linear.
#[derive(Debug, Clone)]
pub struct QNetwork {
    pub layers: Vec<Linear>,
}

impl QNetwork {
    /// `dims` lists every layer width, input first, action codes last.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().unwrap().in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Deterministic forward pass.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&current, &mut next);
            if i + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        current
    }

    /// Forward pass keeping every layer's post-activation output for
    /// backpropagation. `activations[0]` is the input itself.
    fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(activations.last().unwrap(), &mut out);
            if i + 1 < self.layers.len() {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            activations.push(out);
        }
        activations
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn get_param(&self, mut index: usize) -> f64 {
        for layer in &self.layers {
            if index < layer.weights.len() {
                return layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                layer.weights[index] = value;
                return;
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                layer.bias[index] = value;
                return;
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Per-parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn get_flat(&self, mut index: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.bias) {
            if index < w.len() {
                return w[index];
            }
            index -= w.len();
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        panic!("gradient index out of range");
    }
}

/// A transition as stored by the replay buffer.
#[derive(Debug, Clone)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action_code: usize,
    pub reward: f64,
    pub next_features: Vec<f64>,
    /// Feasibility of each action code in the next state.
    pub next_mask: Vec<bool>,
}

/// Mean squared TD error over a batch and its gradient with respect to the
/// online network:
///
/// ```text
/// y_i = r_i + gamma * max_{a feasible} Q_target(s'_i, a)
/// loss = (1/B) * sum_i (Q(s_i, a_i) - y_i)^2
/// ```
pub fn td_loss_and_grads(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for tr in batch {
        let target_q = target.forward(&tr.next_features);
        let mut best_next = f64::NEG_INFINITY;
        for (code, &feasible) in tr.next_mask.iter().enumerate() {
            if feasible && target_q[code] > best_next {
                best_next = target_q[code];
            }
        }
        debug_assert!(best_next.is_finite(), "next mask may not be empty");
        let y = tr.reward + gamma * best_next;

        let activations = net.forward_trace(&tr.features);
        let q = activations.last().unwrap()[tr.action_code];
        let error = q - y;
        loss += inv_b * error * error;

        // Seed the backward pass on the chosen output unit only.
        let mut delta = vec![0.0; net.output_dim()];
        delta[tr.action_code] = 2.0 * inv_b * error;
        backward(net, &activations, delta, &mut grads);
    }
    (loss, grads)
}

/// Accumulates gradients for one sample given the output-layer deltas.
fn backward(net: &QNetwork, activations: &[Vec<f64>], mut delta: Vec<f64>, grads: &mut Gradients) {
    for layer_index in (0..net.layers.len()).rev() {
        let layer = &net.layers[layer_index];
        let input = &activations[layer_index];
        let gw = &mut grads.weights[layer_index];
        let gb = &mut grads.bias[layer_index];
        for row in 0..layer.out_dim {
            let d = delta[row];
            if d != 0.0 {
                let base = row * layer.in_dim;
                for (col, x) in input.iter().enumerate() {
                    gw[base + col] += d * x;
                }
                gb[row] += d;
            }
        }
        if layer_index == 0 {
            break;
        }
        // Propagate through the weights, then through the rectifier of the
        // previous layer (its output was zero-clipped).
        let mut prev_delta = vec![0.0; layer.in_dim];
        for row in 0..layer.out_dim {
            let d = delta[row];
            if d != 0.0 {
                let base = row * layer.in_dim;
                for (col, pd) in prev_delta.iter_mut().enumerate() {
                    *pd += d * layer.weights[base + col];
                }
            }
        }
        for (pd, a) in prev_delta.iter_mut().zip(&activations[layer_index]) {
            if *a <= 0.0 {
                *pd = 0.0;
            }
        }
        delta = prev_delta;
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(net: &QNetwork, learning_rate: f64) -> Self {
        let shapes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn apply(&mut self, net: &mut QNetwork, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut slot = 0;
        for (layer_index, layer) in net.layers.iter_mut().enumerate() {
            for (params, grad) in [
                (&mut layer.weights, &grads.weights[layer_index]),
                (&mut layer.bias, &grads.bias[layer_index]),
            ] {
                let m = &mut self.m[slot];
                let v = &mut self.v[slot];
                slot += 1;
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"AOIQNET1";

/// Writes the checkpoint: magic, layer count, per-layer dims, the feature
/// scale used for the virtual queue, then row-major weights and biases as
/// little-endian 64-bit floats.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &QNetwork,
    q_scale: f64,
) -> Result<(), TrainError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for layer in &net.layers {
        file.write_all(&(layer.in_dim as u32).to_le_bytes())?;
        file.write_all(&(layer.out_dim as u32).to_le_bytes())?;
    }
    file.write_all(&q_scale.to_le_bytes())?;
    for layer in &net.layers {
        for w in &layer.weights {
            file.write_all(&w.to_le_bytes())?;
        }
        for b in &layer.bias {
            file.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(QNetwork, f64), TrainError> {
    let path = path.as_ref();
    let fail = |reason: &str| TrainError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(fail("bad magic; not a qnet checkpoint"));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    let layer_count = u32::from_le_bytes(u32buf) as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(fail("implausible layer count"));
    }
    let mut dims = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        file.read_exact(&mut u32buf)?;
        let in_dim = u32::from_le_bytes(u32buf) as usize;
        file.read_exact(&mut u32buf)?;
        let out_dim = u32::from_le_bytes(u32buf) as usize;
        dims.push((in_dim, out_dim));
    }
    let mut f64buf = [0u8; 8];
    file.read_exact(&mut f64buf)?;
    let q_scale = f64::from_le_bytes(f64buf);
    let mut layers = Vec::with_capacity(layer_count);
    for (in_dim, out_dim) in dims {
        let mut weights = vec![0.0; in_dim * out_dim];
        for w in &mut weights {
            file.read_exact(&mut f64buf)?;
            *w = f64::from_le_bytes(f64buf);
        }
        let mut bias = vec![0.0; out_dim];
        for b in &mut bias {
            file.read_exact(&mut f64buf)?;
            *b = f64::from_le_bytes(f64buf);
        }
        layers.push(Linear {
            weights,
            bias,
            in_dim,
            out_dim,
        });
    }
    let net = QNetwork { layers };
    if !net.all_finite() {
        return Err(fail("checkpoint contains non-finite parameters"));
    }
    Ok((net, q_scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::new(&[4, 8, 3], &mut rng);
        let x = vec![0.3, -0.2, 0.9, 0.0];
        assert_eq!(net.forward(&x), net.forward(&x));
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = QNetwork::new(&[5, 16, 16, 7], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.qnet");
        save_checkpoint(&path, &net, 72.0).unwrap();
        let (loaded, q_scale) = load_checkpoint(&path).unwrap();
        assert_eq!(q_scale, 72.0);
        let x = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(net.forward(&x), loaded.forward(&x));
        for (a, b) in net.layers.iter().zip(&loaded.layers) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_net");
        std::fs::write(&path, b"definitely not").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(TrainError::Checkpoint { .. }) | Err(TrainError::Io(_))
        ));
    }

    #[test]
    fn td_gradient_matches_finite_differences() {
        // Two-layer toy network, central differences at 1e-4 relative error.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = QNetwork::new(&[5, 8, 3], &mut rng);
        let target = QNetwork::new(&[5, 8, 3], &mut rng);
        let gamma = 0.95;
        let batch_data: Vec<Transition> = (0..6)
            .map(|i| Transition {
                features: (0..5).map(|j| 0.1 * (i as f64 + 1.0) + 0.07 * j as f64).collect(),
                action_code: i % 3,
                reward: -0.5 * i as f64,
                next_features: (0..5).map(|j| 0.05 * (i as f64) + 0.11 * j as f64).collect(),
                next_mask: vec![true, i % 2 == 0, true],
            })
            .collect();
        let batch: Vec<&Transition> = batch_data.iter().collect();
        let (_, grads) = td_loss_and_grads(&net, &target, &batch, gamma);

        let h = 1e-6;
        let mut checked = 0;
        for index in 0..net.param_count() {
            let mut plus = net.clone();
            plus.set_param(index, net.get_param(index) + h);
            let (lp, _) = td_loss_and_grads(&plus, &target, &batch, gamma);
            let mut minus = net.clone();
            minus.set_param(index, net.get_param(index) - h);
            let (lm, _) = td_loss_and_grads(&minus, &target, &batch, gamma);
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.get_flat(index);
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-7 {
                continue; // both effectively zero
            }
            assert!(
                (analytic - numeric).abs() / scale < 1e-4,
                "param {index}: analytic {analytic}, numeric {numeric}"
            );
            checked += 1;
        }
        assert!(checked > 20, "too few informative parameters checked");
    }
}
