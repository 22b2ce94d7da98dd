//! Dueling Q-network with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Result, SimError};

/// Fully connected layer, `y = x W + b` with `W` stored as `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: Array2::zeros((inputs, outputs)), b: Array1::zeros(outputs) }
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-bound..=bound));
        let b = Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..=bound));
        Self { w, b }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

/// Shared ReLU trunk followed by a scalar value head and an advantage head.
///
/// `layers` holds the trunk layers in order, then the value head, then the
/// advantage head.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingQNet {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input to each trunk layer; the last entry is the trunk output.
    activations: Vec<Array2<f64>>,
    pub value: Array2<f64>,
    pub advantage: Array2<f64>,
    pub q: Array2<f64>,
}

impl DuelingQNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], actions: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 2);
        let mut fan_in = state_dim;
        for &h in hidden {
            layers.push(Dense::init(fan_in, h, rng));
            fan_in = h;
        }
        layers.push(Dense::init(fan_in, 1, rng));
        layers.push(Dense::init(fan_in, actions, rng));
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(SimError::Checkpoint("network needs value and advantage heads".into()));
        }
        let net = Self { layers };
        let trunk = net.trunk();
        for pair in trunk.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(SimError::Shape { expected: pair[0].outputs(), got: pair[1].inputs() });
            }
        }
        let width = trunk.last().map_or(net.value_head().inputs(), Dense::outputs);
        if net.value_head().outputs() != 1
            || net.value_head().inputs() != width
            || net.advantage_head().inputs() != width
        {
            return Err(SimError::Shape { expected: width, got: net.advantage_head().inputs() });
        }
        Ok(net)
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.layers[..self.layers.len() - 2]
    }

    pub fn value_head(&self) -> &Dense {
        &self.layers[self.layers.len() - 2]
    }

    pub fn advantage_head(&self) -> &Dense {
        &self.layers[self.layers.len() - 1]
    }

    pub fn state_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn actions(&self) -> usize {
        self.advantage_head().outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect() }
    }

    pub fn forward_batch(&self, states: &ArrayView2<f64>) -> Result<ForwardCache> {
        if states.ncols() != self.state_dim() {
            return Err(SimError::Shape { expected: self.state_dim(), got: states.ncols() });
        }
        let mut activations = Vec::with_capacity(self.trunk().len() + 1);
        activations.push(states.to_owned());
        for layer in self.trunk() {
            let mut z = layer.forward(&activations.last().expect("non-empty").view());
            z.mapv_inplace(|v| v.max(0.0));
            activations.push(z);
        }
        let h = activations.last().expect("non-empty").view();
        let value = self.value_head().forward(&h);
        let advantage = self.advantage_head().forward(&h);
        let q = combine_dueling(&value, &advantage);
        Ok(ForwardCache { activations, value, advantage, q })
    }

    /// Q-values for a single state.
    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, state.len()), state)
            .map_err(|_| SimError::Shape { expected: self.state_dim(), got: state.len() })?;
        Ok(self.forward_batch(&view)?.q.row(0).to_vec())
    }

    /// Gradient of the summed upstream signal `dq` (batch x actions) with
    /// respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dq: &Array2<f64>) -> DuelingQNet {
        let actions = self.actions() as f64;
        // Q_a = V + A_a - mean(A): dV = sum_a dQ_a, dA_j = dQ_j - mean_a dQ_a
        let row_sum = dq.sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_value = row_sum.clone();
        let d_adv = dq - &(row_sum / actions);

        let mut grads = self.zeros_like();
        let n = self.layers.len();
        let h = cache.activations.last().expect("non-empty");
        grads.layers[n - 2] = Dense { w: h.t().dot(&d_value), b: d_value.sum_axis(Axis(0)) };
        grads.layers[n - 1] = Dense { w: h.t().dot(&d_adv), b: d_adv.sum_axis(Axis(0)) };

        let mut dh = d_value.dot(&self.value_head().w.t()) + d_adv.dot(&self.advantage_head().w.t());
        for i in (0..self.trunk().len()).rev() {
            // ReLU gate from the layer output
            let out = &cache.activations[i + 1];
            ndarray::Zip::from(&mut dh).and(out).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
            let input = &cache.activations[i];
            grads.layers[i] = Dense { w: input.t().dot(&dh), b: dh.sum_axis(Axis(0)) };
            if i > 0 {
                dh = dh.dot(&self.layers[i].w.t());
            }
        }
        grads
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::params_mut)
    }
}

fn combine_dueling(value: &Array2<f64>, advantage: &Array2<f64>) -> Array2<f64> {
    let mean = advantage.mean_axis(Axis(1)).expect("at least one action").insert_axis(Axis(1));
    advantage - &mean + value
}

/// `V + (A - mean A)` for a single state.
pub fn dueling_q(value: f64, advantage: &[f64]) -> Vec<f64> {
    let mean = advantage.iter().sum::<f64>() / advantage.len() as f64;
    advantage.iter().map(|a| value + (a - mean)).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dueling_hand_cases() {
        assert_eq!(dueling_q(1.0, &[2.0, 0.0]), vec![2.0, 0.0]);
        assert_eq!(dueling_q(0.7, &[3.0, 3.0, 3.0]), vec![0.7; 3]);
        let base = dueling_q(0.3, &[1.0, -2.0, 0.5]);
        let shifted = dueling_q(0.3, &[11.0, 8.0, 10.5]);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[5.0, 5.0, 1.0]), 0);
        assert_eq!(argmax(&[1.0, 5.0, 5.0]), 1);
        assert_eq!(argmax(&[-1.0]), 0);
    }

    #[test]
    fn forward_matches_manual_dueling_and_centres_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DuelingQNet::new(4, &[8, 8], 4, &mut rng);
        let states = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0));
        let cache = net.forward_batch(&states.view()).unwrap();
        for b in 0..6 {
            let adv: Vec<f64> = cache.advantage.row(b).to_vec();
            let q = dueling_q(cache.value[[b, 0]], &adv);
            let centred: f64 = cache.q.row(b).iter().map(|x| x - cache.value[[b, 0]]).sum();
            assert!(centred.abs() < 1e-12);
            for (a, qa) in q.iter().enumerate() {
                assert!((qa - cache.q[[b, a]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DuelingQNet::new(4, &[8], 3, &mut rng);
        assert!(matches!(net.q_values(&[0.0; 3]), Err(SimError::Shape { .. })));
        assert_eq!(net.q_values(&[0.0; 4]).unwrap().len(), 3);
        let bad = vec![Dense::zeros(4, 8), Dense::zeros(7, 1), Dense::zeros(8, 3)];
        assert!(DuelingQNet::from_layers(bad).is_err());
    }

    #[test]
    fn last_layer_gradient_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DuelingQNet::new(3, &[5], 3, &mut rng);
        let s = Array2::from_shape_vec((1, 3), vec![0.2, -0.4, 0.9]).unwrap();
        let cache = net.forward_batch(&s.view()).unwrap();
        let (a, y) = (1usize, 0.25);
        let err = cache.q[[0, a]] - y;
        let mut dq = Array2::zeros((1, 3));
        dq[[0, a]] = err;
        let grads = net.backward(&cache, &dq);
        let h = cache.activations.last().unwrap();
        // value head: dL/dW_v = err * h, dL/db_v = err
        let gv = &grads.layers[1];
        for j in 0..5 {
            assert!((gv.w[[j, 0]] - err * h[[0, j]]).abs() < 1e-14);
        }
        assert!((gv.b[0] - err).abs() < 1e-14);
        // advantage head: dL/dA_k = err * (1[k = a] - 1/3)
        let ga = &grads.layers[2];
        for k in 0..3 {
            let coeff = if k == a { 1.0 - 1.0 / 3.0 } else { -1.0 / 3.0 };
            assert!((ga.b[k] - err * coeff).abs() < 1e-14);
            for j in 0..5 {
                assert!((ga.w[[j, k]] - err * coeff * h[[0, j]]).abs() < 1e-14);
            }
        }
    }
}
