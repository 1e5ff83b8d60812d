use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

/// Fully connected layer, `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: DMatrix::zeros(outputs, inputs),
            b: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

/// Q-network: ReLU hidden layers, linear output with one head per action.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer outputs of a batched forward pass; column `j` belongs to sample `j`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: DMatrix<f64>,
    /// Post-activation output of every layer; the last entry holds the Q-values.
    pub outputs: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn q_values(&self) -> &DMatrix<f64> {
        self.outputs.last().expect("network has at least one layer")
    }
}

/// Row-major snapshot of one layer, the checkpoint representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Mlp {
    /// Uniform fan-in initialization, `±√(1/fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (1.0 / w[0] as f64).sqrt();
                let mut draw = || rng.random_range(-bound..=bound);
                let weights = DMatrix::from_fn(w[1], w[0], |_, _| draw());
                let bias = DVector::from_fn(w[1], |_, _| draw());
                Dense { w: weights, b: bias }
            })
            .collect();
        Self { layers }
    }

    /// Same shapes, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|p| p.is_finite()))
    }

    /// All parameters in declaration order: per layer, weights row-major then bias.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.transpose().iter().copied().chain(l.b.iter().copied()).collect::<Vec<_>>())
    }

    /// Applies `f(self_param, other_param)` elementwise; shapes must match.
    pub fn zip_apply(&mut self, other: &Mlp, mut f: impl FnMut(&mut f64, f64)) -> Result<(), RlError> {
        if self.sizes() != other.sizes() {
            return Err(RlError::ShapeMismatch {
                expected: self.sizes(),
                got: other.sizes(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.iter_mut().zip(b.w.iter()).for_each(|(x, y)| f(x, *y));
            a.b.iter_mut().zip(b.b.iter()).for_each(|(x, y)| f(x, *y));
        }
        Ok(())
    }

    fn check_input(&self, dim: usize) -> Result<(), RlError> {
        if dim != self.input_dim() {
            return Err(RlError::DimensionMismatch {
                expected: self.input_dim(),
                got: dim,
            });
        }
        Ok(())
    }

    /// Q-values for a single observation.
    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        self.check_input(obs.len())?;
        let mut x = DVector::from_column_slice(obs);
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            x = &l.w * x + &l.b;
            if k < last {
                x.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(x.as_slice().to_vec())
    }

    /// Stacks observations as columns.
    pub fn batch_matrix<'a>(&self, obs: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<DMatrix<f64>, RlError> {
        let n = obs.len();
        let dim = self.input_dim();
        let mut data = Vec::with_capacity(n * dim);
        for o in obs {
            self.check_input(o.len())?;
            data.extend_from_slice(o);
        }
        Ok(DMatrix::from_vec(dim, n, data))
    }

    pub fn forward_batch(&self, input: DMatrix<f64>) -> Result<ForwardCache, RlError> {
        self.check_input(input.nrows())?;
        let last = self.layers.len() - 1;
        let mut outputs: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let prev = if k == 0 { &input } else { &outputs[k - 1] };
            let mut y = &l.w * prev;
            for mut col in y.column_iter_mut() {
                col += &l.b;
            }
            if k < last {
                y.apply(|v| *v = v.max(0.0));
            }
            outputs.push(y);
        }
        Ok(ForwardCache { input, outputs })
    }

    /// Mean squared TD error `(1/|B|) Σ (Q(s_j, a_j) − t_j)²` and its gradient.
    /// Only the chosen action's head carries error.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Mlp), RlError> {
        let n = cache.input.ncols();
        if n == 0 {
            return Err(RlError::EmptyBatch);
        }
        if actions.len() != n || targets.len() != n {
            return Err(RlError::DimensionMismatch {
                expected: n,
                got: actions.len().min(targets.len()),
            });
        }
        let q = cache.q_values();
        let mut delta = DMatrix::zeros(q.nrows(), n);
        let mut loss = 0.0;
        for j in 0..n {
            let a = actions[j];
            if a >= q.nrows() {
                return Err(RlError::InvalidAction(a));
            }
            let r = q[(a, j)] - targets[j];
            loss += r * r;
            delta[(a, j)] = 2.0 * r / n as f64;
        }
        loss /= n as f64;

        let mut grad = self.zeros_like();
        for k in (0..self.layers.len()).rev() {
            let prev = if k == 0 { &cache.input } else { &cache.outputs[k - 1] };
            grad.layers[k].w = &delta * prev.transpose();
            grad.layers[k].b = delta.column_sum();
            if k > 0 {
                let mut back = self.layers[k].w.transpose() * &delta;
                back.zip_apply(prev, |d, h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok((loss, grad))
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers
            .iter()
            .map(|l| LayerRecord {
                inputs: l.inputs(),
                outputs: l.outputs(),
                weights: l.w.transpose().as_slice().to_vec(),
                bias: l.b.as_slice().to_vec(),
            })
            .collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self, RlError> {
        if records.is_empty() {
            return Err(RlError::Checkpoint("network has no layers".into()));
        }
        let mut layers = Vec::with_capacity(records.len());
        for (k, r) in records.iter().enumerate() {
            if r.weights.len() != r.inputs * r.outputs || r.bias.len() != r.outputs {
                return Err(RlError::Checkpoint(format!("layer {k} has inconsistent shapes")));
            }
            if k > 0 && records[k - 1].outputs != r.inputs {
                return Err(RlError::Checkpoint(format!("layer {k} does not chain with layer {}", k - 1)));
            }
            if r.weights.iter().chain(&r.bias).any(|v| !v.is_finite()) {
                return Err(RlError::Checkpoint(format!("layer {k} holds non-finite parameters")));
            }
            layers.push(Dense {
                w: DMatrix::from_row_slice(r.outputs, r.inputs, &r.weights),
                b: DVector::from_column_slice(&r.bias),
            });
        }
        Ok(Self { layers })
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Mlp,
    pub v: Mlp,
    pub t: u64,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &Mlp) -> Result<(), RlError> {
        let (b1, b2) = (self.beta1, self.beta2);
        self.t += 1;
        self.m.zip_apply(grad, |m, g| *m = b1 * *m + (1.0 - b1) * g)?;
        self.v.zip_apply(grad, |v, g| *v = b2 * *v + (1.0 - b2) * g * g)?;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.learning_rate;
        let eps = self.epsilon;
        let mut update = self.m.clone();
        update.zip_apply(&self.v, |m, v| *m = step * (*m / c1) / ((v / c2).sqrt() + eps))?;
        net.zip_apply(&update, |p, u| *p -= u)
    }
}
