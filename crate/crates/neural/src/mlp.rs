use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{relu, sigmoid, tanh};
use crate::linalg::{matmul, matmul_at, matmul_bt, matvec_acc, matvec_t_acc, outer_acc};
use crate::{check_len, glorot_bound, NeuralError, ParamSet, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    /// Probability heads.
    Sigmoid,
    /// Unbounded regression outputs such as Q-values.
    Linear,
}

/// Fully connected layer, `w` is `out_dim × in_dim` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(in_dim, out_dim);
        let bound = glorot_bound(in_dim, out_dim);
        for w in &mut d.w {
            *w = rng.gen_range(-bound..bound);
        }
        d
    }
}

/// Multi-layer perceptron. `sizes` lists every width from input to output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<Dense>,
    pub hidden: HiddenActivation,
    pub output: OutputActivation,
}

/// Inputs seen by each layer plus the output logits of a batched pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub batch: usize,
    layer_inputs: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize], hidden: HiddenActivation, output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NeuralError::Domain(format!(
                "mlp needs at least input and output widths, all positive; got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            hidden,
            output,
        })
    }

    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, hidden, output)?;
        for (layer, w) in mlp.layers.iter_mut().zip(sizes.windows(2)) {
            *layer = Dense::random(w[0], w[1], rng);
        }
        Ok(mlp)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        check_len("mlp layer count", self.sizes.len().saturating_sub(1), self.layers.len())?;
        for (layer, w) in self.layers.iter().zip(self.sizes.windows(2)) {
            if layer.in_dim != w[0] || layer.out_dim != w[1] {
                return Err(NeuralError::Domain(format!(
                    "mlp layer {}x{} does not chain with sizes {:?}",
                    layer.in_dim, layer.out_dim, self.sizes
                )));
            }
            check_len("dense weights", w[0] * w[1], layer.w.len())?;
            check_len("dense bias", w[1], layer.b.len())?;
        }
        if !self.all_finite() {
            return Err(NeuralError::Domain("mlp holds non-finite weights".into()));
        }
        Ok(())
    }

    fn activate_hidden(&self, xs: &mut [f64]) {
        match self.hidden {
            HiddenActivation::Relu => xs.iter_mut().for_each(|x| *x = relu(*x)),
            HiddenActivation::Tanh => xs.iter_mut().for_each(|x| *x = tanh(*x)),
        }
    }

    pub fn apply_output(&self, logits: &mut [f64]) {
        if self.output == OutputActivation::Sigmoid {
            logits.iter_mut().for_each(|x| *x = sigmoid(*x));
        }
    }

    /// Single-sample forward pass including the output activation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("mlp input", self.input_dim(), x.len())?;
        let mut out = self.forward_batch(1, x).logits;
        self.apply_output(&mut out);
        Ok(out)
    }

    /// Batched forward pass over `batch × input_dim` rows. Returns logits
    /// (pre output activation) and the activations needed for backprop.
    pub fn forward_batch(&self, batch: usize, x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), batch * self.input_dim());
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(batch * layer.out_dim);
            for _ in 0..batch {
                next.extend_from_slice(&layer.b);
            }
            if batch == 1 {
                matvec_acc(layer.out_dim, layer.in_dim, &layer.w, &current, &mut next);
            } else {
                matmul_bt(batch, layer.in_dim, layer.out_dim, &current, &layer.w, 1.0, &mut next);
            }
            if idx + 1 < self.layers.len() {
                self.activate_hidden(&mut next);
            }
            layer_inputs.push(current);
            current = next;
        }
        MlpCache {
            batch,
            layer_inputs,
            logits: current,
        }
    }

    /// Backpropagates `d_logits` (gradient w.r.t. the pre-activation
    /// outputs). Accumulates into `grads`, returns the input gradient.
    pub fn backward_batch(&self, cache: &MlpCache, d_logits: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let batch = cache.batch;
        let mut delta = d_logits.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input = &cache.layer_inputs[idx];
            let g = &mut grads.layers[idx];
            let mut d_input = vec![0.0; batch * layer.in_dim];
            if batch == 1 {
                outer_acc(&delta, input, &mut g.w);
                matvec_t_acc(layer.out_dim, layer.in_dim, &layer.w, &delta, &mut d_input);
            } else {
                matmul_at(layer.out_dim, batch, layer.in_dim, &delta, input, 1.0, &mut g.w);
                matmul(batch, layer.out_dim, layer.in_dim, &delta, &layer.w, 0.0, &mut d_input);
            }
            for row in delta.chunks_exact(layer.out_dim) {
                for (acc, v) in g.b.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if idx > 0 {
                // `input` is the post-activation output of the layer below.
                match self.hidden {
                    HiddenActivation::Relu => {
                        for (d, y) in d_input.iter_mut().zip(input) {
                            if *y <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    HiddenActivation::Tanh => {
                        for (d, y) in d_input.iter_mut().zip(input) {
                            *d *= 1.0 - y * y;
                        }
                    }
                }
            }
            delta = d_input;
        }
        delta
    }
}

impl ParamSet for Dense {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim)
    }
}

impl ParamSet for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes, self.hidden, self.output).expect("sizes already validated")
    }
}
