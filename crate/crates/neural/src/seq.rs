use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::sigmoid;
use crate::lstm::{LayerInput, LstmBackScratch, LstmCache, LstmLayer, SparseRows};
use crate::mlp::{HiddenActivation, Mlp, MlpCache, OutputActivation};
use crate::{check_len, NeuralError, ParamSet, Result};

/// Output probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Stacked LSTM followed by a sigmoid head emitting `(p_severe, p_general)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqModel {
    pub format_version: u32,
    pub layers: Vec<LstmLayer>,
    pub head: Mlp,
    pub dropout: f64,
}

/// Padded, time-major mini-batch. Row `t * batch + b` holds step `t` of
/// sequence `b`; `mask` is 1 where a target exists.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub steps: usize,
    pub batch: usize,
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub mask: Vec<f64>,
    /// Compressed copy of `inputs`, present when they are mostly zero.
    pub sparse: Option<SparseRows>,
}

impl SeqBatch {
    /// Pads `(inputs, targets)` pairs to the longest sequence. Each input
    /// slice is `len × input_dim`, row-major, with one target pair per row.
    pub fn from_sequences(input_dim: usize, seqs: &[(&[f64], &[[f64; 2]])]) -> Result<Self> {
        let batch = seqs.len();
        let mut steps = 0;
        for (x, y) in seqs {
            check_len("sequence inputs", y.len() * input_dim, x.len())?;
            steps = steps.max(y.len());
        }
        let rows = steps * batch;
        let mut inputs = vec![0.0; rows * input_dim];
        let mut targets = vec![0.0; rows * 2];
        let mut mask = vec![0.0; rows];
        for (b, (x, y)) in seqs.iter().enumerate() {
            for (t, target) in y.iter().enumerate() {
                let r = t * batch + b;
                inputs[r * input_dim..(r + 1) * input_dim]
                    .copy_from_slice(&x[t * input_dim..(t + 1) * input_dim]);
                targets[2 * r..2 * r + 2].copy_from_slice(target);
                mask[r] = 1.0;
            }
        }
        let mut out = Self {
            steps,
            batch,
            input_dim,
            inputs,
            targets,
            mask,
            sparse: None,
        };
        out.compress_if_sparse();
        Ok(out)
    }

    /// Builds the compressed input copy when at most half the entries are
    /// non-zero.
    pub fn compress_if_sparse(&mut self) {
        let nnz = self.inputs.iter().filter(|v| **v != 0.0).count();
        self.sparse = (self.input_dim > 0 && 2 * nnz <= self.inputs.len())
            .then(|| SparseRows::from_dense(self.input_dim, &self.inputs));
    }

    pub(crate) fn layer_input(&self) -> LayerInput<'_> {
        match &self.sparse {
            Some(s) => LayerInput::Sparse(s),
            None => LayerInput::Dense(&self.inputs),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m > 0.0).count()
    }
}

/// Recurrent state for streaming one sequence through a model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// Number of inputs consumed so far.
    pub advances: usize,
    scratch: Vec<f64>,
    layer_in: Vec<f64>,
}

/// Reusable buffers for training-mode passes.
#[derive(Debug, Clone, Default)]
pub struct SeqWorkspace {
    caches: Vec<LstmCache>,
    /// Layer outputs after dropout.
    outputs: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers applied to `outputs[l]`; empty when
    /// no dropout was applied.
    drop_masks: Vec<Vec<f64>>,
    d_logits: Vec<f64>,
    back: LstmBackScratch,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl SeqModel {
    /// `hidden` lists LSTM widths bottom to top; `head_hidden` lists optional
    /// dense layers between the top LSTM and the two sigmoid outputs.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        head_hidden: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(NeuralError::Domain(format!(
                "sequence model needs a positive input width and at least one LSTM layer; got input {input_dim}, layers {hidden:?}"
            )));
        }
        check_dropout(dropout)?;
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            layers.push(LstmLayer::random(width, h, rng));
            width = h;
        }
        let mut sizes = vec![width];
        sizes.extend_from_slice(head_hidden);
        sizes.push(2);
        let head = Mlp::random(&sizes, HiddenActivation::Tanh, OutputActivation::Sigmoid, rng)?;
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            layers,
            head,
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(NeuralError::Format(format!(
                "format_version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.layers.is_empty() {
            return Err(NeuralError::Format("no LSTM layers".into()));
        }
        check_dropout(self.dropout)?;
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if idx > 0 {
                check_len("stacked lstm input", self.layers[idx - 1].hidden_dim, layer.input_dim)?;
            }
        }
        self.head.validate()?;
        let top = self.layers.last().expect("non-empty").hidden_dim;
        check_len("head input", top, self.head.input_dim())?;
        check_len("head output", 2, self.head.output_dim())?;
        if self.head.output != OutputActivation::Sigmoid {
            return Err(NeuralError::Format("head must end in a sigmoid".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| NeuralError::Format(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn new_state(&self) -> SeqState {
        SeqState {
            h: self.layers.iter().map(|l| vec![0.0; l.hidden_dim]).collect(),
            c: self.layers.iter().map(|l| vec![0.0; l.hidden_dim]).collect(),
            advances: 0,
            scratch: Vec::new(),
            layer_in: Vec::new(),
        }
    }

    /// Feeds one input through every layer (inference mode) and returns the
    /// clamped `(p_severe, p_general)` for the following step.
    pub fn advance(&self, state: &mut SeqState, x: &[f64]) -> Result<[f64; 2]> {
        check_len("sequence model input", self.input_dim(), x.len())?;
        state.layer_in.clear();
        state.layer_in.extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.step_in_place(&state.layer_in, &mut state.h[l], &mut state.c[l], &mut state.scratch);
            state.layer_in.clear();
            state.layer_in.extend_from_slice(&state.h[l]);
        }
        state.advances += 1;
        let logits = self.head.forward_batch(1, &state.layer_in).logits;
        Ok([clamp_prob(sigmoid(logits[0])), clamp_prob(sigmoid(logits[1]))])
    }

    /// Runs a single `steps × input_dim` sequence and returns one clamped
    /// probability pair per step. With `training` false the result does not
    /// depend on `rng`.
    pub fn stacked_forward<R: Rng + ?Sized>(
        &self,
        steps: usize,
        x: &[f64],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<[f64; 2]>> {
        if steps == 0 {
            return Err(NeuralError::Domain("empty sequence".into()));
        }
        check_len("sequence inputs", steps * self.input_dim(), x.len())?;
        let mut ws = SeqWorkspace::default();
        let head = self.forward_trace(steps, 1, LayerInput::Dense(x), training, rng, &mut ws);
        Ok(head
            .logits
            .chunks_exact(2)
            .map(|z| [clamp_prob(sigmoid(z[0])), clamp_prob(sigmoid(z[1]))])
            .collect())
    }

    fn forward_trace<R: Rng + ?Sized>(
        &self,
        steps: usize,
        batch: usize,
        input: LayerInput<'_>,
        training: bool,
        rng: &mut R,
        ws: &mut SeqWorkspace,
    ) -> MlpCache {
        let n = self.layers.len();
        ws.caches.resize_with(n, Default::default);
        ws.outputs.resize_with(n, Vec::new);
        ws.drop_masks.resize_with(n, Vec::new);
        let dropping = training && self.dropout > 0.0;
        let keep = 1.0 - self.dropout;
        for l in 0..n {
            let layer_in = if l == 0 { input } else { LayerInput::Dense(&ws.outputs[l - 1]) };
            self.layers[l].forward_seq(steps, batch, layer_in, &mut ws.caches[l]);
            let out = &mut ws.outputs[l];
            out.clear();
            out.extend_from_slice(&ws.caches[l].hidden);
            let mask = &mut ws.drop_masks[l];
            mask.clear();
            if dropping && l + 1 < n {
                mask.extend((0..out.len()).map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 }));
                for (o, k) in out.iter_mut().zip(mask.iter()) {
                    *o *= k;
                }
            }
        }
        self.head.forward_batch(steps * batch, &ws.outputs[n - 1])
    }

    fn check_batch(&self, batch: &SeqBatch) -> Result<usize> {
        check_len("batch input width", self.input_dim(), batch.input_dim)?;
        let rows = batch.steps * batch.batch;
        check_len("batch inputs", rows * batch.input_dim, batch.inputs.len())?;
        check_len("batch targets", rows * 2, batch.targets.len())?;
        check_len("batch mask", rows, batch.mask.len())?;
        if let Some(s) = &batch.sparse {
            check_len("batch sparse rows", rows, s.rows())?;
        }
        let valid = batch.valid_count();
        if valid == 0 {
            return Err(NeuralError::Domain("every step of the batch is masked".into()));
        }
        Ok(valid)
    }

    /// Masked mean binary cross-entropy, summed over both heads, and its
    /// gradient with respect to every parameter.
    pub fn bptt_loss_and_grads<R: Rng + ?Sized>(&self, batch: &SeqBatch, rng: &mut R) -> Result<(f64, SeqModel)> {
        let mut grads = self.zeros_like();
        let loss = self.bptt_into(batch, rng, &mut SeqWorkspace::default(), &mut grads)?;
        Ok((loss, grads))
    }

    /// As [`SeqModel::bptt_loss_and_grads`], overwriting `grads` and reusing
    /// the buffers in `ws`.
    pub fn bptt_into<R: Rng + ?Sized>(
        &self,
        batch: &SeqBatch,
        rng: &mut R,
        ws: &mut SeqWorkspace,
        grads: &mut SeqModel,
    ) -> Result<f64> {
        let valid = self.check_batch(batch)?;
        let rows = batch.steps * batch.batch;
        let head = self.forward_trace(batch.steps, batch.batch, batch.layer_input(), true, rng, ws);
        let inv = 1.0 / valid as f64;

        let mut loss = 0.0;
        ws.d_logits.clear();
        ws.d_logits.resize(rows * 2, 0.0);
        for r in 0..rows {
            if batch.mask[r] <= 0.0 {
                continue;
            }
            for k in 0..2 {
                let z = head.logits[2 * r + k];
                let y = batch.targets[2 * r + k];
                let p = sigmoid(z);
                let pc = clamp_prob(p);
                loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
                if p == pc {
                    ws.d_logits[2 * r + k] = (p - y) * inv;
                }
            }
        }
        loss *= inv;

        for s in grads.param_slices_mut() {
            s.fill(0.0);
        }
        let mut dh = self.head.backward_batch(&head, &ws.d_logits, &mut grads.head);
        for l in (0..self.layers.len()).rev() {
            let layer_in = if l == 0 {
                batch.layer_input()
            } else {
                LayerInput::Dense(&ws.outputs[l - 1])
            };
            self.layers[l].backward_seq(&ws.caches[l], layer_in, &dh, &mut grads.layers[l], l > 0, &mut ws.back);
            if l > 0 {
                std::mem::swap(&mut dh, &mut ws.back.dx);
                let mask = &ws.drop_masks[l - 1];
                if !mask.is_empty() {
                    for (d, k) in dh.iter_mut().zip(mask) {
                        *d *= k;
                    }
                }
            }
        }
        Ok(loss)
    }

    /// Loss only, for validation sets and finite-difference checks.
    pub fn loss<R: Rng + ?Sized>(&self, batch: &SeqBatch, training: bool, rng: &mut R) -> Result<f64> {
        self.loss_with(batch, training, rng, &mut SeqWorkspace::default())
    }

    pub fn loss_with<R: Rng + ?Sized>(
        &self,
        batch: &SeqBatch,
        training: bool,
        rng: &mut R,
        ws: &mut SeqWorkspace,
    ) -> Result<f64> {
        let valid = self.check_batch(batch)?;
        let head = self.forward_trace(batch.steps, batch.batch, batch.layer_input(), training, rng, ws);
        let mut loss = 0.0;
        for r in 0..batch.steps * batch.batch {
            if batch.mask[r] <= 0.0 {
                continue;
            }
            for k in 0..2 {
                let pc = clamp_prob(sigmoid(head.logits[2 * r + k]));
                let y = batch.targets[2 * r + k];
                loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            }
        }
        Ok(loss / valid as f64)
    }
}

fn check_dropout(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NeuralError::Domain(format!("dropout rate {rate} outside [0, 1)")))
    }
}

impl ParamSet for SeqModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.param_slices()).collect();
        out.extend(self.head.param_slices());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.param_slices_mut()).collect();
        out.extend(self.head.param_slices_mut());
        out
    }

    fn zeros_like(&self) -> Self {
        Self {
            format_version: self.format_version,
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            head: self.head.zeros_like(),
            dropout: self.dropout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64, dropout: f64) -> SeqModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SeqModel::random(3, &[4, 5], &[], dropout, &mut rng).unwrap()
    }

    #[test]
    fn inference_is_deterministic_and_inside_unit_square() {
        let model = tiny_model(1, 0.2);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = model.stacked_forward(4, &x, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = model.stacked_forward(4, &x, false, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for p in a.iter().flatten() {
            assert!(*p > 0.0 && *p < 1.0);
        }
    }

    #[test]
    fn single_step_equals_manual_composition() {
        let model = tiny_model(2, 0.0);
        let x = [0.5, -1.0, 0.25];
        let out = model.stacked_forward(1, &x, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (h1, _) = model.layers[0].step(&x, &[0.0; 4], &[0.0; 4]).unwrap();
        let (h2, _) = model.layers[1].step(&h1, &[0.0; 5], &[0.0; 5]).unwrap();
        let p = model.head.forward(&h2).unwrap();
        assert!((out[0][0] - p[0]).abs() < 1e-15);
        assert!((out[0][1] - p[1]).abs() < 1e-15);
    }

    #[test]
    fn streaming_matches_whole_sequence() {
        let model = tiny_model(3, 0.2);
        let x: Vec<f64> = (0..15).map(|i| (i as f64).cos()).collect();
        let whole = model.stacked_forward(5, &x, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut st = model.new_state();
        for t in 0..5 {
            let p = model.advance(&mut st, &x[t * 3..(t + 1) * 3]).unwrap();
            assert!((p[0] - whole[t][0]).abs() < 1e-14);
            assert!((p[1] - whole[t][1]).abs() < 1e-14);
        }
        assert_eq!(st.advances, 5);
    }

    #[test]
    fn all_masked_batch_is_rejected() {
        let model = tiny_model(4, 0.0);
        let batch = SeqBatch {
            steps: 2,
            batch: 1,
            input_dim: 3,
            inputs: vec![0.0; 6],
            targets: vec![0.0; 4],
            mask: vec![0.0; 2],
            sparse: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(model.bptt_loss_and_grads(&batch, &mut rng).is_err());
    }

    #[test]
    fn padded_steps_contribute_nothing() {
        let model = tiny_model(5, 0.0);
        let x1: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let y1 = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let x2: Vec<f64> = (0..3).map(|i| -(i as f64)).collect();
        let y2 = [[0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let both = SeqBatch::from_sequences(3, &[(&x1, &y1), (&x2, &y2)]).unwrap();
        let (loss, grads) = model.bptt_loss_and_grads(&both, &mut rng).unwrap();

        // Same data with different junk in the padded slots.
        let mut junk = both.clone();
        for r in 0..junk.steps * junk.batch {
            if junk.mask[r] == 0.0 {
                junk.inputs[r * 3..(r + 1) * 3].fill(7.0);
                junk.targets[2 * r..2 * r + 2].fill(1.0);
            }
        }
        junk.compress_if_sparse();
        let (loss2, grads2) = model.bptt_loss_and_grads(&junk, &mut rng).unwrap();
        assert!((loss - loss2).abs() < 1e-15);
        for (a, b) in grads.flatten().iter().zip(grads2.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let model = tiny_model(6, 0.2);
        let back = SeqModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, back);
        let mut doc: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        doc["format_version"] = serde_json::json!(99);
        assert!(matches!(
            SeqModel::from_json(&doc.to_string()),
            Err(NeuralError::Format(_))
        ));
    }
}
