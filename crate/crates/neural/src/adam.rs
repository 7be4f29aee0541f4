use serde::{Deserialize, Serialize};

use crate::{check_len, NeuralError, ParamSet, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments of parameters whose gradient stays zero decay geometrically
/// into the subnormal range, where arithmetic is orders of magnitude
/// slower. Their contribution to the update is below 1e-290 by then.
#[inline(always)]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Bias-corrected Adam. Moments are stored block by block in the order of
/// [`ParamSet::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: ParamSet>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Fails without touching anything if a gradient entry is
    /// not finite.
    pub fn update<P: ParamSet>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NeuralError::Domain(format!("learning rate {lr} must be positive")));
        }
        let gs = grads.param_slices();
        check_len("adam gradient blocks", self.m.len(), gs.len())?;
        for (block, (g, m)) in gs.iter().zip(&self.m).enumerate() {
            check_len("adam gradient block", m.len(), g.len())?;
            if let Some((index, value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(NeuralError::NonFiniteGradient {
                    block,
                    index,
                    value: *value,
                });
            }
        }
        let mut ps = params.param_slices_mut();
        check_len("adam parameter blocks", self.m.len(), ps.len())?;

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
            // zipped iterators drop the bounds checks so this vectorizes
            for (((p, &gi), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = flush(beta1 * *m + (1.0 - beta1) * gi);
                *v = flush(beta2 * *v + (1.0 - beta2) * gi * gi);
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Dense;

    struct Flat(Vec<f64>);

    impl ParamSet for Flat {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
        fn zeros_like(&self) -> Self {
            Flat(vec![0.0; self.0.len()])
        }
    }

    #[test]
    fn first_step_moves_each_weight_by_about_lr() {
        let mut p = Flat(vec![1.0, -2.0, 0.5]);
        let g = Flat(vec![0.3, -4.0, 1e-3]);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.update(&mut p, &g, 1e-4).unwrap();
        let start = [1.0, -2.0, 0.5];
        for i in 0..3 {
            let want = -1e-4 * g.0[i] / (g.0[i].abs() + 1e-8);
            assert!((p.0[i] - start[i] - want).abs() < 1e-15);
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_only_advances_the_counter() {
        let mut p = Flat(vec![1.0, 2.0]);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.update(&mut p, &Flat(vec![0.0, 0.0]), 1e-3).unwrap();
        assert_eq!(p.0, vec![1.0, 2.0]);
        assert_eq!(adam.m, vec![vec![0.0, 0.0]]);
        assert_eq!(adam.v, vec![vec![0.0, 0.0]]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn non_finite_gradient_is_reported_and_nothing_changes() {
        let mut d = Dense::zeros(2, 2);
        let mut g = d.zeros_like();
        g.b[1] = f64::NAN;
        let mut adam = Adam::new(&d, AdamConfig::default());
        let err = adam.update(&mut d, &g, 1e-3).unwrap_err();
        assert!(matches!(err, NeuralError::NonFiniteGradient { block: 1, index: 1, .. }));
        assert_eq!(adam.step, 0);
    }
}
