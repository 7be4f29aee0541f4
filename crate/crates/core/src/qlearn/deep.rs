use booster_neural::{Adam, AdamConfig, HiddenActivation, Mlp, OutputActivation, ParamSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{select_from, EpochMetrics, EpochTally, LearnConfig, Schedule};
use crate::cohort::Eligible;
use crate::env::{Environment, Episode};
use crate::types::{state_index, Action, RewardParams, StateKey, NUM_STATES};
use crate::{domain, Result};

/// Values beyond this magnitude count as divergence; true values are
/// bounded by the worst reward over `1 - γ`.
const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepQConfig {
    /// Widths of the two hidden layers.
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Exploration schedule, discount, epochs and seed; the tabular
    /// learning rate fields are unused.
    #[serde(default)]
    pub learn: LearnConfig,
}

impl DeepQConfig {
    /// The four standard settings, labelled `<width>-<k>` for a learning
    /// rate of `10^-k`: `64-3`, `64-4`, `256-3`, `256-4`.
    pub fn named(label: &str) -> Result<Self> {
        let (width, lr) = match label {
            "64-3" => (64, 1e-3),
            "64-4" => (64, 1e-4),
            "256-3" => (256, 1e-3),
            "256-4" => (256, 1e-4),
            _ => return domain(format!("unknown deep Q configuration {label:?}")),
        };
        Ok(Self {
            hidden: vec![width, width],
            lr,
            learn: LearnConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != 2 || self.hidden.contains(&0) {
            return domain(format!("deep Q needs exactly two positive hidden widths, got {:?}", self.hidden));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return domain(format!("learning rate must be positive, got {}", self.lr));
        }
        self.learn.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    /// Global step at which training stopped.
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepRun {
    pub net: Mlp,
    /// Completed epochs only; shorter than requested after divergence.
    pub metrics: Vec<EpochMetrics>,
    pub diverged: Option<Divergence>,
}

fn one_hot(s: usize) -> [f64; NUM_STATES] {
    let mut x = [0.0; NUM_STATES];
    x[s] = 1.0;
    x
}

fn values(net: &Mlp, s: usize) -> [f64; 2] {
    let out = net.forward_batch(1, &one_hot(s)).logits;
    [out[0], out[1]]
}

fn best_feasible(net: &Mlp, s: StateKey) -> Result<f64> {
    if s.is_terminal() {
        return Ok(0.0);
    }
    let v = values(net, state_index(s)?);
    Ok(if s.feasible().allows_booster() { v[0].max(v[1]) } else { v[0] })
}

/// Network values for every state, in state-index order.
pub fn deep_q_values(net: &Mlp) -> Vec<[f64; 2]> {
    (0..NUM_STATES).map(|s| values(net, s)).collect()
}

pub fn deep_policy(net: &Mlp) -> Vec<Action> {
    StateKey::all_live()
        .zip(deep_q_values(net))
        .map(|(s, v)| {
            if s.feasible().allows_booster() && v[1] > v[0] {
                Action::Booster
            } else {
                Action::NoBooster
            }
        })
        .collect()
}

/// The tabular interaction loop with Q given by a ReLU network over a
/// one-hot state code. Each transition takes one Adam step on the squared
/// TD error, the bootstrap target held fixed; there is no replay buffer and
/// no target network. Divergence stops training and is reported rather
/// than raised.
pub fn train_deep<E: Environment>(
    env: &E,
    patients: &[Eligible],
    cfg: &DeepQConfig,
    params: &RewardParams,
) -> Result<DeepRun> {
    cfg.validate()?;
    params.validate()?;
    if patients.is_empty() {
        return domain("no eligible patients to learn from");
    }
    let learn = &cfg.learn;
    let mut rng = ChaCha8Rng::seed_from_u64(learn.seed);
    let sizes = [NUM_STATES, cfg.hidden[0], cfg.hidden[1], 2];
    let mut net = Mlp::random(&sizes, HiddenActivation::Relu, OutputActivation::Linear, &mut rng)?;
    let mut adam = Adam::new(&net, AdamConfig::default());
    let mut grads = net.zeros_like();
    let mut schedule = Schedule::new(learn);
    let mut metrics = Vec::with_capacity(learn.epochs);
    for epoch in 1..=learn.epochs {
        let mut tally = EpochTally::default();
        for p in patients {
            let mut ep = env.begin(p)?;
            while !ep.is_done() {
                let s = ep.state();
                let si = state_index(s)?;
                let cache = net.forward_batch(1, &one_hot(si));
                let q = [cache.logits[0], cache.logits[1]];
                let a = select_from(q, schedule.epsilon, ep.allowed(), &mut rng);
                let t = ep.step(a, params, &mut rng)?;
                let target = t.reward + learn.gamma * best_feasible(&net, t.next)?;
                let reason = if q.iter().chain([&target]).all(|v| v.is_finite() && v.abs() <= DIVERGENCE_BOUND) {
                    let mut d = [0.0; 2];
                    d[a.index()] = q[a.index()] - target;
                    for g in grads.param_slices_mut() {
                        g.fill(0.0);
                    }
                    net.backward_batch(&cache, &d, &mut grads);
                    adam.update(&mut net, &grads, cfg.lr).err().map(|e| e.to_string())
                } else {
                    Some(format!("Q values {q:?} with target {target} left the finite bound"))
                };
                if let Some(reason) = reason {
                    return Ok(DeepRun {
                        net,
                        metrics,
                        diverged: Some(Divergence {
                            epoch,
                            step: schedule.steps,
                            reason,
                        }),
                    });
                }
                schedule.tick();
                tally.add(&t);
            }
        }
        let mut m = tally.finish(epoch, &schedule);
        m.beta_end = cfg.lr;
        metrics.push(m);
    }
    Ok(DeepRun {
        net,
        metrics,
        diverged: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_configurations() {
        let c = DeepQConfig::named("64-4").unwrap();
        assert_eq!((c.hidden.as_slice(), c.lr), (&[64, 64][..], 1e-4));
        c.validate().unwrap();
        assert!(DeepQConfig::named("128-3").is_err());
        let three = DeepQConfig {
            hidden: vec![8, 8, 8],
            ..c
        };
        assert!(three.validate().is_err());
    }
}
