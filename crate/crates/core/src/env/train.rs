use booster_neural::{Adam, AdamConfig, ParamSet, SeqBatch, SeqModel, SeqWorkspace};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode, feature_layout, EnvModel, ENV_FORMAT_VERSION, FEATURE_DIM};
use crate::cohort::{Covariates, Trajectory, Variant, VariantCalendar};
use crate::types::HORIZON;
use crate::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvTrainConfig {
    /// LSTM widths, bottom to top.
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EnvTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            dropout: 0.2,
            lr: 1e-4,
            epochs: 2000,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl EnvTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return domain("env model needs at least one LSTM layer of positive width");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return domain(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return domain(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return domain("epochs and batch size must be positive");
        }
        Ok(())
    }
}

/// Provenance and fit statistics stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSummary {
    pub config: EnvTrainConfig,
    pub sequences: usize,
    pub targets: usize,
    /// Evaluation-mode loss over the training data after the last epoch.
    pub final_loss: f64,
    /// Loss of predicting each outcome's label frequency everywhere.
    pub base_rate_loss: f64,
    pub severe_frequency: f64,
    pub general_frequency: f64,
    pub warnings: Vec<String>,
}

/// Binary cross-entropy of a constant prediction equal to the frequency.
fn entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// The variant boundaries seen in the data; every record must agree with
/// them.
fn infer_calendar(trajs: &[Trajectory]) -> Result<VariantCalendar> {
    let first = |v: Variant| {
        trajs
            .iter()
            .flat_map(|t| &t.records)
            .filter(|r| r.variant == v)
            .map(|r| r.month)
            .min()
    };
    let omicron_from = first(Variant::Omicron).unwrap_or(HORIZON + 1);
    let delta_from = first(Variant::Delta).unwrap_or(omicron_from);
    let calendar = VariantCalendar {
        delta_from,
        omicron_from,
    };
    for t in trajs {
        for r in &t.records {
            if calendar.at(r.month) != r.variant {
                return domain(format!(
                    "variant {} in month {} of patient {} contradicts the calendar implied by the cohort",
                    r.variant, r.month, t.patient_id
                ));
            }
        }
    }
    Ok(calendar)
}

struct Sequences {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<[f64; 2]>>,
}

/// Month `t`'s covariates predict month `t + 1`'s outcomes.
fn sequences(trajs: &[Trajectory]) -> Sequences {
    let mut out = Sequences {
        inputs: Vec::new(),
        targets: Vec::new(),
    };
    for t in trajs.iter().filter(|t| t.len() >= 2) {
        let n = t.len() - 1;
        let mut x = Vec::with_capacity(n * FEATURE_DIM);
        for r in &t.records[..n] {
            x.extend_from_slice(&encode(&Covariates::from_record(&t.baseline, r)));
        }
        let y = t.records[1..]
            .iter()
            .map(|r| [f64::from(u8::from(r.severe_infection)), f64::from(u8::from(r.general_infection))])
            .collect();
        out.inputs.push(x);
        out.targets.push(y);
    }
    out
}

pub fn train_env(trajs: &[Trajectory], cfg: &EnvTrainConfig) -> Result<EnvModel> {
    train_env_with(trajs, cfg, |_, _| {})
}

/// Mini-batch BPTT with Adam. Batches are formed once from a seeded
/// shuffle and visited in a fresh random order every epoch; `on_epoch`
/// receives the epoch number and its mean training loss.
pub fn train_env_with(
    trajs: &[Trajectory],
    cfg: &EnvTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<EnvModel> {
    cfg.validate()?;
    let data = sequences(trajs);
    if data.inputs.is_empty() {
        return domain("env training needs at least one trajectory with two or more months");
    }
    let calendar = infer_calendar(trajs)?;
    let targets: usize = data.targets.iter().map(Vec::len).sum();
    let mut positives = [0.0; 2];
    for y in data.targets.iter().flatten() {
        positives[0] += y[0];
        positives[1] += y[1];
    }
    let freq = [positives[0] / targets as f64, positives[1] / targets as f64];
    let mut warnings = Vec::new();
    for (k, name) in ["severe", "general"].iter().enumerate() {
        if positives[k] == 0.0 {
            warnings.push(format!("no positive {name}-infection labels; the model can only learn the base rate"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = SeqModel::random(FEATURE_DIM, &cfg.hidden, &[], cfg.dropout, &mut rng)?;
    let head = net.head.layers.last_mut().expect("head has an output layer");
    head.b[0] = logit(freq[0]);
    head.b[1] = logit(freq[1]);

    let mut order: Vec<usize> = (0..data.inputs.len()).collect();
    order.shuffle(&mut rng);
    let batches = order
        .chunks(cfg.batch_size)
        .map(|ids| {
            let pairs: Vec<(&[f64], &[[f64; 2]])> =
                ids.iter().map(|&i| (data.inputs[i].as_slice(), data.targets[i].as_slice())).collect();
            SeqBatch::from_sequences(FEATURE_DIM, &pairs)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    drop(data);

    let mut adam = Adam::new(&net, AdamConfig::default());
    let mut ws = SeqWorkspace::default();
    let mut grads = net.zeros_like();
    let mut visit: Vec<usize> = (0..batches.len()).collect();
    for epoch in 1..=cfg.epochs {
        visit.shuffle(&mut rng);
        let (mut total, mut weight) = (0.0, 0.0);
        for &b in &visit {
            let batch = &batches[b];
            let loss = net.bptt_into(batch, &mut rng, &mut ws, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("env training loss became {loss} in epoch {epoch}")));
            }
            adam.update(&mut net, &grads, cfg.lr)?;
            let n = batch.valid_count() as f64;
            total += loss * n;
            weight += n;
        }
        on_epoch(epoch, total / weight);
    }

    let (mut total, mut weight) = (0.0, 0.0);
    for batch in &batches {
        let n = batch.valid_count() as f64;
        total += net.loss_with(batch, false, &mut rng, &mut ws)? * n;
        weight += n;
    }
    Ok(EnvModel {
        format_version: ENV_FORMAT_VERSION,
        features: feature_layout(),
        calendar,
        training: TrainingSummary {
            config: cfg.clone(),
            sequences: order.len(),
            targets,
            final_loss: total / weight,
            base_rate_loss: entropy(freq[0]) + entropy(freq[1]),
            severe_frequency: freq[0],
            general_frequency: freq[1],
            warnings,
        },
        net,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, GroundTruthModel};

    fn small() -> EnvTrainConfig {
        EnvTrainConfig {
            hidden: vec![8],
            dropout: 0.0,
            lr: 1e-2,
            epochs: 3,
            batch_size: 32,
            seed: 9,
        }
    }

    #[test]
    fn same_seed_same_model() {
        let trajs = generate_cohort(&GroundTruthModel::default(), 200, 1).unwrap();
        let a = train_env(&trajs, &small()).unwrap();
        let b = train_env(&trajs, &small()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(EnvModel::from_json(&a.to_json()).unwrap(), a);
        assert_eq!(a.calendar, GroundTruthModel::default().calendar);
    }

    #[test]
    fn degenerate_labels_warn_but_train() {
        let trajs = generate_cohort(&GroundTruthModel::without_infections(), 50, 1).unwrap();
        let m = train_env(&trajs, &small()).unwrap();
        assert_eq!(m.training.warnings.len(), 2);
        assert_eq!(m.training.base_rate_loss, 0.0);
    }

    #[test]
    fn rejects_unusable_input() {
        assert!(train_env(&[], &small()).is_err());
        let bad = EnvTrainConfig { epochs: 0, ..small() };
        let trajs = generate_cohort(&GroundTruthModel::default(), 20, 1).unwrap();
        assert!(train_env(&trajs, &bad).is_err());
    }

    #[test]
    fn paper_sized_config_is_accepted() {
        let cfg = EnvTrainConfig::default();
        assert_eq!((cfg.hidden.as_slice(), cfg.dropout, cfg.lr), (&[128, 128][..], 0.2, 1e-4));
        cfg.validate().unwrap();
    }
}
