//! Learned month-by-month simulator and the episode interface that
//! Q-learning and policy evaluation drive.

mod features;
mod session;
mod train;
mod validate;

pub use features::{encode, feature_layout, FeatureBlock, FEATURE_DIM};
pub use session::{env_reset, EnvSession, Episode, Environment, OracleEnv, OracleEpisode, RnnEnv, Transition};
pub use train::{train_env, train_env_with, EnvTrainConfig, TrainingSummary};
pub use validate::{
    compare_cohorts, resimulate, validate_env, CalibrationReport, MonthPair, RatePair, TablePair,
};

use booster_neural::{SeqModel, SeqState};
use serde::{Deserialize, Serialize};

use crate::cohort::{Covariates, GroundTruthModel, Outcome, VariantCalendar};
use crate::{domain, Error, Result};

/// Anything that turns one month of covariates into next month's
/// `(p_severe, p_general)`, carrying whatever memory it needs.
pub trait MonthModel: Sync {
    type State: Clone + Send;

    fn start(&self) -> Self::State;

    fn advance(&self, state: &mut Self::State, cov: &Covariates) -> Result<[f64; 2]>;

    /// Month to variant mapping used when building covariates.
    fn calendar(&self) -> &VariantCalendar;
}

/// The generator itself as a simulator: memoryless given the covariates.
impl MonthModel for GroundTruthModel {
    type State = ();

    fn start(&self) {}

    fn advance(&self, _: &mut (), cov: &Covariates) -> Result<[f64; 2]> {
        Ok([self.hazard(cov, Outcome::Severe), self.hazard(cov, Outcome::General)])
    }

    fn calendar(&self) -> &VariantCalendar {
        &self.calendar
    }
}

/// Fixed probabilities regardless of history, for tests and smoke runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    pub p_severe: f64,
    pub p_general: f64,
    pub calendar: VariantCalendar,
}

impl ConstantModel {
    pub fn new(p_severe: f64, p_general: f64) -> Self {
        Self {
            p_severe,
            p_general,
            calendar: VariantCalendar::default(),
        }
    }
}

impl MonthModel for ConstantModel {
    type State = ();

    fn start(&self) {}

    fn advance(&self, _: &mut (), _: &Covariates) -> Result<[f64; 2]> {
        Ok([self.p_severe, self.p_general])
    }

    fn calendar(&self) -> &VariantCalendar {
        &self.calendar
    }
}

pub const ENV_FORMAT_VERSION: u32 = 1;

/// A trained recurrent simulator together with the input layout and
/// calendar it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvModel {
    pub format_version: u32,
    pub features: Vec<FeatureBlock>,
    pub calendar: VariantCalendar,
    pub training: TrainingSummary,
    pub net: SeqModel,
}

impl EnvModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("env model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Domain(format!("env model document: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != ENV_FORMAT_VERSION {
            return domain(format!("env model format {} is not supported", self.format_version));
        }
        if self.features != feature_layout() {
            return domain("env model was trained with a different feature layout");
        }
        self.net.validate()?;
        if self.net.input_dim() != FEATURE_DIM {
            return domain(format!("network expects {} inputs, encoder emits {FEATURE_DIM}", self.net.input_dim()));
        }
        Ok(())
    }
}

impl MonthModel for EnvModel {
    type State = SeqState;

    fn start(&self) -> SeqState {
        self.net.new_state()
    }

    fn advance(&self, state: &mut SeqState, cov: &Covariates) -> Result<[f64; 2]> {
        Ok(self.net.advance(state, &encode(cov))?)
    }

    fn calendar(&self) -> &VariantCalendar {
        &self.calendar
    }
}
