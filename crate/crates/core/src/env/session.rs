use rand::Rng;

use super::MonthModel;
use crate::cohort::{BoosterMdp, Covariates, Eligible, Trajectory, TERMINAL};
use crate::types::{
    allowed_actions, band_of, reward, state_index, Action, ActionSet, AgeBand, RecencyBand, RewardParams, StateKey,
    HORIZON,
};
use crate::{domain, Error, Result};

/// One interaction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: StateKey,
    pub action: Action,
    pub reward: f64,
    /// `Terminal` after a severe infection; otherwise the state at the next
    /// decision month, even when the study window has closed.
    pub next: StateKey,
    pub severe: bool,
    pub general: bool,
    /// No further steps: severe infection or the last study month.
    pub done: bool,
}

/// A single patient's decision process from the month after their second
/// dose to the end of the study window.
pub trait Episode {
    fn state(&self) -> StateKey;

    /// Guideline mask for the upcoming decision.
    fn allowed(&self) -> ActionSet;

    /// Months since the second dose at the upcoming decision.
    fn offset(&self) -> u32;

    fn is_done(&self) -> bool;

    fn step<R: Rng + ?Sized>(&mut self, action: Action, params: &RewardParams, rng: &mut R) -> Result<Transition>;
}

/// Something that can start an episode for an eligible patient.
pub trait Environment: Sync {
    type Episode: Episode;

    fn begin(&self, patient: &Eligible) -> Result<Self::Episode>;
}

/// Live simulation of one patient against a month model.
#[derive(Debug, Clone)]
pub struct EnvSession<'m, M: MonthModel> {
    model: &'m M,
    covariates: Covariates,
    second_dose_month: u32,
    /// Last month whose outcomes and vaccination are settled.
    month: u32,
    months_since_last_vax: u32,
    boosted: bool,
    state: M::State,
    /// Prediction for the outcomes of `month + 1`.
    pending: [f64; 2],
    /// The general-infection status of `month + 1` has not been drawn yet.
    general_pending: bool,
    advances: usize,
    severe: bool,
}

/// Positions a session at the patient's second dose, replaying their
/// history through the model so its memory reflects months `1..=T`.
pub fn env_reset<'m, M: MonthModel>(model: &'m M, traj: &Trajectory) -> Result<EnvSession<'m, M>> {
    let Some(second) = traj.second_dose_month else {
        return domain(format!("patient {} never received a second dose", traj.patient_id));
    };
    let prefix = &traj.records[..second as usize];
    let mut state = model.start();
    let mut pending = [0.0; 2];
    let mut covariates = Covariates::from_baseline(&traj.baseline, model.calendar().at(1));
    for r in prefix {
        covariates = Covariates::from_record(&traj.baseline, r);
        pending = model.advance(&mut state, &covariates)?;
    }
    Ok(EnvSession {
        model,
        covariates,
        second_dose_month: second,
        month: second,
        months_since_last_vax: 0,
        boosted: false,
        state,
        pending,
        general_pending: true,
        advances: prefix.len(),
        severe: false,
    })
}

impl<'m, M: MonthModel> EnvSession<'m, M> {
    /// Model steps taken so far, including the warm-up replay.
    pub fn advances(&self) -> usize {
        self.advances
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn num_vaccines(&self) -> u8 {
        self.covariates.num_vaccines
    }

    pub fn months_since_last_vax(&self) -> u32 {
        self.months_since_last_vax
    }

    fn age(&self) -> AgeBand {
        self.covariates.age
    }
}

impl<'m, M: MonthModel> Episode for EnvSession<'m, M> {
    fn state(&self) -> StateKey {
        if self.severe {
            StateKey::Terminal
        } else {
            StateKey::live(self.age(), self.covariates.imm, band_of(self.months_since_last_vax + 1))
        }
    }

    fn allowed(&self) -> ActionSet {
        allowed_actions(self.offset(), self.boosted)
    }

    fn offset(&self) -> u32 {
        self.month + 1 - self.second_dose_month
    }

    fn is_done(&self) -> bool {
        self.severe || self.month >= HORIZON
    }

    fn step<R: Rng + ?Sized>(&mut self, action: Action, params: &RewardParams, rng: &mut R) -> Result<Transition> {
        if self.is_done() {
            return domain("the episode has already ended");
        }
        if !self.allowed().contains(action) {
            return Err(Error::PolicyViolation(format!(
                "booster requested {} months after the second dose",
                self.offset()
            )));
        }
        let state = self.state();
        let t = self.month + 1;
        if self.general_pending {
            self.covariates.general = rng.gen::<f64>() < self.pending[1];
            self.general_pending = false;
        }
        let boost = action == Action::Booster;
        if boost {
            self.covariates.num_vaccines = (self.covariates.num_vaccines + 1).min(4);
            self.months_since_last_vax = 0;
            self.boosted = true;
        } else {
            self.months_since_last_vax += 1;
        }
        self.covariates.variant = self.model.calendar().at(t);
        self.covariates.recency = Some(band_of(self.months_since_last_vax));
        self.covariates.booster = boost;
        let p = self.model.advance(&mut self.state, &self.covariates)?;
        self.advances += 1;
        let severe = rng.gen::<f64>() < p[0];
        let general = rng.gen::<f64>() < p[1];
        self.month = t;
        self.severe = severe;
        self.covariates.general = general;
        self.pending = p;
        Ok(Transition {
            state,
            action,
            reward: reward(severe, action, params),
            next: self.state(),
            severe,
            general,
            done: self.is_done(),
        })
    }
}

/// Sessions against a month model for the patients of one cohort.
pub struct RnnEnv<'a, M: MonthModel> {
    pub model: &'a M,
    pub trajs: &'a [Trajectory],
}

impl<'a, M: MonthModel> Environment for RnnEnv<'a, M> {
    type Episode = EnvSession<'a, M>;

    fn begin(&self, patient: &Eligible) -> Result<EnvSession<'a, M>> {
        env_reset(self.model, &self.trajs[patient.index])
    }
}

/// Episodes that sample successor states straight from the tabulated MDP.
/// Unlike the live simulator, repeat boosters are allowed whenever the
/// recency band permits one, since the tabulated state does not record
/// whether a booster was already given.
pub struct OracleEnv<'a> {
    pub mdp: &'a BoosterMdp,
}

#[derive(Debug, Clone)]
pub struct OracleEpisode<'a> {
    mdp: &'a BoosterMdp,
    state: usize,
    second_dose_month: u32,
    month: u32,
}

impl<'a> Environment for OracleEnv<'a> {
    type Episode = OracleEpisode<'a>;

    fn begin(&self, patient: &Eligible) -> Result<OracleEpisode<'a>> {
        if patient.second_dose_month >= HORIZON {
            return domain("patient has no decision months");
        }
        Ok(OracleEpisode {
            mdp: self.mdp,
            state: state_index(StateKey::live(patient.age, patient.imm, RecencyBand::M0_4))?,
            second_dose_month: patient.second_dose_month,
            month: patient.second_dose_month,
        })
    }
}

impl Episode for OracleEpisode<'_> {
    fn state(&self) -> StateKey {
        if self.state == TERMINAL {
            StateKey::Terminal
        } else {
            StateKey::from_index(self.state).expect("live index")
        }
    }

    fn allowed(&self) -> ActionSet {
        let state_ok = self.mdp.mdp.is_feasible(self.state, Action::Booster);
        if state_ok && allowed_actions(self.offset(), false).allows_booster() {
            ActionSet::BOTH
        } else {
            ActionSet::NO_BOOSTER_ONLY
        }
    }

    fn offset(&self) -> u32 {
        self.month + 1 - self.second_dose_month
    }

    fn is_done(&self) -> bool {
        self.state == TERMINAL || self.month >= HORIZON
    }

    fn step<R: Rng + ?Sized>(&mut self, action: Action, params: &RewardParams, rng: &mut R) -> Result<Transition> {
        if self.is_done() {
            return domain("the episode has already ended");
        }
        if !self.allowed().contains(action) {
            return Err(Error::PolicyViolation(format!(
                "booster not allowed in {} at {} months after the second dose",
                self.state(),
                self.offset()
            )));
        }
        let state = self.state();
        let row = self.mdp.mdp.row(self.state, action);
        let u = rng.gen::<f64>();
        let mut acc = 0.0;
        let mut next = None;
        for (j, p) in row.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                next = Some(j);
                if u < acc {
                    break;
                }
            }
        }
        self.state = next.expect("stochastic row");
        self.month += 1;
        let severe = self.state == TERMINAL;
        Ok(Transition {
            state,
            action,
            reward: reward(severe, action, params),
            next: self.state(),
            severe,
            general: false,
            done: self.is_done(),
        })
    }
}
