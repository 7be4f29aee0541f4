//! Online Q-learning against an [`Environment`]: the tabular learner and
//! a small neural baseline sharing its interaction loop and telemetry.

mod deep;
mod export;

pub use deep::{deep_policy, deep_q_values, train_deep, DeepQConfig, DeepRun, Divergence};
pub use export::{metrics_jsonl, policy_from_json, QTableDocument};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Eligible;
use crate::env::{Environment, Episode, Transition};
use crate::types::{state_index, Action, ActionSet, RewardParams, StateKey, NUM_STATES};
use crate::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    /// Indexed by state index, then action index.
    pub values: Vec<[f64; 2]>,
    pub visits: Vec<[u64; 2]>,
}

impl Default for QTable {
    fn default() -> Self {
        Self::new()
    }
}

impl QTable {
    pub fn new() -> Self {
        Self {
            values: vec![[0.0; 2]; NUM_STATES],
            visits: vec![[0; 2]; NUM_STATES],
        }
    }

    /// The value of a state-action pair; the terminal state is worth 0.
    pub fn get(&self, s: StateKey, a: Action) -> Result<f64> {
        if s.is_terminal() {
            return Ok(0.0);
        }
        Ok(self.values[state_index(s)?][a.index()])
    }

    /// Best value over the actions the state can ever allow.
    pub fn max_feasible(&self, s: StateKey) -> Result<f64> {
        if s.is_terminal() {
            return Ok(0.0);
        }
        let q = self.values[state_index(s)?];
        Ok(if s.feasible().allows_booster() { q[0].max(q[1]) } else { q[0] })
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub epsilon0: f64,
    pub beta0: f64,
    pub gamma: f64,
    pub lambda_eps: f64,
    pub lambda_beta: f64,
    pub k_eps: u64,
    pub k_beta: u64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            epsilon0: 0.5,
            beta0: 0.001,
            gamma: 0.99,
            lambda_eps: 0.99,
            lambda_beta: 0.998,
            k_eps: 5000,
            k_beta: 5000,
            epochs: 30,
            seed: 0,
        }
    }
}

impl LearnConfig {
    /// A zero learning rate is accepted so that a frozen run can be
    /// checked for leaving the table untouched.
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.epsilon0) {
            return domain(format!("initial exploration rate {} outside [0, 1]", self.epsilon0));
        }
        if !unit(self.beta0) {
            return domain(format!("initial learning rate {} outside [0, 1]", self.beta0));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return domain(format!("discount {} outside (0, 1)", self.gamma));
        }
        for (name, l) in [("exploration", self.lambda_eps), ("learning-rate", self.lambda_beta)] {
            if !(l > 0.0 && l <= 1.0) {
                return domain(format!("{name} decay {l} outside (0, 1]"));
            }
        }
        if self.k_eps == 0 || self.k_beta == 0 || self.epochs == 0 {
            return domain("decay intervals and epoch count must be positive");
        }
        Ok(())
    }
}

/// Exploration and learning rates driven by a global step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub epsilon: f64,
    pub beta: f64,
    pub steps: u64,
    lambda_eps: f64,
    lambda_beta: f64,
    k_eps: u64,
    k_beta: u64,
}

impl Schedule {
    pub fn new(cfg: &LearnConfig) -> Self {
        Self {
            epsilon: cfg.epsilon0,
            beta: cfg.beta0,
            steps: 0,
            lambda_eps: cfg.lambda_eps,
            lambda_beta: cfg.lambda_beta,
            k_eps: cfg.k_eps,
            k_beta: cfg.k_beta,
        }
    }

    /// Counts one step, decaying each rate when its interval completes.
    pub fn tick(&mut self) {
        self.steps += 1;
        if self.steps.is_multiple_of(self.k_eps) {
            self.epsilon *= self.lambda_eps;
        }
        if self.steps.is_multiple_of(self.k_beta) {
            self.beta *= self.lambda_beta;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Reward averaged over every individual and month of the epoch.
    pub mean_running_reward: f64,
    pub epsilon_end: f64,
    pub beta_end: f64,
    /// Share of steps that chose a booster.
    pub booster_rate: f64,
    pub steps: u64,
}

/// One temporal-difference update. A terminal successor contributes no
/// future value; otherwise the successor's best feasible action does.
pub fn q_update(q: &mut QTable, s: StateKey, a: Action, r: f64, s_next: StateKey, beta: f64, gamma: f64) -> Result<()> {
    if s.is_terminal() {
        return domain("no update from the terminal state");
    }
    let target = r + gamma * q.max_feasible(s_next)?;
    let i = state_index(s)?;
    let cell = &mut q.values[i][a.index()];
    *cell += beta * (target - *cell);
    q.visits[i][a.index()] += 1;
    Ok(())
}

/// ε-greedy over the mask with ties going to no booster. A mask without a
/// booster short-circuits and draws nothing from `rng`.
pub fn select_from<R: Rng + ?Sized>(values: [f64; 2], eps: f64, mask: ActionSet, rng: &mut R) -> Action {
    if !mask.allows_booster() {
        return Action::NoBooster;
    }
    if rng.gen::<f64>() < eps {
        if rng.gen::<bool>() {
            Action::Booster
        } else {
            Action::NoBooster
        }
    } else if values[1] > values[0] {
        Action::Booster
    } else {
        Action::NoBooster
    }
}

pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: StateKey, eps: f64, mask: ActionSet, rng: &mut R) -> Result<Action> {
    let values = [q.get(s, Action::NoBooster)?, q.get(s, Action::Booster)?];
    Ok(select_from(values, eps, mask, rng))
}

/// Greedy action in each of the 24 states; a booster is never chosen where
/// the recency band rules it out, and ties go to no booster.
pub fn greedy_policy(q: &QTable) -> Vec<Action> {
    StateKey::all_live()
        .zip(&q.values)
        .map(|(s, v)| {
            if s.feasible().allows_booster() && v[1] > v[0] {
                Action::Booster
            } else {
                Action::NoBooster
            }
        })
        .collect()
}

/// What an observer sees after each update.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo<'a> {
    pub transition: &'a Transition,
    /// Months since the second dose when the action was taken.
    pub offset: u32,
    pub epsilon: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularRun {
    pub q: QTable,
    pub metrics: Vec<EpochMetrics>,
}

/// Accumulates per-epoch telemetry.
#[derive(Default)]
pub(crate) struct EpochTally {
    reward: f64,
    boosters: u64,
    steps: u64,
}

impl EpochTally {
    pub(crate) fn add(&mut self, t: &Transition) {
        self.reward += t.reward;
        self.boosters += u64::from(t.action == Action::Booster);
        self.steps += 1;
    }

    pub(crate) fn finish(self, epoch: usize, schedule: &Schedule) -> EpochMetrics {
        let n = self.steps.max(1) as f64;
        EpochMetrics {
            epoch,
            mean_running_reward: self.reward / n,
            epsilon_end: schedule.epsilon,
            beta_end: schedule.beta,
            booster_rate: self.boosters as f64 / n,
            steps: self.steps,
        }
    }
}

pub fn train_tabular<E: Environment>(
    env: &E,
    patients: &[Eligible],
    cfg: &LearnConfig,
    params: &RewardParams,
) -> Result<TabularRun> {
    train_tabular_with(env, patients, cfg, params, |_, _| {})
}

/// Runs `cfg.epochs` passes over the patients in order, one episode each,
/// updating the table after every step. A single seeded stream drives both
/// the agent and the environment.
pub fn train_tabular_with<E: Environment>(
    env: &E,
    patients: &[Eligible],
    cfg: &LearnConfig,
    params: &RewardParams,
    mut observe: impl FnMut(&QTable, &StepInfo<'_>),
) -> Result<TabularRun> {
    cfg.validate()?;
    params.validate()?;
    if patients.is_empty() {
        return domain("no eligible patients to learn from");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = QTable::new();
    let mut schedule = Schedule::new(cfg);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut tally = EpochTally::default();
        for p in patients {
            let mut ep = env.begin(p)?;
            while !ep.is_done() {
                let s = ep.state();
                let offset = ep.offset();
                let a = select_action(&q, s, schedule.epsilon, ep.allowed(), &mut rng)?;
                let t = ep.step(a, params, &mut rng)?;
                q_update(&mut q, s, a, t.reward, t.next, schedule.beta, cfg.gamma)?;
                observe(
                    &q,
                    &StepInfo {
                        transition: &t,
                        offset,
                        epsilon: schedule.epsilon,
                        beta: schedule.beta,
                    },
                );
                schedule.tick();
                tally.add(&t);
            }
        }
        metrics.push(tally.finish(epoch, &schedule));
    }
    if q.values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("Q-table holds non-finite values".into()));
    }
    Ok(TabularRun { q, metrics })
}

/// Independent runs, one per seed, in parallel; results follow `seeds`.
pub fn train_replicates<E: Environment>(
    env: &E,
    patients: &[Eligible],
    cfg: &LearnConfig,
    params: &RewardParams,
    seeds: &[u64],
) -> Result<Vec<TabularRun>> {
    seeds
        .par_iter()
        .map(|&seed| train_tabular(env, patients, &LearnConfig { seed, ..cfg.clone() }, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AgeBand, RecencyBand};
    use proptest::prelude::*;

    fn live(i: usize) -> StateKey {
        StateKey::from_index(i).unwrap()
    }

    #[test]
    fn update_examples() {
        let mut q = QTable::new();
        q_update(&mut q, live(0), Action::NoBooster, -1.0, live(1), 0.001, 0.99).unwrap();
        assert_eq!(q.values[0][0], -0.001);
        assert_eq!(q.visits[0][0], 1);

        let mut q = QTable::new();
        let next = StateKey::live(AgeBand::A30_49, false, RecencyBand::M5_6);
        q.values[state_index(next).unwrap()] = [-2.0, -1.0];
        q_update(&mut q, live(0), Action::NoBooster, 0.0, next, 0.5, 0.99).unwrap();
        assert_eq!(q.values[0][0], 0.5 * (-0.99));

        let mut q = QTable::new();
        q_update(&mut q, live(4), Action::Booster, 0.0, live(5), 0.3, 0.99).unwrap();
        assert_eq!(q.values, QTable::new().values);

        let mut q = QTable::new();
        q.values[5] = [-3.0, -3.0];
        q_update(&mut q, live(4), Action::NoBooster, -1.0, StateKey::Terminal, 1.0, 0.99).unwrap();
        assert_eq!(q.values[4][0], -1.0);
        assert!(q_update(&mut q, StateKey::Terminal, Action::NoBooster, 0.0, live(0), 0.1, 0.9).is_err());
    }

    #[test]
    fn bootstrap_ignores_infeasible_booster_value() {
        let mut q = QTable::new();
        let young = StateKey::live(AgeBand::A18_29, false, RecencyBand::M0_4);
        q.values[0] = [-1.0, 5.0];
        assert_eq!(q.max_feasible(young).unwrap(), -1.0);
    }

    #[test]
    fn selection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = QTable::new();
        q.values[1] = [-0.2, -0.1];
        assert_eq!(select_action(&q, live(1), 1.0, ActionSet::NO_BOOSTER_ONLY, &mut rng).unwrap(), Action::NoBooster);
        assert_eq!(select_action(&q, live(1), 0.0, ActionSet::BOTH, &mut rng).unwrap(), Action::Booster);
        let n = 100_000;
        let boosters = (0..n)
            .filter(|_| select_action(&QTable::new(), live(1), 1.0, ActionSet::BOTH, &mut rng).unwrap() == Action::Booster)
            .count();
        let se = (0.25 / n as f64).sqrt();
        assert!((boosters as f64 / n as f64 - 0.5).abs() <= 3.0 * se);
    }

    #[test]
    fn greedy_policy_examples() {
        let mut q = QTable::new();
        assert!(greedy_policy(&q).iter().all(|a| *a == Action::NoBooster));
        let s = StateKey::live(AgeBand::A50_64, true, RecencyBand::M5_6);
        q.values[state_index(s).unwrap()] = [-0.2, -0.1];
        let m04 = StateKey::live(AgeBand::A50_64, true, RecencyBand::M0_4);
        q.values[state_index(m04).unwrap()] = [-0.2, -0.1];
        let policy = greedy_policy(&q);
        assert_eq!(policy.len(), 24);
        assert_eq!(policy[state_index(s).unwrap()], Action::Booster);
        assert_eq!(policy[state_index(m04).unwrap()], Action::NoBooster);
    }

    #[test]
    fn schedule_decays_on_global_intervals() {
        let mut s = Schedule::new(&LearnConfig::default());
        for _ in 0..4999 {
            s.tick();
        }
        assert_eq!((s.epsilon, s.beta), (0.5, 0.001));
        s.tick();
        assert_eq!((s.epsilon, s.beta), (0.495, 0.000998));
    }

    proptest! {
        #[test]
        fn updates_stay_within_reward_bounds(
            steps in proptest::collection::vec((0usize..24, 0usize..2, any::<bool>(), 0usize..25), 1..400),
            alpha in 0.0f64..60.0,
        ) {
            let params = RewardParams::new(alpha);
            let lower = params.min_reward() / (1.0 - 0.99);
            let mut q = QTable::new();
            for (s, a, severe, next) in steps {
                let a = Action::from_index(a).unwrap();
                let next = if next == 24 { StateKey::Terminal } else { live(next) };
                let r = crate::types::reward(severe, a, &params);
                q_update(&mut q, live(s), a, r, next, 0.3, 0.99).unwrap();
                prop_assert!(q.values.iter().flatten().all(|v| *v <= 0.0 && *v >= lower));
            }
        }
    }
}
