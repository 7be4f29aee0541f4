//! Policy evaluation: Monte Carlo rollouts against any environment, exact
//! values on the tabulated MDP, replicate reports, confidence tables and
//! vaccine-cost sweeps.

mod exact;

pub use exact::{exact_policy_values, ExactValues};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{patient_rng, Eligible};
use crate::env::{Environment, Episode};
use crate::qlearn::{greedy_policy, train_replicates, LearnConfig, QTable};
use crate::types::{state_index, Action, RewardParams, StateKey, MIN_BOOSTER_GAP, NUM_STATES};
use crate::{domain, Result};

/// How a policy chooses between boosting and waiting.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    /// Greedy in a learned table.
    QTableGreedy(QTable),
    /// Boost in the month the patient actually boosted.
    FromData,
    /// Boost in one uniformly drawn month from the fifth month after the
    /// second dose onwards.
    AlwaysRandomMonth,
    Never,
    /// An explicit action per state index.
    Fixed(Vec<Action>),
}

impl PolicySpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::QTableGreedy(_) => "table",
            Self::FromData => "data",
            Self::AlwaysRandomMonth => "all",
            Self::Never => "none",
            Self::Fixed(_) => "fixed",
        }
    }
}

/// First month offset (months since the second dose) at which a timed
/// policy boosts, or `None` for never. Offsets inside the guideline gap
/// are returned as-is so the caller can count them as violations.
fn target_offset<R: Rng + ?Sized>(policy: &PolicySpec, p: &Eligible, rng: &mut R) -> Option<u32> {
    match policy {
        PolicySpec::FromData => p.observed_booster_month.map(|b| b.saturating_sub(p.second_dose_month)),
        PolicySpec::AlwaysRandomMonth => {
            let first = MIN_BOOSTER_GAP + 1;
            let last = p.decision_months();
            (last >= first).then(|| rng.gen_range(first..=last))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub patients: u64,
    pub person_months: u64,
    pub total_reward: f64,
    /// Reward summed over steps divided by person-months.
    pub mean_reward: f64,
    /// Mean per-patient discounted return and its standard error.
    pub mean_return: f64,
    pub return_se: f64,
    pub severe: u64,
    pub boosters: u64,
    /// Timed boosters falling inside the guideline gap, coerced to waiting.
    pub violations: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct PatientOutcome {
    months: u64,
    reward: f64,
    discounted: f64,
    severe: u64,
    boosters: u64,
    violations: u64,
}

fn run_patient<E: Environment>(
    env: &E,
    p: &Eligible,
    policy: &PolicySpec,
    table: Option<&[Action]>,
    params: &RewardParams,
    seed: u64,
) -> Result<PatientOutcome> {
    let mut rng = patient_rng(seed, p.patient_id);
    let mut out = PatientOutcome::default();
    let mut target = target_offset(policy, p, &mut rng);
    if target.is_some_and(|d| d <= MIN_BOOSTER_GAP) {
        out.violations += 1;
        target = None;
    }
    let mut boosted = false;
    let mut discount = 1.0;
    let mut ep = env.begin(p)?;
    while !ep.is_done() {
        let allowed = ep.allowed();
        let wanted = match (policy, table) {
            (_, Some(t)) => match ep.state() {
                StateKey::Terminal => Action::NoBooster,
                // greedy within the allowed set, as during training
                s if allowed.contains(t[state_index(s)?]) => t[state_index(s)?],
                _ => Action::NoBooster,
            },
            (PolicySpec::FromData | PolicySpec::AlwaysRandomMonth, _) => {
                if !boosted && target.is_some_and(|d| ep.offset() >= d) && allowed.allows_booster() {
                    Action::Booster
                } else {
                    Action::NoBooster
                }
            }
            _ => Action::NoBooster,
        };
        let action = if allowed.contains(wanted) {
            wanted
        } else {
            out.violations += 1;
            Action::NoBooster
        };
        let t = ep.step(action, params, &mut rng)?;
        boosted |= action == Action::Booster;
        out.months += 1;
        out.reward += t.reward;
        out.discounted += discount * t.reward;
        discount *= params.gamma;
        out.severe += u64::from(t.severe);
        out.boosters += u64::from(action == Action::Booster);
    }
    Ok(out)
}

/// Simulates every patient from the month after their second dose to the
/// end of follow-up under `policy`, acting greedily. Each patient has its
/// own random stream derived from `seed`, so the result is deterministic
/// and independent of scheduling.
pub fn rollout<E: Environment>(
    env: &E,
    patients: &[Eligible],
    policy: &PolicySpec,
    params: &RewardParams,
    seed: u64,
) -> Result<RolloutSummary> {
    params.validate()?;
    if patients.is_empty() {
        return domain("no eligible patients to evaluate");
    }
    let table = match policy {
        PolicySpec::QTableGreedy(q) => Some(greedy_policy(q)),
        PolicySpec::Fixed(p) if p.len() == NUM_STATES => Some(p.clone()),
        PolicySpec::Fixed(p) => return domain(format!("fixed policy has {} states, expected {NUM_STATES}", p.len())),
        _ => None,
    };
    let outcomes: Vec<PatientOutcome> = patients
        .par_iter()
        .map(|p| run_patient(env, p, policy, table.as_deref(), params, seed))
        .collect::<Result<_>>()?;
    let mut s = RolloutSummary {
        patients: outcomes.len() as u64,
        ..Default::default()
    };
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for o in &outcomes {
        s.person_months += o.months;
        s.total_reward += o.reward;
        s.severe += o.severe;
        s.boosters += o.boosters;
        s.violations += o.violations;
        sum += o.discounted;
        sum_sq += o.discounted * o.discounted;
    }
    let n = outcomes.len() as f64;
    s.mean_reward = if s.person_months > 0 { s.total_reward / s.person_months as f64 } else { 0.0 };
    s.mean_return = sum / n;
    s.return_se = if n > 1.0 { ((sum_sq - n * s.mean_return.powi(2)).max(0.0) / (n - 1.0) / n).sqrt() } else { 0.0 };
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub policy: String,
    /// Mean over replicates of the per-person-month reward.
    pub mean_reward: f64,
    /// Standard deviation across replicates; only for replicated policies.
    pub sd: Option<f64>,
    pub replicate_means: Vec<f64>,
    pub violations: u64,
}

/// Rewards are small negatives; plots show them negated and multiplied by
/// `display_scale`, while stored values stay raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub replicates: usize,
    pub seeds: Vec<u64>,
    pub baseline_seed: u64,
    pub display_scale: f64,
    pub entries: Vec<PolicyEntry>,
}

impl EvalReport {
    pub fn entry(&self, policy: &str) -> Option<&PolicyEntry> {
        self.entries.iter().find(|e| e.policy == policy)
    }

    pub fn display_value(&self, mean_reward: f64) -> f64 {
        -mean_reward * self.display_scale
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,alpha,mean_reward,sd,replicates,violations,negative_reward_scaled\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.policy,
                self.alpha,
                e.mean_reward,
                e.sd.map(|v| v.to_string()).unwrap_or_default(),
                e.replicate_means.len(),
                e.violations,
                self.display_value(e.mean_reward)
            ));
        }
        out
    }
}

/// Sample standard deviation, 0 for a single value.
fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Evaluates each replicate's greedy policy with its own seed, then the
/// three baselines once each with `baseline_seed`.
pub fn compare_policies<E: Environment>(
    env: &E,
    patients: &[Eligible],
    qtables: &[QTable],
    params: &RewardParams,
    seeds: &[u64],
    baseline_seed: u64,
) -> Result<EvalReport> {
    if qtables.is_empty() {
        return domain("at least one replicate Q-table is required");
    }
    if seeds.len() != qtables.len() {
        return domain(format!("{} seeds for {} replicate tables", seeds.len(), qtables.len()));
    }
    let runs: Vec<RolloutSummary> = qtables
        .iter()
        .zip(seeds)
        .map(|(q, &seed)| rollout(env, patients, &PolicySpec::QTableGreedy(q.clone()), params, seed))
        .collect::<Result<_>>()?;
    let means: Vec<f64> = runs.iter().map(|r| r.mean_reward).collect();
    let mut entries = vec![PolicyEntry {
        policy: "table".into(),
        mean_reward: means.iter().sum::<f64>() / means.len() as f64,
        sd: Some(sd(&means)),
        replicate_means: means,
        violations: runs.iter().map(|r| r.violations).sum(),
    }];
    for policy in [PolicySpec::FromData, PolicySpec::AlwaysRandomMonth, PolicySpec::Never] {
        let r = rollout(env, patients, &policy, params, baseline_seed)?;
        entries.push(PolicyEntry {
            policy: policy.label().into(),
            mean_reward: r.mean_reward,
            sd: None,
            replicate_means: vec![r.mean_reward],
            violations: r.violations,
        });
    }
    Ok(EvalReport {
        alpha: params.alpha,
        replicates: qtables.len(),
        seeds: seeds.to_vec(),
        baseline_seed,
        display_scale: 1e4,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub state: StateKey,
    pub count: usize,
    pub confidence: f64,
    pub recommend: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTable {
    pub replicates: usize,
    pub rows: Vec<ConfidenceRow>,
}

impl ConfidenceTable {
    pub fn recommendations(&self) -> usize {
        self.rows.iter().filter(|r| r.recommend).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,count,replicates,confidence,recommend\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.state,
                r.count,
                self.replicates,
                r.confidence,
                u8::from(r.recommend)
            ));
        }
        out
    }
}

/// Share of replicates whose policy boosts in each state; a booster is
/// recommended only when strictly more than half agree.
pub fn confidence_from_policies(policies: &[Vec<Action>]) -> Result<ConfidenceTable> {
    if policies.is_empty() {
        return domain("confidence needs at least one replicate");
    }
    if policies.iter().any(|p| p.len() != NUM_STATES) {
        return domain(format!("every replicate policy must cover {NUM_STATES} states"));
    }
    let n = policies.len();
    let rows = StateKey::all_live()
        .enumerate()
        .map(|(i, state)| {
            let count = policies.iter().filter(|p| p[i] == Action::Booster).count();
            ConfidenceRow {
                state,
                count,
                confidence: count as f64 / n as f64,
                recommend: 2 * count > n,
            }
        })
        .collect();
    Ok(ConfidenceTable { replicates: n, rows })
}

pub fn confidence_table(qtables: &[QTable]) -> Result<ConfidenceTable> {
    confidence_from_policies(&qtables.iter().map(greedy_policy).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub tables: Vec<QTable>,
    pub report: EvalReport,
    pub confidence: ConfidenceTable,
}

impl SweepPoint {
    pub fn recommendations(&self) -> usize {
        self.confidence.recommendations()
    }
}

/// The vaccine costs examined by default.
pub const DEFAULT_ALPHAS: [f64; 6] = [0.01, 0.03, 0.04, 0.05, 0.1, 50.0];

/// Trains `seeds.len()` replicates per cost and evaluates them.
pub fn alpha_sweep<E: Environment>(
    env: &E,
    patients: &[Eligible],
    alphas: &[f64],
    base: &RewardParams,
    cfg: &LearnConfig,
    seeds: &[u64],
    baseline_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() {
        return domain("the cost grid is empty");
    }
    alphas
        .iter()
        .map(|&alpha| {
            let params = RewardParams { alpha, ..*base };
            let tables: Vec<QTable> = train_replicates(env, patients, cfg, &params, seeds)?
                .into_iter()
                .map(|r| r.q)
                .collect();
            let report = compare_policies(env, patients, &tables, &params, seeds, baseline_seed)?;
            let confidence = confidence_table(&tables)?;
            Ok(SweepPoint {
                alpha,
                tables,
                report,
                confidence,
            })
        })
        .collect()
}

/// Plot-ready rows `policy,alpha,replicate,mean_reward`.
pub fn long_format_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("policy,alpha,replicate,mean_reward\n");
    for r in reports {
        for e in &r.entries {
            for (i, m) in e.replicate_means.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", e.policy, r.alpha, i, m));
            }
        }
    }
    out
}

/// Vaccine cost implied by the ratio of mortality after a booster to
/// mortality after a severe infection.
pub fn alpha_proxy(mortality_after_booster: f64, mortality_after_severe: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mortality_after_booster) {
        return domain(format!("booster mortality {mortality_after_booster} outside [0, 1]"));
    }
    if !(mortality_after_severe > 0.0 && mortality_after_severe <= 1.0) {
        return domain(format!("severe-infection mortality {mortality_after_severe} must lie in (0, 1]"));
    }
    Ok(mortality_after_booster / mortality_after_severe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{eligible, generate_cohort, GroundTruthModel, Trajectory};
    use crate::env::{ConstantModel, RnnEnv};

    fn cohort() -> Vec<Trajectory> {
        generate_cohort(&GroundTruthModel::default(), 1500, 12).unwrap()
    }

    #[test]
    fn proxy_examples() {
        assert!((alpha_proxy(0.0004, 0.0105).unwrap() - 0.0381).abs() < 1e-4);
        assert_eq!(alpha_proxy(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(alpha_proxy(0.0, 0.2).unwrap(), 0.0);
        assert!(alpha_proxy(0.1, 0.0).is_err());
    }

    #[test]
    fn confidence_threshold_is_strict() {
        let with = |k: usize| -> Vec<Vec<Action>> {
            (0..20)
                .map(|r| {
                    let mut p = vec![Action::NoBooster; NUM_STATES];
                    if r < k {
                        p[2] = Action::Booster;
                    }
                    p
                })
                .collect()
        };
        for (k, expect) in [(10, false), (11, true), (12, true), (20, true)] {
            let t = confidence_from_policies(&with(k)).unwrap();
            assert_eq!(t.rows[2].recommend, expect);
            assert_eq!(t.rows[2].confidence, k as f64 / 20.0);
        }
        let zero = confidence_table(&vec![QTable::new(); 20]).unwrap();
        assert!(zero.rows.iter().all(|r| r.confidence == 0.0 && !r.recommend));
        assert!(confidence_table(&[]).is_err());
        let mut shuffled = with(13);
        shuffled.reverse();
        assert_eq!(confidence_from_policies(&shuffled).unwrap(), confidence_from_policies(&with(13)).unwrap());
    }

    #[test]
    fn never_policy_reward_is_minus_the_severe_rate() {
        let trajs = cohort();
        let patients = eligible(&trajs);
        let gt = GroundTruthModel::default();
        let env = RnnEnv { model: &gt, trajs: &trajs };
        let r = rollout(&env, &patients, &PolicySpec::Never, &RewardParams::new(0.04), 5).unwrap();
        assert_eq!(r.mean_reward, -(r.severe as f64) / r.person_months as f64);
        assert_eq!((r.boosters, r.violations), (0, 0));
        let again = rollout(&env, &patients, &PolicySpec::Never, &RewardParams::new(0.04), 5).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn zero_hazards_give_zero_reward_for_every_policy() {
        let trajs = cohort();
        let patients = eligible(&trajs);
        let safe = ConstantModel::new(0.0, 0.0);
        let env = RnnEnv { model: &safe, trajs: &trajs };
        let mut always = QTable::new();
        for v in &mut always.values {
            v[1] = 1.0;
        }
        for policy in [
            PolicySpec::Never,
            PolicySpec::FromData,
            PolicySpec::AlwaysRandomMonth,
            PolicySpec::QTableGreedy(always),
        ] {
            let r = rollout(&env, &patients, &policy, &RewardParams::new(0.04), 1).unwrap();
            assert_eq!(r.mean_reward, 0.0, "{}", policy.label());
            if !matches!(policy, PolicySpec::FromData) {
                assert_eq!(r.violations, 0, "{}", policy.label());
            }
        }
    }

    #[test]
    fn report_has_four_entries_with_replicate_sd() {
        let trajs = cohort();
        let patients = eligible(&trajs);
        let gt = GroundTruthModel::default();
        let env = RnnEnv { model: &gt, trajs: &trajs };
        let mut a = QTable::new();
        a.values.iter_mut().for_each(|v| v[1] = 1.0);
        let tables = vec![QTable::new(), a];
        let rep = compare_policies(&env, &patients, &tables, &RewardParams::new(0.04), &[1, 2], 9).unwrap();
        assert_eq!(rep.entries.len(), 4);
        let t = rep.entry("table").unwrap();
        let m = &t.replicate_means;
        let mean = (m[0] + m[1]) / 2.0;
        let hand = (((m[0] - mean).powi(2) + (m[1] - mean).powi(2)) / 1.0).sqrt();
        assert!((t.sd.unwrap() - hand).abs() < 1e-15);
        assert!(rep.entry("none").unwrap().sd.is_none());
        for e in &rep.entries {
            assert!(e.mean_reward <= 0.0 && e.mean_reward >= -(1.04));
        }
        assert_eq!(long_format_csv(&[rep]).lines().count(), 1 + 2 + 3);
    }
}
