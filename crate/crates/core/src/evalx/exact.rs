use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{BoosterMdp, Eligible};
use crate::oracle::policy_evaluation_exact;
use crate::types::{state_index, Action, RecencyBand, StateKey, MIN_BOOSTER_GAP, NUM_STATES};
use crate::{domain, Result};

/// Infinite-horizon discounted values on the tabulated MDP, averaged over
/// the patients' starting states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactValues {
    pub table: f64,
    pub never: f64,
    pub random_month: f64,
    pub from_data: f64,
}

/// Value of waiting until offset `d`, boosting at the first feasible step
/// from then on, and waiting forever after.
fn boost_from(mdp: &BoosterMdp, v_never: &[f64], start: usize, d: u32) -> f64 {
    let m = &mdp.mdp;
    let gamma = mdp.reward.gamma;
    let n = m.n_states;
    let mut mass = vec![0.0; n];
    mass[start] = 1.0;
    let mut value = 0.0;
    let mut discount = 1.0;
    let mut offset = 1;
    while discount * mass.iter().sum::<f64>() > 1e-17 && offset < 100_000 {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let w = mass[s];
            if w == 0.0 {
                continue;
            }
            if offset >= d && m.is_feasible(s, Action::Booster) {
                value += discount * w * m.backup(s, Action::Booster, gamma, v_never);
                continue;
            }
            value += discount * w * m.reward(s, Action::NoBooster);
            for (t, p) in m.row(s, Action::NoBooster).iter().enumerate() {
                next[t] += w * p;
            }
        }
        mass = next;
        discount *= gamma;
        offset += 1;
    }
    value
}

/// Exact values of a stationary policy (24 live states) and of the three
/// baselines. Timed baselines that would boost inside the guideline gap
/// are counted as never boosting; the random month is averaged exactly
/// over its uniform range.
pub fn exact_policy_values(mdp: &BoosterMdp, patients: &[Eligible], policy: &[Action]) -> Result<ExactValues> {
    if patients.is_empty() {
        return domain("no eligible patients to weight start states");
    }
    if policy.len() != NUM_STATES {
        return domain(format!("policy covers {} states, expected {NUM_STATES}", policy.len()));
    }
    let gamma = mdp.reward.gamma;
    let v_table = policy_evaluation_exact(&mdp.mdp, &BoosterMdp::full_policy(policy), gamma)?;
    let v_never = policy_evaluation_exact(&mdp.mdp, &BoosterMdp::never_policy(), gamma)?;
    let mut memo: HashMap<(usize, u32), f64> = HashMap::new();
    let mut timed = |s: usize, d: Option<u32>| match d {
        Some(d) if d > MIN_BOOSTER_GAP => *memo.entry((s, d)).or_insert_with(|| boost_from(mdp, &v_never, s, d)),
        _ => v_never[s],
    };
    let mut sums = [0.0; 4];
    for p in patients {
        let s = state_index(StateKey::live(p.age, p.imm, RecencyBand::M0_4))?;
        let first = MIN_BOOSTER_GAP + 1;
        let last = p.decision_months();
        let random = if last >= first {
            (first..=last).map(|d| timed(s, Some(d))).sum::<f64>() / f64::from(last - first + 1)
        } else {
            v_never[s]
        };
        let observed = p.observed_booster_month.map(|b| b.saturating_sub(p.second_dose_month));
        sums[0] += v_table[s];
        sums[1] += v_never[s];
        sums[2] += random;
        sums[3] += timed(s, observed);
    }
    let n = patients.len() as f64;
    Ok(ExactValues {
        table: sums[0] / n,
        never: sums[1] / n,
        random_month: sums[2] / n,
        from_data: sums[3] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{tabulate_mdp, GroundTruthModel, Profile};
    use crate::oracle::value_iteration;
    use crate::types::{AgeBand, RewardParams};

    fn patient(d: Option<u32>) -> Eligible {
        Eligible {
            index: 0,
            patient_id: 0,
            age: AgeBand::ADULT[2],
            imm: false,
            second_dose_month: 3,
            observed_booster_month: d.map(|d| d + 3),
        }
    }

    #[test]
    fn baselines_are_bounded_by_the_optimum_and_gap_boosts_mean_never() {
        let gt = GroundTruthModel::default();
        let mdp = tabulate_mdp(&gt, &Profile::population(&gt), &RewardParams::new(0.04)).unwrap();
        let sol = value_iteration(&mdp.mdp, 0.99, 1e-12).unwrap();
        let opt = &sol.policy[..NUM_STATES];
        let patients: Vec<_> = [None, Some(2), Some(6), Some(12)].into_iter().map(patient).collect();
        let v = exact_policy_values(&mdp, &patients, opt).unwrap();
        for b in [v.never, v.random_month, v.from_data] {
            assert!(v.table >= b - 1e-12);
        }
        let gap = exact_policy_values(&mdp, &[patient(Some(3))], opt).unwrap();
        assert_eq!(gap.from_data, gap.never);
        let never = exact_policy_values(&mdp, &patients, &mdp_never()).unwrap();
        assert!((never.table - never.never).abs() < 1e-12);
    }

    fn mdp_never() -> Vec<Action> {
        vec![Action::NoBooster; NUM_STATES]
    }

    #[test]
    fn boosting_immediately_matches_the_one_step_lookahead_when_feasible() {
        let gt = GroundTruthModel::default();
        let mdp = tabulate_mdp(&gt, &Profile::population(&gt), &RewardParams::new(0.1)).unwrap();
        let v_never = policy_evaluation_exact(&mdp.mdp, &BoosterMdp::never_policy(), 0.99).unwrap();
        let s = state_index(StateKey::live(AgeBand::ADULT[0], true, RecencyBand::M7Plus)).unwrap();
        let direct = mdp.mdp.backup(s, Action::Booster, 0.99, &v_never);
        assert!((boost_from(&mdp, &v_never, s, 0) - direct).abs() < 1e-14);
    }
}
