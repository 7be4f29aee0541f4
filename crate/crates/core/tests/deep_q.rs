use booster_rl::cohort::{BoosterMdp, Eligible, TERMINAL};
use booster_rl::env::OracleEnv;
use booster_rl::oracle::{value_iteration, TabularMdp};
use booster_rl::qlearn::{deep_policy, deep_q_values, train_deep, DeepQConfig, LearnConfig};
use booster_rl::types::{state_index, Action, AgeBand, RecencyBand, RewardParams, StateKey, NUM_STATES};

/// Two reachable states: a fresh one that drifts into a stale one, where
/// waiting is far riskier than boosting back to fresh.
fn toy(params: RewardParams) -> (BoosterMdp, usize, usize) {
    let age = AgeBand::ADULT[0];
    let fresh = state_index(StateKey::live(age, false, RecencyBand::M0_4)).unwrap();
    let stale = state_index(StateKey::live(age, false, RecencyBand::M7Plus)).unwrap();
    let mut m = TabularMdp::new(NUM_STATES + 1);
    let mut p_severe = vec![[0.0, 0.0]; NUM_STATES + 1];
    for s in 0..=NUM_STATES {
        m.row_mut(s, Action::NoBooster)[s] = 1.0;
        m.row_mut(s, Action::Booster)[s] = 1.0;
        m.set_feasible(s, Action::Booster, false);
    }
    let mut set = |m: &mut TabularMdp, s: usize, a: Action, to: usize, p: f64| {
        let row = m.row_mut(s, a);
        row.fill(0.0);
        row[to] = 1.0 - p;
        row[TERMINAL] = p;
        let cost = if a == Action::Booster { 1.0 + params.alpha } else { 1.0 };
        m.set_reward(s, a, -p * cost);
        p_severe[s][a.index()] = p;
    };
    set(&mut m, fresh, Action::NoBooster, stale, 0.01);
    set(&mut m, stale, Action::NoBooster, stale, 0.15);
    m.set_feasible(stale, Action::Booster, true);
    set(&mut m, stale, Action::Booster, fresh, 0.005);
    m.validate().unwrap();
    (
        BoosterMdp {
            mdp: m,
            p_severe,
            reward: params,
        },
        fresh,
        stale,
    )
}

#[test]
fn deep_q_recovers_the_toy_optimum() {
    let params = RewardParams::new(0.04);
    let (mdp, fresh, stale) = toy(params);
    let sol = value_iteration(&mdp.mdp, params.gamma, 1e-12).unwrap();
    assert_eq!(sol.policy[stale], Action::Booster);
    let patients: Vec<Eligible> = (0..200)
        .map(|i| Eligible {
            index: i,
            patient_id: i as u64,
            age: AgeBand::ADULT[0],
            imm: false,
            second_dose_month: 1,
            observed_booster_month: None,
        })
        .collect();
    let cfg = DeepQConfig {
        learn: LearnConfig {
            epochs: 15,
            seed: 3,
            ..LearnConfig::default()
        },
        ..DeepQConfig::named("64-3").unwrap()
    };
    let run = train_deep(&OracleEnv { mdp: &mdp }, &patients, &cfg, &params).unwrap();
    assert!(run.diverged.is_none(), "{:?}", run.diverged);
    assert_eq!(run.metrics.len(), 15);
    let policy = deep_policy(&run.net);
    assert_eq!(policy[stale], Action::Booster);
    assert_eq!(policy[fresh], Action::NoBooster);
    let q = deep_q_values(&run.net);
    let q_star = sol.q[stale][Action::Booster.index()].unwrap();
    assert!(
        (q[stale][1] - q_star).abs() < 0.5 * q_star.abs(),
        "learned {} against optimum {q_star}",
        q[stale][1]
    );
}
