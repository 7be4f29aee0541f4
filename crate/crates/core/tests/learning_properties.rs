use booster_rl::cohort::{
    eligible, generate_cohort, tabulate_mdp, BoosterMdp, Eligible, GroundTruthModel, Profile, Trajectory, TERMINAL,
};
use booster_rl::env::{ConstantModel, OracleEnv, RnnEnv};
use booster_rl::evalx::{rollout, PolicySpec};
use booster_rl::oracle::value_iteration;
use booster_rl::qlearn::{train_tabular, train_tabular_with, LearnConfig};
use booster_rl::types::{state_index, Action, RecencyBand, RewardParams, StateKey, MIN_BOOSTER_GAP, NUM_STATES};
use proptest::prelude::*;

fn cohort(n: usize, seed: u64) -> Vec<Trajectory> {
    generate_cohort(&GroundTruthModel::default(), n, seed).unwrap()
}

fn short(epochs: usize, seed: u64) -> LearnConfig {
    LearnConfig {
        epochs,
        seed,
        ..LearnConfig::default()
    }
}

#[test]
fn constant_stub_severe_frequency_matches_its_probability() {
    let trajs = cohort(3000, 1);
    let patients = eligible(&trajs);
    let p = 0.01;
    let stub = ConstantModel::new(p, 0.05);
    let env = RnnEnv { model: &stub, trajs: &trajs };
    let (mut steps, mut severe) = (0u64, 0u64);
    train_tabular_with(&env, &patients, &short(6, 3), &RewardParams::new(0.04), |_, info| {
        steps += 1;
        severe += u64::from(info.transition.severe);
    })
    .unwrap();
    assert!(steps >= 100_000, "only {steps} steps");
    let freq = severe as f64 / steps as f64;
    let se = (p * (1.0 - p) / steps as f64).sqrt();
    assert!((freq - p).abs() < 4.0 * se, "frequency {freq} vs {p} (se {se})");
}

#[test]
fn no_booster_is_ever_taken_inside_the_gap() {
    let trajs = cohort(1500, 2);
    let patients = eligible(&trajs);
    let gt = GroundTruthModel::default();
    let params = RewardParams::new(0.01);
    let mdp = tabulate_mdp(&gt, &Profile::from_cohort(&gt, &trajs).unwrap(), &params).unwrap();
    let mut seen = [0u64; 2];
    let mut check = |offset: u32, a: Action| {
        assert!(offset > MIN_BOOSTER_GAP || a == Action::NoBooster, "booster at offset {offset}");
        seen[a.index()] += 1;
    };
    train_tabular_with(&RnnEnv { model: &gt, trajs: &trajs }, &patients, &short(2, 4), &params, |_, i| {
        check(i.offset, i.transition.action)
    })
    .unwrap();
    train_tabular_with(&OracleEnv { mdp: &mdp }, &patients, &short(2, 4), &params, |_, i| {
        check(i.offset, i.transition.action)
    })
    .unwrap();
    assert!(seen[1] > 0, "exploration never boosted");
}

#[test]
fn zero_learning_rate_leaves_the_table_untouched() {
    let trajs = cohort(800, 3);
    let patients = eligible(&trajs);
    let gt = GroundTruthModel::default();
    let cfg = LearnConfig {
        beta0: 0.0,
        ..short(2, 1)
    };
    let run = train_tabular(&RnnEnv { model: &gt, trajs: &trajs }, &patients, &cfg, &RewardParams::new(0.04)).unwrap();
    assert!(run.q.values.iter().all(|v| *v == [0.0, 0.0]));
    let steps: u64 = run.metrics.iter().map(|m| m.steps).sum();
    assert_eq!(run.q.total_visits(), steps);
}

#[test]
fn same_seed_same_table_different_seed_different_table() {
    let trajs = cohort(800, 4);
    let patients = eligible(&trajs);
    let gt = GroundTruthModel::default();
    let env = RnnEnv { model: &gt, trajs: &trajs };
    let params = RewardParams::new(0.04);
    let a = train_tabular(&env, &patients, &short(2, 9), &params).unwrap();
    let b = train_tabular(&env, &patients, &short(2, 9), &params).unwrap();
    let c = train_tabular(&env, &patients, &short(2, 10), &params).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.q, c.q);
}

/// Expected discounted return over each patient's finite follow-up,
/// respecting the gap mask, by forward propagation of the state
/// distribution; written independently of the library's evaluators.
fn finite_horizon_value(mdp: &BoosterMdp, policy: &[Action], p: &Eligible, gamma: f64) -> f64 {
    let n = mdp.mdp.n_states;
    let start = state_index(StateKey::live(p.age, p.imm, RecencyBand::M0_4)).unwrap();
    let mut mass = vec![0.0; n];
    mass[start] = 1.0;
    let mut value = 0.0;
    for k in 0..p.decision_months() {
        let offset = k + 1;
        let mut next = vec![0.0; n];
        for s in 0..n {
            if mass[s] == 0.0 || s == TERMINAL {
                continue;
            }
            let mut a = policy[s];
            if a == Action::Booster && (offset <= MIN_BOOSTER_GAP || !mdp.mdp.is_feasible(s, a)) {
                a = Action::NoBooster;
            }
            value += gamma.powi(k as i32) * mass[s] * mdp.mdp.reward(s, a);
            for (t, q) in mdp.mdp.row(s, a).iter().enumerate() {
                next[t] += mass[s] * q;
            }
        }
        mass = next;
    }
    value
}

#[test]
fn optimal_policy_rollouts_match_the_exact_finite_horizon_value() {
    let trajs = cohort(4000, 6);
    let patients = eligible(&trajs);
    let gt = GroundTruthModel::default();
    let params = RewardParams::new(0.04);
    let mdp = tabulate_mdp(&gt, &Profile::from_cohort(&gt, &trajs).unwrap(), &params).unwrap();
    let sol = value_iteration(&mdp.mdp, params.gamma, 1e-12).unwrap();
    let policy = sol.policy[..NUM_STATES].to_vec();
    let exact: f64 =
        patients.iter().map(|p| finite_horizon_value(&mdp, &policy, p, params.gamma)).sum::<f64>() / patients.len() as f64;
    let env = OracleEnv { mdp: &mdp };
    // several independent seeds pooled, each within its own error
    for seed in [1, 2, 3] {
        let r = rollout(&env, &patients, &PolicySpec::Fixed(policy.clone()), &params, seed).unwrap();
        assert!(
            (r.mean_return - exact).abs() < 3.5 * r.return_se,
            "seed {seed}: rollout {} vs exact {exact} (se {})",
            r.mean_return,
            r.return_se
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn visits_sum_to_steps_and_values_stay_bounded(seed in 0u64..1000, alpha in 0.0f64..2.0) {
        let trajs = cohort(300, seed);
        let patients = eligible(&trajs);
        prop_assume!(!patients.is_empty());
        let gt = GroundTruthModel::default();
        let params = RewardParams::new(alpha);
        let run = train_tabular(&RnnEnv { model: &gt, trajs: &trajs }, &patients, &short(2, seed), &params).unwrap();
        let steps: u64 = run.metrics.iter().map(|m| m.steps).sum();
        prop_assert_eq!(run.q.total_visits(), steps);
        let floor = params.min_reward() / (1.0 - params.gamma);
        for v in run.q.values.iter().flatten() {
            prop_assert!(*v <= 0.0 && *v >= floor);
        }
        for m in &run.metrics {
            prop_assert!((0.0..=1.0).contains(&m.booster_rate));
            prop_assert!(m.mean_running_reward <= 0.0);
        }
    }
}
