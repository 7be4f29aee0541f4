use serde::{Deserialize, Serialize};

use super::{eligible, ComorbidityBand, Covariates, Gender, GroundTruthModel, Outcome, Race, Trajectory, Variant, VisitsBand};
use crate::oracle::TabularMdp;
use crate::types::{state_index, Action, AgeBand, RecencyBand, RewardForm, RewardParams, StateKey, HORIZON, NUM_STATES};
use crate::{domain, Result};

/// Monthly probability of leaving each recency band under no booster: the
/// reciprocal of the band width, so expected dwell times are exact.
pub const LEAVE_M0_4: f64 = 0.25;
pub const LEAVE_M5_6: f64 = 0.5;

/// Index of the absorbing terminal state in a tabulated booster MDP.
pub const TERMINAL: usize = NUM_STATES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub gender: Gender,
    pub race: Race,
    pub visits: VisitsBand,
    pub comorbidity: ComorbidityBand,
}

/// How the covariates outside the policy state are averaged out when
/// tabulating: a stratum mix per (age band, immunosuppression) cell plus
/// variant and prior-infection weights shared by all cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Indexed `2·adult_age + imm`; weights need not be normalised.
    pub cells: Vec<Vec<(Stratum, f64)>>,
    pub variant: [f64; 3],
    pub prior_general: f64,
}

fn cell_index(age: AgeBand, imm: bool) -> usize {
    2 * (age.index() - 1) + usize::from(imm)
}

impl Profile {
    /// Stratum mix implied by the population model, variants weighted by
    /// calendar months, no prior infection.
    pub fn population(gt: &GroundTruthModel) -> Self {
        let pop = &gt.population;
        let mut cells = vec![Vec::new(); 8];
        for &age in &AgeBand::ADULT {
            for imm in [false, true] {
                let mut cell = Vec::new();
                for &gender in Gender::ALL {
                    for &race in Race::ALL {
                        for &visits in VisitsBand::ALL {
                            for &comorbidity in ComorbidityBand::ALL {
                                let w = pop.stratum_probability(age, gender, race, visits, comorbidity, imm);
                                if w > 0.0 {
                                    cell.push((
                                        Stratum {
                                            gender,
                                            race,
                                            visits,
                                            comorbidity,
                                        },
                                        w,
                                    ));
                                }
                            }
                        }
                    }
                }
                cells[cell_index(age, imm)] = cell;
            }
        }
        let mut variant = [0.0; 3];
        for m in 1..=HORIZON {
            variant[gt.calendar.at(m).index()] += 1.0;
        }
        Self {
            cells,
            variant,
            prior_general: 0.0,
        }
    }

    /// Empirical mix over the decision months of eligible patients. Cells
    /// without eligible patients fall back to the population mix.
    pub fn from_cohort(gt: &GroundTruthModel, trajs: &[Trajectory]) -> Result<Self> {
        let patients = eligible(trajs);
        if patients.is_empty() {
            return domain("no eligible patients to build a tabulation profile from");
        }
        let fallback = Self::population(gt);
        let mut cells: Vec<Vec<(Stratum, f64)>> = vec![Vec::new(); 8];
        let mut variant = [0.0; 3];
        let (mut months, mut infected) = (0.0, 0.0);
        for p in &patients {
            let t = &trajs[p.index];
            let b = &t.baseline;
            let stratum = Stratum {
                gender: b.gender,
                race: b.race,
                visits: b.visits,
                comorbidity: b.comorbidity,
            };
            let cell = &mut cells[cell_index(p.age, p.imm)];
            match cell.iter_mut().find(|(s, _)| *s == stratum) {
                Some((_, w)) => *w += 1.0,
                None => cell.push((stratum, 1.0)),
            }
            for r in t.records.iter().filter(|r| r.month > p.second_dose_month) {
                variant[r.variant.index()] += 1.0;
                months += 1.0;
                infected += f64::from(u8::from(r.general_infection));
            }
        }
        for (cell, fb) in cells.iter_mut().zip(fallback.cells) {
            if cell.is_empty() {
                *cell = fb;
            }
        }
        if months == 0.0 {
            variant = fallback.variant;
        }
        Ok(Self {
            cells,
            variant,
            prior_general: if months > 0.0 { infected / months } else { 0.0 },
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = |w: &f64| *w >= 0.0 && w.is_finite();
        if self.cells.len() != 8 || self.cells.iter().any(|c| c.is_empty()) {
            return domain("profile needs a non-empty stratum mix for each of the 8 adult cells");
        }
        if self.cells.iter().any(|c| !c.iter().all(|(_, w)| ok(w)) || c.iter().map(|(_, w)| w).sum::<f64>() <= 0.0) {
            return domain("profile stratum weights must be nonnegative with positive total");
        }
        if !self.variant.iter().all(ok) || self.variant.iter().sum::<f64>() <= 0.0 {
            return domain("profile variant weights must be nonnegative with positive total");
        }
        if !(0.0..=1.0).contains(&self.prior_general) {
            return domain("prior infection weight must lie in [0, 1]");
        }
        Ok(())
    }
}

/// The 24-state booster MDP with an absorbing terminal state at index 24.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoosterMdp {
    pub mdp: TabularMdp,
    /// Mixed monthly severe-infection probability per state and action.
    pub p_severe: Vec<[f64; 2]>,
    pub reward: RewardParams,
}

impl BoosterMdp {
    /// Same dynamics under a different reward.
    pub fn with_reward(&self, reward: RewardParams) -> Result<Self> {
        reward.validate()?;
        let mut out = self.clone();
        out.reward = reward;
        for s in 0..NUM_STATES {
            for a in Action::ALL {
                out.mdp.set_reward(s, a, expected_reward(self.p_severe[s][a.index()], a, &reward));
            }
        }
        Ok(out)
    }

    /// Never boost, as a policy vector over all 25 states.
    pub fn never_policy() -> Vec<Action> {
        vec![Action::NoBooster; NUM_STATES + 1]
    }

    /// Extends a 24-state policy with the terminal state's only action.
    pub fn full_policy(policy: &[Action]) -> Vec<Action> {
        let mut out = policy.to_vec();
        out.push(Action::NoBooster);
        out
    }
}

fn expected_reward(p: f64, a: Action, params: &RewardParams) -> f64 {
    let x = a.index() as f64;
    match params.form {
        RewardForm::Multiplicative => -p * (1.0 + params.alpha * x),
        RewardForm::Additive => -p - params.alpha * x,
    }
}

/// Averages the ground-truth hazards over the profile for each state and
/// action, with the recency band advancing by geometric dwell. Under no
/// booster a patient holds two doses; a booster gives a third dose and
/// resets recency.
pub fn tabulate_mdp(gt: &GroundTruthModel, profile: &Profile, params: &RewardParams) -> Result<BoosterMdp> {
    gt.validate()?;
    profile.validate()?;
    params.validate()?;
    let vtotal: f64 = profile.variant.iter().sum();
    let mut mdp = TabularMdp::new(NUM_STATES + 1);
    let mut p_severe = vec![[0.0; 2]; NUM_STATES];
    for key in StateKey::all_live() {
        let StateKey::Live { age, imm, recency } = key else { unreachable!() };
        let s = state_index(key)?;
        let cell = &profile.cells[cell_index(age, imm)];
        let ctotal: f64 = cell.iter().map(|(_, w)| w).sum();
        for a in Action::ALL {
            let boosted = a == Action::Booster;
            let mut p = 0.0;
            for (st, w) in cell {
                for &variant in Variant::ALL {
                    let vw = profile.variant[variant.index()] / vtotal;
                    if vw == 0.0 {
                        continue;
                    }
                    for (general, gw) in [(true, profile.prior_general), (false, 1.0 - profile.prior_general)] {
                        if gw == 0.0 {
                            continue;
                        }
                        let cov = Covariates {
                            age,
                            gender: st.gender,
                            race: st.race,
                            visits: st.visits,
                            comorbidity: st.comorbidity,
                            imm,
                            variant,
                            num_vaccines: if boosted { 3 } else { 2 },
                            recency: Some(if boosted { RecencyBand::M0_4 } else { recency }),
                            booster: boosted,
                            general,
                        };
                        p += w / ctotal * vw * gw * gt.hazard(&cov, Outcome::Severe);
                    }
                }
            }
            p_severe[s][a.index()] = p;
            let row = mdp.row_mut(s, a);
            row[TERMINAL] = p;
            let stay = 1.0 - p;
            let to = |band| state_index(StateKey::live(age, imm, band)).expect("adult state");
            if boosted {
                row[to(RecencyBand::M0_4)] += stay;
            } else {
                match recency {
                    RecencyBand::M0_4 => {
                        row[to(RecencyBand::M0_4)] += stay * (1.0 - LEAVE_M0_4);
                        row[to(RecencyBand::M5_6)] += stay * LEAVE_M0_4;
                    }
                    RecencyBand::M5_6 => {
                        row[to(RecencyBand::M5_6)] += stay * (1.0 - LEAVE_M5_6);
                        row[to(RecencyBand::M7Plus)] += stay * LEAVE_M5_6;
                    }
                    RecencyBand::M7Plus => row[to(RecencyBand::M7Plus)] += stay,
                }
            }
            mdp.set_reward(s, a, expected_reward(p, a, params));
        }
        mdp.set_feasible(s, Action::Booster, key.feasible().allows_booster());
    }
    for a in Action::ALL {
        mdp.row_mut(TERMINAL, a)[TERMINAL] = 1.0;
    }
    mdp.set_feasible(TERMINAL, Action::Booster, false);
    mdp.validate()?;
    Ok(BoosterMdp {
        mdp,
        p_severe,
        reward: *params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::generate_cohort;
    use crate::oracle::value_iteration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_are_stochastic_and_masks_follow_recency() {
        let gt = GroundTruthModel::default();
        let trajs = generate_cohort(&gt, 3000, 8).unwrap();
        let profile = Profile::from_cohort(&gt, &trajs).unwrap();
        let m = tabulate_mdp(&gt, &profile, &RewardParams::new(0.04)).unwrap();
        for s in 0..=NUM_STATES {
            for a in Action::ALL {
                assert!((m.mdp.row(s, a).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        for key in StateKey::all_live() {
            let s = state_index(key).unwrap();
            assert_eq!(m.mdp.is_feasible(s, Action::Booster), key.recency() != Some(RecencyBand::M0_4));
            assert!(m.p_severe[s][0] > 0.0 && m.p_severe[s][0] < 0.05);
            assert!((m.mdp.reward(s, Action::Booster) + 1.04 * m.p_severe[s][1]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_hazards_give_a_pure_counter_chain() {
        let gt = GroundTruthModel::without_infections();
        let m = tabulate_mdp(&gt, &Profile::population(&gt), &RewardParams::new(0.04)).unwrap();
        for key in StateKey::all_live() {
            let s = state_index(key).unwrap();
            for a in Action::ALL {
                assert_eq!(m.mdp.row(s, a)[TERMINAL], 0.0);
            }
            if key.recency() == Some(RecencyBand::M7Plus) {
                assert_eq!(m.mdp.row(s, Action::NoBooster)[s], 1.0);
            }
        }
        let sol = value_iteration(&m.mdp, 0.99, 1e-10).unwrap();
        assert!(sol.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_row_matches_monte_carlo_of_the_generator() {
        // The tabulated severe probability of (A65plus, imm0, M7plus, N) is
        // a mixture over the profile; sample the mixture directly from the
        // generator's hazards and compare.
        let gt = GroundTruthModel::default();
        let profile = Profile::population(&gt);
        let m = tabulate_mdp(&gt, &profile, &RewardParams::new(0.0)).unwrap();
        let key = StateKey::live(AgeBand::A65Plus, false, RecencyBand::M7Plus);
        let s = state_index(key).unwrap();
        let cell = &profile.cells[cell_index(AgeBand::A65Plus, false)];
        let total: f64 = cell.iter().map(|(_, w)| w).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 1_000_000;
        let mut hits = 0u64;
        for _ in 0..draws {
            let mut u = rng.gen::<f64>() * total;
            let mut st = cell[cell.len() - 1].0;
            for (x, w) in cell {
                if u < *w {
                    st = *x;
                    break;
                }
                u -= w;
            }
            let month = rng.gen_range(1..=HORIZON);
            let cov = Covariates {
                age: AgeBand::A65Plus,
                gender: st.gender,
                race: st.race,
                visits: st.visits,
                comorbidity: st.comorbidity,
                imm: false,
                variant: gt.calendar.at(month),
                num_vaccines: 2,
                recency: Some(RecencyBand::M7Plus),
                booster: false,
                general: false,
            };
            hits += u64::from(rng.gen::<f64>() < gt.hazard(&cov, Outcome::Severe));
        }
        let p = m.mdp.row(s, Action::NoBooster)[TERMINAL];
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        let est = hits as f64 / draws as f64;
        assert!((est - p).abs() <= 3.0 * se, "{est} vs {p} (se {se})");
    }

    #[test]
    fn reweighting_rewards_keeps_dynamics() {
        let gt = GroundTruthModel::default();
        let profile = Profile::population(&gt);
        let a = tabulate_mdp(&gt, &profile, &RewardParams::new(0.04)).unwrap();
        let b = tabulate_mdp(&gt, &profile, &RewardParams::new(50.0)).unwrap();
        assert_eq!(a.with_reward(RewardParams::new(50.0)).unwrap(), b);
    }
}
