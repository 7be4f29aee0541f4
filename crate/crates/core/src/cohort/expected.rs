use serde::{Deserialize, Serialize};

use super::{ComorbidityBand, Covariates, Gender, GroundTruthModel, Outcome, Race, VisitsBand};
use crate::types::{band_of, AgeBand, HORIZON};

/// Exact per-patient expectations of the generator, month by month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    /// Expected person-months contributed in month `t` (index `t - 1`),
    /// i.e. the probability of still being followed.
    pub at_risk: Vec<f64>,
    pub severe: Vec<f64>,
    pub general: Vec<f64>,
}

impl ExpectedRates {
    pub fn monthly_severe_per_mille(&self) -> Vec<f64> {
        self.at_risk.iter().zip(&self.severe).map(|(n, s)| 1000.0 * s / n).collect()
    }

    pub fn monthly_general_per_mille(&self) -> Vec<f64> {
        self.at_risk.iter().zip(&self.general).map(|(n, g)| 1000.0 * g / n).collect()
    }

    /// Ratio of expected events to expected person-months.
    pub fn severe_per_mille(&self) -> f64 {
        1000.0 * self.severe.iter().sum::<f64>() / self.at_risk.iter().sum::<f64>()
    }

    pub fn general_per_mille(&self) -> f64 {
        1000.0 * self.general.iter().sum::<f64>() / self.at_risk.iter().sum::<f64>()
    }
}

/// Vaccination status and prior infection carried from month to month.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Latent {
    doses: u8,
    /// Months since the last dose, saturated at `cap`; unused without doses.
    since: u32,
    general: bool,
}

/// Forward-propagates the generator's distribution over the latent
/// vaccination and infection state for every baseline stratum, which
/// yields the expected monthly counts without sampling.
pub fn expected_rates(gt: &GroundTruthModel) -> ExpectedRates {
    let months = HORIZON as usize;
    let mut out = ExpectedRates {
        at_risk: vec![0.0; months],
        severe: vec![0.0; months],
        general: vec![0.0; months],
    };
    // Saturating the counter is exact once it exceeds both the last
    // recency boundary and the booster gap.
    let cap = 7.max(gt.uptake.booster_min_gap);
    let pop = &gt.population;
    for &age in &AgeBand::ALL {
        for &gender in Gender::ALL {
            for &race in Race::ALL {
                for &visits in VisitsBand::ALL {
                    for &comorbidity in ComorbidityBand::ALL {
                        for imm in [false, true] {
                            let w = pop.stratum_probability(age, gender, race, visits, comorbidity, imm);
                            if w == 0.0 {
                                continue;
                            }
                            let base = Covariates {
                                age,
                                gender,
                                race,
                                visits,
                                comorbidity,
                                imm,
                                variant: gt.calendar.at(1),
                                num_vaccines: 0,
                                recency: None,
                                booster: false,
                                general: false,
                            };
                            propagate(gt, base, w, cap, &mut out);
                        }
                    }
                }
            }
        }
    }
    out
}

fn propagate(gt: &GroundTruthModel, base: Covariates, weight: f64, cap: u32, out: &mut ExpectedRates) {
    let mut dist: Vec<(Latent, f64)> = vec![(
        Latent {
            doses: 0,
            since: 0,
            general: false,
        },
        1.0,
    )];
    let mut next: Vec<(Latent, f64)> = Vec::new();
    for month in 1..=HORIZON {
        let prev_variant = gt.calendar.at(month.saturating_sub(1).max(1));
        let t = month as usize - 1;
        next.clear();
        for &(l, mass) in &dist {
            let cov = Covariates {
                variant: prev_variant,
                num_vaccines: l.doses,
                recency: (l.doses > 0).then(|| band_of(l.since)),
                general: l.general,
                ..base
            };
            let ps = gt.hazard(&cov, Outcome::Severe);
            let pg = gt.hazard(&cov, Outcome::General);
            out.at_risk[t] += weight * mass;
            out.severe[t] += weight * mass * ps;
            out.general[t] += weight * mass * pg;
            let alive = mass * (1.0 - ps);
            let since_start = (l.doses > 0).then(|| (l.since + 1).min(cap));
            let pd = gt.uptake.dose_probability(month, base.age, l.doses, since_start);
            for (general, pgen) in [(true, pg), (false, 1.0 - pg)] {
                let m = alive * pgen;
                if m == 0.0 {
                    continue;
                }
                let dosed = Latent {
                    doses: l.doses + 1,
                    since: 0,
                    general,
                };
                let waited = Latent {
                    doses: l.doses,
                    since: since_start.unwrap_or(0),
                    general,
                };
                for (state, p) in [(dosed, pd), (waited, 1.0 - pd)] {
                    if p > 0.0 {
                        add(&mut next, state, m * p);
                    }
                }
            }
        }
        std::mem::swap(&mut dist, &mut next);
    }
}

fn add(dist: &mut Vec<(Latent, f64)>, state: Latent, mass: f64) {
    match dist.iter_mut().find(|(l, _)| *l == state) {
        Some((_, m)) => *m += mass,
        None => dist.push((state, mass)),
    }
}
