use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Baseline, Covariates, GroundTruthModel, MonthRecord, Outcome, Trajectory};
use crate::types::{band_of, Action, HORIZON};
use crate::{domain, Result};

/// Independent random stream for one patient.
pub(crate) fn patient_rng(seed: u64, patient_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(patient_id);
    rng
}

/// Draws `n` trajectories. Patient `i` gets id `i` and its own random
/// stream, so the result does not depend on scheduling.
pub fn generate_cohort(gt: &GroundTruthModel, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return domain("cohort size must be at least 1");
    }
    gt.validate()?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = patient_rng(seed, id);
            let baseline = gt.population.sample(&mut rng);
            simulate_patient(gt, id, baseline, &mut rng)
        })
        .collect())
}

/// Runs the monthly process for one patient. Outcomes in month `t` are
/// drawn from the hazards of month `t - 1`'s covariates; month 1 uses an
/// unvaccinated, uninfected start. Vaccination happens after the outcome
/// draw and only for patients who stay out of hospital.
pub fn simulate_patient<R: Rng + ?Sized>(gt: &GroundTruthModel, id: u64, baseline: Baseline, rng: &mut R) -> Trajectory {
    let age = baseline.age_band();
    let mut cov = Covariates::from_baseline(&baseline, gt.calendar.at(1));
    let mut doses = 0u8;
    let mut last_dose: Option<u32> = None;
    let mut second = None;
    let mut booster = None;
    let mut records = Vec::with_capacity(HORIZON as usize);
    for month in 1..=HORIZON {
        let p_severe = gt.hazard(&cov, Outcome::Severe);
        let p_general = gt.hazard(&cov, Outcome::General);
        let severe = rng.gen::<f64>() < p_severe;
        let general = rng.gen::<f64>() < p_general;
        let since = last_dose.map(|d| month - d);
        let u = rng.gen::<f64>();
        let mut action = Action::NoBooster;
        if !severe && u < gt.uptake.dose_probability(month, age, doses, since) {
            doses += 1;
            last_dose = Some(month);
            match doses {
                2 => second = Some(month),
                3 => {
                    booster = Some(month);
                    action = Action::Booster;
                }
                _ => {}
            }
        }
        let record = MonthRecord {
            month,
            variant: gt.calendar.at(month),
            num_vaccines: doses,
            months_since_last_vax: last_dose.map(|d| month - d),
            action,
            general_infection: general,
            severe_infection: severe,
        };
        records.push(record);
        if severe {
            break;
        }
        cov = Covariates {
            variant: record.variant,
            num_vaccines: doses,
            recency: record.months_since_last_vax.map(band_of),
            booster: action == Action::Booster,
            general,
            ..cov
        };
    }
    Trajectory {
        patient_id: id,
        baseline,
        second_dose_month: second,
        observed_booster_month: booster,
        records,
    }
}
