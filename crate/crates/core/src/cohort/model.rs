use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Baseline, ComorbidityBand, Gender, Race, Variant, VisitsBand};
use crate::types::{AgeBand, RecencyBand, HORIZON};
use crate::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Severe,
    General,
}

/// Everything a monthly hazard depends on. `recency` is `None` before the
/// first dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Covariates {
    pub age: AgeBand,
    pub gender: Gender,
    pub race: Race,
    pub visits: VisitsBand,
    pub comorbidity: ComorbidityBand,
    pub imm: bool,
    pub variant: Variant,
    pub num_vaccines: u8,
    pub recency: Option<RecencyBand>,
    /// A booster was given this month.
    pub booster: bool,
    pub general: bool,
}

impl Covariates {
    pub fn from_baseline(b: &Baseline, variant: Variant) -> Self {
        Self {
            age: b.age_band(),
            gender: b.gender,
            race: b.race,
            visits: b.visits,
            comorbidity: b.comorbidity,
            imm: b.imm,
            variant,
            num_vaccines: 0,
            recency: None,
            booster: false,
            general: false,
        }
    }

    pub fn from_record(b: &Baseline, r: &super::MonthRecord) -> Self {
        Self {
            num_vaccines: r.num_vaccines,
            recency: r.recency(),
            booster: r.action == crate::types::Action::Booster,
            general: r.general_infection,
            ..Self::from_baseline(b, r.variant)
        }
    }
}

/// Logistic coefficients; each categorical array is indexed by category
/// with the first entry as reference. `recency` is indexed
/// never-vaccinated, M0_4, M5_6, M7plus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardCoefs {
    pub intercept: f64,
    pub age: [f64; 5],
    pub male: f64,
    pub race: [f64; 3],
    pub visits: [f64; 5],
    pub comorbidity: [f64; 4],
    pub imm: f64,
    pub variant: [f64; 3],
    pub num_vaccines: [f64; 5],
    pub recency: [f64; 4],
    pub prior_general: f64,
}

impl HazardCoefs {
    pub fn linear_predictor(&self, c: &Covariates) -> f64 {
        self.intercept
            + self.age[c.age.index()]
            + if c.gender == Gender::M { self.male } else { 0.0 }
            + self.race[c.race.index()]
            + self.visits[c.visits.index()]
            + self.comorbidity[c.comorbidity.index()]
            + if c.imm { self.imm } else { 0.0 }
            + self.variant[c.variant.index()]
            + self.num_vaccines[usize::from(c.num_vaccines.min(4))]
            + self.recency[c.recency.map_or(0, |r| r.index() + 1)]
            + if c.general { self.prior_general } else { 0.0 }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [self.intercept, self.male, self.imm, self.prior_general]
            .into_iter()
            .chain(self.age)
            .chain(self.race)
            .chain(self.visits)
            .chain(self.comorbidity)
            .chain(self.variant)
            .chain(self.num_vaccines)
            .chain(self.recency)
    }

    pub fn zeroed(intercept: f64) -> Self {
        Self {
            intercept,
            age: [0.0; 5],
            male: 0.0,
            race: [0.0; 3],
            visits: [0.0; 5],
            comorbidity: [0.0; 4],
            imm: 0.0,
            variant: [0.0; 3],
            num_vaccines: [0.0; 5],
            recency: [0.0; 4],
            prior_general: 0.0,
        }
    }
}

/// Calendar month to circulating variant, shared by every patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantCalendar {
    /// First month of Delta dominance.
    pub delta_from: u32,
    /// First month of Omicron dominance.
    pub omicron_from: u32,
}

impl Default for VariantCalendar {
    fn default() -> Self {
        Self {
            delta_from: 16,
            omicron_from: 22,
        }
    }
}

impl VariantCalendar {
    pub fn at(&self, month: u32) -> Variant {
        if month >= self.omicron_from {
            Variant::Omicron
        } else if month >= self.delta_from {
            Variant::Delta
        } else {
            Variant::Alpha
        }
    }
}

/// Behavioural vaccination uptake: monthly probabilities indexed by age band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UptakeModel {
    pub first_dose_from: u32,
    pub first_dose: [f64; 5],
    pub second_dose: f64,
    pub booster_from: u32,
    /// Minimum months after the second dose before a booster is taken.
    /// Values below five produce guideline-violating observed boosters.
    pub booster_min_gap: u32,
    pub booster: [f64; 5],
    pub max_doses: u8,
}

impl Default for UptakeModel {
    fn default() -> Self {
        Self {
            first_dose_from: 10,
            first_dose: [0.03, 0.08, 0.10, 0.14, 0.22],
            second_dose: 0.8,
            booster_from: 19,
            booster_min_gap: 3,
            booster: [0.03, 0.05, 0.07, 0.09, 0.13],
            max_doses: 3,
        }
    }
}

impl UptakeModel {
    /// Probability of a dose in `month` for someone holding `doses` doses,
    /// the last one `since_last` months before the start of `month`.
    pub fn dose_probability(&self, month: u32, age: AgeBand, doses: u8, since_last: Option<u32>) -> f64 {
        if doses >= self.max_doses {
            return 0.0;
        }
        match doses {
            0 if month >= self.first_dose_from => self.first_dose[age.index()],
            1 => self.second_dose,
            2 if month >= self.booster_from && since_last.is_some_and(|m| m >= self.booster_min_gap) => {
                self.booster[age.index()]
            }
            _ => 0.0,
        }
    }
}

/// Independent categorical distributions of the baseline characteristics,
/// except comorbidity which depends on the age band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationModel {
    pub age: [f64; 5],
    pub female: f64,
    pub race: [f64; 3],
    pub visits: [f64; 5],
    pub comorbidity_by_age: [[f64; 4]; 5],
    pub imm: f64,
}

impl Default for PopulationModel {
    fn default() -> Self {
        Self {
            age: [0.2, 0.17, 0.27, 0.2, 0.16],
            female: 0.56,
            race: [0.78, 0.08, 0.14],
            visits: [0.35, 0.25, 0.2, 0.15, 0.05],
            comorbidity_by_age: [
                [0.9, 0.08, 0.015, 0.005],
                [0.8, 0.15, 0.04, 0.01],
                [0.65, 0.25, 0.07, 0.03],
                [0.45, 0.33, 0.14, 0.08],
                [0.25, 0.35, 0.22, 0.18],
            ],
            imm: 0.08,
        }
    }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

impl PopulationModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Baseline {
        let band = AgeBand::ALL[pick(&self.age, rng)];
        let (lo, hi) = band.years();
        Baseline {
            age_years: rng.gen_range(lo..=hi),
            gender: if rng.gen::<f64>() < self.female { Gender::F } else { Gender::M },
            race: Race::ALL[pick(&self.race, rng)],
            visits: VisitsBand::ALL[pick(&self.visits, rng)],
            comorbidity: ComorbidityBand::ALL[pick(&self.comorbidity_by_age[band.index()], rng)],
            imm: rng.gen::<f64>() < self.imm,
        }
    }

    /// Probability of a baseline stratum (age band and categories).
    pub fn stratum_probability(
        &self,
        age: AgeBand,
        gender: Gender,
        race: Race,
        visits: VisitsBand,
        comorbidity: ComorbidityBand,
        imm: bool,
    ) -> f64 {
        self.age[age.index()] / self.age.iter().sum::<f64>()
            * if gender == Gender::F { self.female } else { 1.0 - self.female }
            * self.race[race.index()]
            / self.race.iter().sum::<f64>()
            * self.visits[visits.index()]
            / self.visits.iter().sum::<f64>()
            * self.comorbidity_by_age[age.index()][comorbidity.index()]
            / self.comorbidity_by_age[age.index()].iter().sum::<f64>()
            * if imm { self.imm } else { 1.0 - self.imm }
    }
}

/// Parametric logistic-hazard process that generates the synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthModel {
    pub severe: HazardCoefs,
    pub general: HazardCoefs,
    #[serde(default)]
    pub calendar: VariantCalendar,
    #[serde(default)]
    pub uptake: UptakeModel,
    #[serde(default)]
    pub population: PopulationModel,
}

impl Default for GroundTruthModel {
    /// Severe hazards of a few per mille per month for adults, ordered
    /// like the observed tables: risk grows with age, comorbidity, visits
    /// and immunosuppression, Delta is the worst variant and vaccination
    /// protects, most strongly in the first months after a dose.
    fn default() -> Self {
        Self {
            severe: HazardCoefs {
                intercept: -5.99,
                age: [0.0, 0.35, 0.5, 0.6, 0.8],
                male: 0.08,
                race: [0.0, 0.8, 0.0],
                visits: [0.0, -0.05, 0.35, 0.85, 1.3],
                comorbidity: [0.0, 0.6, 1.0, 1.35],
                imm: 0.6,
                variant: [0.0, 0.7, -0.1],
                num_vaccines: [0.0, -0.2, -0.45, -0.55, -0.65],
                recency: [0.0, -0.9, -0.35, 0.0],
                prior_general: 1.2,
            },
            general: HazardCoefs {
                intercept: -4.41,
                age: [0.0, 0.2, 0.15, 0.0, -0.2],
                male: -0.05,
                race: [0.0, 0.2, 0.05],
                visits: [0.0, 0.05, 0.15, 0.3, 0.4],
                comorbidity: [0.0, 0.1, 0.2, 0.3],
                imm: 0.2,
                variant: [0.0, 0.3, 1.0],
                num_vaccines: [0.0, -0.15, -0.3, -0.35, -0.4],
                recency: [0.0, -0.5, -0.2, 0.0],
                prior_general: -1.0,
            },
            calendar: VariantCalendar::default(),
            uptake: UptakeModel::default(),
            population: PopulationModel::default(),
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl GroundTruthModel {
    /// Every hazard forced to zero: `e^-1000` underflows.
    pub fn without_infections() -> Self {
        Self {
            severe: HazardCoefs::zeroed(-1000.0),
            general: HazardCoefs::zeroed(-1000.0),
            ..Self::default()
        }
    }

    /// Probability of `outcome` next month given this month's covariates.
    pub fn hazard(&self, c: &Covariates, outcome: Outcome) -> f64 {
        let coefs = match outcome {
            Outcome::Severe => &self.severe,
            Outcome::General => &self.general,
        };
        logistic(coefs.linear_predictor(c))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, coefs) in [("severe", &self.severe), ("general", &self.general)] {
            if !coefs.values().all(f64::is_finite) {
                return domain(format!("{name} hazard coefficients must be finite"));
            }
        }
        let u = &self.uptake;
        let probs = u
            .first_dose
            .iter()
            .chain(&u.booster)
            .chain(std::iter::once(&u.second_dose));
        for p in probs {
            if !(0.0..=1.0).contains(p) {
                return domain(format!("uptake probability {p} outside [0, 1]"));
            }
        }
        if u.max_doses > 4 {
            return domain("at most four doses are representable");
        }
        let pop = &self.population;
        let dists = [&pop.age[..], &pop.race[..], &pop.visits[..]]
            .into_iter()
            .chain(pop.comorbidity_by_age.iter().map(|r| &r[..]));
        for d in dists {
            if d.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || d.iter().sum::<f64>() <= 0.0 {
                return domain("population weights must be nonnegative with positive total");
            }
        }
        if !(0.0..=1.0).contains(&pop.female) || !(0.0..=1.0).contains(&pop.imm) {
            return domain("population proportions must lie in [0, 1]");
        }
        if self.calendar.delta_from > self.calendar.omicron_from || self.calendar.omicron_from == 0 {
            return domain("variant calendar must be ordered Alpha, Delta, Omicron");
        }
        if self.calendar.delta_from > HORIZON + 1 {
            return domain("variant calendar starts after the study window");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_covariates() -> Covariates {
        Covariates {
            age: AgeBand::Child0_17,
            gender: Gender::F,
            race: Race::Caucasian,
            visits: VisitsBand::V0_4,
            comorbidity: ComorbidityBand::C0,
            imm: false,
            variant: Variant::Alpha,
            num_vaccines: 0,
            recency: None,
            booster: false,
            general: false,
        }
    }

    #[test]
    fn reference_hazard_is_logistic_of_intercept() {
        let gt = GroundTruthModel::default();
        let c = reference_covariates();
        assert!((gt.hazard(&c, Outcome::Severe) - 1.0 / (1.0 + 5.99f64.exp())).abs() < 1e-17);
        assert!((gt.hazard(&c, Outcome::General) - 1.0 / (1.0 + 4.41f64.exp())).abs() < 1e-17);
    }

    #[test]
    fn old_immunosuppressed_unvaccinated_in_delta_is_riskier() {
        let gt = GroundTruthModel::default();
        let risky = Covariates {
            age: AgeBand::A65Plus,
            imm: true,
            variant: Variant::Delta,
            ..reference_covariates()
        };
        let safer = Covariates {
            age: AgeBand::A18_29,
            variant: Variant::Omicron,
            num_vaccines: 2,
            recency: Some(RecencyBand::M7Plus),
            ..reference_covariates()
        };
        // Linear predictors: -5.99 + 0.8 + 0.6 + 0.7 = -3.89 against
        // -5.99 + 0.35 - 0.1 - 0.45 = -6.19.
        let lp_risky = gt.severe.linear_predictor(&risky);
        let lp_safer = gt.severe.linear_predictor(&safer);
        assert!((lp_risky + 3.89).abs() < 1e-12);
        assert!((lp_safer + 6.19).abs() < 1e-12);
        assert!(gt.hazard(&risky, Outcome::Severe) > gt.hazard(&safer, Outcome::Severe));
    }

    #[test]
    fn zero_model_has_zero_hazards() {
        let gt = GroundTruthModel::without_infections();
        gt.validate().unwrap();
        assert_eq!(gt.hazard(&reference_covariates(), Outcome::Severe), 0.0);
        assert_eq!(gt.hazard(&reference_covariates(), Outcome::General), 0.0);
    }

    #[test]
    fn default_model_validates_and_round_trips() {
        let gt = GroundTruthModel::default();
        gt.validate().unwrap();
        let back: GroundTruthModel = serde_json::from_str(&gt.to_json()).unwrap();
        assert_eq!(back, gt);
        assert!(serde_json::from_str::<GroundTruthModel>(r#"{"severe": 1, "bogus": 2}"#).is_err());
    }

    #[test]
    fn calendar_defaults() {
        let cal = VariantCalendar::default();
        assert_eq!(cal.at(1), Variant::Alpha);
        assert_eq!(cal.at(15), Variant::Alpha);
        assert_eq!(cal.at(16), Variant::Delta);
        assert_eq!(cal.at(21), Variant::Delta);
        assert_eq!(cal.at(22), Variant::Omicron);
        assert_eq!(cal.at(27), Variant::Omicron);
    }

    #[test]
    fn stratum_probabilities_sum_to_one() {
        let pop = PopulationModel::default();
        let mut total = 0.0;
        for &age in &AgeBand::ALL {
            for &g in Gender::ALL {
                for &r in Race::ALL {
                    for &v in VisitsBand::ALL {
                        for &c in ComorbidityBand::ALL {
                            for imm in [false, true] {
                                total += pop.stratum_probability(age, g, r, v, c, imm);
                            }
                        }
                    }
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn nondecreasing_comorbidity_coefficients_give_monotone_hazard(
            steps in prop::array::uniform3(0.0f64..2.0),
            age in 0usize..5,
            variant in 0usize..3,
        ) {
            let mut gt = GroundTruthModel::default();
            gt.severe.comorbidity = [0.0, steps[0], steps[0] + steps[1], steps[0] + steps[1] + steps[2]];
            let base = Covariates {
                age: AgeBand::ALL[age],
                variant: Variant::ALL[variant],
                ..reference_covariates()
            };
            let mut last = 0.0;
            for &c in ComorbidityBand::ALL {
                let h = gt.hazard(&Covariates { comorbidity: c, ..base }, Outcome::Severe);
                prop_assert!(h >= last);
                prop_assert!(h > 0.0 && h < 1.0);
                last = h;
            }
        }
    }
}
