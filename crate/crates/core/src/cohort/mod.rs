//! Synthetic patient histories and the ground-truth process behind them.

mod expected;
mod generate;
mod io;
mod model;
mod rates;
mod tabulate;

pub use expected::{expected_rates, ExpectedRates};
pub use generate::{generate_cohort, simulate_patient};
pub(crate) use generate::patient_rng;
pub use io::{read_trajectories, write_trajectories, TRAJECTORY_COLUMNS};
pub use model::{
    Covariates, GroundTruthModel, HazardCoefs, Outcome, PopulationModel, UptakeModel, VariantCalendar,
};
pub use rates::{summarize_rates, Grouping, RateRow, RateTable, Variable};
pub use tabulate::{tabulate_mdp, BoosterMdp, Profile, Stratum, LEAVE_M0_4, LEAVE_M5_6, TERMINAL};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::{band_of, Action, AgeBand, RecencyBand, HORIZON};
use crate::{domain, Error, Result};

macro_rules! categorical {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::Domain(format!("unknown {} {s:?}", stringify!($name))))
            }
        }
    };
}

categorical!(Gender { F => "F", M => "M" });
categorical!(Race { Caucasian => "Caucasian", AfricanAmerican => "AfricanAmerican", Other => "Other" });
categorical!(VisitsBand { V0_4 => "V0_4", V5_9 => "V5_9", V10_19 => "V10_19", V20_49 => "V20_49", V50Plus => "V50plus" });
categorical!(ComorbidityBand { C0 => "C0", C1_2 => "C1_2", C3_4 => "C3_4", C5Plus => "C5plus" });
categorical!(Variant { Alpha => "Alpha", Delta => "Delta", Omicron => "Omicron" });

/// Characteristics fixed over a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Baseline {
    pub age_years: u32,
    pub gender: Gender,
    pub race: Race,
    pub visits: VisitsBand,
    pub comorbidity: ComorbidityBand,
    pub imm: bool,
}

impl Baseline {
    pub fn age_band(&self) -> AgeBand {
        AgeBand::from_years(self.age_years)
    }
}

/// One person-month. Covariates describe the end of the month, after any
/// vaccination given in it; outcomes are the infections observed during it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRecord {
    pub month: u32,
    pub variant: Variant,
    pub num_vaccines: u8,
    pub months_since_last_vax: Option<u32>,
    /// Booster (third dose) given this month.
    pub action: Action,
    pub general_infection: bool,
    pub severe_infection: bool,
}

impl MonthRecord {
    pub fn recency(&self) -> Option<RecencyBand> {
        self.months_since_last_vax.map(band_of)
    }

    pub fn vaccinated_this_month(&self) -> bool {
        self.months_since_last_vax == Some(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub patient_id: u64,
    pub baseline: Baseline,
    pub second_dose_month: Option<u32>,
    pub observed_booster_month: Option<u32>,
    pub records: Vec<MonthRecord>,
}

impl Trajectory {
    /// Builds a trajectory from its records, deriving the dose months.
    pub fn from_records(patient_id: u64, baseline: Baseline, records: Vec<MonthRecord>) -> Result<Self> {
        let mut t = Self {
            patient_id,
            baseline,
            second_dose_month: None,
            observed_booster_month: None,
            records,
        };
        t.second_dose_month = t.dose_month(2);
        t.observed_booster_month = t.dose_month(3);
        t.validate()?;
        Ok(t)
    }

    fn dose_month(&self, dose: u8) -> Option<u32> {
        self.records
            .iter()
            .find(|r| r.num_vaccines == dose && r.vaccinated_this_month())
            .map(|r| r.month)
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.patient_id;
        if self.records.is_empty() || self.records.len() > HORIZON as usize {
            return domain(format!("patient {id}: {} records", self.records.len()));
        }
        let mut prev: Option<&MonthRecord> = None;
        for (i, r) in self.records.iter().enumerate() {
            if r.month != i as u32 + 1 {
                return domain(format!("patient {id}: records are not contiguous from month 1"));
            }
            if r.severe_infection && i + 1 != self.records.len() {
                return domain(format!("patient {id}: record after a severe infection"));
            }
            if r.num_vaccines > 4 {
                return domain(format!("patient {id}: {} vaccinations", r.num_vaccines));
            }
            let prev_n = prev.map_or(0, |p| p.num_vaccines);
            let dosed = r.num_vaccines > prev_n;
            if r.num_vaccines < prev_n || r.num_vaccines > prev_n + 1 {
                return domain(format!("patient {id}: vaccine count jumps at month {}", r.month));
            }
            if dosed != r.vaccinated_this_month() {
                return domain(format!("patient {id}: recency counter inconsistent at month {}", r.month));
            }
            if !dosed {
                let expect = prev.and_then(|p| p.months_since_last_vax).map(|m| m + 1);
                if r.months_since_last_vax != expect {
                    return domain(format!("patient {id}: recency counter inconsistent at month {}", r.month));
                }
            }
            if (r.action == Action::Booster) != (dosed && r.num_vaccines == 3) {
                return domain(format!("patient {id}: booster flag inconsistent at month {}", r.month));
            }
            prev = Some(r);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A patient taking part in policy learning: an adult with a second dose
/// early enough to leave at least one decision month.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eligible {
    /// Position in the cohort slice the patient was selected from.
    pub index: usize,
    pub patient_id: u64,
    pub age: AgeBand,
    pub imm: bool,
    pub second_dose_month: u32,
    pub observed_booster_month: Option<u32>,
}

impl Eligible {
    /// Number of decision months `T_i + 1 ..= HORIZON`.
    pub fn decision_months(&self) -> u32 {
        HORIZON - self.second_dose_month
    }
}

pub fn eligible(trajs: &[Trajectory]) -> Vec<Eligible> {
    trajs
        .iter()
        .enumerate()
        .filter_map(|(index, t)| {
            let age = t.baseline.age_band();
            let second = t.second_dose_month?;
            (age.is_adult() && second < HORIZON).then_some(Eligible {
                index,
                patient_id: t.patient_id,
                age,
                imm: t.baseline.imm,
                second_dose_month: second,
                observed_booster_month: t.observed_booster_month,
            })
        })
        .collect()
}
