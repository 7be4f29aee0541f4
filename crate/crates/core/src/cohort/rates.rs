use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ComorbidityBand, Gender, MonthRecord, Race, Trajectory, Variant, VisitsBand};
use crate::types::{AgeBand, HORIZON};
use crate::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Month,
    Age,
    Gender,
    Race,
    Visits,
    Comorbidity,
    Imm,
    Variant,
    NumVaccines,
}

impl Variable {
    pub fn name(self) -> &'static str {
        match self {
            Self::Month => "month",
            Self::Age => "age_band",
            Self::Gender => "gender",
            Self::Race => "race",
            Self::Visits => "visits_band",
            Self::Comorbidity => "comorbidity_band",
            Self::Imm => "imm",
            Self::Variant => "variant",
            Self::NumVaccines => "num_vaccines",
        }
    }

    /// Every category, so empty cells still get a row.
    fn categories(self) -> Vec<String> {
        fn all<T: ToString>(xs: impl IntoIterator<Item = T>) -> Vec<String> {
            xs.into_iter().map(|x| x.to_string()).collect()
        }
        match self {
            Self::Month => all(1..=HORIZON),
            Self::Age => all(AgeBand::ALL.iter().map(|a| a.as_str())),
            Self::Gender => all(Gender::ALL),
            Self::Race => all(Race::ALL),
            Self::Visits => all(VisitsBand::ALL),
            Self::Comorbidity => all(ComorbidityBand::ALL),
            Self::Imm => all(0..=1),
            Self::Variant => all(Variant::ALL),
            Self::NumVaccines => all(0..=4),
        }
    }

    fn category_index(self, t: &Trajectory, r: &MonthRecord) -> usize {
        let b = &t.baseline;
        match self {
            Self::Month => r.month as usize - 1,
            Self::Age => b.age_band().index(),
            Self::Gender => b.gender.index(),
            Self::Race => b.race.index(),
            Self::Visits => b.visits.index(),
            Self::Comorbidity => b.comorbidity.index(),
            Self::Imm => usize::from(b.imm),
            Self::Variant => r.variant.index(),
            Self::NumVaccines => usize::from(r.num_vaccines),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "by")]
pub enum Grouping {
    Overall,
    One(Variable),
    Pair(Variable, Variable),
}

impl Grouping {
    /// The one-variable tables of the descriptive summary.
    pub const SUMMARY: [Grouping; 4] = [
        Grouping::One(Variable::Age),
        Grouping::One(Variable::NumVaccines),
        Grouping::One(Variable::Visits),
        Grouping::One(Variable::Comorbidity),
    ];

    fn variables(self) -> Vec<Variable> {
        match self {
            Self::Overall => vec![],
            Self::One(v) => vec![v],
            Self::Pair(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub key: Vec<String>,
    pub person_months: u64,
    pub severe: u64,
    pub general: u64,
    /// `None` for empty cells.
    pub severe_per_mille: Option<f64>,
    pub general_per_mille: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub grouping: Grouping,
    pub columns: Vec<String>,
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn row(&self, key: &[&str]) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.key.iter().map(String::as_str).eq(key.iter().copied()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push_str(",person_months,severe,general,severe_per_mille,general_per_mille\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            for k in &r.key {
                out.push_str(k);
                out.push(',');
            }
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.person_months,
                r.severe,
                r.general,
                fmt(r.severe_per_mille),
                fmt(r.general_per_mille)
            ));
        }
        out
    }
}

/// Person-month infection rates per 1000, overall or by one or two
/// variables.
pub fn summarize_rates(trajs: &[Trajectory], grouping: Grouping) -> Result<RateTable> {
    if trajs.iter().all(|t| t.records.is_empty()) {
        return domain("cannot summarise an empty cohort");
    }
    let vars = grouping.variables();
    let cats: Vec<Vec<String>> = vars.iter().map(|v| v.categories()).collect();
    let mut counts: BTreeMap<Vec<usize>, [u64; 3]> = BTreeMap::new();
    for t in trajs {
        for r in &t.records {
            let key: Vec<usize> = vars.iter().map(|v| v.category_index(t, r)).collect();
            let c = counts.entry(key).or_default();
            c[0] += 1;
            c[1] += u64::from(r.severe_infection);
            c[2] += u64::from(r.general_infection);
        }
    }
    let mut keys: Vec<Vec<usize>> = vec![vec![]];
    for c in &cats {
        keys = keys
            .into_iter()
            .flat_map(|k| {
                (0..c.len()).map(move |i| {
                    let mut k = k.clone();
                    k.push(i);
                    k
                })
            })
            .collect();
    }
    let rows = keys
        .into_iter()
        .map(|k| {
            let [n, s, g] = counts.get(&k).copied().unwrap_or_default();
            let rate = |x: u64| (n > 0).then(|| 1000.0 * x as f64 / n as f64);
            RateRow {
                key: k.iter().enumerate().map(|(v, &i)| cats[v][i].clone()).collect(),
                person_months: n,
                severe: s,
                general: g,
                severe_per_mille: rate(s),
                general_per_mille: rate(g),
            }
        })
        .collect();
    Ok(RateTable {
        grouping,
        columns: vars.iter().map(|v| v.name().to_string()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, Baseline, GroundTruthModel};
    use crate::types::Action;

    fn flat_patient(id: u64, months: u32, severe_last: bool) -> Trajectory {
        let records = (1..=months)
            .map(|m| MonthRecord {
                month: m,
                variant: Variant::Alpha,
                num_vaccines: 0,
                months_since_last_vax: None,
                action: Action::NoBooster,
                general_infection: false,
                severe_infection: severe_last && m == months,
            })
            .collect();
        Trajectory::from_records(
            id,
            Baseline {
                age_years: 40,
                gender: Gender::F,
                race: Race::Other,
                visits: VisitsBand::V0_4,
                comorbidity: ComorbidityBand::C0,
                imm: false,
            },
            records,
        )
        .unwrap()
    }

    #[test]
    fn one_event_in_a_thousand_person_months() {
        let mut trajs: Vec<Trajectory> = (0..37).map(|i| flat_patient(i, 27, false)).collect();
        trajs.push(flat_patient(99, 1, true));
        assert_eq!(trajs.iter().map(|t| t.len()).sum::<usize>(), 1000);
        let table = summarize_rates(&trajs, Grouping::Overall).unwrap();
        assert_eq!(table.rows[0].severe_per_mille, Some(1.0));
        let by_gender = summarize_rates(&trajs, Grouping::One(Variable::Gender)).unwrap();
        assert_eq!(by_gender.row(&["M"]).unwrap().severe_per_mille, None);
    }

    #[test]
    fn summary_and_pair_layouts() {
        let trajs = generate_cohort(&GroundTruthModel::default(), 3000, 5).unwrap();
        let names: Vec<_> = Grouping::SUMMARY
            .iter()
            .map(|g| summarize_rates(&trajs, *g).unwrap().columns[0].clone())
            .collect();
        assert_eq!(names, ["age_band", "num_vaccines", "visits_band", "comorbidity_band"]);
        let pair = summarize_rates(&trajs, Grouping::Pair(Variable::Imm, Variable::Gender)).unwrap();
        assert_eq!(pair.rows.len(), 4);
        let total: u64 = pair.rows.iter().map(|r| r.person_months).sum();
        assert_eq!(total, trajs.iter().map(|t| t.len() as u64).sum::<u64>());
        let months = summarize_rates(&trajs, Grouping::One(Variable::Month)).unwrap();
        assert_eq!(months.rows.len(), 27);
        assert!(summarize_rates(&[], Grouping::Overall).is_err());
    }
}
