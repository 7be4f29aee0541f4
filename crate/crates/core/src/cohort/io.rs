use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Baseline, ComorbidityBand, Gender, MonthRecord, Race, Trajectory, Variant, VisitsBand};
use crate::types::{Action, AgeBand};
use crate::{Error, Result};

pub const TRAJECTORY_COLUMNS: [&str; 14] = [
    "patient_id",
    "month",
    "age_band",
    "gender",
    "race",
    "visits_band",
    "comorbidity_band",
    "imm",
    "variant",
    "num_vaccines",
    "months_since_last_vax",
    "action",
    "general_infection",
    "severe_infection",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patient_id: u64,
    month: u32,
    age_band: AgeBand,
    gender: Gender,
    race: Race,
    visits_band: VisitsBand,
    comorbidity_band: ComorbidityBand,
    imm: u8,
    variant: Variant,
    num_vaccines: u8,
    months_since_last_vax: Option<u32>,
    action: Action,
    general_infection: u8,
    severe_infection: u8,
}

fn flag(v: u8, column: &str) -> std::result::Result<bool, String> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(format!("{column} must be 0 or 1, got {v}")),
    }
}

/// One row per person-month, in patient then month order.
pub fn write_trajectories<W: Write>(trajs: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Format {
        path: "<trajectory csv>".into(),
        message: e.to_string(),
    };
    for t in trajs {
        let b = &t.baseline;
        for r in &t.records {
            w.serialize(Row {
                patient_id: t.patient_id,
                month: r.month,
                age_band: b.age_band(),
                gender: b.gender,
                race: b.race,
                visits_band: b.visits,
                comorbidity_band: b.comorbidity,
                imm: u8::from(b.imm),
                variant: r.variant,
                num_vaccines: r.num_vaccines,
                months_since_last_vax: r.months_since_last_vax,
                action: r.action,
                general_infection: u8::from(r.general_infection),
                severe_infection: u8::from(r.severe_infection),
            })
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: "<trajectory csv>".into(),
        source: e,
    })
}

/// Inverse of [`write_trajectories`]. Exact ages are not stored, so each
/// patient gets the lower bound of their age band.
pub fn read_trajectories<R: Read>(input: R, source: &Path) -> Result<Vec<Trajectory>> {
    let fail = |message: String| Error::Format {
        path: source.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(|e| fail(e.to_string()))?;
    if header.iter().ne(TRAJECTORY_COLUMNS) {
        return Err(fail(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    let mut pending: Option<(u64, Baseline, Vec<MonthRecord>)> = None;
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| fail(e.to_string()))?;
        let at = |m: String| fail(format!("row {}: {m}", line + 2));
        let baseline = Baseline {
            age_years: row.age_band.years().0,
            gender: row.gender,
            race: row.race,
            visits: row.visits_band,
            comorbidity: row.comorbidity_band,
            imm: flag(row.imm, "imm").map_err(at)?,
        };
        let record = MonthRecord {
            month: row.month,
            variant: row.variant,
            num_vaccines: row.num_vaccines,
            months_since_last_vax: row.months_since_last_vax,
            action: row.action,
            general_infection: flag(row.general_infection, "general_infection").map_err(at)?,
            severe_infection: flag(row.severe_infection, "severe_infection").map_err(at)?,
        };
        match &mut pending {
            Some((id, b, records)) if *id == row.patient_id => {
                if *b != baseline {
                    return Err(at(format!("baseline of patient {id} changes over time")));
                }
                records.push(record);
            }
            _ => {
                if let Some((id, b, records)) = pending.take() {
                    out.push(Trajectory::from_records(id, b, records).map_err(|e| at(e.to_string()))?);
                }
                pending = Some((row.patient_id, baseline, vec![record]));
            }
        }
    }
    if let Some((id, b, records)) = pending {
        out.push(Trajectory::from_records(id, b, records).map_err(|e| fail(e.to_string()))?);
    }
    Ok(out)
}
