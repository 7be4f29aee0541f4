use serde::{Deserialize, Serialize};

use super::{greedy_policy, EpochMetrics, QTable};
use crate::types::{state_index, Action, StateKey, NUM_STATES};
use crate::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QRow {
    pub state: StateKey,
    pub q_no_booster: f64,
    pub q_booster: f64,
    pub visits_no_booster: u64,
    pub visits_booster: u64,
    pub greedy_action: Action,
}

/// Portable form of a Q-table: one row per state in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QTableDocument {
    pub rows: Vec<QRow>,
}

impl QTableDocument {
    pub fn from_table(q: &QTable) -> Self {
        let policy = greedy_policy(q);
        let rows = StateKey::all_live()
            .enumerate()
            .map(|(i, state)| QRow {
                state,
                q_no_booster: q.values[i][0],
                q_booster: q.values[i][1],
                visits_no_booster: q.visits[i][0],
                visits_booster: q.visits[i][1],
                greedy_action: policy[i],
            })
            .collect();
        Self { rows }
    }

    pub fn to_table(&self) -> Result<QTable> {
        if self.rows.len() != NUM_STATES {
            return domain(format!("Q-table has {} rows, expected {NUM_STATES}", self.rows.len()));
        }
        let mut q = QTable::new();
        let mut seen = [false; NUM_STATES];
        for r in &self.rows {
            let i = state_index(r.state)?;
            if std::mem::replace(&mut seen[i], true) {
                return domain(format!("state {} appears twice", r.state));
            }
            q.values[i] = [r.q_no_booster, r.q_booster];
            q.visits[i] = [r.visits_no_booster, r.visits_booster];
        }
        Ok(q)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("Q-table serializes")
    }

    pub fn from_json(text: &str) -> Result<QTable> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Domain(format!("Q-table document: {e}")))?;
        doc.to_table()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,q_no_booster,q_booster,visits,greedy_action\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.state,
                r.q_no_booster,
                r.q_booster,
                r.visits_no_booster + r.visits_booster,
                r.greedy_action
            ));
        }
        out
    }
}

/// Greedy actions from a Q-table document, in state-index order.
pub fn policy_from_json(text: &str) -> Result<Vec<Action>> {
    Ok(greedy_policy(&QTableDocument::from_json(text)?))
}

/// One JSON object per line.
pub fn metrics_jsonl(metrics: &[EpochMetrics]) -> String {
    metrics
        .iter()
        .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
        .collect()
}
