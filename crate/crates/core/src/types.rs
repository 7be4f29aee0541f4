//! MDP vocabulary shared by every other module: state discretisation,
//! actions, the reward and the guideline action mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{domain, Error, Result};

/// Last calendar month of the study window.
pub const HORIZON: u32 = 27;

/// Number of non-terminal states.
pub const NUM_STATES: usize = 24;

/// A booster is forbidden while `months_since_second_dose <= MIN_BOOSTER_GAP`.
pub const MIN_BOOSTER_GAP: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "Child_0_17")]
    Child0_17,
    #[serde(rename = "A18_29")]
    A18_29,
    #[serde(rename = "A30_49")]
    A30_49,
    #[serde(rename = "A50_64")]
    A50_64,
    #[serde(rename = "A65plus")]
    A65Plus,
}

impl AgeBand {
    pub const ALL: [AgeBand; 5] = [Self::Child0_17, Self::A18_29, Self::A30_49, Self::A50_64, Self::A65Plus];
    pub const ADULT: [AgeBand; 4] = [Self::A18_29, Self::A30_49, Self::A50_64, Self::A65Plus];

    pub fn from_years(years: u32) -> Self {
        match years {
            0..=17 => Self::Child0_17,
            18..=29 => Self::A18_29,
            30..=49 => Self::A30_49,
            50..=64 => Self::A50_64,
            _ => Self::A65Plus,
        }
    }

    /// Inclusive year range; the open top band is capped at 90.
    pub fn years(self) -> (u32, u32) {
        match self {
            Self::Child0_17 => (0, 17),
            Self::A18_29 => (18, 29),
            Self::A30_49 => (30, 49),
            Self::A50_64 => (50, 64),
            Self::A65Plus => (65, 90),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_adult(self) -> bool {
        self != Self::Child0_17
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Child0_17 => "Child_0_17",
            Self::A18_29 => "A18_29",
            Self::A30_49 => "A30_49",
            Self::A50_64 => "A50_64",
            Self::A65Plus => "A65plus",
        }
    }
}

impl FromStr for AgeBand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown age band {s:?}")))
    }
}

/// Months since the last vaccination, banded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecencyBand {
    M0_4,
    M5_6,
    #[serde(rename = "M7plus")]
    M7Plus,
}

impl RecencyBand {
    pub const ALL: [RecencyBand; 3] = [Self::M0_4, Self::M5_6, Self::M7Plus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::M0_4 => "M0_4",
            Self::M5_6 => "M5_6",
            Self::M7Plus => "M7plus",
        }
    }
}

impl FromStr for RecencyBand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown recency band {s:?}")))
    }
}

pub fn recency_band(months_since_last_vax: i64) -> Result<RecencyBand> {
    match months_since_last_vax {
        m if m < 0 => domain(format!("months since last vaccination must be >= 0, got {m}")),
        0..=4 => Ok(RecencyBand::M0_4),
        5..=6 => Ok(RecencyBand::M5_6),
        _ => Ok(RecencyBand::M7Plus),
    }
}

/// Infallible banding for counters that are unsigned by construction.
pub(crate) fn band_of(months: u32) -> RecencyBand {
    recency_band(i64::from(months)).expect("unsigned month counter")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "N")]
    NoBooster = 0,
    #[serde(rename = "B")]
    Booster = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Self::NoBooster, Self::Booster];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Self::NoBooster),
            1 => Ok(Self::Booster),
            _ => domain(format!("action index {i} out of range")),
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Self::NoBooster => "N",
            Self::Booster => "B",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" => Ok(Self::NoBooster),
            "B" => Ok(Self::Booster),
            _ => domain(format!("unknown action {s:?}")),
        }
    }
}

/// The feasible actions in one state. NoBooster is always feasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionSet {
    booster: bool,
}

impl ActionSet {
    pub const NO_BOOSTER_ONLY: ActionSet = ActionSet { booster: false };
    pub const BOTH: ActionSet = ActionSet { booster: true };

    pub fn contains(self, a: Action) -> bool {
        a == Action::NoBooster || self.booster
    }

    pub fn allows_booster(self) -> bool {
        self.booster
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    pub fn len(self) -> usize {
        1 + usize::from(self.booster)
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

/// Guideline mask: no booster within the first four months after the
/// second dose, and only the first booster is modelled.
pub fn allowed_actions(months_since_second_vax: u32, already_boosted: bool) -> ActionSet {
    if months_since_second_vax <= MIN_BOOSTER_GAP || already_boosted {
        ActionSet::NO_BOOSTER_ONLY
    } else {
        ActionSet::BOTH
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateKey {
    Live {
        age: AgeBand,
        imm: bool,
        recency: RecencyBand,
    },
    Terminal,
}

impl StateKey {
    pub fn live(age: AgeBand, imm: bool, recency: RecencyBand) -> Self {
        Self::Live { age, imm, recency }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= NUM_STATES {
            return domain(format!("state index {index} out of range 0..{NUM_STATES}"));
        }
        Ok(Self::Live {
            age: AgeBand::ADULT[index / 6],
            imm: (index / 3) % 2 == 1,
            recency: RecencyBand::ALL[index % 3],
        })
    }

    pub fn all_live() -> impl Iterator<Item = StateKey> {
        (0..NUM_STATES).map(|i| Self::from_index(i).expect("index in range"))
    }

    pub fn is_terminal(self) -> bool {
        self == Self::Terminal
    }

    pub fn recency(self) -> Option<RecencyBand> {
        match self {
            Self::Live { recency, .. } => Some(recency),
            Self::Terminal => None,
        }
    }

    /// Actions that can ever be taken in this state: a booster needs at
    /// least five months since the last dose.
    pub fn feasible(self) -> ActionSet {
        match self {
            Self::Live { recency, .. } if recency != RecencyBand::M0_4 => ActionSet::BOTH,
            _ => ActionSet::NO_BOOSTER_ONLY,
        }
    }
}

/// Dense index `6·age + 3·imm + recency` over adult live states.
pub fn state_index(key: StateKey) -> Result<usize> {
    match key {
        StateKey::Terminal => domain("the terminal state has no table index"),
        StateKey::Live { age, .. } if !age.is_adult() => domain("child states are outside the policy state space"),
        StateKey::Live { age, imm, recency } => Ok(6 * (age.index() - 1) + 3 * usize::from(imm) + recency.index()),
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Live { age, imm, recency } => {
                write!(f, "{}/imm{}/{}", age.as_str(), u8::from(*imm), recency.as_str())
            }
            Self::Terminal => f.write_str("TERMINAL"),
        }
    }
}

impl FromStr for StateKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "TERMINAL" {
            return Ok(Self::Terminal);
        }
        let parts: Vec<&str> = s.split('/').collect();
        let [age, imm, recency] = parts[..] else {
            return domain(format!("malformed state {s:?}"));
        };
        let imm = match imm {
            "imm0" => false,
            "imm1" => true,
            _ => return domain(format!("malformed immunosuppressant flag in {s:?}")),
        };
        Ok(Self::live(age.parse()?, imm, recency.parse()?))
    }
}

impl Serialize for StateKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardForm {
    /// `-I · (1 + α·a)`: the booster cost is only paid when a severe
    /// infection follows.
    #[default]
    Multiplicative,
    /// `-I - α·a`: every dose costs α.
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub form: RewardForm,
}

fn default_gamma() -> f64 {
    0.99
}

impl RewardParams {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            gamma: default_gamma(),
            form: RewardForm::Multiplicative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return domain(format!("vaccine cost must be a finite nonnegative number, got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return domain(format!("discount must lie in (0, 1], got {}", self.gamma));
        }
        Ok(())
    }

    /// Most negative one-step reward.
    pub fn min_reward(&self) -> f64 {
        match self.form {
            RewardForm::Multiplicative => -(1.0 + self.alpha),
            RewardForm::Additive => -1.0 - self.alpha,
        }
    }
}

pub fn reward(severe_next: bool, action: Action, params: &RewardParams) -> f64 {
    let i = f64::from(u8::from(severe_next));
    let a = action.index() as f64;
    match params.form {
        RewardForm::Multiplicative => -i * (1.0 + params.alpha * a),
        RewardForm::Additive => -i - params.alpha * a,
    }
}
