use serde::{Deserialize, Serialize};

use crate::cohort::{Covariates, Gender};

/// A named run of input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub width: usize,
}

const BLOCKS: [(&str, usize); 11] = [
    ("age_band", 5),
    ("male", 1),
    ("race", 3),
    ("visits_band", 5),
    ("comorbidity_band", 4),
    ("imm", 1),
    ("variant", 3),
    ("num_vaccines", 5),
    // never vaccinated, then the three recency bands
    ("recency", 4),
    ("booster", 1),
    ("general_infection", 1),
];

pub const FEATURE_DIM: usize = 33;

pub fn feature_layout() -> Vec<FeatureBlock> {
    BLOCKS
        .iter()
        .map(|(name, width)| FeatureBlock {
            name: name.to_string(),
            width: *width,
        })
        .collect()
}

struct Cursor {
    x: [f64; FEATURE_DIM],
    at: usize,
}

impl Cursor {
    fn one_hot(&mut self, i: usize, width: usize) {
        debug_assert!(i < width);
        self.x[self.at + i] = 1.0;
        self.at += width;
    }

    fn flag(&mut self, on: bool) {
        self.x[self.at] = f64::from(u8::from(on));
        self.at += 1;
    }
}

/// One-hot encoding of a month's covariates in [`feature_layout`] order.
pub fn encode(c: &Covariates) -> [f64; FEATURE_DIM] {
    let mut k = Cursor {
        x: [0.0; FEATURE_DIM],
        at: 0,
    };
    k.one_hot(c.age.index(), 5);
    k.flag(c.gender == Gender::M);
    k.one_hot(c.race.index(), 3);
    k.one_hot(c.visits.index(), 5);
    k.one_hot(c.comorbidity.index(), 4);
    k.flag(c.imm);
    k.one_hot(c.variant.index(), 3);
    k.one_hot(usize::from(c.num_vaccines.min(4)), 5);
    k.one_hot(c.recency.map_or(0, |r| r.index() + 1), 4);
    k.flag(c.booster);
    k.flag(c.general);
    debug_assert_eq!(k.at, FEATURE_DIM);
    k.x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ComorbidityBand, Race, Variant, VisitsBand};
    use crate::types::{AgeBand, RecencyBand};

    #[test]
    fn layout_width_matches_encoder() {
        assert_eq!(feature_layout().iter().map(|b| b.width).sum::<usize>(), FEATURE_DIM);
    }

    #[test]
    fn one_bit_per_categorical_block() {
        let c = Covariates {
            age: AgeBand::A65Plus,
            gender: Gender::F,
            race: Race::Other,
            visits: VisitsBand::V50Plus,
            comorbidity: ComorbidityBand::C5Plus,
            imm: true,
            variant: Variant::Omicron,
            num_vaccines: 3,
            recency: Some(RecencyBand::M7Plus),
            booster: false,
            general: true,
        };
        let x = encode(&c);
        let hot: Vec<usize> = (0..FEATURE_DIM).filter(|&i| x[i] == 1.0).collect();
        assert_eq!(hot, [4, 8, 13, 17, 18, 21, 25, 30, 32]);
        let never = encode(&Covariates { recency: None, ..c });
        assert_eq!((never[27], never[30]), (1.0, 0.0));
    }
}
