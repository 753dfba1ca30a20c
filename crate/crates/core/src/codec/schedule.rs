use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Primitive counts per rate level, geometric between `c_min` and the full
/// count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub c_min: usize,
    pub levels: usize,
    pub cardinalities: Vec<usize>,
}

impl LevelSchedule {
    pub fn cardinality(&self, level: usize) -> Result<usize> {
        self.cardinalities.get(level).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("level {level} out of range for {} levels", self.levels))
        })
    }
}

/// `|G_l| = round(c_min · exp(l · (ln n_full − ln c_min) / (L − 1)))`, with
/// both endpoints exact.
pub fn level_schedule(n_full: usize, c_min: usize, levels: usize) -> Result<LevelSchedule> {
    if c_min < 1 {
        return Err(Error::InvalidArgument("c_min must be at least 1".into()));
    }
    if levels < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 levels, got {levels}")));
    }
    if n_full < c_min {
        return Err(Error::InvalidArgument(format!("full count {n_full} is below c_min {c_min}")));
    }
    let step = ((n_full as f64).ln() - (c_min as f64).ln()) / (levels - 1) as f64;
    let cardinalities = (0..levels)
        .map(|l| match l {
            0 => c_min,
            l if l == levels - 1 => n_full,
            l => ((c_min as f64) * (l as f64 * step).exp()).round() as usize,
        })
        .collect();
    Ok(LevelSchedule {
        c_min,
        levels,
        cardinalities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_and_two_level() {
        assert_eq!(level_schedule(500, 500, 4).unwrap().cardinalities, vec![500; 4]);
        assert_eq!(level_schedule(9000, 100, 2).unwrap().cardinalities, vec![100, 9000]);
        assert!(level_schedule(10, 20, 3).is_err());
        assert!(level_schedule(10, 2, 1).is_err());
    }
}
