use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Disjoint train / calibration / test index lists, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniformly random split of `0..n`: `m` train, `l` calibration, rest test.
pub fn split(n: usize, m: usize, l: usize, seed: u64) -> Result<SplitIndices> {
    if m == 0 || l == 0 {
        return Err(Error::Input(format!(
            "train and calibration sizes must be positive (got {m}, {l})"
        )));
    }
    if m.checked_add(l).map_or(true, |s| s >= n) {
        return Err(Error::Input(format!(
            "train ({m}) + calibration ({l}) must be smaller than the {n} series"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeededRng::new(seed));
    let take = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitIndices {
        train: take(0..m),
        calibration: take(m..m + l),
        test: take(m + l..n),
    })
}
