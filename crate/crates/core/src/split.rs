//! Sample-splitting designs `q(s1 | s)` and test-set inclusion probabilities.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::Sample;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingSize {
    /// `n1 = round(f * n)`, halves rounded up.
    Fraction(f64),
    Count(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitDesign {
    /// `s1` is an SRS without replacement from `s`.
    Srs { training: TrainingSize },
    /// `s` is shuffled into `folds` near-equal clusters, each used once as `s2`.
    TFold { folds: usize },
}

impl SplitDesign {
    pub fn srs_fraction(fraction: f64) -> Self {
        SplitDesign::Srs { training: TrainingSize::Fraction(fraction) }
    }

    pub fn srs_count(n1: usize) -> Self {
        SplitDesign::Srs { training: TrainingSize::Count(n1) }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitDesign::Srs { training: TrainingSize::Fraction(f) } if !(f > 0.0 && f < 1.0) => {
                Err(invalid(format!("training fraction {f} must lie in (0, 1)")))
            }
            SplitDesign::TFold { folds } if folds < 2 => Err(invalid("T-fold needs at least 2 folds")),
            _ => Ok(()),
        }
    }

    /// Training size for a sample of size `n`, without the `0 < n1 < n` check.
    pub fn nominal_training_size(&self, n: usize) -> usize {
        match *self {
            SplitDesign::Srs { training: TrainingSize::Fraction(f) } => ((f * n as f64).round() as usize).min(n),
            SplitDesign::Srs { training: TrainingSize::Count(c) } => c.min(n),
            SplitDesign::TFold { folds } => n - n.div_ceil(folds.max(1)),
        }
    }

    /// Training size for a sample of size `n`; errors unless `0 < n1 < n`.
    pub fn training_size(&self, n: usize) -> Result<usize> {
        self.validate()?;
        if let SplitDesign::TFold { folds } = *self {
            if folds > n {
                return Err(invalid(format!("{folds} folds for a sample of {n} units")));
            }
        }
        let n1 = match *self {
            SplitDesign::Srs { training: TrainingSize::Count(c) } => c,
            _ => self.nominal_training_size(n),
        };
        if n1 == 0 || n1 >= n {
            return Err(invalid(format!("training size {n1} must satisfy 0 < n1 < n = {n}")));
        }
        Ok(n1)
    }

    /// `p1 = Pr(i in s1 | i in s)`, the same for every unit of the sample.
    pub fn training_probability(&self, n: usize) -> Result<f64> {
        match *self {
            SplitDesign::TFold { folds } => {
                self.training_size(n)?;
                Ok((folds - 1) as f64 / folds as f64)
            }
            SplitDesign::Srs { .. } => Ok(self.training_size(n)? as f64 / n as f64),
        }
    }
}

/// A training/test partition of a sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    training: Vec<usize>,
    test: Vec<usize>,
}

impl Split {
    /// Both parts are sorted; they must be disjoint and nonempty.
    pub fn new(mut training: Vec<usize>, mut test: Vec<usize>) -> Result<Self> {
        training.sort_unstable();
        test.sort_unstable();
        if training.is_empty() || test.is_empty() {
            return Err(invalid("training and test sets must both be nonempty"));
        }
        let overlap = training.iter().any(|u| test.binary_search(u).is_ok());
        if overlap {
            return Err(invalid("training and test sets overlap"));
        }
        Ok(Split { training, test })
    }

    pub fn training(&self) -> &[usize] {
        &self.training
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn in_training(&self, unit: usize) -> bool {
        self.training.binary_search(&unit).is_ok()
    }
}

/// Draw one SRS split of `s`.
pub fn draw_split<R: Rng + ?Sized>(s: &Sample, design: &SplitDesign, rng: &mut R) -> Result<Split> {
    match design {
        SplitDesign::TFold { .. } => Err(invalid("T-fold splits are drawn together with tfold_splits")),
        SplitDesign::Srs { .. } => {
            let n1 = design.training_size(s.len())?;
            let mut units = s.units().to_vec();
            units.shuffle(rng);
            let test = units.split_off(n1);
            Split::new(units, test)
        }
    }
}

/// Randomly partition `s` into `folds` clusters whose sizes differ by at most
/// one, and return one split per cluster with that cluster as the test set.
pub fn tfold_splits<R: Rng + ?Sized>(s: &Sample, folds: usize, rng: &mut R) -> Result<Vec<Split>> {
    let n = s.len();
    if folds < 2 || folds > n {
        return Err(invalid(format!("fold count {folds} must lie in [2, {n}]")));
    }
    let mut units = s.units().to_vec();
    units.shuffle(rng);
    let base = n / folds;
    let extra = n % folds;
    let mut clusters = Vec::with_capacity(folds);
    let mut start = 0;
    for j in 0..folds {
        let size = base + usize::from(j < extra);
        clusters.push(start..start + size);
        start += size;
    }
    clusters
        .iter()
        .map(|range| {
            let test = units[range.clone()].to_vec();
            let training = units[..range.start].iter().chain(&units[range.end..]).copied().collect();
            Split::new(training, test)
        })
        .collect()
}

/// Exact `pi_2i = n2 / (N - n1)` under SRS of `s` followed by SRS of `s1`.
pub fn pi2_exact_srs(population: usize, n1: usize, n2: usize) -> Result<f64> {
    if n2 == 0 || n1 + n2 > population {
        return Err(invalid(format!(
            "need n2 >= 1 and n1 + n2 <= N, got N = {population}, n1 = {n1}, n2 = {n2}"
        )));
    }
    Ok(n2 as f64 / (population - n1) as f64)
}

/// `phi_2i = pi_i (1 - p1) / (1 - pi_i p1)`: probability that unit `i` lands in
/// the test set given that it is not in the training set.
pub fn phi2(pi: f64, p1: f64) -> Result<f64> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(invalid(format!("inclusion probability {pi} must lie in (0, 1]")));
    }
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(invalid(format!("training probability {p1} must lie in (0, 1)")));
    }
    Ok(pi * (1.0 - p1) / (1.0 - pi * p1))
}
