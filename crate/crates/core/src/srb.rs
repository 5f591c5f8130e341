//! Monte Carlo subsampling Rao-Blackwellisation and design-based risk estimation.
//!
//! A [`SplitRun`] stores, for each of `T` training/test splits of one sample,
//! the predictions of a learner trained on the training part. Averaging these
//! over the splits gives the SRB predictor ([`srb_predict`]); the weighted
//! test-set errors give an estimator of its risk over repeated sampling
//! ([`risk_estimate`]) that needs no model for the outcomes.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Sample, SamplingDesign};
use crate::error::{invalid, Error, Result};
use crate::learners::{ForestParams, LearnerSpec};
use crate::population::Population;
use crate::rng;
use crate::split::{draw_split, phi2, pi2_exact_srs, tfold_splits, Split, SplitDesign};

/// Which test-set inclusion probability weights the risk estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `pi_2i = n2 / (N - n1)`, exact under SRS sampling with SRS splitting.
    ExactPi2,
    /// `phi_2i = pi_i (1 - p1) / (1 - pi_i p1)`, usable under any design.
    Phi2,
}

impl WeightMode {
    pub fn label(self) -> &'static str {
        match self {
            WeightMode::ExactPi2 => "exact_pi2",
            WeightMode::Phi2 => "phi2",
        }
    }
}

fn admits_exact_pi2(sampling: &SamplingDesign, split: &SplitDesign, n: usize) -> bool {
    matches!(sampling, SamplingDesign::SrsWor { .. })
        && match split {
            SplitDesign::Srs { .. } => true,
            SplitDesign::TFold { folds } => *folds > 0 && n.is_multiple_of(*folds),
        }
}

/// Exact `pi_2i` where the sampling and splitting designs admit the closed form,
/// `phi_2i` otherwise.
pub fn auto_weight_mode(sample: &Sample, split: &SplitDesign) -> WeightMode {
    if admits_exact_pi2(sample.design(), split, sample.len()) {
        WeightMode::ExactPi2
    } else {
        WeightMode::Phi2
    }
}

/// Test-set inclusion probabilities for the units of `sample`, dense over the
/// population with `NaN` outside the sample.
pub fn test_inclusion_weights(sample: &Sample, split: &SplitDesign, mode: WeightMode) -> Result<Vec<f64>> {
    let n = sample.len();
    let n1 = split.training_size(n)?;
    let mut w = vec![f64::NAN; sample.population_size()];
    match mode {
        WeightMode::ExactPi2 => {
            if !admits_exact_pi2(sample.design(), split, n) {
                return Err(invalid("exact pi2 needs SRS sampling with SRS (or evenly divided T-fold) splitting"));
            }
            let value = pi2_exact_srs(sample.population_size(), n1, n - n1)?;
            for &i in sample.units() {
                w[i] = value;
            }
        }
        WeightMode::Phi2 => {
            let p1 = split.training_probability(n)?;
            for &i in sample.units() {
                w[i] = phi2(sample.design().inclusion_probability(i), p1)?;
            }
        }
    }
    Ok(w)
}

/// Draw the split sequence for one sample. T-fold designs yield one systematic
/// pass and ignore `t`.
pub fn draw_splits<R: Rng + ?Sized>(sample: &Sample, design: &SplitDesign, t: usize, rng: &mut R) -> Result<Vec<Split>> {
    match design {
        SplitDesign::TFold { folds } => tfold_splits(sample, *folds, rng),
        SplitDesign::Srs { .. } => {
            if t == 0 {
                return Err(invalid("need at least one split"));
            }
            (0..t).map(|_| draw_split(sample, design, rng)).collect()
        }
    }
}

/// Predictions of one learner over a shared sequence of splits.
#[derive(Clone, Debug)]
pub struct SplitRun {
    sample: Sample,
    splits: Arc<Vec<Split>>,
    /// Per split, a prediction for every population unit; units in the
    /// training set hold the fitted value, or `NaN` when none was recorded.
    predictions: Vec<Vec<f64>>,
    /// Observed outcomes, dense over the population with `NaN` outside the sample.
    outcomes: Arc<Vec<f64>>,
    weights: Arc<Vec<f64>>,
    mode: WeightMode,
    learner: Option<LearnerSpec>,
}

impl SplitRun {
    /// Fit `learner` on the training part of each split and predict every
    /// population unit. Forest learners get a per-split seed derived from
    /// their configured seed.
    pub fn fit(
        learner: &LearnerSpec,
        pop: &Population,
        sample: &Sample,
        splits: Arc<Vec<Split>>,
        mode: WeightMode,
        design: &SplitDesign,
    ) -> Result<SplitRun> {
        if splits.is_empty() {
            return Err(invalid("split list is empty"));
        }
        let weights = Arc::new(test_inclusion_weights(sample, design, mode)?);
        let base_seed = match learner {
            LearnerSpec::RandomForest(ForestParams { seed, .. }) => *seed,
            _ => 0,
        };
        let predictions = splits
            .par_iter()
            .enumerate()
            .map(|(t, split)| {
                let spec = learner.reseeded(rng::derive_seed(base_seed, &[t as u64]));
                let rows = pop.rows(split.training());
                let y = pop.outcomes(split.training());
                let model = spec
                    .fit(&rows, &y)
                    .map_err(|e| Error::SplitFit { split: t, reason: e.to_string() })?;
                (0..pop.size())
                    .map(|i| model.predict(pop.x(i)))
                    .collect::<Result<Vec<f64>>>()
                    .map_err(|e| Error::SplitFit { split: t, reason: e.to_string() })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut outcomes = vec![f64::NAN; pop.size()];
        for &i in sample.units() {
            outcomes[i] = pop.y()[i];
        }
        Ok(SplitRun {
            sample: sample.clone(),
            splits,
            predictions,
            outcomes: Arc::new(outcomes),
            weights,
            mode,
            learner: Some(learner.clone()),
        })
    }

    /// Assemble a run from precomputed predictions. `predictions[t][i]` must be
    /// finite for every unit outside the training set of split `t`;
    /// `outcomes` and `weights` are dense over the population and only read on
    /// the sample.
    pub fn from_parts(
        sample: Sample,
        splits: Vec<Split>,
        predictions: Vec<Vec<f64>>,
        outcomes: Vec<f64>,
        weights: Vec<f64>,
        mode: WeightMode,
    ) -> Result<SplitRun> {
        let size = sample.population_size();
        if splits.is_empty() || splits.len() != predictions.len() {
            return Err(invalid("need one prediction vector per split and at least one split"));
        }
        if outcomes.len() != size || weights.len() != size || predictions.iter().any(|p| p.len() != size) {
            return Err(invalid("predictions, outcomes and weights must cover the population"));
        }
        for (t, split) in splits.iter().enumerate() {
            if split.training().iter().chain(split.test()).any(|&u| !sample.contains(u))
                || split.training().len() + split.test().len() != sample.len()
            {
                return Err(invalid(format!("split {t} is not a partition of the sample")));
            }
            for i in 0..size {
                if !split.in_training(i) && !predictions[t][i].is_finite() {
                    return Err(Error::MissingPrediction { split: t, unit: i });
                }
            }
        }
        if sample.units().iter().any(|&i| !outcomes[i].is_finite()) {
            return Err(Error::NonFinite("sample outcomes"));
        }
        Ok(SplitRun {
            sample,
            splits: Arc::new(splits),
            predictions,
            outcomes: Arc::new(outcomes),
            weights: Arc::new(weights),
            mode,
            learner: None,
        })
    }

    /// The run of the convex combination `sum_k w_k mu_k` over the shared splits.
    pub fn mix(runs: &[&SplitRun], weights: &[f64]) -> Result<SplitRun> {
        let first = *runs.first().ok_or_else(|| invalid("nothing to mix"))?;
        if runs.len() != weights.len() {
            return Err(invalid("one weight per run"));
        }
        for r in &runs[1..] {
            ensure_shared(first, r)?;
        }
        let predictions = (0..first.splits.len())
            .map(|t| {
                (0..first.population_size())
                    .map(|i| runs.iter().zip(weights).map(|(r, w)| w * r.predictions[t][i]).sum())
                    .collect()
            })
            .collect();
        Ok(SplitRun { predictions, learner: None, ..first.clone() })
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn split_count(&self) -> usize {
        self.splits.len()
    }

    pub fn population_size(&self) -> usize {
        self.sample.population_size()
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn learner(&self) -> Option<&LearnerSpec> {
        self.learner.as_ref()
    }

    pub fn weight(&self, unit: usize) -> f64 {
        self.weights[unit]
    }

    pub fn outcome(&self, unit: usize) -> Option<f64> {
        Some(self.outcomes[unit]).filter(|v| v.is_finite())
    }

    /// `mu(x_i, s1^(t))` for a unit outside the training set of split `t`.
    pub fn prediction(&self, t: usize, unit: usize) -> Option<f64> {
        if self.splits[t].in_training(unit) {
            None
        } else {
            Some(self.predictions[t][unit])
        }
    }

    /// Prediction of split `t`'s model at any unit, including its own training units.
    pub fn fitted(&self, t: usize, unit: usize) -> Option<f64> {
        Some(self.predictions[t][unit]).filter(|v| v.is_finite())
    }

    fn test_error(&self, t: usize, unit: usize) -> f64 {
        self.predictions[t][unit] - self.outcomes[unit]
    }

    /// Sum of squared test errors on split `t`.
    pub fn test_sse(&self, t: usize) -> f64 {
        self.splits[t].test().iter().map(|&i| self.test_error(t, i).powi(2)).sum()
    }

    /// Average of split predictions at each sampled unit over all splits,
    /// including those where the unit was used for training.
    pub fn in_sample_average(&self) -> Result<Vec<f64>> {
        let t_count = self.splits.len() as f64;
        self.sample
            .units()
            .iter()
            .map(|&i| {
                let mut sum = 0.0;
                for t in 0..self.splits.len() {
                    sum += self.fitted(t, i).ok_or(Error::MissingPrediction { split: t, unit: i })?;
                }
                Ok(sum / t_count)
            })
            .collect()
    }

    pub fn shares_splits_with(&self, other: &SplitRun) -> bool {
        ensure_shared(self, other).is_ok()
    }

    /// Write one row per (split, test unit): prediction, outcome, error, weight.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["split", "unit", "prediction", "outcome", "error", "weight"])?;
        for (t, split) in self.splits.iter().enumerate() {
            for &i in split.test() {
                w.write_record([
                    t.to_string(),
                    i.to_string(),
                    self.predictions[t][i].to_string(),
                    self.outcomes[i].to_string(),
                    self.test_error(t, i).to_string(),
                    self.weights[i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn ensure_shared(a: &SplitRun, b: &SplitRun) -> Result<()> {
    let same_splits = Arc::ptr_eq(&a.splits, &b.splits) || a.splits == b.splits;
    let same_weights = Arc::ptr_eq(&a.weights, &b.weights)
        || a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    if same_splits && same_weights && a.mode == b.mode && a.sample.units() == b.sample.units() {
        Ok(())
    } else {
        Err(Error::MismatchedSplits)
    }
}

/// Draw `t` splits of `sample` and fit `learner` on each.
pub fn run_splits<R: Rng + ?Sized>(
    learner: &LearnerSpec,
    pop: &Population,
    sample: &Sample,
    design: &SplitDesign,
    t: usize,
    mode: WeightMode,
    rng: &mut R,
) -> Result<SplitRun> {
    let splits = Arc::new(draw_splits(sample, design, t, rng)?);
    SplitRun::fit(learner, pop, sample, splits, mode, design)
}

/// One split sequence, every learner fitted on it.
pub fn run_shared_splits<R: Rng + ?Sized>(
    learners: &[LearnerSpec],
    pop: &Population,
    sample: &Sample,
    design: &SplitDesign,
    t: usize,
    mode: WeightMode,
    rng: &mut R,
) -> Result<Vec<SplitRun>> {
    let splits = Arc::new(draw_splits(sample, design, t, rng)?);
    learners
        .iter()
        .map(|l| SplitRun::fit(l, pop, sample, splits.clone(), mode, design))
        .collect()
}

/// Monte Carlo SRB predictions: the all-splits average on `R` and the
/// out-of-bag average on the sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SrbPredictor {
    tilde: Vec<f64>,
    oob: Vec<f64>,
    oob_counts: Vec<usize>,
    in_sample: Vec<bool>,
}

impl SrbPredictor {
    pub fn population_size(&self) -> usize {
        self.tilde.len()
    }

    /// `mu~(x_i, s)` for `i` in `R`.
    pub fn tilde(&self, unit: usize) -> Option<f64> {
        (!self.in_sample[unit]).then(|| self.tilde[unit])
    }

    /// Out-of-bag average for `i` in the sample.
    pub fn oob(&self, unit: usize) -> Option<f64> {
        self.in_sample[unit].then(|| self.oob[unit])
    }

    /// `T_i`, the number of splits leaving `i` out of training.
    pub fn oob_count(&self, unit: usize) -> usize {
        self.oob_counts[unit]
    }
}

pub fn srb_predict(run: &SplitRun) -> Result<SrbPredictor> {
    let size = run.population_size();
    let in_sample = run.sample.mask();
    let mut tilde = vec![0.0; size];
    let mut oob = vec![0.0; size];
    let mut counts = vec![0usize; size];
    for (t, split) in run.splits.iter().enumerate() {
        for i in 0..size {
            if in_sample[i] {
                if !split.in_training(i) {
                    oob[i] += run.predictions[t][i];
                    counts[i] += 1;
                }
            } else {
                tilde[i] += run.predictions[t][i];
            }
        }
    }
    let t_count = run.splits.len() as f64;
    for i in 0..size {
        if in_sample[i] {
            if counts[i] == 0 {
                return Err(Error::NoOutOfBag(i));
            }
            oob[i] /= counts[i] as f64;
            tilde[i] = f64::NAN;
        } else {
            tilde[i] /= t_count;
            oob[i] = f64::NAN;
        }
    }
    Ok(SrbPredictor { tilde, oob, oob_counts: counts, in_sample })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    /// Estimated total squared error over `R`.
    pub value: f64,
    /// `value / |R|`.
    pub standardized: f64,
    pub error_term: f64,
    pub variance_term: f64,
    pub mode: WeightMode,
}

fn check_ring(run: &SplitRun, ring: &SrbPredictor) -> Result<()> {
    if ring.population_size() != run.population_size() || ring.in_sample != run.sample.mask() {
        return Err(invalid("SRB predictor does not belong to this run's sample"));
    }
    Ok(())
}

fn design_factor(run: &SplitRun, unit: usize) -> Result<f64> {
    let w = run.weights[unit];
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::MissingWeight(unit));
    }
    Ok(1.0 / w - 1.0)
}

/// Weighted cross terms on split `t`:
/// `(sum (1/w - 1) e_k e_l, sum (1/w - 1) a_k a_l)` over the test units.
fn split_cross_terms(
    run_k: &SplitRun,
    run_l: &SplitRun,
    ring_k: &SrbPredictor,
    ring_l: &SrbPredictor,
    t: usize,
) -> Result<(f64, f64)> {
    let mut e_sum = 0.0;
    let mut a_sum = 0.0;
    for &i in run_k.splits[t].test() {
        let f = design_factor(run_k, i)?;
        let (pk, pl) = (run_k.predictions[t][i], run_l.predictions[t][i]);
        let (ek, el) = (pk - run_k.outcomes[i], pl - run_l.outcomes[i]);
        let (ak, al) = (pk - ring_k.oob[i], pl - ring_l.oob[i]);
        e_sum += f * ek * el;
        a_sum += f * ak * al;
    }
    Ok((e_sum, a_sum))
}

/// Per-split summand of the risk estimator, `sum (1/w - 1)(e^2 - a^2)` over
/// the test set of split `t`.
pub fn split_risk(run: &SplitRun, ring: &SrbPredictor, t: usize) -> Result<f64> {
    check_ring(run, ring)?;
    let (e, a) = split_cross_terms(run, run, ring, ring, t)?;
    Ok(e - a)
}

/// `D~ = T^-1 sum_t sum_{i in s2} (1/w_i - 1) {e_i^2 - a_i^2}`, with
/// `a_i` measured against the out-of-bag average. May be negative.
pub fn risk_estimate(run: &SplitRun, ring: &SrbPredictor) -> Result<RiskEstimate> {
    check_ring(run, ring)?;
    let mut e_total = 0.0;
    let mut a_total = 0.0;
    for t in 0..run.splits.len() {
        let (e, a) = split_cross_terms(run, run, ring, ring, t)?;
        e_total += e;
        a_total += a;
    }
    let t_count = run.splits.len() as f64;
    let (error_term, variance_term) = (e_total / t_count, a_total / t_count);
    let value = error_term - variance_term;
    let out = run.population_size() - run.sample.len();
    if out == 0 {
        return Err(invalid("the sample is the whole population; R is empty"));
    }
    Ok(RiskEstimate { value, standardized: value / out as f64, error_term, variance_term, mode: run.mode })
}

/// Estimated cross risk `D^_kl` of two learners over the same splits.
pub fn pairwise_risk(run_k: &SplitRun, run_l: &SplitRun, ring_k: &SrbPredictor, ring_l: &SrbPredictor) -> Result<f64> {
    ensure_shared(run_k, run_l)?;
    check_ring(run_k, ring_k)?;
    check_ring(run_l, ring_l)?;
    let mut total = 0.0;
    for t in 0..run_k.splits.len() {
        let (e, a) = split_cross_terms(run_k, run_l, ring_k, ring_l, t)?;
        total += e - a;
    }
    Ok(total / run_k.splits.len() as f64)
}

/// Mean squared residual over the sample.
pub fn residual_msep(tilde_on_s: &[f64], y_s: &[f64]) -> Result<f64> {
    if tilde_on_s.is_empty() {
        return Err(invalid("empty sample"));
    }
    if tilde_on_s.len() != y_s.len() {
        return Err(invalid("predictions and outcomes differ in length"));
    }
    Ok(tilde_on_s.iter().zip(y_s).map(|(m, y)| (m - y).powi(2)).sum::<f64>() / y_s.len() as f64)
}

/// Unweighted mean over splits of the test-set mean squared error.
pub fn cv_msep(run: &SplitRun) -> Result<f64> {
    let mut total = 0.0;
    for (t, split) in run.splits.iter().enumerate() {
        if split.test().is_empty() {
            return Err(invalid(format!("split {t} has an empty test set")));
        }
        total += run.test_sse(t) / split.test().len() as f64;
    }
    Ok(total / run.splits.len() as f64)
}
