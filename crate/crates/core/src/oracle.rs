//! Exhaustive enumeration of tiny sampling-and-splitting designs.
//!
//! Every sample `s` with `p(s) > 0` and every training set `s1` with
//! `q(s1 | s) > 0` is listed, so expectations over the joint design are finite
//! sums. The `verify_*` functions use these tables to check the unbiasedness
//! identities of the risk estimators exactly (up to floating-point rounding).

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::design::{calibrate_poisson, Sample, SamplingDesign};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::population::{generate_population, Population, PopulationSpec};
use crate::rng;
use crate::split::{phi2, pi2_exact_srs, Split, SplitDesign};
use crate::srb::{risk_estimate, srb_predict, SplitRun, WeightMode};

pub const MAX_SRS_UNITS: usize = 10;
pub const MAX_POISSON_UNITS: usize = 8;

type Mask = u32;

fn units_of(mask: Mask) -> Vec<usize> {
    (0..32).filter(|&i| mask & (1 << i) != 0).collect()
}

fn has(mask: Mask, i: usize) -> bool {
    mask & (1 << i) != 0
}

fn subsets_of_size(mask: Mask, k: usize) -> Vec<Mask> {
    let mut out = Vec::new();
    let mut sub = mask;
    loop {
        if sub.count_ones() as usize == k {
            out.push(sub);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & mask;
    }
    out.sort_unstable();
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

#[derive(Clone, Debug)]
pub struct SampleRow {
    pub sample: Mask,
    pub probability: f64,
    /// `(s1, q(s1 | s))`.
    pub splits: Vec<(Mask, f64)>,
}

/// Everything known about one training set `s1` under the joint design.
#[derive(Clone, Debug)]
struct TrainingSet {
    /// `f(s1)`.
    mass: f64,
    /// `sum_{s : i in s, i not in s1} f(s1, s)` per unit.
    test_mass: Vec<f64>,
    /// `(s, f(s1, s))`.
    rows: Vec<(Mask, f64)>,
}

/// The complete joint table of a `(p(s), q(s1 | s))` design.
#[derive(Clone, Debug)]
pub struct DesignEnumeration {
    population: Population,
    sampling: SamplingDesign,
    split: SplitDesign,
    samples: Vec<SampleRow>,
    by_training: BTreeMap<Mask, TrainingSet>,
}

pub fn enumerate_design(pop: &Population, sampling: &SamplingDesign, split: &SplitDesign) -> Result<DesignEnumeration> {
    let size = pop.size();
    if sampling.population_size() != size {
        return Err(Error::InvalidArgument("design and population differ in size".into()));
    }
    split.validate()?;
    let all: Mask = if size == 0 { 0 } else { (1 << size) - 1 };
    let samples: Vec<(Mask, f64)> = match sampling {
        SamplingDesign::SrsWor { n, .. } => {
            if size > MAX_SRS_UNITS {
                return Err(Error::EnumerationLimit(format!("SRS enumeration supports N <= {MAX_SRS_UNITS}")));
            }
            let p = 1.0 / binomial(size, *n);
            subsets_of_size(all, *n).into_iter().map(|s| (s, p)).collect()
        }
        SamplingDesign::Poisson { pi } => {
            if size > MAX_POISSON_UNITS {
                return Err(Error::EnumerationLimit(format!("Poisson enumeration supports N <= {MAX_POISSON_UNITS}")));
            }
            (0..=all)
                .map(|s| (s, (0..size).map(|i| if has(s, i) { pi[i] } else { 1.0 - pi[i] }).product()))
                .filter(|&(_, p)| p > 0.0)
                .collect()
        }
    };

    let mut rows = Vec::with_capacity(samples.len());
    let mut by_training: BTreeMap<Mask, TrainingSet> = BTreeMap::new();
    for (s, p) in samples {
        let n = s.count_ones() as usize;
        let n1 = match split {
            SplitDesign::TFold { folds } if !n.is_multiple_of(*folds) => {
                return Err(Error::EnumerationLimit(format!(
                    "T-fold with {folds} folds is enumerable only when folds divide the sample size ({n})"
                )))
            }
            _ => split.nominal_training_size(n),
        };
        let q = 1.0 / binomial(n, n1);
        let splits: Vec<(Mask, f64)> = subsets_of_size(s, n1).into_iter().map(|s1| (s1, q)).collect();
        for &(s1, q) in &splits {
            let joint = p * q;
            let entry = by_training
                .entry(s1)
                .or_insert_with(|| TrainingSet { mass: 0.0, test_mass: vec![0.0; size], rows: Vec::new() });
            entry.mass += joint;
            entry.rows.push((s, joint));
            for i in units_of(s & !s1) {
                entry.test_mass[i] += joint;
            }
        }
        rows.push(SampleRow { sample: s, probability: p, splits });
    }
    let enumeration = DesignEnumeration {
        population: pop.clone(),
        sampling: sampling.clone(),
        split: *split,
        samples: rows,
        by_training,
    };
    let total = enumeration.total_mass();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("joint design sums to {total}")));
    }
    Ok(enumeration)
}

impl DesignEnumeration {
    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn samples(&self) -> &[SampleRow] {
        &self.samples
    }

    /// Number of `(s, s1)` rows.
    pub fn row_count(&self) -> usize {
        self.samples.iter().map(|r| r.splits.len()).sum()
    }

    /// `sum f(s1, s)` over all rows.
    pub fn total_mass(&self) -> f64 {
        self.samples.iter().flat_map(|r| r.splits.iter().map(move |(_, q)| r.probability * q)).sum()
    }

    /// Largest deviation from 1 of `sum_s p(s)` and of each `sum_s1 q(s1 | s)`.
    pub fn normalization_error(&self) -> f64 {
        let p_total: f64 = self.samples.iter().map(|r| r.probability).sum();
        self.samples
            .iter()
            .map(|r| (r.splits.iter().map(|(_, q)| q).sum::<f64>() - 1.0).abs())
            .fold((p_total - 1.0).abs(), f64::max)
    }

    /// Training sets with positive probability, in mask order.
    pub fn training_sets(&self) -> impl Iterator<Item = Mask> + '_ {
        self.by_training.keys().copied()
    }

    /// `f(s1)`.
    pub fn training_mass(&self, s1: Mask) -> f64 {
        self.by_training.get(&s1).map_or(0.0, |t| t.mass)
    }

    /// `pi_2i = Pr(i in s2 | s1)`; zero for `i` in `s1`.
    pub fn pi2(&self, s1: Mask, unit: usize) -> f64 {
        match self.by_training.get(&s1) {
            Some(t) if !has(s1, unit) => t.test_mass[unit] / t.mass,
            _ => 0.0,
        }
    }

    /// `Pr(i in s)` by summation.
    pub fn inclusion_probability(&self, unit: usize) -> f64 {
        self.samples.iter().filter(|r| has(r.sample, unit)).map(|r| r.probability).sum()
    }

    /// `Pr(i in s1 | i in s)` by summation.
    pub fn training_probability(&self, unit: usize) -> f64 {
        let in_s1: f64 = self.by_training.iter().filter(|(s1, _)| has(**s1, unit)).map(|(_, t)| t.mass).sum();
        in_s1 / self.inclusion_probability(unit)
    }

    /// Mass of rows whose training or test set is empty.
    pub fn degenerate_mass(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|r| {
                r.splits
                    .iter()
                    .filter(move |(s1, _)| *s1 == 0 || *s1 == r.sample)
                    .map(move |(_, q)| r.probability * q)
            })
            .fold(0.0, |acc, m| acc + m)
    }

    /// Fit `learner` on every nonempty training set and predict all units.
    fn fit_all(&self, learner: &LearnerSpec) -> Result<BTreeMap<Mask, Vec<f64>>> {
        let pop = &self.population;
        self.by_training
            .keys()
            .filter(|&&s1| s1 != 0)
            .map(|&s1| {
                let train = units_of(s1);
                let model = learner.fit(&pop.rows(&train), &pop.outcomes(&train))?;
                let preds = (0..pop.size()).map(|i| model.predict(pop.x(i))).collect::<Result<Vec<_>>>()?;
                Ok((s1, preds))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl Comparison {
    pub fn deviation(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Outcome of one identity check.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub identity: String,
    pub tolerance: f64,
    pub comparisons: Vec<Comparison>,
    /// Probability mass skipped because a learner could not be trained.
    pub excluded_mass: f64,
    /// Measurements are reported but never fail.
    pub measurement: bool,
    pub notes: Vec<String>,
}

impl Report {
    fn new(identity: impl Into<String>, tolerance: f64) -> Self {
        Report {
            identity: identity.into(),
            tolerance,
            comparisons: Vec::new(),
            excluded_mass: 0.0,
            measurement: false,
            notes: Vec::new(),
        }
    }

    fn push(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        self.comparisons.push(Comparison { label: label.into(), lhs, rhs });
    }

    pub fn max_abs_deviation(&self) -> f64 {
        self.comparisons.iter().map(Comparison::deviation).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.measurement
            || (!self.comparisons.is_empty()
                && self.comparisons.iter().all(|c| c.lhs.is_finite() && c.rhs.is_finite())
                && self.max_abs_deviation() <= self.tolerance)
    }

    pub fn status(&self) -> &'static str {
        match (self.measurement, self.passed()) {
            (true, _) => "MEASURED",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<8} {:<44} max|dev| = {:.3e} (tol {:.0e}, {} checks)",
            self.status(),
            self.identity,
            self.max_abs_deviation(),
            self.tolerance,
            self.comparisons.len()
        )?;
        if self.excluded_mass > 0.0 {
            write!(f, " excluded mass {:.3e}", self.excluded_mass)?;
        }
        for note in &self.notes {
            write!(f, "\n         {note}")?;
        }
        Ok(())
    }
}

/// Write `identity,max_abs_deviation,tolerance,status` rows.
pub fn write_reports_csv(path: &Path, reports: &[Report]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["identity", "max_abs_deviation", "tolerance", "status"])?;
    for r in reports {
        w.write_record([
            r.identity.clone(),
            r.max_abs_deviation().to_string(),
            r.tolerance.to_string(),
            r.status().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Normalisation of the joint table: `sum p(s) = 1`, `sum q(s1|s) = 1`, `sum f = 1`.
pub fn verify_normalization(e: &DesignEnumeration, label: &str) -> Report {
    let mut r = Report::new(format!("normalization[{label}]"), 1e-12);
    r.push("sum p and q", e.normalization_error(), 0.0);
    r.push("sum f(s1,s)", e.total_mass(), 1.0);
    r.notes.push(format!("{} samples, {} rows, degenerate mass {:.3e}", e.samples.len(), e.row_count(), e.degenerate_mass()));
    r
}

/// Conditional unbiasedness of the weighted test-set error for `D_R(s1; mu)`
/// given each training set `s1`.
pub fn verify_subsample_identity(e: &DesignEnumeration, learner: &LearnerSpec) -> Result<Report> {
    let mut report = Report::new(format!("subsample[{}]", learner.name()), 1e-9);
    let preds = e.fit_all(learner)?;
    let y = e.population.y();
    for (&s1, info) in &e.by_training {
        let Some(mu) = preds.get(&s1) else {
            report.excluded_mass += info.mass;
            continue;
        };
        let mut estimated = 0.0;
        let mut actual = 0.0;
        for &(s, joint) in &info.rows {
            let cond = joint / info.mass;
            for i in 0..y.len() {
                let e2 = (mu[i] - y[i]).powi(2);
                if !has(s, i) {
                    actual += cond * e2;
                } else if !has(s1, i) {
                    estimated += cond * (1.0 / e.pi2(s1, i) - 1.0) * e2;
                }
            }
        }
        report.push(format!("s1={:?}", units_of(s1)), estimated, actual);
    }
    Ok(report)
}

/// Exact SRB per sample: `mu_bar(x_i, s)` for every unit.
fn srb_means(row: &SampleRow, preds: &BTreeMap<Mask, Vec<f64>>, size: usize) -> Option<Vec<f64>> {
    let mut bar = vec![0.0; size];
    for (s1, q) in &row.splits {
        let mu = preds.get(s1)?;
        for i in 0..size {
            bar[i] += q * mu[i];
        }
    }
    Some(bar)
}

/// Exact-SRB estimator `D^(s; mu_bar_k, mu_bar_l)` and the realised
/// `sum_{i in R} e_i(mu_bar_k) e_i(mu_bar_l)` for one sample.
fn exact_cross_risk(
    e: &DesignEnumeration,
    row: &SampleRow,
    preds_k: &BTreeMap<Mask, Vec<f64>>,
    preds_l: &BTreeMap<Mask, Vec<f64>>,
) -> Option<(f64, f64)> {
    let y = e.population.y();
    let size = y.len();
    let bar_k = srb_means(row, preds_k, size)?;
    let bar_l = srb_means(row, preds_l, size)?;
    let actual: f64 = (0..size).filter(|&i| !has(row.sample, i)).map(|i| (bar_k[i] - y[i]) * (bar_l[i] - y[i])).sum();
    let mut estimate = 0.0;
    for (s1, q) in &row.splits {
        let (mk, ml) = (&preds_k[s1], &preds_l[s1]);
        for i in units_of(row.sample & !s1) {
            let factor = 1.0 / e.pi2(*s1, i) - 1.0;
            let ee = (mk[i] - y[i]) * (ml[i] - y[i]);
            let aa = (mk[i] - bar_k[i]) * (ml[i] - bar_l[i]);
            estimate += q * factor * (ee - aa);
        }
    }
    Some((estimate, actual))
}

/// `E_p[D^_kl] = E_p[sum_R e_i(mu_bar_k) e_i(mu_bar_l)]`; with `k = l` this is
/// the unbiasedness of the exact-SRB risk estimator.
pub fn verify_theorem1_pair(e: &DesignEnumeration, learner_k: &LearnerSpec, learner_l: &LearnerSpec) -> Result<Report> {
    let name = if learner_k == learner_l {
        format!("srb_risk[{}]", learner_k.name())
    } else {
        format!("cross_risk[{},{}]", learner_k.name(), learner_l.name())
    };
    let mut report = Report::new(name, 1e-9);
    let preds_k = e.fit_all(learner_k)?;
    let preds_l = if learner_k == learner_l { preds_k.clone() } else { e.fit_all(learner_l)? };
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for row in &e.samples {
        match exact_cross_risk(e, row, &preds_k, &preds_l) {
            Some((est, act)) => {
                lhs += row.probability * est;
                rhs += row.probability * act;
            }
            None => report.excluded_mass += row.probability,
        }
    }
    report.push("E_p[estimate] vs risk", lhs, rhs);
    Ok(report)
}

pub fn verify_theorem1(e: &DesignEnumeration, learner: &LearnerSpec) -> Result<Report> {
    verify_theorem1_pair(e, learner, learner)
}

/// Pointwise `e_i(mu_bar)^2 = E_q[e_i^2 | s] - E_q[a_i^2 | s]` for every sample
/// and every out-of-sample unit.
pub fn verify_srb_decomposition(e: &DesignEnumeration, learner: &LearnerSpec) -> Result<Report> {
    let mut report = Report::new(format!("srb_decomposition[{}]", learner.name()), 1e-10);
    let preds = e.fit_all(learner)?;
    let y = e.population.y();
    for row in &e.samples {
        let Some(bar) = srb_means(row, &preds, y.len()) else {
            report.excluded_mass += row.probability;
            continue;
        };
        for i in (0..y.len()).filter(|&i| !has(row.sample, i)) {
            let (mut e2, mut a2) = (0.0, 0.0);
            for (s1, q) in &row.splits {
                let mu = preds[s1][i];
                e2 += q * (mu - y[i]).powi(2);
                a2 += q * (mu - bar[i]).powi(2);
            }
            report.push(format!("s={:?} i={i}", units_of(row.sample)), (bar[i] - y[i]).powi(2), e2 - a2);
        }
    }
    Ok(report)
}

/// `phi_2i` in closed form against `E[pi_2i | i not in s1]` by enumeration.
///
/// The closed form is evaluated at `Pr(i in s1 | i in s)` as tabulated; the
/// note records how much that probability varies across units.
pub fn verify_phi2(e: &DesignEnumeration) -> Result<Report> {
    let mut report = Report::new("phi2", 1e-10);
    let size = e.population.size();
    let mut p1_range = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..size {
        let pi = e.sampling.inclusion_probability(i);
        if pi <= 0.0 {
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (&s1, info) in &e.by_training {
            if !has(s1, i) {
                num += e.pi2(s1, i) * info.mass;
                den += info.mass;
            }
        }
        let p1 = e.training_probability(i);
        p1_range = (p1_range.0.min(p1), p1_range.1.max(p1));
        report.push(format!("unit {i}: inclusion"), e.inclusion_probability(i), pi);
        report.push(format!("unit {i}: phi2"), phi2(pi, p1)?, num / den);
    }
    report.notes.push(format!("Pr(i in s1 | i in s) ranges over [{:.6}, {:.6}]", p1_range.0, p1_range.1));
    Ok(report)
}

/// For SRS of `n` from `y` with the sample-mean predictor:
/// `E_p(D_s) = (N - n)(1 + 1/n) S_y^2` and `E_p(s_y^2) = S_y^2`.
pub fn verify_intro_identity(y: &[f64], n: usize) -> Result<Report> {
    let size = y.len();
    if size > MAX_SRS_UNITS || n < 2 || n > size {
        return Err(Error::InvalidArgument(format!("need 2 <= n <= N <= {MAX_SRS_UNITS}")));
    }
    let mut report = Report::new(format!("mean_predictor_loss[N={size},n={n}]"), 1e-9);
    let ybar = y.iter().sum::<f64>() / size as f64;
    let s2 = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / (size - 1) as f64;
    let all: Mask = (1 << size) - 1;
    let samples = subsets_of_size(all, n);
    let p = 1.0 / samples.len() as f64;
    let (mut loss, mut var) = (0.0, 0.0);
    for s in samples {
        let units = units_of(s);
        let mean = units.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        loss += p * (0..size).filter(|&j| !has(s, j)).map(|j| (mean - y[j]).powi(2)).sum::<f64>();
        var += p * units.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    report.push("E_p(D_s)", loss, (size - n) as f64 * (1.0 + 1.0 / n as f64) * s2);
    report.push("E_p(s_y^2)", var, s2);
    Ok(report)
}

/// Gap between the Monte Carlo estimator run over every split exactly once
/// (out-of-bag `a_i`) and the exact-SRB estimator (`a_i` against `mu_bar`),
/// per sample. Twice-SRS designs only.
pub fn measure_oob_gap(e: &DesignEnumeration, learner: &LearnerSpec) -> Result<Report> {
    let mut report = Report::new(format!("oob_gap[{}]", learner.name()), f64::INFINITY);
    report.measurement = true;
    let preds = e.fit_all(learner)?;
    let design = Arc::new(e.sampling.clone());
    for row in &e.samples {
        let Some((exact, _)) = exact_cross_risk(e, row, &preds, &preds) else {
            report.excluded_mass += row.probability;
            continue;
        };
        let sample = Sample::new(units_of(row.sample), design.clone())?;
        let splits: Vec<Split> = row
            .splits
            .iter()
            .map(|(s1, _)| Split::new(units_of(*s1), units_of(row.sample & !s1)))
            .collect::<Result<_>>()?;
        let run = SplitRun::fit(learner, &e.population, &sample, Arc::new(splits), WeightMode::ExactPi2, &e.split)?;
        let ring = srb_predict(&run)?;
        let mc = risk_estimate(&run, &ring)?.value;
        report.push(format!("s={:?}", units_of(row.sample)), mc, exact);
    }
    Ok(report)
}

/// Enumerated `pi_2i` against `n2 / (N - n1)` under twice-SRS.
pub fn verify_pi2_closed_form(e: &DesignEnumeration) -> Result<Report> {
    let mut report = Report::new("pi2_closed_form", 1e-12);
    let (size, n) = match e.sampling {
        SamplingDesign::SrsWor { population, n } => (population, n),
        _ => return Err(Error::InvalidArgument("closed-form pi2 needs SRS sampling".into())),
    };
    let n1 = e.split.training_size(n)?;
    let closed = pi2_exact_srs(size, n1, n - n1)?;
    for s1 in e.training_sets() {
        for i in (0..size).filter(|&i| !has(s1, i)) {
            report.push(format!("s1={:?} i={i}", units_of(s1)), e.pi2(s1, i), closed);
        }
    }
    Ok(report)
}

/// Under twice-SRS, `phi2(n/N, n1/n)` equals `n2/(N - n1)`.
pub fn verify_phi2_equals_pi2(size: usize, n: usize, n1: usize) -> Result<Report> {
    let mut report = Report::new(format!("phi2_equals_pi2[N={size},n={n},n1={n1}]"), 1e-14);
    report.push("phi2 vs pi2", phi2(n as f64 / size as f64, n1 as f64 / n as f64)?, pi2_exact_srs(size, n1, n - n1)?);
    Ok(report)
}

/// Whether the exact-SRB risk estimator is exactly unbiased for `learner`.
///
/// The `a_i^2` term is unbiased only when `sum_{s2} (1/pi_2i - 1) a_i^2`
/// reproduces `sum_R a_i^2`, which holds when `a_i` does not vary with `i`
/// (predictions that ignore `x`). For other learners `a_i` depends on `s`
/// through `mu_bar(x_i, s)` and the gap is measured instead.
pub fn risk_estimator_is_exact(learner: &LearnerSpec) -> bool {
    matches!(learner, LearnerSpec::Constant { .. } | LearnerSpec::Mean)
}

/// The deterministic learners used by the suite.
pub fn suite_learners() -> Vec<LearnerSpec> {
    vec![LearnerSpec::Constant { value: 5.0 }, LearnerSpec::Mean, LearnerSpec::Ols]
}

/// Run every identity at desk scale with populations up to `max_n` units.
pub fn run_suite(max_n: usize, seed: u64) -> Result<Vec<Report>> {
    let mut reports = Vec::new();

    reports.push(verify_intro_identity(&[1.0, 2.0, 3.0, 4.0, 5.0], 2)?);
    let mut r = rng::child_stream(seed, &[0]);
    for _ in 0..20 {
        let size = r.random_range(3..=max_n.clamp(3, 8));
        let n = r.random_range(2..size);
        let y: Vec<f64> = (0..size).map(|_| r.random_range(-5.0..5.0)).collect();
        reports.push(verify_intro_identity(&y, n)?);
    }

    let size = max_n.min(8);
    let pop = generate_population(&PopulationSpec::half_m1_m2(size), rng::derive_seed(seed, &[1]))?;
    let n = size / 2;
    let split = SplitDesign::srs_count(n / 2);
    let twice_srs = enumerate_design(&pop, &SamplingDesign::srs(size, n)?, &split)?;
    reports.push(verify_normalization(&twice_srs, "twice-SRS"));
    reports.push(verify_pi2_closed_form(&twice_srs)?);
    for learner in suite_learners() {
        reports.push(verify_subsample_identity(&twice_srs, &learner)?);
        reports.push(verify_srb_decomposition(&twice_srs, &learner)?);
        let mut risk = verify_theorem1(&twice_srs, &learner)?;
        risk.measurement = !risk_estimator_is_exact(&learner);
        reports.push(risk);
    }
    let constant = LearnerSpec::Constant { value: 5.0 };
    reports.push(verify_theorem1_pair(&twice_srs, &constant, &LearnerSpec::Mean)?);
    let mut pair = verify_theorem1_pair(&twice_srs, &LearnerSpec::Mean, &LearnerSpec::Ols)?;
    pair.measurement = true;
    reports.push(pair);
    reports.push(verify_phi2(&twice_srs)?);
    reports.push(verify_phi2_equals_pi2(size, n, n / 2)?);
    reports.push(measure_oob_gap(&twice_srs, &LearnerSpec::Ols)?);

    let small = max_n.min(6);
    let pop6 = generate_population(&PopulationSpec::half_m1_m2(small), rng::derive_seed(seed, &[2]))?;
    let pi = calibrate_poisson(pop6.y(), small / 2, -1.0)?;
    let poisson = enumerate_design(&pop6, &SamplingDesign::poisson(pi)?, &SplitDesign::srs_fraction(0.5))?;
    reports.push(verify_normalization(&poisson, "Poisson"));
    reports.push(verify_phi2(&poisson)?);
    reports.push(verify_subsample_identity(&poisson, &LearnerSpec::Mean)?);

    if max_n >= 10 {
        let pop10 = generate_population(&PopulationSpec::half_m1_m2(10), rng::derive_seed(seed, &[3]))?;
        let e10 = enumerate_design(&pop10, &SamplingDesign::srs(10, 5)?, &SplitDesign::srs_count(3))?;
        reports.push(verify_pi2_closed_form(&e10)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(size: usize) -> Population {
        generate_population(&PopulationSpec::half_m1_m2(size), 11).unwrap()
    }

    #[test]
    fn uniform_twice_srs_table() {
        let e = enumerate_design(&pop(4), &SamplingDesign::srs(4, 2).unwrap(), &SplitDesign::srs_count(1)).unwrap();
        assert_eq!(e.samples().len(), 6);
        assert_eq!(e.row_count(), 12);
        for row in e.samples() {
            for (_, q) in &row.splits {
                assert!((row.probability * q - 1.0 / 12.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn poisson_table_normalises() {
        let pi = vec![0.2, 0.9, 0.5, 0.35, 0.6, 0.75];
        let e = enumerate_design(&pop(6), &SamplingDesign::poisson(pi).unwrap(), &SplitDesign::srs_fraction(0.5))
            .unwrap();
        assert!((e.total_mass() - 1.0).abs() < 1e-12);
        assert!(e.normalization_error() < 1e-12);
        assert!(verify_phi2(&e).unwrap().passed());
    }

    #[test]
    fn size_limits() {
        let e = enumerate_design(&pop(11), &SamplingDesign::srs(11, 3).unwrap(), &SplitDesign::srs_count(1));
        assert!(matches!(e, Err(Error::EnumerationLimit(_))));
        let e = enumerate_design(&pop(9), &SamplingDesign::poisson(vec![0.5; 9]).unwrap(), &SplitDesign::srs_count(1));
        assert!(matches!(e, Err(Error::EnumerationLimit(_))));
    }

    #[test]
    fn constant_learner_subsample_identity() {
        let e = enumerate_design(&pop(6), &SamplingDesign::srs(6, 3).unwrap(), &SplitDesign::srs_count(2)).unwrap();
        let r = verify_subsample_identity(&e, &LearnerSpec::Constant { value: 1.0 }).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn perfect_learner_has_zero_risk() {
        // y is an exact linear function of x, so OLS on any two points of a
        // one-dimensional population is perfect.
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| 2.0 + 0.5 * i as f64).collect();
        let p = Population::from_rows(&rows, y).unwrap();
        let e = enumerate_design(&p, &SamplingDesign::srs(6, 4).unwrap(), &SplitDesign::srs_count(2)).unwrap();
        let r = verify_theorem1(&e, &LearnerSpec::Ols).unwrap();
        assert!(r.comparisons[0].lhs.abs() < 1e-12 && r.comparisons[0].rhs.abs() < 1e-12);
    }

    #[test]
    fn mean_predictor_hand_example() {
        let r = verify_intro_identity(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
        assert!((r.comparisons[0].rhs - 11.25).abs() < 1e-12);
        assert!(r.passed());
        let r = verify_intro_identity(&[3.0; 5], 3).unwrap();
        assert!(r.comparisons.iter().all(|c| c.lhs.abs() < 1e-12 && c.rhs.abs() < 1e-12));
    }

    #[test]
    fn phi2_with_certain_unit() {
        let pi = vec![1.0, 0.3, 0.5, 0.7, 0.4];
        let e = enumerate_design(&pop(5), &SamplingDesign::poisson(pi).unwrap(), &SplitDesign::srs_fraction(0.5))
            .unwrap();
        let r = verify_phi2(&e).unwrap();
        assert!(r.passed(), "{r}");
        let unit0 = r.comparisons.iter().find(|c| c.label == "unit 0: phi2").unwrap();
        assert!((unit0.lhs - 1.0).abs() < 1e-12 && (unit0.rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfold_enumerates_only_when_divisible() {
        let d = SamplingDesign::srs(6, 4).unwrap();
        assert!(enumerate_design(&pop(6), &d, &SplitDesign::TFold { folds: 2 }).is_ok());
        assert!(enumerate_design(&pop(6), &d, &SplitDesign::TFold { folds: 3 }).is_err());
    }

    #[test]
    fn suite_passes() {
        let reports = run_suite(8, 7).unwrap();
        for r in &reports {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn report_status_strings() {
        let mut r = Report::new("x", 1e-9);
        assert_eq!(r.status(), "FAIL");
        r.push("a", 1.0, 1.0);
        assert_eq!(r.status(), "PASS");
        r.push("b", 1.0, 2.0);
        assert_eq!(r.status(), "FAIL");
        r.measurement = true;
        assert_eq!(r.status(), "MEASURED");
    }
}
