//! Replicated simulation experiments: fresh population, one sample, shared
//! splits for every learner, then selection, mixing and risk estimation for
//! each replicate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{calibrate_poisson, cv_pi, SamplingDesign};
use crate::ensemble::{
    minimize_on_simplex, optimal_weights, robust_weights, srb_select, MixWeights, RiskMatrix, WeightProvenance,
    MAX_EXACT_MEMBERS,
};
use crate::error::{Error, Result};
use crate::learners::{ForestParams, LearnerSpec};
use crate::population::{generate_population, Population, PopulationSpec};
use crate::rng::{child_stream, derive_seed};
use crate::split::SplitDesign;
use crate::srb::{auto_weight_mode, cv_msep, residual_msep, risk_estimate, run_shared_splits, srb_predict, SplitRun, WeightMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingSpec {
    Srs { n: usize },
    /// Inclusion probabilities `∝ logistic(alpha + 0.5 y)` scaled to sum to `n`.
    Poisson { n: usize, alpha: f64 },
}

impl SamplingSpec {
    pub fn n(&self) -> usize {
        match *self {
            SamplingSpec::Srs { n } | SamplingSpec::Poisson { n, .. } => n,
        }
    }

    fn build(&self, pop: &Population) -> Result<SamplingDesign> {
        match *self {
            SamplingSpec::Srs { n } => SamplingDesign::srs(pop.size(), n),
            SamplingSpec::Poisson { n, alpha } => SamplingDesign::poisson(calibrate_poisson(pop.y(), n, alpha)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub population: PopulationSpec,
    pub replicates: usize,
    pub sampling: SamplingSpec,
    pub split: SplitDesign,
    /// Number of Monte Carlo splits `T`; ignored by T-fold designs.
    pub splits: usize,
    pub learners: Vec<LearnerSpec>,
    /// `None` picks exact `pi_2` when available and `phi_2` otherwise.
    #[serde(default)]
    pub weight_mode: Option<WeightMode>,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_error(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

/// The three-learner ensemble used by the scaled experiments.
pub fn default_learners() -> Vec<LearnerSpec> {
    vec![LearnerSpec::Ols, LearnerSpec::RandomForest(ForestParams::default()), LearnerSpec::Knn { k: 5 }]
}

impl ExperimentConfig {
    /// N = 500, n = 100, B = 50, T = 20, 70/30 splits, half M1 and half M2.
    pub fn scaled(sampling: SamplingSpec, master_seed: u64) -> Self {
        ExperimentConfig {
            population: PopulationSpec::half_m1_m2(500),
            replicates: 50,
            sampling,
            split: SplitDesign::srs_fraction(0.7),
            splits: 20,
            learners: default_learners(),
            weight_mode: None,
            master_seed,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            config_error(if field == "." { "<root>".to_string() } else { field }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate().map_err(|e| config_error("population", e.to_string()))?;
        if self.replicates == 0 {
            return Err(config_error("replicates", "must be at least 1"));
        }
        if self.learners.is_empty() {
            return Err(config_error("learners", "need at least one learner"));
        }
        if self.learners.len() > MAX_EXACT_MEMBERS {
            return Err(config_error("learners", format!("at most {MAX_EXACT_MEMBERS} learners")));
        }
        for (k, l) in self.learners.iter().enumerate() {
            l.validate().map_err(|e| config_error(format!("learners[{k}]"), e.to_string()))?;
        }
        let size = self.population.size;
        let n = self.sampling.n();
        if n == 0 || n >= size {
            return Err(config_error("sampling.n", format!("must satisfy 0 < n < N = {size}")));
        }
        if let SamplingSpec::Poisson { alpha, .. } = self.sampling {
            if !alpha.is_finite() {
                return Err(config_error("sampling.alpha", "must be finite"));
            }
            if self.weight_mode == Some(WeightMode::ExactPi2) {
                return Err(config_error("weight_mode", "exact_pi2 requires SRS sampling"));
            }
        }
        self.split.validate().map_err(|e| config_error("split", e.to_string()))?;
        match self.split {
            SplitDesign::Srs { .. } => {
                self.split.training_size(n).map_err(|e| config_error("split", e.to_string()))?;
                if self.splits == 0 {
                    return Err(config_error("splits", "must be at least 1"));
                }
            }
            SplitDesign::TFold { folds } if folds > n => {
                return Err(config_error("split.folds", format!("{folds} folds exceed the sample size {n}")));
            }
            SplitDesign::TFold { .. } => {}
        }
        Ok(())
    }
}

/// The five predictors evaluated in each replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Predictor {
    Selected,
    Optimal,
    Robust,
    HypSelected,
    HypOptimal,
}

impl Predictor {
    pub const ALL: [Predictor; 5] =
        [Predictor::Selected, Predictor::Optimal, Predictor::Robust, Predictor::HypSelected, Predictor::HypOptimal];

    pub fn label(self) -> &'static str {
        match self {
            Predictor::Selected => "selected",
            Predictor::Optimal => "optimal",
            Predictor::Robust => "robust",
            Predictor::HypSelected => "hyp_selected",
            Predictor::HypOptimal => "hyp_optimal",
        }
    }
}

/// True mean squared error of prediction over `R` and its three estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MsepRow {
    pub truth: f64,
    pub design: f64,
    pub cv: f64,
    pub residual: f64,
}

impl MsepRow {
    pub const LABELS: [&'static str; 4] = ["true", "design", "cv", "residual"];

    pub fn values(&self) -> [f64; 4] {
        [self.truth, self.design, self.cv, self.residual]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub sample_size: usize,
    pub cv_pi: f64,
    pub weight_mode: WeightMode,
    pub votes: Vec<f64>,
    pub selected: usize,
    pub optimal: Vec<f64>,
    pub robust: Vec<f64>,
    pub hyp_selected: usize,
    pub hyp_optimal: Vec<f64>,
    /// In the order of [`Predictor::ALL`].
    pub msep: Vec<MsepRow>,
}

impl ReplicateRecord {
    pub fn msep_of(&self, p: Predictor) -> MsepRow {
        self.msep[p as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub learner_labels: Vec<String>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

/// Learner names, with a numeric suffix on repeats.
pub fn learner_labels(learners: &[LearnerSpec]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    learners
        .iter()
        .map(|l| {
            let count = seen.entry(l.name()).or_insert(0);
            *count += 1;
            if *count == 1 {
                l.name().to_string()
            } else {
                format!("{}_{}", l.name(), count)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothetical {
    pub selected: usize,
    pub weights: MixWeights,
}

/// Benchmarks that use the outcomes outside the sample: the learner with the
/// least true total squared error on `R`, and the simplex weights minimising
/// the true quadratic.
pub fn hypothetical_benchmarks(runs: &[SplitRun], pop: &Population) -> Result<Hypothetical> {
    let rings = runs.iter().map(srb_predict).collect::<Result<Vec<_>>>()?;
    let first = runs.first().ok_or_else(|| Error::InvalidArgument("no runs".into()))?;
    let out = first.sample().complement();
    let y = pop.y();
    let errors: Vec<Vec<f64>> = rings
        .iter()
        .map(|ring| out.iter().map(|&i| ring.tilde(i).map(|m| m - y[i]).ok_or(Error::MissingPrediction { split: 0, unit: i })).collect())
        .collect::<Result<_>>()?;
    let k = runs.len();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| errors[a].iter().zip(&errors[b]).map(|(x, z)| x * z).sum()).collect())
        .collect();
    let mut selected = 0;
    for j in 1..k {
        if rows[j][j] < rows[selected][selected] {
            selected = j;
        }
    }
    let matrix = RiskMatrix::from_rows(&rows)?;
    let weights = MixWeights { weights: minimize_on_simplex(&matrix)?, provenance: WeightProvenance::Hypothetical };
    Ok(Hypothetical { selected, weights })
}

fn one_hot(k: usize, j: usize) -> Vec<f64> {
    (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect()
}

fn evaluate(runs: &[SplitRun], w: &[f64], pop: &Population) -> Result<MsepRow> {
    let refs: Vec<&SplitRun> = runs.iter().collect();
    let mixed = SplitRun::mix(&refs, w)?;
    let ring = srb_predict(&mixed)?;
    let y = pop.y();
    let out = mixed.sample().complement();
    let truth = out
        .iter()
        .map(|&i| ring.tilde(i).map(|m| (m - y[i]).powi(2)).ok_or(Error::MissingPrediction { split: 0, unit: i }))
        .sum::<Result<f64>>()?
        / out.len() as f64;
    let design = risk_estimate(&mixed, &ring)?.standardized;
    let cv = cv_msep(&mixed)?;
    let y_s = pop.outcomes(mixed.sample().units());
    let residual = residual_msep(&mixed.in_sample_average()?, &y_s)?;
    Ok(MsepRow { truth, design, cv, residual })
}

mod purpose {
    pub const POPULATION: u64 = 0;
    pub const SAMPLE: u64 = 1;
    pub const SPLITS: u64 = 2;
    pub const LEARNER: u64 = 3;
}

/// One replicate, driven only by `(master_seed, replicate)`.
pub fn run_replicate(config: &ExperimentConfig, replicate: usize) -> Result<ReplicateRecord> {
    let seed = config.master_seed;
    let b = replicate as u64;
    let pop = generate_population(&config.population, derive_seed(seed, &[b, purpose::POPULATION]))?;
    let design = config.sampling.build(&pop)?;
    let cv = cv_pi(&design.inclusion_probabilities())?;
    let sample = design.draw(&mut child_stream(seed, &[b, purpose::SAMPLE]));
    let mode = config.weight_mode.unwrap_or_else(|| auto_weight_mode(&sample, &config.split));
    let learners: Vec<LearnerSpec> = config
        .learners
        .iter()
        .enumerate()
        .map(|(k, l)| l.reseeded(derive_seed(seed, &[b, purpose::LEARNER, k as u64])))
        .collect();
    let mut split_rng = child_stream(seed, &[b, purpose::SPLITS]);
    let runs = run_shared_splits(&learners, &pop, &sample, &config.split, config.splits, mode, &mut split_rng)?;
    let rings = runs.iter().map(srb_predict).collect::<Result<Vec<_>>>()?;

    let selector = srb_select(&runs)?;
    let optimal = optimal_weights(&RiskMatrix::estimate(&runs, &rings)?)?;
    let robust = robust_weights(&runs)?;
    let hyp = hypothetical_benchmarks(&runs, &pop)?;

    let k = runs.len();
    let weight_sets = [
        one_hot(k, selector.selected),
        optimal.weights.clone(),
        robust.weights.clone(),
        one_hot(k, hyp.selected),
        hyp.weights.weights.clone(),
    ];
    let msep = weight_sets.iter().map(|w| evaluate(&runs, w, &pop)).collect::<Result<Vec<_>>>()?;
    Ok(ReplicateRecord {
        replicate,
        sample_size: sample.len(),
        cv_pi: cv,
        weight_mode: mode,
        votes: selector.proportions,
        selected: selector.selected,
        optimal: optimal.weights,
        robust: robust.weights,
        hyp_selected: hyp.selected,
        hyp_optimal: hyp.weights.weights,
        msep,
    })
}

/// Run all replicates on a pool of `threads` workers (0 lets rayon decide).
/// Failed replicates are excluded and listed.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<ExperimentResult> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<ReplicateRecord>> =
        pool.install(|| (0..config.replicates).into_par_iter().map(|b| run_replicate(config, b)).collect());
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (replicate, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(ReplicateFailure { replicate, reason: e.to_string() }),
        }
    }
    Ok(ExperimentResult { config: config.clone(), learner_labels: learner_labels(&config.learners), records, failures })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub table: String,
    pub row: String,
    pub column: String,
    pub value: f64,
}

/// Means over completed replicates, in long form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub entries: Vec<SummaryEntry>,
}

impl Summary {
    fn push(&mut self, table: &str, row: &str, column: &str, value: f64) {
        self.entries.push(SummaryEntry { table: table.into(), row: row.into(), column: column.into(), value });
    }

    pub fn get(&self, table: &str, row: &str, column: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.table == table && e.row == row && e.column == column).map(|e| e.value)
    }

    fn distinct(&self, table: &str, pick: impl Fn(&SummaryEntry) -> &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.entries.iter().filter(|e| e.table == table) {
            let v = pick(e);
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let entries = r.deserialize().collect::<std::result::Result<Vec<SummaryEntry>, _>>()?;
        Ok(Summary { entries })
    }
}

impl ExperimentResult {
    pub fn summary(&self) -> Summary {
        let mut s = Summary::default();
        let recs = &self.records;
        s.push("run", "replicates", "completed", recs.len() as f64);
        s.push("run", "replicates", "excluded", self.failures.len() as f64);
        s.push("run", "sample_size", "mean", mean(recs.iter().map(|r| r.sample_size as f64)));
        s.push("run", "cv_pi", "mean", mean(recs.iter().map(|r| r.cv_pi)));
        for (k, label) in self.learner_labels.iter().enumerate() {
            let share = |pick: fn(&ReplicateRecord) -> usize| mean(recs.iter().map(|r| f64::from(u8::from(pick(r) == k))));
            s.push("selection", "hyp_selected", label, share(|r| r.hyp_selected));
            s.push("selection", "hyp_optimal", label, mean(recs.iter().map(|r| r.hyp_optimal[k])));
            s.push("selection", "selected", label, share(|r| r.selected));
            s.push("selection", "votes", label, mean(recs.iter().map(|r| r.votes[k])));
            s.push("selection", "optimal", label, mean(recs.iter().map(|r| r.optimal[k])));
            s.push("selection", "robust", label, mean(recs.iter().map(|r| r.robust[k])));
        }
        for (j, row) in MsepRow::LABELS.iter().enumerate() {
            for p in Predictor::ALL {
                s.push("msep", row, p.label(), mean(recs.iter().map(|r| r.msep_of(p).values()[j])));
            }
        }
        s
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> =
            ["replicate", "status", "sample_size", "cv_pi", "weight_mode"].iter().map(|s| s.to_string()).collect();
        let per_learner = |h: &mut Vec<String>, prefix: &str| {
            h.extend(self.learner_labels.iter().map(|l| format!("{prefix}_{l}")));
        };
        per_learner(&mut h, "vote");
        h.push("selected".into());
        per_learner(&mut h, "optimal");
        per_learner(&mut h, "robust");
        h.push("hyp_selected".into());
        per_learner(&mut h, "hyp_optimal");
        for p in Predictor::ALL {
            h.extend(MsepRow::LABELS.iter().map(|m| format!("{}_{}", p.label(), m)));
        }
        h.push("note".into());
        h
    }

    /// One row per replicate in replicate order; excluded replicates carry
    /// their reason in `note`.
    pub fn write_replicates_csv(&self, path: &Path) -> Result<()> {
        let header = self.header();
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(&header)?;
        let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
        for r in &self.records {
            let mut row = vec![
                r.replicate.to_string(),
                "ok".into(),
                r.sample_size.to_string(),
                r.cv_pi.to_string(),
                r.weight_mode.label().into(),
            ];
            let nums = |row: &mut Vec<String>, v: &[f64]| row.extend(v.iter().map(f64::to_string));
            nums(&mut row, &r.votes);
            row.push(self.learner_labels[r.selected].clone());
            nums(&mut row, &r.optimal);
            nums(&mut row, &r.robust);
            row.push(self.learner_labels[r.hyp_selected].clone());
            nums(&mut row, &r.hyp_optimal);
            for m in &r.msep {
                nums(&mut row, &m.values());
            }
            row.push(String::new());
            rows.push((r.replicate, row));
        }
        for f in &self.failures {
            let mut row = vec![f.replicate.to_string(), "excluded".into()];
            row.resize(header.len() - 1, String::new());
            row.push(f.reason.clone());
            rows.push((f.replicate, row));
        }
        rows.sort_by_key(|(b, _)| *b);
        for (_, row) in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write `replicates.csv`, `summary.csv` and `config.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_replicates_csv(&dir.join("replicates.csv"))?;
        self.summary().write_csv(&dir.join("summary.csv"))?;
        fs::write(dir.join("config.json"), self.config.to_json()?)?;
        Ok(())
    }
}

fn render_table(out: &mut String, summary: &Summary, table: &str, rows: &[String], columns: &[String]) {
    let _ = write!(out, "{:<14}", "");
    for c in columns {
        let _ = write!(out, "{c:>14}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{r:<14}");
        for c in columns {
            match summary.get(table, r, c) {
                Some(v) => {
                    let _ = write!(out, "{v:>14.4}");
                }
                None => {
                    let _ = write!(out, "{:>14}", "-");
                }
            }
        }
        out.push('\n');
    }
}

/// Selection shares and weights per learner, then mean MSEP and estimates per
/// predictor, for each labelled run.
pub fn render_report(runs: &[(String, Summary)]) -> String {
    let mut out = String::new();
    for (label, summary) in runs {
        let completed = summary.get("run", "replicates", "completed").unwrap_or(f64::NAN);
        let excluded = summary.get("run", "replicates", "excluded").unwrap_or(f64::NAN);
        let cv = summary.get("run", "cv_pi", "mean").unwrap_or(f64::NAN);
        let _ = writeln!(out, "== {label}: {completed} replicates ({excluded} excluded), mean cv_pi {:.1}%", 100.0 * cv);
        out.push_str("\nSelection and mixing weights\n");
        let rows = summary.distinct("selection", |e| &e.row);
        let cols = summary.distinct("selection", |e| &e.column);
        render_table(&mut out, summary, "selection", &rows, &cols);
        out.push_str("\nMean squared error of prediction (D/|R|)\n");
        let rows = summary.distinct("msep", |e| &e.row);
        let cols = summary.distinct("msep", |e| &e.column);
        render_table(&mut out, summary, "msep", &rows, &cols);
        out.push('\n');
    }
    out
}
