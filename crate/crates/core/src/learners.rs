//! Base learners `mu(x, s1)`: anything that can be trained on an index set and
//! then predict at an arbitrary feature vector.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub trees: usize,
    pub features_per_split: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 100, features_per_split: 1, min_leaf: 5, bootstrap: true, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Least squares with intercept; minimum-norm solution when rank deficient.
    Ols,
    RandomForest(ForestParams),
    /// k nearest neighbours, Euclidean distance on training-standardised features.
    Knn { k: usize },
    /// Training-set mean of the outcome.
    Mean,
    Constant { value: f64 },
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Ols => "ols",
            LearnerSpec::RandomForest(_) => "forest",
            LearnerSpec::Knn { .. } => "knn",
            LearnerSpec::Mean => "mean",
            LearnerSpec::Constant { .. } => "constant",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        match self {
            LearnerSpec::RandomForest(p) if p.trees == 0 => bad("forest needs at least one tree"),
            LearnerSpec::RandomForest(p) if p.features_per_split == 0 => bad("features_per_split must be positive"),
            LearnerSpec::RandomForest(p) if p.min_leaf == 0 => bad("min_leaf must be positive"),
            LearnerSpec::Knn { k: 0 } => bad("k must be positive"),
            LearnerSpec::Constant { value } if !value.is_finite() => Err(Error::NonFinite("constant learner")),
            _ => Ok(()),
        }
    }

    /// Same spec with its internal seed (if any) replaced.
    pub fn reseeded(&self, seed: u64) -> LearnerSpec {
        match self {
            LearnerSpec::RandomForest(p) => LearnerSpec::RandomForest(ForestParams { seed, ..*p }),
            other => other.clone(),
        }
    }

    pub fn fit(&self, rows: &[&[f64]], y: &[f64]) -> Result<TrainedPredictor> {
        fit(self, rows, y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedPredictor {
    Linear { coefficients: Vec<f64> },
    Forest { dim: usize, trees: Vec<Tree> },
    Knn { dim: usize, k: usize, center: Vec<f64>, scale: Vec<f64>, points: Vec<f64>, y: Vec<f64> },
    Constant { dim: usize, value: f64 },
}

pub fn fit(spec: &LearnerSpec, rows: &[&[f64]], y: &[f64]) -> Result<TrainedPredictor> {
    spec.validate()?;
    if rows.is_empty() {
        return Err(Error::Fit("empty training set".into()));
    }
    if rows.len() != y.len() {
        return Err(Error::Fit(format!("{} rows but {} outcomes", rows.len(), y.len())));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Fit("ragged feature rows".into()));
    }
    if rows.iter().flat_map(|r| r.iter()).chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    Ok(match spec {
        LearnerSpec::Ols => fit_ols(rows, y)?,
        LearnerSpec::RandomForest(p) => fit_forest(p, rows, y),
        LearnerSpec::Knn { k } => fit_knn(*k, rows, y),
        LearnerSpec::Mean => TrainedPredictor::Constant { dim, value: exact_mean(y.iter().copied()) },
        LearnerSpec::Constant { value } => TrainedPredictor::Constant { dim, value: *value },
    })
}

impl TrainedPredictor {
    pub fn dim(&self) -> usize {
        match self {
            TrainedPredictor::Linear { coefficients } => coefficients.len() - 1,
            TrainedPredictor::Forest { dim, .. }
            | TrainedPredictor::Knn { dim, .. }
            | TrainedPredictor::Constant { dim, .. } => *dim,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        let value = match self {
            TrainedPredictor::Linear { coefficients } => {
                coefficients[0] + coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            }
            TrainedPredictor::Forest { trees, .. } => exact_mean(trees.iter().map(|t| t.predict(x))),
            TrainedPredictor::Knn { dim, k, center, scale, points, y } => {
                let z: Vec<f64> = x.iter().zip(center).zip(scale).map(|((v, c), s)| (v - c) / s).collect();
                let mut dist: Vec<(f64, usize)> = points
                    .chunks_exact(*dim)
                    .enumerate()
                    .map(|(j, p)| (p.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j))
                    .collect();
                let k = (*k).min(dist.len());
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                exact_mean(dist[..k].iter().map(|&(_, j)| y[j]))
            }
            TrainedPredictor::Constant { value, .. } => *value,
        };
        if !value.is_finite() {
            return Err(Error::NonFinite("prediction"));
        }
        Ok(value)
    }
}

/// Arithmetic mean that returns the common value exactly when all inputs agree.
fn exact_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut first = f64::NAN;
    let mut same = true;
    for v in values {
        if n == 0 {
            first = v;
        } else if v != first {
            same = false;
        }
        sum += v;
        n += 1;
    }
    if same {
        first
    } else {
        sum / n as f64
    }
}

fn fit_ols(rows: &[&[f64]], y: &[f64]) -> Result<TrainedPredictor> {
    let n = rows.len();
    let p = rows[0].len() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let target = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let largest = svd.singular_values.max();
    let eps = largest * (n.max(p) as f64) * f64::EPSILON;
    let beta = svd.solve(&target, eps).map_err(|e| Error::Fit(e.to_string()))?;
    Ok(TrainedPredictor::Linear { coefficients: beta.iter().copied().collect() })
}

fn fit_knn(k: usize, rows: &[&[f64]], y: &[f64]) -> TrainedPredictor {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let center: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..dim)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - center[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let points = rows
        .iter()
        .flat_map(|r| r.iter().enumerate().map(|(j, v)| (v - center[j]) / scale[j]).collect::<Vec<_>>())
        .collect();
    TrainedPredictor::Knn { dim, k, center, scale, points, y: y.to_vec() }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A CART regression tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

fn fit_forest(params: &ForestParams, rows: &[&[f64]], y: &[f64]) -> TrainedPredictor {
    let dim = rows[0].len();
    let n = rows.len();
    let trees = (0..params.trees)
        .map(|t| {
            let mut rng = rng::child_stream(params.seed, &[t as u64]);
            let mut idx: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            let mut builder = TreeBuilder { rows, y, params, rng: &mut rng, nodes: Vec::new() };
            builder.grow(&mut idx);
            Tree { nodes: builder.nodes }
        })
        .collect();
    TrainedPredictor::Forest { dim, trees }
}

struct TreeBuilder<'a, R: Rng> {
    rows: &'a [&'a [f64]],
    y: &'a [f64],
    params: &'a ForestParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn grow(&mut self, idx: &mut [usize]) -> usize {
        let at = self.nodes.len();
        let leaf_value = exact_mean(idx.iter().map(|&i| self.y[i]));
        self.nodes.push(Node::Leaf(leaf_value));
        let constant = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if constant || idx.len() < 2 * self.params.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(idx) else {
            return at;
        };
        let (feature, threshold) = (best.feature, best.threshold);
        let mut cut = 0;
        for k in 0..idx.len() {
            if self.rows[idx[k]][feature] <= threshold {
                idx.swap(cut, k);
                cut += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(cut);
        let left = self.grow(left_idx);
        let right = self.grow(right_idx);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let dim = self.rows[0].len();
        let m = self.params.features_per_split.min(dim);
        let mut order = index::sample(self.rng, dim, dim).into_vec();
        // Sampled features first; fall back to the rest only when none of them can split.
        let (first, rest) = order.split_at_mut(m);
        let best = self.scan(idx, first);
        if best.is_some() {
            return best;
        }
        self.scan(idx, rest)
    }

    fn scan(&self, idx: &[usize], features: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let base = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &feature in features {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.rows[i][feature], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += sorted[k - 1].1;
                if k < min_leaf || n - k < min_leaf || sorted[k - 1].0 == sorted[k].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64 - base;
                if gain > 1e-12 * (1.0 + base.abs()) && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let (a, b) = (sorted[k - 1].0, sorted[k].0);
                    let mid = 0.5 * (a + b);
                    let threshold = if mid < b { mid } else { a };
                    best = Some(BestSplit { gain, feature, threshold });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_rows() -> Vec<Vec<f64>> {
        let mut rows = Vec::new();
        for a in 0..4 {
            for b in 0..3 {
                rows.push(vec![a as f64 * 0.7 - 1.0, b as f64 + 0.25 * a as f64]);
            }
        }
        rows
    }

    fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn ols_recovers_exact_plane() {
        let rows = grid_rows();
        let y: Vec<f64> = rows.iter().map(|r| 1.0 + 2.0 * r[0] + 3.0 * r[1]).collect();
        match LearnerSpec::Ols.fit(&refs(&rows), &y).unwrap() {
            TrainedPredictor::Linear { coefficients } => {
                for (c, e) in coefficients.iter().zip([1.0, 2.0, 3.0]) {
                    assert!((c - e).abs() < 1e-8);
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ols_rank_deficient_does_not_abort() {
        let rows = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let model = LearnerSpec::Ols.fit(&refs(&rows), &[1.0, 2.0, 3.0]).unwrap();
        assert!((model.predict(&[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn constant_outcome_is_reproduced() {
        let rows = grid_rows();
        let y = vec![0.1; rows.len()];
        let specs = [
            LearnerSpec::RandomForest(ForestParams { trees: 10, ..Default::default() }),
            LearnerSpec::Knn { k: 3 },
            LearnerSpec::Mean,
        ];
        for spec in specs {
            let m = spec.fit(&refs(&rows), &y).unwrap();
            assert_eq!(m.predict(&[0.3, 9.0]).unwrap(), 0.1, "{}", spec.name());
        }
        let m = LearnerSpec::Ols.fit(&refs(&rows), &y).unwrap();
        assert!((m.predict(&[0.3, 9.0]).unwrap() - 0.1).abs() < 1e-10);
    }

    #[test]
    fn one_nn_interpolates() {
        let rows = grid_rows();
        let y: Vec<f64> = (0..rows.len()).map(|i| (i * i) as f64).collect();
        let m = LearnerSpec::Knn { k: 1 }.fit(&refs(&rows), &y).unwrap();
        for (r, v) in rows.iter().zip(&y) {
            assert_eq!(m.predict(r).unwrap(), *v);
        }
    }

    #[test]
    fn single_full_tree_interpolates_distinct_points() {
        let rows = grid_rows();
        let y: Vec<f64> = rows.iter().map(|r| (3.0 * r[0]).sin() + r[1] * r[1]).collect();
        let spec = LearnerSpec::RandomForest(ForestParams {
            trees: 1,
            features_per_split: 2,
            min_leaf: 1,
            bootstrap: false,
            seed: 3,
        });
        let m = spec.fit(&refs(&rows), &y).unwrap();
        for (r, v) in rows.iter().zip(&y) {
            assert_eq!(m.predict(r).unwrap(), *v);
        }
    }

    #[test]
    fn forest_is_deterministic_in_seed() {
        let rows = grid_rows();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[1]).collect();
        let spec = LearnerSpec::RandomForest(ForestParams { trees: 20, min_leaf: 1, ..Default::default() });
        let a = spec.fit(&refs(&rows), &y).unwrap();
        let b = spec.fit(&refs(&rows), &y).unwrap();
        assert_eq!(a, b);
        let c = spec.reseeded(99).fit(&refs(&rows), &y).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn knn_standardises_with_training_moments_only() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 100.0], vec![2.0, 200.0]];
        match (LearnerSpec::Knn { k: 1 }).fit(&refs(&rows), &[0.0, 1.0, 2.0]).unwrap() {
            TrainedPredictor::Knn { center, scale, .. } => {
                assert_eq!(center, vec![1.0, 100.0]);
                assert!((scale[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
                assert!((scale[1] - 100.0 * (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fit_errors() {
        assert!(LearnerSpec::Ols.fit(&[], &[]).is_err());
        let rows = vec![vec![f64::NAN]];
        assert!(LearnerSpec::Mean.fit(&refs(&rows), &[1.0]).is_err());
        let rows = vec![vec![1.0]];
        let m = LearnerSpec::Mean.fit(&refs(&rows), &[1.0]).unwrap();
        assert!(m.predict(&[f64::INFINITY]).is_err());
        assert!(m.predict(&[1.0, 2.0]).is_err());
        assert!(LearnerSpec::Knn { k: 0 }.fit(&refs(&rows), &[1.0]).is_err());
    }

    #[test]
    fn spec_serde_shape() {
        let json = r#"[{"kind":"ols"},{"kind":"random_forest","trees":5},{"kind":"knn","k":7}]"#;
        let specs: Vec<LearnerSpec> = serde_json::from_str(json).unwrap();
        assert_eq!(specs[0], LearnerSpec::Ols);
        assert_eq!(specs[1], LearnerSpec::RandomForest(ForestParams { trees: 5, ..Default::default() }));
        assert_eq!(specs[2], LearnerSpec::Knn { k: 7 });
    }
}
