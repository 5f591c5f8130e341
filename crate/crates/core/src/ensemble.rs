//! Ensembles of SRB predictors: selection by expected majority vote, and
//! convex mixing with optimal or vote-proportion weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::srb::{pairwise_risk, split_risk, srb_predict, SplitRun, SrbPredictor, WeightMode};

/// Largest ensemble the exhaustive face search accepts.
pub const MAX_EXACT_MEMBERS: usize = 12;

/// Symmetric matrix of (estimated or true) cross risks `D_kl`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskMatrix {
    size: usize,
    values: Vec<f64>,
    mode: Option<WeightMode>,
}

impl RiskMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(invalid("risk matrix must be square"));
        }
        let values: Vec<f64> = rows.concat();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("risk matrix"));
        }
        Ok(RiskMatrix { size, values, mode: None })
    }

    /// `D^_kl` for every pair of runs.
    pub fn estimate(runs: &[SplitRun], rings: &[SrbPredictor]) -> Result<Self> {
        if runs.len() != rings.len() || runs.is_empty() {
            return Err(invalid("need one SRB predictor per run"));
        }
        let k = runs.len();
        let mut values = vec![0.0; k * k];
        for a in 0..k {
            for b in a..k {
                let d = pairwise_risk(&runs[a], &runs[b], &rings[a], &rings[b])?;
                values[a * k + b] = d;
                values[b * k + a] = d;
            }
        }
        Ok(RiskMatrix { size: k, values, mode: Some(runs[0].mode()) })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.size + l]
    }

    pub fn mode(&self) -> Option<WeightMode> {
        self.mode
    }

    /// `w' D w`.
    pub fn quadratic(&self, w: &[f64]) -> f64 {
        let k = self.size;
        (0..k).map(|a| (0..k).map(|b| w[a] * w[b] * self.values[a * k + b]).sum::<f64>()).sum()
    }

    fn check_symmetric(&self) -> Result<()> {
        for a in 0..self.size {
            for b in a + 1..self.size {
                let (x, y) = (self.get(a, b), self.get(b, a));
                if (x - y).abs() > 1e-9 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::NotSymmetric(a, b));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightProvenance {
    Optimal,
    Robust,
    Hypothetical,
}

/// Mixing weights on the simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub weights: Vec<f64>,
    pub provenance: WeightProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorResult {
    pub selected: usize,
    /// Share of splits voting for each learner.
    pub proportions: Vec<f64>,
}

fn check_shared(runs: &[SplitRun]) -> Result<()> {
    let first = runs.first().ok_or_else(|| invalid("empty ensemble"))?;
    if runs[1..].iter().all(|r| first.shares_splits_with(r)) {
        Ok(())
    } else {
        Err(Error::MismatchedSplits)
    }
}

/// One vote shared equally among the exact minimisers of `scores`.
fn vote_for_minimum(scores: &[f64], tally: &mut [f64]) {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let winners: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] == best).collect();
    let share = 1.0 / winners.len() as f64;
    for k in winners {
        tally[k] += share;
    }
}

/// First index attaining the maximum.
fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

fn split_vote_proportions(runs: &[SplitRun], score: impl Fn(&SplitRun, usize, usize) -> Result<f64>) -> Result<Vec<f64>> {
    let k = runs.len();
    let t_count = runs[0].split_count();
    let mut tally = vec![0.0; k];
    let mut scores = vec![0.0; k];
    for t in 0..t_count {
        for (j, run) in runs.iter().enumerate() {
            scores[j] = score(run, j, t)?;
        }
        vote_for_minimum(&scores, &mut tally);
    }
    Ok(tally.into_iter().map(|v| v / t_count as f64).collect())
}

/// Expected majority vote: on each split the learner with the least test-set
/// sum of squared errors gets the vote; the learner with the largest share is
/// selected.
pub fn srb_select(runs: &[SplitRun]) -> Result<SelectorResult> {
    check_shared(runs)?;
    let proportions = split_vote_proportions(runs, |run, _, t| Ok(run.test_sse(t)))?;
    Ok(SelectorResult { selected: first_argmax(&proportions), proportions })
}

/// Weights proportional to the number of splits on which each learner has the
/// smallest per-split risk estimate.
pub fn robust_weights(runs: &[SplitRun]) -> Result<MixWeights> {
    check_shared(runs)?;
    let rings = runs.iter().map(srb_predict).collect::<Result<Vec<_>>>()?;
    let weights = split_vote_proportions(runs, |run, j, t| split_risk(run, &rings[j], t))?;
    Ok(MixWeights { weights, provenance: WeightProvenance::Robust })
}

/// Minimise `w' D w` over the simplex.
pub fn optimal_weights(d_hat: &RiskMatrix) -> Result<MixWeights> {
    Ok(MixWeights { weights: minimize_on_simplex(d_hat)?, provenance: WeightProvenance::Optimal })
}

/// Exhaustive active-set search: every face of the simplex is solved with the
/// equality-constrained closed form, infeasible stationary points are
/// discarded, and the best feasible candidate wins. Among candidates whose
/// objective ties the minimum, the one with the largest support is returned.
pub fn minimize_on_simplex(d: &RiskMatrix) -> Result<Vec<f64>> {
    let k = d.size();
    if k == 0 {
        return Err(invalid("empty risk matrix"));
    }
    if k > MAX_EXACT_MEMBERS {
        return Err(invalid(format!("exhaustive simplex search supports at most {MAX_EXACT_MEMBERS} members")));
    }
    d.check_symmetric()?;
    if k == 1 {
        return Ok(vec![1.0]);
    }

    let mut candidates: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for mask in 1u32..(1 << k) {
        let face: Vec<usize> = (0..k).filter(|&j| mask & (1 << j) != 0).collect();
        if let Some(w) = solve_face(d, &face) {
            candidates.push((d.quadratic(&w), face.len(), w));
        }
    }
    let best = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + best.abs());
    let chosen = candidates
        .into_iter()
        .filter(|c| c.0 <= best + tol)
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .expect("vertices are always feasible");
    Ok(chosen.2)
}

/// Stationary point of `w' D w` on the affine hull of `face`, if it lies in the
/// face. Singular systems take the minimum-norm solution.
fn solve_face(d: &RiskMatrix, face: &[usize]) -> Option<Vec<f64>> {
    let m = face.len();
    let mut w = vec![0.0; d.size()];
    if m == 1 {
        w[face[0]] = 1.0;
        return Some(w);
    }
    let kkt = DMatrix::from_fn(m + 1, m + 1, |a, b| match (a < m, b < m) {
        (true, true) => 2.0 * d.get(face[a], face[b]),
        (true, false) | (false, true) => 1.0,
        (false, false) => 0.0,
    });
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;
    let svd = kkt.svd(true, true);
    let eps = svd.singular_values.max() * (m + 1) as f64 * 1e-12;
    let sol = svd.solve(&rhs, eps).ok()?;
    let sum: f64 = sol.iter().take(m).sum();
    if (sum - 1.0).abs() > 1e-8 || sol.iter().take(m).any(|&v| !v.is_finite() || v < -1e-10) {
        return None;
    }
    for (a, &j) in face.iter().enumerate() {
        w[j] = sol[a].max(0.0);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

/// `sum_k w_k mu~_k(x_i, s)` at an out-of-sample unit.
pub fn mixed_predict(preds: &[SrbPredictor], w: &MixWeights, unit: usize) -> Result<f64> {
    if preds.len() != w.weights.len() {
        return Err(invalid("one weight per predictor"));
    }
    let sum: f64 = w.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || w.weights.iter().any(|&v| v < 0.0) {
        return Err(invalid("weights must lie on the simplex"));
    }
    preds
        .iter()
        .zip(&w.weights)
        .map(|(p, wk)| {
            p.tilde(unit)
                .map(|v| wk * v)
                .ok_or_else(|| invalid(format!("predictor undefined at unit {unit}")))
        })
        .sum()
}
