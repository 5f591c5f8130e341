//! Probability sampling designs `p(s)` over a finite population.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SamplingDesign {
    /// Simple random sampling without replacement of fixed size `n` from `N` units.
    SrsWor { population: usize, n: usize },
    /// Independent Bernoulli inclusion of each unit with probability `pi[i]`.
    Poisson { pi: Vec<f64> },
}

impl SamplingDesign {
    pub fn srs(population: usize, n: usize) -> Result<Self> {
        if n > population {
            return Err(Error::SampleTooLarge { n, population });
        }
        Ok(SamplingDesign::SrsWor { population, n })
    }

    pub fn poisson(pi: Vec<f64>) -> Result<Self> {
        for (i, &p) in pi.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("inclusion probability {p} of unit {i} is outside [0, 1]")));
            }
        }
        Ok(SamplingDesign::Poisson { pi })
    }

    pub fn population_size(&self) -> usize {
        match self {
            SamplingDesign::SrsWor { population, .. } => *population,
            SamplingDesign::Poisson { pi } => pi.len(),
        }
    }

    /// First-order inclusion probability `Pr(i in s)`.
    pub fn inclusion_probability(&self, i: usize) -> f64 {
        match self {
            SamplingDesign::SrsWor { population, n } => *n as f64 / *population as f64,
            SamplingDesign::Poisson { pi } => pi[i],
        }
    }

    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        (0..self.population_size()).map(|i| self.inclusion_probability(i)).collect()
    }

    pub fn expected_size(&self) -> f64 {
        match self {
            SamplingDesign::SrsWor { n, .. } => *n as f64,
            SamplingDesign::Poisson { pi } => pi.iter().sum(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let units = match self {
            SamplingDesign::SrsWor { population, n } => srs_indices(*population, *n, rng),
            SamplingDesign::Poisson { pi } => {
                pi.iter().enumerate().filter(|&(_, &p)| rng.random::<f64>() < p).map(|(i, _)| i).collect()
            }
        };
        Sample { units, design: Arc::new(self.clone()) }
    }
}

fn srs_indices<R: Rng + ?Sized>(population: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let mut units = rand::seq::index::sample(rng, population, n).into_vec();
    units.sort_unstable();
    units
}

/// A realised sample: sorted unit indices plus the design that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    units: Vec<usize>,
    design: Arc<SamplingDesign>,
}

impl Sample {
    /// Wrap an explicit index set. Indices are sorted; duplicates or
    /// out-of-range indices are rejected.
    pub fn new(mut units: Vec<usize>, design: Arc<SamplingDesign>) -> Result<Self> {
        units.sort_unstable();
        if units.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("sample contains duplicate units"));
        }
        if units.last().is_some_and(|&u| u >= design.population_size()) {
            return Err(invalid("sample unit index out of range"));
        }
        if let SamplingDesign::SrsWor { n, .. } = *design {
            if units.len() != n {
                return Err(invalid(format!("SRS sample must have {n} units, got {}", units.len())));
            }
        }
        Ok(Sample { units, design })
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn design(&self) -> &SamplingDesign {
        &self.design
    }

    pub fn population_size(&self) -> usize {
        self.design.population_size()
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.units.binary_search(&unit).is_ok()
    }

    /// The out-of-sample units `R = U \ s`, in index order.
    pub fn complement(&self) -> Vec<usize> {
        let mask = self.mask();
        (0..mask.len()).filter(|&i| !mask[i]).collect()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.population_size()];
        for &i in &self.units {
            mask[i] = true;
        }
        mask
    }
}

pub fn draw_srs_wor<R: Rng + ?Sized>(population: usize, n: usize, rng: &mut R) -> Result<Sample> {
    Ok(SamplingDesign::srs(population, n)?.draw(rng))
}

pub fn draw_poisson<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> Result<Sample> {
    Ok(SamplingDesign::poisson(pi.to_vec())?.draw(rng))
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Inclusion probabilities with `1/pi_i` proportional to `1 + exp(-(alpha + y_i/2))`,
/// scaled so that they sum to `n`.
///
/// `pi_i = min(1, g_i / c)` with `g_i = logistic(alpha + y_i/2)`. The scale `c`
/// is located by bisection on `ln c`, then the unclamped units are rescaled in
/// closed form so the sum hits `n` to rounding error.
pub fn calibrate_poisson(y: &[f64], n: usize, alpha: f64) -> Result<Vec<f64>> {
    let population = y.len();
    if n == 0 || n >= population {
        return Err(Error::InfeasibleCalibration { n, population });
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outcomes"));
    }
    let g: Vec<f64> = y.iter().map(|&v| logistic(alpha + 0.5 * v)).collect();
    if g.iter().any(|&v| v <= 0.0) {
        return Err(invalid("scaled propensity underflowed to zero"));
    }
    let target = n as f64;
    let total = |c: f64| g.iter().map(|&gi| (gi / c).min(1.0)).sum::<f64>();

    // total(c) is continuous and decreasing; total = N at min(g), total <= n at sum(g)/n.
    let mut lo = g.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let mut hi = (g.iter().sum::<f64>() / target).ln();
    let mut c = hi.exp();
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        c = mid.exp();
        let gap = total(c) - target;
        if gap.abs() <= 1e-12 || hi - lo <= f64::EPSILON {
            break;
        }
        if gap > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Recalibrate on the unclamped set until the clamped set is stable.
    for _ in 0..population {
        let clamped: Vec<bool> = g.iter().map(|&gi| gi >= c).collect();
        let k = clamped.iter().filter(|&&b| b).count();
        let free: f64 = g.iter().zip(&clamped).filter(|(_, &b)| !b).map(|(gi, _)| gi).sum();
        let next = free / (target - k as f64);
        let stable = g.iter().zip(&clamped).all(|(&gi, &b)| (gi >= next) == b);
        c = next;
        if stable {
            break;
        }
    }
    let pi: Vec<f64> = g.iter().map(|&gi| (gi / c).min(1.0)).collect();
    let sum: f64 = pi.iter().sum();
    if (sum - target).abs() > 1e-10 {
        return Err(invalid(format!("calibration did not converge: sum of pi = {sum}, target {n}")));
    }
    Ok(pi)
}

/// Coefficient of variation of inclusion probabilities (population standard
/// deviation over mean).
pub fn cv_pi(pi: &[f64]) -> Result<f64> {
    if pi.is_empty() {
        return Err(invalid("cv of an empty vector"));
    }
    let n = pi.len() as f64;
    let mean = pi.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(invalid("inclusion probabilities must have a positive mean"));
    }
    let var = pi.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Write `id,pi` rows.
pub fn write_inclusion_csv(path: &Path, pi: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["id", "pi"])?;
    for (i, p) in pi.iter().enumerate() {
        w.write_record([i.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn exhaustive_srs_is_whole_population() {
        let s = draw_srs_wor(5, 5, &mut rng::stream(1)).unwrap();
        assert_eq!(s.units(), &[0, 1, 2, 3, 4]);
        assert_eq!(s.design().inclusion_probability(3), 1.0);
        assert!(s.complement().is_empty());
    }

    #[test]
    fn srs_inclusion_probability() {
        let s = draw_srs_wor(2000, 200, &mut rng::stream(2)).unwrap();
        assert_eq!(s.len(), 200);
        assert!((0..2000).all(|i| s.design().inclusion_probability(i) == 0.1));
    }

    #[test]
    fn srs_rejects_oversize() {
        assert!(matches!(
            draw_srs_wor(3, 4, &mut rng::stream(0)),
            Err(Error::SampleTooLarge { n: 4, population: 3 })
        ));
    }

    #[test]
    fn poisson_extremes() {
        let mut r = rng::stream(3);
        assert_eq!(draw_poisson(&[1.0; 6], &mut r).unwrap().units(), &[0, 1, 2, 3, 4, 5]);
        assert!(draw_poisson(&[0.0; 6], &mut r).unwrap().is_empty());
        assert!(draw_poisson(&[0.5, 1.2], &mut r).is_err());
        assert!(draw_poisson(&[-0.1], &mut r).is_err());
    }

    #[test]
    fn calibration_of_constant_outcome_is_equal_probability() {
        let pi = calibrate_poisson(&[4.0; 10], 3, 0.7).unwrap();
        for p in pi {
            assert!((p - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn calibration_errors() {
        assert!(calibrate_poisson(&[1.0, 2.0], 2, 0.0).is_err());
        assert!(calibrate_poisson(&[1.0, 2.0], 0, 0.0).is_err());
        assert!(calibrate_poisson(&[1.0, f64::NAN, 3.0], 1, 0.0).is_err());
    }

    #[test]
    fn calibration_clamps_and_recalibrates() {
        // One unit dominates so its probability clamps at 1.
        let y = [100.0, -10.0, -10.0, -10.0, -10.0];
        let pi = calibrate_poisson(&y, 2, 0.0).unwrap();
        assert_eq!(pi[0], 1.0);
        assert!((pi.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(pi[1..].iter().all(|&p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn calibration_matches_grid_search_on_scale() {
        let y = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        let alpha = -0.1;
        let pi = calibrate_poisson(&y, 3, alpha).unwrap();
        assert!((pi.iter().sum::<f64>() - 3.0).abs() < 1e-10);

        // Independent oracle: scan c on a dense grid and keep the best.
        let g: Vec<f64> = y.iter().map(|&v| 1.0 / (1.0 + (-(alpha + 0.5 * v)).exp())).collect();
        let total = |c: f64| g.iter().map(|&gi| (gi / c).min(1.0)).sum::<f64>();
        let (lo, hi) = (0.01, 2.0);
        let steps = 400_000;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=steps {
            let c = lo + (hi - lo) * k as f64 / steps as f64;
            let gap = (total(c) - 3.0).abs();
            if gap < best.0 {
                best = (gap, c);
            }
        }
        let grid_pi: Vec<f64> = g.iter().map(|&gi| (gi / best.1).min(1.0)).collect();
        for (a, b) in pi.iter().zip(&grid_pi) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn cv_examples() {
        assert_eq!(cv_pi(&[0.2; 5]).unwrap(), 0.0);
        assert!((cv_pi(&[0.1, 0.3]).unwrap() - 0.5).abs() < 1e-12);
        assert!(cv_pi(&[]).is_err());
        assert!(cv_pi(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn sample_complement_and_validation() {
        let d = Arc::new(SamplingDesign::poisson(vec![0.5; 5]).unwrap());
        let s = Sample::new(vec![3, 1], d.clone()).unwrap();
        assert_eq!(s.units(), &[1, 3]);
        assert_eq!(s.complement(), vec![0, 2, 4]);
        assert!(Sample::new(vec![1, 1], d.clone()).is_err());
        assert!(Sample::new(vec![5], d).is_err());
    }
}
