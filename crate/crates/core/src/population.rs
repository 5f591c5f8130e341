//! Fixed finite populations `(y_U, x_U)`.
//!
//! Outcomes and features are constants once generated; all randomness in the
//! rest of the toolkit comes from the sampling and sample-splitting designs.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Data-generating mechanism for a unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generator {
    /// `y = x1 + 0.5 x2 + e`, with the mean of `e` switching on the realised `x2`:
    /// 0 when `x2 < 3`, -2 when `3 <= x2 < 7`, 2 when `x2 >= 7`; unit variance.
    M1,
    /// `y = 0.5 + 1.5 x1 + x2 + e`, `e = z^2 + N(0, 0.25)`, `z ~ N(0, 1)`.
    M2,
    /// `y = 0.5 + 1.5 x1 + x2 + N(0, 1)`.
    Linear,
    /// Supplied directly by the caller.
    External,
}

impl Generator {
    pub fn label(self) -> &'static str {
        match self {
            Generator::M1 => "M1",
            Generator::M2 => "M2",
            Generator::Linear => "linear",
            Generator::External => "external",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "M1" => Some(Generator::M1),
            "M2" => Some(Generator::M2),
            "linear" => Some(Generator::Linear),
            "external" => Some(Generator::External),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub generator: Generator,
    pub proportion: f64,
}

/// Size and generator mixture of a synthetic population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub size: usize,
    pub mixture: Vec<MixtureComponent>,
}

impl PopulationSpec {
    pub fn new(size: usize, mixture: impl IntoIterator<Item = (Generator, f64)>) -> Self {
        PopulationSpec {
            size,
            mixture: mixture
                .into_iter()
                .map(|(generator, proportion)| MixtureComponent { generator, proportion })
                .collect(),
        }
    }

    /// Half M1, half M2.
    pub fn half_m1_m2(size: usize) -> Self {
        Self::new(size, [(Generator::M1, 0.5), (Generator::M2, 0.5)])
    }

    pub fn validate(&self) -> Result<()> {
        if self.mixture.is_empty() {
            return Err(invalid("population mixture is empty"));
        }
        let mut total = 0.0;
        for c in &self.mixture {
            if !c.proportion.is_finite() || c.proportion < 0.0 {
                return Err(invalid(format!(
                    "mixture proportion for {} must be finite and nonnegative, got {}",
                    c.generator.label(),
                    c.proportion
                )));
            }
            if c.generator == Generator::External {
                return Err(invalid("the external generator cannot be sampled"));
            }
            total += c.proportion;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture proportions sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Unit counts per component by largest remainder; ties go to the earlier component.
    pub fn allocation(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let n = self.size as f64;
        let raw: Vec<f64> = self.mixture.iter().map(|c| c.proportion * n).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut left = self.size - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        Ok(counts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: Option<PopulationSpec>,
    pub seed: Option<u64>,
}

/// A finite population. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    dim: usize,
    features: Vec<f64>,
    y: Vec<f64>,
    generators: Vec<Generator>,
    provenance: Provenance,
}

impl Population {
    /// Build from explicit feature rows and outcomes.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(invalid(format!(
                "{} feature rows but {} outcomes",
                rows.len(),
                y.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("feature rows have differing lengths"));
        }
        if rows.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("population"));
        }
        let n = y.len();
        Ok(Population {
            dim,
            features: rows.concat(),
            y,
            generators: vec![Generator::External; n],
            provenance: Provenance { spec: None, seed: None },
        })
    }

    /// Outcomes only; each unit gets its index as a single feature.
    pub fn from_outcomes(y: Vec<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..y.len()).map(|i| vec![i as f64]).collect();
        Self::from_rows(&rows, y)
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self, units: &[usize]) -> Vec<&[f64]> {
        units.iter().map(|&i| self.x(i)).collect()
    }

    pub fn outcomes(&self, units: &[usize]) -> Vec<f64> {
        units.iter().map(|&i| self.y[i]).collect()
    }

    pub fn generator(&self, i: usize) -> Generator {
        self.generators[i]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Write `id,x1,..,xp,y,generator` rows to `path` and the provenance to
    /// the sidecar `path.with_extension("json")`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        header.push("y".into());
        header.push("generator".into());
        w.write_record(&header)?;
        for i in 0..self.size() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.x(i).iter().map(f64::to_string));
            rec.push(self.y[i].to_string());
            rec.push(self.generators[i].label().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        let meta = BufWriter::new(File::create(sidecar_path(path))?);
        serde_json::to_writer_pretty(meta, &self.provenance)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "id" || cols[cols.len() - 1] != "generator" {
            return Err(invalid(format!("unexpected population header {cols:?}")));
        }
        let dim = cols.len() - 3;
        let mut features = Vec::new();
        let mut y = Vec::new();
        let mut generators = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let id: usize = parse_field(&rec, 0, row)?;
            if id != row {
                return Err(invalid(format!("row {row} has id {id}; ids must be 0..N-1 in order")));
            }
            for j in 0..dim {
                features.push(parse_field::<f64>(&rec, 1 + j, row)?);
            }
            y.push(parse_field::<f64>(&rec, 1 + dim, row)?);
            let label = &rec[2 + dim];
            generators.push(
                Generator::from_label(label)
                    .ok_or_else(|| invalid(format!("row {row}: unknown generator `{label}`")))?,
            );
        }
        if features.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("population file"));
        }
        let sidecar = sidecar_path(path);
        let provenance = if sidecar.exists() {
            serde_json::from_reader(BufReader::new(File::open(sidecar)?))?
        } else {
            Provenance { spec: None, seed: None }
        };
        Ok(Population { dim, features, y, generators, provenance })
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, row: usize) -> Result<T> {
    rec.get(col)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| invalid(format!("row {row}, column {col}: cannot parse value")))
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Generate a population of `spec.size` units, component by component in
/// mixture order. Deterministic in `(spec, seed)`.
pub fn generate_population(spec: &PopulationSpec, seed: u64) -> Result<Population> {
    let counts = spec.allocation()?;
    let mut rng = rng::stream(seed);
    let poisson = Poisson::new(5.0).expect("valid Poisson rate");
    let m2_noise = Normal::new(0.0, 0.5).expect("valid normal");

    let mut features = Vec::with_capacity(2 * spec.size);
    let mut y = Vec::with_capacity(spec.size);
    let mut generators = Vec::with_capacity(spec.size);
    for (component, &count) in spec.mixture.iter().zip(&counts) {
        for _ in 0..count {
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = poisson.sample(&mut rng);
            let yi = match component.generator {
                Generator::M1 => {
                    let shift = if x2 < 3.0 {
                        0.0
                    } else if x2 < 7.0 {
                        -2.0
                    } else {
                        2.0
                    };
                    let e: f64 = rng.sample(StandardNormal);
                    x1 + 0.5 * x2 + shift + e
                }
                Generator::M2 => {
                    let z: f64 = rng.sample(StandardNormal);
                    0.5 + 1.5 * x1 + x2 + z * z + m2_noise.sample(&mut rng)
                }
                Generator::Linear => {
                    let e: f64 = rng.sample(StandardNormal);
                    0.5 + 1.5 * x1 + x2 + e
                }
                Generator::External => unreachable!("rejected by validate"),
            };
            features.push(x1);
            features.push(x2);
            y.push(yi);
            generators.push(component.generator);
        }
    }
    Ok(Population {
        dim: 2,
        features,
        y,
        generators,
        provenance: Provenance { spec: Some(spec.clone()), seed: Some(seed) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_population() {
        let p = generate_population(&PopulationSpec::half_m1_m2(0), 1).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn half_and_half_allocation() {
        let p = generate_population(&PopulationSpec::half_m1_m2(2000), 3).unwrap();
        let m1 = (0..p.size()).filter(|&i| p.generator(i) == Generator::M1).count();
        assert_eq!(m1, 1000);
        assert_eq!(p.size(), 2000);
        // generation order defines unit order
        assert!((0..1000).all(|i| p.generator(i) == Generator::M1));
    }

    #[test]
    fn odd_allocation_sums_to_size() {
        let spec = PopulationSpec::new(7, [(Generator::M1, 1.0 / 3.0), (Generator::M2, 2.0 / 3.0)]);
        let c = spec.allocation().unwrap();
        assert_eq!(c.iter().sum::<usize>(), 7);
        assert_eq!(c, vec![2, 5]);
    }

    #[test]
    fn rejects_bad_proportions() {
        let spec = PopulationSpec::new(10, [(Generator::M1, 0.5), (Generator::M2, 0.6)]);
        assert!(generate_population(&spec, 0).is_err());
        let spec = PopulationSpec::new(10, [(Generator::M1, -0.5), (Generator::M2, 1.5)]);
        assert!(generate_population(&spec, 0).is_err());
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = PopulationSpec::half_m1_m2(300);
        assert_eq!(generate_population(&spec, 42).unwrap(), generate_population(&spec, 42).unwrap());
        assert_ne!(
            generate_population(&spec, 42).unwrap().y(),
            generate_population(&spec, 43).unwrap().y()
        );
    }

    #[test]
    fn x2_is_a_nonnegative_integer() {
        let p = generate_population(&PopulationSpec::half_m1_m2(500), 9).unwrap();
        for i in 0..p.size() {
            let x2 = p.x(i)[1];
            assert!(x2 >= 0.0 && x2.fract() == 0.0);
        }
    }

    #[test]
    fn csv_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.csv");
        let p = generate_population(&PopulationSpec::half_m1_m2(50), 5).unwrap();
        p.save_csv(&path).unwrap();
        assert!(dir.path().join("pop.json").exists());
        let q = Population::load_csv(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn from_rows_rejects_ragged_and_nan() {
        assert!(Population::from_rows(&[vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        assert!(Population::from_rows(&[vec![f64::NAN]], vec![0.0]).is_err());
        assert!(Population::from_rows(&[vec![1.0]], vec![0.0, 1.0]).is_err());
    }
}
