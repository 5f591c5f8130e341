//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use srbpred::design::{calibrate_poisson, cv_pi, SamplingDesign};
use srbpred::ensemble::{optimal_weights, RiskMatrix};
use srbpred::learners::LearnerSpec;
use srbpred::oracle::{
    enumerate_design, verify_intro_identity, verify_phi2, verify_phi2_equals_pi2, verify_subsample_identity,
    verify_theorem1, verify_theorem1_pair, Report,
};
use srbpred::population::{generate_population, Generator, PopulationSpec};
use srbpred::rng;
use srbpred::simlab::{run_experiment, ExperimentConfig, ExperimentResult, Predictor, SamplingSpec};
use srbpred::split::{pi2_exact_srs, SplitDesign};

const SEED: u64 = 2024;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn all_pass(reports: &[Report]) -> (bool, f64) {
    let worst = reports.iter().map(Report::max_abs_deviation).fold(0.0, f64::max);
    (reports.iter().all(Report::passed), worst)
}

fn twice_srs_8() -> srbpred::oracle::DesignEnumeration {
    let pop = generate_population(&PopulationSpec::half_m1_m2(8), SEED).unwrap();
    enumerate_design(&pop, &SamplingDesign::srs(8, 4).unwrap(), &SplitDesign::srs_count(2)).unwrap()
}

fn mean_predictor_loss() -> Outcome {
    let hand = 3.0 * 1.5 * 2.5;
    let fixed = verify_intro_identity(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
    let loss = &fixed.comparisons[0];
    let mut ok = (hand - 11.25_f64).abs() < 1e-15 && (loss.lhs - hand).abs() <= 1e-9 && fixed.passed();
    let mut r = rng::stream(SEED);
    let mut reports = Vec::new();
    for _ in 0..20 {
        let size = r.random_range(3..=8);
        let n = r.random_range(2..size);
        let y: Vec<f64> = (0..size).map(|_| r.random_range(-10.0..10.0)).collect();
        reports.push(verify_intro_identity(&y, n).unwrap());
    }
    let (random_ok, worst) = all_pass(&reports);
    ok &= random_ok;
    outcome(ok, format!("E_p(D_s) = {:.12} vs 11.25; 20 random vectors, max |dev| {worst:.2e}", loss.lhs))
}

fn subsample_identity() -> Outcome {
    let e = twice_srs_8();
    let learners = [LearnerSpec::Constant { value: 5.0 }, LearnerSpec::Mean, LearnerSpec::Ols];
    let reports: Vec<Report> = learners.iter().map(|l| verify_subsample_identity(&e, l).unwrap()).collect();
    let (ok, worst) = all_pass(&reports);
    let checks: usize = reports.iter().map(|r| r.comparisons.len()).sum();
    outcome(ok && checks == 3 * 28, format!("{checks} training sets over 3 learners, max |dev| {worst:.2e}"))
}

fn theorem1() -> Outcome {
    let e = twice_srs_8();
    let constant = LearnerSpec::Constant { value: 5.0 };
    let reports = vec![
        verify_theorem1(&e, &LearnerSpec::Mean).unwrap(),
        verify_theorem1(&e, &constant).unwrap(),
        verify_theorem1_pair(&e, &constant, &LearnerSpec::Mean).unwrap(),
    ];
    let (ok, worst) = all_pass(&reports);
    let ols = verify_theorem1(&e, &LearnerSpec::Ols).unwrap();
    let c = &ols.comparisons[0];
    outcome(
        ok,
        format!(
            "mean, constant and cross term: max |dev| {worst:.2e}; OLS (measured only) E_p[D^] = {:.4} vs {:.4}",
            c.lhs, c.rhs
        ),
    )
}

fn phi2_check() -> Outcome {
    let pop = generate_population(&PopulationSpec::half_m1_m2(6), SEED).unwrap();
    let pi = calibrate_poisson(pop.y(), 3, -1.0).unwrap();
    let heterogeneous = pi.iter().cloned().fold(f64::MIN, f64::max) - pi.iter().cloned().fold(f64::MAX, f64::min) > 0.05;
    let e = enumerate_design(&pop, &SamplingDesign::poisson(pi).unwrap(), &SplitDesign::srs_fraction(0.5)).unwrap();
    let poisson = verify_phi2(&e).unwrap();
    let mut equal = Vec::new();
    for (size, n, n1) in [(8, 4, 2), (10, 5, 3), (50, 12, 8), (2000, 200, 140)] {
        equal.push(verify_phi2_equals_pi2(size, n, n1).unwrap());
    }
    let twice = verify_phi2(&twice_srs_8()).unwrap();
    let exact = pi2_exact_srs(8, 2, 2).unwrap();
    let twice_ok = twice.comparisons.iter().filter(|c| c.label.ends_with("phi2")).all(|c| (c.rhs - exact).abs() <= 1e-14);
    let (eq_ok, eq_worst) = all_pass(&equal);
    outcome(
        heterogeneous && poisson.passed() && eq_ok && twice_ok && twice.passed(),
        format!(
            "Poisson N=6: max |dev| {:.2e}; twice-SRS phi2 - pi2: max |dev| {eq_worst:.2e}",
            poisson.max_abs_deviation()
        ),
    )
}

fn poisson_calibration() -> Outcome {
    let pop = generate_population(&PopulationSpec::half_m1_m2(2000), SEED).unwrap();
    let mut cvs = Vec::new();
    let mut worst_sum = 0.0_f64;
    for alpha in [1.0, -0.1, -1.0] {
        let pi = calibrate_poisson(pop.y(), 200, alpha).unwrap();
        worst_sum = worst_sum.max((pi.iter().sum::<f64>() - 200.0).abs());
        cvs.push(cv_pi(&pi).unwrap());
    }
    let monotone = cvs[0] < cvs[1] && cvs[1] < cvs[2];
    let bracket = cvs.iter().zip([0.15, 0.30, 0.45]).all(|(cv, target)| (cv - target).abs() <= 0.10);
    outcome(
        worst_sum <= 1e-10 && monotone && bracket,
        format!(
            "|sum - n| <= {worst_sum:.1e}; cv_pi = {:.1}% / {:.1}% / {:.1}% for alpha = 1 / -0.1 / -1",
            100.0 * cvs[0],
            100.0 * cvs[1],
            100.0 * cvs[2]
        ),
    )
}

fn optimal_weight_check() -> Outcome {
    let d = [[1.0, 0.0], [0.0, 3.0]];
    let closed = (d[1][1] - d[0][1]) / (d[0][0] + d[1][1] - 2.0 * d[0][1]);
    let w = optimal_weights(&RiskMatrix::from_rows(&[d[0].to_vec(), d[1].to_vec()]).unwrap()).unwrap().weights;
    let k2 = (w[0] - closed).abs() <= 1e-10 && (w[1] - (1.0 - closed)).abs() <= 1e-10;

    let mut r = rng::stream(SEED ^ 6);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..100 {
        // A A' + 0.1 I is positive definite.
        let a: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| (0..3).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 })
                    .collect()
            })
            .collect();
        let m = RiskMatrix::from_rows(&rows).unwrap();
        let w = optimal_weights(&m).unwrap().weights;
        let obj = m.quadratic(&w);
        for i in 0..=100 {
            for j in 0..=(100 - i) {
                let g = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                worst_gap = worst_gap.max(obj - m.quadratic(&g));
            }
        }
    }
    outcome(
        k2 && worst_gap <= 1e-12,
        format!("diag(1,3) -> ({:.12}, {:.12}); 100 random K=3: max(solver - grid) = {worst_gap:.2e}", w[0], w[1]),
    )
}

fn mean_of(result: &ExperimentResult, p: Predictor, pick: fn(&srbpred::simlab::MsepRow) -> f64) -> f64 {
    result.records.iter().map(|r| pick(&r.msep_of(p))).sum::<f64>() / result.records.len() as f64
}

fn replication(srs: &ExperimentResult, poisson: &ExperimentResult, linear: &ExperimentResult) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;

    // (a) hypothetical predictors, SRS.
    for p in [Predictor::HypSelected, Predictor::HypOptimal] {
        let truth = mean_of(srs, p, |m| m.truth);
        let design = mean_of(srs, p, |m| m.design);
        let rel = design / truth - 1.0;
        ok &= rel.abs() <= 0.05;
        parts.push(format!("(a) {} design {design:.3} vs true {truth:.3} ({:+.1}%)", p.label(), 100.0 * rel));
    }

    // (b) residual estimate below the mean true MSEP for the mixed predictors.
    for p in [Predictor::Optimal, Predictor::Robust] {
        let truth = mean_of(srs, p, |m| m.truth);
        let below = srs.records.iter().filter(|r| r.msep_of(p).residual < truth).count();
        let share = below as f64 / srs.records.len() as f64;
        ok &= share >= 0.90;
        parts.push(format!("(b) {} residual below true in {:.0}%", p.label(), 100.0 * share));
    }

    // (c) CV underestimates under Poisson sampling with cv_pi near 45%.
    let cv_pi_mean = poisson.records.iter().map(|r| r.cv_pi).sum::<f64>() / poisson.records.len() as f64;
    for p in [Predictor::Selected, Predictor::Optimal, Predictor::Robust] {
        let truth = mean_of(poisson, p, |m| m.truth);
        let cv = mean_of(poisson, p, |m| m.cv);
        let rel = cv / truth - 1.0;
        ok &= rel <= -0.10;
        parts.push(format!("(c) {} cv {cv:.3} vs true {truth:.3} ({:+.1}%)", p.label(), 100.0 * rel));
    }
    ok &= (cv_pi_mean - 0.45).abs() <= 0.10;
    parts.push(format!("(c) mean cv_pi {:.1}%", 100.0 * cv_pi_mean));

    // (d) OLS chosen on an all-linear population.
    let ols = linear.records.iter().filter(|r| r.selected == 0).count() as f64 / linear.records.len() as f64;
    ok &= ols >= 0.80;
    parts.push(format!("(d) OLS selected in {:.0}%", 100.0 * ols));

    for result in [srs, poisson, linear] {
        ok &= result.records.len() * 10 >= result.config.replicates * 9;
        parts.push(format!("{} of {} replicates completed", result.records.len(), result.config.replicates));
    }
    outcome(ok, parts.join("\n      "))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut timed = |id: usize, name: &'static str, limit: Duration, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let out = f();
        results.push((id, name, out, start.elapsed(), limit));
    };
    timed(1, "expected loss of the sample mean under SRS", Duration::from_secs(1), &mean_predictor_loss);
    timed(2, "conditional unbiasedness given s1", Duration::from_secs(5), &subsample_identity);
    timed(3, "unbiased risk of the exact SRB predictor", Duration::from_secs(30), &theorem1);
    timed(4, "phi2 against enumeration", Duration::from_secs(5), &phi2_check);
    timed(5, "Poisson calibration", Duration::from_secs(1), &poisson_calibration);
    timed(6, "optimal mixing weights", Duration::from_secs(10), &optimal_weight_check);

    let start = Instant::now();
    let srs_config = ExperimentConfig::scaled(SamplingSpec::Srs { n: 100 }, SEED);
    let srs = run_experiment(&srs_config, 1).unwrap();
    let poisson = run_experiment(&ExperimentConfig::scaled(SamplingSpec::Poisson { n: 100, alpha: -1.0 }, SEED), 0).unwrap();
    let mut linear_config = ExperimentConfig::scaled(SamplingSpec::Srs { n: 100 }, SEED);
    linear_config.population = PopulationSpec::new(500, [(Generator::Linear, 1.0)]);
    let linear = run_experiment(&linear_config, 0).unwrap();
    let seven = replication(&srs, &poisson, &linear);
    results.push((7, "scaled replication", seven, start.elapsed(), Duration::from_secs(600)));

    let start = Instant::now();
    let four = run_experiment(&srs_config, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("one.csv"), dir.path().join("four.csv"));
    srs.write_replicates_csv(&a).unwrap();
    four.write_replicates_csv(&b).unwrap();
    let (bytes_a, bytes_b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let same = !bytes_a.is_empty() && bytes_a == bytes_b;
    let eight = outcome(same, format!("replicates.csv with 1 and 4 threads: {} bytes, identical = {same}", bytes_a.len()));
    results.push((8, "determinism across thread counts", eight, start.elapsed(), Duration::from_secs(600)));

    let mut failed = 0;
    println!();
    for (id, name, out, elapsed, limit) in &results {
        let passed = out.passed && elapsed <= limit;
        failed += usize::from(!passed);
        println!(
            "{} criterion {id}: {name} [{:.2}s, limit {}s]\n      {}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            out.detail
        );
    }
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
