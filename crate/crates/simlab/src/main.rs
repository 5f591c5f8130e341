use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use srbpred::design::{calibrate_poisson, cv_pi, write_inclusion_csv};
use srbpred::oracle::{run_suite, write_reports_csv};
use srbpred::population::{generate_population, Generator, PopulationSpec};
use srbpred::simlab::{render_report, run_experiment, ExperimentConfig, SamplingSpec, Summary};

#[derive(Parser)]
#[command(name = "simlab", version, about = "Design-based prediction experiments and exact identity checks")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "SIMLAB_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Srs,
    Poisson15,
    Poisson30,
    Poisson45,
}

impl Preset {
    fn sampling(self) -> SamplingSpec {
        let n = 100;
        match self {
            Preset::Srs => SamplingSpec::Srs { n },
            Preset::Poisson15 => SamplingSpec::Poisson { n, alpha: 1.0 },
            Preset::Poisson30 => SamplingSpec::Poisson { n, alpha: -0.1 },
            Preset::Poisson45 => SamplingSpec::Poisson { n, alpha: -1.0 },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a population CSV (with provenance sidecar), optionally with
    /// calibrated Poisson inclusion probabilities.
    Generate {
        #[arg(long, default_value_t = 2000)]
        size: usize,
        /// Share of units drawn from M1; the rest come from M2.
        #[arg(long, default_value_t = 0.5)]
        m1_share: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Also write `<out>.pi.csv` for Poisson sampling with this alpha.
        #[arg(long, requires = "n", allow_negative_numbers = true)]
        alpha: Option<f64>,
        /// Expected sample size for the Poisson probabilities.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run a replicated experiment and write replicates.csv and summary.csv.
    Run {
        /// JSON experiment config.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in scaled config (N=500, n=100, B=50, T=20).
        #[arg(long)]
        preset: Option<Preset>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved config as JSON and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Check every exact identity by enumeration; exits nonzero on any failure.
    Verify {
        #[arg(long, default_value_t = 8)]
        max_n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Directory for verify_report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render summary tables from one or more run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { size, m1_share, seed, out, alpha, n } => {
            if !(0.0..=1.0).contains(&m1_share) {
                bail!("--m1-share must lie in [0, 1]");
            }
            let spec = PopulationSpec::new(size, [(Generator::M1, m1_share), (Generator::M2, 1.0 - m1_share)]);
            let pop = generate_population(&spec, seed)?;
            pop.save_csv(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} units to {}", pop.size(), out.display());
            if let (Some(alpha), Some(n)) = (alpha, n) {
                let pi = calibrate_poisson(pop.y(), n, alpha)?;
                let path = out.with_extension("pi.csv");
                write_inclusion_csv(&path, &pi)?;
                println!("wrote inclusion probabilities to {} (cv_pi = {:.1}%)", path.display(), 100.0 * cv_pi(&pi)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, preset, seed, out, print_config } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => {
                    ExperimentConfig::load(&path).with_context(|| format!("loading {}", path.display()))?
                }
                (None, Some(p)) => ExperimentConfig::scaled(p.sampling(), 2024),
                (None, None) => bail!("give --config <path> or --preset <name>"),
            };
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if print_config {
                println!("{}", cfg.to_json()?);
                return Ok(ExitCode::SUCCESS);
            }
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("simlab-out"));
            let result = run_experiment(&cfg, cli.threads)?;
            result.write_outputs(&dir)?;
            for f in &result.failures {
                eprintln!("replicate {} excluded: {}", f.replicate, f.reason);
            }
            print!("{}", render_report(&[(dir.display().to_string(), result.summary())]));
            if result.records.is_empty() {
                bail!("every replicate failed");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { max_n, seed, out } => {
            if !(3..=10).contains(&max_n) {
                bail!("--max-n must lie in [3, 10]");
            }
            let reports = run_suite(max_n, seed)?;
            for r in &reports {
                println!("{r}");
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_reports_csv(&dir.join("verify_report.csv"), &reports)?;
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{} identities checked, {failed} failed", reports.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report { dirs } => {
            let runs = dirs
                .iter()
                .map(|d| {
                    let path = d.join("summary.csv");
                    Summary::read_csv(&path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map(|s| (d.display().to_string(), s))
                })
                .collect::<Result<Vec<_>>>()?;
            print!("{}", render_report(&runs));
            Ok(ExitCode::SUCCESS)
        }
    }
}
