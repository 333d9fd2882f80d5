use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use proactive_cache::bounds::{lbnck_table, lbuc_table};
use proactive_cache::config::{parse_config, ExperimentConfig};
use proactive_cache::experiment::{
    read_rows_csv, run_experiment_with, run_scheme, solve_exact, summarize, train_liso, write_rows_csv, Setup,
};
use proactive_cache::fdm::write_curve_csv;
use proactive_cache::mdp::{check_threshold_structure, write_solution_csv};
use proactive_cache::policy::{Scheme, ThresholdTable};
use proactive_cache::{Error, Result};

#[derive(Parser)]
#[command(name = "proactive-cache", version, about = "Proactive caching simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration with dotted keys such as gen.k_max
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the `seed` key)
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one scheme on the configured instance
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Scheme,
        /// Threshold table for LISO; trained when omitted
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Train LISO thresholds and write the table
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write the learning curve here
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Write the LB-UC and LB-NCK tables into the directory given by --out
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Solve a small instance exactly and report the threshold structure
    SolveExact {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured sweep and write result rows
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Print a table of result rows
    Summarize {
        /// Result CSV written by `sweep`
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, scheme, table } => {
            let cfg = load(&common)?;
            let setup = Setup::new(&cfg)?;
            let table = match table {
                Some(p) => Some(ThresholdTable::read_csv(File::open(p)?, setup.c_max())?),
                None => None,
            };
            let row = run_scheme(&cfg, &setup, scheme, table.as_ref())?;
            write_rows_csv(&[row], output(common.out.as_deref())?)
        }
        Command::Train { common, curve } => {
            let cfg = load(&common)?;
            let setup = Setup::new(&cfg)?;
            let outcome = train_liso(&cfg, &setup, |j, _| {
                if (j + 1) % 10 == 0 {
                    eprintln!("update {}/{}", j + 1, cfg.fdm.n_updates);
                }
            })?;
            outcome.table.write_csv(output(common.out.as_deref())?)?;
            if let Some(p) = curve {
                write_curve_csv(&outcome.curve, File::create(p)?)?;
            }
            Ok(())
        }
        Command::Bounds { common } => {
            let cfg = load(&common)?;
            let setup = Setup::new(&cfg)?;
            let dir = common.out.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir)?;
            let lbuc = lbuc_table(setup.gen.p_a, &setup.dist, setup.gen.k_max())?;
            lbuc.write_csv(File::create(dir.join("lbuc.csv"))?)?;
            let lbnck = lbnck_table(&setup.dist, setup.gen.d_max.max(setup.gen.k_max()))?;
            lbnck.write_csv(File::create(dir.join("lbnck.csv"))?)?;
            for scheme in [Scheme::LbUc, Scheme::LbNck] {
                let row = run_scheme(&cfg, &setup, scheme, None)?;
                println!("{}: {:.6} mW/slot (±{:.6})", scheme.name(), row.mean_cost_mw, row.ci95_mw);
            }
            Ok(())
        }
        Command::SolveExact { common } => {
            let cfg = load(&common)?;
            let setup = Setup::new(&cfg)?;
            let (mdp, result) = solve_exact(&cfg, &setup)?;
            let report = check_threshold_structure(&result, &mdp);
            println!("states: {}", mdp.len());
            println!("rho_star_mw: {:.12}", result.rho_star);
            println!("iterations: {}", result.iterations);
            println!("bellman_residual: {:.3e}", result.bellman_residual);
            println!("checked_states: {}", report.checked_states);
            println!("nesting_violations: {}", report.violations.len());
            for v in &report.violations {
                println!(
                    "  state {} ({:?}): levels {:?} swaps {:?}",
                    v.state, mdp.states[v.state], v.levels, v.swaps
                );
            }
            if let Some(p) = &common.out {
                write_solution_csv(&mdp, &result, File::create(p)?)?;
            }
            Ok(())
        }
        Command::Sweep { common } => {
            let cfg = load(&common)?;
            let rows = run_experiment_with(&cfg, |r| {
                eprintln!("{} {}={}: {:.4} ± {:.4}", r.scheme.name(), r.sweep_var, r.sweep_value, r.mean_cost_mw, r.ci95_mw)
            })?;
            write_rows_csv(&rows, output(common.out.as_deref())?)
        }
        Command::Summarize { input, common } => {
            let cfg = load(&common)?;
            let rows = read_rows_csv(File::open(input)?)?;
            let gen = cfg.gen.params()?;
            let text = summarize(&rows, Some(gen.mean_batch() * gen.mean_lifetime()));
            output(common.out.as_deref())?.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Io(_) | Error::Csv(_) => 2,
                other => other.exit_code(),
            };
            ExitCode::from(code as u8)
        }
    }
}
