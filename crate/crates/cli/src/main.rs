//! `mtseg`: batch experiment runner for momentum-teacher domain-adaptive
//! segmentation on synthetic sim2real data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtseg_cli::{config, runner, CliError};

#[derive(Parser)]
#[command(
    name = "mtseg",
    version,
    about = "Domain-adaptive segmentation training, ablations, and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dot-path overrides, e.g. --set seed=3 --set smoothing.m=0.99
        #[arg(long = "set")]
        set: Vec<String>,
        /// Output directory (defaults to the config's out_dir, then
        /// $MTSEG_OUT_ROOT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full ablation matrix (18 variants) over the given seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
        /// Comma-separated seeds, e.g. 0,1,2
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel runs.
        #[arg(long, default_value_t = 2)]
        jobs: usize,
    },
    /// Sweep the momentum coefficient with both smoothing branches on.
    Mgrid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long, default_value = "0,0.9,0.99,0.999,0.9999")]
        m_values: String,
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        jobs: usize,
    },
    /// Gaussian-process toy experiment: change series and DFT spectra per
    /// noise scale.
    Toy {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19")]
        seeds: String,
        /// Exit nonzero unless both metric orderings hold in >= 95% of seeds.
        #[arg(long)]
        assert_ordering: bool,
    },
    /// Evaluate a checkpoint on freshly generated eval splits.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the generated dataset splits as .tdad files.
    ExportData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> mtseg_cli::Result<()> {
    match cli.command {
        Command::Run { config: path, set, out } => {
            let cfg = config::load_config(&path, &set)?;
            let dir = runner::resolve_out_dir(&cfg, out);
            let metrics = runner::run_experiment(&cfg, &dir)?;
            println!(
                "run complete: target mIoU {:.4}, source mIoU {:.4} -> {}",
                metrics.target_miou,
                metrics.source_miou,
                dir.display()
            );
            Ok(())
        }
        Command::Ablate { config: path, set, seeds, out, jobs } => {
            let cfg = config::load_config(&path, &set)?;
            let seeds = runner::parse_seeds(&seeds)?;
            let dir = out.unwrap_or_else(|| runner::resolve_out_dir(&cfg, None).join("ablate"));
            let failed = runner::ablation_matrix(&cfg, &seeds, &dir, jobs)?;
            println!("ablation matrix -> {}", dir.join("summary.csv").display());
            if failed > 0 {
                return Err(CliError::PartialMatrix {
                    failed,
                    total: runner::table_variants().len() * seeds.len(),
                });
            }
            Ok(())
        }
        Command::Mgrid { config: path, set, m_values, seeds, out, jobs } => {
            let cfg = config::load_config(&path, &set)?;
            let seeds = runner::parse_seeds(&seeds)?;
            let ms = runner::parse_m_values(&m_values)?;
            let dir = out.unwrap_or_else(|| runner::resolve_out_dir(&cfg, None).join("mgrid"));
            let failed = runner::momentum_grid(&cfg, &ms, &seeds, &dir, jobs)?;
            println!("momentum grid -> {}", dir.join("summary.csv").display());
            if failed > 0 {
                return Err(CliError::PartialMatrix {
                    failed,
                    total: ms.len() * seeds.len(),
                });
            }
            Ok(())
        }
        Command::Toy { out, seeds, assert_ordering } => {
            let seeds = runner::parse_seeds(&seeds)?;
            let ok = runner::toy_report(&out, &seeds)?;
            println!(
                "toy report -> {} (ordering {})",
                out.display(),
                if ok { "holds" } else { "violated" }
            );
            if assert_ordering && !ok {
                return Err(CliError::Numeric(
                    "toy metric ordering violated across seeds".into(),
                ));
            }
            Ok(())
        }
        Command::Eval { config: path, set, checkpoint, out } => {
            let cfg = config::load_config(&path, &set)?;
            let (target, source) = runner::eval_checkpoint(&cfg, &checkpoint, out.as_deref())?;
            println!("target mIoU {target:.4}, source mIoU {source:.4}");
            Ok(())
        }
        Command::ExportData { config: path, set, out } => {
            let cfg = config::load_config(&path, &set)?;
            runner::export_data(&cfg, &out)?;
            println!("datasets -> {}", out.display());
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
            ExitCode::from(e.exit_code())
        }
    }
}
