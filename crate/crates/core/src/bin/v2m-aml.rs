use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use v2m_aml::adversary::CaseId;
use v2m_aml::commands;
use v2m_aml::config::RunConfig;

#[derive(Parser)]
#[command(name = "v2m-aml", version, about = "Adversarial ML attack simulation for V2M request prioritization")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the pool, label it and write the edge training set and victims.
    GenData,
    /// Train the K-NN edge classifier and compare it with SVM and LR.
    TrainEdge,
    /// Run one attack case against the stored edge classifier.
    Attack {
        #[arg(long)]
        case: CaseId,
        /// Skip CGAN augmentation.
        #[arg(long)]
        no_cgan: bool,
    },
    /// Run the full case A-E grid and write the report tables.
    Experiment {
        /// Overrides `grid.n_seeds`.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Print the built-in configuration as TOML.
    PrintDefaultConfig,
}

fn load_config(g: &Global) -> v2m_aml::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(d) = &g.output_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> v2m_aml::Result<()> {
    if let Command::PrintDefaultConfig = cli.command {
        print!("{}", commands::default_config_toml()?);
        return Ok(());
    }
    let mut cfg = load_config(&cli.global)?;
    if let Command::Experiment { seeds: Some(n) } = cli.command {
        cfg.grid.n_seeds = n;
    }
    cfg.validate()?;
    if let Some(j) = cli.global.jobs {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    match cli.command {
        Command::GenData => {
            let s = commands::cmd_gen_data(&cfg)?;
            println!(
                "wrote {} edge training rows (class counts {:?}) and {} victims to {}",
                s.edge_train_rows,
                s.class_counts,
                s.victim_rows,
                s.dir.display()
            );
        }
        Command::TrainEdge => {
            let t = commands::cmd_train_edge(&cfg)?;
            println!("holdout ({} train / {} test):", t.holdout_train, t.holdout_test);
            for c in &t.comparison {
                println!("  {:<4} accuracy {:.4}  macro F1 {:.4}", c.model.short_name(), c.report.accuracy, c.report.macro_f1);
            }
            if !t.knn_is_best() {
                println!("note: K-NN is not the most accurate model on this dataset");
            }
        }
        Command::Attack { case, no_cgan } => {
            let s = commands::cmd_attack(&cfg, case, !no_cgan)?;
            println!(
                "combined dataset: {} real / {} generated",
                s.real_count, s.generated_count
            );
            print!("{}", s.text);
            println!("artifacts in {}", s.dir.display());
        }
        Command::Experiment { .. } => {
            let s = commands::cmd_experiment(&cfg)?;
            println!("{}", s.text);
            println!("reports in {}", s.files.manifest.parent().unwrap_or(&cfg.output_dir).display());
        }
        Command::PrintDefaultConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
