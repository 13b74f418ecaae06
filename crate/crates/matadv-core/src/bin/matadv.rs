//! Command-line front end for the staged experiment pipeline. Every
//! subcommand reads one JSON config, applies the targeted overrides, and
//! runs its stage; prerequisite stages run automatically when their
//! artifacts are missing. Exit code 0 on success, 1 with the failing stage
//! named on stderr otherwise.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use matadv_core::harness::config::ExperimentConfig;
use matadv_core::harness::report::{ablation_csv_string, rho_csv_string};
use matadv_core::harness::runner::{
    ensure_attacks, ensure_autoencoder, ensure_dataset, ensure_victims, evaluate, run_ablation,
    sweep_rho, write_reports, RunPaths,
};
use matadv_core::Result;

#[derive(Parser)]
#[command(
    name = "matadv",
    version,
    about = "Desk-scale point-cloud attack laboratory: data, victims, autoencoder, attacks, defenses, reports"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment configuration JSON.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the attack budget epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the perturbation dropout probability rho.
    #[arg(long)]
    rho: Option<f64>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the dataset and persist it under the run directory.
    GenData(StageArgs),
    /// Train both victim classifiers and persist their weights.
    TrainVictim(StageArgs),
    /// Train the medial-sphere autoencoder and persist its weights.
    TrainMat(StageArgs),
    /// Generate the attack batches from the surrogate and persist them.
    Attack(StageArgs),
    /// Build the (attack x target x defense) evaluation matrix.
    Evaluate(StageArgs),
    /// Attack with each perturbation-component subset and tabulate ASR.
    Ablate(StageArgs),
    /// Re-attack across the dropout grid and tabulate transfer ASR.
    SweepRho(StageArgs),
    /// Render record.json into report.csv and report.json.
    Report(StageArgs),
}

impl Cmd {
    fn args(&self) -> &StageArgs {
        match self {
            Cmd::GenData(a)
            | Cmd::TrainVictim(a)
            | Cmd::TrainMat(a)
            | Cmd::Attack(a)
            | Cmd::Evaluate(a)
            | Cmd::Ablate(a)
            | Cmd::SweepRho(a)
            | Cmd::Report(a) => a,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let args = cli.cmd.args();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply_overrides(args.epsilon, args.rho, args.seed)?;
    let paths = RunPaths::new(&cfg.out_dir);
    match &cli.cmd {
        Cmd::GenData(_) => {
            let ds = ensure_dataset(&cfg)?;
            println!(
                "gen-data: {} train / {} test clouds under {}",
                ds.train.len(),
                ds.test.len(),
                paths.data_dir().display()
            );
        }
        Cmd::TrainVictim(_) => {
            let (_, _, summary) = ensure_victims(&cfg)?;
            for role in [&summary.surrogate, &summary.target] {
                println!(
                    "train-victim: {} train acc {:.2}% / test acc {:.2}% ({} epochs)",
                    role.kind, role.train_acc, role.test_acc, role.epochs_run
                );
            }
        }
        Cmd::TrainMat(_) => {
            ensure_autoencoder(&cfg)?;
            println!(
                "train-mat: encoder/decoder weights under {}",
                paths.weights("encoder").parent().unwrap().display()
            );
        }
        Cmd::Attack(_) => {
            let (mat, pgd) = ensure_attacks(&cfg)?;
            let hits = |rs: &[matadv_core::attack::AttackResult]| {
                rs.iter().filter(|r| r.success).count()
            };
            println!(
                "attack: mat-adv {}/{} flipped, pgd {}/{} flipped",
                hits(&mat),
                mat.len(),
                hits(&pgd),
                pgd.len()
            );
        }
        Cmd::Evaluate(_) => {
            let record = evaluate(&cfg)?;
            println!(
                "evaluate: {} rows -> {}",
                record.rows.len(),
                paths.record().display()
            );
        }
        Cmd::Ablate(_) => {
            let rows = run_ablation(&cfg)?;
            print!("{}", ablation_csv_string(&rows));
            println!("ablate: table under {}", paths.ablation_csv().display());
        }
        Cmd::SweepRho(_) => {
            let rows = sweep_rho(&cfg, &cfg.rho_grid)?;
            print!("{}", rho_csv_string(&rows));
            println!("sweep-rho: table under {}", paths.rho_csv().display());
        }
        Cmd::Report(_) => {
            write_reports(&cfg)?;
            println!(
                "report: {} and {}",
                paths.report_csv().display(),
                paths.report_json().display()
            );
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
