use std::path::PathBuf;
use std::process::ExitCode;

use cckd_cli::{cmd_attack, cmd_distill, cmd_eval, cmd_report, cmd_train, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cckd", version, about = "Train, distill, attack and evaluate small classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from scratch (regime separate)
    Train(Common),
    /// Distill a student from a teacher checkpoint
    Distill(Common),
    /// Craft FGSM samples against a source checkpoint
    Attack(Common),
    /// Compare checkpoints: accuracy, success/failure rates, robustness
    Eval(Common),
    /// Sample-efficiency table over distillation records
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `limit` (first N samples per split)
    #[arg(long)]
    limit: Option<usize>,
    /// Overrides `out_dir`
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> cckd_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.limit {
            cfg.limit = Some(l);
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> cckd_core::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let r = cmd_train(&c.resolve()?)?;
            println!("{}: test accuracy {:?}", r.name, r.final_metrics.test_accuracy);
        }
        Command::Distill(c) => {
            let r = cmd_distill(&c.resolve()?)?;
            let m = &r.final_metrics;
            println!(
                "{}: test accuracy {:?}, eta_s {:?}, eta_f {:?}",
                r.name, m.test_accuracy, m.eta_s, m.eta_f
            );
            if let Some(e) = &m.efficiency {
                println!("sample efficiency {} (alpha {})", e.display, e.alpha);
            }
        }
        Command::Attack(c) => {
            let r = cmd_attack(&c.resolve()?)?;
            println!(
                "{}: success rate {:?}",
                r.name, r.final_metrics.attack_success_rate
            );
        }
        Command::Eval(c) => {
            let (_, rows) = cmd_eval(&c.resolve()?)?;
            println!("{}", cckd_cli::commands::EVAL_COLUMNS);
            for r in rows {
                println!("{}", r.csv());
            }
        }
        Command::Report(c) => print!("{}", cmd_report(&c.resolve()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(match e.category() {
                "config" => 2,
                "io" => 3,
                c if c.starts_with("checkpoint") => 4,
                _ => 1,
            })
        }
    }
}
