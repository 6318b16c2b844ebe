//! Command-line surface: reproducible experiment runs over the library.
//!
//! Every command reads a flat key=value config file plus `--key value`
//! overrides (flag wins), writes its artifacts into a run directory, and
//! stores the fully-resolved configuration beside them. Exit codes: 1 config
//! error, 2 missing artifact, 3 numerical divergence, 4 I/O corruption.

use cdcnas::config::RunConfig;
use cdcnas::error::Result;
use cdcnas::pipeline;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "cdcnas",
    about = "Central-difference 3D convolutions and two-stage architecture search on synthetic gesture clips",
    after_help = "Overrides: any config key can be passed as '--key value' after the named options.\n\
                  Run 'cdcnas keys' to list every key."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-modality clip dataset.
    Synth(CommonArgs),
    /// Stage 1: search multi-rate backbone cells for one modality.
    SearchBackbone(CommonArgs),
    /// Stage 2: search cross-modal lateral connections.
    SearchLateral(CommonArgs),
    /// Re-derive a genotype from a finished search run.
    Derive(CommonArgs),
    /// Train the discrete network described by a genotype.
    Train(CommonArgs),
    /// Evaluate trained models, optionally fused by mean softmax.
    Eval(CommonArgs),
    /// Finite-difference gradient checks for every primitive.
    Gradcheck(CommonArgs),
    /// Time decomposed CDC against vanilla convolution and the literal oracle.
    Bench(CommonArgs),
    /// List every config key.
    Keys,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides for any config key.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn build_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::new(),
    };
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Synth(a) => ("synth", a),
        Command::SearchBackbone(a) => ("search-backbone", a),
        Command::SearchLateral(a) => ("search-lateral", a),
        Command::Derive(a) => ("derive", a),
        Command::Train(a) => ("train", a),
        Command::Eval(a) => ("eval", a),
        Command::Gradcheck(a) => ("gradcheck", a),
        Command::Bench(a) => ("bench", a),
        Command::Keys => {
            for (key, help) in cdcnas::config::KNOWN_KEYS {
                println!("{key:20} {help}");
            }
            return Ok(());
        }
    };
    let mut cfg = build_config(args)?;
    let out = match name {
        "synth" => pipeline::cmd_synth(&mut cfg)?,
        "search-backbone" => pipeline::cmd_search_backbone(&mut cfg)?,
        "search-lateral" => pipeline::cmd_search_lateral(&mut cfg)?,
        "derive" => pipeline::cmd_derive(&mut cfg)?,
        "train" => pipeline::cmd_train(&mut cfg)?,
        "eval" => pipeline::cmd_eval(&mut cfg)?,
        "gradcheck" => pipeline::cmd_gradcheck(&mut cfg)?,
        "bench" => pipeline::cmd_bench(&mut cfg)?,
        _ => unreachable!(),
    };
    println!("{name}: wrote {}", out.display());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error[{}]: {e}", e.category());
        std::process::exit(e.exit_code());
    }
}
