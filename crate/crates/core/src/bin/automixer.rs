use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Args, FromArgMatches, Parser, Subcommand, ValueEnum};

use automixer::error::{Error, Result};
use automixer::par::Exec;
use automixer::pipeline::{parse_key_value, Pipeline, PipelineConfig, Strategy, CONFIG_KEYS};

#[derive(Parser)]
#[command(name = "automixer", version, about = "Influence-driven data mixtures on a desk-scale proxy LM")]
struct Cli {
    /// TOML config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Alias for --out-dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(flatten)]
    keys: ConfigFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic corpus and task probes.
    GenCorpus,
    /// Run the simulation and evaluate every checkpoint.
    Simulate,
    /// Write the progression table.
    Progression,
    /// Select task-best checkpoints and blending factors.
    Select,
    /// Score every sample against each selected checkpoint.
    Score,
    /// Build checkpoint-aligned groups.
    Regroup,
    /// Compute group sampling weights.
    Reweight,
    /// Draw the budgeted mixture manifest.
    Sample,
    /// Train a fresh model on the manifest and evaluate it.
    TrainEval,
    /// Run a baseline mixture end to end.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
    },
    /// Checkpoint-strategy ablation (last, all, task-best).
    Ablate,
    /// Run everything and write the report.
    Report,
    /// Alias for `report`.
    Run,
}

#[derive(ValueEnum, Clone, Copy)]
enum BaselineKind {
    Uniform,
    Ppl,
}

impl Command {
    fn stochastic(self) -> bool {
        matches!(
            self,
            Command::GenCorpus
                | Command::Simulate
                | Command::Sample
                | Command::TrainEval
                | Command::Baseline { .. }
                | Command::Ablate
                | Command::Report
                | Command::Run
        )
    }
}

/// One `--<key>` flag per config key, collected as TOML overrides.
struct ConfigFlags {
    overrides: Vec<(String, String)>,
}

fn flag(key: &str) -> &'static str {
    // built once per process for a fixed key table
    Box::leak(key.replace('_', "-").into_boxed_str())
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let overrides = CONFIG_KEYS
            .iter()
            .filter_map(|(k, _, _)| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
            .collect();
        Ok(ConfigFlags { overrides })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        cmd.args(
            CONFIG_KEYS
                .iter()
                .map(|(k, _, help)| Arg::new(*k).long(flag(k)).value_name("VALUE").allow_negative_numbers(true).help(*help).global(true)),
        )
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let base: toml::Table = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    let mut overrides = toml::Table::new();
    for (k, v) in &cli.keys.overrides {
        overrides.insert(k.clone(), parse_key_value(k, v)?);
    }
    if let Some(out) = &cli.out {
        overrides.insert("out_dir".into(), toml::Value::String(out.display().to_string()));
    }
    PipelineConfig::from_table(base, overrides)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if cli.command.stochastic() && !cli.keys.overrides.iter().any(|(k, _)| k == "seed") {
        return Err(Error::Config("--seed is required for this stage".into()));
    }
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let p = Pipeline::new(cfg, exec);
    let a = Strategy::AutoMixer;
    match cli.command {
        Command::GenCorpus => {
            let (corpus, probes) = p.inputs()?;
            println!(
                "corpus: {} samples, {} tokens; probes: {} tasks",
                corpus.len(),
                corpus.total_tokens(),
                probes.len()
            );
        }
        Command::Simulate => println!("{} checkpoints", p.checkpoints()?.len()),
        Command::Progression => print!("{}", p.progression()?.to_tsv(&p.run_label())),
        Command::Select => print!("{}", p.selection(a)?.to_tsv()),
        Command::Score => println!("{} score columns", p.scores(a)?.len()),
        Command::Regroup => {
            for g in p.groups(a)? {
                println!("{}\t{} members\t{} tokens", g.group_id, g.len(), g.total_tokens());
            }
        }
        Command::Reweight => {
            for (g, w) in p.weights(a)?.weights {
                println!("{g}\t{w:.6}");
            }
        }
        Command::Sample => {
            let m = p.manifest(a)?;
            println!("{} samples, {} tokens", m.entries.len(), m.total_tokens());
        }
        Command::TrainEval => print_accuracies("automixer", &p.evaluation(a)?),
        Command::Baseline { kind } => {
            let (name, (m, acc)) = match kind {
                BaselineKind::Uniform => ("uniform", p.run_uniform_baseline()?),
                BaselineKind::Ppl => ("ppl", p.run_ppl_baseline()?),
            };
            println!("{name}: {} samples, {} tokens", m.entries.len(), m.total_tokens());
            print_accuracies(name, &acc);
        }
        Command::Ablate => {
            for (label, acc) in p.run_ablation_checkpoint_strategies()? {
                print_accuracies(&label, &acc);
            }
        }
        Command::Report | Command::Run => {
            let r = p.report()?;
            print!("{}", r.to_text());
            eprintln!("report written to {}", p.layout.report().display());
        }
    }
    Ok(())
}

fn print_accuracies(label: &str, acc: &automixer::pipeline::Accuracies) {
    let cells: Vec<String> = acc.iter().map(|(t, a)| format!("{t}={a:.4}")).collect();
    println!("{label}\t{}", cells.join("\t"));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage().unwrap_or("config");
            eprintln!("automixer: stage `{stage}` failed: {}", root_message(&e));
            ExitCode::FAILURE
        }
    }
}

fn root_message(e: &Error) -> String {
    match e {
        Error::Stage { source, .. } => source.to_string(),
        e => e.to_string(),
    }
}
