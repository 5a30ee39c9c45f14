use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use fedhpo_cli::config::{default_pairs, load_config, LoadedConfig};
use fedhpo_cli::{cmd_analyze, cmd_baselines, cmd_hpo, cmd_partition, cmd_report, CliError, CliResult};
use fedhpo_core::analysis::{render_comparisons, Approach};

#[derive(Parser)]
#[command(name = "fedhpo", version, about = "Federated learning-rate optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `federation.rounds=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory [default: config `output`, else ./fedhpo-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, replacing the config's.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Split the dataset into clients; write per-split CSVs and a manifest.
    Partition(Common),
    /// Run the configured optimization regimes and train the final federated models.
    Hpo(Common),
    /// Compare individual, central and federated training per cohort.
    Baselines(Common),
    /// Paired t-tests between approaches.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Result CSVs or run artifacts [default: config `analysis.results`].
        inputs: Vec<PathBuf>,
        /// Approach pair `a:b`, e.g. `globalGrid:localGrid`; repeatable.
        #[arg(long = "pair")]
        pairs: Vec<String>,
        /// Client ids left out of every comparison.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<usize>,
    },
    /// Plot-ready CSV with the learning rate behind each accuracy.
    Report {
        #[command(flatten)]
        common: Common,
        /// A `*-run.json` artifact.
        artifact: PathBuf,
    },
}

fn load(common: &Common) -> CliResult<Option<LoadedConfig>> {
    common.config.as_deref().map(|p| load_config(p, &common.set, common.seed)).transpose()
}

fn require(common: &Common) -> CliResult<LoadedConfig> {
    load(common)?.ok_or_else(|| CliError::config("config.missing", "this command needs --config"))
}

fn out_dir(common: &Common, loaded: Option<&LoadedConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| loaded.and_then(|l| l.config.output.clone()))
        .unwrap_or_else(|| PathBuf::from("fedhpo-out"))
}

fn parse_pair(s: &str) -> CliResult<(Approach, Approach)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| CliError::config("usage", format!("pair `{s}` is not `a:b`")))?;
    Ok((a.parse()?, b.parse()?))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Partition(common) => {
            let loaded = require(&common)?;
            let out = out_dir(&common, Some(&loaded));
            let manifest = cmd_partition(&loaded, &out)?;
            println!("wrote {} clients to {}", manifest.clients.len(), out.display());
        }
        Command::Hpo(common) => {
            let loaded = require(&common)?;
            let out = out_dir(&common, Some(&loaded));
            let artifact = cmd_hpo(&loaded, &out)?;
            for o in &artifact.outcomes {
                println!("cohort {} {:<12} test accuracy {:.4}  learning rates {:?}", o.cohort_id, o.approach.as_str(), o.test_accuracy, o.learning_rates);
            }
            println!("wrote {}", out.join("hpo-run.json").display());
        }
        Command::Baselines(common) => {
            let loaded = require(&common)?;
            let out = out_dir(&common, Some(&loaded));
            let artifact = cmd_baselines(&loaded, &out)?;
            for r in &artifact.baselines {
                println!(
                    "cohort {}: individual {:.4}  central {:.4}  federated {:.4}",
                    r.cohort_id,
                    r.mean_individual(),
                    r.central(),
                    r.federated()
                );
            }
            println!("wrote {}", out.join("baselines-run.json").display());
        }
        Command::Analyze { common, inputs, pairs, exclude } => {
            let loaded = load(&common)?;
            let inputs = if inputs.is_empty() {
                loaded
                    .as_ref()
                    .map(|l| l.config.analysis.results.iter().map(|p| l.resolve(p)).collect())
                    .unwrap_or_default()
            } else {
                inputs
            };
            let pairs = if !pairs.is_empty() {
                pairs.iter().map(|p| parse_pair(p)).collect::<CliResult<Vec<_>>>()?
            } else {
                loaded.as_ref().map(|l| l.config.analysis.pairs()).unwrap_or_else(default_pairs)
            };
            let exclude = if !exclude.is_empty() {
                exclude
            } else {
                loaded.as_ref().map(|l| l.config.analysis.exclude.clone()).unwrap_or_default()
            };
            let out = out_dir(&common, loaded.as_ref());
            let comparisons = cmd_analyze(&inputs, &pairs, &exclude, &out)?;
            print!("{}", render_comparisons(&comparisons));
        }
        Command::Report { common, artifact } => {
            let loaded = load(&common)?;
            let out = common
                .out
                .clone()
                .or_else(|| loaded.as_ref().and_then(|l| l.config.output.clone()))
                .unwrap_or_else(|| artifact.parent().map(Path::to_path_buf).unwrap_or_default());
            println!("wrote {}", cmd_report(&artifact, &out)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDHPO_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::config("usage", first).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
