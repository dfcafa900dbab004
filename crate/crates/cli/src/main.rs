use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use counter_cli::{commands, CliError, RunConfig};

macro_rules! overrides {
    ($($field:ident),* $(,)?) => {
        /// Every config key can be given as a flag; flags win over the file.
        #[derive(Args, Debug, Default)]
        struct Overrides {
            $(
                #[arg(long, global = true, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field).to_string(), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

overrides!(
    data,
    aspects,
    out,
    scale,
    k,
    seed,
    learning_rate,
    epochs,
    batch_size,
    negative_ratio,
    lambda,
    gamma,
    alpha,
    tau,
    step,
    max_iter,
    tol,
    warmup,
    variants,
    lambda_grid,
    random_seed,
    threads,
    synth_m,
    synth_n,
    synth_r,
    synth_user_aspects,
    synth_item_aspects,
    synth_density,
    synth_mention_p,
    synth_mention_cap,
    synth_noise,
    synth_popularity,
);

#[derive(Parser, Debug)]
#[command(name = "counter", version, about = "Counterfactual aspect explanations for top-K recommendations")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the interaction file into the corpus stage.
    Ingest,
    /// Generate a planted synthetic corpus as the corpus stage.
    Synth,
    /// Train the recommender on the training split.
    Train,
    /// Write top-K lists for every evaluable user.
    Recommend,
    /// Explain every recommended item.
    Explain,
    /// Score the explanations.
    Evaluate,
    /// Explain and evaluate across the lambda grid.
    Sweep,
    /// Run every stage in order.
    Run,
    /// Print the resolved configuration.
    Config,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides.pairs())?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest => commands::cmd_ingest(&cfg).map(drop),
        Command::Synth => commands::cmd_synth(&cfg).map(drop),
        Command::Train => commands::cmd_train(&cfg).map(drop),
        Command::Recommend => commands::cmd_recommend(&cfg).map(drop),
        Command::Explain => commands::cmd_explain(&cfg).map(drop),
        Command::Evaluate => commands::cmd_evaluate(&cfg).map(drop),
        Command::Sweep => commands::cmd_sweep(&cfg).map(drop),
        Command::Run => commands::cmd_run(&cfg).map(drop),
        Command::Config => {
            print!("{}", cfg.to_file_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
