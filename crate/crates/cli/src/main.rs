//! Command-line entry point. Every config key is also a flag; named
//! ablation switches (`--single-objective`, `--no-scope`, `--max-history`)
//! mirror the experiment axes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchdesc_cli::config::PipelineConfig;
use patchdesc_cli::{pipeline, CliError};
use patchdesc_core::corpus::SplitStrategy;

#[derive(Parser)]
#[command(
    name = "patchdesc",
    about = "Generate and evaluate software patch descriptions",
    version
)]
struct Cli {
    /// Pipeline configuration file (TOML). Flags override its keys.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Input corpus path (JSONL, one patch per line).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Directory for stage outputs.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Global seed; stage seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Split strategy: dev-process or cross-project.
    #[arg(long, global = true, value_enum)]
    split_strategy: Option<SplitStrategyArg>,
    #[arg(long, global = true)]
    split_ratio: Option<f64>,
    #[arg(long, global = true)]
    min_desc_tokens: Option<usize>,
    #[arg(long, global = true)]
    max_desc_tokens: Option<usize>,
    #[arg(long, global = true)]
    clean_urls: Option<bool>,
    #[arg(long, global = true)]
    clean_emails: Option<bool>,
    #[arg(long, global = true)]
    clean_hex_ids: Option<bool>,
    #[arg(long, global = true)]
    clean_bug_ids: Option<bool>,
    #[arg(long, global = true)]
    clean_trailers: Option<bool>,

    #[arg(long, global = true)]
    max_statements: Option<usize>,
    /// Number of historical descriptions in the source (0 disables them).
    #[arg(long, global = true)]
    max_history: Option<usize>,
    /// Drop the patch-scope segment from model inputs.
    #[arg(long, global = true)]
    no_scope: bool,
    /// Sidecar JSONL of precomputed dependency edges.
    #[arg(long, global = true)]
    edges: Option<PathBuf>,
    /// Cluster count (0 = rule-of-thumb from the train size).
    #[arg(long, global = true)]
    clusters: Option<usize>,

    #[arg(long, global = true)]
    embedding_dim: Option<usize>,
    #[arg(long, global = true)]
    encoder_layers: Option<usize>,
    #[arg(long, global = true)]
    decoder_layers: Option<usize>,
    #[arg(long, global = true)]
    attention_heads: Option<usize>,
    #[arg(long, global = true)]
    ff_dim: Option<usize>,
    #[arg(long, global = true)]
    max_source_len: Option<usize>,
    #[arg(long, global = true)]
    max_target_len: Option<usize>,
    #[arg(long, global = true)]
    dropout: Option<f64>,

    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    grad_clip: Option<f64>,
    /// Train without the affiliation objective (no group tokens).
    #[arg(long, global = true)]
    single_objective: bool,
    #[arg(long, global = true)]
    dual_objective: Option<bool>,
    #[arg(long, global = true)]
    min_token_freq: Option<usize>,

    /// Beam width for decoding (1 = greedy).
    #[arg(long, global = true)]
    beam_width: Option<usize>,
    /// Which split to decode: test or train.
    #[arg(long, global = true)]
    gen_split: Option<String>,
    #[arg(long, global = true)]
    max_gen_len: Option<usize>,
    /// Precomputed sentence vectors for semantic similarity.
    #[arg(long, global = true)]
    semsim_vectors: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum SplitStrategyArg {
    DevProcess,
    CrossProject,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered corpus at the corpus path.
    Synth {
        /// Patches generated per cluster.
        #[arg(long, default_value_t = 40)]
        per_cluster: usize,
        /// Probability of appending a noise token to a description.
        #[arg(long, default_value_t = 0.0)]
        noise_rate: f64,
    },
    /// Clean, filter, and split the corpus.
    Ingest,
    /// Extract contexts, fit clustering, and write training examples.
    Prepare,
    /// Train the translation model.
    Train,
    /// Decode descriptions for the configured split.
    Generate,
    /// Score predictions against references.
    Eval,
    /// Report what/how/where aspect coverage of the corpus descriptions.
    AnalyzeAspects,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        set!(corpus);
        set!(workdir);
        set!(seed);
        if let Some(s) = self.split_strategy {
            cfg.split_strategy = match s {
                SplitStrategyArg::DevProcess => SplitStrategy::DevProcess,
                SplitStrategyArg::CrossProject => SplitStrategy::CrossProject,
            };
        }
        set!(split_ratio);
        set!(min_desc_tokens);
        set!(max_desc_tokens);
        set!(clean_urls);
        set!(clean_emails);
        set!(clean_hex_ids);
        set!(clean_bug_ids);
        set!(clean_trailers);
        set!(max_statements);
        set!(max_history);
        if self.no_scope {
            cfg.use_scope = false;
        }
        if self.edges.is_some() {
            cfg.edges = self.edges.clone();
        }
        set!(clusters);
        set!(embedding_dim);
        set!(encoder_layers);
        set!(decoder_layers);
        set!(attention_heads);
        set!(ff_dim);
        set!(max_source_len);
        set!(max_target_len);
        set!(dropout);
        set!(epochs);
        set!(batch_size);
        set!(learning_rate);
        set!(grad_clip);
        set!(dual_objective);
        if self.single_objective {
            cfg.dual_objective = false;
        }
        set!(min_token_freq);
        set!(beam_width);
        set!(gen_split);
        set!(max_gen_len);
        if self.semsim_vectors.is_some() {
            cfg.semsim_vectors = self.semsim_vectors.clone();
        }
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    match &cli.command {
        Command::Synth {
            per_cluster,
            noise_rate,
        } => pipeline::cmd_synth(&cfg, *per_cluster, *noise_rate),
        Command::Ingest => pipeline::cmd_ingest(&cfg),
        Command::Prepare => pipeline::cmd_prepare(&cfg),
        Command::Train => pipeline::cmd_train(&cfg),
        Command::Generate => pipeline::cmd_generate(&cfg),
        Command::Eval => pipeline::cmd_eval(&cfg),
        Command::AnalyzeAspects => pipeline::cmd_analyze_aspects(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
