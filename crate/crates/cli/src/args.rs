use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::artifacts::ModelKind;
use crate::config::PipelineConfig;
use crate::stages::{self, Context};
use crate::{CliError, CliResult, EXIT_CONFIG, EXIT_OK};

/// Cross-domain sign recognition pipeline: synthetic data, base training,
/// news-sign mining, alignment, prototype memory, full model, evaluation.
#[derive(Debug, Parser)]
#[command(name = "signbridge", version)]
pub struct Cli {
    /// TOML configuration file; flags and `--set` override its values.
    #[arg(long, short, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override any configuration value by dotted path, e.g.
    /// `--set train_full.epochs=20`. Repeatable; applied after flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Seed for the generator and every training stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_name = "DIR", default_value = "data")]
    pub dataset_dir: PathBuf,

    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "40")]
    pub epochs: usize,
    #[arg(long, default_value = "8")]
    pub batch_size: usize,
    #[arg(long, default_value = "1e-3")]
    pub learning_rate: f64,
    #[arg(long, default_value = "1e-7")]
    pub weight_decay: f64,
    /// Clips are cropped or cyclically padded to this many frames.
    #[arg(long, default_value = "64")]
    pub target_length: usize,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long, default_value = "9")]
    pub min_window: usize,
    #[arg(long, default_value = "16")]
    pub max_window: usize,
    #[arg(long, default_value = "1")]
    pub stride: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-domain corpus into the dataset directory.
    Gen {
        #[arg(long, default_value = "20")]
        classes: usize,
        #[arg(long, default_value = "15")]
        train_per_class: usize,
        #[arg(long, default_value = "120")]
        train_streams: usize,
        #[arg(long, default_value = "80")]
        test_streams: usize,
    },
    /// Train the isolated-sign classifier F.
    TrainBase {
        #[command(flatten)]
        train: TrainArgs,
        /// Add the mined news windows to the training set (baseline model).
        #[arg(long)]
        news_windows: bool,
    },
    /// Mine news-sign windows from subtitled training streams with F.
    Extract {
        #[command(flatten)]
        windows: WindowArgs,
        /// Keep a window only when its class probability exceeds this.
        #[arg(long, default_value = "0.3")]
        epsilon: f64,
    },
    /// Train F̂ on isolated clips plus mined news windows.
    Align {
        #[command(flatten)]
        train: TrainArgs,
        /// Start F̂ from F's weights instead of a fresh initialization.
        #[arg(long)]
        init_from_base: bool,
    },
    /// Build the class prototype memory.
    BuildMemory {
        #[arg(long, default_value = "news-aligned",
              value_parser = ["news-aligned", "iso-base", "iso-aligned", "both-aligned"])]
        source: String,
        /// Classes without mined windows fall back to aligned isolated clips.
        #[arg(long)]
        fallback: bool,
        /// Use F̂ for memory features; `false` substitutes F.
        #[arg(long, default_value = "true", action = clap::ArgAction::Set)]
        coarse_alignment: bool,
    },
    /// Train the memory-augmented model.
    TrainFull {
        #[command(flatten)]
        train: TrainArgs,
        /// Keep the encoder copied from F fixed.
        #[arg(long)]
        freeze_encoder: bool,
    },
    /// Recognition accuracy and localization mAP of one model.
    Eval {
        #[arg(long, value_enum, default_value = "full")]
        model: ModelKind,
        /// Checkpoint to evaluate instead of the one in the output directory.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Sliding-window detections on the test streams.
    Localize {
        #[arg(long, value_enum, default_value = "full")]
        model: ModelKind,
        #[command(flatten)]
        windows: WindowArgs,
        /// Report a window for a class only when its probability exceeds this.
        #[arg(long, default_value = "0.2")]
        gate: f64,
        /// Per-class temporal non-maximum suppression.
        #[arg(long, default_value = "true", action = clap::ArgAction::Set)]
        nms: bool,
        #[arg(long, default_value = "0.5")]
        nms_tiou: f64,
    },
    /// Write temporal attention and memory correlation of test clips.
    DumpAttention {
        #[arg(long, default_value = "20")]
        clips: usize,
    },
    /// Write clip embeddings under F and F̂ for external projection.
    DumpEmbeddings,
    /// Run every stage in order.
    Pipeline,
}

/// Config section each subcommand's flags map to, by argument id.
fn config_key(sub: &str, id: &str) -> Option<String> {
    let section = match (sub, id) {
        (_, "seed" | "dataset_dir" | "output_dir") => return Some(id.to_string()),
        (_, "config" | "overrides" | "news_windows" | "model" | "checkpoint") => return None,
        ("gen", _) => "synth",
        ("train-base", _) => "train_base",
        ("extract", _) => "extraction",
        ("align", _) => "train_joint",
        ("build-memory", _) => "memory",
        ("train-full", _) => "train_full",
        ("localize", _) => "eval.localize",
        ("dump-attention", "clips") => return Some("eval.attention_clips".into()),
        _ => return None,
    };
    Some(format!("{section}.{id}"))
}

fn is_string_key(key: &str) -> bool {
    matches!(key, "dataset_dir" | "output_dir" | "memory.source")
}

/// `--set`-style overrides for every flag given explicitly on the command
/// line; defaults shown in `--help` never shadow the config file.
/// Global flags are visible at both levels, hence the set.
fn explicit_overrides(matches: &ArgMatches) -> Vec<String> {
    let (sub, sub_matches) = matches.subcommand().expect("subcommand is required");
    let root = Cli::command();
    let cmd = root.find_subcommand(sub).expect("known subcommand");
    let is_arg = |id: &str| root.get_arguments().chain(cmd.get_arguments()).any(|a| a.get_id() == id);
    let mut out = BTreeSet::new();
    for (matches, id) in [matches, sub_matches].into_iter().flat_map(|m| m.ids().map(move |id| (m, id))) {
        let id = id.as_str();
        // Flattened argument groups show up as ids too.
        if !is_arg(id) || matches.value_source(id) != Some(ValueSource::CommandLine) {
            continue;
        }
        let Some(key) = config_key(sub, id) else { continue };
        let Some(raw) = matches.get_raw(id).and_then(|mut v| v.next()) else { continue };
        let raw = raw.to_string_lossy();
        let value = if is_string_key(&key) {
            toml::Value::String(raw.into_owned()).to_string()
        } else {
            raw.into_owned()
        };
        out.insert(format!("{key}={value}"));
    }
    out.into_iter().collect()
}

fn execute(cli: &Cli, matches: &ArgMatches) -> CliResult<()> {
    let mut overrides = explicit_overrides(matches);
    overrides.extend(cli.overrides.iter().cloned());
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    log::debug!("effective configuration:\n{}", cfg.to_toml());
    let ctx = Context::new(cfg);
    match &cli.command {
        Command::Gen { .. } => stages::gen(&ctx),
        Command::TrainBase { news_windows, .. } => stages::train_base_stage(&ctx, *news_windows),
        Command::Extract { .. } => stages::extract_stage(&ctx),
        Command::Align { .. } => stages::align_stage(&ctx),
        Command::BuildMemory { .. } => stages::build_memory_stage(&ctx),
        Command::TrainFull { .. } => stages::train_full_stage(&ctx),
        Command::Eval { model, checkpoint } => stages::eval_stage(&ctx, *model, checkpoint.as_deref()).map(|_| ()),
        Command::Localize { model, .. } => stages::localize_stage(&ctx, *model),
        Command::DumpAttention { .. } => stages::dump_attention_stage(&ctx, ctx.cfg.eval.attention_clips),
        Command::DumpEmbeddings => stages::dump_embeddings_stage(&ctx),
        Command::Pipeline => stages::pipeline(&ctx).map(|_| ()),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_CONFIG;
        }
    };
    match execute(&cli, &matches) {
        Ok(()) => EXIT_OK,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overrides_for(argv: &[&str]) -> Vec<String> {
        let matches = Cli::command().try_get_matches_from(argv).unwrap();
        explicit_overrides(&matches)
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn only_explicit_flags_become_overrides() {
        assert!(overrides_for(&["signbridge", "extract"]).is_empty());
        assert_eq!(
            overrides_for(&["signbridge", "extract", "--epsilon", "0.4"]),
            vec!["extraction.epsilon=0.4".to_string()]
        );
        assert_eq!(
            overrides_for(&["signbridge", "train-full", "--epochs", "3", "--freeze-encoder"]),
            vec!["train_full.epochs=3".to_string(), "train_full.freeze_encoder=true".to_string()]
        );
        assert_eq!(
            overrides_for(&["signbridge", "localize", "--nms", "false", "--output-dir", "x"]),
            vec!["eval.localize.nms=false".to_string(), "output_dir=\"x\"".to_string()]
        );
    }

    #[test]
    fn flag_defaults_agree_with_config_defaults() {
        let cfg = PipelineConfig::default();
        let cmd = Cli::command();
        let default_of = |sub: &str, id: &str| -> String {
            let sc = cmd.find_subcommand(sub).unwrap();
            let arg = sc.get_arguments().find(|a| a.get_id() == id).unwrap();
            arg.get_default_values()[0].to_string_lossy().into_owned()
        };
        let f = |s: String| s.parse::<f64>().unwrap();
        assert_eq!(f(default_of("extract", "epsilon")), cfg.extraction.epsilon);
        assert_eq!(f(default_of("extract", "min_window")), cfg.extraction.min_window as f64);
        assert_eq!(f(default_of("extract", "max_window")), cfg.extraction.max_window as f64);
        assert_eq!(f(default_of("localize", "gate")), cfg.eval.localize.gate);
        assert_eq!(f(default_of("localize", "nms_tiou")), cfg.eval.localize.nms_tiou);
        for (sub, t) in [("train-base", &cfg.train_base), ("align", &cfg.train_joint), ("train-full", &cfg.train_full)] {
            assert_eq!(f(default_of(sub, "learning_rate")), t.learning_rate);
            assert_eq!(f(default_of(sub, "weight_decay")), t.weight_decay);
            assert_eq!(f(default_of(sub, "target_length")), t.target_length as f64);
            assert_eq!(f(default_of(sub, "epochs")), t.epochs as f64);
            assert_eq!(f(default_of(sub, "batch_size")), t.batch_size as f64);
        }
        assert_eq!(f(default_of("gen", "classes")), cfg.synth.classes as f64);
        assert_eq!(f(default_of("gen", "test_streams")), cfg.synth.test_streams as f64);
        assert_eq!(f(default_of("dump-attention", "clips")), cfg.eval.attention_clips as f64);
        assert_eq!(default_of("build-memory", "source"), cfg.memory.source.as_str());
    }

    #[test]
    fn usage_errors_exit_one_and_help_exits_zero() {
        assert_eq!(run(["signbridge", "no-such-command"]), EXIT_CONFIG);
        assert_eq!(run(["signbridge", "extract", "--epsilon", "abc"]), EXIT_CONFIG);
        assert_eq!(run(["signbridge", "--help"]), EXIT_OK);
    }
}
